//! Agents: a planner over ground truth, a seeded random walker, and a remote
//! LLM speaking the ReAct format.

use std::collections::{BTreeMap, HashSet, VecDeque};
use std::fmt;
use std::sync::Arc;

use rand::seq::{index::sample, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::env::{
    self, parse_action, parse_admissible, EnvKind, EpisodeConfig, Verb, WorldState,
};
use crate::error::{HarnessError, Result};
use crate::gateway::{Gateway, Sampling};
use crate::protocol::{build_agent_messages, parse_react, Trajectory, VERIFICATION_NOTE};

/// States explored before [`solve`] gives up.
pub const SOLVE_NODE_BUDGET: usize = 200_000;

const HOUSE_PROMPT: &str = "You are acting in a small household. Each message from the user \
describes what you observe, followed by the list of actions you may take. Work toward the \
task stated at the start.\n\nReply in exactly this shape:\nThought:\n<your reasoning>\nAction:\n\
<one action copied from the list>";

const SHOP_PROMPT: &str = "You are shopping in a small web store on behalf of a customer \
whose request appears at the start. Each message from the user shows the current page and \
the actions available on it. Buying ends the episode, so check the product and its options \
first.\n\nReply in exactly this shape:\nThought:\n<your reasoning>\nAction:\n<one action, e.g. \
search[red wool sweater] or click[buy now]>";

pub fn system_prompt(kind: EnvKind) -> &'static str {
    match kind {
        EnvKind::MiniHouse => HOUSE_PROMPT,
        EnvKind::MiniShop => SHOP_PROMPT,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentTurnOutput {
    pub thought: String,
    pub action_raw: String,
}

/// The agent mapping: history in, (thought, action) out.
pub trait Agent: Send {
    fn id(&self) -> &str;

    /// Propose the next turn. `rejected` lists actions the verification gate
    /// refused at this step, most recent last.
    fn next_turn(&mut self, history: &Trajectory, rejected: &[String]) -> Result<AgentTurnOutput>;
}

/// A fixed action list, with optional deliberate mistakes by step index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptedPolicy {
    pub plan: Vec<String>,
    pub mistake_schedule: BTreeMap<usize, String>,
}

impl ScriptedPolicy {
    /// Action at 0-based step `i`, mistakes taking precedence.
    pub fn action_at(&self, i: usize) -> Option<&str> {
        self.mistake_schedule
            .get(&i)
            .or_else(|| self.plan.get(i))
            .map(String::as_str)
    }
}

/// Search query used in plans: every keyword the task asks for.
pub fn canonical_query(state: &WorldState) -> String {
    env::shop_canonical_query(state)
}

fn expand(state: &WorldState) -> Vec<String> {
    env::admissible_actions(state)
        .into_iter()
        .filter(|a| !matches!(a.as_str(), "look" | "help" | "inventory"))
        .map(|a| {
            if a == env::SEARCH_TEMPLATE {
                format!("search[{}]", canonical_query(state))
            } else {
                a
            }
        })
        .collect()
}

fn state_key(s: &WorldState) -> String {
    let mut k = String::new();
    k.push_str(&s.agent_location);
    k.push('|');
    k.push_str(&s.inventory.join(","));
    for (id, e) in &s.entities {
        if e.open.is_some() || !e.contents.is_empty() {
            k.push('|');
            k.push_str(id);
            k.push(match e.open {
                Some(true) => '+',
                Some(false) => '-',
                None => '.',
            });
            k.push_str(&e.contents.join(","));
        }
    }
    if let Some(v) = &s.shop {
        k.push('|');
        k.push_str(&serde_json::to_string(v).expect("shop view serializes"));
    }
    k
}

/// Shortest action sequence from `start` reaching reward 1.
pub fn solve_from(start: &WorldState) -> Result<Vec<String>> {
    let mut root = start.clone();
    root.max_turns = u32::MAX;
    let mut seen = HashSet::from([state_key(&root)]);
    let mut queue = VecDeque::from([(root, Vec::<String>::new())]);
    while let Some((state, path)) = queue.pop_front() {
        for a in expand(&state) {
            let (next, obs) = env::step_raw(&state, &a)?;
            let mut p = path.clone();
            p.push(a);
            if obs.reward == 1 {
                return Ok(p);
            }
            if next.terminated || !seen.insert(state_key(&next)) {
                continue;
            }
            if seen.len() > SOLVE_NODE_BUDGET {
                return Err(HarnessError::Unsolvable {
                    env: start.env_kind.to_string(),
                    seed: 0,
                    expanded: seen.len(),
                });
            }
            queue.push_back((next, p));
        }
    }
    Err(HarnessError::Unsolvable {
        env: start.env_kind.to_string(),
        seed: 0,
        expanded: seen.len(),
    })
}

fn replay(episode: &EpisodeConfig, plan: &[String]) -> Result<(WorldState, u8)> {
    let (mut state, _, _) = env::reset(episode)?;
    let mut reward = 0;
    for a in plan {
        if state.terminated {
            break;
        }
        let (next, obs) = env::step_raw(&state, a)?;
        reward = obs.reward;
        state = next;
    }
    Ok((state, reward))
}

/// Breadth-first plan for an episode, verified to succeed within its turn cap.
pub fn solve(episode: &EpisodeConfig) -> Result<ScriptedPolicy> {
    let (start, _, _) = env::reset(episode)?;
    let plan = solve_from(&start).map_err(|e| match e {
        HarnessError::Unsolvable { env, expanded, .. } => HarnessError::Unsolvable {
            env,
            seed: episode.seed,
            expanded,
        },
        other => other,
    })?;
    let policy = ScriptedPolicy {
        plan,
        mistake_schedule: BTreeMap::new(),
    };
    if replay(episode, &policy.plan)?.1 != 1 {
        return Err(HarnessError::Unsolvable {
            env: episode.env_kind.to_string(),
            seed: episode.seed,
            expanded: 0,
        });
    }
    Ok(policy)
}

/// MiniShop policy that opens the first search result and buys it at once.
/// Errors unless that purchase fails the task.
pub fn buy_first_result(episode: &EpisodeConfig) -> Result<ScriptedPolicy> {
    if episode.env_kind != EnvKind::MiniShop {
        return Err(HarnessError::Config(
            "the buy-first-result mistake applies to MiniShop only".into(),
        ));
    }
    let mut policy = solve(episode)?;
    let (after_search, _) = replay(episode, &policy.plan[..1])?;
    let first = after_search
        .shop
        .as_ref()
        .and_then(|v| v.hits.first())
        .ok_or_else(|| HarnessError::Input(format!("seed {}: empty search results", episode.seed)))?
        .to_lowercase();
    policy.mistake_schedule = BTreeMap::from([
        (1, format!("click[{first}]")),
        (2, "click[buy now]".to_string()),
    ]);
    let mistaken: Vec<String> = (0..3).map(|i| policy.action_at(i).unwrap().to_string()).collect();
    let (state, reward) = replay(episode, &mistaken)?;
    if reward != 0 || !state.terminated {
        return Err(HarnessError::Input(format!(
            "seed {}: buying the first result does not fail",
            episode.seed
        )));
    }
    Ok(policy)
}

fn thought_for(action: &str, state: Option<&WorldState>) -> String {
    let goal = state.map(|s| s.task.description.as_str()).unwrap_or("the task");
    match parse_action(action).verb() {
        Some(Verb::GoTo) => format!("To make progress on \"{goal}\" I should {action}."),
        Some(Verb::Open) => format!("The receptacle is closed; I will {action} and look inside."),
        Some(Verb::TakeFrom) => format!("I found what I need, so I will {action}."),
        Some(Verb::MoveTo) => format!("I am holding the item; now I {action}."),
        Some(Verb::Search) => format!("I will search for the requested item: {action}."),
        Some(Verb::Click) | Some(Verb::Buy) => format!("Next on this page: {action}."),
        _ => format!("I will {action}."),
    }
}

fn is_note(turn: &crate::protocol::Turn) -> bool {
    turn.observation == VERIFICATION_NOTE
}

/// Follows a [`ScriptedPolicy`]; after a rejection it replans from the
/// true current state.
pub struct ScriptedAgent {
    id: String,
    episode: EpisodeConfig,
    policy: ScriptedPolicy,
    recovery: Option<(usize, Vec<String>)>,
}

impl ScriptedAgent {
    pub fn new(id: &str, episode: EpisodeConfig, policy: ScriptedPolicy) -> Self {
        ScriptedAgent {
            id: id.into(),
            episode,
            policy,
            recovery: None,
        }
    }

    pub fn policy(&self) -> &ScriptedPolicy {
        &self.policy
    }

    fn current_state(&self, executed: &[String]) -> Result<WorldState> {
        Ok(replay(&self.episode, executed)?.0)
    }
}

impl Agent for ScriptedAgent {
    fn id(&self) -> &str {
        &self.id
    }

    fn next_turn(&mut self, history: &Trajectory, rejected: &[String]) -> Result<AgentTurnOutput> {
        let executed: Vec<String> = history
            .turns
            .iter()
            .filter(|t| !is_note(t))
            .map(|t| t.action_raw.clone())
            .collect();
        let step = executed.len();
        let was_rejected = !rejected.is_empty() || history.turns.last().is_some_and(is_note);
        let state = self.current_state(&executed)?;
        if was_rejected && !state.terminated {
            let plan = solve_from(&state).unwrap_or_default();
            self.recovery = Some((step, plan));
        }
        let action = match &self.recovery {
            Some((start, plan)) if step >= *start => plan.get(step - start).cloned(),
            _ => self.policy.action_at(step).map(str::to_string),
        }
        .unwrap_or_else(|| "look".to_string());
        Ok(AgentTurnOutput {
            thought: thought_for(&action, Some(&state)),
            action_raw: action,
        })
    }
}

/// Uniform choice among the admissible actions echoed in the latest
/// observation.
pub struct RandomAgent {
    id: String,
    rng: ChaCha8Rng,
}

impl RandomAgent {
    pub fn new(id: &str, seed: u64, episode: &EpisodeConfig) -> Self {
        let mut h = Sha256::new();
        h.update(b"wm-harness/random-agent/");
        h.update(seed.to_le_bytes());
        h.update(episode.to_line().as_bytes());
        let d: [u8; 32] = h.finalize().into();
        RandomAgent {
            id: id.into(),
            rng: ChaCha8Rng::from_seed(d),
        }
    }

    fn query(&mut self, history: &Trajectory) -> String {
        let words: Vec<&str> = history
            .init_user_text
            .split(|c: char| !c.is_alphanumeric())
            .filter(|w| w.len() > 2 && w.chars().all(|c| c.is_ascii_lowercase()))
            .collect();
        if words.is_empty() {
            return String::new();
        }
        let n = self.rng.gen_range(1..=3usize.min(words.len()));
        let mut idx = sample(&mut self.rng, words.len(), n).into_vec();
        idx.sort();
        idx.iter().map(|&i| words[i]).collect::<Vec<_>>().join(" ")
    }
}

impl Agent for RandomAgent {
    fn id(&self) -> &str {
        &self.id
    }

    fn next_turn(&mut self, history: &Trajectory, _rejected: &[String]) -> Result<AgentTurnOutput> {
        let latest = history
            .turns
            .iter()
            .rev()
            .map(|t| t.observation.as_str())
            .chain(std::iter::once(history.init_user_text.as_str()))
            .find_map(parse_admissible)
            .unwrap_or_default();
        let action = match latest.choose(&mut self.rng) {
            Some(a) if a == env::SEARCH_TEMPLATE => format!("search[{}]", self.query(history)),
            Some(a) => a.clone(),
            None => "look".to_string(),
        };
        Ok(AgentTurnOutput {
            thought: format!("Let me try {action}."),
            action_raw: action,
        })
    }
}

/// An LLM behind the gateway.
pub struct RemoteAgent {
    id: String,
    gateway: Arc<Gateway>,
    sampling: Sampling,
    system_prompt: String,
}

impl fmt::Debug for RemoteAgent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RemoteAgent").field("id", &self.id).finish()
    }
}

impl RemoteAgent {
    pub fn new(id: &str, gateway: Arc<Gateway>, sampling: Sampling, kind: EnvKind) -> Self {
        RemoteAgent {
            id: id.into(),
            gateway,
            sampling,
            system_prompt: system_prompt(kind).to_string(),
        }
    }
}

impl Agent for RemoteAgent {
    fn id(&self) -> &str {
        &self.id
    }

    fn next_turn(&mut self, history: &Trajectory, _rejected: &[String]) -> Result<AgentTurnOutput> {
        let msgs = build_agent_messages(history, &self.system_prompt)?;
        let completion = self.gateway.complete(&msgs, &self.sampling)?;
        let (thought, action) = parse_react(&completion);
        let action_raw = if action.is_empty() { "look".to_string() } else { action };
        Ok(AgentTurnOutput { thought, action_raw })
    }
}

/// How to build a fresh agent for each episode.
#[derive(Clone)]
pub enum AgentSpec {
    Scripted { id: String },
    /// Scripted, with the buy-first-result mistake on MiniShop.
    ScriptedBuyFirst { id: String },
    Random { id: String, seed: u64 },
    Remote { id: String, gateway: Arc<Gateway>, sampling: Sampling },
}

impl fmt::Debug for AgentSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl AgentSpec {
    pub fn scripted() -> Self {
        AgentSpec::Scripted { id: "scripted".into() }
    }

    pub fn random(seed: u64) -> Self {
        AgentSpec::Random {
            id: format!("random-{seed}"),
            seed,
        }
    }

    pub fn id(&self) -> &str {
        match self {
            AgentSpec::Scripted { id }
            | AgentSpec::ScriptedBuyFirst { id }
            | AgentSpec::Random { id, .. }
            | AgentSpec::Remote { id, .. } => id,
        }
    }

    pub fn build(&self, episode: &EpisodeConfig) -> Result<Box<dyn Agent>> {
        Ok(match self {
            AgentSpec::Scripted { id } => Box::new(ScriptedAgent::new(id, *episode, solve(episode)?)),
            AgentSpec::ScriptedBuyFirst { id } => {
                Box::new(ScriptedAgent::new(id, *episode, buy_first_result(episode)?))
            }
            AgentSpec::Random { id, seed } => Box::new(RandomAgent::new(id, *seed, episode)),
            AgentSpec::Remote {
                id,
                gateway,
                sampling,
            } => Box::new(RemoteAgent::new(id, gateway.clone(), *sampling, episode.env_kind)),
        })
    }
}
