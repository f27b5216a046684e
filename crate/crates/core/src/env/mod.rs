//! Deterministic miniature text environments.
//!
//! Two environments share one interaction surface:
//!
//! * **MiniHouse**: a household of receptacles and objects. Tasks ask the
//!   agent to put an object class into a receptacle class, or to find an
//!   object hidden inside a closed receptacle and pick it up.
//! * **MiniShop**: a seeded product catalog behind a search page. The task
//!   is to buy a product matching requested attributes, options and a price
//!   bound. Checking out ends the episode and cannot be undone.
//!
//! Every transition is a pure function of `(WorldState, action)`. The full
//! rule table and generator ranges live in `data/rules.toml`.

mod action;
mod house;
pub mod rules;
mod shop;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{HarnessError, Result};

pub use action::{parse_action, ActionCommand, ParsedAction, Verb};
pub use rules::rules;
pub use shop::SEARCH_TEMPLATE;

pub type EntityId = String;

/// Default episode horizon.
pub const DEFAULT_MAX_TURNS: u32 = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvKind {
    MiniHouse,
    MiniShop,
}

impl EnvKind {
    pub const ALL: [EnvKind; 2] = [EnvKind::MiniHouse, EnvKind::MiniShop];

    pub fn as_str(&self) -> &'static str {
        match self {
            EnvKind::MiniHouse => "minihouse",
            EnvKind::MiniShop => "minishop",
        }
    }
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EnvKind {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "minihouse" | "house" => Ok(EnvKind::MiniHouse),
            "minishop" | "shop" => Ok(EnvKind::MiniShop),
            other => Err(HarnessError::Config(format!(
                "unsupported environment kind `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    Train,
    TestId,
    TestOod,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::TestId, Split::TestOod];

    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::TestId => "test-id",
            Split::TestOod => "test-ood",
        }
    }

    pub fn is_ood(&self) -> bool {
        matches!(self, Split::TestOod)
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "test-id" | "test_id" | "id" => Ok(Split::TestId),
            "test-ood" | "test_ood" | "ood" => Ok(Split::TestOod),
            other => Err(HarnessError::Config(format!("unknown split `{other}`"))),
        }
    }
}

/// Everything needed to reproduce an episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EpisodeConfig {
    pub env_kind: EnvKind,
    pub seed: u64,
    pub max_turns: u32,
    pub split: Split,
}

impl EpisodeConfig {
    pub fn new(env_kind: EnvKind, seed: u64, split: Split) -> Self {
        EpisodeConfig {
            env_kind,
            seed,
            max_turns: DEFAULT_MAX_TURNS,
            split,
        }
    }

    pub fn with_max_turns(mut self, max_turns: u32) -> Self {
        self.max_turns = max_turns;
        self
    }

    /// Single-line record form.
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("episode config serializes")
    }

    pub fn from_line(line: &str) -> Result<Self> {
        Ok(serde_json::from_str(line.trim())?)
    }

    fn rng(&self) -> ChaCha8Rng {
        let mut h = Sha256::new();
        h.update(b"wm-harness/episode/");
        h.update(self.env_kind.as_str().as_bytes());
        h.update(b"/");
        h.update(self.split.as_str().as_bytes());
        h.update(self.seed.to_le_bytes());
        ChaCha8Rng::from_seed(h.finalize().into())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntityKind {
    Room,
    Agent,
    Receptacle,
    Object,
    Catalog,
    Product,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityRecord {
    pub kind: EntityKind,
    /// Object/receptacle class (`"fridge"`, `"mug"`) or product category.
    pub class: String,
    /// Parent in the containment forest; `None` for roots.
    pub location: Option<EntityId>,
    /// `Some(open?)` for openable receptacles.
    pub open: Option<bool>,
    pub contents: Vec<EntityId>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub attributes: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub options: BTreeMap<String, Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub price_cents: Option<u32>,
}

impl EntityRecord {
    fn node(kind: EntityKind, class: &str, location: Option<&str>) -> Self {
        EntityRecord {
            kind,
            class: class.to_string(),
            location: location.map(str::to_string),
            open: None,
            contents: Vec::new(),
            attributes: BTreeMap::new(),
            options: BTreeMap::new(),
            price_cents: None,
        }
    }

    /// Contents are visible and reachable.
    pub fn accessible(&self) -> bool {
        self.open.unwrap_or(true)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GoalKind {
    PutIn,
    OpenFind,
    PurchaseMatching,
}

impl GoalKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            GoalKind::PutIn => "put-in",
            GoalKind::OpenFind => "open-find",
            GoalKind::PurchaseMatching => "purchase-matching",
        }
    }
}

/// Declarative success condition, evaluated over a [`WorldState`] in one
/// pass over its entities.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SuccessPredicate {
    /// Some object of `object_class` sits in a receptacle of `receptacle_class`.
    ObjectIn {
        object_class: String,
        receptacle_class: String,
    },
    /// Some object of `object_class` is in the agent's inventory.
    ObjectHeld { object_class: String },
    /// The purchased product carries every attribute, the selected options
    /// equal the requested ones, and its price is below the bound.
    Purchase {
        attributes: BTreeMap<String, String>,
        options: BTreeMap<String, String>,
        max_price_cents: u32,
    },
}

impl SuccessPredicate {
    pub fn holds(&self, state: &WorldState) -> bool {
        match self {
            SuccessPredicate::ObjectIn {
                object_class,
                receptacle_class,
            } => state.entities.values().any(|e| {
                e.kind == EntityKind::Object
                    && &e.class == object_class
                    && e.location
                        .as_ref()
                        .and_then(|l| state.entities.get(l))
                        .is_some_and(|r| {
                            r.kind == EntityKind::Receptacle && &r.class == receptacle_class
                        })
            }),
            SuccessPredicate::ObjectHeld { object_class } => state
                .inventory
                .iter()
                .filter_map(|id| state.entities.get(id))
                .any(|e| &e.class == object_class),
            SuccessPredicate::Purchase {
                attributes,
                options,
                max_price_cents,
            } => {
                let Some(purchase) = state.shop.as_ref().and_then(|s| s.purchased.as_ref()) else {
                    return false;
                };
                let Some(product) = state.entities.get(&purchase.asin) else {
                    return false;
                };
                attributes
                    .iter()
                    .all(|(k, v)| product.attributes.get(k) == Some(v))
                    && options
                        .iter()
                        .all(|(k, v)| purchase.options.get(k) == Some(v))
                    && product.price_cents.is_some_and(|p| p < *max_price_cents)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub goal_kind: GoalKind,
    /// Human-readable task statement shown to the agent.
    pub description: String,
    pub targets: BTreeMap<String, String>,
    pub success_predicate: SuccessPredicate,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "page", rename_all = "lowercase")]
pub enum ShopPage {
    Search,
    Results,
    Item { asin: String },
    Done,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Purchase {
    pub asin: String,
    pub options: BTreeMap<String, String>,
}

/// Browser-side state of a MiniShop episode.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShopView {
    pub page: ShopPage,
    pub query: Option<String>,
    pub total_results: usize,
    pub hits: Vec<String>,
    pub selected: BTreeMap<String, String>,
    pub purchased: Option<Purchase>,
}

/// Full latent state of an episode.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorldState {
    pub env_kind: EnvKind,
    pub entities: BTreeMap<EntityId, EntityRecord>,
    pub agent_location: EntityId,
    pub inventory: Vec<EntityId>,
    pub task: TaskSpec,
    pub step_count: u32,
    pub max_turns: u32,
    pub terminated: bool,
    pub reward: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shop: Option<ShopView>,
}

impl WorldState {
    /// Checks the structural invariants; returns a description of the first
    /// violation.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        if self.reward > 1 {
            return Err(format!("reward {} is not binary", self.reward));
        }
        if self.reward == 1 && !self.terminated {
            return Err("reward 1 on a live episode".into());
        }
        if self.step_count > self.max_turns {
            return Err(format!(
                "step_count {} exceeds max_turns {}",
                self.step_count, self.max_turns
            ));
        }
        for (id, e) in &self.entities {
            if let Some(parent) = &e.location {
                let p = self
                    .entities
                    .get(parent)
                    .ok_or_else(|| format!("{id} located in missing {parent}"))?;
                let n = p.contents.iter().filter(|c| *c == id).count();
                if n != 1 {
                    return Err(format!("{parent} lists {id} {n} times"));
                }
            }
            for c in &e.contents {
                let child = self
                    .entities
                    .get(c)
                    .ok_or_else(|| format!("{id} contains missing {c}"))?;
                if child.location.as_deref() != Some(id.as_str()) {
                    return Err(format!("{c} listed in {id} but located elsewhere"));
                }
            }
            // walking up must reach a root within |entities| hops
            let mut cur = e.location.clone();
            let mut hops = 0;
            while let Some(p) = cur {
                hops += 1;
                if hops > self.entities.len() {
                    return Err(format!("containment cycle through {id}"));
                }
                cur = self.entities.get(&p).and_then(|x| x.location.clone());
            }
        }
        if let Some(agent) = self.entities.get("agent") {
            if agent.contents != self.inventory {
                return Err("inventory and agent contents disagree".into());
            }
        }
        Ok(())
    }

    pub fn entity(&self, id: &str) -> Option<&EntityRecord> {
        self.entities.get(id)
    }
}

/// What an agent sees after a step.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    pub text: String,
    pub admissible_actions: Vec<String>,
    pub reward: u8,
    pub terminated: bool,
}

impl Observation {
    /// Text as it appears in a trajectory: the outcome text followed, while
    /// the episode is live, by the environment's list of admissible actions.
    pub fn render(&self, kind: EnvKind) -> String {
        if self.terminated || self.admissible_actions.is_empty() {
            return self.text.clone();
        }
        format!("{}\n{}", self.text, render_admissible(kind, &self.admissible_actions))
    }
}

/// The admissible-actions line appended to live observations.
pub fn render_admissible(kind: EnvKind, actions: &[String]) -> String {
    let m = &rules().messages;
    match kind {
        EnvKind::MiniHouse => format!("{}{}", m.house_actions_prefix, actions.join(",")),
        EnvKind::MiniShop => {
            let quoted: Vec<String> = actions.iter().map(|a| format!("'{a}'")).collect();
            format!("{}[{}].", m.shop_actions_prefix, quoted.join(", "))
        }
    }
}

/// Recover the admissible actions echoed in a rendered observation, if any.
pub fn parse_admissible(rendered: &str) -> Option<Vec<String>> {
    let m = &rules().messages;
    let line = rendered.lines().last()?;
    if let Some(rest) = line.strip_prefix(m.house_actions_prefix.as_str()) {
        return Some(rest.split(',').map(|s| s.trim().to_string()).collect());
    }
    let rest = line.strip_prefix(m.shop_actions_prefix.as_str())?;
    let inner = rest.strip_prefix('[')?.strip_suffix("].")?;
    Some(
        inner
            .split(", ")
            .map(|s| s.trim_matches('\'').to_string())
            .collect(),
    )
}

/// Initialization context: everything the world model may see, and the part
/// shown to the agent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InitContext {
    pub hidden_text: String,
    pub user_text: String,
}

/// Generate the initial state of an episode.
pub fn reset(config: &EpisodeConfig) -> Result<(WorldState, Observation, InitContext)> {
    if config.max_turns == 0 {
        return Err(HarnessError::Config("max_turns must be positive".into()));
    }
    let mut rng = config.rng();
    let (state, intro) = match config.env_kind {
        EnvKind::MiniHouse => house::generate(config, &mut rng),
        EnvKind::MiniShop => shop::generate(config, &mut rng),
    };
    let obs = Observation {
        text: intro,
        admissible_actions: admissible_actions(&state),
        reward: 0,
        terminated: false,
    };
    let init = InitContext {
        hidden_text: hidden_text(&state),
        user_text: obs.render(config.env_kind),
    };
    Ok((state, obs, init))
}

/// Apply one action. Pure: the input state is left untouched.
pub fn step(state: &WorldState, action: &ParsedAction) -> Result<(WorldState, Observation)> {
    if state.terminated {
        return Err(HarnessError::Protocol(
            "step called on a terminated episode".into(),
        ));
    }
    let mut next = state.clone();
    let outcome = match state.env_kind {
        EnvKind::MiniHouse => house::apply(&mut next, action),
        EnvKind::MiniShop => shop::apply(&mut next, action),
    };
    let mut text = match outcome {
        Some(text) => text,
        None => {
            // invalid: nothing but the clock moves
            next = state.clone();
            rules().messages.nothing_happens.clone()
        }
    };
    next.step_count += 1;
    if !next.terminated && next.task.success_predicate.holds(&next) {
        next.terminated = true;
        next.reward = 1;
    }
    if !next.terminated && next.step_count >= next.max_turns {
        next.terminated = true;
        next.reward = 0;
        text = rules().messages.turn_limit.clone();
    }
    let admissible = if next.terminated {
        Vec::new()
    } else {
        admissible_actions(&next)
    };
    let obs = Observation {
        text,
        admissible_actions: admissible,
        reward: next.reward,
        terminated: next.terminated,
    };
    Ok((next, obs))
}

/// Parse then step.
pub fn step_raw(state: &WorldState, raw: &str) -> Result<(WorldState, Observation)> {
    step(state, &parse_action(raw))
}

pub fn admissible_actions(state: &WorldState) -> Vec<String> {
    match state.env_kind {
        EnvKind::MiniHouse => house::admissible(state),
        EnvKind::MiniShop => shop::admissible(state),
    }
}

/// True when executing `action` in `state` can end the episode with a
/// committed outcome.
pub fn is_irreversible(state: &WorldState, action: &ParsedAction) -> bool {
    match state.env_kind {
        EnvKind::MiniHouse => false,
        EnvKind::MiniShop => shop::is_checkout(state, action),
    }
}

/// MiniShop query naming every keyword the task asks for.
pub fn shop_canonical_query(state: &WorldState) -> String {
    shop::canonical_query(state)
}

/// Full-state description handed to world models.
pub fn hidden_text(state: &WorldState) -> String {
    match state.env_kind {
        EnvKind::MiniHouse => house::hidden_text(state),
        EnvKind::MiniShop => shop::hidden_text(state),
    }
}

/// Rebuild an initial [`WorldState`] from the hidden text alone.
///
/// Together with the action history this is all a world model needs to
/// reproduce [`step`] exactly.
pub fn restore_from_hidden(kind: EnvKind, hidden: &str, max_turns: u32) -> Result<WorldState> {
    match kind {
        EnvKind::MiniHouse => house::restore(hidden, max_turns),
        EnvKind::MiniShop => shop::restore(hidden, max_turns),
    }
}

/// `count` episode configs from the seed partition of `split`.
pub fn generate_split(env_kind: EnvKind, count: usize, split: Split) -> Result<Vec<EpisodeConfig>> {
    if count == 0 {
        return Err(HarnessError::Config("split size must be positive".into()));
    }
    let part = rules().partition(split);
    if count as u64 > part.seed_size {
        return Err(HarnessError::Config(format!(
            "{count} episodes requested but the {split} partition holds {}",
            part.seed_size
        )));
    }
    Ok((0..count as u64)
        .map(|i| EpisodeConfig::new(env_kind, part.seed_start + i, split))
        .collect())
}

/// "a x 1, a y 2, and a z 3" / "a x 1" / "nothing".
pub(crate) fn render_list(items: &[EntityId]) -> String {
    match items.len() {
        0 => "nothing".to_string(),
        1 => format!("a {}", items[0]),
        n => {
            let mut parts: Vec<String> = items[..n - 1].iter().map(|i| format!("a {i}")).collect();
            parts.push(format!("and a {}", items[n - 1]));
            parts.join(", ")
        }
    }
}

pub(crate) fn parse_list(text: &str) -> Option<Vec<EntityId>> {
    if text == "nothing" {
        return Some(Vec::new());
    }
    text.split(", ")
        .map(|p| {
            let p = p.strip_prefix("and ").unwrap_or(p);
            p.strip_prefix("a ").map(str::to_string)
        })
        .collect()
}

/// Sort key placing "cabinet 2" before "cabinet 10".
pub(crate) fn natural_key(name: &str) -> (String, u32) {
    match name.rsplit_once(' ') {
        Some((base, n)) => match n.parse() {
            Ok(n) => (base.to_string(), n),
            Err(_) => (name.to_string(), 0),
        },
        None => (name.to_string(), 0),
    }
}
