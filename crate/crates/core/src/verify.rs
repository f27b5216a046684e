//! Pre-execution verification gate for irreversible actions.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::agent::{Agent, AgentSpec, AgentTurnOutput};
use crate::env::{self, is_irreversible, parse_action, EpisodeConfig, Observation, WorldState};
use crate::error::{HarnessError, Result};
use crate::protocol::{Source, Trajectory, Turn, VERIFICATION_NOTE};
use crate::rollout::{run_parallel, Regime, RolloutRecord};
use crate::wm::{WmPrediction, WmSession, WorldModel};

/// Budgets swept by default.
pub const BUDGET_PRESETS: [u32; 5] = [0, 2, 4, 10, 50];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeedbackMode {
    /// Ask the agent again, passing the rejected actions.
    Silent,
    /// Append a verification note to the agent's history.
    CounterfactualNote,
}

impl FromStr for FeedbackMode {
    type Err = HarnessError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "silent" => Ok(FeedbackMode::Silent),
            "counterfactual-note" => Ok(FeedbackMode::CounterfactualNote),
            _ => Err(HarnessError::Config(format!("unknown feedback mode {s:?}"))),
        }
    }
}

impl fmt::Display for FeedbackMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FeedbackMode::Silent => "silent",
            FeedbackMode::CounterfactualNote => "counterfactual-note",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GateConfig {
    /// Simulations allowed per irreversible step; 0 disables the gate.
    pub budget: u32,
    pub feedback_mode: FeedbackMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GateOutcome {
    /// Reversible action or disabled gate; nothing simulated.
    Passthrough,
    /// Predicted success; executed.
    Verified,
    /// Rejected proposals were replaced by a reversible action.
    Redirected,
    /// Budget spent without a predicted success; latest proposal executed.
    Exhausted,
    /// The world model failed; executed unverified.
    Degraded,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GateDecision {
    /// 1-based step of the executed action.
    pub step: usize,
    pub attempts_used: u32,
    pub committed: bool,
    pub rejected_actions: Vec<String>,
    pub outcome: GateOutcome,
}

/// Result of one gated step.
#[derive(Debug, Clone)]
pub struct GatedStep {
    pub state: WorldState,
    pub observation: Observation,
    pub turn: AgentTurnOutput,
    pub decision: GateDecision,
}

/// Ask the agent for an action, verify it in the world model if it is
/// irreversible, and execute it in the real environment.
///
/// `view` is the agent's history; rejection notes are appended to it in
/// counterfactual-note mode. `session` must mirror the executed history and
/// is left unchanged.
pub fn gated_step(
    agent: &mut dyn Agent,
    state: &WorldState,
    session: &mut WmSession,
    gate: &GateConfig,
    view: &mut Trajectory,
) -> Result<GatedStep> {
    let mut rejected: Vec<String> = Vec::new();
    let mut out = agent.next_turn(view, &[])?;
    let mut attempts = 0u32;
    let outcome = loop {
        let action = parse_action(&out.action_raw);
        if gate.budget == 0 || !is_irreversible(state, &action) {
            break if attempts == 0 {
                GateOutcome::Passthrough
            } else {
                GateOutcome::Redirected
            };
        }
        if attempts == gate.budget {
            break GateOutcome::Exhausted;
        }
        let token = session.snapshot();
        let predicted = session.predict_next(&out.action_raw);
        session.rewind(token)?;
        attempts += 1;
        match predicted {
            Err(e) if e.is_transport() => break GateOutcome::Degraded,
            Err(e) => return Err(e),
            Ok(p) if p.reward == 1 => break GateOutcome::Verified,
            Ok(_) => {
                rejected.push(out.action_raw.clone());
                out = match gate.feedback_mode {
                    FeedbackMode::Silent => agent.next_turn(view, &rejected)?,
                    FeedbackMode::CounterfactualNote => {
                        view.turns.push(Turn {
                            thought: out.thought.clone(),
                            action_raw: out.action_raw.clone(),
                            observation: VERIFICATION_NOTE.to_string(),
                            reward: 0,
                            terminated: false,
                        });
                        agent.next_turn(view, &[])?
                    }
                };
            }
        }
    };
    let (next, obs) = env::step_raw(state, &out.action_raw)?;
    Ok(GatedStep {
        decision: GateDecision {
            step: next.step_count as usize,
            attempts_used: attempts,
            committed: outcome == GateOutcome::Verified,
            rejected_actions: rejected,
            outcome,
        },
        state: next,
        observation: obs,
        turn: out,
    })
}

/// A full episode under the gate. The recorded trajectory holds executed
/// turns only; gate decisions for steps that simulated anything are kept on
/// the record.
pub fn run_gated(
    agent: &mut dyn Agent,
    wm: &WorldModel,
    episode: &EpisodeConfig,
    gate: &GateConfig,
) -> Result<RolloutRecord> {
    let (mut state, _, init) = env::reset(episode)?;
    let mut traj = Trajectory::new(
        *episode,
        init.user_text.clone(),
        init.hidden_text.clone(),
        Source::Real,
        agent.id(),
        None,
    );
    let mut view = traj.clone();
    let mut session = wm.open_session(&init, episode)?;
    let mut decisions = Vec::new();
    while !state.terminated {
        let step = match gated_step(agent, &state, &mut session, gate, &mut view) {
            Ok(s) => s,
            Err(e) if e.is_transport() => {
                return Ok(RolloutRecord {
                    success: 0,
                    trajectory: traj,
                    regime: Regime::Real,
                    divergence_step: None,
                    paired_wm: None,
                    aborted: Some(e.to_string()),
                    gate: decisions,
                });
            }
            Err(e) => return Err(e),
        };
        let turn = Turn {
            thought: step.turn.thought,
            action_raw: step.turn.action_raw,
            observation: step.observation.render(episode.env_kind),
            reward: step.observation.reward,
            terminated: step.observation.terminated,
        };
        if !session.terminated() {
            session.feed(
                &turn.action_raw,
                WmPrediction {
                    observation: turn.observation.clone(),
                    reward: turn.reward,
                    terminated: turn.terminated,
                },
            )?;
        }
        if step.decision.outcome != GateOutcome::Passthrough {
            decisions.push(step.decision);
        }
        traj.turns.push(turn.clone());
        view.turns.push(turn);
        state = step.state;
    }
    Ok(RolloutRecord {
        success: traj.success(),
        trajectory: traj,
        regime: Regime::Real,
        divergence_step: None,
        paired_wm: None,
        aborted: None,
        gate: decisions,
    })
}

/// Success rate of gated runs over `episodes` for each budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetRow {
    pub budget: u32,
    pub success_rate: f64,
    pub episodes: usize,
    pub aborted: usize,
    pub attempts_total: u64,
}

pub fn budget_sweep(
    agent: &AgentSpec,
    wm: &WorldModel,
    episodes: &[EpisodeConfig],
    budgets: &[u32],
    feedback_mode: FeedbackMode,
    workers: usize,
) -> Result<(Vec<BudgetRow>, Vec<Vec<RolloutRecord>>)> {
    let mut rows = Vec::new();
    let mut all = Vec::new();
    for &budget in budgets {
        let gate = GateConfig {
            budget,
            feedback_mode,
        };
        let records = run_parallel(episodes, workers, |ep| {
            run_gated(agent.build(ep)?.as_mut(), wm, ep, &gate)
        })?;
        rows.push(BudgetRow {
            budget,
            success_rate: crate::metrics::success_rate(&records),
            episodes: records.len(),
            aborted: records.iter().filter(|r| r.aborted.is_some()).count(),
            attempts_total: records
                .iter()
                .flat_map(|r| &r.gate)
                .map(|d| d.attempts_used as u64)
                .sum(),
        });
        all.push(records);
    }
    Ok((rows, all))
}

/// MiniShop episodes from `split` on which the buy-first-result mistake is
/// constructible, in seed order.
pub fn mistake_scenarios(count: usize, split: env::Split) -> Result<Vec<EpisodeConfig>> {
    let candidates = env::generate_split(env::EnvKind::MiniShop, count * 4 + 16, split)?;
    let found: Vec<EpisodeConfig> = candidates
        .into_iter()
        .filter(|ep| crate::agent::buy_first_result(ep).is_ok())
        .take(count)
        .collect();
    if found.len() < count {
        return Err(HarnessError::Shortfall {
            key: "mistake scenarios".into(),
            requested: count,
            available: found.len(),
        });
    }
    Ok(found)
}
