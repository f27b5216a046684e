//! World models: the oracle, a calibrated noisy oracle, and a remote LLM.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::env::{self, parse_action, rules, EpisodeConfig, InitContext, ParsedAction, WorldState};
use crate::error::{HarnessError, Result};
use crate::gateway::{Gateway, Sampling};
use crate::protocol::{build_wm_messages, decode_wm_target, Source, Trajectory, Turn};

/// Token substituted by token-swap corruption. Never produced by either
/// environment.
pub const NOISE_TOKEN: &str = "\u{27e8}noise\u{27e9}";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WmPrediction {
    pub observation: String,
    pub reward: u8,
    pub terminated: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorruptionMode {
    TokenSwap,
    WrongBranch,
}

impl FromStr for CorruptionMode {
    type Err = HarnessError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "token-swap" => Ok(CorruptionMode::TokenSwap),
            "wrong-branch" => Ok(CorruptionMode::WrongBranch),
            _ => Err(HarnessError::Config(format!("unknown corruption mode {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorruptionSpec {
    pub rate: f64,
    pub seed: u64,
    pub mode: CorruptionMode,
}

impl CorruptionSpec {
    pub fn new(rate: f64, seed: u64, mode: CorruptionMode) -> Result<Self> {
        if !(0.0..=1.0).contains(&rate) {
            return Err(HarnessError::Config(format!("corruption rate {rate} outside [0, 1]")));
        }
        Ok(CorruptionSpec { rate, seed, mode })
    }

    /// Uniform draw in [0, 1) for one prediction, keyed by position so a
    /// rewound session replays the same noise.
    fn draw(&self, episode: &EpisodeConfig, position: usize, action: &str) -> (f64, u64) {
        let mut h = Sha256::new();
        h.update(b"wm-harness/noise/");
        h.update(self.seed.to_le_bytes());
        h.update(episode.env_kind.as_str().as_bytes());
        h.update(episode.seed.to_le_bytes());
        h.update((position as u64).to_le_bytes());
        h.update(action.as_bytes());
        let d = h.finalize();
        let a = u64::from_le_bytes(d[..8].try_into().unwrap());
        let b = u64::from_le_bytes(d[8..16].try_into().unwrap());
        ((a >> 11) as f64 / (1u64 << 53) as f64, b)
    }
}

#[derive(Clone)]
pub struct RemoteWm {
    pub gateway: Arc<Gateway>,
    pub sampling: Sampling,
}

impl fmt::Debug for RemoteWm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RemoteWm")
            .field("model", &self.gateway.config().model)
            .field("sampling", &self.sampling)
            .finish()
    }
}

#[derive(Debug, Clone)]
pub enum WmKind {
    Oracle,
    Noisy(CorruptionSpec),
    Remote(RemoteWm),
}

/// A registered world model.
#[derive(Debug, Clone)]
pub struct WorldModel {
    pub id: String,
    pub kind: WmKind,
}

impl WorldModel {
    pub fn oracle() -> Self {
        WorldModel {
            id: "oracle".into(),
            kind: WmKind::Oracle,
        }
    }

    pub fn noisy(id: &str, spec: CorruptionSpec) -> Self {
        WorldModel {
            id: id.into(),
            kind: WmKind::Noisy(spec),
        }
    }

    pub fn open_session(&self, init: &InitContext, episode: &EpisodeConfig) -> Result<WmSession> {
        let shadow = match self.kind {
            WmKind::Oracle | WmKind::Noisy(_) => Some(env::reset(episode)?.0),
            WmKind::Remote(_) => None,
        };
        Ok(WmSession {
            wm_id: self.id.clone(),
            kind: self.kind.clone(),
            init: init.clone(),
            episode: *episode,
            shadow,
            history: Vec::new(),
            snapshots: Vec::new(),
            session_id: NEXT_SESSION.fetch_add(1, Ordering::Relaxed),
            next_token: 0,
        })
    }
}

/// World models addressable by id.
#[derive(Debug, Clone, Default)]
pub struct WmRegistry {
    models: BTreeMap<String, WorldModel>,
}

impl WmRegistry {
    pub fn insert(&mut self, wm: WorldModel) {
        self.models.insert(wm.id.clone(), wm);
    }

    pub fn get(&self, id: &str) -> Result<&WorldModel> {
        self.models
            .get(id)
            .ok_or_else(|| HarnessError::Config(format!("unknown world model {id:?}")))
    }

    pub fn open_session(
        &self,
        wm_id: &str,
        init: &InitContext,
        episode: &EpisodeConfig,
    ) -> Result<WmSession> {
        self.get(wm_id)?.open_session(init, episode)
    }
}

static NEXT_SESSION: AtomicU64 = AtomicU64::new(1);

/// Handle returned by [`WmSession::snapshot`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SnapshotToken {
    session: u64,
    id: u64,
}

#[derive(Debug, Clone)]
struct Snapshot {
    id: u64,
    history_len: usize,
    shadow: Option<WorldState>,
}

#[derive(Debug, Clone)]
pub struct HistoryEntry {
    pub action: String,
    pub prediction: WmPrediction,
}

/// One imagined episode.
#[derive(Debug, Clone)]
pub struct WmSession {
    wm_id: String,
    kind: WmKind,
    init: InitContext,
    episode: EpisodeConfig,
    shadow: Option<WorldState>,
    history: Vec<HistoryEntry>,
    snapshots: Vec<Snapshot>,
    session_id: u64,
    next_token: u64,
}

impl WmSession {
    pub fn wm_id(&self) -> &str {
        &self.wm_id
    }

    pub fn history(&self) -> &[HistoryEntry] {
        &self.history
    }

    /// Shadow state of state-tracking world models.
    pub fn shadow(&self) -> Option<&WorldState> {
        self.shadow.as_ref()
    }

    pub fn terminated(&self) -> bool {
        self.history.last().is_some_and(|h| h.prediction.terminated)
    }

    /// Predict the response to `action_raw` and append it to the history.
    pub fn predict_next(&mut self, action_raw: &str) -> Result<WmPrediction> {
        if self.terminated() {
            return Err(HarnessError::Protocol(format!(
                "world-model session {} is terminated",
                self.wm_id
            )));
        }
        let action = parse_action(action_raw);
        let position = self.history.len();
        let prediction = match &self.kind {
            WmKind::Oracle => self.step_shadow(&action)?,
            WmKind::Noisy(spec) => {
                let spec = *spec;
                let (u, pick) = spec.draw(&self.episode, position, action.raw());
                if u < spec.rate {
                    match spec.mode {
                        CorruptionMode::TokenSwap => {
                            let mut p = self.step_shadow(&action)?;
                            p.observation = swap_token(&p.observation, pick);
                            p
                        }
                        CorruptionMode::WrongBranch => {
                            let unparseable = ParsedAction::Unparseable {
                                raw: action.raw().to_string(),
                            };
                            self.step_shadow(&unparseable)?
                        }
                    }
                } else {
                    self.step_shadow(&action)?
                }
            }
            WmKind::Remote(remote) => {
                let msgs = build_wm_messages(&self.as_trajectory(), action_raw);
                let completion = remote.gateway.complete(&msgs, &remote.sampling)?;
                let (observation, reward, terminated) = decode_wm_target(&completion);
                let mut p = WmPrediction {
                    observation,
                    reward: u8::from(terminated && reward == 1),
                    terminated,
                };
                if !p.terminated && position + 1 >= self.episode.max_turns as usize {
                    p = WmPrediction {
                        observation: rules().messages.turn_limit.clone(),
                        reward: 0,
                        terminated: true,
                    };
                }
                p
            }
        };
        self.history.push(HistoryEntry {
            action: action_raw.to_string(),
            prediction: prediction.clone(),
        });
        Ok(prediction)
    }

    /// Teacher forcing: append a known (action, response) pair without
    /// predicting. State-tracking models step their shadow state.
    pub fn feed(&mut self, action_raw: &str, observed: WmPrediction) -> Result<()> {
        if let Some(state) = &self.shadow {
            if !state.terminated {
                let (next, _) = env::step(state, &parse_action(action_raw))?;
                self.shadow = Some(next);
            }
        }
        self.history.push(HistoryEntry {
            action: action_raw.to_string(),
            prediction: observed,
        });
        Ok(())
    }

    pub fn snapshot(&mut self) -> SnapshotToken {
        let id = self.next_token;
        self.next_token += 1;
        self.snapshots.push(Snapshot {
            id,
            history_len: self.history.len(),
            shadow: self.shadow.clone(),
        });
        SnapshotToken {
            session: self.session_id,
            id,
        }
    }

    /// Restore the session to `token`. Newer snapshots are discarded.
    pub fn rewind(&mut self, token: SnapshotToken) -> Result<()> {
        if token.session != self.session_id {
            return Err(HarnessError::Protocol("snapshot token from another session".into()));
        }
        let pos = self
            .snapshots
            .iter()
            .rposition(|s| s.id == token.id)
            .ok_or_else(|| HarnessError::Protocol("snapshot token expired".into()))?;
        let snap = self.snapshots[pos].clone();
        self.snapshots.truncate(pos);
        self.history.truncate(snap.history_len);
        self.shadow = snap.shadow;
        Ok(())
    }

    fn step_shadow(&mut self, action: &ParsedAction) -> Result<WmPrediction> {
        let state = self
            .shadow
            .as_ref()
            .ok_or_else(|| HarnessError::Protocol("session has no shadow state".into()))?;
        let (next, obs) = env::step(state, action)?;
        let p = WmPrediction {
            observation: obs.render(self.episode.env_kind),
            reward: obs.reward,
            terminated: obs.terminated,
        };
        self.shadow = Some(next);
        Ok(p)
    }

    fn as_trajectory(&self) -> Trajectory {
        let mut t = Trajectory::new(
            self.episode,
            self.init.user_text.clone(),
            self.init.hidden_text.clone(),
            Source::Wm,
            "",
            Some(&self.wm_id),
        );
        t.turns = self
            .history
            .iter()
            .map(|h| Turn {
                thought: String::new(),
                action_raw: h.action.clone(),
                observation: h.prediction.observation.clone(),
                reward: h.prediction.reward,
                terminated: h.prediction.terminated,
            })
            .collect();
        t
    }
}

/// Replace one whitespace-delimited token with [`NOISE_TOKEN`].
fn swap_token(text: &str, pick: u64) -> String {
    let spans: Vec<(usize, usize)> = {
        let mut v = Vec::new();
        let mut start = None;
        for (i, c) in text.char_indices() {
            match (c.is_whitespace(), start) {
                (false, None) => start = Some(i),
                (true, Some(s)) => {
                    v.push((s, i));
                    start = None;
                }
                _ => {}
            }
        }
        if let Some(s) = start {
            v.push((s, text.len()));
        }
        v
    };
    if spans.is_empty() {
        return format!("{text}{NOISE_TOKEN}");
    }
    let (s, e) = spans[(pick % spans.len() as u64) as usize];
    format!("{}{NOISE_TOKEN}{}", &text[..s], &text[e..])
}
