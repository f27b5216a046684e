//! ReAct turn codec and the dialogue framing shared by agents, world models,
//! and dataset exports.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::env::{EnvKind, EpisodeConfig, Split};
use crate::error::{HarnessError, Result};

pub const THOUGHT_MARKER: &str = "Thought:";
pub const ACTION_MARKER: &str = "Action:";
pub const HIDDEN_HEADER: &str = "# Environment Information (Only visible to Assistant)";
pub const USER_HEADER: &str = "# User Environment Information (Displayed to User)";

/// Observation appended to an agent's view when the verification gate
/// rejects a proposed action.
pub const VERIFICATION_NOTE: &str = "Verification: that action would not complete the task.";

const WM_PREAMBLE: &str = "You simulate a text environment. Each user message is an action \
taken in that environment; reply with exactly the text the environment would return. When \
the episode ends, add a final line <done r=1> if the task was accomplished or <done r=0> \
otherwise.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn new(role: Role, content: impl Into<String>) -> Self {
        Message {
            role,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub thought: String,
    pub action_raw: String,
    pub observation: String,
    pub reward: u8,
    pub terminated: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Real,
    Wm,
}

impl Source {
    pub fn as_str(&self) -> &'static str {
        match self {
            Source::Real => "real",
            Source::Wm => "wm",
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trajectory {
    pub episode: EpisodeConfig,
    pub init_user_text: String,
    pub init_hidden_text: String,
    pub turns: Vec<Turn>,
    pub source: Source,
    pub agent_id: String,
    pub wm_id: Option<String>,
}

impl Trajectory {
    pub fn new(
        episode: EpisodeConfig,
        init_user_text: String,
        init_hidden_text: String,
        source: Source,
        agent_id: &str,
        wm_id: Option<&str>,
    ) -> Self {
        Trajectory {
            episode,
            init_user_text,
            init_hidden_text,
            turns: Vec::new(),
            source,
            agent_id: agent_id.to_string(),
            wm_id: wm_id.map(str::to_string),
        }
    }

    /// Stable identifier: source, agent, world model, environment, seed.
    pub fn id(&self) -> String {
        format!(
            "{}:{}:{}:{}:{}:{}",
            self.source,
            self.agent_id,
            self.wm_id.as_deref().unwrap_or("-"),
            self.episode.env_kind,
            self.episode.split,
            self.episode.seed
        )
    }

    /// Environment identifier used for mixing. Out-of-distribution layouts
    /// form their own environment pool.
    pub fn env_id(&self) -> String {
        env_id(self.episode.env_kind, self.episode.split)
    }

    pub fn terminated(&self) -> bool {
        self.turns.last().is_some_and(|t| t.terminated)
    }

    /// Final reward: 1 when the last turn ended the episode successfully.
    pub fn success(&self) -> u8 {
        self.turns
            .last()
            .map(|t| u8::from(t.terminated && t.reward == 1))
            .unwrap_or(0)
    }

    pub fn actions(&self) -> impl Iterator<Item = &str> {
        self.turns.iter().map(|t| t.action_raw.as_str())
    }

    /// Check the structural invariants of a stored trajectory.
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.source == Source::Real && self.wm_id.is_some() {
            return Err("real trajectory carries a wm_id".into());
        }
        if self.source == Source::Wm && self.wm_id.is_none() {
            return Err("wm trajectory lacks a wm_id".into());
        }
        let n = self.turns.len();
        for (i, t) in self.turns.iter().enumerate() {
            if t.terminated && i + 1 != n {
                return Err(format!("turn {} is terminal but not last", i + 1));
            }
            if t.action_raw.is_empty() {
                return Err(format!("turn {} has an empty action", i + 1));
            }
            if t.reward > 1 || (t.reward == 1 && !t.terminated) {
                return Err(format!("turn {} has an invalid reward", i + 1));
            }
        }
        Ok(())
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("trajectory serializes")
    }

    pub fn from_line(line: &str) -> Result<Self> {
        Ok(serde_json::from_str(line)?)
    }
}

pub fn env_id(kind: EnvKind, split: Split) -> String {
    if split.is_ood() {
        format!("{kind}-ood")
    } else {
        kind.to_string()
    }
}

fn marker_line(text: &str, marker: &str, from: usize) -> Option<(usize, usize)> {
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        if offset >= from && line.starts_with(marker) {
            return Some((offset, offset + marker.len()));
        }
        offset += line.len();
    }
    None
}

/// Split a completion into thought and action at line-anchored markers.
///
/// Total: without an `Action:` line the whole text becomes the action.
pub fn parse_react(completion: &str) -> (String, String) {
    let text = completion.replace("\r\n", "\n");
    let thought = marker_line(&text, THOUGHT_MARKER, 0);
    let action_from = thought.map(|(_, end)| end).unwrap_or(0);
    match marker_line(&text, ACTION_MARKER, action_from) {
        Some((start, end)) => {
            let thought = thought
                .map(|(_, t_end)| text[t_end..start].trim().to_string())
                .unwrap_or_default();
            (thought, text[end..].trim().to_string())
        }
        None => (String::new(), text.trim().to_string()),
    }
}

/// Canonical assistant text for one agent turn.
pub fn render_react(thought: &str, action: &str) -> String {
    format!("{THOUGHT_MARKER}\n{thought}\n{ACTION_MARKER}\n{action}")
}

/// Agent-side dialogue: system, initial observation, then alternating
/// assistant turns and observations, ending on an observation.
pub fn build_agent_messages(traj: &Trajectory, system_prompt: &str) -> Result<Vec<Message>> {
    if traj.terminated() {
        return Err(HarnessError::Protocol(format!(
            "trajectory {} is already terminated",
            traj.id()
        )));
    }
    let mut msgs = vec![
        Message::new(Role::System, system_prompt),
        Message::new(Role::User, traj.init_user_text.clone()),
    ];
    for t in &traj.turns {
        msgs.push(Message::new(Role::Assistant, render_react(&t.thought, &t.action_raw)));
        msgs.push(Message::new(Role::User, t.observation.clone()));
    }
    Ok(msgs)
}

/// System message handed to a world model.
pub fn wm_system_message(hidden_text: &str, user_text: &str) -> String {
    format!("{WM_PREAMBLE}\n\n{HIDDEN_HEADER}\n{hidden_text}\n\n{USER_HEADER}\n{user_text}")
}

/// World-model dialogue over the full history: system, then one
/// (action, encoded response) pair per turn. Thoughts are never included.
pub fn wm_dialogue(traj: &Trajectory) -> Vec<Message> {
    let mut msgs = vec![Message::new(
        Role::System,
        wm_system_message(&traj.init_hidden_text, &traj.init_user_text),
    )];
    for t in &traj.turns {
        msgs.push(Message::new(Role::User, t.action_raw.clone()));
        msgs.push(Message::new(
            Role::Assistant,
            encode_wm_target(&t.observation, t.reward, t.terminated),
        ));
    }
    msgs
}

/// World-model prompt for predicting the response to `next_action`.
pub fn build_wm_messages(traj: &Trajectory, next_action: &str) -> Vec<Message> {
    let mut msgs = wm_dialogue(traj);
    msgs.push(Message::new(Role::User, next_action));
    msgs
}

fn sentinel(reward: u8) -> String {
    format!("<done r={reward}>")
}

/// Terminal responses carry a trailing `<done r=0|1>` line.
pub fn encode_wm_target(observation: &str, reward: u8, terminated: bool) -> String {
    if terminated {
        format!("{observation}\n{}", sentinel(reward.min(1)))
    } else {
        observation.to_string()
    }
}

/// Inverse of [`encode_wm_target`]. A missing sentinel means non-terminal.
pub fn decode_wm_target(text: &str) -> (String, u8, bool) {
    let body = text.trim_end_matches(['\n', '\r', ' ']);
    for reward in [0u8, 1] {
        let s = sentinel(reward);
        if let Some(rest) = body.strip_suffix(&s) {
            if rest.is_empty() {
                return (String::new(), reward, true);
            }
            if let Some(obs) = rest.strip_suffix('\n') {
                return (obs.to_string(), reward, true);
            }
        }
    }
    (text.to_string(), 0, false)
}
