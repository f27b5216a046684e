use thiserror::Error;

/// Errors surfaced by the harness.
///
/// The variants map onto the failure classes the CLI reports with distinct
/// exit codes (see [`HarnessError::exit_code`]).
#[derive(Debug, Error)]
pub enum HarnessError {
    /// Invalid configuration, unknown registry id, unsupported environment.
    #[error("configuration error: {0}")]
    Config(String),

    /// A call made in the wrong lifecycle state (stepping a finished episode,
    /// rewinding with a foreign token, ...).
    #[error("protocol error: {0}")]
    Protocol(String),

    /// A remote endpoint failed permanently or exhausted its retries.
    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },

    /// A quota or sample request could not be met from the available pool.
    #[error("shortfall for `{key}`: requested {requested}, available {available}")]
    Shortfall {
        key: String,
        requested: usize,
        available: usize,
    },

    /// Inputs that do not line up (e.g. mismatched episode lists).
    #[error("input error: {0}")]
    Input(String),

    /// A generated episode could not be solved within the search budget.
    #[error("generator bug: {env} seed {seed} unsolved after {expanded} expansions")]
    Unsolvable {
        env: String,
        seed: u64,
        expanded: usize,
    },

    /// A rerun produced outputs that differ from the recorded ones.
    #[error("digest mismatch: {0}")]
    Mismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl HarnessError {
    /// Process exit code for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            HarnessError::Shortfall { .. } => 3,
            HarnessError::Transport { .. } => 4,
            HarnessError::Protocol(_) | HarnessError::Unsolvable { .. } => 5,
            HarnessError::Input(_) => 6,
            HarnessError::Io(_) | HarnessError::Json(_) => 7,
            HarnessError::Mismatch(_) => 8,
        }
    }

    pub fn is_transport(&self) -> bool {
        matches!(self, HarnessError::Transport { .. })
    }
}

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;
