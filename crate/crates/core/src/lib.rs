//! Harness for studying text-environment world models.
//!
//! Two deterministic environments (`minihouse`, a household object-placement
//! task, and `minishop`, a search-and-purchase task) back every workflow:
//!
//! - [`rollout`]: agents play the real environment, a world model, or a
//!   replay of a world-model rollout inside the real environment (W2R).
//! - [`metrics`]: exact-match and word-F1 fidelity, success rates, and the
//!   consistency ratio W2R / Real.
//! - [`verify`]: simulate irreversible actions in a world model before
//!   committing them.
//! - [`dataset`]: trajectory stores and chat-format SFT exports, quota
//!   mixing, and nested subsample sweeps.
//! - [`gateway`]: chat-completions client with retries, a concurrency bound,
//!   and transcript record/replay.
//!
//! ```
//! use std::collections::BTreeSet;
//! use wm_harness::agent::AgentSpec;
//! use wm_harness::env::{generate_split, EnvKind, Split};
//! use wm_harness::metrics::consistency;
//! use wm_harness::rollout::run_triple;
//! use wm_harness::wm::WorldModel;
//!
//! let episodes = generate_split(EnvKind::MiniHouse, 5, Split::TestId)?;
//! let run = run_triple(&AgentSpec::scripted(), &WorldModel::oracle(), &episodes, &BTreeSet::new(), 1)?;
//! let report = consistency(&run.real, &run.wm, &run.w2r)?;
//! assert_eq!(report.cr, Some(1.0));
//! # Ok::<(), wm_harness::HarnessError>(())
//! ```

pub mod agent;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod env;
pub mod error;
pub mod gateway;
pub mod metrics;
pub mod protocol;
pub mod rollout;
pub mod verify;
pub mod wm;

pub use error::{HarnessError, Result};
