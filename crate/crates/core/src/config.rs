//! Declarative run configuration: a TOML file, overridden by command-line
//! flags, over built-in defaults.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::agent::AgentSpec;
use crate::dataset::{MixKey, Objective, SuccessFilter};
use crate::env::{self, EnvKind, EpisodeConfig, Split, Verb};
use crate::error::{HarnessError, Result};
use crate::gateway::{sha256_hex, EndpointConfig, Gateway, GatewayMode, Sampling};
use crate::verify::{FeedbackMode, GateConfig, BUDGET_PRESETS};
use crate::wm::{CorruptionMode, CorruptionSpec, RemoteWm, WmRegistry, WorldModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AgentKind {
    Scripted,
    ScriptedBuyFirst,
    Random,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentEntry {
    pub id: String,
    pub kind: AgentKind,
    #[serde(default)]
    pub seed: u64,
    /// Endpoint name for remote agents.
    #[serde(default)]
    pub endpoint: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WmEntryKind {
    Oracle,
    Noisy,
    Remote,
}

fn token_swap() -> CorruptionMode {
    CorruptionMode::TokenSwap
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WmEntry {
    pub id: String,
    pub kind: WmEntryKind,
    #[serde(default)]
    pub rate: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "token_swap")]
    pub mode: CorruptionMode,
    #[serde(default)]
    pub endpoint: Option<String>,
}

/// Quota-driven mix for the `mix` command when no preset is named.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MixConfig {
    pub key: MixKey,
    pub quotas: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub run_id: String,
    pub out_dir: PathBuf,
    pub workers: usize,
    pub seed: u64,
    pub envs: Vec<EnvKind>,
    pub split: Split,
    pub episodes: usize,
    pub max_turns: u32,
    pub agent: String,
    /// World model id. `collect` stores world-model rollouts when set; the
    /// evaluation commands fall back to `oracle`.
    pub wm: Option<String>,
    pub grounding: Vec<Verb>,
    pub budgets: Vec<u32>,
    pub feedback_mode: FeedbackMode,
    /// Probes per trajectory for `eval-fidelity`; unset probes every step.
    pub probe_k: Option<usize>,
    /// Highest tolerated fraction of aborted episodes.
    pub max_failure_rate: f64,
    pub objective: Objective,
    pub success_filter: SuccessFilter,
    /// Trajectory stores read by `export` and `mix`.
    pub inputs: Vec<PathBuf>,
    pub sizes: Vec<usize>,
    pub preset: Option<String>,
    /// Agent ids for the `mix-agent` preset.
    pub mix_agents: Vec<String>,
    pub mix: MixConfig,
    /// Sample size for an early-experience warmup export.
    pub warmup: Option<usize>,
    pub sampling: Sampling,
    pub agents: Vec<AgentEntry>,
    pub world_models: Vec<WmEntry>,
    pub endpoints: Vec<EndpointConfig>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            run_id: "default".into(),
            out_dir: PathBuf::from("runs"),
            workers: 1,
            seed: 0,
            envs: EnvKind::ALL.to_vec(),
            split: Split::TestId,
            episodes: 200,
            max_turns: env::DEFAULT_MAX_TURNS,
            agent: "scripted".into(),
            wm: None,
            grounding: Vec::new(),
            budgets: BUDGET_PRESETS.to_vec(),
            feedback_mode: FeedbackMode::Silent,
            probe_k: None,
            max_failure_rate: 0.0,
            objective: Objective::Agent,
            success_filter: SuccessFilter::Any,
            inputs: Vec::new(),
            sizes: Vec::new(),
            preset: None,
            mix_agents: Vec::new(),
            mix: MixConfig::default(),
            warmup: None,
            sampling: Sampling::default(),
            agents: Vec::new(),
            world_models: Vec::new(),
            endpoints: Vec::new(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| HarnessError::Config(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("reading {}: {e}", path.display())))?;
        RunConfig::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.envs.is_empty() {
            return Err(HarnessError::Config("no environments configured".into()));
        }
        if self.episodes == 0 {
            return Err(HarnessError::Config("episode count must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.max_failure_rate) {
            return Err(HarnessError::Config("max_failure_rate must lie in [0, 1]".into()));
        }
        if self.run_id.is_empty() || self.run_id.contains(['/', '\\']) {
            return Err(HarnessError::Config(format!("invalid run id {:?}", self.run_id)));
        }
        for e in &self.endpoints {
            e.validate()?;
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, ignoring `run_id`, `out_dir`,
    /// and `workers`.
    pub fn digest(&self) -> String {
        let mut c = self.clone();
        c.run_id = String::new();
        c.out_dir = PathBuf::new();
        c.workers = 0;
        let json = serde_json::to_vec(&c).expect("config serializes");
        sha256_hex(&json)
    }

    pub fn run_dir(&self) -> PathBuf {
        self.out_dir.join(&self.run_id)
    }

    pub fn transcript_path(&self, endpoint: &str) -> PathBuf {
        self.run_dir().join("transcripts").join(format!("{endpoint}.jsonl"))
    }

    pub fn gate(&self, budget: u32) -> GateConfig {
        GateConfig {
            budget,
            feedback_mode: self.feedback_mode,
        }
    }

    pub fn grounding_set(&self) -> std::collections::BTreeSet<Verb> {
        self.grounding.iter().copied().collect()
    }

    /// Episodes of the configured split for every configured environment.
    pub fn episode_list(&self) -> Result<Vec<EpisodeConfig>> {
        let mut out = Vec::new();
        for &kind in &self.envs {
            for ep in env::generate_split(kind, self.episodes, self.split)? {
                out.push(ep.with_max_turns(self.max_turns));
            }
        }
        Ok(out)
    }

    fn agent_entries(&self) -> Vec<AgentEntry> {
        let builtin = |id: &str, kind| AgentEntry {
            id: id.into(),
            kind,
            seed: 0,
            endpoint: None,
        };
        let mut all = vec![
            builtin("scripted", AgentKind::Scripted),
            builtin("scripted-buy-first", AgentKind::ScriptedBuyFirst),
            builtin("random", AgentKind::Random),
        ];
        all.extend(self.agents.iter().cloned());
        all
    }

    pub fn agent_kind(&self, id: &str) -> Result<AgentKind> {
        self.agent_entries()
            .into_iter()
            .rev()
            .find(|a| a.id == id)
            .map(|a| a.kind)
            .ok_or_else(|| HarnessError::Config(format!("unknown agent {id:?}")))
    }

    fn wm_entries(&self) -> Vec<WmEntry> {
        let mut all = vec![
            WmEntry {
                id: "oracle".into(),
                kind: WmEntryKind::Oracle,
                rate: 0.0,
                seed: 0,
                mode: CorruptionMode::TokenSwap,
                endpoint: None,
            },
            WmEntry {
                id: "noisy-0.25".into(),
                kind: WmEntryKind::Noisy,
                rate: 0.25,
                seed: 0,
                mode: CorruptionMode::TokenSwap,
                endpoint: None,
            },
        ];
        all.extend(self.world_models.iter().cloned());
        all
    }
}

/// Agents, world models, and endpoint gateways resolved from a config.
pub struct Registry {
    agents: BTreeMap<String, AgentSpec>,
    pub wms: WmRegistry,
    pub gateways: BTreeMap<String, Arc<Gateway>>,
}

/// Whether remote endpoints talk to the network or serve a transcript.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EndpointMode {
    Live,
    Replay,
}

impl Registry {
    /// Build every registry entry. Gateways for remote entries are created
    /// lazily only for endpoints some entry references.
    pub fn build(config: &RunConfig, mode: EndpointMode) -> Result<Self> {
        let endpoints: BTreeMap<&str, &EndpointConfig> =
            config.endpoints.iter().map(|e| (e.name.as_str(), e)).collect();
        let mut gateways: BTreeMap<String, Arc<Gateway>> = BTreeMap::new();
        let mut gateway = |name: &Option<String>, owner: &str| -> Result<Arc<Gateway>> {
            let name = name
                .as_deref()
                .ok_or_else(|| HarnessError::Config(format!("{owner} needs an endpoint")))?;
            if let Some(g) = gateways.get(name) {
                return Ok(g.clone());
            }
            let cfg = endpoints
                .get(name)
                .ok_or_else(|| HarnessError::Config(format!("{owner}: unknown endpoint {name:?}")))?;
            let transcript = config.transcript_path(name);
            let gw_mode = match mode {
                EndpointMode::Live => GatewayMode::Live {
                    transcript: Some(transcript),
                },
                EndpointMode::Replay => GatewayMode::Replay { transcript },
            };
            let g = Arc::new(Gateway::new((*cfg).clone(), gw_mode)?);
            gateways.insert(name.to_string(), g.clone());
            Ok(g)
        };

        let mut agents = BTreeMap::new();
        for a in config.agent_entries() {
            let spec = match a.kind {
                AgentKind::Scripted => AgentSpec::Scripted { id: a.id.clone() },
                AgentKind::ScriptedBuyFirst => AgentSpec::ScriptedBuyFirst { id: a.id.clone() },
                AgentKind::Random => AgentSpec::Random {
                    id: a.id.clone(),
                    seed: a.seed,
                },
                AgentKind::Remote => {
                    if a.id != config.agent {
                        continue;
                    }
                    AgentSpec::Remote {
                        id: a.id.clone(),
                        gateway: gateway(&a.endpoint, &format!("agent {}", a.id))?,
                        sampling: config.sampling,
                    }
                }
            };
            agents.insert(a.id.clone(), spec);
        }

        let mut wms = WmRegistry::default();
        for w in config.wm_entries() {
            let model = match w.kind {
                WmEntryKind::Oracle => WorldModel {
                    id: w.id.clone(),
                    kind: crate::wm::WmKind::Oracle,
                },
                WmEntryKind::Noisy => WorldModel::noisy(&w.id, CorruptionSpec::new(w.rate, w.seed, w.mode)?),
                WmEntryKind::Remote => {
                    if config.wm.as_deref() != Some(w.id.as_str()) {
                        continue;
                    }
                    WorldModel {
                        id: w.id.clone(),
                        kind: crate::wm::WmKind::Remote(RemoteWm {
                            gateway: gateway(&w.endpoint, &format!("world model {}", w.id))?,
                            sampling: config.sampling,
                        }),
                    }
                }
            };
            wms.insert(model);
        }
        Ok(Registry {
            agents,
            wms,
            gateways,
        })
    }

    pub fn agent(&self, id: &str) -> Result<&AgentSpec> {
        self.agents
            .get(id)
            .ok_or_else(|| HarnessError::Config(format!("unknown agent {id:?}")))
    }

    pub fn wm(&self, id: &str) -> Result<&WorldModel> {
        self.wms.get(id)
    }

    /// Network requests made by all gateways so far.
    pub fn network_calls(&self) -> u64 {
        self.gateways.values().map(|g| g.network_calls()).sum()
    }
}
