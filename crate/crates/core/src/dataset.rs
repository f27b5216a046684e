//! Trajectory store and SFT dataset factory: world-model and agent targets,
//! warmup sets, quota mixing, and nested data-scaling subsamples.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agent::system_prompt;
use crate::error::{HarnessError, Result};
use crate::gateway::sha256_hex;
use crate::protocol::{render_react, wm_dialogue, Message, Role, Source, Trajectory};

/// Sidecar index row locating one stored trajectory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub traj_id: String,
    pub seed: u64,
    pub agent_id: String,
    pub env_id: String,
    pub source: Source,
    pub success: u8,
    pub offset: u64,
    pub len: u64,
}

/// Append-only JSONL trajectory file with a `.idx` sidecar.
///
/// Appends go through `&mut self`, so a store has a single writer; reads
/// only need `&self`.
#[derive(Debug)]
pub struct TrajectoryStore {
    path: PathBuf,
    index: Vec<IndexEntry>,
}

fn index_path(path: &Path) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".idx");
    PathBuf::from(p)
}

impl TrajectoryStore {
    /// Create an empty store, truncating any existing files.
    pub fn create(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        File::create(&path)?;
        File::create(index_path(&path))?;
        Ok(TrajectoryStore {
            path,
            index: Vec::new(),
        })
    }

    /// Open an existing store. A missing sidecar is rebuilt from the data.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let idx = index_path(&path);
        let index = if idx.exists() {
            let mut out = Vec::new();
            for line in BufReader::new(File::open(&idx)?).lines() {
                let line = line?;
                if !line.trim().is_empty() {
                    out.push(serde_json::from_str(&line)?);
                }
            }
            out
        } else {
            let index = rebuild_index(&path)?;
            let mut f = File::create(&idx)?;
            for e in &index {
                writeln!(f, "{}", serde_json::to_string(e)?)?;
            }
            index
        };
        Ok(TrajectoryStore { path, index })
    }

    /// Build a store at `path` holding `trajectories` in order.
    pub fn write_all(path: impl AsRef<Path>, trajectories: &[Trajectory]) -> Result<Self> {
        let mut store = TrajectoryStore::create(path)?;
        store.append_all(trajectories)?;
        Ok(store)
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn index(&self) -> &[IndexEntry] {
        &self.index
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn append(&mut self, traj: &Trajectory) -> Result<IndexEntry> {
        let mut data = OpenOptions::new().append(true).open(&self.path)?;
        let offset = data.seek(SeekFrom::End(0))?;
        let line = traj.to_line();
        writeln!(data, "{line}")?;
        let entry = entry_for(traj, offset, line.len() as u64);
        let mut idx = OpenOptions::new().append(true).open(index_path(&self.path))?;
        writeln!(idx, "{}", serde_json::to_string(&entry)?)?;
        self.index.push(entry.clone());
        Ok(entry)
    }

    pub fn append_all(&mut self, trajectories: &[Trajectory]) -> Result<()> {
        for t in trajectories {
            self.append(t)?;
        }
        Ok(())
    }

    /// Read one trajectory by seeking to its indexed offset.
    pub fn read(&self, entry: &IndexEntry) -> Result<Trajectory> {
        let mut f = File::open(&self.path)?;
        f.seek(SeekFrom::Start(entry.offset))?;
        let mut buf = vec![0u8; entry.len as usize];
        f.read_exact(&mut buf)?;
        let text = String::from_utf8(buf)
            .map_err(|e| HarnessError::Input(format!("store {}: {e}", self.path.display())))?;
        Trajectory::from_line(&text)
    }

    pub fn read_all(&self) -> Result<Vec<Trajectory>> {
        self.index.iter().map(|e| self.read(e)).collect()
    }

    /// SHA-256 of the data file.
    pub fn digest(&self) -> Result<String> {
        file_digest(&self.path)
    }
}

fn entry_for(traj: &Trajectory, offset: u64, len: u64) -> IndexEntry {
    IndexEntry {
        traj_id: traj.id(),
        seed: traj.episode.seed,
        agent_id: traj.agent_id.clone(),
        env_id: traj.env_id(),
        source: traj.source,
        success: traj.success(),
        offset,
        len,
    }
}

fn rebuild_index(path: &Path) -> Result<Vec<IndexEntry>> {
    let mut reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    let mut offset = 0u64;
    let mut line = String::new();
    loop {
        line.clear();
        let n = reader.read_line(&mut line)?;
        if n == 0 {
            break;
        }
        let body = line.trim_end_matches('\n');
        if !body.is_empty() {
            out.push(entry_for(&Trajectory::from_line(body)?, offset, body.len() as u64));
        }
        offset += n as u64;
    }
    Ok(out)
}

pub fn file_digest(path: &Path) -> Result<String> {
    let mut h = Sha256::new();
    let mut f = File::open(path)?;
    std::io::copy(&mut f, &mut h)?;
    Ok(hex::encode(h.finalize()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    Wm,
    Agent,
}

impl Objective {
    pub fn as_str(&self) -> &'static str {
        match self {
            Objective::Wm => "wm",
            Objective::Agent => "agent",
        }
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Objective {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "wm" => Ok(Objective::Wm),
            "agent" => Ok(Objective::Agent),
            other => Err(HarnessError::Config(format!("unknown objective `{other}`"))),
        }
    }
}

/// One chat-format training record. Every assistant message is a target;
/// the last message is always an assistant message.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SftSample {
    pub messages: Vec<Message>,
    pub objective: Objective,
    pub env_id: String,
    pub agent_id: String,
    pub traj_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub purpose: Option<String>,
}

impl SftSample {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("sample serializes")
    }

    pub fn from_line(line: &str) -> Result<Self> {
        Ok(serde_json::from_str(line)?)
    }

    pub fn targets(&self) -> impl Iterator<Item = &Message> {
        self.messages.iter().filter(|m| m.role == Role::Assistant)
    }
}

fn check(traj: &Trajectory) -> std::result::Result<(), String> {
    traj.validate()?;
    if traj.turns.is_empty() {
        return Err("no turns".into());
    }
    Ok(())
}

/// World-model sample: actions as user turns, encoded responses as targets.
pub fn wm_sample(traj: &Trajectory) -> Result<SftSample> {
    check(traj).map_err(|e| HarnessError::Input(format!("{}: {e}", traj.id())))?;
    Ok(SftSample {
        messages: wm_dialogue(traj),
        objective: Objective::Wm,
        env_id: traj.env_id(),
        agent_id: traj.agent_id.clone(),
        traj_id: traj.id(),
        purpose: None,
    })
}

/// Agent sample: observations as user turns, ReAct turns as targets. The
/// final observation is dropped so the sample ends on a target.
pub fn agent_sample(traj: &Trajectory) -> Result<SftSample> {
    check(traj).map_err(|e| HarnessError::Input(format!("{}: {e}", traj.id())))?;
    let mut messages = vec![
        Message::new(Role::System, system_prompt(traj.episode.env_kind)),
        Message::new(Role::User, traj.init_user_text.clone()),
    ];
    let n = traj.turns.len();
    for (i, t) in traj.turns.iter().enumerate() {
        messages.push(Message::new(Role::Assistant, render_react(&t.thought, &t.action_raw)));
        if i + 1 < n {
            messages.push(Message::new(Role::User, t.observation.clone()));
        }
    }
    Ok(SftSample {
        messages,
        objective: Objective::Agent,
        env_id: traj.env_id(),
        agent_id: traj.agent_id.clone(),
        traj_id: traj.id(),
        purpose: None,
    })
}

pub fn sample_for(traj: &Trajectory, objective: Objective) -> Result<SftSample> {
    match objective {
        Objective::Wm => wm_sample(traj),
        Objective::Agent => agent_sample(traj),
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExportStats {
    pub written: usize,
    pub skipped: usize,
}

fn export(
    trajectories: &[Trajectory],
    objective: Objective,
    filter: SuccessFilter,
    out: &mut dyn Write,
) -> Result<ExportStats> {
    let mut stats = ExportStats::default();
    for t in trajectories.iter().filter(|t| filter.keeps(t.success())) {
        match sample_for(t, objective) {
            Ok(s) => {
                writeln!(out, "{}", s.to_line())?;
                stats.written += 1;
            }
            Err(_) => stats.skipped += 1,
        }
    }
    Ok(stats)
}

/// One world-model sample per well-formed trajectory; malformed ones are
/// skipped and counted.
pub fn export_wm_sft(
    trajectories: &[Trajectory],
    filter: SuccessFilter,
    out: &mut dyn Write,
) -> Result<ExportStats> {
    export(trajectories, Objective::Wm, filter, out)
}

pub fn export_agent_sft(
    trajectories: &[Trajectory],
    filter: SuccessFilter,
    out: &mut dyn Write,
) -> Result<ExportStats> {
    export(trajectories, Objective::Agent, filter, out)
}

/// Seeded warmup set of exactly `count` world-model samples drawn from the
/// well-formed trajectories.
pub fn export_early_experience(
    trajectories: &[Trajectory],
    count: usize,
    seed: u64,
    out: &mut dyn Write,
) -> Result<usize> {
    let pool: Vec<&Trajectory> = trajectories.iter().filter(|t| check(t).is_ok()).collect();
    if pool.len() < count {
        return Err(HarnessError::Shortfall {
            key: "warmup".into(),
            requested: count,
            available: pool.len(),
        });
    }
    let mut order: Vec<usize> = (0..pool.len()).collect();
    order.shuffle(&mut keyed_rng(seed, "warmup"));
    for &i in &order[..count] {
        let mut s = wm_sample(pool[i])?;
        s.purpose = Some("warmup".into());
        writeln!(out, "{}", s.to_line())?;
    }
    Ok(count)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SuccessFilter {
    #[default]
    Any,
    SuccessOnly,
    FailureOnly,
}

impl SuccessFilter {
    pub fn keeps(&self, success: u8) -> bool {
        match self {
            SuccessFilter::Any => true,
            SuccessFilter::SuccessOnly => success == 1,
            SuccessFilter::FailureOnly => success == 0,
        }
    }
}

impl FromStr for SuccessFilter {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "any" => Ok(SuccessFilter::Any),
            "success-only" | "success" => Ok(SuccessFilter::SuccessOnly),
            "failure-only" | "failure" => Ok(SuccessFilter::FailureOnly),
            other => Err(HarnessError::Config(format!("unknown success filter `{other}`"))),
        }
    }
}

/// Index field quota keys are matched against.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MixKey {
    #[default]
    Env,
    Agent,
    Source,
}

impl MixKey {
    fn of<'a>(&self, e: &'a IndexEntry) -> &'a str {
        match self {
            MixKey::Env => &e.env_id,
            MixKey::Agent => &e.agent_id,
            MixKey::Source => e.source.as_str(),
        }
    }
}

impl FromStr for MixKey {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "env" => Ok(MixKey::Env),
            "agent" => Ok(MixKey::Agent),
            "source" => Ok(MixKey::Source),
            other => Err(HarnessError::Config(format!("unknown mix key `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MixSpec {
    pub name: String,
    pub key: MixKey,
    pub quotas: BTreeMap<String, usize>,
    #[serde(default)]
    pub success_filter: SuccessFilter,
    pub objective: Objective,
    pub seed: u64,
}

impl MixSpec {
    pub fn new(name: &str, key: MixKey, quotas: &[(&str, usize)], objective: Objective, seed: u64) -> Self {
        MixSpec {
            name: name.to_string(),
            key,
            quotas: quotas.iter().map(|(k, n)| (k.to_string(), *n)).collect(),
            success_filter: SuccessFilter::Any,
            objective,
            seed,
        }
    }

    pub fn with_filter(mut self, filter: SuccessFilter) -> Self {
        self.success_filter = filter;
        self
    }

    pub fn total(&self) -> usize {
        self.quotas.values().sum()
    }

    /// Named compositions: `real-1k`, `syn-1k`, `half-half`, `1k+1k`
    /// (successful agent trajectories by source), `mix3` (1K world-model
    /// samples per environment), `mix-agent` (1K per listed agent).
    pub fn preset(name: &str, agents: &[&str], seed: u64) -> Result<MixSpec> {
        let by_source = |quotas: &[(&str, usize)]| {
            MixSpec::new(name, MixKey::Source, quotas, Objective::Agent, seed)
                .with_filter(SuccessFilter::SuccessOnly)
        };
        Ok(match name {
            "real-1k" => by_source(&[("real", 1000)]),
            "syn-1k" => by_source(&[("wm", 1000)]),
            "half-half" => by_source(&[("real", 500), ("wm", 500)]),
            "1k+1k" => by_source(&[("real", 1000), ("wm", 1000)]),
            "mix3" => MixSpec::new(
                name,
                MixKey::Env,
                &[("minihouse", 1000), ("minishop", 1000), ("minihouse-ood", 1000)],
                Objective::Wm,
                seed,
            ),
            "mix-agent" => {
                if agents.is_empty() {
                    return Err(HarnessError::Config("mix-agent needs at least one agent id".into()));
                }
                let quotas: Vec<(&str, usize)> = agents.iter().map(|a| (*a, 1000)).collect();
                MixSpec::new(name, MixKey::Agent, &quotas, Objective::Agent, seed)
            }
            other => return Err(HarnessError::Config(format!("unknown mix preset `{other}`"))),
        })
    }
}

pub const MIX_PRESETS: [&str; 6] = ["real-1k", "syn-1k", "half-half", "1k+1k", "mix3", "mix-agent"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MixManifest {
    pub spec: MixSpec,
    pub total: usize,
    pub counts: BTreeMap<String, usize>,
    /// Data-file digests of the input stores, in input order.
    pub source_digests: Vec<String>,
    pub output_digest: String,
}

fn keyed_rng(seed: u64, key: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(b"wm-harness/dataset/");
    h.update(seed.to_le_bytes());
    h.update(key.as_bytes());
    ChaCha8Rng::from_seed(h.finalize().into())
}

/// Compose a dataset from quota keys. Each key's pool is sorted by
/// trajectory id, sampled without replacement, and the union is shuffled.
/// Any shortfall is an error naming the key.
pub fn mix(stores: &[&TrajectoryStore], spec: &MixSpec, out: &mut dyn Write) -> Result<MixManifest> {
    let mut pools: BTreeMap<&str, Vec<(usize, &IndexEntry)>> =
        spec.quotas.keys().map(|k| (k.as_str(), Vec::new())).collect();
    for (si, store) in stores.iter().enumerate() {
        for e in store.index() {
            if !spec.success_filter.keeps(e.success) {
                continue;
            }
            if let Some(pool) = pools.get_mut(spec.key.of(e)) {
                pool.push((si, e));
            }
        }
    }
    let mut chosen = Vec::with_capacity(spec.total());
    for (key, pool) in pools.iter_mut() {
        let want = spec.quotas[*key];
        if pool.len() < want {
            return Err(HarnessError::Shortfall {
                key: key.to_string(),
                requested: want,
                available: pool.len(),
            });
        }
        pool.sort_by(|a, b| (&a.1.traj_id, a.0).cmp(&(&b.1.traj_id, b.0)));
        pool.shuffle(&mut keyed_rng(spec.seed, key));
        chosen.extend_from_slice(&pool[..want]);
    }
    chosen.shuffle(&mut keyed_rng(spec.seed, "\u{0}order"));

    let mut body = String::new();
    for (si, e) in &chosen {
        let traj = stores[*si].read(e)?;
        body.push_str(&sample_for(&traj, spec.objective)?.to_line());
        body.push('\n');
    }
    out.write_all(body.as_bytes())?;
    Ok(MixManifest {
        spec: spec.clone(),
        total: chosen.len(),
        counts: spec.quotas.clone(),
        source_digests: stores.iter().map(|s| s.digest()).collect::<Result<_>>()?,
        output_digest: sha256_hex(body.as_bytes()),
    })
}

/// Nested subsets of the store for data-scaling sweeps: one seeded
/// permutation, and each size takes its prefix.
pub fn subsample_sweep(store: &TrajectoryStore, sizes: &[usize], seed: u64) -> Result<Vec<Vec<IndexEntry>>> {
    let max = sizes.iter().copied().max().unwrap_or(0);
    if max > store.len() {
        return Err(HarnessError::Shortfall {
            key: "sweep".into(),
            requested: max,
            available: store.len(),
        });
    }
    let mut pool: Vec<&IndexEntry> = store.index().iter().collect();
    pool.sort_by(|a, b| a.traj_id.cmp(&b.traj_id));
    pool.shuffle(&mut keyed_rng(seed, "sweep"));
    Ok(sizes
        .iter()
        .map(|&n| pool[..n].iter().map(|e| (*e).clone()).collect())
        .collect())
}
