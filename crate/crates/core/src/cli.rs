//! Command-line surface: argument parsing, config resolution, and the
//! command implementations behind the `wm-harness` binary.
//!
//! Each command writes into `<out_dir>/<run_id>/<command>/` together with a
//! `manifest.json` holding the config digest and a SHA-256 per output file.
//! Rerunning with the same run id recomputes the outputs and checks them
//! against the recorded manifest instead of overwriting.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::{AgentKind, EndpointMode, Registry, RunConfig};
use crate::dataset::{
    export_early_experience, file_digest, mix, sample_for, subsample_sweep, MixSpec, Objective,
    TrajectoryStore,
};
use crate::env::{rules, EnvKind, Split, Verb};
use crate::error::{HarnessError, Result};
use crate::metrics::{aggregate, consistency, fidelity, Cell};
use crate::protocol::{env_id, Trajectory};
use crate::rollout::{
    probe_fidelity_par, run_parallel, run_real, run_triple, run_wm, ProbeSampling, RolloutRecord,
};
use crate::verify::{budget_sweep, mistake_scenarios};

#[derive(Debug, Parser)]
#[command(name = "wm-harness", version, about = "World-model rollout, evaluation, and dataset harness")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub flags: Flags,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Roll out an agent and store its trajectories.
    Collect,
    /// Prefix-conditioned next-state fidelity of a world model.
    EvalFidelity,
    /// Real, WM, and W2R success rates and the consistency ratio.
    EvalConsistency,
    /// Verification-gate budget sweep.
    Verify,
    /// Export SFT datasets from trajectory stores.
    Export,
    /// Quota-driven dataset composition.
    Mix,
    /// Rerun a command with endpoints served from recorded transcripts.
    Replay {
        #[arg(value_enum)]
        target: ReplayTarget,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReplayTarget {
    Collect,
    EvalFidelity,
    EvalConsistency,
    Verify,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Collect => "collect",
            Command::EvalFidelity => "eval-fidelity",
            Command::EvalConsistency => "eval-consistency",
            Command::Verify => "verify",
            Command::Export => "export",
            Command::Mix => "mix",
            Command::Replay { .. } => "replay",
        }
    }
}

impl From<ReplayTarget> for Command {
    fn from(t: ReplayTarget) -> Self {
        match t {
            ReplayTarget::Collect => Command::Collect,
            ReplayTarget::EvalFidelity => Command::EvalFidelity,
            ReplayTarget::EvalConsistency => Command::EvalConsistency,
            ReplayTarget::Verify => Command::Verify,
        }
    }
}

/// Overrides applied on top of the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct Flags {
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub run_id: Option<String>,
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[arg(long, global = true)]
    pub split: Option<String>,
    /// Comma-separated environments.
    #[arg(long, global = true, value_delimiter = ',')]
    pub envs: Vec<String>,
    #[arg(long, global = true)]
    pub episodes: Option<usize>,
    #[arg(long, global = true)]
    pub max_turns: Option<u32>,
    #[arg(long, global = true)]
    pub agent: Option<String>,
    #[arg(long, global = true)]
    pub wm: Option<String>,
    /// Comma-separated gate budgets.
    #[arg(long, global = true, value_delimiter = ',')]
    pub budget: Vec<u32>,
    #[arg(long, global = true)]
    pub feedback: Option<String>,
    /// Comma-separated verbs answered by the real environment during WM rollouts.
    #[arg(long, global = true, value_delimiter = ',')]
    pub grounding: Vec<String>,
    /// Comma-separated subsample sizes for `export`.
    #[arg(long, global = true, value_delimiter = ',')]
    pub sizes: Vec<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub max_failure_rate: Option<f64>,
    #[arg(long, global = true)]
    pub probe_k: Option<usize>,
    #[arg(long, global = true)]
    pub objective: Option<String>,
    #[arg(long, global = true)]
    pub filter: Option<String>,
    #[arg(long, global = true)]
    pub preset: Option<String>,
    #[arg(long, global = true)]
    pub warmup: Option<usize>,
    /// Trajectory store to read; repeatable.
    #[arg(long = "input", global = true)]
    pub inputs: Vec<PathBuf>,
    /// Comma-separated agent ids for the `mix-agent` preset.
    #[arg(long, global = true, value_delimiter = ',')]
    pub mix_agents: Vec<String>,
}

impl Flags {
    /// Flags over file over defaults.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        self.apply(&mut c)?;
        c.validate()?;
        Ok(c)
    }

    pub fn apply(&self, c: &mut RunConfig) -> Result<()> {
        if let Some(v) = &self.run_id {
            c.run_id = v.clone();
        }
        if let Some(v) = &self.out_dir {
            c.out_dir = v.clone();
        }
        if let Some(v) = self.workers {
            c.workers = v;
        }
        if let Some(v) = &self.split {
            c.split = v.parse::<Split>()?;
        }
        if !self.envs.is_empty() {
            c.envs = self.envs.iter().map(|e| e.parse::<EnvKind>()).collect::<Result<_>>()?;
        }
        if let Some(v) = self.episodes {
            c.episodes = v;
        }
        if let Some(v) = self.max_turns {
            c.max_turns = v;
        }
        if let Some(v) = &self.agent {
            c.agent = v.clone();
        }
        if let Some(v) = &self.wm {
            c.wm = Some(v.clone());
        }
        if !self.budget.is_empty() {
            c.budgets = self.budget.clone();
        }
        if let Some(v) = &self.feedback {
            c.feedback_mode = v.parse()?;
        }
        if !self.grounding.is_empty() {
            c.grounding = self
                .grounding
                .iter()
                .map(|g| {
                    Verb::from_name(g).ok_or_else(|| HarnessError::Config(format!("unknown verb {g:?}")))
                })
                .collect::<Result<_>>()?;
        }
        if !self.sizes.is_empty() {
            c.sizes = self.sizes.clone();
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = self.max_failure_rate {
            c.max_failure_rate = v;
        }
        if let Some(v) = self.probe_k {
            c.probe_k = Some(v);
        }
        if let Some(v) = &self.objective {
            c.objective = v.parse()?;
        }
        if let Some(v) = &self.filter {
            c.success_filter = v.parse()?;
        }
        if let Some(v) = &self.preset {
            c.preset = Some(v.clone());
        }
        if let Some(v) = self.warmup {
            c.warmup = Some(v);
        }
        if !self.inputs.is_empty() {
            c.inputs = self.inputs.clone();
        }
        if !self.mix_agents.is_empty() {
            c.mix_agents = self.mix_agents.clone();
        }
        Ok(())
    }
}

/// Recorded alongside every command's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub config_digest: String,
    pub rules_version: String,
    /// Output file name to SHA-256.
    pub files: BTreeMap<String, String>,
    pub summary: Value,
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub dir: PathBuf,
    pub manifest: Manifest,
    /// The outputs already existed and matched.
    pub reused: bool,
    pub network_calls: u64,
}

struct Produced {
    summary: Value,
    /// (failed, total) units of work for the failure-rate threshold.
    failures: (usize, usize),
}

/// Run `command`; `Replay` reruns its target against recorded transcripts
/// and requires matching recorded outputs.
pub fn run(command: Command, config: &RunConfig) -> Result<Outcome> {
    match command {
        Command::Replay { target } => execute(target.into(), config, EndpointMode::Replay),
        c => execute(c, config, EndpointMode::Live),
    }
}

fn execute(command: Command, config: &RunConfig, mode: EndpointMode) -> Result<Outcome> {
    config.validate()?;
    let registry = Registry::build(config, mode)?;
    let run_dir = config.run_dir();
    let final_dir = run_dir.join(command.name());
    let stage = run_dir.join(format!(".staging-{}-{}", command.name(), std::process::id()));
    if stage.exists() {
        fs::remove_dir_all(&stage)?;
    }
    fs::create_dir_all(&stage)?;

    let produced = match produce(command, config, &registry, &stage) {
        Ok(p) => p,
        Err(e) => {
            let _ = fs::remove_dir_all(&stage);
            return Err(e);
        }
    };
    let manifest = Manifest {
        command: command.name().to_string(),
        config_digest: config.digest(),
        rules_version: rules().version.clone(),
        files: digest_dir(&stage)?,
        summary: produced.summary,
    };

    let manifest_path = final_dir.join("manifest.json");
    let reused = if manifest_path.exists() {
        fs::remove_dir_all(&stage)?;
        let recorded: Manifest = serde_json::from_str(&fs::read_to_string(&manifest_path)?)?;
        if recorded.config_digest != manifest.config_digest {
            return Err(HarnessError::Mismatch(format!(
                "{} was produced by a different config; use a new run id",
                final_dir.display()
            )));
        }
        if digest_dir(&final_dir)? != recorded.files {
            return Err(HarnessError::Mismatch(format!(
                "files in {} no longer match their manifest",
                final_dir.display()
            )));
        }
        if recorded.files != manifest.files {
            let differing: Vec<&str> = manifest
                .files
                .iter()
                .filter(|(k, v)| recorded.files.get(*k) != Some(v))
                .map(|(k, _)| k.as_str())
                .chain(recorded.files.keys().filter(|k| !manifest.files.contains_key(*k)).map(String::as_str))
                .collect();
            return Err(HarnessError::Mismatch(format!(
                "rerun of {} differs in {}",
                final_dir.display(),
                differing.join(", ")
            )));
        }
        true
    } else if mode == EndpointMode::Replay {
        fs::remove_dir_all(&stage)?;
        return Err(HarnessError::Input(format!(
            "nothing recorded at {} to replay against",
            final_dir.display()
        )));
    } else {
        fs::write(
            stage.join("manifest.json"),
            serde_json::to_string_pretty(&manifest)? + "\n",
        )?;
        if final_dir.exists() {
            fs::remove_dir_all(&final_dir)?;
        }
        fs::rename(&stage, &final_dir)?;
        false
    };

    let (failed, total) = produced.failures;
    if total > 0 && failed as f64 / total as f64 > config.max_failure_rate {
        return Err(HarnessError::Transport {
            attempts: 0,
            message: format!(
                "{failed} of {total} units failed, above the {} threshold; outputs in {}",
                config.max_failure_rate,
                final_dir.display()
            ),
        });
    }
    Ok(Outcome {
        dir: final_dir,
        manifest,
        reused,
        network_calls: registry.network_calls(),
    })
}

fn digest_dir(dir: &Path) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir)? {
        let entry = entry?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if entry.file_type()?.is_file() && name != "manifest.json" {
            out.insert(name, file_digest(&entry.path())?);
        }
    }
    Ok(out)
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut body = String::new();
    for r in rows {
        body.push_str(&serde_json::to_string(r)?);
        body.push('\n');
    }
    fs::write(path, body)?;
    Ok(())
}

fn aborted(records: &[RolloutRecord]) -> usize {
    records.iter().filter(|r| r.aborted.is_some()).count()
}

fn wm_id(config: &RunConfig) -> &str {
    config.wm.as_deref().unwrap_or("oracle")
}

fn produce(command: Command, config: &RunConfig, reg: &Registry, stage: &Path) -> Result<Produced> {
    match command {
        Command::Collect => collect(config, reg, stage),
        Command::EvalFidelity => eval_fidelity(config, reg, stage),
        Command::EvalConsistency => eval_consistency(config, reg, stage),
        Command::Verify => verify(config, reg, stage),
        Command::Export => export(config, stage),
        Command::Mix => mix_cmd(config, stage),
        Command::Replay { .. } => Err(HarnessError::Config("replay cannot target replay".into())),
    }
}

fn collect(config: &RunConfig, reg: &Registry, stage: &Path) -> Result<Produced> {
    let agent = reg.agent(&config.agent)?;
    let episodes = config.episode_list()?;
    let grounding = config.grounding_set();
    let wm = config.wm.as_deref().map(|id| reg.wm(id)).transpose()?;
    let records = run_parallel(&episodes, config.workers, |ep| {
        let mut a = agent.build(ep)?;
        match wm {
            Some(wm) => run_wm(a.as_mut(), wm, ep, &grounding),
            None => run_real(a.as_mut(), ep),
        }
    })?;
    let kept: Vec<Trajectory> = records
        .iter()
        .filter(|r| r.aborted.is_none())
        .map(|r| r.trajectory.clone())
        .collect();
    let store = TrajectoryStore::write_all(stage.join("trajectories.jsonl"), &kept)?;
    let successes = kept.iter().filter(|t| t.success() == 1).count();
    Ok(Produced {
        summary: json!({
            "agent": config.agent,
            "source": if wm.is_some() { "wm" } else { "real" },
            "wm": config.wm,
            "episodes": records.len(),
            "stored": store.len(),
            "aborted": aborted(&records),
            "successes": successes,
            "store_digest": store.digest()?,
        }),
        failures: (aborted(&records), records.len()),
    })
}

fn eval_fidelity(config: &RunConfig, reg: &Registry, stage: &Path) -> Result<Produced> {
    let agent = reg.agent(&config.agent)?;
    let wm = reg.wm(wm_id(config))?;
    let episodes = config.episode_list()?;
    let real = run_parallel(&episodes, config.workers, |ep| run_real(agent.build(ep)?.as_mut(), ep))?;
    let sampling = match config.probe_k {
        Some(k) => ProbeSampling::PerTrajK { k, seed: config.seed },
        None => ProbeSampling::AllSteps,
    };
    let probes = probe_fidelity_par(&real, wm, sampling, config.workers)?;
    let report = fidelity(&probes);
    fs::write(stage.join("fidelity.csv"), report.to_csv()?)?;
    fs::write(stage.join("fidelity.txt"), report.to_text())?;
    write_jsonl(&stage.join("probes.jsonl"), &probes)?;
    Ok(Produced {
        summary: json!({
            "agent": config.agent,
            "wm": wm.id,
            "probes_total": report.probes_total,
            "probes_valid": report.probes_valid,
            "em": report.em,
            "f1_mean": report.f1_mean,
        }),
        failures: (report.probes_total - report.probes_valid, report.probes_total),
    })
}

fn eval_consistency(config: &RunConfig, reg: &Registry, stage: &Path) -> Result<Produced> {
    let agent = reg.agent(&config.agent)?;
    let wm = reg.wm(wm_id(config))?;
    let grounding = config.grounding_set();
    let mut cells = Vec::new();
    let (mut real_all, mut wm_all, mut w2r_all) = (Vec::new(), Vec::new(), Vec::new());
    for &kind in &config.envs {
        let episodes: Vec<_> = config
            .episode_list()?
            .into_iter()
            .filter(|e| e.env_kind == kind)
            .collect();
        let run = run_triple(agent, wm, &episodes, &grounding, config.workers)?;
        cells.push(Cell {
            agent: agent.id().to_string(),
            env: env_id(kind, config.split),
            wm: wm.id.clone(),
            consistency: consistency(&run.real, &run.wm, &run.w2r)?,
            fidelity: None,
        });
        real_all.extend(run.real);
        wm_all.extend(run.wm);
        w2r_all.extend(run.w2r);
    }
    let table = aggregate(cells);
    fs::write(stage.join("report.csv"), table.to_csv()?)?;
    fs::write(stage.join("report.txt"), table.to_text())?;
    write_jsonl(&stage.join("real.jsonl"), &real_all)?;
    write_jsonl(&stage.join("wm.jsonl"), &wm_all)?;
    write_jsonl(&stage.join("w2r.jsonl"), &w2r_all)?;
    let failed = real_all
        .iter()
        .zip(&wm_all)
        .zip(&w2r_all)
        .filter(|((a, b), c)| a.aborted.is_some() || b.aborted.is_some() || c.aborted.is_some())
        .count();
    Ok(Produced {
        summary: serde_json::to_value(&table)?,
        failures: (failed, real_all.len()),
    })
}

fn verify(config: &RunConfig, reg: &Registry, stage: &Path) -> Result<Produced> {
    let agent = reg.agent(&config.agent)?;
    let wm = reg.wm(wm_id(config))?;
    let episodes = if config.agent_kind(&config.agent)? == AgentKind::ScriptedBuyFirst {
        mistake_scenarios(config.episodes, config.split)?
            .into_iter()
            .map(|e| e.with_max_turns(config.max_turns))
            .collect()
    } else {
        config.episode_list()?
    };
    let (rows, records) = budget_sweep(
        agent,
        wm,
        &episodes,
        &config.budgets,
        config.feedback_mode,
        config.workers,
    )?;
    let mut csv = csv::Writer::from_writer(Vec::new());
    csv.write_record(["budget", "success_rate", "episodes", "aborted", "attempts_total"])
        .map_err(csv_err)?;
    for r in &rows {
        csv.write_record([
            r.budget.to_string(),
            format!("{:.6}", r.success_rate),
            r.episodes.to_string(),
            r.aborted.to_string(),
            r.attempts_total.to_string(),
        ])
        .map_err(csv_err)?;
    }
    fs::write(stage.join("budgets.csv"), csv.into_inner().map_err(|e| csv_err(e.into_error()))?)?;
    for (row, recs) in rows.iter().zip(&records) {
        write_jsonl(&stage.join(format!("records-b{}.jsonl", row.budget)), recs)?;
    }
    let failed: usize = rows.iter().map(|r| r.aborted).sum();
    let total: usize = rows.iter().map(|r| r.episodes).sum();
    Ok(Produced {
        summary: json!({
            "agent": config.agent,
            "wm": wm.id,
            "feedback_mode": config.feedback_mode.to_string(),
            "rows": rows,
        }),
        failures: (failed, total),
    })
}

fn csv_err(e: impl std::fmt::Display) -> HarnessError {
    HarnessError::Input(format!("csv: {e}"))
}

fn input_stores(config: &RunConfig) -> Result<Vec<TrajectoryStore>> {
    let paths = if config.inputs.is_empty() {
        vec![config.run_dir().join("collect").join("trajectories.jsonl")]
    } else {
        config.inputs.clone()
    };
    paths
        .iter()
        .map(|p| {
            if !p.exists() {
                return Err(HarnessError::Config(format!("input store {} not found", p.display())));
            }
            TrajectoryStore::open(p)
        })
        .collect()
}

fn export(config: &RunConfig, stage: &Path) -> Result<Produced> {
    let stores = input_stores(config)?;
    let refs: Vec<&TrajectoryStore> = stores.iter().collect();
    if let Some(name) = &config.preset {
        let agents: Vec<&str> = config.mix_agents.iter().map(String::as_str).collect();
        let spec = MixSpec::preset(name, &agents, config.seed)?;
        let mut out = Vec::new();
        let manifest = mix(&refs, &spec, &mut out)?;
        fs::write(stage.join("dataset.jsonl"), out)?;
        return Ok(Produced {
            summary: serde_json::to_value(&manifest)?,
            failures: (0, 0),
        });
    }
    let mut trajectories = Vec::new();
    for s in &stores {
        trajectories.extend(s.read_all()?);
    }
    if let Some(count) = config.warmup {
        let mut out = Vec::new();
        export_early_experience(&trajectories, count, config.seed, &mut out)?;
        fs::write(stage.join("warmup.jsonl"), out)?;
        return Ok(Produced {
            summary: json!({ "objective": "wm", "purpose": "warmup", "written": count }),
            failures: (0, 0),
        });
    }
    let mut out = Vec::new();
    let stats = match config.objective {
        Objective::Wm => crate::dataset::export_wm_sft(&trajectories, config.success_filter, &mut out)?,
        Objective::Agent => crate::dataset::export_agent_sft(&trajectories, config.success_filter, &mut out)?,
    };
    fs::write(stage.join("dataset.jsonl"), out)?;
    let mut sweeps = BTreeMap::new();
    if !config.sizes.is_empty() {
        let [store] = refs.as_slice() else {
            return Err(HarnessError::Config("--sizes needs exactly one input store".into()));
        };
        for (n, subset) in config.sizes.iter().zip(subsample_sweep(store, &config.sizes, config.seed)?) {
            let mut body = String::new();
            for e in &subset {
                body.push_str(&sample_for(&store.read(e)?, config.objective)?.to_line());
                body.push('\n');
            }
            fs::write(stage.join(format!("sweep-{n}.jsonl")), body)?;
            sweeps.insert(n.to_string(), subset.len());
        }
    }
    Ok(Produced {
        summary: json!({
            "objective": config.objective.as_str(),
            "success_filter": config.success_filter,
            "written": stats.written,
            "skipped": stats.skipped,
            "sweeps": sweeps,
        }),
        failures: (0, 0),
    })
}

fn mix_cmd(config: &RunConfig, stage: &Path) -> Result<Produced> {
    let stores = input_stores(config)?;
    let refs: Vec<&TrajectoryStore> = stores.iter().collect();
    let spec = match &config.preset {
        Some(name) => {
            let agents: Vec<&str> = config.mix_agents.iter().map(String::as_str).collect();
            MixSpec::preset(name, &agents, config.seed)?
        }
        None => MixSpec {
            name: "custom".into(),
            key: config.mix.key,
            quotas: config.mix.quotas.clone(),
            success_filter: config.success_filter,
            objective: config.objective,
            seed: config.seed,
        },
    };
    let mut out = Vec::new();
    let manifest = mix(&refs, &spec, &mut out)?;
    fs::write(stage.join("mix.jsonl"), out)?;
    Ok(Produced {
        summary: serde_json::to_value(&manifest)?,
        failures: (0, 0),
    })
}

/// Entry point for the binary: parse, run, print the manifest, and map
/// errors to exit codes.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let result = cli.flags.resolve().and_then(|c| run(cli.command, &c));
    match result {
        Ok(o) => {
            let verb = if o.reused { "verified" } else { "wrote" };
            eprintln!("{verb} {}", o.dir.display());
            if matches!(cli.command, Command::Replay { .. }) {
                eprintln!("network calls: {}", o.network_calls);
            }
            println!(
                "{}",
                serde_json::to_string_pretty(&o.manifest).expect("manifest serializes")
            );
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
