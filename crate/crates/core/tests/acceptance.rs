//! Acceptance gate. Runs every criterion, prints one PASS/FAIL line each,
//! and exits non-zero if any fails.

mod common;

use std::collections::BTreeSet;
use std::panic::{self, AssertUnwindSafe};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use wm_harness::agent::AgentSpec;
use wm_harness::cli::{self, Command};
use wm_harness::config::RunConfig;
use wm_harness::dataset::{
    export_agent_sft, export_wm_sft, mix, MixSpec, SftSample, SuccessFilter, TrajectoryStore,
};
use wm_harness::env::{generate_split, EnvKind, EpisodeConfig, Split};
use wm_harness::gateway::{EndpointConfig, Gateway, GatewayMode, Sampling};
use wm_harness::metrics::{
    aggregate, consistency, exact_match, fidelity, success_rate, word_f1, Cell, ConsistencyReport,
    Truth,
};
use wm_harness::protocol::{Message, Role, Source, Trajectory, Turn};
use wm_harness::rollout::{
    probe_fidelity, probe_fidelity_par, replay_w2r, run_parallel, run_real, run_triple, run_wm,
    ProbeSampling, Regime, RolloutRecord,
};
use wm_harness::verify::{budget_sweep, mistake_scenarios, FeedbackMode};
use wm_harness::wm::{CorruptionMode, CorruptionSpec, WmPrediction, WorldModel};

use common::{Reply, Stub};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn workers() -> usize {
    std::thread::available_parallelism().map_or(2, |n| n.get())
}

fn oracle_closure() -> Outcome {
    let started = Instant::now();
    let oracle = WorldModel::oracle();
    let mut details = Vec::new();
    for kind in EnvKind::ALL {
        let eps = generate_split(kind, 200, Split::TestId).map_err(err)?;
        let run = run_triple(&AgentSpec::scripted(), &oracle, &eps, &BTreeSet::new(), 1).map_err(err)?;
        let report = consistency(&run.real, &run.wm, &run.w2r).map_err(err)?;
        let probes = probe_fidelity(&run.real, &oracle, ProbeSampling::AllSteps).map_err(err)?;
        let fid = fidelity(&probes);
        ensure!(fid.em == 1.0, "{kind}: EM {}", fid.em);
        ensure!(
            report.real_rate == 1.0 && report.wm_rate == 1.0 && report.w2r_rate == 1.0,
            "{kind}: rates {:?}",
            report
        );
        ensure!(report.cr == Some(1.0), "{kind}: CR {:?}", report.cr);
        details.push(format!("{kind} {} probes", fid.probes_total));
    }
    let elapsed = started.elapsed();
    ensure!(elapsed < Duration::from_secs(30), "took {elapsed:.1?}");
    Ok(format!("{}, {elapsed:.1?} single-threaded", details.join(", ")))
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(err)?;
    let base = RunConfig {
        out_dir: dir.path().to_path_buf(),
        episodes: 25,
        wm: Some("noisy-0.25".into()),
        ..RunConfig::default()
    };
    let commands = [Command::EvalConsistency, Command::EvalFidelity];
    let mut compared = 0;
    for cmd in commands {
        let mut manifests = Vec::new();
        for (run_id, w) in [("w1", 1), ("w4", 4), ("w1", 3)] {
            let c = RunConfig {
                run_id: run_id.into(),
                workers: w,
                ..base.clone()
            };
            manifests.push(cli::run(cmd, &c).map_err(err)?);
        }
        ensure!(manifests[2].reused, "{}: rerun was not recognised", cmd.name());
        for m in &manifests[1..] {
            ensure!(
                m.manifest == manifests[0].manifest,
                "{}: manifests differ across worker counts",
                cmd.name()
            );
        }
        compared += manifests[0].manifest.files.len();
    }
    let collect = |run_id: &str, w: usize, agent: &str| {
        let c = RunConfig {
            run_id: run_id.into(),
            workers: w,
            agent: agent.into(),
            wm: None,
            ..base.clone()
        };
        cli::run(Command::Collect, &c).map(|o| o.manifest.files)
    };
    let a = collect("r1", 1, "random").map_err(err)?;
    let b = collect("r2", 4, "random").map_err(err)?;
    ensure!(a == b, "random-agent stores differ across worker counts");
    compared += a.len();
    Ok(format!("{compared} output digests identical across worker counts 1/3/4"))
}

fn noise_calibration() -> Outcome {
    let noisy = WorldModel::noisy(
        "noisy",
        CorruptionSpec::new(0.25, 0, CorruptionMode::TokenSwap).map_err(err)?,
    );
    let mut eps = generate_split(EnvKind::MiniHouse, 300, Split::TestId).map_err(err)?;
    eps.extend(generate_split(EnvKind::MiniShop, 300, Split::TestId).map_err(err)?);
    let agent = AgentSpec::scripted();
    let real = run_parallel(&eps, workers(), |ep| run_real(agent.build(ep)?.as_mut(), ep)).map_err(err)?;
    let probes = probe_fidelity_par(&real, &noisy, ProbeSampling::AllSteps, workers()).map_err(err)?;
    let rep = fidelity(&probes);
    let n = rep.probes_valid as f64;
    let bound = 3.0 * (0.25f64 * 0.75 / n).sqrt();
    ensure!(rep.probes_valid >= 2000, "only {} probes", rep.probes_valid);
    ensure!((rep.em - 0.75).abs() <= bound, "EM {:.4} outside 0.75 ± {bound:.4}", rep.em);
    Ok(format!("EM {:.4} over {} probes (bound ±{bound:.4})", rep.em, rep.probes_valid))
}

/// Reference exact match: fold CRLF, strip surrounding whitespace by hand.
fn ref_em(pred: &str, truth: &str) -> bool {
    fn norm(s: &str) -> Vec<char> {
        let folded: Vec<char> = s.split("\r\n").collect::<Vec<_>>().join("\n").chars().collect();
        let start = folded.iter().position(|c| !c.is_whitespace()).unwrap_or(folded.len());
        let end = folded.iter().rposition(|c| !c.is_whitespace()).map_or(start, |i| i + 1);
        folded[start..end.max(start)].to_vec()
    }
    norm(pred) == norm(truth)
}

/// Reference F1: greedy one-to-one token pairing with a used-flag table.
fn ref_f1(pred: &str, truth: &str) -> f64 {
    let p: Vec<String> = pred.split_whitespace().map(str::to_lowercase).collect();
    let t: Vec<String> = truth.split_whitespace().map(str::to_lowercase).collect();
    if p.is_empty() && t.is_empty() {
        return 1.0;
    }
    if p.is_empty() || t.is_empty() {
        return 0.0;
    }
    let mut used = vec![false; t.len()];
    let mut common = 0.0;
    for tok in &p {
        for (j, u) in used.iter_mut().enumerate() {
            if !*u && t[j] == *tok {
                *u = true;
                common += 1.0;
                break;
            }
        }
    }
    if common == 0.0 {
        return 0.0;
    }
    let precision = common / p.len() as f64;
    let recall = common / t.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

fn metric_oracles() -> Outcome {
    let fixed = [("a b c", "a b d"), ("a a b", "a b b")];
    for (p, t) in fixed {
        let f = word_f1(p, t);
        ensure!((f - 0.6667).abs() < 5e-5, "{p:?}/{t:?} gave {f}");
        ensure!((f - ref_f1(p, t)).abs() < 1e-9, "{p:?}/{t:?} disagrees with reference");
    }
    let vocab = ["a", "b", "c", "The", "the", "drawer", "1", "A", "x.", "x"];
    let gaps = [" ", "  ", "\t", "\n", "\r\n"];
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let text = |rng: &mut ChaCha8Rng| {
        let n = rng.gen_range(0..7);
        let mut s = String::new();
        if rng.gen_bool(0.2) {
            s.push_str(gaps[rng.gen_range(0..gaps.len())]);
        }
        for i in 0..n {
            if i > 0 {
                s.push_str(gaps[rng.gen_range(0..gaps.len())]);
            }
            s.push_str(vocab[rng.gen_range(0..vocab.len())]);
        }
        s
    };
    let mut em_hits = 0;
    for i in 0..100 {
        let pred = text(&mut rng);
        let truth = match i % 4 {
            0 => format!(" {}\r\n", pred.replace('\n', "\r\n").replace("\r\r\n", "\r\n")),
            _ => text(&mut rng),
        };
        let f = word_f1(&pred, &truth);
        let r = ref_f1(&pred, &truth);
        ensure!((f - r).abs() <= 1e-9, "F1 {pred:?}/{truth:?}: {f} vs {r}");
        let em = exact_match(
            &WmPrediction { observation: pred.clone(), reward: 0, terminated: false },
            &Truth { observation: truth.clone(), reward: 0, terminated: false },
        );
        ensure!((em == 1) == ref_em(&pred, &truth), "EM {pred:?}/{truth:?}");
        em_hits += em as usize;
    }
    Ok(format!("100 random pairs agree ({em_hits} exact matches), fixed cases 0.6667"))
}

fn record(seed: u64, regime: Regime, success: u8) -> RolloutRecord {
    let source = if regime == Regime::Wm { Source::Wm } else { Source::Real };
    let wm = (source == Source::Wm).then_some("wm");
    let mut t = Trajectory::new(
        EpisodeConfig::new(EnvKind::MiniHouse, seed, Split::TestId),
        String::new(),
        String::new(),
        source,
        "a",
        wm,
    );
    t.turns.push(Turn {
        thought: String::new(),
        action_raw: "look".into(),
        observation: "done".into(),
        reward: success,
        terminated: true,
    });
    RolloutRecord {
        trajectory: t,
        success,
        regime,
        divergence_step: None,
        paired_wm: None,
        aborted: None,
        gate: Vec::new(),
    }
}

fn table_arithmetic() -> Outcome {
    // 725/1250 = 58.00 %, 718/1250 = 57.44 %.
    let n = 1250u64;
    let real: Vec<_> = (0..n).map(|s| record(s, Regime::Real, u8::from(s < 725))).collect();
    let wm: Vec<_> = (0..n).map(|s| record(s, Regime::Wm, u8::from(s < 700))).collect();
    let w2r: Vec<_> = (0..n).map(|s| record(s, Regime::W2r, u8::from(s < 718))).collect();
    let rep = consistency(&real, &wm, &w2r).map_err(err)?;
    ensure!((success_rate(&real) - 0.58).abs() < 1e-12, "real rate");
    let cr = rep.cr.ok_or("no CR")?;
    ensure!(format!("{cr:.2}") == "0.99", "CR {cr}");

    let rows = [
        ("GPT-4o-mini", 7.69, 7.69, 7.69),
        ("GPT-4o", 58.00, 55.90, 57.44),
        ("GPT-4-turbo", 74.21, 62.56, 64.62),
        ("GPT-4.1", 67.20, 68.56, 69.59),
        ("GPT-5", 91.00, 84.62, 86.67),
        ("Gemini-2.5-flash", 50.50, 51.79, 52.31),
        ("Claude-sonnet-4.5", 82.00, 76.00, 76.00),
    ];
    let cells = rows
        .iter()
        .map(|(agent, r, w, x)| Cell {
            agent: agent.to_string(),
            env: "alfworld".into(),
            wm: "qwen".into(),
            consistency: ConsistencyReport::from_rates(r / 100.0, w / 100.0, x / 100.0, 100),
            fidelity: None,
        })
        .collect();
    let table = aggregate(cells);
    let avg = table.averages.first().ok_or("no average row")?;
    let got = [avg.real_rate * 100.0, avg.wm_rate * 100.0, avg.w2r_rate * 100.0, avg.cr.unwrap_or(f64::NAN)];
    let want = [61.51, 58.16, 59.19, 0.96];
    for (g, w) in got.iter().zip(want) {
        ensure!((g - w).abs() <= 0.01, "average {got:?} vs {want:?}");
    }
    Ok(format!(
        "CR {cr:.4}; average row {:.2} / {:.2} / {:.2} / {:.3}",
        got[0], got[1], got[2], got[3]
    ))
}

fn gate_efficacy() -> Outcome {
    let eps = mistake_scenarios(20, Split::TestId).map_err(err)?;
    ensure!(eps.len() == 20, "{} scenarios", eps.len());
    let agent = AgentSpec::ScriptedBuyFirst { id: "buy-first".into() };
    let budgets = [0, 1, 2, 4, 10, 50];
    let mut lines = Vec::new();
    for mode in [FeedbackMode::Silent, FeedbackMode::CounterfactualNote] {
        let (rows, _) =
            budget_sweep(&agent, &WorldModel::oracle(), &eps, &budgets, mode, workers()).map_err(err)?;
        let rates: Vec<f64> = rows.iter().map(|r| r.success_rate).collect();
        ensure!(rates[0] == 0.0, "{mode}: budget 0 rate {}", rates[0]);
        ensure!(rates[1..].iter().all(|&r| r == 1.0), "{mode}: rates {rates:?}");
        ensure!(rates.windows(2).all(|w| w[0] <= w[1]), "{mode}: not monotone {rates:?}");
        lines.push(format!("{mode} {rates:?}"));
    }
    Ok(lines.join("; "))
}

fn replay_divergence() -> Outcome {
    let agent = AgentSpec::random(11);
    let fixture = (0..200)
        .map(|s| EpisodeConfig::new(EnvKind::MiniHouse, s, Split::Train).with_max_turns(10))
        .find_map(|ep| {
            let rec = run_wm(agent.build(&ep).ok()?.as_mut(), &WorldModel::oracle(), &ep, &BTreeSet::new()).ok()?;
            (rec.trajectory.turns.len() == 10).then_some((ep, rec))
        })
        .ok_or("no 10-step fixture")?;
    let (ep, rec) = fixture;
    let clean = replay_w2r(&rec, &ep).map_err(err)?;
    ensure!(clean.divergence_step.is_none(), "clean replay diverged");
    for j in 1..=10 {
        let mut bad = rec.clone();
        bad.trajectory.turns[j - 1].observation.push_str(" [corrupted]");
        let r = replay_w2r(&bad, &ep).map_err(err)?;
        ensure!(r.divergence_step == Some(j), "step {j}: got {:?}", r.divergence_step);
    }
    Ok(format!("divergence_step = j for j in 1..=10 (seed {})", ep.seed))
}

fn lines_of(buf: &[u8]) -> Vec<&str> {
    std::str::from_utf8(buf).unwrap().lines().collect()
}

fn dataset_exactness() -> Outcome {
    let dir = tempfile::tempdir().map_err(err)?;
    let w = workers();
    let scripted = AgentSpec::scripted();
    let real = |kind, split| -> Result<Vec<Trajectory>, String> {
        let eps = generate_split(kind, 1000, split).map_err(err)?;
        let recs = run_parallel(&eps, w, |ep| run_real(scripted.build(ep)?.as_mut(), ep)).map_err(err)?;
        Ok(recs.into_iter().map(|r| r.trajectory).collect())
    };
    let house = real(EnvKind::MiniHouse, Split::Train)?;
    let shop = real(EnvKind::MiniShop, Split::Train)?;
    let ood = real(EnvKind::MiniHouse, Split::TestOod)?;
    let eps = generate_split(EnvKind::MiniHouse, 1000, Split::Train).map_err(err)?;
    let oracle = WorldModel::oracle();
    let synthetic: Vec<Trajectory> = run_parallel(&eps, w, |ep| {
        run_wm(scripted.build(ep)?.as_mut(), &oracle, ep, &BTreeSet::new())
    })
    .map_err(err)?
    .into_iter()
    .map(|r| r.trajectory)
    .collect();
    let mut randoms = Vec::new();
    for seed in 1..=3u64 {
        let agent = AgentSpec::random(seed);
        let eps: Vec<_> = generate_split(EnvKind::MiniShop, 1000, Split::Train)
            .map_err(err)?
            .into_iter()
            .map(|e| e.with_max_turns(6))
            .collect();
        let recs = run_parallel(&eps, w, |ep| run_real(agent.build(ep)?.as_mut(), ep)).map_err(err)?;
        randoms.extend(recs.into_iter().map(|r| r.trajectory));
    }

    let store = |name: &str, ts: &[Trajectory]| TrajectoryStore::write_all(dir.path().join(name), ts).map_err(err);
    let s_house = store("house", &house)?;
    let s_shop = store("shop", &shop)?;
    let s_ood = store("ood", &ood)?;
    let s_syn = store("syn", &synthetic)?;
    let s_rand = store("rand", &randoms)?;
    let stores = vec![&s_house, &s_shop, &s_ood, &s_syn, &s_rand];

    let mut checks = Vec::new();
    let presets: [(&str, Vec<&str>, usize); 6] = [
        ("mix3", vec![], 3000),
        ("mix-agent", vec!["scripted", "random-1", "random-2", "random-3"], 4000),
        ("real-1k", vec![], 1000),
        ("syn-1k", vec![], 1000),
        ("half-half", vec![], 1000),
        ("1k+1k", vec![], 2000),
    ];
    for (name, agents, expected) in presets {
        let spec = MixSpec::preset(name, &agents, 17).map_err(err)?;
        let mut a = Vec::new();
        let ma = mix(&stores, &spec, &mut a).map_err(err)?;
        let mut b = Vec::new();
        let mb = mix(&stores, &spec, &mut b).map_err(err)?;
        let lines = lines_of(&a);
        ensure!(lines.len() == expected && ma.total == expected, "{name}: {} samples", lines.len());
        ensure!(ma.output_digest == mb.output_digest && a == b, "{name}: digest not reproducible");
        let mut per_key = std::collections::BTreeMap::<String, usize>::new();
        for l in &lines {
            let s = SftSample::from_line(l).map_err(err)?;
            ensure!(s.to_line() == *l, "{name}: sample does not round-trip");
            let key = match spec.key {
                wm_harness::dataset::MixKey::Env => s.env_id.clone(),
                wm_harness::dataset::MixKey::Agent => s.agent_id.clone(),
                wm_harness::dataset::MixKey::Source => s.traj_id.split(':').next().unwrap().to_string(),
            };
            *per_key.entry(key).or_default() += 1;
        }
        ensure!(per_key == spec.quotas, "{name}: per-key counts {per_key:?}");
        checks.push(format!("{name}={expected}"));
    }

    // Unique-token scan: every thought carries a token that must not leak.
    let mut tagged = house[..300].to_vec();
    let mut tokens = Vec::new();
    for (i, t) in tagged.iter_mut().enumerate() {
        for (k, turn) in t.turns.iter_mut().enumerate() {
            let tok = format!("qzv{i}x{k}vzq");
            turn.thought = format!("{} {tok}", turn.thought);
            tokens.push(tok);
        }
    }
    let mut wm_out = Vec::new();
    export_wm_sft(&tagged, SuccessFilter::Any, &mut wm_out).map_err(err)?;
    let wm_text = std::str::from_utf8(&wm_out).map_err(err)?;
    let leaked = tokens.iter().filter(|t| wm_text.contains(t.as_str())).count();
    ensure!(leaked == 0, "{leaked} thought tokens leaked into WM-SFT");
    let mut agent_out = Vec::new();
    export_agent_sft(&tagged, SuccessFilter::Any, &mut agent_out).map_err(err)?;
    let agent_text = std::str::from_utf8(&agent_out).map_err(err)?;
    ensure!(tokens.iter().all(|t| agent_text.contains(t.as_str())), "scan misses agent thoughts");
    for out in [&wm_out, &agent_out] {
        let mut again = String::new();
        for l in lines_of(out) {
            again.push_str(&SftSample::from_line(l).map_err(err)?.to_line());
            again.push('\n');
        }
        ensure!(again.as_bytes() == out.as_slice(), "export does not round-trip");
    }
    Ok(format!("{}; {} thought tokens, 0 leaked", checks.join(" "), tokens.len()))
}

fn endpoint(base_url: &str, max_retries: u32, max_in_flight: usize) -> EndpointConfig {
    EndpointConfig {
        name: "stub".into(),
        base_url: base_url.into(),
        api_key_env_var: "WM_HARNESS_ACCEPTANCE_KEY".into(),
        model: "stub-model".into(),
        timeout_secs: 10.0,
        max_retries,
        max_in_flight,
        backoff_base_ms: 1,
        backoff_max_ms: 5,
    }
}

fn gateway_discipline() -> Outcome {
    let msgs = [Message::new(Role::User, "hello")];
    let sampling = Sampling::default();
    let live = GatewayMode::Live { transcript: None };

    let stub = Stub::start(vec![Reply::status(500), Reply::status(500)], Reply::ok("fine"), Duration::ZERO);
    let gw = Gateway::new(endpoint(&stub.base_url, 3, 2), live.clone()).map_err(err)?;
    let text = gw.complete(&msgs, &sampling).map_err(err)?;
    ensure!(text == "fine" && stub.requests() == 3, "2x500 then 200: {text:?}, {} requests", stub.requests());

    let stub = Stub::start(vec![], Reply::status(401), Duration::ZERO);
    let gw = Gateway::new(endpoint(&stub.base_url, 3, 2), live.clone()).map_err(err)?;
    ensure!(gw.complete(&msgs, &sampling).is_err(), "401 succeeded");
    ensure!(stub.requests() == 1, "401 retried: {} requests", stub.requests());

    let bound = 3;
    let stub = Stub::start(vec![], Reply::ok("ok"), Duration::from_millis(40));
    let gw = Arc::new(Gateway::new(endpoint(&stub.base_url, 0, bound), live).map_err(err)?);
    std::thread::scope(|s| {
        for i in 0..12 {
            let gw = gw.clone();
            s.spawn(move || gw.complete(&[Message::new(Role::User, format!("q{i}"))], &Sampling::default()));
        }
    });
    ensure!(stub.max_in_flight() <= bound, "observed {} in flight", stub.max_in_flight());
    ensure!(stub.requests() == 12, "{} requests", stub.requests());
    let observed = stub.max_in_flight();

    // Record a remote world-model rollout, then replay it offline.
    let dir = tempfile::tempdir().map_err(err)?;
    let transcript = dir.path().join("t.jsonl");
    let stub = Stub::start(vec![], Reply::ok("Nothing happens."), Duration::ZERO);
    let remote = |mode| -> Result<WorldModel, String> {
        let gw = Arc::new(Gateway::new(endpoint(&stub.base_url, 1, 2), mode).map_err(err)?);
        Ok(WorldModel {
            id: "remote".into(),
            kind: wm_harness::wm::WmKind::Remote(wm_harness::wm::RemoteWm { gateway: gw, sampling }),
        })
    };
    let ep = EpisodeConfig::new(EnvKind::MiniHouse, 3, Split::TestId).with_max_turns(8);
    let recorded_wm = remote(GatewayMode::Live { transcript: Some(transcript.clone()) })?;
    let a = run_wm(AgentSpec::scripted().build(&ep).map_err(err)?.as_mut(), &recorded_wm, &ep, &BTreeSet::new())
        .map_err(err)?;
    let live_requests = stub.requests();
    let replay_wm = remote(GatewayMode::Replay { transcript })?;
    let b = run_wm(AgentSpec::scripted().build(&ep).map_err(err)?.as_mut(), &replay_wm, &ep, &BTreeSet::new())
        .map_err(err)?;
    let wm_harness::wm::WmKind::Remote(r) = &replay_wm.kind else { unreachable!() };
    ensure!(a == b, "replayed rollout differs");
    ensure!(r.gateway.network_calls() == 0, "replay made {} calls", r.gateway.network_calls());
    ensure!(stub.requests() == live_requests, "stub contacted during replay");
    Ok(format!(
        "retry 3 requests, 401 once, max in flight {observed}/{bound}, replay of {live_requests} calls offline"
    ))
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 9] = [
        ("oracle closure", oracle_closure),
        ("determinism", determinism),
        ("noise calibration", noise_calibration),
        ("metric-oracle equivalence", metric_oracles),
        ("reference-table arithmetic", table_arithmetic),
        ("gate efficacy", gate_efficacy),
        ("replay divergence detection", replay_divergence),
        ("dataset exactness", dataset_exactness),
        ("gateway discipline", gateway_discipline),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|p| name.contains(p.as_str())) {
            continue;
        }
        let started = Instant::now();
        let result = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = started.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS criterion {}: {name} ({detail}) [{secs:.1}s]", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL criterion {}: {name} ({why}) [{secs:.1}s]", i + 1);
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
