//! Real, world-model, and replayed (W2R) rollouts, plus prefix-conditioned
//! fidelity probes.

use std::collections::BTreeSet;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agent::{Agent, AgentSpec};
use crate::env::{self, parse_action, EpisodeConfig, Verb};
use crate::error::{HarnessError, Result};
use crate::metrics::Truth;
use crate::protocol::{Source, Trajectory, Turn};
use crate::verify::GateDecision;
use crate::wm::{WmPrediction, WorldModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Real,
    Wm,
    W2r,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutRecord {
    pub trajectory: Trajectory,
    pub success: u8,
    pub regime: Regime,
    /// 1-based step of the first replayed observation that differs from the
    /// world model's.
    pub divergence_step: Option<usize>,
    /// Id of the world-model trajectory a W2R record replays.
    pub paired_wm: Option<String>,
    /// Infrastructure failure that ended the episode early.
    pub aborted: Option<String>,
    /// Verification-gate decisions, one per gated step.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub gate: Vec<GateDecision>,
}

impl RolloutRecord {
    fn new(trajectory: Trajectory, regime: Regime) -> Self {
        RolloutRecord {
            success: trajectory.success(),
            trajectory,
            regime,
            divergence_step: None,
            paired_wm: None,
            aborted: None,
            gate: Vec::new(),
        }
    }

    fn abort(trajectory: Trajectory, regime: Regime, err: &HarnessError) -> Self {
        let mut r = RolloutRecord::new(trajectory, regime);
        r.success = 0;
        r.aborted = Some(err.to_string());
        r
    }
}

fn start(
    episode: &EpisodeConfig,
    source: Source,
    agent_id: &str,
    wm_id: Option<&str>,
) -> Result<(env::WorldState, env::InitContext, Trajectory)> {
    let (state, _, init) = env::reset(episode)?;
    let traj = Trajectory::new(
        *episode,
        init.user_text.clone(),
        init.hidden_text.clone(),
        source,
        agent_id,
        wm_id,
    );
    Ok((state, init, traj))
}

/// Agent against the real environment.
pub fn run_real(agent: &mut dyn Agent, episode: &EpisodeConfig) -> Result<RolloutRecord> {
    let (mut state, _, mut traj) = start(episode, Source::Real, agent.id(), None)?;
    while !state.terminated {
        let out = match agent.next_turn(&traj, &[]) {
            Ok(o) => o,
            Err(e) if e.is_transport() => return Ok(RolloutRecord::abort(traj, Regime::Real, &e)),
            Err(e) => return Err(e),
        };
        let (next, obs) = env::step_raw(&state, &out.action_raw)?;
        traj.turns.push(Turn {
            thought: out.thought,
            action_raw: out.action_raw,
            observation: obs.render(episode.env_kind),
            reward: obs.reward,
            terminated: obs.terminated,
        });
        state = next;
    }
    Ok(RolloutRecord::new(traj, Regime::Real))
}

/// Agent against a world model. Actions whose verb is in `grounding` take
/// their observation from a shadow real environment.
pub fn run_wm(
    agent: &mut dyn Agent,
    wm: &WorldModel,
    episode: &EpisodeConfig,
    grounding: &BTreeSet<Verb>,
) -> Result<RolloutRecord> {
    let (mut shadow, init, mut traj) = start(episode, Source::Wm, agent.id(), Some(&wm.id))?;
    let mut session = wm.open_session(&init, episode)?;
    while !traj.terminated() {
        let out = match agent.next_turn(&traj, &[]) {
            Ok(o) => o,
            Err(e) if e.is_transport() => return Ok(RolloutRecord::abort(traj, Regime::Wm, &e)),
            Err(e) => return Err(e),
        };
        let action = parse_action(&out.action_raw);
        let grounded = !grounding.is_empty()
            && !shadow.terminated
            && action.verb().is_some_and(|v| grounding.contains(&v));
        let pred = if grounded {
            let (_, obs) = env::step(&shadow, &action)?;
            let p = WmPrediction {
                observation: obs.render(episode.env_kind),
                reward: obs.reward,
                terminated: obs.terminated,
            };
            session.feed(&out.action_raw, p.clone())?;
            p
        } else {
            match session.predict_next(&out.action_raw) {
                Ok(p) => p,
                Err(e) if e.is_transport() => {
                    return Ok(RolloutRecord::abort(traj, Regime::Wm, &e))
                }
                Err(e) => return Err(e),
            }
        };
        if !grounding.is_empty() && !shadow.terminated {
            shadow = env::step(&shadow, &action)?.0;
        }
        traj.turns.push(Turn {
            thought: out.thought,
            action_raw: out.action_raw,
            observation: pred.observation,
            reward: pred.reward,
            terminated: pred.terminated,
        });
    }
    Ok(RolloutRecord::new(traj, Regime::Wm))
}

/// Replay the actions of a world-model rollout in the real environment.
pub fn replay_w2r(wm_record: &RolloutRecord, episode: &EpisodeConfig) -> Result<RolloutRecord> {
    if wm_record.regime != Regime::Wm {
        return Err(HarnessError::Input(format!(
            "W2R replay needs a wm record, got {:?}",
            wm_record.regime
        )));
    }
    let src = &wm_record.trajectory;
    let (mut state, _, mut traj) = start(episode, Source::Real, &src.agent_id, None)?;
    let mut divergence = None;
    for (i, wm_turn) in src.turns.iter().enumerate() {
        if state.terminated {
            break;
        }
        let (next, obs) = env::step_raw(&state, &wm_turn.action_raw)?;
        let turn = Turn {
            thought: wm_turn.thought.clone(),
            action_raw: wm_turn.action_raw.clone(),
            observation: obs.render(episode.env_kind),
            reward: obs.reward,
            terminated: obs.terminated,
        };
        if divergence.is_none()
            && (turn.observation != wm_turn.observation
                || turn.reward != wm_turn.reward
                || turn.terminated != wm_turn.terminated)
        {
            divergence = Some(i + 1);
        }
        traj.turns.push(turn);
        state = next;
    }
    let mut rec = RolloutRecord::new(traj, Regime::W2r);
    rec.divergence_step = divergence;
    rec.paired_wm = Some(src.id());
    Ok(rec)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProbeSampling {
    AllSteps,
    /// Up to `k` steps per trajectory, chosen by seed.
    PerTrajK { k: usize, seed: u64 },
}

/// One prefix-conditioned prediction.
///
/// The conditioning is the real trajectory `traj_id` up to step `step - 1`
/// plus `action`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrefixProbe {
    pub traj_id: String,
    pub step: usize,
    pub action: String,
    pub truth: Truth,
    pub prediction: Option<WmPrediction>,
    pub error: Option<String>,
}

fn selected_steps(traj: &Trajectory, sampling: ProbeSampling) -> Vec<usize> {
    let n = traj.turns.len();
    match sampling {
        ProbeSampling::AllSteps => (0..n).collect(),
        ProbeSampling::PerTrajK { k, seed } => {
            let mut h = Sha256::new();
            h.update(seed.to_le_bytes());
            h.update(traj.id().as_bytes());
            let mut rng = ChaCha8Rng::from_seed(h.finalize().into());
            let mut v = sample(&mut rng, n, k.min(n)).into_vec();
            v.sort();
            v
        }
    }
}

fn probe_one(record: &RolloutRecord, wm: &WorldModel, n: usize) -> Result<PrefixProbe> {
    let traj = &record.trajectory;
    let init = env::InitContext {
        hidden_text: traj.init_hidden_text.clone(),
        user_text: traj.init_user_text.clone(),
    };
    let t = &traj.turns[n];
    let mut probe = PrefixProbe {
        traj_id: traj.id(),
        step: n + 1,
        action: t.action_raw.clone(),
        truth: Truth {
            observation: t.observation.clone(),
            reward: t.reward,
            terminated: t.terminated,
        },
        prediction: None,
        error: None,
    };
    let mut session = wm.open_session(&init, &traj.episode)?;
    for prev in &traj.turns[..n] {
        session.feed(
            &prev.action_raw,
            WmPrediction {
                observation: prev.observation.clone(),
                reward: prev.reward,
                terminated: prev.terminated,
            },
        )?;
    }
    match session.predict_next(&t.action_raw) {
        Ok(p) => probe.prediction = Some(p),
        Err(e) if e.is_transport() => probe.error = Some(e.to_string()),
        Err(e) => return Err(e),
    }
    Ok(probe)
}

/// Predict each selected step of each real record from its true prefix.
pub fn probe_fidelity(
    real_records: &[RolloutRecord],
    wm: &WorldModel,
    sampling: ProbeSampling,
) -> Result<Vec<PrefixProbe>> {
    let mut out = Vec::new();
    for r in real_records {
        if r.regime != Regime::Real {
            return Err(HarnessError::Input(format!(
                "fidelity probes need real records; {} is {:?}",
                r.trajectory.id(),
                r.regime
            )));
        }
        if r.aborted.is_some() {
            continue;
        }
        for n in selected_steps(&r.trajectory, sampling) {
            out.push(probe_one(r, wm, n)?);
        }
    }
    Ok(out)
}

/// Parallel [`probe_fidelity`]; output order matches the sequential version.
pub fn probe_fidelity_par(
    real_records: &[RolloutRecord],
    wm: &WorldModel,
    sampling: ProbeSampling,
    workers: usize,
) -> Result<Vec<PrefixProbe>> {
    let chunks = pool(workers)?.install(|| {
        real_records
            .par_iter()
            .map(|r| probe_fidelity(std::slice::from_ref(r), wm, sampling))
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(chunks.into_iter().flatten().collect())
}

pub(crate) fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| HarnessError::Config(format!("worker pool: {e}")))
}

/// Run `f` over `episodes` on `workers` threads; results come back sorted
/// by (environment, split, seed).
pub fn run_parallel<T, F>(episodes: &[EpisodeConfig], workers: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(&EpisodeConfig) -> Result<T> + Sync,
{
    let mut sorted = episodes.to_vec();
    sorted.sort_by_key(|e| (e.env_kind, e.split, e.seed));
    pool(workers)?.install(|| sorted.par_iter().map(&f).collect())
}

/// Real, WM, and W2R records for one agent and world model over `episodes`.
pub struct TripleRun {
    pub real: Vec<RolloutRecord>,
    pub wm: Vec<RolloutRecord>,
    pub w2r: Vec<RolloutRecord>,
}

pub fn run_triple(
    agent: &AgentSpec,
    wm: &WorldModel,
    episodes: &[EpisodeConfig],
    grounding: &BTreeSet<Verb>,
    workers: usize,
) -> Result<TripleRun> {
    let rows = run_parallel(episodes, workers, |ep| {
        let real = run_real(agent.build(ep)?.as_mut(), ep)?;
        let wm_rec = run_wm(agent.build(ep)?.as_mut(), wm, ep, grounding)?;
        let w2r = if wm_rec.aborted.is_some() {
            let mut r = RolloutRecord::new(
                Trajectory::new(*ep, String::new(), String::new(), Source::Real, agent.id(), None),
                Regime::W2r,
            );
            r.aborted = wm_rec.aborted.clone();
            r.paired_wm = Some(wm_rec.trajectory.id());
            r
        } else {
            replay_w2r(&wm_rec, ep)?
        };
        Ok((real, wm_rec, w2r))
    })?;
    let mut out = TripleRun {
        real: Vec::new(),
        wm: Vec::new(),
        w2r: Vec::new(),
    };
    for (r, w, x) in rows {
        out.real.push(r);
        out.wm.push(w);
        out.w2r.push(x);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::{solve, ScriptedAgent};
    use crate::env::{EnvKind, Split};
    use crate::wm::{CorruptionMode, CorruptionSpec};

    fn scripted(ep: &EpisodeConfig) -> ScriptedAgent {
        ScriptedAgent::new("scripted", *ep, solve(ep).unwrap())
    }

    #[test]
    fn oracle_triple_equality() {
        for kind in EnvKind::ALL {
            for seed in 0..15 {
                let ep = EpisodeConfig::new(kind, seed, Split::Train);
                let real = run_real(&mut scripted(&ep), &ep).unwrap();
                let wm = run_wm(&mut scripted(&ep), &WorldModel::oracle(), &ep, &BTreeSet::new())
                    .unwrap();
                let w2r = replay_w2r(&wm, &ep).unwrap();
                assert_eq!(real.success, 1);
                assert_eq!(real.trajectory.turns, wm.trajectory.turns);
                assert_eq!(real.trajectory.turns, w2r.trajectory.turns);
                assert_eq!(w2r.divergence_step, None);
                assert_eq!(w2r.success, 1);
            }
        }
    }

    #[test]
    fn turn_limit_episode_has_fifty_turns_and_fails() {
        let ep = EpisodeConfig::new(EnvKind::MiniHouse, 3, Split::Train);
        let mut agent = ScriptedAgent::new(
            "idle",
            ep,
            crate::agent::ScriptedPolicy {
                plan: vec![],
                mistake_schedule: Default::default(),
            },
        );
        let r = run_real(&mut agent, &ep).unwrap();
        assert_eq!(r.success, 0);
        assert_eq!(r.trajectory.turns.len(), 50);
    }

    #[test]
    fn grounded_search_matches_the_real_environment() {
        let noisy = WorldModel::noisy(
            "noisy",
            CorruptionSpec::new(1.0, 2, CorruptionMode::TokenSwap).unwrap(),
        );
        let grounding = BTreeSet::from([Verb::Search]);
        for seed in 0..10 {
            let ep = EpisodeConfig::new(EnvKind::MiniShop, seed, Split::Train);
            let wm = run_wm(&mut scripted(&ep), &noisy, &ep, &grounding).unwrap();
            let real = run_real(&mut scripted(&ep), &ep).unwrap();
            for (w, r) in wm.trajectory.turns.iter().zip(&real.trajectory.turns) {
                if w.action_raw.starts_with("search[") {
                    assert_eq!(w.observation, r.observation);
                } else {
                    assert_ne!(w.observation, r.observation);
                }
            }
        }
    }

    #[test]
    fn replay_stops_when_the_real_env_terminates() {
        let ep = EpisodeConfig::new(EnvKind::MiniHouse, 5, Split::Train);
        let mut wm = run_wm(&mut scripted(&ep), &WorldModel::oracle(), &ep, &BTreeSet::new())
            .unwrap();
        let k = wm.trajectory.turns.len();
        let last = wm.trajectory.turns.last_mut().unwrap();
        last.terminated = false;
        last.reward = 0;
        wm.trajectory.turns.push(Turn {
            thought: String::new(),
            action_raw: "look".into(),
            observation: "x".into(),
            reward: 0,
            terminated: true,
        });
        let r = replay_w2r(&wm, &ep).unwrap();
        assert_eq!(r.trajectory.turns.len(), k);
        assert_eq!(r.divergence_step, Some(k));
    }

    #[test]
    fn all_steps_probes_one_per_turn_and_oracle_is_exact() {
        let ep = EpisodeConfig::new(EnvKind::MiniHouse, 9, Split::Train);
        let real = run_real(&mut scripted(&ep), &ep).unwrap();
        let probes =
            probe_fidelity(std::slice::from_ref(&real), &WorldModel::oracle(), ProbeSampling::AllSteps).unwrap();
        assert_eq!(probes.len(), real.trajectory.turns.len());
        for p in &probes {
            let pred = p.prediction.as_ref().unwrap();
            assert_eq!(pred.observation, p.truth.observation);
        }
        let k = probe_fidelity(
            &[real],
            &WorldModel::oracle(),
            ProbeSampling::PerTrajK { k: 2, seed: 1 },
        )
        .unwrap();
        assert_eq!(k.len(), 2);
    }

    #[test]
    fn parallel_results_are_independent_of_worker_count() {
        let eps = env::generate_split(EnvKind::MiniShop, 12, Split::TestId).unwrap();
        let one = run_triple(&AgentSpec::random(4), &WorldModel::oracle(), &eps, &BTreeSet::new(), 1)
            .unwrap();
        let four = run_triple(&AgentSpec::random(4), &WorldModel::oracle(), &eps, &BTreeSet::new(), 4)
            .unwrap();
        assert_eq!(one.real, four.real);
        assert_eq!(one.w2r, four.w2r);
    }
}
