//! Prefix-conditioned fidelity of token-swap world models at several noise
//! rates: exact match tracks 1 - rate while word F1 degrades gently.
//!
//! cargo run --release --example noisy_fidelity

use wm_harness::agent::AgentSpec;
use wm_harness::env::{generate_split, EnvKind, Split};
use wm_harness::metrics::fidelity;
use wm_harness::rollout::{probe_fidelity_par, run_parallel, run_real, ProbeSampling};
use wm_harness::wm::{CorruptionMode, CorruptionSpec, WorldModel};

fn main() -> wm_harness::Result<()> {
    let workers = 4;
    let agent = AgentSpec::scripted();
    let mut episodes = generate_split(EnvKind::MiniHouse, 100, Split::TestId)?;
    episodes.extend(generate_split(EnvKind::MiniShop, 100, Split::TestId)?);
    let real = run_parallel(&episodes, workers, |ep| run_real(agent.build(ep)?.as_mut(), ep))?;

    println!("{:>6} {:>8} {:>8} {:>8}", "rate", "probes", "EM", "F1");
    for rate in [0.0, 0.1, 0.25, 0.5] {
        let wm = WorldModel::noisy("noisy", CorruptionSpec::new(rate, 0, CorruptionMode::TokenSwap)?);
        let probes = probe_fidelity_par(&real, &wm, ProbeSampling::AllSteps, workers)?;
        let r = fidelity(&probes);
        println!("{rate:>6.2} {:>8} {:>8.4} {:>8.4}", r.probes_valid, r.em, r.f1_mean);
    }

    let wm = WorldModel::noisy("noisy", CorruptionSpec::new(0.25, 0, CorruptionMode::TokenSwap)?);
    let sampled = probe_fidelity_par(&real, &wm, ProbeSampling::PerTrajK { k: 2, seed: 9 }, workers)?;
    println!("\nper-trajectory k=2 sampling:\n{}", fidelity(&sampled).to_text());
    Ok(())
}
