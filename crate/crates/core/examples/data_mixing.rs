//! Quota mixing and nested subsample sweeps over trajectory stores.
//!
//! cargo run --release --example data_mixing

use std::collections::BTreeSet;

use wm_harness::agent::AgentSpec;
use wm_harness::dataset::{mix, subsample_sweep, MixKey, MixSpec, Objective, SuccessFilter, TrajectoryStore};
use wm_harness::env::{generate_split, EnvKind, Split};
use wm_harness::rollout::{run_parallel, run_real, run_wm};
use wm_harness::wm::WorldModel;

fn main() -> wm_harness::Result<()> {
    let dir = std::env::temp_dir().join(format!("wm-harness-mix-{}", std::process::id()));
    let agent = AgentSpec::scripted();
    let oracle = WorldModel::oracle();
    let mut stores = Vec::new();
    for (name, kind, split) in [
        ("house", EnvKind::MiniHouse, Split::Train),
        ("shop", EnvKind::MiniShop, Split::Train),
        ("house-ood", EnvKind::MiniHouse, Split::TestOod),
    ] {
        let eps = generate_split(kind, 60, split)?;
        let recs = run_parallel(&eps, 4, |ep| run_real(agent.build(ep)?.as_mut(), ep))?;
        let trajs: Vec<_> = recs.into_iter().map(|r| r.trajectory).collect();
        stores.push(TrajectoryStore::write_all(dir.join(name), &trajs)?);
    }
    let eps = generate_split(EnvKind::MiniHouse, 60, Split::Train)?;
    let syn = run_parallel(&eps, 4, |ep| run_wm(agent.build(ep)?.as_mut(), &oracle, ep, &BTreeSet::new()))?;
    let syn: Vec<_> = syn.into_iter().map(|r| r.trajectory).collect();
    stores.push(TrajectoryStore::write_all(dir.join("syn"), &syn)?);
    let refs: Vec<&TrajectoryStore> = stores.iter().collect();

    let per_env = MixSpec::new(
        "mix3-small",
        MixKey::Env,
        &[("minihouse", 40), ("minishop", 40), ("minihouse-ood", 40)],
        Objective::Wm,
        7,
    );
    let by_source = MixSpec::new("half-half-small", MixKey::Source, &[("real", 25), ("wm", 25)], Objective::Agent, 7)
        .with_filter(SuccessFilter::SuccessOnly);
    for spec in [per_env, by_source] {
        let mut out = Vec::new();
        let m = mix(&refs, &spec, &mut out)?;
        println!("{}: {} samples {:?} digest {}", spec.name, m.total, m.counts, &m.output_digest[..16]);
    }

    let too_many = MixSpec::new("short", MixKey::Env, &[("minishop", 61)], Objective::Wm, 7);
    println!("shortfall: {}", mix(&refs, &too_many, &mut Vec::new()).unwrap_err());

    let sweep = subsample_sweep(&stores[0], &[10, 20, 40, 60], 1)?;
    for set in &sweep {
        println!("sweep size {:>2}: first ids {:?}", set.len(), set.iter().take(2).map(|e| e.seed).collect::<Vec<_>>());
    }
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}
