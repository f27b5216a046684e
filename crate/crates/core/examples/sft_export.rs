//! Collect a few trajectories into a store, then print the world-model and
//! agent SFT records for the same trajectory side by side.
//!
//! cargo run --example sft_export

use wm_harness::agent::AgentSpec;
use wm_harness::dataset::{agent_sample, export_early_experience, wm_sample, TrajectoryStore};
use wm_harness::env::{generate_split, EnvKind, Split};
use wm_harness::rollout::run_real;

fn main() -> wm_harness::Result<()> {
    let dir = tempfile::tempdir()?;
    let mut store = TrajectoryStore::create(dir.path().join("trajectories.jsonl"))?;
    let agent = AgentSpec::scripted();
    for ep in generate_split(EnvKind::MiniShop, 20, Split::Train)? {
        store.append(&run_real(agent.build(&ep)?.as_mut(), &ep)?.trajectory)?;
    }
    println!("store {} holds {} trajectories, digest {}", store.path().display(), store.len(), store.digest()?);

    let traj = store.read(&store.index()[0])?;
    for sample in [wm_sample(&traj)?, agent_sample(&traj)?] {
        println!("\n=== objective {} ({} messages) ===", sample.objective, sample.messages.len());
        for m in &sample.messages {
            let first = m.content.lines().next().unwrap_or("");
            println!("{:>9?}: {first}", m.role);
        }
    }

    let mut warmup = Vec::new();
    export_early_experience(&store.read_all()?, 5, 42, &mut warmup)?;
    println!("\nwarmup set: {} bytes, 5 records tagged purpose=warmup", warmup.len());
    Ok(())
}

