//! Real, WM, and W2R success rates for a scripted agent under the oracle
//! and a drifting world model, as a report table.
//!
//! cargo run --release --example oracle_consistency -- [episodes] [workers]

use std::collections::BTreeSet;

use wm_harness::agent::AgentSpec;
use wm_harness::env::{generate_split, EnvKind, Split};
use wm_harness::metrics::{aggregate, consistency, Cell};
use wm_harness::protocol::env_id;
use wm_harness::rollout::run_triple;
use wm_harness::wm::{CorruptionMode, CorruptionSpec, WorldModel};

fn main() -> wm_harness::Result<()> {
    let mut args = std::env::args().skip(1).map(|a| a.parse::<usize>().ok());
    let n = args.next().flatten().unwrap_or(50);
    let workers = args.next().flatten().unwrap_or(4);
    let agent = AgentSpec::scripted();
    let drifting = WorldModel::noisy("wrong-branch-0.1", CorruptionSpec::new(0.1, 1, CorruptionMode::WrongBranch)?);

    let mut cells = Vec::new();
    for wm in [WorldModel::oracle(), drifting] {
        for kind in EnvKind::ALL {
            let episodes = generate_split(kind, n, Split::TestId)?;
            let run = run_triple(&agent, &wm, &episodes, &BTreeSet::new(), workers)?;
            let diverged = run.w2r.iter().filter(|r| r.divergence_step.is_some()).count();
            println!("{kind} / {}: {diverged} of {n} replays diverged", wm.id);
            cells.push(Cell {
                agent: agent.id().to_string(),
                env: env_id(kind, Split::TestId),
                wm: wm.id.clone(),
                consistency: consistency(&run.real, &run.wm, &run.w2r)?,
                fidelity: None,
            });
        }
    }
    println!("\n{}", aggregate(cells).to_text());
    Ok(())
}
