//! An agent that buys the first search hit fails every constructed
//! scenario; gating its purchase through a world model rescues it.
//!
//! cargo run --release --example verification_gate

use wm_harness::agent::AgentSpec;
use wm_harness::env::Split;
use wm_harness::verify::{budget_sweep, mistake_scenarios, FeedbackMode, GateOutcome, BUDGET_PRESETS};
use wm_harness::wm::{CorruptionMode, CorruptionSpec, WorldModel};

fn main() -> wm_harness::Result<()> {
    let episodes = mistake_scenarios(20, Split::TestId)?;
    let agent = AgentSpec::ScriptedBuyFirst { id: "buy-first".into() };
    let unreliable = WorldModel::noisy("wrong-branch-0.5", CorruptionSpec::new(0.5, 3, CorruptionMode::WrongBranch)?);

    for wm in [WorldModel::oracle(), unreliable] {
        for mode in [FeedbackMode::Silent, FeedbackMode::CounterfactualNote] {
            let (rows, records) = budget_sweep(&agent, &wm, &episodes, &BUDGET_PRESETS, mode, 4)?;
            println!("{} / {mode}", wm.id);
            for row in &rows {
                println!(
                    "  budget {:>2}: success {:>5.1}%  simulations {}",
                    row.budget,
                    100.0 * row.success_rate,
                    row.attempts_total
                );
            }
            if let Some(d) = records[1].iter().flat_map(|r| &r.gate).find(|d| d.outcome != GateOutcome::Passthrough) {
                println!("  e.g. step {}: rejected {:?} -> {:?}", d.step, d.rejected_actions, d.outcome);
            }
        }
    }
    Ok(())
}
