//! Reset a MiniHouse episode, print both initialization contexts, then step
//! through the solver's plan.
//!
//! cargo run --example minihouse_episode -- [seed]

use wm_harness::agent::solve;
use wm_harness::env::{self, EnvKind, EpisodeConfig, Split};

fn main() -> wm_harness::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(7);
    let episode = EpisodeConfig::new(EnvKind::MiniHouse, seed, Split::TestId);
    let (mut state, _, init) = env::reset(&episode)?;
    println!("--- agent sees ---\n{}\n", init.user_text);
    println!("--- world model also sees ---\n{}\n", init.hidden_text);

    for (i, action) in solve(&episode)?.plan.iter().enumerate() {
        let (next, obs) = env::step_raw(&state, action)?;
        println!("{:>2}. > {action}\n    {}", i + 1, obs.text);
        state = next;
    }
    println!("\nterminated={} reward={}", state.terminated, state.reward);
    Ok(())
}
