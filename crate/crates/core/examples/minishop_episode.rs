//! A MiniShop episode: the search template, the canonical query, and the
//! admissible actions offered on each page.
//!
//! cargo run --example minishop_episode -- [seed]

use wm_harness::agent::solve;
use wm_harness::env::{self, EnvKind, EpisodeConfig, Split, SEARCH_TEMPLATE};

fn main() -> wm_harness::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(3);
    let episode = EpisodeConfig::new(EnvKind::MiniShop, seed, Split::TestId);
    let (mut state, first, _) = env::reset(&episode)?;
    println!("template {SEARCH_TEMPLATE:?}, canonical query {:?}\n", env::shop_canonical_query(&state));
    println!("{}\n", first.render(EnvKind::MiniShop));

    for action in solve(&episode)?.plan {
        let irreversible = env::is_irreversible(&state, &env::parse_action(&action));
        let (next, obs) = env::step_raw(&state, &action)?;
        let tag = if irreversible { " [commits]" } else { "" };
        println!("> {action}{tag}\n{}\n", obs.render(EnvKind::MiniShop));
        state = next;
    }
    Ok(())
}
