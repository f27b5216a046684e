//! Use a chat-completions endpoint as the world model and score its
//! fidelity against the real environment. Every call is recorded; rerun
//! with `--replay` to serve the same run from the transcript.
//!
//! WM_BASE_URL=https://api.openai.com/v1 WM_MODEL=gpt-4o-mini OPENAI_API_KEY=... \
//!     cargo run --example remote_world_model -- [--replay]

use std::path::PathBuf;
use std::sync::Arc;

use wm_harness::agent::AgentSpec;
use wm_harness::env::{generate_split, EnvKind, Split};
use wm_harness::gateway::{EndpointConfig, Gateway, GatewayMode, Sampling};
use wm_harness::metrics::fidelity;
use wm_harness::rollout::{probe_fidelity, run_real, ProbeSampling};
use wm_harness::wm::{RemoteWm, WmKind, WorldModel};

fn main() -> wm_harness::Result<()> {
    let replay = std::env::args().any(|a| a == "--replay");
    let Ok(base_url) = std::env::var("WM_BASE_URL") else {
        eprintln!("set WM_BASE_URL (and the key variable named by WM_KEY_VAR, default OPENAI_API_KEY)");
        return Ok(());
    };
    let endpoint = EndpointConfig {
        name: "remote-wm".into(),
        base_url,
        api_key_env_var: std::env::var("WM_KEY_VAR").unwrap_or_else(|_| "OPENAI_API_KEY".into()),
        model: std::env::var("WM_MODEL").unwrap_or_else(|_| "gpt-4o-mini".into()),
        max_in_flight: 2,
        ..EndpointConfig::default()
    };
    let transcript = PathBuf::from("remote_world_model.transcript.jsonl");
    let mode = if replay {
        GatewayMode::Replay { transcript }
    } else {
        GatewayMode::Live { transcript: Some(transcript) }
    };
    let gateway = Arc::new(Gateway::new(endpoint, mode)?);
    let wm = WorldModel {
        id: "remote".into(),
        kind: WmKind::Remote(RemoteWm {
            gateway: gateway.clone(),
            sampling: Sampling { temperature: 0.0, ..Sampling::default() },
        }),
    };

    let agent = AgentSpec::scripted();
    let mut real = Vec::new();
    for ep in generate_split(EnvKind::MiniHouse, 3, Split::TestId)? {
        real.push(run_real(agent.build(&ep)?.as_mut(), &ep)?);
    }
    let probes = probe_fidelity(&real, &wm, ProbeSampling::PerTrajK { k: 3, seed: 0 })?;
    println!("{}", fidelity(&probes).to_text());
    println!("network calls: {}", gateway.network_calls());
    Ok(())
}
