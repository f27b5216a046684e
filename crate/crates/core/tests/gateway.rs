mod common;

use std::time::Duration;

use wm_harness::gateway::{EndpointConfig, Gateway, GatewayMode, Sampling, TranscriptRecord};
use wm_harness::protocol::{Message, Role};
use wm_harness::HarnessError;

use common::{Reply, Stub};

fn endpoint(stub: &Stub, max_retries: u32) -> EndpointConfig {
    EndpointConfig {
        name: "stub".into(),
        base_url: stub.base_url.clone(),
        api_key_env_var: "WM_HARNESS_GATEWAY_TEST_KEY".into(),
        model: "stub-model".into(),
        timeout_secs: 5.0,
        max_retries,
        max_in_flight: 2,
        backoff_base_ms: 1,
        backoff_max_ms: 4,
    }
}

fn hello() -> Vec<Message> {
    vec![Message::new(Role::User, "hello")]
}

#[test]
fn rate_limits_are_retried() {
    let stub = Stub::start(vec![Reply::status(429)], Reply::ok("after"), Duration::ZERO);
    let gw = Gateway::new(endpoint(&stub, 2), GatewayMode::Live { transcript: None }).unwrap();
    assert_eq!(gw.complete(&hello(), &Sampling::default()).unwrap(), "after");
    assert_eq!(stub.requests(), 2);
}

#[test]
fn exhausted_retries_report_every_attempt() {
    let stub = Stub::start(vec![], Reply::status(503), Duration::ZERO);
    let gw = Gateway::new(endpoint(&stub, 2), GatewayMode::Live { transcript: None }).unwrap();
    match gw.complete(&hello(), &Sampling::default()).unwrap_err() {
        HarnessError::Transport { attempts, .. } => assert_eq!(attempts, 3),
        e => panic!("{e}"),
    }
    assert_eq!(stub.requests(), 3);
    assert_eq!(gw.network_calls(), 3);
}

#[test]
fn timeouts_are_retryable() {
    let stub = Stub::start(vec![], Reply::ok("late"), Duration::from_millis(600));
    let cfg = EndpointConfig {
        timeout_secs: 0.15,
        ..endpoint(&stub, 1)
    };
    let gw = Gateway::new(cfg, GatewayMode::Live { transcript: None }).unwrap();
    assert!(gw.complete(&hello(), &Sampling::default()).unwrap_err().is_transport());
    assert_eq!(gw.network_calls(), 2);
}

#[test]
fn request_body_carries_model_and_sampling() {
    let stub = Stub::start(vec![], Reply::ok("x"), Duration::ZERO);
    let gw = Gateway::new(endpoint(&stub, 0), GatewayMode::Live { transcript: None }).unwrap();
    let sampling = Sampling {
        temperature: 0.25,
        top_p: 0.5,
        max_tokens: 77,
    };
    gw.complete(&hello(), &sampling).unwrap();
    let body = &stub.bodies()[0];
    assert_eq!(body["model"], "stub-model");
    assert_eq!(body["temperature"], 0.25);
    assert_eq!(body["max_tokens"], 77);
    assert_eq!(body["messages"][0]["role"], "user");
}

#[test]
fn transcript_logs_failures_and_replays_successes_in_order() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.jsonl");
    let stub = Stub::start(
        vec![Reply::ok("first"), Reply::status(400), Reply::ok("second")],
        Reply::ok("rest"),
        Duration::ZERO,
    );
    let live = Gateway::new(endpoint(&stub, 0), GatewayMode::Live { transcript: Some(path.clone()) }).unwrap();
    assert_eq!(live.complete(&hello(), &Sampling::default()).unwrap(), "first");
    assert!(live.complete(&hello(), &Sampling::default()).is_err());
    assert_eq!(live.complete(&hello(), &Sampling::default()).unwrap(), "second");

    let records: Vec<TranscriptRecord> = std::fs::read_to_string(&path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    let statuses: Vec<u16> = records.iter().map(|r| r.status).collect();
    assert_eq!(statuses, [200, 400, 200]);
    assert!(records.iter().all(|r| r.request_hash == records[0].request_hash));

    let replay = Gateway::new(endpoint(&stub, 0), GatewayMode::Replay { transcript: path }).unwrap();
    assert_eq!(replay.complete(&hello(), &Sampling::default()).unwrap(), "first");
    assert_eq!(replay.complete(&hello(), &Sampling::default()).unwrap(), "second");
    assert!(replay.complete(&hello(), &Sampling::default()).is_err());
    assert_eq!(replay.network_calls(), 0);
    assert_eq!(stub.requests(), 3);
}
