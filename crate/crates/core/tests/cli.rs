mod common;

use std::path::Path;
use std::process::{Command, Output};
use std::time::Duration;

use common::{Reply, Stub};

fn harness(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wm-harness"))
        .args(args)
        .args(["--out-dir", dir.to_str().unwrap()])
        .output()
        .unwrap()
}

fn remote_config(dir: &Path, stub: &Stub) -> String {
    let path = dir.join("remote.toml");
    std::fs::write(
        &path,
        format!(
            r#"
            envs = ["minihouse"]
            episodes = 3
            max_turns = 6

            [[endpoints]]
            name = "stub"
            base_url = "{}"
            api_key_env_var = "WM_HARNESS_CLI_TEST_KEY"
            model = "stub-model"
            max_retries = 0
            backoff_base_ms = 1

            [[world_models]]
            id = "remote"
            kind = "remote"
            endpoint = "stub"
            "#,
            stub.base_url
        ),
    )
    .unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn replay_reproduces_a_remote_run_offline() {
    let dir = tempfile::tempdir().unwrap();
    let stub = Stub::start(vec![], Reply::ok("Nothing happens."), Duration::ZERO);
    let cfg = remote_config(dir.path(), &stub);
    let live = harness(dir.path(), &["collect", "--config", &cfg, "--wm", "remote", "--run-id", "r"]);
    assert!(live.status.success(), "{}", String::from_utf8_lossy(&live.stderr));
    let calls = stub.requests();
    assert_eq!(calls, 3 * 6);

    let replay = harness(dir.path(), &["replay", "collect", "--config", &cfg, "--wm", "remote", "--run-id", "r"]);
    let stderr = String::from_utf8_lossy(&replay.stderr);
    assert!(replay.status.success(), "{stderr}");
    assert!(stderr.contains("network calls: 0"), "{stderr}");
    assert_eq!(stub.requests(), calls);
    assert_eq!(live.stdout, replay.stdout);
}

#[test]
fn infrastructure_failures_above_threshold_exit_with_transport_code() {
    let dir = tempfile::tempdir().unwrap();
    let stub = Stub::start(vec![], Reply::status(401), Duration::ZERO);
    let cfg = remote_config(dir.path(), &stub);
    let out = harness(dir.path(), &["collect", "--config", &cfg, "--wm", "remote", "--run-id", "f"]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
    let tolerant = harness(
        dir.path(),
        &["collect", "--config", &cfg, "--wm", "remote", "--run-id", "g", "--max-failure-rate", "1"],
    );
    assert!(tolerant.status.success());
}

#[test]
fn exit_codes_separate_config_and_shortfall() {
    let dir = tempfile::tempdir().unwrap();
    let bad = harness(dir.path(), &["collect", "--agent", "nobody", "--episodes", "2"]);
    assert_eq!(bad.status.code(), Some(2));

    let ok = harness(dir.path(), &["collect", "--episodes", "2", "--envs", "minishop", "--run-id", "s"]);
    assert!(ok.status.success());
    let short = harness(dir.path(), &["export", "--preset", "real-1k", "--run-id", "s"]);
    assert_eq!(short.status.code(), Some(3), "{}", String::from_utf8_lossy(&short.stderr));
}

#[test]
fn verify_sweeps_the_default_budgets() {
    let dir = tempfile::tempdir().unwrap();
    let out = harness(
        dir.path(),
        &["verify", "--agent", "scripted-buy-first", "--episodes", "3", "--workers", "2", "--run-id", "v"],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("v/verify/budgets.csv")).unwrap();
    let budgets: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(budgets, ["0", "2", "4", "10", "50"]);
    let rates: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').nth(1).unwrap()).collect();
    assert_eq!(rates, ["0.000000", "1.000000", "1.000000", "1.000000", "1.000000"]);
}
