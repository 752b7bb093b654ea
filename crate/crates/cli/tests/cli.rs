//! End-to-end checks of the `explorex` binary: exit codes, CSV
//! determinism, replay output, and the serve/stats loop.

use std::fs;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};
use std::time::{Duration, Instant};

fn explorex() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_explorex"));
    // Keep child logging out of test output and env overrides out of play.
    cmd.env("RUST_LOG", "error").env_remove("EXPLOREX_ADDR").env_remove("EXPLOREX_DEADLINE_MS");
    cmd
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("binary should spawn")
}

fn stdout_of(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).into_owned()
}

/// A two-candidate target/environment pair small enough to run in tests.
fn write_fixtures(dir: &Path) -> (PathBuf, PathBuf) {
    let config = serde_json::json!({
        "target_id": "sim",
        "task_type": "candidate_selection",
        "sample_rate": 1.0,
        "feedback_fetcher": "sim_feedback",
        "transformers": [{
            "transformer_id": "ucb",
            "chain": [{
                "operator": "UCB1Enhanced",
                "target_reward": 0.11,
                "exploration_weight": 1.0,
                "penalty_delta": 2.0
            }]
        }]
    });
    let env = serde_json::json!({
        "candidates": [
            {"id": "low", "true_ctr": 0.05},
            {"id": "near", "true_ctr": 0.12}
        ],
        "target_reward": 0.11,
        "rounds": 600,
        "epoch_size": 200,
        "seed": 7
    });
    let config_path = dir.join("target.json");
    let env_path = dir.join("env.json");
    fs::write(&config_path, serde_json::to_string_pretty(&config).unwrap()).unwrap();
    fs::write(&env_path, serde_json::to_string_pretty(&env).unwrap()).unwrap();
    (config_path, env_path)
}

#[test]
fn simulate_writes_deterministic_csv() {
    let dir = tempfile::tempdir().unwrap();
    let (config, env) = write_fixtures(dir.path());
    let first = dir.path().join("first.csv");
    let second = dir.path().join("second.csv");

    for out in [&first, &second] {
        let output = run(explorex()
            .arg("simulate")
            .args(["--config", config.to_str().unwrap()])
            .args(["--env", env.to_str().unwrap()])
            .args(["--out", out.to_str().unwrap()]));
        assert!(output.status.success(), "stderr: {}", String::from_utf8_lossy(&output.stderr));
        assert!(stdout_of(&output).contains("wrote 3 epochs (600 decisions)"));
    }

    let first_bytes = fs::read(&first).unwrap();
    assert_eq!(first_bytes, fs::read(&second).unwrap(), "same seed must give the same CSV");
    let text = String::from_utf8(first_bytes).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next(),
        Some("epoch,candidate_id,display_share,deviation,cumulative_decisions")
    );
    // 3 epochs x 2 candidates.
    assert_eq!(lines.count(), 6);

    let reseeded = dir.path().join("reseeded.csv");
    let output = run(explorex()
        .arg("simulate")
        .args(["--config", config.to_str().unwrap()])
        .args(["--env", env.to_str().unwrap()])
        .args(["--out", reseeded.to_str().unwrap()])
        .args(["--seed", "8"]));
    assert!(output.status.success());
    assert_ne!(fs::read(&reseeded).unwrap(), fs::read(&first).unwrap());
}

#[test]
fn simulate_unwritable_out_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let (config, env) = write_fixtures(dir.path());
    let out = dir.path().join("no-such-dir").join("out.csv");

    let output = run(explorex()
        .arg("simulate")
        .args(["--config", config.to_str().unwrap()])
        .args(["--env", env.to_str().unwrap()])
        .args(["--out", out.to_str().unwrap()]));
    assert_eq!(output.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&output.stderr).contains("no-such-dir"));
}

#[test]
fn missing_config_exits_2_and_bad_config_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let (_, env) = write_fixtures(dir.path());
    let out = dir.path().join("out.csv");

    let output = run(explorex()
        .arg("simulate")
        .args(["--config", dir.path().join("absent.json").to_str().unwrap()])
        .args(["--env", env.to_str().unwrap()])
        .args(["--out", out.to_str().unwrap()]));
    assert_eq!(output.status.code(), Some(2));

    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{\"target_id\": \"\"}").unwrap();
    let output = run(explorex()
        .arg("simulate")
        .args(["--config", bad.to_str().unwrap()])
        .args(["--env", env.to_str().unwrap()])
        .args(["--out", out.to_str().unwrap()]));
    assert_eq!(output.status.code(), Some(1));
}

#[test]
fn replay_rebuilds_the_logged_run() {
    let dir = tempfile::tempdir().unwrap();
    let (config, env) = write_fixtures(dir.path());
    let out = dir.path().join("out.csv");
    let exposures = dir.path().join("exposures.jsonl");
    let events = dir.path().join("events.jsonl");

    let output = run(explorex()
        .arg("simulate")
        .args(["--config", config.to_str().unwrap()])
        .args(["--env", env.to_str().unwrap()])
        .args(["--out", out.to_str().unwrap()])
        .args(["--exposure-log", exposures.to_str().unwrap()])
        .args(["--events-log", events.to_str().unwrap()]));
    assert!(output.status.success(), "stderr: {}", String::from_utf8_lossy(&output.stderr));

    let output = run(explorex()
        .arg("replay")
        .args(["--log", exposures.to_str().unwrap()])
        .args(["--events", events.to_str().unwrap()]));
    assert!(output.status.success(), "stderr: {}", String::from_utf8_lossy(&output.stderr));
    let stdout = stdout_of(&output);
    assert!(stdout.contains("exposures logged     600"), "stdout: {stdout}");
    assert!(stdout.contains("pulls sim/ucb  600"), "stdout: {stdout}");
    assert!(stdout.contains("matched display"), "stdout: {stdout}");
}

#[test]
fn replay_missing_log_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let output = run(explorex()
        .arg("replay")
        .args(["--log", dir.path().join("absent.jsonl").to_str().unwrap()]));
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn stats_against_dead_server_exits_1() {
    let output = run(explorex()
        .arg("stats")
        .args(["--target", "sim"])
        .args(["--addr", "127.0.0.1:9"]));
    assert_eq!(output.status.code(), Some(1));
}

struct KillOnDrop(Child);

impl Drop for KillOnDrop {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

fn free_port() -> u16 {
    TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port()
}

#[test]
fn serve_answers_stats_queries() {
    let dir = tempfile::tempdir().unwrap();
    let (config, _) = write_fixtures(dir.path());
    let addr = format!("127.0.0.1:{}", free_port());

    let child = explorex()
        .arg("serve")
        .args(["--addr", &addr])
        .args(["--config", config.to_str().unwrap()])
        .arg("--subscribe")
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .expect("serve should spawn");
    let _guard = KillOnDrop(child);

    let deadline = Instant::now() + Duration::from_secs(10);
    loop {
        let output = run(explorex().arg("stats").args(["--target", "sim"]).args(["--addr", &addr]));
        if output.status.success() {
            let stdout = stdout_of(&output);
            assert!(stdout.contains("\"target_id\": \"sim\""), "stdout: {stdout}");
            assert!(stdout.contains("\"subscribed\": true"), "stdout: {stdout}");
            break;
        }
        assert!(Instant::now() < deadline, "service never came up at {addr}");
        std::thread::sleep(Duration::from_millis(100));
    }

    // Unknown targets surface the service's 404 as a runtime failure.
    let output = run(explorex().arg("stats").args(["--target", "ghost"]).args(["--addr", &addr]));
    assert_eq!(output.status.code(), Some(1));
}
