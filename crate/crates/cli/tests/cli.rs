//! Runs the `ctb` binary. Query output is compared with files under
//! `tests/golden`; set `UPDATE_GOLDEN=1` to rewrite them.

use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::time::{Duration, Instant};

const NOW: u64 = 1_700_000_000;

fn ctb(data: &Path, clock: u64, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ctb"))
        .arg("--data-dir")
        .arg(data)
        .args(["--clock", &clock.to_string()])
        .args(args)
        .env_remove("CTB_CONFIG")
        .env_remove("CTB_DATA_DIR")
        .env_remove("CTB_CLOCK")
        .output()
        .expect("run ctb")
}

fn ok(out: Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn error_of(out: &Output) -> serde_json::Value {
    assert!(!out.status.success(), "expected failure, got {}", String::from_utf8_lossy(&out.stdout));
    serde_json::from_slice(&out.stderr).unwrap_or_else(|_| panic!("stderr is not JSON: {}", String::from_utf8_lossy(&out.stderr)))
}

fn spec(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(name)
}

struct Fixture {
    _dir: tempfile::TempDir,
    data: PathBuf,
    moved: String,
    erased: String,
}

/// A seeded deployment after a scenario, one ISP -> LEA -> prosecutor
/// hand-off, one erasure and one device check.
fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(ctb(&data, NOW, &["ca", "init", "--chain-id", "golden", "--seed", "7"]));
    for (role, name) in [("isp", "isp1"), ("lea", "lea1"), ("prosecutor", "pros1")] {
        ok(ctb(&data, NOW, &["enroll", "--role", role, "--name", name]));
    }
    let run = ok(ctb(
        &data,
        NOW + 5,
        &["--output", "structured", "scenario", "run", "--spec", spec("smart_home.toml").to_str().unwrap(), "--seed", "42", "--as", "isp1"],
    ));
    let run: serde_json::Value = serde_json::from_str(&run).unwrap();
    let ids: Vec<String> = run["ingest"]["evidence"].as_array().unwrap().iter().map(|e| e["id"].as_str().unwrap().to_owned()).collect();
    let (moved, erased) = (ids[0].clone(), ids[1].clone());
    ok(ctb(&data, NOW + 100, &["evidence", "transfer", "--id", &moved, "--as", "isp1", "--to", "lea1"]));
    ok(ctb(&data, NOW + 200, &["evidence", "transfer", "--id", &moved, "--as", "lea1", "--to", "pros1", "--dsc", "handed to prosecution"]));
    ok(ctb(&data, NOW + 300, &["evidence", "erase", "--id", &erased, "--as", "isp1"]));
    let zero = "0".repeat(64);
    ok(ctb(&data, NOW + 400, &["device", "verify", "--as", "lea1", "--device-id", "dvr", "--firmware", &zero, "--config-hash", &zero]));
    Fixture { _dir: dir, data, moved, erased }
}

fn golden(name: &str, actual: &str) {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests").join("golden").join(name);
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, actual).unwrap();
        return;
    }
    let expected = std::fs::read_to_string(&path).unwrap_or_else(|_| panic!("missing {}; run with UPDATE_GOLDEN=1", path.display()));
    assert_eq!(actual, expected, "output differs from {}", path.display());
}

#[test]
fn query_output_matches_golden_files() {
    let f = fixture();
    let queries: Vec<(&str, Vec<&str>)> = vec![
        ("roster", vec!["ca", "roster"]),
        ("chain_show", vec!["chain", "show"]),
        ("chain_verify", vec!["chain", "verify"]),
        ("block_2", vec!["chain", "show", "--height", "2"]),
        ("evidence_moved", vec!["evidence", "show", "--id", &f.moved, "--as", "lea1"]),
        ("evidence_erased", vec!["evidence", "show", "--id", &f.erased, "--as", "pros1"]),
        ("evidence_list", vec!["evidence", "list", "--as", "lea1"]),
        ("trail_moved", vec!["trail", "show", "--id", &f.moved, "--as", "pros1"]),
        ("device_dvr", vec!["device", "show", "--device-id", "dvr"]),
    ];
    for (name, args) in queries {
        for (format, ext) in [("text", "txt"), ("structured", "json")] {
            let mut full = vec!["--output", format];
            full.extend(&args);
            // the clock must not leak into query output
            let first = ok(ctb(&f.data, NOW + 1_000, &full));
            let second = ok(ctb(&f.data, NOW + 9_999, &full));
            assert_eq!(first, second, "{name} ({format}) is not stable");
            golden(&format!("{name}.{ext}"), &first);
        }
    }
}

#[test]
fn transfer_without_owner_key_is_permission_denied() {
    let f = fixture();
    std::fs::remove_file(f.data.join("keys").join("pros1.key")).unwrap();
    let out = ctb(&f.data, NOW + 500, &["evidence", "transfer", "--id", &f.moved, "--as", "pros1", "--to", "lea1"]);
    assert_eq!(error_of(&out)["code"], "PermissionDenied");

    // a key file that belongs to someone else is no better
    let other = f.data.join("keys").join("lea1.key");
    let out = ctb(&f.data, NOW + 500, &["evidence", "erase", "--id", &f.moved, "--as", "isp1", "--key", other.to_str().unwrap()]);
    assert_eq!(error_of(&out)["code"], "PermissionDenied");
}

#[test]
fn chaincode_denials_are_reported_with_their_codes() {
    let f = fixture();
    let transfer = |who: &str, to: &str| ctb(&f.data, NOW + 600, &["evidence", "transfer", "--id", &f.moved, "--as", who, "--to", to]);
    assert_eq!(error_of(&transfer("pros1", "lea1"))["code"], "TerminalOwner");
    assert_eq!(error_of(&transfer("lea1", "pros1"))["code"], "PermissionDenied");
    let get = ctb(&f.data, NOW + 600, &["evidence", "get", "--id", &f.erased, "--as", "isp1"]);
    assert_eq!(error_of(&get)["code"], "Erased");
    let unknown = ctb(&f.data, NOW + 600, &["evidence", "show", "--id", &"ab".repeat(32), "--as", "lea1"]);
    assert_eq!(error_of(&unknown)["code"], "NotFound");
}

#[test]
fn get_writes_a_verified_payload_and_resubmission_is_idempotent() {
    let f = fixture();
    let out = f.data.join("payload.bin");
    let args = ["--output", "structured", "evidence", "get", "--id", &f.moved, "--as", "pros1", "--out", out.to_str().unwrap()];
    let first: serde_json::Value = serde_json::from_str(&ok(ctb(&f.data, NOW + 700, &args))).unwrap();
    assert_eq!(first["verified"], true);
    assert_eq!(std::fs::metadata(&out).unwrap().len(), first["payload_len"].as_u64().unwrap());
    let again: serde_json::Value = serde_json::from_str(&ok(ctb(&f.data, NOW + 700, &args))).unwrap();
    assert_eq!(again["access_tx_id"], first["access_tx_id"]);
    assert_eq!(again["block_height"], first["block_height"]);
}

#[test]
fn tampered_store_fails_verification_with_height() {
    let f = fixture();
    let blocks = f.data.join("chain").join("blocks.dat");
    let mut bytes = std::fs::read(&blocks).unwrap();
    let at = bytes.len() - 40;
    bytes[at] ^= 0x10;
    std::fs::write(&blocks, bytes).unwrap();
    let out = ctb(&f.data, NOW, &["chain", "verify"]);
    let err = error_of(&out);
    assert_eq!(err["code"], "ChainInvalid");
    let stdout = String::from_utf8(out.stdout).unwrap();
    let tip = 5; // the last block holds the device check
    assert!(stdout.contains(&format!("first failure at height {tip}")), "{stdout}");
    assert!(err["message"].as_str().unwrap().contains(&format!("height {tip}")));
}

#[test]
fn scenario_summaries_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let path = spec("smart_home.toml");
    let run = || ok(ctb(dir.path(), NOW, &["--output", "structured", "scenario", "run", "--spec", path.to_str().unwrap(), "--seed", "42"]));
    let a = run();
    assert_eq!(a, run());
    let s: serde_json::Value = serde_json::from_str(&a).unwrap();
    assert_eq!(s["devices"], 10);
    assert!(s["infected"].as_u64().unwrap() >= 1);
    assert!(s.get("ingest").is_none());
    let other = ok(ctb(dir.path(), NOW, &["--output", "structured", "scenario", "run", "--spec", path.to_str().unwrap(), "--seed", "43"]));
    assert_ne!(a, other);
}

#[test]
fn network_run_reports_pass() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(ctb(dir.path(), NOW, &["network", "run", "--spec", spec("five_nodes.toml").to_str().unwrap(), "--seed", "3"]));
    assert!(out.contains("result          PASS"), "{out}");
}

#[test]
fn usage_and_setup_errors_are_json() {
    let dir = tempfile::tempdir().unwrap();
    let out = ctb(dir.path(), NOW, &["evidence", "frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_of(&out)["code"], "Usage");
    let out = ctb(&dir.path().join("nothing"), NOW, &["chain", "show"]);
    assert_eq!(error_of(&out)["code"], "NotInitialized");
    let data = dir.path().join("d");
    ok(ctb(&data, NOW, &["ca", "init"]));
    assert_eq!(error_of(&ctb(&data, NOW, &["ca", "init"]))["code"], "AlreadyInitialized");
    ok(ctb(&data, NOW, &["node", "start", "--dry-run"]));
    assert_eq!(error_of(&ctb(&data, NOW, &["enroll", "--role", "lea", "--name", "late"]))["code"], "RosterFrozen");
}

#[test]
fn config_file_supplies_data_dir_and_key_dir() {
    let f = fixture();
    let keys = f._dir.path().join("vault");
    std::fs::create_dir_all(&keys).unwrap();
    std::fs::rename(f.data.join("keys").join("lea1.key"), keys.join("lea1.key")).unwrap();
    let config = f._dir.path().join("node.toml");
    std::fs::write(&config, "data_dir = \"data\"\nkey_dir = \"vault\"\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_ctb"))
        .args(["--clock", &(NOW + 800).to_string(), "device", "verify", "--as", "lea1", "--device-id", "dvr"])
        .args(["--firmware", &"1".repeat(64), "--config-hash", &"1".repeat(64)])
        .env("CTB_CONFIG", &config)
        .env_remove("CTB_DATA_DIR")
        .output()
        .unwrap();
    let text = ok(out);
    assert!(text.starts_with("device dvr: UNKNOWN"), "{text}");
}

#[test]
fn node_start_serves_the_api() {
    let f = fixture();
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let bind = format!("127.0.0.1:{port}");
    let mut child = Command::new(env!("CARGO_BIN_EXE_ctb"))
        .arg("--data-dir")
        .arg(&f.data)
        .args(["node", "start", "--bind", &bind])
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let deadline = Instant::now() + Duration::from_secs(20);
    let response = loop {
        if let Ok(mut s) = TcpStream::connect(&bind) {
            s.write_all(b"GET /chain HTTP/1.1\r\nHost: x\r\nConnection: close\r\n\r\n").unwrap();
            let mut buf = String::new();
            s.read_to_string(&mut buf).unwrap();
            break buf;
        }
        assert!(Instant::now() < deadline, "server never came up");
        std::thread::sleep(Duration::from_millis(50));
    };
    child.kill().unwrap();
    child.wait().unwrap();
    assert!(response.starts_with("HTTP/1.1 401"), "{response}");
    assert!(response.contains("Unauthorized"));
}
