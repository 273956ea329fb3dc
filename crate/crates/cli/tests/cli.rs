use std::path::PathBuf;
use std::process::{Command, Output};

fn chainpass(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_chainpass")).args(args).output().expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn core_fixture(path: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures").join(path).to_string_lossy().into_owned()
}

#[test]
fn run_replay_passes_with_a_verdict_line() {
    let out = chainpass(&["run", "replay", "--seed", "7"]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    assert!(text.starts_with("# chainpass transcript v1\n# scenario replay\n# seed 7\n"));
    assert!(text.lines().last().unwrap().starts_with("verdict replay PASS evidence="));
}

#[test]
fn runs_are_reproducible() {
    let a = chainpass(&["run", "replay", "--seed", "7"]);
    let b = chainpass(&["run", "replay", "--seed", "7"]);
    assert_eq!(a.stdout, b.stdout);
    let c = chainpass(&["run", "replay", "--seed", "8"]);
    assert_ne!(a.stdout, c.stdout);
}

#[test]
fn exit_codes() {
    assert_eq!(chainpass(&["run", "nosuch"]).status.code(), Some(2));
    assert_eq!(chainpass(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(chainpass(&[]).status.code(), Some(2));
    assert_eq!(chainpass(&["run", "replay", "--chain-length", "1"]).status.code(), Some(2));
    assert_eq!(chainpass(&["run", "replay", "--log-level", "loud"]).status.code(), Some(2));
    assert_eq!(chainpass(&["run", "missing-file.toml"]).status.code(), Some(2));
    assert_eq!(chainpass(&["run", "phone_loss_recovery", "--chain-length", "2"]).status.code(), Some(2));
    let weakened = chainpass(&["run", "replay", "--weaken", "constant-nonce", "--log-level", "quiet"]);
    assert_eq!(weakened.status.code(), Some(1));
    assert!(stdout(&weakened).starts_with("verdict replay FAIL evidence="));
}

#[test]
fn every_builtin_meets_its_expectation() {
    let list = chainpass(&["list-scenarios"]);
    assert_eq!(list.status.code(), Some(0));
    let names: Vec<String> = stdout(&list).lines().map(str::to_owned).collect();
    assert_eq!(names.len(), 8);
    for name in names {
        let out = chainpass(&["run", &name, "--log-level", "quiet"]);
        assert_eq!(out.status.code(), Some(0), "{name}: {}", String::from_utf8_lossy(&out.stderr));
        assert_eq!(stdout(&out).lines().count(), 1);
    }
}

#[test]
fn scenario_files_run() {
    let out = chainpass(&["run", &core_fixture("scenarios/replay_across_recovery.toml"), "--log-level", "quiet"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout(&out).starts_with("verdict replay_across_recovery PASS"));
}

#[test]
fn demo_follows_the_protocol_phases() {
    let out = chainpass(&["demo"]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    let position = |needle: &str| -> Vec<usize> {
        text.lines().enumerate().filter(|(_, l)| l.contains(needle)).map(|(i, _)| i).collect()
    };
    let reg = position("  RegistrationSms  ");
    let sms = position("  LoginSms  ");
    let success = position("  LoginSuccess  -  accepted@");
    let recovery = position("  RecoverySms  ");
    assert_eq!(reg.len(), 1);
    assert_eq!(recovery.len(), 1);
    assert!(text.lines().nth(recovery[0]).unwrap().contains("accepted@"));
    assert!(reg[0] < sms[0] && sms[0] < success[0] && success[0] < recovery[0]);
    assert!(text.starts_with("# seed 42\n== registration =="));
}

#[test]
fn store_path_and_dump() {
    let dir = tempfile::tempdir().unwrap();
    let store_dir = dir.path().join("stores");
    let out =
        chainpass(&["run", "honest_multi_server", "--log-level", "quiet", "--store-path", store_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let bank = store_dir.join("bank.example.store");
    let text = std::fs::read_to_string(&bank).unwrap();
    assert!(text.starts_with("chainpass-store v1\nalice\t15550001\t"));

    let dump = chainpass(&["store", "dump", bank.to_str().unwrap()]);
    assert_eq!(dump.status.code(), Some(0));
    let lines: Vec<String> = stdout(&dump).lines().map(str::to_owned).collect();
    assert_eq!(lines.len(), 2);
    let fields: Vec<&str> = lines[1].split_whitespace().collect();
    assert_eq!(&fields[..5], ["alice", "15550001", "active", "5", "100"]);
    // The credential column is not echoed.
    let credential = text.lines().nth(1).unwrap().split('\t').nth(2).unwrap();
    assert!(!stdout(&dump).contains(credential));

    let bad = dir.path().join("bad.store");
    std::fs::write(&bad, "not a store\n").unwrap();
    assert_eq!(chainpass(&["store", "dump", bad.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn trace_level_includes_stores_and_notes() {
    let out = chainpass(&["run", "replay", "--weaken", "constant-nonce", "--log-level", "trace"]);
    let text = stdout(&out);
    assert!(text.contains("# note expectation: FAIL"));
    assert!(text.contains("# store bank.example"));
    assert!(text.contains("# kiosk_log "));
}
