use std::path::PathBuf;

use chainpass::scenario::{builtin, load_scenario_file, run_scenario, Catalog, Report, RunOptions, BUILTIN_NAMES};
use chainpass::simnet::{Outcome, Transcript};
use chainpass::wire::MessageKind;

fn fixture(path: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(path)
}

fn run(name: &str) -> Report {
    let options = RunOptions::default();
    run_scenario(&builtin(name, &options).unwrap(), &options).unwrap()
}

fn attacker_acceptances(t: &Transcript) -> usize {
    t.entries.iter().filter(|e| e.by_adversary() && e.outcome.is_accepted()).count()
}

fn honest_rejections(t: &Transcript) -> usize {
    t.entries.iter().filter(|e| !e.by_adversary() && e.outcome.rejection().is_some()).count()
}

#[test]
fn attack_scenarios_never_accept_the_adversary() {
    // password_reuse is covered by the acceptance suite.
    for name in ["replay", "sms_spoof", "phishing_mitm", "keylogger_kiosk"] {
        let report = run(name);
        assert!(report.verdict.pass, "{}", report.verdict);
        assert_eq!(attacker_acceptances(&report.transcript), 0, "{name}");
    }
}

#[test]
fn honest_scenarios_have_no_rejections() {
    for name in ["honest_multi_server", "phone_loss_recovery", "chain_exhaustion"] {
        let report = run(name);
        assert!(report.verdict.pass, "{}", report.verdict);
        assert_eq!(honest_rejections(&report.transcript), 0, "{name}");
        assert_eq!(attacker_acceptances(&report.transcript), 0, "{name}");
    }
}

#[test]
fn verdict_lines_point_into_the_rendered_transcript() {
    let report = run("replay");
    let rendered = report.transcript.render();
    let lines: Vec<&str> = rendered.lines().collect();
    assert!(!report.verdict.evidence.is_empty());
    for &line in &report.verdict.evidence {
        let text = lines[line - 1];
        assert!(text.contains("LoginSms") || text.contains("LoginSuccess"), "line {line}: {text}");
    }
}

#[test]
fn constant_nonce_negative_control() {
    let options = RunOptions { constant_nonce: true, ..RunOptions::default() };
    let report = run_scenario(&builtin("replay", &options).unwrap(), &options).unwrap();
    assert!(!report.verdict.pass);
    assert!(attacker_acceptances(&report.transcript) > 0);
    // The weakening must not disturb honest runs.
    let honest = run_scenario(&builtin("honest_multi_server", &options).unwrap(), &options).unwrap();
    assert!(honest.verdict.pass, "{}", honest.verdict);
}

#[test]
fn seeds_change_bytes_but_not_verdicts() {
    for seed in [1, 7, 99] {
        let options = RunOptions { seed, ..RunOptions::default() };
        for name in BUILTIN_NAMES.iter().filter(|&&n| n != "password_reuse") {
            let report = run_scenario(&builtin(name, &options).unwrap(), &options).unwrap();
            assert!(report.verdict.pass, "seed {seed}: {}", report.verdict);
        }
    }
    assert_ne!(
        run_scenario(&builtin("replay", &RunOptions::default()).unwrap(), &RunOptions::default())
            .unwrap()
            .transcript
            .render(),
        run_scenario(
            &builtin("replay", &RunOptions { seed: 1, ..RunOptions::default() }).unwrap(),
            &RunOptions { seed: 1, ..RunOptions::default() }
        )
        .unwrap()
        .transcript
        .render()
    );
}

#[test]
fn chain_exhaustion_at_other_lengths() {
    for n in [2, 3, 5, 9] {
        let options = RunOptions { chain_length: Some(n), ..RunOptions::default() };
        let report = run_scenario(&builtin("chain_exhaustion", &options).unwrap(), &options).unwrap();
        assert!(report.verdict.pass, "N={n}: {:?}", report.verdict.notes);
        let reseeds = report
            .transcript
            .entries
            .iter()
            .filter(|e| {
                e.message == Some(MessageKind::RecoverySms)
                    && matches!(e.outcome, Outcome::Accepted { reseed: true, .. })
            })
            .count();
        assert_eq!(reseeds, 1);
    }
}

#[test]
fn file_scenarios_run() {
    let mut catalog = Catalog::new();
    for file in ["scenarios/replay_across_recovery.toml", "scenarios/honest_login.toml"] {
        let scenario = load_scenario_file(fixture(file)).unwrap();
        let report = run_scenario(&scenario, &RunOptions::default()).unwrap();
        assert!(report.verdict.pass, "{file}: {:?}", report.verdict.notes);
        catalog.add(scenario).unwrap();
    }
    assert_eq!(catalog.names().len(), 10);
    let again = load_scenario_file(fixture("scenarios/honest_login.toml")).unwrap();
    assert_eq!(catalog.add(again).unwrap_err().kind(), "config-error");
}

#[test]
fn missing_scenario_file_is_a_config_error() {
    let err = load_scenario_file(fixture("scenarios/absent.toml")).unwrap_err();
    assert_eq!(err.kind(), "config-error");
}

#[test]
fn golden_transcript() {
    let scenario = load_scenario_file(fixture("scenarios/honest_login.toml")).unwrap();
    let report = run_scenario(&scenario, &RunOptions::default()).unwrap();
    let actual = format!("{}{}\n", report.transcript.render(), report.verdict);
    let expected = std::fs::read_to_string(fixture("golden/honest_login.transcript")).unwrap();
    assert_eq!(actual, expected);
}
