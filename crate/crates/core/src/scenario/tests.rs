use super::*;

fn run(name: &str, options: &RunOptions) -> Report {
    run_scenario(&builtin(name, options).unwrap(), options).unwrap()
}

fn assert_pass(report: &Report) {
    assert!(report.verdict.pass, "{}\n{}", report.verdict, report.verdict.notes.join("\n"));
}

#[test]
fn honest_multi_server_passes() {
    let report = run("honest_multi_server", &RunOptions::default());
    assert_pass(&report);
    assert_eq!(report.verdict.evidence.len(), 15);
}

#[test]
fn replay_is_rejected() {
    assert_pass(&run("replay", &RunOptions::default()));
}

#[test]
fn constant_nonce_breaks_replay() {
    let report = run("replay", &RunOptions { constant_nonce: true, ..RunOptions::default() });
    assert!(!report.verdict.pass);
    assert!(!report.verdict.evidence.is_empty());
    let accepted = report.transcript.entries.iter().any(|e| e.by_adversary() && e.outcome.is_accepted());
    assert!(accepted);
}

#[test]
fn sms_spoof_is_rejected() {
    assert_pass(&run("sms_spoof", &RunOptions::default()));
}

#[test]
fn phishing_is_detected_by_the_phone() {
    assert_pass(&run("phishing_mitm", &RunOptions::default()));
}

#[test]
fn keylogger_learns_nothing_useful() {
    let report = run("keylogger_kiosk", &RunOptions::default());
    assert_pass(&report);
    assert!(!report.kiosk_log.is_empty());
}

#[test]
fn password_reuse_small_run() {
    let options = RunOptions::default();
    let mut scenario = builtin("password_reuse", &options).unwrap();
    for step in &mut scenario.steps {
        if let Step::PasswordReuse { attempts, .. } = step {
            *attempts = 50;
        }
    }
    for check in &mut scenario.checks {
        if let Check::AdversaryAttempts { min, .. } = check {
            *min = 50;
        }
    }
    assert_pass(&run_scenario(&scenario, &options).unwrap());
}

#[test]
fn phone_loss_recovery_skips_one_index() {
    assert_pass(&run("phone_loss_recovery", &RunOptions::default()));
    assert_pass(&run("phone_loss_recovery", &RunOptions { chain_length: Some(3), ..RunOptions::default() }));
    let err = builtin("phone_loss_recovery", &RunOptions { chain_length: Some(2), ..RunOptions::default() });
    assert_eq!(err.unwrap_err().kind(), "config-error");
}

#[test]
fn chain_exhaustion_reseeds() {
    assert_pass(&run("chain_exhaustion", &RunOptions::default()));
    assert_pass(&run("chain_exhaustion", &RunOptions { chain_length: Some(6), ..RunOptions::default() }));
}

#[test]
fn unknown_scenario() {
    let err = builtin("nosuch", &RunOptions::default()).unwrap_err();
    assert_eq!(err, ScenarioError::Unknown("nosuch".into()));
    assert_eq!(err.kind(), "config-error");
}

#[test]
fn failing_checks_carry_evidence() {
    let options = RunOptions::default();
    let scenario = builtin("honest_multi_server", &options)
        .unwrap()
        .check(Check::ServerNextIndex { server: "bank.example".into(), index: 99 });
    let report = run_scenario(&scenario, &options).unwrap();
    assert!(!report.verdict.pass);
    assert!(!report.verdict.evidence.is_empty());
    assert!(report.verdict.to_string().contains("FAIL"));
}

#[test]
fn runaway_is_a_failed_verdict() {
    let options = RunOptions { event_budget: 200, ..RunOptions::default() };
    let scenario = Scenario::new("loop", standard_roster(), Expectation::AllLoginsSucceed)
        .tap(TapRule::on(MessageKind::LoginSms, vec![crate::simnet::TapAction::Replay { delay: 0, sender: None }]))
        .user(UserAction::Register("bank.example".into()))
        .user(UserAction::Login("bank.example".into()));
    let report = run_scenario(&scenario, &options).unwrap();
    assert!(!report.verdict.pass);
    assert!(report.verdict.notes.iter().any(|n| n.contains("runaway-scenario")));
}

#[test]
fn catalog_rejects_duplicates() {
    let mut catalog = Catalog::new();
    let s = Scenario::new("replay", standard_roster(), Expectation::AllLoginsSucceed);
    assert!(catalog.add(s).is_err());
    catalog.add(Scenario::new("custom", standard_roster(), Expectation::AllLoginsSucceed)).unwrap();
    assert_eq!(catalog.names().len(), 9);
    assert_eq!(list_scenarios().len(), 8);
}

#[test]
fn parse_minimal_file() {
    let text = r#"
        [scenario]
        name = "two_logins"
        chain_length = 8
        expect = "all_logins_succeed"

        [[step]]
        action = "register"
        server = "bank.example"

        [[step]]
        action = "login"
        server = "bank.example"

        [[step]]
        action = "login"
        server = "bank.example"

        [[check]]
        check = "server_next_index"
        server = "bank.example"
        index = 2
    "#;
    let scenario = parse_scenario(text).unwrap();
    assert_eq!(scenario.chain_length, Some(8));
    assert_eq!(scenario.steps.len(), 3);
    assert_pass(&run_scenario(&scenario, &RunOptions::default()).unwrap());
}

#[test]
fn parse_taps_and_injections() {
    let text = r#"
        [scenario]
        name = "spoof"
        expect = "attack_rejected"
        reject_kinds = ["spoofed-source"]

        [[tap]]
        kind = "LoginSms"
        nth = [1]
        actions = [
            { action = "replay", delay = 0, sender = "15559999" },
            { action = "delay", ticks = 1 },
        ]

        [[step]]
        action = "register"
        server = "bank.example"

        [[step]]
        action = "login"
        server = "bank.example"

        [[step]]
        action = "inject"
        channel = "sms"
        from = "adversary"
        to = "server:bank.example"
        hex = "00"
        sender = "15559999"
    "#;
    let scenario = parse_scenario(text).unwrap();
    assert_eq!(scenario.policy.rules[0].actions.len(), 2);
    assert_pass(&run_scenario(&scenario, &RunOptions::default()).unwrap());
}

#[test]
fn parse_errors_are_config_errors() {
    let cases = [
        "",
        "[scenario]\nname = \"x\"\nexpect = \"sometimes\"\n",
        "[scenario]\nname = \"x\"\nexpect = \"attack_rejected\"\n",
        "[scenario]\nname = \"x\"\nexpect = \"all_logins_succeed\"\ncolour = 1\n",
        "[scenario]\nname = \"x\"\nexpect = \"all_logins_succeed\"\n[[tap]]\nkind = \"LoginSuccess\"\nactions = [{ action = \"modify\", edits = [] }]\n",
        "[scenario]\nname = \"x\"\nexpect = \"all_logins_succeed\"\n[[step]]\naction = \"dance\"\n",
    ];
    for text in cases {
        let err = parse_scenario(text).unwrap_err();
        assert_eq!(err.kind(), "config-error", "{text}");
    }
}
