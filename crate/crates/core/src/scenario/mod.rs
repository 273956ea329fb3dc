//! Attack scenarios: scripted user and adversary steps run on a fresh
//! [`Network`], judged by an expectation and a list of checks evaluated
//! against the resulting transcript.

mod attacks;
mod builtin;
mod file;

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use crate::crypto::{otp_at_index, KEY_LEN};
use crate::simnet::{AdversaryPolicy, DEFAULT_EVENT_BUDGET};
use crate::simnet::{
    Entry, Injection, Network, NodeId, Outcome, Roster, SimConfig, SimError, TapRule, Transcript, UserAction,
};
use crate::wire::{MessageKind, PhoneNumber};

pub use builtin::{builtin, standard_roster, BUILTIN_NAMES};
pub use file::{load_scenario_file, parse_scenario};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ScenarioError {
    #[error("scenario configuration: {0}")]
    Config(String),
    #[error("unknown scenario {0:?}")]
    Unknown(String),
}

impl ScenarioError {
    pub fn kind(&self) -> &'static str {
        "config-error"
    }
}

impl From<SimError> for ScenarioError {
    fn from(e: SimError) -> Self {
        ScenarioError::Config(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Step {
    User(UserAction),
    /// The adversary asks `server` for a challenge in the user's name.
    AdversaryLoginRequest {
        server: String,
    },
    /// Re-sends the latest captured frame of `kind` (bound for `server`, if
    /// given) to its original destination.
    ReplayCaptured {
        kind: MessageKind,
        server: Option<String>,
        sender: Option<PhoneNumber>,
    },
    /// Replays everything the kiosk logged towards `server`, as HTTP, as
    /// SMS from the user's number, and to the phone over the local link.
    ReplayKioskLog {
        server: String,
    },
    /// With `source`'s full account store and every captured frame, tries
    /// `attempts` forged logins at `target`.
    PasswordReuse {
        source: String,
        target: String,
        attempts: u32,
    },
    Inject(Injection),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Expectation {
    /// Every login the user starts is accepted; no honest frame is rejected
    /// and the adversary authenticates nowhere.
    AllLoginsSucceed,
    /// The adversary authenticates nowhere, and each listed error kind shows
    /// up among the rejections of its frames.
    AttackRejected(Vec<String>),
    AttackerNeverAuthenticates,
}

impl fmt::Display for Expectation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expectation::AllLoginsSucceed => f.write_str("all_logins_succeed"),
            Expectation::AttackRejected(kinds) => write!(f, "attack_rejected({})", kinds.join(",")),
            Expectation::AttackerNeverAuthenticates => f.write_str("attacker_never_authenticates"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Check {
    /// No honest frame was rejected.
    NoErrors,
    /// Exactly this many honest logins were confirmed by the phone.
    AcceptedLogins(u32),
    ServerNextIndex {
        server: String,
        index: u32,
    },
    PhoneNextIndex {
        server: String,
        index: u32,
    },
    /// Sender-spoofed registration and login SMS were rejected as
    /// `spoofed-source`, and no adversary frame changed any agent's state.
    SpoofRejectedUnmutated,
    /// The phone saw exactly this many forged success messages and rejected
    /// all of them.
    PhoneRejectsForgeries(u32),
    /// The kiosk log holds no password, credential or chain element.
    KioskLogClean,
    /// The first login after recovery consumes the index two past the last
    /// login before it.
    RecoveryResumesAtSkip,
    /// A reseeding recovery is followed by exactly this many logins.
    ReseedThenLogins(u32),
    /// At least `min` adversary SMS reached `server`.
    AdversaryAttempts {
        server: String,
        min: u32,
    },
}

impl Check {
    fn name(&self) -> String {
        match self {
            Check::NoErrors => "no_errors".into(),
            Check::AcceptedLogins(n) => format!("accepted_logins={n}"),
            Check::ServerNextIndex { server, index } => format!("server_next_index[{server}]={index}"),
            Check::PhoneNextIndex { server, index } => format!("phone_next_index[{server}]={index}"),
            Check::SpoofRejectedUnmutated => "spoof_rejected_unmutated".into(),
            Check::PhoneRejectsForgeries(n) => format!("phone_rejects_forgeries={n}"),
            Check::KioskLogClean => "kiosk_log_clean".into(),
            Check::RecoveryResumesAtSkip => "recovery_resumes_at_skip".into(),
            Check::ReseedThenLogins(n) => format!("reseed_then_logins={n}"),
            Check::AdversaryAttempts { server, min } => format!("adversary_attempts[{server}]>={min}"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    /// Chain length used unless the run overrides it.
    pub chain_length: Option<u32>,
    pub roster: Roster,
    pub policy: AdversaryPolicy,
    pub steps: Vec<Step>,
    pub expectation: Expectation,
    pub checks: Vec<Check>,
}

impl Scenario {
    pub fn new(name: impl Into<String>, roster: Roster, expectation: Expectation) -> Self {
        Self {
            name: name.into(),
            chain_length: None,
            roster,
            policy: AdversaryPolicy::passive(),
            steps: Vec::new(),
            expectation,
            checks: Vec::new(),
        }
    }

    pub fn tap(mut self, rule: TapRule) -> Self {
        self.policy.rules.push(rule);
        self
    }

    pub fn step(mut self, step: Step) -> Self {
        self.steps.push(step);
        self
    }

    pub fn user(self, action: UserAction) -> Self {
        self.step(Step::User(action))
    }

    pub fn check(mut self, check: Check) -> Self {
        self.checks.push(check);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunOptions {
    pub seed: u64,
    pub chain_length: Option<u32>,
    /// Run the servers with the constant-nonce weakening.
    pub constant_nonce: bool,
    pub event_budget: u64,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { seed: 42, chain_length: None, constant_nonce: false, event_budget: DEFAULT_EVENT_BUDGET }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Verdict {
    pub scenario: String,
    pub pass: bool,
    /// Transcript line numbers; never empty for a failing verdict.
    pub evidence: Vec<usize>,
    pub notes: Vec<String>,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let lines: Vec<String> = self.evidence.iter().map(ToString::to_string).collect();
        write!(
            f,
            "verdict {} {} evidence={}",
            self.scenario,
            if self.pass { "PASS" } else { "FAIL" },
            if lines.is_empty() { "-".into() } else { lines.join(",") }
        )
    }
}

#[derive(Debug, Clone)]
pub struct Report {
    pub verdict: Verdict,
    pub transcript: Transcript,
    /// Everything the kiosk browser saw, as a keylogger would record it.
    pub kiosk_log: Vec<u8>,
    /// Final account store of each server, as `(server_id, store text)`.
    pub stores: Vec<(String, String)>,
}

/// Built-in scenario names plus any loaded from files.
#[derive(Debug, Clone, Default)]
pub struct Catalog {
    files: Vec<Scenario>,
}

impl Catalog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, scenario: Scenario) -> Result<(), ScenarioError> {
        if self.names().iter().any(|n| n == &scenario.name) {
            return Err(ScenarioError::Config(format!("duplicate scenario name {:?}", scenario.name)));
        }
        self.files.push(scenario);
        Ok(())
    }

    pub fn names(&self) -> Vec<String> {
        BUILTIN_NAMES.iter().map(|s| s.to_string()).chain(self.files.iter().map(|s| s.name.clone())).collect()
    }

    pub fn get(&self, name: &str, options: &RunOptions) -> Result<Scenario, ScenarioError> {
        if let Some(s) = self.files.iter().find(|s| s.name == name) {
            return Ok(s.clone());
        }
        builtin(name, options)
    }
}

/// Names of the built-in scenarios.
pub fn list_scenarios() -> Vec<String> {
    Catalog::new().names()
}

pub fn run_scenario(scenario: &Scenario, options: &RunOptions) -> Result<Report, ScenarioError> {
    let chain_length = options.chain_length.or(scenario.chain_length).unwrap_or(crate::server::DEFAULT_CHAIN_LENGTH);
    let config = SimConfig {
        seed: options.seed,
        chain_length,
        constant_nonce: options.constant_nonce,
        event_budget: options.event_budget,
        ..SimConfig::default()
    };
    let mut net = Network::new(&scenario.name, config, scenario.roster.clone(), scenario.policy.clone())?;
    // A separate stream for adversary-side randomness keeps the agents'
    // stream identical to an unattacked run.
    let mut attack_rng = ChaCha20Rng::seed_from_u64(options.seed ^ 0x6368_6169_6e70_6173);
    let mut notes = Vec::new();
    let mut failed = false;
    let mut login_steps = 0u32;

    for (i, step) in scenario.steps.iter().enumerate() {
        if matches!(step, Step::User(UserAction::Login(_))) {
            login_steps += 1;
        }
        match execute(&mut net, step, &mut attack_rng) {
            Ok(()) => {}
            Err(StepError::Sim(SimError::Runaway { budget })) => {
                notes.push(format!("step {}: runaway-scenario after {budget} events", i + 1));
                failed = true;
                break;
            }
            Err(StepError::Sim(e)) => return Err(e.into()),
            Err(StepError::Failed(reason)) => {
                notes.push(format!("step {}: {reason}", i + 1));
                failed = true;
            }
        }
    }

    let mut results = Vec::new();
    for check in &scenario.checks {
        if *check == Check::KioskLogClean {
            results.push((check.name(), kiosk_log_clean(&net)));
        }
    }
    let violations = net.hygiene_violations();
    results.push(("secret_hygiene".into(), audit_result(violations.is_empty(), violations.join("; "))));
    let forged = net.forged_acceptances().iter().map(|&i| Transcript::line_of(i)).collect::<Vec<_>>();
    results.push((
        "capability_soundness".into(),
        CheckResult {
            pass: forged.is_empty(),
            evidence: forged,
            detail: "acceptance of a frame no honest agent sealed".into(),
        },
    ));
    let c = net.counters();
    results.push((
        "conservation".into(),
        audit_result(
            net.in_flight() == 0 && c.sent == c.delivered + c.dropped,
            format!("sent={} delivered={} dropped={}", c.sent, c.delivered, c.dropped),
        ),
    ));

    let kiosk_log = net.kiosk_log().to_vec();
    let stores = net.servers().map(|s| (s.server_id().to_owned(), s.store_text())).collect();
    let transcript = net.finish();
    let oracle = Oracle::new(&transcript);
    results.insert(0, ("expectation".into(), oracle.expectation(&scenario.expectation, login_steps)));
    for check in &scenario.checks {
        if *check != Check::KioskLogClean {
            results.push((check.name(), oracle.check(check)));
        }
    }

    let mut evidence = Vec::new();
    for (name, result) in &results {
        if result.pass {
            continue;
        }
        failed = true;
        notes.push(format!("{name}: FAIL {}", result.detail));
        evidence.extend(&result.evidence);
    }
    if !failed {
        for (_, result) in &results {
            evidence.extend(&result.evidence);
        }
    }
    evidence.sort_unstable();
    evidence.dedup();
    if failed && evidence.is_empty() {
        evidence.push(last_event_line(&transcript));
    }

    Ok(Report {
        verdict: Verdict { scenario: scenario.name.clone(), pass: !failed, evidence, notes },
        transcript,
        kiosk_log,
        stores,
    })
}

/// Line number of the last event in the rendered transcript.
fn last_event_line(t: &Transcript) -> usize {
    crate::simnet::transcript::HEADER_LINES + t.entries.len()
}

#[derive(Debug)]
enum StepError {
    Sim(SimError),
    Failed(String),
}

impl From<SimError> for StepError {
    fn from(e: SimError) -> Self {
        StepError::Sim(e)
    }
}

fn execute(net: &mut Network, step: &Step, rng: &mut ChaCha20Rng) -> Result<(), StepError> {
    match step {
        Step::User(action) => net.perform(action)?,
        Step::AdversaryLoginRequest { server } => {
            net.adversary_login_request(server)?;
            net.run_until_idle()?;
        }
        Step::ReplayCaptured { kind, server, sender } => {
            let to = server.as_ref().map(|s| NodeId::Server(s.clone()));
            let captured = net
                .adversary()
                .latest(*kind, to.as_ref())
                .cloned()
                .ok_or_else(|| StepError::Failed(format!("nothing captured of kind {kind}")))?;
            net.inject(Injection {
                hop: captured.hop,
                bytes: captured.bytes,
                sender: sender.clone().or(captured.sms_sender),
                delay: 0,
            })?;
            net.run_until_idle()?;
        }
        Step::ReplayKioskLog { server } => attacks::replay_kiosk_log(net, server)?,
        Step::PasswordReuse { source, target, attempts } => {
            attacks::password_reuse(net, source, target, *attempts, rng)?
        }
        Step::Inject(injection) => {
            net.inject(injection.clone())?;
            net.run_until_idle()?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone)]
struct CheckResult {
    pass: bool,
    evidence: Vec<usize>,
    detail: String,
}

fn audit_result(pass: bool, detail: String) -> CheckResult {
    CheckResult { pass, evidence: Vec::new(), detail }
}

fn kiosk_log_clean(net: &Network) -> CheckResult {
    let log = net.kiosk_log();
    let n = net.config().chain_length;
    let mut leaks = Vec::new();
    if crate::simnet::contains(log, net.user().password.as_bytes()) {
        leaks.push("password".to_string());
    }
    for credential in net.credentials_seen() {
        for i in 0..=n {
            let otp = otp_at_index(credential, n, i).expect("index in range");
            let key: [u8; KEY_LEN] = otp.envelope_key();
            if crate::simnet::contains(log, otp.digest()) || crate::simnet::contains(log, &key) {
                leaks.push(format!("chain element {i}"));
            }
        }
    }
    audit_result(leaks.is_empty(), format!("kiosk log leaks {}", leaks.join(", ")))
}

/// Judges a finished transcript.
struct Oracle<'a> {
    t: &'a Transcript,
}

impl<'a> Oracle<'a> {
    fn new(t: &'a Transcript) -> Self {
        Self { t }
    }

    fn lines(&self, pred: impl Fn(&Entry) -> bool) -> Vec<usize> {
        self.indices(pred).into_iter().map(Transcript::line_of).collect()
    }

    fn indices(&self, pred: impl Fn(&Entry) -> bool) -> Vec<usize> {
        self.t.entries.iter().enumerate().filter(|(_, e)| pred(e)).map(|(i, _)| i).collect()
    }

    fn adversary_acceptances(&self) -> Vec<usize> {
        self.lines(|e| e.by_adversary() && e.outcome.is_accepted())
    }

    fn honest_rejections(&self) -> Vec<usize> {
        self.lines(|e| !e.by_adversary() && e.outcome.rejection().is_some())
    }

    fn honest_login_confirmations(&self) -> Vec<usize> {
        self.indices(is_login_confirmation)
    }

    fn expectation(&self, expectation: &Expectation, login_steps: u32) -> CheckResult {
        let attacker = self.adversary_acceptances();
        if !attacker.is_empty() {
            return CheckResult {
                pass: false,
                detail: format!("{} adversary frame(s) accepted", attacker.len()),
                evidence: attacker,
            };
        }
        match expectation {
            Expectation::AttackerNeverAuthenticates => {
                CheckResult { pass: true, evidence: Vec::new(), detail: String::new() }
            }
            Expectation::AllLoginsSucceed => {
                let rejected = self.honest_rejections();
                let confirmed = self.honest_login_confirmations().len() as u32;
                CheckResult {
                    pass: rejected.is_empty() && confirmed == login_steps,
                    detail: format!(
                        "{confirmed}/{login_steps} logins confirmed, {} honest rejection(s)",
                        rejected.len()
                    ),
                    evidence: rejected,
                }
            }
            Expectation::AttackRejected(kinds) => {
                let mut evidence = Vec::new();
                let mut missing = Vec::new();
                for kind in kinds {
                    let lines = self.lines(|e| e.by_adversary() && e.outcome.rejection() == Some(kind.as_str()));
                    if lines.is_empty() {
                        missing.push(kind.as_str());
                    }
                    evidence.extend(lines);
                }
                CheckResult {
                    pass: missing.is_empty(),
                    detail: format!("no adversary frame rejected as {}", missing.join(" or ")),
                    evidence,
                }
            }
        }
    }

    fn check(&self, check: &Check) -> CheckResult {
        match check {
            Check::NoErrors => {
                let rejected = self.honest_rejections();
                CheckResult { pass: rejected.is_empty(), detail: "honest frame rejected".into(), evidence: rejected }
            }
            Check::AcceptedLogins(n) => {
                let lines: Vec<usize> =
                    self.honest_login_confirmations().into_iter().map(Transcript::line_of).collect();
                CheckResult {
                    pass: lines.len() as u32 == *n,
                    detail: format!("{} logins confirmed", lines.len()),
                    evidence: lines,
                }
            }
            Check::ServerNextIndex { server, index } => {
                let actual = self
                    .t
                    .final_state
                    .iter()
                    .flat_map(|s| &s.accounts)
                    .find(|a| &a.server_id == server)
                    .map(|a| a.next_index);
                self.state_check(actual, *index, &format!("server {server} next_index"))
            }
            Check::PhoneNextIndex { server, index } => {
                let actual = self
                    .t
                    .final_state
                    .iter()
                    .flat_map(|s| &s.devices)
                    .find(|d| &d.server_id == server)
                    .map(|d| d.next_index);
                self.state_check(actual, *index, &format!("phone record {server} next_index"))
            }
            Check::SpoofRejectedUnmutated => {
                let spoofed = |kind: MessageKind| {
                    self.lines(move |e| {
                        e.by_adversary() && e.message == Some(kind) && e.outcome.rejection() == Some("spoofed-source")
                    })
                };
                let registration = spoofed(MessageKind::RegistrationSms);
                let login = spoofed(MessageKind::LoginSms);
                let mutated = self.lines(|e| e.by_adversary() && !e.outcome.is_accepted() && e.mutated);
                let pass = !registration.is_empty() && !login.is_empty() && mutated.is_empty();
                let evidence = if mutated.is_empty() { [registration, login].concat() } else { mutated };
                CheckResult {
                    pass,
                    detail: "expected non-mutating spoofed-source rejections on registration and login".into(),
                    evidence,
                }
            }
            Check::PhoneRejectsForgeries(n) => {
                let forged = self.indices(|e| {
                    e.by_adversary() && e.message == Some(MessageKind::LoginSuccess) && e.to == Some(NodeId::Phone)
                });
                let rejected = forged.iter().filter(|&&i| self.t.entries[i].outcome.rejection().is_some()).count();
                CheckResult {
                    pass: forged.len() as u32 == *n && rejected == forged.len(),
                    detail: format!("{rejected}/{} forged success messages rejected", forged.len()),
                    evidence: forged.into_iter().map(Transcript::line_of).collect(),
                }
            }
            Check::KioskLogClean => unreachable!("evaluated against the live network"),
            Check::RecoveryResumesAtSkip => self.recovery_skip(),
            Check::ReseedThenLogins(n) => {
                let reseed = self.indices(|e| {
                    !e.by_adversary()
                        && e.message == Some(MessageKind::RecoverySms)
                        && matches!(e.outcome, Outcome::Accepted { reseed: true, .. })
                });
                let Some(&r) = reseed.first() else {
                    return CheckResult { pass: false, evidence: Vec::new(), detail: "no reseeding recovery".into() };
                };
                let after: Vec<usize> = self.honest_login_confirmations().into_iter().filter(|&i| i > r).collect();
                let mut evidence = vec![Transcript::line_of(r)];
                evidence.extend(after.iter().map(|&i| Transcript::line_of(i)));
                CheckResult {
                    pass: after.len() as u32 == *n,
                    detail: format!("{} logins after reseed", after.len()),
                    evidence,
                }
            }
            Check::AdversaryAttempts { server, min } => {
                let to = NodeId::Server(server.clone());
                let attempts =
                    self.indices(|e| e.by_adversary() && e.to.as_ref() == Some(&to) && e.channel.starts_with("sms"));
                CheckResult {
                    pass: attempts.len() as u32 >= *min,
                    detail: format!("{} adversary SMS reached {server}", attempts.len()),
                    evidence: Vec::new(),
                }
            }
        }
    }

    fn state_check(&self, actual: Option<u32>, expected: u32, what: &str) -> CheckResult {
        CheckResult {
            pass: actual == Some(expected),
            evidence: Vec::new(),
            detail: format!("{what} is {}, expected {expected}", actual.map_or("absent".into(), |v| v.to_string())),
        }
    }

    fn recovery_skip(&self) -> CheckResult {
        let recoveries = self
            .indices(|e| !e.by_adversary() && e.message == Some(MessageKind::RecoverySms) && e.outcome.is_accepted());
        let Some(&r) = recoveries.first() else {
            return CheckResult { pass: false, evidence: Vec::new(), detail: "no completed recovery".into() };
        };
        let logins = self.honest_login_confirmations();
        let before = logins.iter().rev().find(|&&i| i < r).copied();
        let after = logins.iter().find(|&&i| i > r).copied();
        let index = |i: usize| match self.t.entries[i].outcome {
            Outcome::Accepted { index, .. } => index,
            _ => None,
        };
        let (Some(b), Some(a)) = (before, after) else {
            return CheckResult {
                pass: false,
                evidence: vec![Transcript::line_of(r)],
                detail: "needs a login on each side of the recovery".into(),
            };
        };
        let (last, next) = (index(b), index(a));
        CheckResult {
            pass: matches!((last, next), (Some(l), Some(n)) if n == l + 2),
            evidence: vec![Transcript::line_of(b), Transcript::line_of(r), Transcript::line_of(a)],
            detail: format!("last login before recovery used {last:?}, first after used {next:?}"),
        }
    }
}

fn is_login_confirmation(e: &Entry) -> bool {
    !e.by_adversary()
        && e.message == Some(MessageKind::LoginSuccess)
        && e.to == Some(NodeId::Phone)
        && e.outcome.is_accepted()
}

#[cfg(test)]
mod tests;
