//! TOML scenario files. See `docs/scenario-format.md` for the format.

use std::path::Path;

use serde::Deserialize;

use super::{standard_roster, Check, Expectation, Scenario, ScenarioError, Step};
use crate::crypto::LongTermPassword;
use crate::simnet::{
    ByteEdit, ChannelKind, Hop, Injection, NodeId, Roster, ServerProfile, TapAction, TapRule, UserAction, UserProfile,
};
use crate::tsp::SimId;
use crate::wire::{MessageKind, PhoneNumber};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileScenario {
    scenario: Header,
    user: Option<FileUser>,
    #[serde(default)]
    server: Vec<FileServer>,
    #[serde(default)]
    tap: Vec<FileTap>,
    #[serde(default)]
    step: Vec<FileStep>,
    #[serde(default)]
    check: Vec<FileCheck>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    name: String,
    chain_length: Option<u32>,
    expect: String,
    #[serde(default)]
    reject_kinds: Vec<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileUser {
    id: String,
    password: String,
    phone: String,
    sim: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileServer {
    id: String,
    phone: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileTap {
    kind: String,
    channel: Option<String>,
    #[serde(default)]
    nth: Vec<u32>,
    actions: Vec<FileAction>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileEdit {
    offset: usize,
    xor: u8,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileInjection {
    channel: String,
    from: String,
    to: String,
    hex: String,
    sender: Option<String>,
    #[serde(default)]
    delay: u64,
}

#[derive(Debug, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case", deny_unknown_fields)]
enum FileAction {
    Pass,
    Drop,
    Delay {
        ticks: u64,
    },
    Replay {
        #[serde(default)]
        delay: u64,
        sender: Option<String>,
    },
    Modify {
        edits: Vec<FileEdit>,
    },
    SpoofSender {
        number: String,
    },
    Inject {
        channel: String,
        from: String,
        to: String,
        hex: String,
        sender: Option<String>,
        #[serde(default)]
        delay: u64,
    },
}

#[derive(Debug, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case", deny_unknown_fields)]
enum FileStep {
    Register { server: String },
    Login { server: String },
    Recover { server: String },
    LosePhone,
    ReplacePhone { sim: String },
    AdversaryLoginRequest { server: String },
    ReplayCaptured { kind: String, server: Option<String>, sender: Option<String> },
    ReplayKioskLog { server: String },
    PasswordReuse { source: String, target: String, attempts: u32 },
    Inject(FileInjection),
}

#[derive(Debug, Deserialize)]
#[serde(tag = "check", rename_all = "snake_case", deny_unknown_fields)]
enum FileCheck {
    NoErrors,
    AcceptedLogins { count: u32 },
    ServerNextIndex { server: String, index: u32 },
    PhoneNextIndex { server: String, index: u32 },
    SpoofRejectedUnmutated,
    PhoneRejectsForgeries { count: u32 },
    KioskLogClean,
    RecoveryResumesAtSkip,
    ReseedThenLogins { count: u32 },
    AdversaryAttempts { server: String, min: u32 },
}

fn bad(what: impl std::fmt::Display) -> ScenarioError {
    ScenarioError::Config(what.to_string())
}

fn number(s: &str) -> Result<PhoneNumber, ScenarioError> {
    PhoneNumber::parse(s).map_err(bad)
}

fn kind(s: &str) -> Result<MessageKind, ScenarioError> {
    s.parse().map_err(bad)
}

fn channel(s: &str) -> Result<ChannelKind, ScenarioError> {
    s.parse().map_err(bad)
}

fn node(s: &str) -> Result<NodeId, ScenarioError> {
    s.parse().map_err(bad)
}

fn injection(
    channel_name: &str,
    from: &str,
    to: &str,
    hex_bytes: &str,
    sender: Option<&str>,
    delay: u64,
) -> Result<Injection, ScenarioError> {
    Ok(Injection {
        hop: Hop::new(channel(channel_name)?, node(from)?, node(to)?),
        bytes: hex::decode(hex_bytes).map_err(|e| bad(format!("inject hex: {e}")))?,
        sender: sender.map(number).transpose()?,
        delay,
    })
}

impl FileAction {
    fn build(self) -> Result<TapAction, ScenarioError> {
        Ok(match self {
            FileAction::Pass => TapAction::Pass,
            FileAction::Drop => TapAction::Drop,
            FileAction::Delay { ticks } => TapAction::Delay(ticks),
            FileAction::Replay { delay, sender } => {
                TapAction::Replay { delay, sender: sender.as_deref().map(number).transpose()? }
            }
            FileAction::Modify { edits } => {
                TapAction::Modify(edits.into_iter().map(|e| ByteEdit { offset: e.offset, xor: e.xor }).collect())
            }
            FileAction::SpoofSender { number: n } => TapAction::SpoofSender(number(&n)?),
            FileAction::Inject { channel, from, to, hex, sender, delay } => {
                TapAction::Inject(injection(&channel, &from, &to, &hex, sender.as_deref(), delay)?)
            }
        })
    }
}

impl FileStep {
    fn build(self) -> Result<Step, ScenarioError> {
        Ok(match self {
            FileStep::Register { server } => Step::User(UserAction::Register(server)),
            FileStep::Login { server } => Step::User(UserAction::Login(server)),
            FileStep::Recover { server } => Step::User(UserAction::Recover(server)),
            FileStep::LosePhone => Step::User(UserAction::LosePhone),
            FileStep::ReplacePhone { sim } => Step::User(UserAction::ReplacePhone(SimId::new(sim))),
            FileStep::AdversaryLoginRequest { server } => Step::AdversaryLoginRequest { server },
            FileStep::ReplayCaptured { kind: k, server, sender } => {
                Step::ReplayCaptured { kind: kind(&k)?, server, sender: sender.as_deref().map(number).transpose()? }
            }
            FileStep::ReplayKioskLog { server } => Step::ReplayKioskLog { server },
            FileStep::PasswordReuse { source, target, attempts } => Step::PasswordReuse { source, target, attempts },
            FileStep::Inject(i) => {
                Step::Inject(injection(&i.channel, &i.from, &i.to, &i.hex, i.sender.as_deref(), i.delay)?)
            }
        })
    }
}

impl From<FileCheck> for Check {
    fn from(c: FileCheck) -> Self {
        match c {
            FileCheck::NoErrors => Check::NoErrors,
            FileCheck::AcceptedLogins { count } => Check::AcceptedLogins(count),
            FileCheck::ServerNextIndex { server, index } => Check::ServerNextIndex { server, index },
            FileCheck::PhoneNextIndex { server, index } => Check::PhoneNextIndex { server, index },
            FileCheck::SpoofRejectedUnmutated => Check::SpoofRejectedUnmutated,
            FileCheck::PhoneRejectsForgeries { count } => Check::PhoneRejectsForgeries(count),
            FileCheck::KioskLogClean => Check::KioskLogClean,
            FileCheck::RecoveryResumesAtSkip => Check::RecoveryResumesAtSkip,
            FileCheck::ReseedThenLogins { count } => Check::ReseedThenLogins(count),
            FileCheck::AdversaryAttempts { server, min } => Check::AdversaryAttempts { server, min },
        }
    }
}

/// Parses a scenario from TOML text.
pub fn parse_scenario(text: &str) -> Result<Scenario, ScenarioError> {
    let file: FileScenario = toml::from_str(text).map_err(|e| bad(e.message()))?;
    let header = file.scenario;
    if header.name.is_empty() {
        return Err(bad("scenario name is empty"));
    }
    let expectation = match header.expect.as_str() {
        "all_logins_succeed" => Expectation::AllLoginsSucceed,
        "attacker_never_authenticates" => Expectation::AttackerNeverAuthenticates,
        "attack_rejected" if header.reject_kinds.is_empty() => {
            return Err(bad("attack_rejected needs at least one entry in reject_kinds"))
        }
        "attack_rejected" => Expectation::AttackRejected(header.reject_kinds),
        other => return Err(bad(format!("unknown expectation {other:?}"))),
    };
    if header.chain_length == Some(0) {
        return Err(bad("chain_length must be positive"));
    }

    let mut roster = standard_roster();
    if let Some(u) = file.user {
        roster.user = UserProfile {
            user_id: u.id,
            password: LongTermPassword::new(u.password.into_bytes()).map_err(bad)?,
            phone: number(&u.phone)?,
            sim: SimId::new(u.sim),
        };
    }
    if !file.server.is_empty() {
        roster = Roster {
            user: roster.user,
            servers: file
                .server
                .into_iter()
                .map(|s| Ok(ServerProfile { server_id: s.id, phone: number(&s.phone)? }))
                .collect::<Result<_, ScenarioError>>()?,
        };
    }

    let mut scenario = Scenario::new(header.name, roster, expectation);
    scenario.chain_length = header.chain_length;
    for tap in file.tap {
        let mut rule =
            TapRule::on(kind(&tap.kind)?, tap.actions.into_iter().map(FileAction::build).collect::<Result<_, _>>()?)
                .nth(tap.nth);
        if let Some(c) = tap.channel {
            rule = rule.channel(channel(&c)?);
        }
        scenario = scenario.tap(rule);
    }
    scenario.policy.validate()?;
    for step in file.step {
        scenario = scenario.step(step.build()?);
    }
    scenario.checks = file.check.into_iter().map(Check::from).collect();
    Ok(scenario)
}

pub fn load_scenario_file(path: impl AsRef<Path>) -> Result<Scenario, ScenarioError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| bad(format!("{}: {e}", path.display())))?;
    parse_scenario(&text).map_err(|e| match e {
        ScenarioError::Config(msg) => bad(format!("{}: {msg}", path.display())),
        other => other,
    })
}
