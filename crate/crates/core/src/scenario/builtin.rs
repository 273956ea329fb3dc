//! The built-in scenario catalog.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use super::{Check, Expectation, RunOptions, Scenario, ScenarioError, Step};
use crate::crypto::{derive_credential, otp_at_index, success_digest, LongTermPassword, Nonce, ServerSeed};
use crate::simnet::{
    ChannelKind, Hop, Injection, NodeId, Roster, ServerProfile, TapAction, TapRule, UserAction, UserProfile,
};
use crate::tsp::SimId;
use crate::wire::{LoginSuccess, MessageKind, PhoneNumber};

pub const BUILTIN_NAMES: [&str; 8] = [
    "honest_multi_server",
    "replay",
    "sms_spoof",
    "phishing_mitm",
    "keylogger_kiosk",
    "password_reuse",
    "phone_loss_recovery",
    "chain_exhaustion",
];

const BANK: &str = "bank.example";
const MAIL: &str = "mail.example";
const SHOP: &str = "shop.example";
const ATTACKER_NUMBER: &str = "15559999";
pub const PASSWORD_REUSE_ATTEMPTS: u32 = 10_000;

fn number(digits: &str) -> PhoneNumber {
    PhoneNumber::parse(digits).expect("built-in numbers are valid")
}

/// One user (`alice`) with a phone on `sim-alice-1`, and three servers.
pub fn standard_roster() -> Roster {
    Roster {
        user: UserProfile {
            user_id: "alice".into(),
            password: LongTermPassword::new(b"correct horse battery staple".to_vec()).expect("valid password"),
            phone: number("15550001"),
            sim: SimId::new("sim-alice-1"),
        },
        servers: vec![
            ServerProfile { server_id: BANK.into(), phone: number("15551000") },
            ServerProfile { server_id: MAIL.into(), phone: number("15552000") },
            ServerProfile { server_id: SHOP.into(), phone: number("15553000") },
        ],
    }
}

pub fn builtin(name: &str, options: &RunOptions) -> Result<Scenario, ScenarioError> {
    let scenario = match name {
        "honest_multi_server" => honest_multi_server(),
        "replay" => replay(),
        "sms_spoof" => sms_spoof(),
        "phishing_mitm" => phishing_mitm(options),
        "keylogger_kiosk" => keylogger_kiosk(),
        "password_reuse" => password_reuse(),
        "phone_loss_recovery" => phone_loss_recovery(options)?,
        "chain_exhaustion" => chain_exhaustion(options),
        _ => return Err(ScenarioError::Unknown(name.to_owned())),
    };
    Ok(scenario)
}

fn login(server: &str) -> UserAction {
    UserAction::Login(server.into())
}

fn register(server: &str) -> UserAction {
    UserAction::Register(server.into())
}

fn honest_multi_server() -> Scenario {
    let servers = [BANK, MAIL, SHOP];
    let mut s = Scenario::new("honest_multi_server", standard_roster(), Expectation::AllLoginsSucceed);
    for server in servers {
        s = s.user(register(server));
    }
    for _ in 0..5 {
        for server in servers {
            s = s.user(login(server));
        }
    }
    s = s.check(Check::NoErrors).check(Check::AcceptedLogins(15));
    for server in servers {
        s = s
            .check(Check::ServerNextIndex { server: server.into(), index: 5 })
            .check(Check::PhoneNextIndex { server: server.into(), index: 5 });
    }
    s
}

/// A login SMS is replayed after its login completed, then a second login
/// SMS is intercepted and replayed against a challenge the adversary
/// requested itself.
fn replay() -> Scenario {
    let replay_sms = Step::ReplayCaptured { kind: MessageKind::LoginSms, server: Some(BANK.into()), sender: None };
    Scenario::new(
        "replay",
        standard_roster(),
        Expectation::AttackRejected(vec!["no-challenge".into(), "nonce-mismatch".into()]),
    )
    // Occurrence 2 is the adversary's own replay.
    .tap(TapRule::on(MessageKind::LoginSms, vec![TapAction::Drop]).nth([3]))
    .user(register(BANK))
    .user(login(BANK))
    .step(replay_sms.clone())
    .user(login(BANK))
    .step(Step::AdversaryLoginRequest { server: BANK.into() })
    .step(replay_sms)
    .check(Check::ServerNextIndex { server: BANK.into(), index: 1 })
    .check(Check::AcceptedLogins(1))
}

/// The adversary resends the user's registration and login SMS from another
/// number ahead of the genuine ones.
fn sms_spoof() -> Scenario {
    let spoof = || vec![TapAction::Replay { delay: 0, sender: Some(number(ATTACKER_NUMBER)) }, TapAction::Delay(1)];
    Scenario::new("sms_spoof", standard_roster(), Expectation::AttackRejected(vec!["spoofed-source".into()]))
        .tap(TapRule::on(MessageKind::RegistrationSms, spoof()).nth([1]))
        .tap(TapRule::on(MessageKind::LoginSms, spoof()).nth([1]))
        .user(register(BANK))
        .user(login(BANK))
        .user(login(BANK))
        .check(Check::SpoofRejectedUnmutated)
        .check(Check::AcceptedLogins(2))
        .check(Check::ServerNextIndex { server: BANK.into(), index: 2 })
}

/// After one honest login, a fake server swallows the login SMS of the next
/// three and answers the phone with success messages of its own making:
/// random bytes, a digest over a chain it controls, and zeros.
fn phishing_mitm(options: &RunOptions) -> Scenario {
    let mut rng = ChaCha20Rng::seed_from_u64(options.seed ^ 0x7068_6973_6869_6e67);
    let n = options.chain_length.unwrap_or(crate::server::DEFAULT_CHAIN_LENGTH);

    let mut random = [0u8; 32];
    rng.fill_bytes(&mut random);
    // A chain the phisher controls: guessed password, its own seed.
    let guess = LongTermPassword::new(b"password123".to_vec()).expect("valid password");
    let mut seed = [0u8; 16];
    rng.fill_bytes(&mut seed);
    let fake_c = derive_credential(&guess, BANK, &ServerSeed::from_bytes(seed)).expect("valid inputs");
    let fake_otp = otp_at_index(&fake_c, n, 1.min(n)).expect("index in range");
    let fake_chain = success_digest(&Nonce::generate(&mut rng), &fake_otp);

    let mut s =
        Scenario::new("phishing_mitm", standard_roster(), Expectation::AttackRejected(vec!["bad-digest".into()]))
            .user(register(BANK))
            .user(login(BANK));
    for (occurrence, digest) in [(2, random), (3, fake_chain), (4, [0u8; 32])] {
        let forged = Injection {
            hop: Hop::new(ChannelKind::Secure3g, NodeId::Server(BANK.into()), NodeId::Phone),
            bytes: crate::wire::encode(&LoginSuccess { digest }.into()),
            sender: None,
            delay: 0,
        };
        s = s
            .tap(TapRule::on(MessageKind::LoginSms, vec![TapAction::Drop, TapAction::Inject(forged)]).nth([occurrence]))
            .user(login(BANK));
    }
    s.check(Check::PhoneRejectsForgeries(3))
        .check(Check::PhoneNextIndex { server: BANK.into(), index: 1 })
        .check(Check::ServerNextIndex { server: BANK.into(), index: 1 })
}

/// The kiosk records every keystroke and frame; the adversary replays the
/// whole log at the server and the phone.
fn keylogger_kiosk() -> Scenario {
    Scenario::new("keylogger_kiosk", standard_roster(), Expectation::AttackerNeverAuthenticates)
        .user(register(BANK))
        .user(login(BANK))
        .user(login(BANK))
        .step(Step::ReplayKioskLog { server: BANK.into() })
        .step(Step::AdversaryLoginRequest { server: BANK.into() })
        .check(Check::KioskLogClean)
        .check(Check::AcceptedLogins(2))
        .check(Check::ServerNextIndex { server: BANK.into(), index: 2 })
        .check(Check::PhoneNextIndex { server: BANK.into(), index: 2 })
}

/// The same password is used at the shop and the bank. The shop's store
/// leaks completely; the adversary attacks the bank with it.
fn password_reuse() -> Scenario {
    Scenario::new("password_reuse", standard_roster(), Expectation::AttackerNeverAuthenticates)
        .user(register(SHOP))
        .user(register(BANK))
        .user(login(SHOP))
        .user(login(BANK))
        .user(login(SHOP))
        .user(login(BANK))
        .step(Step::PasswordReuse { source: SHOP.into(), target: BANK.into(), attempts: PASSWORD_REUSE_ATTEMPTS })
        .check(Check::AdversaryAttempts { server: BANK.into(), min: PASSWORD_REUSE_ATTEMPTS })
        .check(Check::ServerNextIndex { server: BANK.into(), index: 2 })
        .check(Check::AcceptedLogins(4))
}

fn phone_loss_recovery(options: &RunOptions) -> Result<Scenario, ScenarioError> {
    let n = options.chain_length.unwrap_or(crate::server::DEFAULT_CHAIN_LENGTH);
    if n < 3 {
        return Err(ScenarioError::Config("phone_loss_recovery needs a chain length of at least 3".into()));
    }
    // Recovery must land strictly inside the chain to avoid the reseed path.
    let logins = (n - 2).clamp(1, 3);
    let mut s =
        Scenario::new("phone_loss_recovery", standard_roster(), Expectation::AllLoginsSucceed).user(register(BANK));
    for _ in 0..logins {
        s = s.user(login(BANK));
    }
    Ok(s.user(UserAction::LosePhone)
        .user(UserAction::ReplacePhone(SimId::new("sim-alice-2")))
        .user(UserAction::Recover(BANK.into()))
        .user(login(BANK))
        .check(Check::NoErrors)
        .check(Check::RecoveryResumesAtSkip)
        .check(Check::ServerNextIndex { server: BANK.into(), index: logins + 2 })
        .check(Check::PhoneNextIndex { server: BANK.into(), index: logins + 2 }))
}

fn chain_exhaustion(options: &RunOptions) -> Scenario {
    let n = options.chain_length.unwrap_or(4);
    let mut s =
        Scenario::new("chain_exhaustion", standard_roster(), Expectation::AllLoginsSucceed).user(register(BANK));
    s.chain_length = Some(n);
    for _ in 0..n - 1 {
        s = s.user(login(BANK));
    }
    s = s.user(UserAction::Recover(BANK.into()));
    for _ in 0..n - 1 {
        s = s.user(login(BANK));
    }
    s.check(Check::NoErrors)
        .check(Check::ReseedThenLogins(n - 1))
        .check(Check::ServerNextIndex { server: BANK.into(), index: n })
        .check(Check::PhoneNextIndex { server: BANK.into(), index: n })
}
