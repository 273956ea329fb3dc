//! Deterministic discrete-event network joining the phone, kiosk, TSP and
//! servers, with an adversary tap on every frame.
//!
//! Channels:
//! - `sms`: sender number is metadata the adversary can forge; payloads are
//!   readable, integrity comes only from the envelope MAC.
//! - `secure_3g`: confidential and authenticated. The adversary sees frame
//!   kinds but can only pass, drop or delay them, plus inject on the
//!   server→phone direction.
//! - `kiosk_http`: fully adversary-controlled.
//! - `local_link`: kiosk→phone, readable by the adversary.
//!
//! Events are processed in `(tick, insertion order)`. All randomness comes
//! from one ChaCha20 stream seeded by [`SimConfig::seed`], so a run is a
//! pure function of its configuration and inputs.

pub mod adversary;
pub mod transcript;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use crate::crypto::{AuthenticatedEnvelope, Credential, LongTermPassword, SessionKey, MAC_LEN};
use crate::phone::{LoginOutcome, PhoneAgent};
use crate::server::{ServerAgent, ServerConfig, ServerError};
use crate::tsp::{SimId, TspAgent};
use crate::wire::{self, LoginRequest, Message, MessageKind, PhoneNumber};

pub use adversary::{
    validate_injection, AdversaryPolicy, AdversaryView, ByteEdit, Captured, Injection, TapAction, TapRule,
};
pub use transcript::{AccountState, DeviceState, Entry, FinalState, Outcome, Transcript};

/// Ticks between a frame entering the network and its delivery.
pub const LATENCY: u64 = 1;
pub const DEFAULT_EVENT_BUDGET: u64 = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ChannelKind {
    Sms,
    Secure3g,
    KioskHttp,
    LocalLink,
}

impl ChannelKind {
    pub const ALL: [ChannelKind; 4] =
        [ChannelKind::Sms, ChannelKind::Secure3g, ChannelKind::KioskHttp, ChannelKind::LocalLink];

    pub fn as_str(self) -> &'static str {
        match self {
            ChannelKind::Sms => "sms",
            ChannelKind::Secure3g => "secure_3g",
            ChannelKind::KioskHttp => "kiosk_http",
            ChannelKind::LocalLink => "local_link",
        }
    }
}

impl fmt::Display for ChannelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ChannelKind {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| SimError::Config(format!("unknown channel {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum NodeId {
    Phone,
    Kiosk,
    Tsp,
    Server(String),
    Adversary,
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NodeId::Phone => f.write_str("phone"),
            NodeId::Kiosk => f.write_str("kiosk"),
            NodeId::Tsp => f.write_str("tsp"),
            NodeId::Server(id) => write!(f, "server:{id}"),
            NodeId::Adversary => f.write_str("adversary"),
        }
    }
}

impl FromStr for NodeId {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "phone" => NodeId::Phone,
            "kiosk" => NodeId::Kiosk,
            "tsp" => NodeId::Tsp,
            "adversary" => NodeId::Adversary,
            _ => match s.strip_prefix("server:") {
                Some(id) if !id.is_empty() => NodeId::Server(id.to_owned()),
                _ => return Err(SimError::Config(format!("unknown node {s:?}"))),
            },
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Hop {
    pub channel: ChannelKind,
    pub from: NodeId,
    pub to: NodeId,
}

impl Hop {
    pub fn new(channel: ChannelKind, from: NodeId, to: NodeId) -> Self {
        Self { channel, from, to }
    }
}

impl fmt::Display for Hop {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}→{}", self.channel, self.from, self.to)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Origin {
    Honest,
    /// Sent, replayed or altered by the adversary.
    Adversary,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub hop: Hop,
    pub bytes: Vec<u8>,
    pub sms_sender: Option<PhoneNumber>,
    /// SIM a TSP frame is bound to.
    pub sim: Option<SimId>,
    pub origin: Origin,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SimError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("event budget of {budget} exceeded")]
    Runaway { budget: u64 },
}

impl SimError {
    pub fn kind(&self) -> &'static str {
        match self {
            SimError::Config(_) => "config-error",
            SimError::Runaway { .. } => "runaway-scenario",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimConfig {
    pub seed: u64,
    pub chain_length: u32,
    pub challenge_ttl: u64,
    pub constant_nonce: bool,
    pub event_budget: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            chain_length: crate::server::DEFAULT_CHAIN_LENGTH,
            challenge_ttl: crate::server::DEFAULT_CHALLENGE_TTL,
            constant_nonce: false,
            event_budget: DEFAULT_EVENT_BUDGET,
        }
    }
}

#[derive(Debug, Clone)]
pub struct UserProfile {
    pub user_id: String,
    pub password: LongTermPassword,
    pub phone: PhoneNumber,
    pub sim: SimId,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServerProfile {
    pub server_id: String,
    pub phone: PhoneNumber,
}

#[derive(Debug, Clone)]
pub struct Roster {
    pub user: UserProfile,
    pub servers: Vec<ServerProfile>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum UserAction {
    Register(String),
    Login(String),
    Recover(String),
    LosePhone,
    ReplacePhone(SimId),
}

/// What the user is currently doing on the phone. The phone only uses the
/// password for an operation the user started.
#[derive(Debug, Clone, PartialEq, Eq)]
enum Intent {
    Register(String),
    Login(String),
    Recover(String),
}

#[derive(Debug)]
enum Scheduled {
    Send(Frame),
    Deliver(Frame),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Counters {
    pub sent: u64,
    pub delivered: u64,
    pub dropped: u64,
}

#[derive(Debug)]
pub struct Network {
    config: SimConfig,
    rng: ChaCha20Rng,
    tick: u64,
    seq: u64,
    queue: BTreeMap<(u64, u64), Scheduled>,
    events: u64,
    user: UserProfile,
    phone: Option<PhoneAgent>,
    phone_sim: SimId,
    intent: Option<Intent>,
    tsp: TspAgent,
    servers: BTreeMap<String, ServerAgent>,
    server_numbers: BTreeMap<PhoneNumber, String>,
    kiosk_log: Vec<u8>,
    policy: AdversaryPolicy,
    adversary: AdversaryView,
    transcript: Transcript,
    counters: Counters,
    honest_macs: BTreeSet<[u8; MAC_LEN]>,
    honest_digests: BTreeSet<[u8; 32]>,
    minted_keys: Vec<SessionKey>,
    credentials_seen: BTreeSet<Credential>,
    forged_acceptances: Vec<usize>,
    hygiene_violations: Vec<String>,
}

impl Network {
    pub fn new(scenario: &str, config: SimConfig, roster: Roster, policy: AdversaryPolicy) -> Result<Self, SimError> {
        policy.validate()?;
        if config.chain_length < 2 {
            return Err(SimError::Config("chain length must be at least 2".into()));
        }
        let mut tsp = TspAgent::new();
        tsp.enroll(roster.user.sim.clone(), roster.user.phone.clone()).map_err(|e| SimError::Config(e.to_string()))?;
        let mut servers = BTreeMap::new();
        let mut server_numbers = BTreeMap::new();
        for profile in &roster.servers {
            if profile.phone == roster.user.phone || server_numbers.contains_key(&profile.phone) {
                return Err(SimError::Config(format!("phone number {} used twice", profile.phone)));
            }
            let server_config = ServerConfig {
                server_id: profile.server_id.clone(),
                phone: profile.phone.clone(),
                chain_length: config.chain_length,
                challenge_ttl: config.challenge_ttl,
                constant_nonce: config.constant_nonce,
            };
            let agent = ServerAgent::new(server_config).map_err(|e| SimError::Config(e.to_string()))?;
            if servers.insert(profile.server_id.clone(), agent).is_some() {
                return Err(SimError::Config(format!("server {} listed twice", profile.server_id)));
            }
            server_numbers.insert(profile.phone.clone(), profile.server_id.clone());
            tsp.register_server(profile.server_id.clone());
        }
        let phone = PhoneAgent::new(config.chain_length).map_err(|e| SimError::Config(e.to_string()))?;
        Ok(Self {
            rng: ChaCha20Rng::seed_from_u64(config.seed),
            transcript: Transcript::new(scenario, config.seed, config.chain_length),
            config,
            tick: 0,
            seq: 0,
            queue: BTreeMap::new(),
            events: 0,
            phone_sim: roster.user.sim.clone(),
            user: roster.user,
            phone: Some(phone),
            intent: None,
            tsp,
            servers,
            server_numbers,
            kiosk_log: Vec::new(),
            policy,
            adversary: AdversaryView::default(),
            counters: Counters::default(),
            honest_macs: BTreeSet::new(),
            honest_digests: BTreeSet::new(),
            minted_keys: Vec::new(),
            credentials_seen: BTreeSet::new(),
            forged_acceptances: Vec::new(),
            hygiene_violations: Vec::new(),
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn user(&self) -> &UserProfile {
        &self.user
    }

    pub fn phone(&self) -> Option<&PhoneAgent> {
        self.phone.as_ref()
    }

    pub fn server(&self, server_id: &str) -> Option<&ServerAgent> {
        self.servers.get(server_id)
    }

    pub fn servers(&self) -> impl Iterator<Item = &ServerAgent> {
        self.servers.values()
    }

    pub fn tsp(&self) -> &TspAgent {
        &self.tsp
    }

    /// Every byte typed into or passing through the kiosk browser.
    pub fn kiosk_log(&self) -> &[u8] {
        &self.kiosk_log
    }

    pub fn adversary(&self) -> &AdversaryView {
        &self.adversary
    }

    pub fn transcript(&self) -> &Transcript {
        &self.transcript
    }

    pub fn counters(&self) -> Counters {
        self.counters
    }

    pub fn in_flight(&self) -> usize {
        self.queue.len()
    }

    /// Credentials any server has held during the run.
    pub fn credentials_seen(&self) -> impl Iterator<Item = &Credential> {
        self.credentials_seen.iter()
    }

    /// Entries where an agent accepted an envelope or digest no honest agent
    /// produced. Always empty unless a primitive is broken.
    pub fn forged_acceptances(&self) -> &[usize] {
        &self.forged_acceptances
    }

    /// Points where an agent's state held a secret it must not keep.
    pub fn hygiene_violations(&self) -> &[String] {
        &self.hygiene_violations
    }

    /// Runs one user action to completion.
    pub fn perform(&mut self, action: &UserAction) -> Result<(), SimError> {
        match action {
            UserAction::Register(server) => self.start_registration(server),
            UserAction::Login(server) => self.start_login(server),
            UserAction::Recover(server) => self.start_recovery(server),
            UserAction::LosePhone => self.lose_phone(),
            UserAction::ReplacePhone(sim) => self.replace_phone(sim.clone()),
        }
        self.run_until_idle()
    }

    /// Queues an adversary frame; it goes through the tap like any other.
    pub fn inject(&mut self, injection: Injection) -> Result<(), SimError> {
        validate_injection(&injection).map_err(SimError::Config)?;
        let frame = Frame {
            hop: injection.hop,
            bytes: injection.bytes,
            sms_sender: injection.sender,
            sim: None,
            origin: Origin::Adversary,
        };
        self.schedule(injection.delay, Scheduled::Send(frame));
        Ok(())
    }

    /// A login request for the roster user, sent by the adversary through
    /// its own browser.
    pub fn adversary_login_request(&mut self, server_id: &str) -> Result<(), SimError> {
        let bytes = wire::encode(&LoginRequest { user_id: self.user.user_id.clone() }.into());
        self.inject(Injection {
            hop: Hop::new(ChannelKind::KioskHttp, NodeId::Adversary, NodeId::Server(server_id.to_owned())),
            bytes,
            sender: None,
            delay: 0,
        })
    }

    pub fn run_until_idle(&mut self) -> Result<(), SimError> {
        while let Some(((tick, _), event)) = self.queue.pop_first() {
            self.events += 1;
            if self.events > self.config.event_budget {
                return Err(SimError::Runaway { budget: self.config.event_budget });
            }
            self.tick = tick;
            match event {
                Scheduled::Send(frame) => self.send(frame),
                Scheduled::Deliver(frame) => self.deliver(frame),
            }
        }
        Ok(())
    }

    /// Closes the transcript with the final agent state.
    pub fn finish(mut self) -> Transcript {
        let mut state = FinalState {
            sent: self.counters.sent,
            delivered: self.counters.delivered,
            dropped: self.counters.dropped,
            ..FinalState::default()
        };
        for server in self.servers.values() {
            for account in server.accounts() {
                state.accounts.push(AccountState {
                    server_id: server.server_id().to_owned(),
                    user_id: account.user_id().to_owned(),
                    status: account.status().to_string(),
                    next_index: account.next_index(),
                    seed: *account.seed().as_bytes(),
                });
            }
        }
        if let Some(phone) = &self.phone {
            for record in phone.records() {
                state
                    .devices
                    .push(DeviceState { server_id: record.server_id().to_owned(), next_index: record.next_index() });
            }
        }
        self.transcript.final_state = Some(state);
        self.transcript
    }

    // ----- user actions -------------------------------------------------

    fn start_registration(&mut self, server_id: &str) {
        let user_id = self.user.user_id.clone();
        let Some(phone) = self.phone.as_mut() else {
            return self.note("ui", "user", "phone", "register", Outcome::Rejected("no-device".into()));
        };
        match phone.begin_registration(&user_id, server_id) {
            Ok(request) => {
                self.intent = Some(Intent::Register(server_id.to_owned()));
                self.send_honest(ChannelKind::Secure3g, NodeId::Phone, NodeId::Tsp, request.into());
            }
            Err(e) => self.note("ui", "user", "phone", "register", Outcome::Rejected(e.kind().into())),
        }
    }

    fn start_login(&mut self, server_id: &str) {
        let typed = self.user.user_id.clone().into_bytes();
        self.kiosk_log.extend_from_slice(&typed);
        self.transcript.entries.push(Entry {
            tick: self.tick,
            channel: "keyboard".into(),
            src: "user".into(),
            dst: "kiosk".into(),
            kind: "keystrokes".into(),
            message: None,
            origin: Origin::Honest,
            to: Some(NodeId::Kiosk),
            frame: Some(typed),
            outcome: Outcome::Logged,
            mutated: false,
        });
        self.intent = Some(Intent::Login(server_id.to_owned()));
        let request: Message = LoginRequest { user_id: self.user.user_id.clone() }.into();
        self.kiosk_log.extend_from_slice(&request.encode());
        self.send_honest(ChannelKind::KioskHttp, NodeId::Kiosk, NodeId::Server(server_id.to_owned()), request);
    }

    fn start_recovery(&mut self, server_id: &str) {
        let user_id = self.user.user_id.clone();
        let Some(phone) = self.phone.as_mut() else {
            return self.note("ui", "user", "phone", "recover", Outcome::Rejected("no-device".into()));
        };
        let request = phone.begin_recovery(&user_id, server_id);
        self.intent = Some(Intent::Recover(server_id.to_owned()));
        self.send_honest(ChannelKind::Secure3g, NodeId::Phone, NodeId::Tsp, request.into());
    }

    fn lose_phone(&mut self) {
        self.phone = None;
        self.intent = None;
        let sim = self.phone_sim.clone();
        let outcome = match self.tsp.disable_sim(&sim) {
            Ok(()) => Outcome::Ok,
            Err(e) => Outcome::Rejected(e.kind().into()),
        };
        self.note("admin", "user", "tsp", &format!("disable-sim {sim}"), outcome);
    }

    fn replace_phone(&mut self, new_sim: SimId) {
        let old = self.phone_sim.clone();
        let outcome = match self.tsp.reissue_sim(&old, new_sim.clone()) {
            Ok(()) => {
                self.phone = Some(PhoneAgent::new(self.config.chain_length).expect("validated chain length"));
                self.phone_sim = new_sim.clone();
                Outcome::Ok
            }
            Err(e) => Outcome::Rejected(e.kind().into()),
        };
        self.note("admin", "user", "tsp", &format!("reissue-sim {old}->{new_sim}"), outcome);
    }

    fn note(&mut self, channel: &str, src: &str, dst: &str, kind: &str, outcome: Outcome) {
        self.transcript.entries.push(Entry {
            tick: self.tick,
            channel: channel.into(),
            src: src.into(),
            dst: dst.into(),
            kind: kind.into(),
            message: None,
            origin: Origin::Honest,
            to: None,
            frame: None,
            outcome,
            mutated: false,
        });
    }

    // ----- frame plumbing -----------------------------------------------

    fn schedule(&mut self, delay: u64, event: Scheduled) {
        self.seq += 1;
        self.queue.insert((self.tick + delay, self.seq), event);
    }

    fn send_honest(&mut self, channel: ChannelKind, from: NodeId, to: NodeId, message: Message) {
        let sim = match (&from, &to) {
            (NodeId::Phone, NodeId::Tsp) => Some(self.phone_sim.clone()),
            _ => None,
        };
        self.send(Frame {
            hop: Hop::new(channel, from, to),
            bytes: message.encode(),
            sms_sender: None,
            sim,
            origin: Origin::Honest,
        });
    }

    /// An SMS from the phone. The network stamps the sender number from the
    /// SIM directory, and routes by destination number.
    fn send_phone_sms(&mut self, to_number: &PhoneNumber, message: Message) {
        let sender =
            self.tsp.is_enabled(&self.phone_sim).then(|| self.tsp.number_of(&self.phone_sim).cloned()).flatten();
        let bytes = message.encode();
        let Some(sender) = sender else {
            return self.log_drop(ChannelKind::Sms, NodeId::Phone, None, &bytes, None, "sim-disabled");
        };
        let Some(server) = self.server_numbers.get(to_number).cloned() else {
            return self.log_drop(ChannelKind::Sms, NodeId::Phone, None, &bytes, Some(&sender), "unknown-number");
        };
        self.send(Frame {
            hop: Hop::new(ChannelKind::Sms, NodeId::Phone, NodeId::Server(server)),
            bytes,
            sms_sender: Some(sender),
            sim: None,
            origin: Origin::Honest,
        });
    }

    /// Puts a frame on the wire: the adversary reads what it can and the tap
    /// script decides what gets delivered.
    fn send(&mut self, mut frame: Frame) {
        self.counters.sent += 1;
        let kind = MessageKind::peek(&frame.bytes);
        if frame.hop.channel != ChannelKind::Secure3g && frame.origin == Origin::Honest {
            self.adversary.captures.push(Captured {
                kind,
                hop: frame.hop.clone(),
                bytes: frame.bytes.clone(),
                sms_sender: frame.sms_sender.clone(),
            });
        }
        let rule = kind.and_then(|k| {
            let n = self.adversary.occurrences.entry(k).or_insert(0);
            *n += 1;
            self.policy.matching(k, frame.hop.channel, *n).cloned()
        });

        let mut deliver = true;
        let mut delay = 0;
        let mut extras = Vec::new();
        for action in rule.iter().flat_map(|r| r.actions.iter()) {
            match action {
                TapAction::Pass => {}
                TapAction::Drop => deliver = false,
                TapAction::Delay(d) => delay += d,
                TapAction::Replay { delay: d, sender } => {
                    let mut copy = frame.clone();
                    copy.origin = Origin::Adversary;
                    if sender.is_some() {
                        copy.sms_sender = sender.clone();
                    }
                    extras.push((*d, copy));
                }
                TapAction::Modify(edits) => {
                    for edit in edits {
                        if let Some(b) = frame.bytes.get_mut(edit.offset) {
                            *b ^= edit.xor;
                        }
                    }
                    frame.origin = Origin::Adversary;
                }
                TapAction::SpoofSender(number) => {
                    frame.sms_sender = Some(number.clone());
                    frame.origin = Origin::Adversary;
                }
                TapAction::Inject(inj) => extras.push((
                    inj.delay,
                    Frame {
                        hop: inj.hop.clone(),
                        bytes: inj.bytes.clone(),
                        sms_sender: inj.sender.clone(),
                        sim: None,
                        origin: Origin::Adversary,
                    },
                )),
            }
        }
        if deliver {
            self.schedule(LATENCY + delay, Scheduled::Deliver(frame));
        } else {
            self.log_drop(
                frame.hop.channel,
                frame.hop.from.clone(),
                Some(frame.hop.to.clone()),
                &frame.bytes,
                frame.sms_sender.as_ref(),
                "adversary",
            );
            // A dropped frame keeps its origin for the record.
            if let Some(last) = self.transcript.entries.last_mut() {
                last.origin = frame.origin;
                if frame.origin == Origin::Adversary {
                    last.src = NodeId::Adversary.to_string();
                }
            }
        }
        for (d, extra) in extras {
            self.schedule(d, Scheduled::Send(extra));
        }
    }

    fn log_drop(
        &mut self,
        channel: ChannelKind,
        from: NodeId,
        to: Option<NodeId>,
        bytes: &[u8],
        sender: Option<&PhoneNumber>,
        reason: &str,
    ) {
        self.counters.dropped += 1;
        let kind = MessageKind::peek(bytes);
        self.transcript.entries.push(Entry {
            tick: self.tick,
            channel: channel_label(channel, sender),
            src: from.to_string(),
            dst: to.as_ref().map_or_else(|| "-".into(), ToString::to_string),
            kind: kind.map_or_else(|| "invalid".into(), |k| k.name().into()),
            message: kind,
            origin: Origin::Honest,
            to,
            frame: visible(channel, bytes),
            outcome: Outcome::Dropped(reason.into()),
            mutated: false,
        });
    }

    fn deliver(&mut self, frame: Frame) {
        self.counters.delivered += 1;
        let before = self.state_of(&frame.hop.to);
        let (outcome, outgoing) = match frame.hop.to.clone() {
            NodeId::Phone => self.at_phone(&frame),
            NodeId::Kiosk => self.at_kiosk(&frame),
            NodeId::Tsp => self.at_tsp(&frame),
            NodeId::Server(id) => self.at_server(&id, &frame),
            NodeId::Adversary => {
                self.adversary.inbox.push(Captured {
                    kind: MessageKind::peek(&frame.bytes),
                    hop: frame.hop.clone(),
                    bytes: frame.bytes.clone(),
                    sms_sender: frame.sms_sender.clone(),
                });
                (Outcome::Captured, Vec::new())
            }
        };
        let mutated = before != self.state_of(&frame.hop.to);
        let kind = MessageKind::peek(&frame.bytes);
        let index = self.transcript.entries.len();
        if outcome.is_accepted() && !self.traces_to_honest_seal(&frame) {
            self.forged_acceptances.push(index);
        }
        self.transcript.entries.push(Entry {
            tick: self.tick,
            channel: channel_label(frame.hop.channel, frame.sms_sender.as_ref()),
            src: match frame.origin {
                Origin::Honest => frame.hop.from.to_string(),
                Origin::Adversary => NodeId::Adversary.to_string(),
            },
            dst: frame.hop.to.to_string(),
            kind: kind.map_or_else(|| "invalid".into(), |k| k.name().into()),
            message: kind,
            origin: frame.origin,
            to: Some(frame.hop.to.clone()),
            frame: visible(frame.hop.channel, &frame.bytes),
            outcome,
            mutated,
        });
        self.audit(&frame.hop.to);
        for out in outgoing {
            match out {
                Outgoing::Frame(channel, to, message) => self.send_honest(channel, frame.hop.to.clone(), to, message),
                Outgoing::Sms(number, message) => self.send_phone_sms(&number, message),
                Outgoing::ToPhoneSim(sim, message) => self.send(Frame {
                    hop: Hop::new(ChannelKind::Secure3g, NodeId::Tsp, NodeId::Phone),
                    bytes: message.encode(),
                    sms_sender: None,
                    sim: Some(sim),
                    origin: Origin::Honest,
                }),
            }
        }
    }

    /// Persistent state of a node, for detecting mutation.
    fn state_of(&self, node: &NodeId) -> Vec<u8> {
        match node {
            NodeId::Phone => self.phone.as_ref().map(PhoneAgent::records_snapshot).unwrap_or_default(),
            NodeId::Server(id) => self.servers.get(id).map(ServerAgent::snapshot).unwrap_or_default(),
            NodeId::Tsp => self.tsp.snapshot(),
            NodeId::Kiosk | NodeId::Adversary => Vec::new(),
        }
    }

    fn traces_to_honest_seal(&self, frame: &Frame) -> bool {
        match Message::decode(&frame.bytes) {
            Ok(Message::RegistrationSms(m)) => self.is_honest_envelope(&m.envelope),
            Ok(Message::LoginSms(m)) => self.is_honest_envelope(&m.envelope),
            Ok(Message::RecoverySms(m)) => self.is_honest_envelope(&m.envelope),
            Ok(Message::LoginSuccess(m)) => self.honest_digests.contains(&m.digest),
            _ => true,
        }
    }

    fn is_honest_envelope(&self, envelope: &AuthenticatedEnvelope) -> bool {
        self.honest_macs.contains(envelope.mac())
    }

    fn audit(&mut self, node: &NodeId) {
        match node {
            NodeId::Phone => {
                let Some(phone) = &self.phone else { return };
                let snapshot = phone.snapshot();
                if contains(&snapshot, self.user.password.as_bytes()) {
                    self.hygiene_violations.push(format!("tick {}: phone holds the password", self.tick));
                }
                if self.credentials_seen.iter().any(|c| contains(&snapshot, c.as_bytes())) {
                    self.hygiene_violations.push(format!("tick {}: phone holds a credential", self.tick));
                }
            }
            NodeId::Server(id) => {
                if let Some(server) = self.servers.get(id) {
                    for account in server.accounts() {
                        if let Some(c) = account.credential() {
                            self.credentials_seen.insert(*c);
                        }
                    }
                }
            }
            NodeId::Tsp => {
                let snapshot = self.tsp.snapshot();
                if self.minted_keys.iter().any(|k| contains(&snapshot, k.as_bytes())) {
                    self.hygiene_violations.push(format!("tick {}: TSP kept K_sd", self.tick));
                }
            }
            NodeId::Kiosk | NodeId::Adversary => {}
        }
    }

    // ----- node handlers --------------------------------------------------

    fn at_phone(&mut self, frame: &Frame) -> (Outcome, Vec<Outgoing>) {
        if self.phone.is_none() {
            return (Outcome::Ignored("no-device".into()), Vec::new());
        }
        if frame.sim.as_ref().is_some_and(|sim| sim != &self.phone_sim) {
            return (Outcome::Ignored("sim-mismatch".into()), Vec::new());
        }
        let message = match Message::decode(&frame.bytes) {
            Ok(m) => m,
            Err(e) => return (Outcome::Rejected(e.kind().into()), Vec::new()),
        };
        let password = self.user.password.clone();
        let phone = self.phone.as_mut().expect("checked above");
        match message {
            Message::RegistrationResponse(resp) => {
                if self.intent != Some(Intent::Register(resp.server_id.clone())) {
                    return (Outcome::Ignored("no-user-intent".into()), Vec::new());
                }
                self.intent = None;
                match phone.complete_registration(&resp, &password, &mut self.rng) {
                    Ok(out) => {
                        self.honest_macs.insert(*out.message.envelope.mac());
                        (Outcome::Ok, vec![Outgoing::Sms(out.to, out.message.into())])
                    }
                    Err(e) => (Outcome::Rejected(e.kind().into()), Vec::new()),
                }
            }
            Message::ServerChallenge(challenge) => {
                if self.intent != Some(Intent::Login(challenge.server_id.clone())) {
                    return (Outcome::Ignored("no-user-intent".into()), Vec::new());
                }
                self.intent = None;
                match phone.build_login_sms(&challenge, &password, &mut self.rng) {
                    Ok(out) => {
                        self.honest_macs.insert(*out.message.envelope.mac());
                        (Outcome::Ok, vec![Outgoing::Sms(out.to, out.message.into())])
                    }
                    Err(e) => (Outcome::Rejected(e.kind().into()), Vec::new()),
                }
            }
            Message::LoginSuccess(success) => match phone.verify_success(&success) {
                Ok(LoginOutcome::Accepted { index }) => {
                    (Outcome::Accepted { index: Some(index), reseed: false }, Vec::new())
                }
                Ok(LoginOutcome::Rejected) => (Outcome::Rejected("bad-digest".into()), Vec::new()),
                Err(e) => (Outcome::Rejected(e.kind().into()), Vec::new()),
            },
            Message::RecoveryResponse(resp) => {
                if self.intent != Some(Intent::Recover(resp.server_id.clone())) {
                    return (Outcome::Ignored("no-user-intent".into()), Vec::new());
                }
                self.intent = None;
                match phone.complete_recovery(&resp, &password, &mut self.rng) {
                    Ok(out) => {
                        self.honest_macs.insert(*out.message.envelope.mac());
                        (Outcome::Ok, vec![Outgoing::Sms(out.to, out.message.into())])
                    }
                    Err(e) => (Outcome::Rejected(e.kind().into()), Vec::new()),
                }
            }
            _ => (Outcome::Ignored("unexpected-kind".into()), Vec::new()),
        }
    }

    fn at_kiosk(&mut self, frame: &Frame) -> (Outcome, Vec<Outgoing>) {
        self.kiosk_log.extend_from_slice(&frame.bytes);
        match Message::decode(&frame.bytes) {
            Ok(message @ Message::ServerChallenge(_)) => {
                (Outcome::Relayed, vec![Outgoing::Frame(ChannelKind::LocalLink, NodeId::Phone, message)])
            }
            Ok(_) => (Outcome::Ignored("unexpected-kind".into()), Vec::new()),
            Err(e) => (Outcome::Rejected(e.kind().into()), Vec::new()),
        }
    }

    fn at_tsp(&mut self, frame: &Frame) -> (Outcome, Vec<Outgoing>) {
        let message = match Message::decode(&frame.bytes) {
            Ok(m) => m,
            Err(e) => return (Outcome::Rejected(e.kind().into()), Vec::new()),
        };
        let from_phone = frame.hop.from == NodeId::Phone;
        let result = match (message, &frame.sim) {
            (Message::RegistrationRequest(req), Some(sim)) if from_phone => {
                self.tsp.forward_registration(&req, sim, &mut self.rng).map(|fwd| {
                    self.minted_keys.push(fwd.session_key);
                    vec![Outgoing::Frame(ChannelKind::Secure3g, NodeId::Server(req.server_id), fwd.into())]
                })
            }
            (Message::RecoveryRequest(req), Some(sim)) if from_phone => self
                .tsp
                .forward_recovery(&req, sim)
                .map(|fwd| vec![Outgoing::Frame(ChannelKind::Secure3g, NodeId::Server(req.server_id), fwd.into())]),
            (Message::RegistrationResponse(resp), _) if !from_phone => {
                self.tsp.relay_target(&resp.server_id).map(|sim| vec![Outgoing::ToPhoneSim(sim.clone(), resp.into())])
            }
            (Message::RecoveryResponse(resp), _) if !from_phone => {
                self.tsp.relay_target(&resp.server_id).map(|sim| vec![Outgoing::ToPhoneSim(sim.clone(), resp.into())])
            }
            _ => return (Outcome::Ignored("unexpected-kind".into()), Vec::new()),
        };
        match result {
            Ok(out) => (Outcome::Relayed, out),
            Err(e) => (Outcome::Rejected(e.kind().into()), Vec::new()),
        }
    }

    fn at_server(&mut self, server_id: &str, frame: &Frame) -> (Outcome, Vec<Outgoing>) {
        let now = self.tick;
        let Some(server) = self.servers.get_mut(server_id) else {
            return (Outcome::Ignored("no-such-server".into()), Vec::new());
        };
        let message = match Message::decode(&frame.bytes) {
            Ok(m) => m,
            Err(e) => return (Outcome::Rejected(e.kind().into()), Vec::new()),
        };
        let on_sms = frame.hop.channel == ChannelKind::Sms;
        let sender = match (&frame.sms_sender, on_sms) {
            (Some(number), true) => Ok(number.clone()),
            _ => Err("no sender number"),
        };
        let sender = || sender.clone().map_err(|_| ServerError::MalformedPayload);
        let rejected = |e: ServerError| (Outcome::Rejected(e.kind().into()), Vec::new());
        match message {
            Message::TspRegistrationForward(fwd) if frame.hop.from == NodeId::Tsp => {
                match server.handle_tsp_registration(&fwd, &mut self.rng) {
                    Ok(resp) => (Outcome::Ok, vec![Outgoing::Frame(ChannelKind::Secure3g, NodeId::Tsp, resp.into())]),
                    Err(e) => rejected(e),
                }
            }
            Message::TspRecoveryForward(fwd) if frame.hop.from == NodeId::Tsp => {
                match server.handle_tsp_recovery(&fwd, now, &mut self.rng) {
                    Ok(resp) => (Outcome::Ok, vec![Outgoing::Frame(ChannelKind::Secure3g, NodeId::Tsp, resp.into())]),
                    Err(e) => rejected(e),
                }
            }
            Message::LoginRequest(req) if frame.hop.channel == ChannelKind::KioskHttp => {
                match server.issue_challenge(&req, now, &mut self.rng) {
                    Ok(challenge) => (
                        Outcome::Ok,
                        vec![Outgoing::Frame(ChannelKind::KioskHttp, frame.hop.from.clone(), challenge.into())],
                    ),
                    Err(e) => rejected(e),
                }
            }
            Message::RegistrationSms(sms) if on_sms => {
                match sender().and_then(|s| server.handle_registration_sms(&sms, &s)) {
                    Ok(()) => (Outcome::Accepted { index: None, reseed: false }, Vec::new()),
                    Err(e) => rejected(e),
                }
            }
            Message::LoginSms(sms) if on_sms => match sender().and_then(|s| server.verify_login_sms(&sms, &s, now)) {
                Ok(accepted) => {
                    self.honest_digests.insert(accepted.success.digest);
                    (
                        Outcome::Accepted { index: Some(accepted.index), reseed: false },
                        vec![Outgoing::Frame(ChannelKind::Secure3g, NodeId::Phone, accepted.success.into())],
                    )
                }
                Err(e) => rejected(e),
            },
            Message::RecoverySms(sms) if on_sms => {
                match sender().and_then(|s| server.verify_recovery_sms(&sms, &s, now)) {
                    Ok(r) => (Outcome::Accepted { index: Some(r.index), reseed: r.reseeded }, Vec::new()),
                    Err(e) => rejected(e),
                }
            }
            _ => (Outcome::Ignored("unexpected-kind".into()), Vec::new()),
        }
    }
}

enum Outgoing {
    Frame(ChannelKind, NodeId, Message),
    Sms(PhoneNumber, Message),
    ToPhoneSim(SimId, Message),
}

fn channel_label(channel: ChannelKind, sender: Option<&PhoneNumber>) -> String {
    match (channel, sender) {
        (ChannelKind::Sms, Some(n)) => format!("sms:{n}"),
        _ => channel.to_string(),
    }
}

/// Secure 3G payloads are opaque to observers and stay out of the log.
fn visible(channel: ChannelKind, bytes: &[u8]) -> Option<Vec<u8>> {
    (channel != ChannelKind::Secure3g).then(|| bytes.to_vec())
}

pub(crate) fn contains(haystack: &[u8], needle: &[u8]) -> bool {
    !needle.is_empty() && haystack.windows(needle.len()).any(|w| w == needle)
}
