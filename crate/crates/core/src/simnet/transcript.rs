//! Line-oriented record of a simulation run.
//!
//! ```text
//! # chainpass transcript v1
//! # scenario replay
//! # seed 7
//! # chain_length 100
//! 3  sms:15550001  phone→server:bank.example  LoginSms  4f01...  accepted@0;mutated
//! # final server:bank.example alice status=active next_index=1
//! ```
//!
//! Event lines are `tick  channel  src→dst  kind  hex(frame)  outcome`,
//! separated by two spaces. Frames the adversary produced or altered show
//! `adversary` as their source.

use std::fmt::{self, Write as _};

use super::{NodeId, Origin};
use crate::wire::MessageKind;

pub const HEADER_LINES: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Outcome {
    /// A verification succeeded; `index` is the chain index consumed.
    Accepted {
        index: Option<u32>,
        reseed: bool,
    },
    Rejected(String),
    /// Handled without a verification step (challenge issued, forwarded).
    Ok,
    Relayed,
    Logged,
    Captured,
    Ignored(String),
    Dropped(String),
}

impl Outcome {
    pub fn is_accepted(&self) -> bool {
        matches!(self, Outcome::Accepted { .. })
    }

    pub fn rejection(&self) -> Option<&str> {
        match self {
            Outcome::Rejected(kind) => Some(kind),
            _ => None,
        }
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Outcome::Accepted { index: None, .. } => f.write_str("accepted"),
            Outcome::Accepted { index: Some(i), reseed: false } => write!(f, "accepted@{i}"),
            Outcome::Accepted { index: Some(i), reseed: true } => write!(f, "accepted@{i}+reseed"),
            Outcome::Rejected(kind) => write!(f, "rejected:{kind}"),
            Outcome::Ok => f.write_str("ok"),
            Outcome::Relayed => f.write_str("relayed"),
            Outcome::Logged => f.write_str("logged"),
            Outcome::Captured => f.write_str("captured"),
            Outcome::Ignored(reason) => write!(f, "ignored:{reason}"),
            Outcome::Dropped(reason) => write!(f, "dropped:{reason}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entry {
    pub tick: u64,
    /// Channel label; SMS lines carry the claimed sender (`sms:15550001`).
    pub channel: String,
    pub src: String,
    pub dst: String,
    /// Message name, or an event name for non-frame entries.
    pub kind: String,
    pub message: Option<MessageKind>,
    pub origin: Origin,
    pub to: Option<NodeId>,
    pub frame: Option<Vec<u8>>,
    pub outcome: Outcome,
    /// The recipient's persistent state changed while handling this entry.
    pub mutated: bool,
}

impl Entry {
    pub fn by_adversary(&self) -> bool {
        self.origin == Origin::Adversary
    }
}

impl fmt::Display for Entry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let frame = self.frame.as_deref().map(hex::encode).unwrap_or_else(|| "-".into());
        write!(
            f,
            "{}  {}  {}→{}  {}  {}  {}",
            self.tick, self.channel, self.src, self.dst, self.kind, frame, self.outcome
        )?;
        if self.mutated {
            f.write_str(";mutated")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AccountState {
    pub server_id: String,
    pub user_id: String,
    pub status: String,
    pub next_index: u32,
    pub seed: [u8; 16],
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeviceState {
    pub server_id: String,
    pub next_index: u32,
}

/// Agent state at the end of a run.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FinalState {
    pub accounts: Vec<AccountState>,
    pub devices: Vec<DeviceState>,
    pub sent: u64,
    pub delivered: u64,
    pub dropped: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transcript {
    pub scenario: String,
    pub seed: u64,
    pub chain_length: u32,
    pub entries: Vec<Entry>,
    pub final_state: Option<FinalState>,
}

impl Transcript {
    pub fn new(scenario: impl Into<String>, seed: u64, chain_length: u32) -> Self {
        Self { scenario: scenario.into(), seed, chain_length, entries: Vec::new(), final_state: None }
    }

    /// 1-based line number of entry `index` in [`render`](Self::render).
    pub fn line_of(index: usize) -> usize {
        HEADER_LINES + index + 1
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        writeln!(out, "# chainpass transcript v1").unwrap();
        writeln!(out, "# scenario {}", self.scenario).unwrap();
        writeln!(out, "# seed {}", self.seed).unwrap();
        writeln!(out, "# chain_length {}", self.chain_length).unwrap();
        for entry in &self.entries {
            writeln!(out, "{entry}").unwrap();
        }
        if let Some(state) = &self.final_state {
            for a in &state.accounts {
                writeln!(
                    out,
                    "# final server:{} {} status={} next_index={} seed={}",
                    a.server_id,
                    a.user_id,
                    a.status,
                    a.next_index,
                    hex::encode(a.seed)
                )
                .unwrap();
            }
            for d in &state.devices {
                writeln!(out, "# final phone {} next_index={}", d.server_id, d.next_index).unwrap();
            }
            writeln!(out, "# final frames sent={} delivered={} dropped={}", state.sent, state.delivered, state.dropped)
                .unwrap();
        }
        out
    }
}
