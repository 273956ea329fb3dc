//! Adversary capabilities: per-frame tap scripts and the capture buffer.

use std::collections::BTreeMap;

use super::{ChannelKind, Hop, NodeId, SimError};
use crate::wire::{MessageKind, PhoneNumber};

/// XOR `xor` into the byte at `offset`. Edits past the end of a frame are
/// skipped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ByteEdit {
    pub offset: usize,
    pub xor: u8,
}

/// A frame the adversary sends on its own account.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Injection {
    pub hop: Hop,
    pub bytes: Vec<u8>,
    /// Sender number claimed on SMS hops.
    pub sender: Option<PhoneNumber>,
    /// Extra ticks before the frame enters the network.
    pub delay: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TapAction {
    Pass,
    Drop,
    Delay(u64),
    /// Send a copy of the frame (as modified so far) after `delay` ticks,
    /// optionally with a different SMS sender.
    Replay {
        delay: u64,
        sender: Option<PhoneNumber>,
    },
    Modify(Vec<ByteEdit>),
    SpoofSender(PhoneNumber),
    Inject(Injection),
}

impl TapAction {
    fn name(&self) -> &'static str {
        match self {
            TapAction::Pass => "pass",
            TapAction::Drop => "drop",
            TapAction::Delay(_) => "delay",
            TapAction::Replay { .. } => "replay",
            TapAction::Modify(_) => "modify",
            TapAction::SpoofSender(_) => "spoof_sender",
            TapAction::Inject(_) => "inject",
        }
    }
}

/// Applies `actions` to frames of `kind`. `nth` lists the 1-based
/// occurrences of that kind (counted network-wide) the rule fires on; empty
/// means every occurrence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TapRule {
    pub kind: MessageKind,
    pub channel: Option<ChannelKind>,
    pub nth: Vec<u32>,
    pub actions: Vec<TapAction>,
}

impl TapRule {
    pub fn on(kind: MessageKind, actions: Vec<TapAction>) -> Self {
        Self { kind, channel: None, nth: Vec::new(), actions }
    }

    pub fn nth(mut self, occurrences: impl IntoIterator<Item = u32>) -> Self {
        self.nth = occurrences.into_iter().collect();
        self
    }

    pub fn channel(mut self, channel: ChannelKind) -> Self {
        self.channel = Some(channel);
        self
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AdversaryPolicy {
    pub rules: Vec<TapRule>,
}

impl AdversaryPolicy {
    pub fn passive() -> Self {
        Self::default()
    }

    pub fn with_rule(mut self, rule: TapRule) -> Self {
        self.rules.push(rule);
        self
    }

    /// Rejects scripts that need more than the adversary has: reading or
    /// rewriting secure 3G payloads, or spoofing the sender of a non-SMS
    /// frame.
    pub fn validate(&self) -> Result<(), SimError> {
        for (i, rule) in self.rules.iter().enumerate() {
            let secure =
                rule.channel == Some(ChannelKind::Secure3g) || (rule.channel.is_none() && travels_secure(rule.kind));
            let sms = is_sms_kind(rule.kind) && rule.channel.is_none_or(|c| c == ChannelKind::Sms);
            if rule.channel.is_some_and(|c| !kind_channels(rule.kind).contains(&c)) {
                return Err(config(i, format!("{} never travels on {}", rule.kind, rule.channel.unwrap())));
            }
            if rule.nth.contains(&0) {
                return Err(config(i, "occurrences are 1-based".into()));
            }
            for action in &rule.actions {
                let allowed = match action {
                    TapAction::Pass | TapAction::Drop | TapAction::Delay(_) => true,
                    TapAction::Replay { sender, .. } => !secure && (sender.is_none() || sms),
                    TapAction::Modify(_) => !secure,
                    TapAction::SpoofSender(_) => sms,
                    TapAction::Inject(inj) => {
                        validate_injection(inj).map_err(|e| config(i, e))?;
                        true
                    }
                };
                if !allowed {
                    return Err(config(i, format!("{} is not possible on {}", action.name(), rule.kind)));
                }
            }
        }
        Ok(())
    }

    pub(super) fn matching(&self, kind: MessageKind, channel: ChannelKind, occurrence: u32) -> Option<&TapRule> {
        self.rules.iter().find(|r| {
            r.kind == kind
                && r.channel.is_none_or(|c| c == channel)
                && (r.nth.is_empty() || r.nth.contains(&occurrence))
        })
    }
}

/// The adversary may inject on any hop it can reach. On secure 3G that is
/// only the server→phone direction, where a fake server can talk to the
/// phone but cannot read or alter genuine traffic.
pub fn validate_injection(inj: &Injection) -> Result<(), String> {
    if inj.hop.channel == ChannelKind::Secure3g
        && !(matches!(inj.hop.from, NodeId::Server(_)) && inj.hop.to == NodeId::Phone)
    {
        return Err(format!("cannot inject on secure_3g hop {}", inj.hop));
    }
    match (inj.hop.channel, &inj.sender) {
        (ChannelKind::Sms, None) => return Err("SMS injection needs a sender number".into()),
        (ChannelKind::Sms, Some(_)) | (_, None) => {}
        (_, Some(_)) => return Err("sender number only applies to SMS".into()),
    }
    Ok(())
}

fn config(rule: usize, reason: String) -> SimError {
    SimError::Config(format!("tap rule {}: {reason}", rule + 1))
}

pub(super) fn is_sms_kind(kind: MessageKind) -> bool {
    matches!(kind, MessageKind::RegistrationSms | MessageKind::LoginSms | MessageKind::RecoverySms)
}

fn travels_secure(kind: MessageKind) -> bool {
    kind_channels(kind) == [ChannelKind::Secure3g]
}

/// Channels honest agents use for each message kind.
pub fn kind_channels(kind: MessageKind) -> &'static [ChannelKind] {
    use MessageKind::*;
    match kind {
        RegistrationSms | LoginSms | RecoverySms => &[ChannelKind::Sms],
        LoginRequest => &[ChannelKind::KioskHttp],
        ServerChallenge => &[ChannelKind::KioskHttp, ChannelKind::LocalLink],
        RegistrationRequest
        | TspRegistrationForward
        | RegistrationResponse
        | LoginSuccess
        | RecoveryRequest
        | TspRecoveryForward
        | RecoveryResponse => &[ChannelKind::Secure3g],
    }
}

/// A frame the adversary has read off an observable channel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Captured {
    pub kind: Option<MessageKind>,
    pub hop: Hop,
    pub bytes: Vec<u8>,
    pub sms_sender: Option<PhoneNumber>,
}

/// Everything the adversary has seen: frames on SMS, kiosk HTTP and the
/// local link, plus frames addressed to it.
#[derive(Debug, Clone, Default)]
pub struct AdversaryView {
    pub(super) captures: Vec<Captured>,
    pub(super) inbox: Vec<Captured>,
    pub(super) occurrences: BTreeMap<MessageKind, u32>,
}

impl AdversaryView {
    pub fn captures(&self) -> &[Captured] {
        &self.captures
    }

    pub fn inbox(&self) -> &[Captured] {
        &self.inbox
    }

    /// Latest captured frame of `kind`, optionally bound for `to`.
    pub fn latest(&self, kind: MessageKind, to: Option<&NodeId>) -> Option<&Captured> {
        self.captures.iter().rev().find(|c| c.kind == Some(kind) && to.is_none_or(|t| &c.hop.to == t))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn number() -> PhoneNumber {
        PhoneNumber::parse("15559999").unwrap()
    }

    #[test]
    fn secure_channel_limits() {
        for action in [TapAction::Pass, TapAction::Drop, TapAction::Delay(3)] {
            AdversaryPolicy::passive()
                .with_rule(TapRule::on(MessageKind::RegistrationResponse, vec![action]))
                .validate()
                .unwrap();
        }
        for action in [
            TapAction::Replay { delay: 0, sender: None },
            TapAction::Modify(vec![ByteEdit { offset: 0, xor: 1 }]),
            TapAction::SpoofSender(number()),
        ] {
            let err = AdversaryPolicy::passive()
                .with_rule(TapRule::on(MessageKind::LoginSuccess, vec![action]))
                .validate()
                .unwrap_err();
            assert_eq!(err.kind(), "config-error");
        }
    }

    #[test]
    fn injection_hops() {
        let phone_bound = Injection {
            hop: Hop::new(ChannelKind::Secure3g, NodeId::Server("bank.example".into()), NodeId::Phone),
            bytes: vec![],
            sender: None,
            delay: 0,
        };
        assert!(validate_injection(&phone_bound).is_ok());
        let to_server = Injection {
            hop: Hop::new(ChannelKind::Secure3g, NodeId::Tsp, NodeId::Server("bank.example".into())),
            ..phone_bound.clone()
        };
        assert!(validate_injection(&to_server).is_err());
        let sender_on_http = Injection {
            hop: Hop::new(ChannelKind::KioskHttp, NodeId::Adversary, NodeId::Server("bank.example".into())),
            sender: Some(number()),
            ..phone_bound
        };
        assert!(validate_injection(&sender_on_http).is_err());
    }

    #[test]
    fn sender_spoofing_only_on_sms() {
        let ok = AdversaryPolicy::passive().with_rule(TapRule::on(
            MessageKind::LoginSms,
            vec![TapAction::Replay { delay: 0, sender: Some(number()) }, TapAction::SpoofSender(number())],
        ));
        ok.validate().unwrap();
        let bad = AdversaryPolicy::passive()
            .with_rule(TapRule::on(MessageKind::LoginRequest, vec![TapAction::SpoofSender(number())]));
        assert!(bad.validate().is_err());
        let bad_channel = AdversaryPolicy::passive()
            .with_rule(TapRule::on(MessageKind::LoginSms, vec![]).channel(ChannelKind::KioskHttp));
        assert!(bad_channel.validate().is_err());
    }

    #[test]
    fn rule_matching() {
        let policy = AdversaryPolicy::passive()
            .with_rule(TapRule::on(MessageKind::ServerChallenge, vec![TapAction::Drop]).channel(ChannelKind::LocalLink))
            .with_rule(TapRule::on(MessageKind::LoginSms, vec![TapAction::Drop]).nth([2, 3]));
        assert!(policy.matching(MessageKind::ServerChallenge, ChannelKind::KioskHttp, 1).is_none());
        assert!(policy.matching(MessageKind::ServerChallenge, ChannelKind::LocalLink, 7).is_some());
        assert!(policy.matching(MessageKind::LoginSms, ChannelKind::Sms, 1).is_none());
        assert!(policy.matching(MessageKind::LoginSms, ChannelKind::Sms, 3).is_some());
    }
}
