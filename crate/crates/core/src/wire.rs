//! Binary frames for every protocol message.
//!
//! ```text
//! 0x4F  0x01  msg_type  field*      field = u32 BE length ‖ bytes
//! ```
//!
//! Field count and order are fixed per message type. Strings are UTF-8,
//! integers are a 4-byte big-endian field, and an envelope is flattened
//! into three consecutive fields (ciphertext, IV, MAC). A frame must be
//! consumed exactly; trailing bytes are an error.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::codec::{put_field, FieldReader};
use crate::crypto::{AuthenticatedEnvelope, Nonce, ServerSeed, SessionKey, DIGEST_LEN, IV_LEN, MAC_LEN};

pub const MAGIC: u8 = 0x4F;
pub const VERSION: u8 = 0x01;
const HEADER_LEN: usize = 3;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WireError {
    #[error("unsupported frame header")]
    UnsupportedFrame,
    #[error("unknown message type 0x{0:02x}")]
    UnknownKind(u8),
    #[error("malformed frame: {0}")]
    MalformedFrame(&'static str),
}

impl WireError {
    pub fn kind(&self) -> &'static str {
        match self {
            WireError::UnsupportedFrame => "unsupported-frame",
            WireError::UnknownKind(_) => "unknown-kind",
            WireError::MalformedFrame(_) => "malformed-frame",
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("phone number must be 6 to 15 ASCII digits, got {0:?}")]
pub struct InvalidPhoneNumber(pub String);

/// SMS address (`T_u`, `T_s`): 6..=15 decimal digits.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PhoneNumber(String);

impl PhoneNumber {
    pub fn parse(digits: &str) -> Result<Self, InvalidPhoneNumber> {
        let ok = (6..=15).contains(&digits.len()) && digits.bytes().all(|b| b.is_ascii_digit());
        if ok {
            Ok(Self(digits.to_owned()))
        } else {
            Err(InvalidPhoneNumber(digits.to_owned()))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl FromStr for PhoneNumber {
    type Err = InvalidPhoneNumber;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::parse(s)
    }
}

impl fmt::Display for PhoneNumber {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Debug for PhoneNumber {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PhoneNumber({})", self.0)
    }
}

/// Message type byte.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum MessageKind {
    RegistrationRequest = 0x01,
    TspRegistrationForward = 0x02,
    RegistrationResponse = 0x03,
    RegistrationSms = 0x04,
    LoginRequest = 0x05,
    ServerChallenge = 0x06,
    LoginSms = 0x07,
    LoginSuccess = 0x08,
    RecoveryRequest = 0x09,
    TspRecoveryForward = 0x0A,
    RecoveryResponse = 0x0B,
    RecoverySms = 0x0C,
}

impl MessageKind {
    pub const ALL: [MessageKind; 12] = [
        MessageKind::RegistrationRequest,
        MessageKind::TspRegistrationForward,
        MessageKind::RegistrationResponse,
        MessageKind::RegistrationSms,
        MessageKind::LoginRequest,
        MessageKind::ServerChallenge,
        MessageKind::LoginSms,
        MessageKind::LoginSuccess,
        MessageKind::RecoveryRequest,
        MessageKind::TspRecoveryForward,
        MessageKind::RecoveryResponse,
        MessageKind::RecoverySms,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.iter().copied().find(|k| k.code() == code)
    }

    pub fn name(self) -> &'static str {
        match self {
            MessageKind::RegistrationRequest => "RegistrationRequest",
            MessageKind::TspRegistrationForward => "TspRegistrationForward",
            MessageKind::RegistrationResponse => "RegistrationResponse",
            MessageKind::RegistrationSms => "RegistrationSms",
            MessageKind::LoginRequest => "LoginRequest",
            MessageKind::ServerChallenge => "ServerChallenge",
            MessageKind::LoginSms => "LoginSms",
            MessageKind::LoginSuccess => "LoginSuccess",
            MessageKind::RecoveryRequest => "RecoveryRequest",
            MessageKind::TspRecoveryForward => "TspRecoveryForward",
            MessageKind::RecoveryResponse => "RecoveryResponse",
            MessageKind::RecoverySms => "RecoverySms",
        }
    }

    /// Kind of a raw frame, judged from its header alone.
    pub fn peek(frame: &[u8]) -> Option<Self> {
        match frame {
            [MAGIC, VERSION, code, ..] => Self::from_code(*code),
            _ => None,
        }
    }
}

impl fmt::Display for MessageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MessageKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL.iter().copied().find(|k| k.name() == s).ok_or_else(|| format!("unknown message kind {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegistrationRequest {
    pub user_id: String,
    pub server_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TspRegistrationForward {
    pub user_id: String,
    pub user_phone: PhoneNumber,
    pub session_key: SessionKey,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegistrationResponse {
    pub server_id: String,
    pub seed: ServerSeed,
    pub server_phone: PhoneNumber,
    pub session_key: SessionKey,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegistrationSms {
    pub user_id: String,
    pub envelope: AuthenticatedEnvelope,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoginRequest {
    pub user_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServerChallenge {
    pub server_id: String,
    pub nonce: Nonce,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoginSms {
    pub user_id: String,
    pub envelope: AuthenticatedEnvelope,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoginSuccess {
    pub digest: [u8; DIGEST_LEN],
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecoveryRequest {
    pub user_id: String,
    pub server_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TspRecoveryForward {
    pub user_id: String,
    pub user_phone: PhoneNumber,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecoveryResponse {
    pub server_id: String,
    pub seed: ServerSeed,
    pub server_phone: PhoneNumber,
    pub index: u32,
    pub nonce: Nonce,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecoverySms {
    pub user_id: String,
    pub envelope: AuthenticatedEnvelope,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Message {
    RegistrationRequest(RegistrationRequest),
    TspRegistrationForward(TspRegistrationForward),
    RegistrationResponse(RegistrationResponse),
    RegistrationSms(RegistrationSms),
    LoginRequest(LoginRequest),
    ServerChallenge(ServerChallenge),
    LoginSms(LoginSms),
    LoginSuccess(LoginSuccess),
    RecoveryRequest(RecoveryRequest),
    TspRecoveryForward(TspRecoveryForward),
    RecoveryResponse(RecoveryResponse),
    RecoverySms(RecoverySms),
}

macro_rules! message_from {
    ($($variant:ident),*) => {
        $(impl From<$variant> for Message {
            fn from(m: $variant) -> Self {
                Message::$variant(m)
            }
        })*
    };
}

message_from!(
    RegistrationRequest,
    TspRegistrationForward,
    RegistrationResponse,
    RegistrationSms,
    LoginRequest,
    ServerChallenge,
    LoginSms,
    LoginSuccess,
    RecoveryRequest,
    TspRecoveryForward,
    RecoveryResponse,
    RecoverySms
);

impl Message {
    pub fn kind(&self) -> MessageKind {
        match self {
            Message::RegistrationRequest(_) => MessageKind::RegistrationRequest,
            Message::TspRegistrationForward(_) => MessageKind::TspRegistrationForward,
            Message::RegistrationResponse(_) => MessageKind::RegistrationResponse,
            Message::RegistrationSms(_) => MessageKind::RegistrationSms,
            Message::LoginRequest(_) => MessageKind::LoginRequest,
            Message::ServerChallenge(_) => MessageKind::ServerChallenge,
            Message::LoginSms(_) => MessageKind::LoginSms,
            Message::LoginSuccess(_) => MessageKind::LoginSuccess,
            Message::RecoveryRequest(_) => MessageKind::RecoveryRequest,
            Message::TspRecoveryForward(_) => MessageKind::TspRecoveryForward,
            Message::RecoveryResponse(_) => MessageKind::RecoveryResponse,
            Message::RecoverySms(_) => MessageKind::RecoverySms,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        encode(self)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, WireError> {
        decode(bytes)
    }
}

struct Writer(Vec<u8>);

impl Writer {
    fn bytes(&mut self, b: &[u8]) -> &mut Self {
        put_field(&mut self.0, b);
        self
    }

    fn str(&mut self, s: &str) -> &mut Self {
        self.bytes(s.as_bytes())
    }

    fn phone(&mut self, p: &PhoneNumber) -> &mut Self {
        self.str(p.as_str())
    }

    fn u32(&mut self, v: u32) -> &mut Self {
        self.bytes(&v.to_be_bytes())
    }

    fn envelope(&mut self, e: &AuthenticatedEnvelope) -> &mut Self {
        self.bytes(e.ciphertext()).bytes(e.iv()).bytes(e.mac())
    }
}

/// Serialises `message` into its frame. Deterministic.
pub fn encode(message: &Message) -> Vec<u8> {
    let mut w = Writer(vec![MAGIC, VERSION, message.kind().code()]);
    match message {
        Message::RegistrationRequest(m) => w.str(&m.user_id).str(&m.server_id),
        Message::TspRegistrationForward(m) => w.str(&m.user_id).phone(&m.user_phone).bytes(m.session_key.as_bytes()),
        Message::RegistrationResponse(m) => {
            w.str(&m.server_id).bytes(m.seed.as_bytes()).phone(&m.server_phone).bytes(m.session_key.as_bytes())
        }
        Message::RegistrationSms(m) => w.str(&m.user_id).envelope(&m.envelope),
        Message::LoginRequest(m) => w.str(&m.user_id),
        Message::ServerChallenge(m) => w.str(&m.server_id).bytes(m.nonce.as_bytes()),
        Message::LoginSms(m) => w.str(&m.user_id).envelope(&m.envelope),
        Message::LoginSuccess(m) => w.bytes(&m.digest),
        Message::RecoveryRequest(m) => w.str(&m.user_id).str(&m.server_id),
        Message::TspRecoveryForward(m) => w.str(&m.user_id).phone(&m.user_phone),
        Message::RecoveryResponse(m) => {
            w.str(&m.server_id).bytes(m.seed.as_bytes()).phone(&m.server_phone).u32(m.index).bytes(m.nonce.as_bytes())
        }
        Message::RecoverySms(m) => w.str(&m.user_id).envelope(&m.envelope),
    };
    w.0
}

struct Reader<'a>(FieldReader<'a>);

impl<'a> Reader<'a> {
    fn bytes(&mut self) -> Result<&'a [u8], WireError> {
        self.0.next_field().ok_or(WireError::MalformedFrame("truncated or overlong field"))
    }

    fn fixed<const N: usize>(&mut self) -> Result<[u8; N], WireError> {
        self.bytes()?.try_into().map_err(|_| WireError::MalformedFrame("fixed-size field has wrong length"))
    }

    fn string(&mut self) -> Result<String, WireError> {
        let raw = self.bytes()?;
        String::from_utf8(raw.to_vec()).map_err(|_| WireError::MalformedFrame("string is not UTF-8"))
    }

    fn phone(&mut self) -> Result<PhoneNumber, WireError> {
        PhoneNumber::parse(&self.string()?).map_err(|_| WireError::MalformedFrame("invalid phone number"))
    }

    fn u32(&mut self) -> Result<u32, WireError> {
        Ok(u32::from_be_bytes(self.fixed::<4>()?))
    }

    fn seed(&mut self) -> Result<ServerSeed, WireError> {
        self.fixed().map(ServerSeed::from_bytes)
    }

    fn nonce(&mut self) -> Result<Nonce, WireError> {
        self.fixed().map(Nonce::from_bytes)
    }

    fn session_key(&mut self) -> Result<SessionKey, WireError> {
        self.fixed().map(SessionKey::from_bytes)
    }

    fn envelope(&mut self) -> Result<AuthenticatedEnvelope, WireError> {
        let ciphertext = self.bytes()?.to_vec();
        let iv = self.fixed::<IV_LEN>()?;
        let mac = self.fixed::<MAC_LEN>()?;
        AuthenticatedEnvelope::new(ciphertext, iv, mac)
            .map_err(|_| WireError::MalformedFrame("ciphertext is not a positive multiple of 16 bytes"))
    }
}

/// Parses a frame produced by [`encode`]. Never panics on arbitrary input.
pub fn decode(bytes: &[u8]) -> Result<Message, WireError> {
    if bytes.len() < HEADER_LEN || bytes[0] != MAGIC || bytes[1] != VERSION {
        return Err(WireError::UnsupportedFrame);
    }
    let kind = MessageKind::from_code(bytes[2]).ok_or(WireError::UnknownKind(bytes[2]))?;
    let mut r = Reader(FieldReader::new(&bytes[HEADER_LEN..]));
    let message = match kind {
        MessageKind::RegistrationRequest => RegistrationRequest { user_id: r.string()?, server_id: r.string()? }.into(),
        MessageKind::TspRegistrationForward => {
            TspRegistrationForward { user_id: r.string()?, user_phone: r.phone()?, session_key: r.session_key()? }
                .into()
        }
        MessageKind::RegistrationResponse => RegistrationResponse {
            server_id: r.string()?,
            seed: r.seed()?,
            server_phone: r.phone()?,
            session_key: r.session_key()?,
        }
        .into(),
        MessageKind::RegistrationSms => RegistrationSms { user_id: r.string()?, envelope: r.envelope()? }.into(),
        MessageKind::LoginRequest => LoginRequest { user_id: r.string()? }.into(),
        MessageKind::ServerChallenge => ServerChallenge { server_id: r.string()?, nonce: r.nonce()? }.into(),
        MessageKind::LoginSms => LoginSms { user_id: r.string()?, envelope: r.envelope()? }.into(),
        MessageKind::LoginSuccess => LoginSuccess { digest: r.fixed()? }.into(),
        MessageKind::RecoveryRequest => RecoveryRequest { user_id: r.string()?, server_id: r.string()? }.into(),
        MessageKind::TspRecoveryForward => TspRecoveryForward { user_id: r.string()?, user_phone: r.phone()? }.into(),
        MessageKind::RecoveryResponse => RecoveryResponse {
            server_id: r.string()?,
            seed: r.seed()?,
            server_phone: r.phone()?,
            index: r.u32()?,
            nonce: r.nonce()?,
        }
        .into(),
        MessageKind::RecoverySms => RecoverySms { user_id: r.string()?, envelope: r.envelope()? }.into(),
    };
    if !r.0.is_empty() {
        return Err(WireError::MalformedFrame("trailing bytes after last field"));
    }
    Ok(message)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn login_request_layout() {
        let bytes = encode(&LoginRequest { user_id: "alice".into() }.into());
        assert_eq!(bytes, [0x4F, 0x01, 0x05, 0, 0, 0, 5, b'a', b'l', b'i', b'c', b'e']);
    }

    #[test]
    fn header_errors() {
        let good = encode(&LoginRequest { user_id: "alice".into() }.into());
        let mut bad_magic = good.clone();
        bad_magic[0] = 0x00;
        assert_eq!(decode(&bad_magic), Err(WireError::UnsupportedFrame));
        let mut bad_version = good.clone();
        bad_version[1] = 0x02;
        assert_eq!(decode(&bad_version), Err(WireError::UnsupportedFrame));
        let mut bad_kind = good.clone();
        bad_kind[2] = 0x0D;
        assert_eq!(decode(&bad_kind), Err(WireError::UnknownKind(0x0D)));
        assert_eq!(decode(&[]), Err(WireError::UnsupportedFrame));
        assert_eq!(decode(&[0x4F, 0x01]), Err(WireError::UnsupportedFrame));
    }

    #[test]
    fn trailing_and_truncated() {
        let good = encode(&LoginRequest { user_id: "alice".into() }.into());
        let mut trailing = good.clone();
        trailing.push(0);
        assert_eq!(decode(&trailing).unwrap_err().kind(), "malformed-frame");
        assert_eq!(decode(&good[..good.len() - 1]).unwrap_err().kind(), "malformed-frame");
        assert_eq!(decode(&[0x4F, 0x01, 0x05]).unwrap_err().kind(), "malformed-frame");
    }

    #[test]
    fn field_validation() {
        let bad_digest = [0x4F, 0x01, 0x08, 0, 0, 0, 1, 0xAA];
        assert_eq!(decode(&bad_digest).unwrap_err().kind(), "malformed-frame");
        let mut bad_utf8 = vec![0x4F, 0x01, 0x05, 0, 0, 0, 2];
        bad_utf8.extend_from_slice(&[0xC3, 0x28]);
        assert_eq!(decode(&bad_utf8).unwrap_err().kind(), "malformed-frame");
    }

    #[test]
    fn phone_number_rules() {
        assert!(PhoneNumber::parse("123456").is_ok());
        assert!(PhoneNumber::parse("123456789012345").is_ok());
        assert!(PhoneNumber::parse("12345").is_err());
        assert!(PhoneNumber::parse("1234567890123456").is_err());
        assert!(PhoneNumber::parse("12345a").is_err());
        assert!(PhoneNumber::parse("+1234567").is_err());
    }

    #[test]
    fn kinds_round_trip_through_codes_and_names() {
        for kind in MessageKind::ALL {
            assert_eq!(MessageKind::from_code(kind.code()), Some(kind));
            assert_eq!(kind.name().parse::<MessageKind>(), Ok(kind));
        }
        assert_eq!(MessageKind::from_code(0), None);
        assert_eq!(MessageKind::peek(&[0x4F, 0x01, 0x07, 9]), Some(MessageKind::LoginSms));
        assert_eq!(MessageKind::peek(&[0x4F, 0x02, 0x07]), None);
    }
}
