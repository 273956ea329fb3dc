//! Cell-phone side of the protocol.
//!
//! The phone keeps one [`DeviceRecord`] per registered server and never
//! stores the long-term password or the credential derived from it: both
//! are recomputed from the password the user types for every operation
//! that needs them.

use std::collections::BTreeMap;

use rand::{CryptoRng, RngCore};
use subtle::ConstantTimeEq;
use thiserror::Error;

use crate::codec::{join_fields, put_field};
use crate::crypto::{
    self, derive_credential, otp_at_index, CryptoError, HashChainCursor, LongTermPassword, Nonce, OneTimePassword,
    ServerSeed,
};
use crate::wire::{
    LoginSms, LoginSuccess, PhoneNumber, RecoveryRequest, RecoveryResponse, RecoverySms, RegistrationRequest,
    RegistrationResponse, RegistrationSms, ServerChallenge,
};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PhoneError {
    #[error("already registered with {0}")]
    AlreadyRegistered(String),
    #[error("no device record for server {0}")]
    UnknownServer(String),
    #[error("hash chain for {0} is exhausted; run recovery")]
    ChainExhausted(String),
    #[error("protocol order violation: {0}")]
    ProtocolOrder(&'static str),
    #[error("invalid response: {0}")]
    InvalidResponse(&'static str),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
}

impl PhoneError {
    pub fn kind(&self) -> &'static str {
        match self {
            PhoneError::AlreadyRegistered(_) => "already-registered",
            PhoneError::UnknownServer(_) => "unknown-server",
            PhoneError::ChainExhausted(_) => "chain-exhausted",
            PhoneError::ProtocolOrder(_) => "protocol-order",
            PhoneError::InvalidResponse(_) => "invalid-response",
            PhoneError::Crypto(e) => e.kind(),
        }
    }
}

/// Per-server state kept on the phone: `{ID_s, T_s, seed, i}` plus the
/// account name used at that server.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeviceRecord {
    user_id: String,
    server_id: String,
    server_phone: PhoneNumber,
    cursor: HashChainCursor,
}

impl DeviceRecord {
    pub fn user_id(&self) -> &str {
        &self.user_id
    }

    pub fn server_id(&self) -> &str {
        &self.server_id
    }

    pub fn server_phone(&self) -> &PhoneNumber {
        &self.server_phone
    }

    pub fn seed(&self) -> &ServerSeed {
        self.cursor.seed()
    }

    pub fn next_index(&self) -> u32 {
        self.cursor.next_index()
    }

    pub fn chain_length(&self) -> u32 {
        self.cursor.chain_length()
    }

    fn encode_into(&self, out: &mut Vec<u8>) {
        put_field(out, self.user_id.as_bytes());
        put_field(out, self.server_id.as_bytes());
        put_field(out, self.server_phone.as_str().as_bytes());
        put_field(out, self.cursor.seed().as_bytes());
        put_field(out, &self.cursor.next_index().to_be_bytes());
        put_field(out, &self.cursor.chain_length().to_be_bytes());
    }
}

/// Login session state between sending the login SMS and checking the
/// server's answer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PendingLogin {
    server_id: String,
    server_nonce: Nonce,
    device_nonce: Nonce,
    otp: OneTimePassword,
}

/// An SMS the phone wants sent, with its destination number.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Outbound<M> {
    pub to: PhoneNumber,
    pub message: M,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LoginOutcome {
    /// The server proved knowledge of the credential; `index` was consumed.
    Accepted { index: u32 },
    /// Digest mismatch. The index stays where it was.
    Rejected,
}

#[derive(Debug, Clone)]
pub struct PhoneAgent {
    chain_length: u32,
    records: BTreeMap<String, DeviceRecord>,
    pending_registrations: BTreeMap<String, String>,
    pending_recoveries: BTreeMap<String, String>,
    pending_login: Option<PendingLogin>,
}

impl PhoneAgent {
    pub fn new(chain_length: u32) -> Result<Self, PhoneError> {
        if chain_length < 2 {
            return Err(CryptoError::InvalidArgument("chain length must be at least 2").into());
        }
        Ok(Self {
            chain_length,
            records: BTreeMap::new(),
            pending_registrations: BTreeMap::new(),
            pending_recoveries: BTreeMap::new(),
            pending_login: None,
        })
    }

    pub fn chain_length(&self) -> u32 {
        self.chain_length
    }

    pub fn record(&self, server_id: &str) -> Option<&DeviceRecord> {
        self.records.get(server_id)
    }

    pub fn records(&self) -> impl Iterator<Item = &DeviceRecord> {
        self.records.values()
    }

    pub fn pending_login(&self) -> Option<&PendingLogin> {
        self.pending_login.as_ref()
    }

    pub fn begin_registration(&mut self, user_id: &str, server_id: &str) -> Result<RegistrationRequest, PhoneError> {
        if self.records.contains_key(server_id) || self.pending_registrations.contains_key(server_id) {
            return Err(PhoneError::AlreadyRegistered(server_id.to_owned()));
        }
        self.pending_registrations.insert(server_id.to_owned(), user_id.to_owned());
        Ok(RegistrationRequest { user_id: user_id.to_owned(), server_id: server_id.to_owned() })
    }

    /// Derives `C`, seals `(C ‖ seed)` under `K_sd` and stores the device
    /// record at index 0.
    pub fn complete_registration<R: RngCore + CryptoRng + ?Sized>(
        &mut self,
        response: &RegistrationResponse,
        password: &LongTermPassword,
        rng: &mut R,
    ) -> Result<Outbound<RegistrationSms>, PhoneError> {
        let user_id = self
            .pending_registrations
            .get(&response.server_id)
            .ok_or(PhoneError::ProtocolOrder("no registration pending for this server"))?
            .clone();
        let credential = derive_credential(password, &response.server_id, &response.seed)?;
        let plaintext = join_fields(&[credential.as_bytes(), response.seed.as_bytes()]);
        let envelope = crypto::seal(response.session_key.as_bytes(), &user_id, &plaintext, rng)?;
        let cursor = HashChainCursor::new(response.seed, self.chain_length, 0)?;

        self.pending_registrations.remove(&response.server_id);
        self.records.insert(
            response.server_id.clone(),
            DeviceRecord {
                user_id: user_id.clone(),
                server_id: response.server_id.clone(),
                server_phone: response.server_phone.clone(),
                cursor,
            },
        );
        Ok(Outbound { to: response.server_phone.clone(), message: RegistrationSms { user_id, envelope } })
    }

    /// Seals `(n_d ‖ n_s)` under `δ_i` for the next unused index. The index
    /// only moves once [`verify_success`](Self::verify_success) accepts.
    pub fn build_login_sms<R: RngCore + CryptoRng + ?Sized>(
        &mut self,
        challenge: &ServerChallenge,
        password: &LongTermPassword,
        rng: &mut R,
    ) -> Result<Outbound<LoginSms>, PhoneError> {
        let record = self
            .records
            .get(&challenge.server_id)
            .ok_or_else(|| PhoneError::UnknownServer(challenge.server_id.clone()))?;
        if record.cursor.is_exhausted() {
            return Err(PhoneError::ChainExhausted(challenge.server_id.clone()));
        }
        let credential = derive_credential(password, &record.server_id, record.cursor.seed())?;
        let otp = record.cursor.current_otp(&credential)?;
        let device_nonce = Nonce::generate(rng);
        let plaintext = join_fields(&[device_nonce.as_bytes(), challenge.nonce.as_bytes()]);
        let envelope = crypto::seal(&otp.envelope_key(), &record.user_id, &plaintext, rng)?;
        let outbound = Outbound {
            to: record.server_phone.clone(),
            message: LoginSms { user_id: record.user_id.clone(), envelope },
        };
        self.pending_login = Some(PendingLogin {
            server_id: challenge.server_id.clone(),
            server_nonce: challenge.nonce,
            device_nonce,
            otp,
        });
        Ok(outbound)
    }

    /// Checks `H(n_d ‖ δ_i)` from the server. Either way the pending login
    /// is cleared; only acceptance advances the index.
    pub fn verify_success(&mut self, message: &LoginSuccess) -> Result<LoginOutcome, PhoneError> {
        let pending = self.pending_login.take().ok_or(PhoneError::ProtocolOrder("no login pending"))?;
        let expected = crypto::success_digest(&pending.device_nonce, &pending.otp);
        if !bool::from(expected.ct_eq(&message.digest)) {
            return Ok(LoginOutcome::Rejected);
        }
        let record = self
            .records
            .get_mut(&pending.server_id)
            .ok_or_else(|| PhoneError::UnknownServer(pending.server_id.clone()))?;
        if record.cursor.next_index() != pending.otp.index() {
            return Err(PhoneError::ProtocolOrder("device record moved during login"));
        }
        record.cursor.advance()?;
        Ok(LoginOutcome::Accepted { index: pending.otp.index() })
    }

    /// Works on a blank phone; calling it again just re-arms the request.
    pub fn begin_recovery(&mut self, user_id: &str, server_id: &str) -> RecoveryRequest {
        self.pending_recoveries.insert(server_id.to_owned(), user_id.to_owned());
        RecoveryRequest { user_id: user_id.to_owned(), server_id: server_id.to_owned() }
    }

    /// Seals `(C ‖ n_s)` and installs a device record that resumes one past
    /// the index the recovery consumed.
    ///
    /// `response.index == 0` marks the reseed path: the server has issued a
    /// fresh seed it cannot yet derive a chain for, so the envelope is keyed
    /// from `(n_s, seed)` instead of `δ_0`.
    pub fn complete_recovery<R: RngCore + CryptoRng + ?Sized>(
        &mut self,
        response: &RecoveryResponse,
        password: &LongTermPassword,
        rng: &mut R,
    ) -> Result<Outbound<RecoverySms>, PhoneError> {
        let user_id = self
            .pending_recoveries
            .get(&response.server_id)
            .ok_or(PhoneError::ProtocolOrder("no recovery pending for this server"))?
            .clone();
        if response.index >= self.chain_length {
            return Err(PhoneError::InvalidResponse("recovery index beyond the usable chain"));
        }
        let credential = derive_credential(password, &response.server_id, &response.seed)?;
        let key = if response.index == 0 {
            crypto::reseed_envelope_key(&response.nonce, &response.seed)
        } else {
            otp_at_index(&credential, self.chain_length, response.index)?.envelope_key()
        };
        let plaintext = join_fields(&[credential.as_bytes(), response.nonce.as_bytes()]);
        let envelope = crypto::seal(&key, &user_id, &plaintext, rng)?;
        let cursor = HashChainCursor::new(response.seed, self.chain_length, response.index + 1)?;

        self.pending_recoveries.remove(&response.server_id);
        if self.pending_login.as_ref().is_some_and(|p| p.server_id == response.server_id) {
            self.pending_login = None;
        }
        self.records.insert(
            response.server_id.clone(),
            DeviceRecord {
                user_id: user_id.clone(),
                server_id: response.server_id.clone(),
                server_phone: response.server_phone.clone(),
                cursor,
            },
        );
        Ok(Outbound { to: response.server_phone.clone(), message: RecoverySms { user_id, envelope } })
    }

    /// Encoding of the persistent device records only.
    pub fn records_snapshot(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for record in self.records.values() {
            record.encode_into(&mut out);
        }
        out
    }

    /// Every byte of agent state, for secret-hygiene audits.
    pub fn snapshot(&self) -> Vec<u8> {
        let mut out = self.records_snapshot();
        for (server, user) in self.pending_registrations.iter().chain(&self.pending_recoveries) {
            put_field(&mut out, server.as_bytes());
            put_field(&mut out, user.as_bytes());
        }
        if let Some(p) = &self.pending_login {
            put_field(&mut out, p.server_id.as_bytes());
            put_field(&mut out, p.server_nonce.as_bytes());
            put_field(&mut out, p.device_nonce.as_bytes());
            put_field(&mut out, p.otp.digest());
            put_field(&mut out, &p.otp.index().to_be_bytes());
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::split_fields;
    use crate::crypto::{SessionKey, KEY_LEN};
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    const N: u32 = 10;

    fn rng() -> ChaCha20Rng {
        ChaCha20Rng::seed_from_u64(11)
    }

    fn password() -> LongTermPassword {
        LongTermPassword::new(b"correct horse".to_vec()).unwrap()
    }

    fn bank_phone() -> PhoneNumber {
        PhoneNumber::parse("15551000").unwrap()
    }

    fn registration_response(server_id: &str) -> RegistrationResponse {
        RegistrationResponse {
            server_id: server_id.into(),
            seed: ServerSeed::from_bytes([4; 16]),
            server_phone: bank_phone(),
            session_key: SessionKey::from_bytes([5; KEY_LEN]),
        }
    }

    fn registered_phone(rng: &mut ChaCha20Rng) -> PhoneAgent {
        let mut phone = PhoneAgent::new(N).unwrap();
        phone.begin_registration("alice", "bank.example").unwrap();
        phone.complete_registration(&registration_response("bank.example"), &password(), rng).unwrap();
        phone
    }

    fn contains(haystack: &[u8], needle: &[u8]) -> bool {
        haystack.windows(needle.len()).any(|w| w == needle)
    }

    #[test]
    fn begin_registration_passthrough_and_duplicates() {
        let mut phone = PhoneAgent::new(N).unwrap();
        let req = phone.begin_registration("alice", "bank.example").unwrap();
        assert_eq!(req, RegistrationRequest { user_id: "alice".into(), server_id: "bank.example".into() });
        assert_eq!(
            phone.begin_registration("alice", "bank.example"),
            Err(PhoneError::AlreadyRegistered("bank.example".into()))
        );
        let other = phone.begin_registration("alice", "shop.example").unwrap();
        assert_eq!(other.server_id, "shop.example");
    }

    #[test]
    fn registration_sms_opens_to_credential_and_seed() {
        let mut rng = rng();
        let mut phone = PhoneAgent::new(N).unwrap();
        phone.begin_registration("alice", "bank.example").unwrap();
        let resp = registration_response("bank.example");
        let out = phone.complete_registration(&resp, &password(), &mut rng).unwrap();
        assert_eq!(out.to, bank_phone());

        let plain = crypto::open(resp.session_key.as_bytes(), "alice", &out.message.envelope).unwrap();
        let [c, seed] = split_fields::<2>(&plain).unwrap();
        let expected = derive_credential(&password(), "bank.example", &resp.seed).unwrap();
        assert_eq!(c, expected.as_bytes());
        assert_eq!(seed, resp.seed.as_bytes());

        let record = phone.record("bank.example").unwrap();
        assert_eq!(record.next_index(), 0);
        assert_eq!(record.chain_length(), N);
        let snap = phone.snapshot();
        assert!(!contains(&snap, password().as_bytes()));
        assert!(!contains(&snap, expected.as_bytes()));
    }

    #[test]
    fn complete_registration_requires_pending() {
        let mut phone = PhoneAgent::new(N).unwrap();
        let err =
            phone.complete_registration(&registration_response("bank.example"), &password(), &mut rng()).unwrap_err();
        assert_eq!(err.kind(), "protocol-order");
    }

    #[test]
    fn login_sms_sealed_under_current_otp() {
        let mut rng = rng();
        let mut phone = registered_phone(&mut rng);
        let challenge = ServerChallenge { server_id: "bank.example".into(), nonce: Nonce::from_bytes([8; 16]) };
        let out = phone.build_login_sms(&challenge, &password(), &mut rng).unwrap();

        let c = derive_credential(&password(), "bank.example", &ServerSeed::from_bytes([4; 16])).unwrap();
        let otp = otp_at_index(&c, N, 0).unwrap();
        let plain = crypto::open(&otp.envelope_key(), "alice", &out.message.envelope).unwrap();
        let [_, n_s] = split_fields::<2>(&plain).unwrap();
        assert_eq!(n_s, challenge.nonce.as_bytes());
        assert_eq!(phone.record("bank.example").unwrap().next_index(), 0);

        let wrong = LongTermPassword::new(b"incorrect".to_vec()).unwrap();
        let out = phone.build_login_sms(&challenge, &wrong, &mut rng).unwrap();
        assert_eq!(
            crypto::open(&otp.envelope_key(), "alice", &out.message.envelope),
            Err(CryptoError::AuthenticationFailure)
        );
    }

    #[test]
    fn login_errors() {
        let mut rng = rng();
        let mut phone = registered_phone(&mut rng);
        let unknown = ServerChallenge { server_id: "shop.example".into(), nonce: Nonce::from_bytes([1; 16]) };
        assert_eq!(phone.build_login_sms(&unknown, &password(), &mut rng).unwrap_err().kind(), "unknown-server");
        assert_eq!(phone.verify_success(&LoginSuccess { digest: [0; 32] }).unwrap_err().kind(), "protocol-order");
    }

    #[test]
    fn success_accept_and_reject() {
        let mut rng = rng();
        let mut phone = registered_phone(&mut rng);
        let c = derive_credential(&password(), "bank.example", &ServerSeed::from_bytes([4; 16])).unwrap();
        let challenge = ServerChallenge { server_id: "bank.example".into(), nonce: Nonce::from_bytes([8; 16]) };

        let out = phone.build_login_sms(&challenge, &password(), &mut rng).unwrap();
        let otp = otp_at_index(&c, N, 0).unwrap();
        let plain = crypto::open(&otp.envelope_key(), "alice", &out.message.envelope).unwrap();
        let [n_d, _] = split_fields::<2>(&plain).unwrap();
        let digest = crypto::success_digest(&Nonce::from_slice(n_d).unwrap(), &otp);
        assert_eq!(phone.verify_success(&LoginSuccess { digest }).unwrap(), LoginOutcome::Accepted { index: 0 });
        assert_eq!(phone.record("bank.example").unwrap().next_index(), 1);

        let before = phone.records_snapshot();
        phone.build_login_sms(&challenge, &password(), &mut rng).unwrap();
        assert_eq!(phone.verify_success(&LoginSuccess { digest: [0x42; 32] }).unwrap(), LoginOutcome::Rejected);
        assert_eq!(phone.records_snapshot(), before);
        assert!(phone.pending_login().is_none());

        // A phishing server holding some other chain cannot produce the digest.
        phone.build_login_sms(&challenge, &password(), &mut rng).unwrap();
        let fake_c = derive_credential(&password(), "bank.example", &ServerSeed::from_bytes([9; 16])).unwrap();
        let fake = crypto::success_digest(&Nonce::from_bytes([0; 16]), &otp_at_index(&fake_c, N, 1).unwrap());
        assert_eq!(phone.verify_success(&LoginSuccess { digest: fake }).unwrap(), LoginOutcome::Rejected);
        assert_eq!(phone.records_snapshot(), before);
    }

    #[test]
    fn exhausted_chain_refuses_login() {
        let mut rng = rng();
        let mut phone = PhoneAgent::new(2).unwrap();
        phone.begin_recovery("alice", "bank.example");
        let resp = RecoveryResponse {
            server_id: "bank.example".into(),
            seed: ServerSeed::from_bytes([4; 16]),
            server_phone: bank_phone(),
            index: 1,
            nonce: Nonce::from_bytes([3; 16]),
        };
        phone.complete_recovery(&resp, &password(), &mut rng).unwrap();
        assert_eq!(phone.record("bank.example").unwrap().next_index(), 2);
        let challenge = ServerChallenge { server_id: "bank.example".into(), nonce: Nonce::from_bytes([1; 16]) };
        assert_eq!(
            phone.build_login_sms(&challenge, &password(), &mut rng),
            Err(PhoneError::ChainExhausted("bank.example".into()))
        );
    }

    #[test]
    fn recovery_on_blank_phone() {
        let mut rng = rng();
        let mut phone = PhoneAgent::new(N).unwrap();
        let req = phone.begin_recovery("alice", "bank.example");
        assert_eq!(req, phone.begin_recovery("alice", "bank.example"));
        assert_eq!(req, RecoveryRequest { user_id: "alice".into(), server_id: "bank.example".into() });

        let resp = RecoveryResponse {
            server_id: "bank.example".into(),
            seed: ServerSeed::from_bytes([4; 16]),
            server_phone: bank_phone(),
            index: 3,
            nonce: Nonce::from_bytes([6; 16]),
        };
        let out = phone.complete_recovery(&resp, &password(), &mut rng).unwrap();
        let c = derive_credential(&password(), "bank.example", &resp.seed).unwrap();
        let key = otp_at_index(&c, N, 3).unwrap().envelope_key();
        let plain = crypto::open(&key, "alice", &out.message.envelope).unwrap();
        assert_eq!(plain, join_fields(&[c.as_bytes(), resp.nonce.as_bytes()]));
        assert_eq!(phone.record("bank.example").unwrap().next_index(), 4);
        assert!(!contains(&phone.snapshot(), c.as_bytes()));

        assert_eq!(phone.complete_recovery(&resp, &password(), &mut rng).unwrap_err().kind(), "protocol-order");
    }

    #[test]
    fn reseed_recovery_uses_nonce_key() {
        let mut rng = rng();
        let mut phone = PhoneAgent::new(N).unwrap();
        phone.begin_recovery("alice", "bank.example");
        let resp = RecoveryResponse {
            server_id: "bank.example".into(),
            seed: ServerSeed::from_bytes([7; 16]),
            server_phone: bank_phone(),
            index: 0,
            nonce: Nonce::from_bytes([6; 16]),
        };
        let out = phone.complete_recovery(&resp, &password(), &mut rng).unwrap();
        let key = crypto::reseed_envelope_key(&resp.nonce, &resp.seed);
        assert!(crypto::open(&key, "alice", &out.message.envelope).is_ok());
        assert_eq!(phone.record("bank.example").unwrap().next_index(), 1);
    }

    #[test]
    fn recovery_rejects_out_of_range_index() {
        let mut phone = PhoneAgent::new(N).unwrap();
        phone.begin_recovery("alice", "bank.example");
        let resp = RecoveryResponse {
            server_id: "bank.example".into(),
            seed: ServerSeed::from_bytes([7; 16]),
            server_phone: bank_phone(),
            index: N,
            nonce: Nonce::from_bytes([6; 16]),
        };
        assert_eq!(phone.complete_recovery(&resp, &password(), &mut rng()).unwrap_err().kind(), "invalid-response");
    }

    #[test]
    fn servers_are_isolated() {
        let mut rng = rng();
        let mut phone = registered_phone(&mut rng);
        phone.begin_registration("alice", "shop.example").unwrap();
        let mut resp = registration_response("shop.example");
        resp.seed = ServerSeed::from_bytes([0xEE; 16]);
        phone.complete_registration(&resp, &password(), &mut rng).unwrap();
        let bank_before = phone.record("bank.example").unwrap().clone();
        let challenge = ServerChallenge { server_id: "shop.example".into(), nonce: Nonce::from_bytes([1; 16]) };
        phone.build_login_sms(&challenge, &password(), &mut rng).unwrap();
        phone.verify_success(&LoginSuccess { digest: [0; 32] }).unwrap();
        assert_eq!(phone.record("bank.example").unwrap(), &bank_before);
    }
}
