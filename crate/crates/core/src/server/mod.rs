//! Web-server side of the protocol: account registry, login challenges,
//! verification by recomputing the hash chain, and recovery.
//!
//! The server stores `C` and the seed but never a chain element; every
//! verification recomputes `δ_i` from `C`. All handlers are atomic: a
//! rejected message leaves the server exactly as it was.

mod store;

use std::collections::BTreeMap;
use std::path::Path;

use rand::{CryptoRng, RngCore};
use subtle::ConstantTimeEq;
use thiserror::Error;

use crate::codec::{put_field, split_fields};
use crate::crypto::{self, otp_at_index, Credential, CryptoError, HashChainCursor, Nonce, ServerSeed, SessionKey};
use crate::wire::{
    LoginRequest, LoginSms, LoginSuccess, PhoneNumber, RecoveryResponse, RecoverySms, RegistrationResponse,
    RegistrationSms, ServerChallenge, TspRecoveryForward, TspRegistrationForward,
};

pub use store::STORE_HEADER;

pub const DEFAULT_CHAIN_LENGTH: u32 = 100;
pub const DEFAULT_CHALLENGE_TTL: u64 = 100;

/// Nonce every challenge carries when `constant_nonce` is set.
const WEAK_NONCE: [u8; 16] = [0x5a; 16];

#[derive(Debug, Error)]
pub enum ServerError {
    #[error("account {0} is already registered")]
    AlreadyRegistered(String),
    #[error("no account for {0}")]
    UnknownAccount(String),
    #[error("message not valid while account is {0}")]
    WrongPhase(AccountStatus),
    #[error("hash chain exhausted; recovery required")]
    RecoveryRequired,
    #[error("no outstanding challenge")]
    NoChallenge,
    #[error("challenge expired")]
    ChallengeExpired,
    #[error("SMS sender {0} does not match the registered number")]
    SpoofedSource(PhoneNumber),
    #[error("TSP subscriber number does not match the account")]
    SubscriberMismatch,
    #[error("returned seed does not match the issued seed")]
    StaleRegistration,
    #[error("returned nonce does not match the outstanding challenge")]
    NonceMismatch,
    #[error("recovered credential does not match the account")]
    CredentialMismatch,
    #[error("envelope plaintext is malformed")]
    MalformedPayload,
    #[error("invalid user id: {0}")]
    InvalidUserId(&'static str),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
    #[error("store i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt store at line {line}: {reason}")]
    CorruptStore { line: usize, reason: String },
}

impl ServerError {
    pub fn kind(&self) -> &'static str {
        match self {
            ServerError::AlreadyRegistered(_) => "already-registered",
            ServerError::UnknownAccount(_) => "unknown-account",
            ServerError::WrongPhase(_) => "wrong-phase",
            ServerError::RecoveryRequired => "recovery-required",
            ServerError::NoChallenge => "no-challenge",
            ServerError::ChallengeExpired => "challenge-expired",
            ServerError::SpoofedSource(_) => "spoofed-source",
            ServerError::SubscriberMismatch => "subscriber-mismatch",
            ServerError::StaleRegistration => "stale-registration",
            ServerError::NonceMismatch => "nonce-mismatch",
            ServerError::CredentialMismatch => "credential-mismatch",
            ServerError::MalformedPayload => "malformed-payload",
            ServerError::InvalidUserId(_) => "invalid-argument",
            ServerError::Crypto(e) => e.kind(),
            ServerError::Io(_) => "io-error",
            ServerError::CorruptStore { .. } => "corrupt-store",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum AccountStatus {
    Pending,
    Active,
    Recovering,
}

impl AccountStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            AccountStatus::Pending => "pending",
            AccountStatus::Active => "active",
            AccountStatus::Recovering => "recovering",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "pending" => Some(AccountStatus::Pending),
            "active" => Some(AccountStatus::Active),
            "recovering" => Some(AccountStatus::Recovering),
            _ => None,
        }
    }
}

impl std::fmt::Display for AccountStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// What the server holds for an account: `K_sd` until the registration SMS
/// arrives, `C` afterwards.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AccountSecret {
    SessionKey(SessionKey),
    Credential(Credential),
}

impl AccountSecret {
    fn as_bytes(&self) -> &[u8] {
        match self {
            AccountSecret::SessionKey(k) => k.as_bytes(),
            AccountSecret::Credential(c) => c.as_bytes(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AccountRecord {
    user_id: String,
    user_phone: PhoneNumber,
    secret: AccountSecret,
    cursor: HashChainCursor,
    status: AccountStatus,
}

impl AccountRecord {
    pub fn user_id(&self) -> &str {
        &self.user_id
    }

    pub fn user_phone(&self) -> &PhoneNumber {
        &self.user_phone
    }

    pub fn secret(&self) -> &AccountSecret {
        &self.secret
    }

    pub fn credential(&self) -> Option<&Credential> {
        match &self.secret {
            AccountSecret::Credential(c) => Some(c),
            AccountSecret::SessionKey(_) => None,
        }
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

    pub fn status(&self) -> AccountStatus {
        self.status
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OutstandingChallenge {
    pub nonce: Nonce,
    pub issued_at: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct PendingRecovery {
    nonce: Nonce,
    index: u32,
    seed: ServerSeed,
    reseed: bool,
    issued_at: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServerConfig {
    pub server_id: String,
    pub phone: PhoneNumber,
    pub chain_length: u32,
    pub challenge_ttl: u64,
    /// Negative control: every challenge carries the same nonce, which makes
    /// captured login SMS replayable.
    pub constant_nonce: bool,
}

impl ServerConfig {
    pub fn new(server_id: impl Into<String>, phone: PhoneNumber) -> Self {
        Self {
            server_id: server_id.into(),
            phone,
            chain_length: DEFAULT_CHAIN_LENGTH,
            challenge_ttl: DEFAULT_CHALLENGE_TTL,
            constant_nonce: false,
        }
    }
}

/// A login the server accepted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoginAccepted {
    pub index: u32,
    pub success: LoginSuccess,
}

/// Outcome of a completed recovery.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RecoveryAccepted {
    pub index: u32,
    pub reseeded: bool,
}

#[derive(Debug, Clone)]
pub struct ServerAgent {
    config: ServerConfig,
    accounts: BTreeMap<String, AccountRecord>,
    challenges: BTreeMap<String, OutstandingChallenge>,
    recoveries: BTreeMap<String, PendingRecovery>,
}

impl ServerAgent {
    pub fn new(config: ServerConfig) -> Result<Self, ServerError> {
        if config.chain_length < 2 {
            return Err(CryptoError::InvalidArgument("chain length must be at least 2").into());
        }
        Ok(Self { config, accounts: BTreeMap::new(), challenges: BTreeMap::new(), recoveries: BTreeMap::new() })
    }

    pub fn config(&self) -> &ServerConfig {
        &self.config
    }

    pub fn server_id(&self) -> &str {
        &self.config.server_id
    }

    pub fn account(&self, user_id: &str) -> Option<&AccountRecord> {
        self.accounts.get(user_id)
    }

    pub fn accounts(&self) -> impl Iterator<Item = &AccountRecord> {
        self.accounts.values()
    }

    pub fn outstanding_challenge(&self, user_id: &str) -> Option<&OutstandingChallenge> {
        self.challenges.get(user_id)
    }

    /// Creates a pending account holding `K_sd` and answers with a fresh seed.
    /// A pending record for the same user is replaced.
    pub fn handle_tsp_registration<R: RngCore + CryptoRng + ?Sized>(
        &mut self,
        forward: &TspRegistrationForward,
        rng: &mut R,
    ) -> Result<RegistrationResponse, ServerError> {
        validate_user_id(&forward.user_id)?;
        if let Some(existing) = self.accounts.get(&forward.user_id) {
            if existing.status != AccountStatus::Pending {
                return Err(ServerError::AlreadyRegistered(forward.user_id.clone()));
            }
        }
        let seed = ServerSeed::generate(rng);
        let cursor = HashChainCursor::new(seed, self.config.chain_length, 0)?;
        self.accounts.insert(
            forward.user_id.clone(),
            AccountRecord {
                user_id: forward.user_id.clone(),
                user_phone: forward.user_phone.clone(),
                secret: AccountSecret::SessionKey(forward.session_key),
                cursor,
                status: AccountStatus::Pending,
            },
        );
        Ok(RegistrationResponse {
            server_id: self.config.server_id.clone(),
            seed,
            server_phone: self.config.phone.clone(),
            session_key: forward.session_key,
        })
    }

    /// Opens `(C ‖ seed)` under `K_sd`, stores `C` and activates the account.
    pub fn handle_registration_sms(&mut self, sms: &RegistrationSms, sender: &PhoneNumber) -> Result<(), ServerError> {
        let account = self.lookup(&sms.user_id)?;
        let AccountSecret::SessionKey(session_key) = &account.secret else {
            return Err(ServerError::WrongPhase(account.status));
        };
        check_sender(account, sender)?;
        let plain = crypto::open(session_key.as_bytes(), &sms.user_id, &sms.envelope)?;
        let [c, seed] = split_fields::<2>(&plain).ok_or(ServerError::MalformedPayload)?;
        let credential = Credential::from_slice(c).ok_or(ServerError::MalformedPayload)?;
        if !bool::from(seed.ct_eq(account.seed().as_bytes())) {
            return Err(ServerError::StaleRegistration);
        }

        let account = self.accounts.get_mut(&sms.user_id).expect("looked up above");
        account.secret = AccountSecret::Credential(credential);
        account.status = AccountStatus::Active;
        Ok(())
    }

    /// Issues `(ID_s, n_s)`. The newest challenge replaces any earlier one.
    pub fn issue_challenge<R: RngCore + CryptoRng + ?Sized>(
        &mut self,
        request: &LoginRequest,
        now: u64,
        rng: &mut R,
    ) -> Result<ServerChallenge, ServerError> {
        let account = self.lookup(&request.user_id)?;
        match account.status {
            AccountStatus::Pending => return Err(ServerError::UnknownAccount(request.user_id.clone())),
            AccountStatus::Recovering => return Err(ServerError::WrongPhase(account.status)),
            AccountStatus::Active => {}
        }
        if account.cursor.is_exhausted() {
            return Err(ServerError::RecoveryRequired);
        }
        let nonce = if self.config.constant_nonce { Nonce::from_bytes(WEAK_NONCE) } else { Nonce::generate(rng) };
        self.challenges.insert(request.user_id.clone(), OutstandingChallenge { nonce, issued_at: now });
        Ok(ServerChallenge { server_id: self.config.server_id.clone(), nonce })
    }

    /// Recomputes `δ_i` at the stored index, opens the login envelope and
    /// compares the returned `n_s` with the outstanding challenge.
    pub fn verify_login_sms(
        &mut self,
        sms: &LoginSms,
        sender: &PhoneNumber,
        now: u64,
    ) -> Result<LoginAccepted, ServerError> {
        let account = self.lookup(&sms.user_id)?;
        let challenge = self.challenges.get(&sms.user_id).ok_or(ServerError::NoChallenge)?;
        if account.status != AccountStatus::Active {
            return Err(ServerError::WrongPhase(account.status));
        }
        if now.saturating_sub(challenge.issued_at) > self.config.challenge_ttl {
            return Err(ServerError::ChallengeExpired);
        }
        check_sender(account, sender)?;
        let credential = account.credential().ok_or(ServerError::WrongPhase(account.status))?;
        let otp = account.cursor.current_otp(credential)?;
        let plain = crypto::open(&otp.envelope_key(), &sms.user_id, &sms.envelope)?;
        let [n_d, n_s] = split_fields::<2>(&plain).ok_or(ServerError::MalformedPayload)?;
        let device_nonce = Nonce::from_slice(n_d).ok_or(ServerError::MalformedPayload)?;
        if !bool::from(n_s.ct_eq(challenge.nonce.as_bytes())) {
            return Err(ServerError::NonceMismatch);
        }
        let digest = crypto::success_digest(&device_nonce, &otp);

        self.challenges.remove(&sms.user_id);
        let account = self.accounts.get_mut(&sms.user_id).expect("looked up above");
        account.cursor.advance()?;
        Ok(LoginAccepted { index: otp.index(), success: LoginSuccess { digest } })
    }

    /// Starts recovery for a number the TSP vouches for.
    ///
    /// Near the end of the chain (and for accounts that never used one) the
    /// response carries a fresh seed with index 0; the phone then keys the
    /// recovery envelope from `(n_s, seed)` instead of a chain element.
    pub fn handle_tsp_recovery<R: RngCore + CryptoRng + ?Sized>(
        &mut self,
        forward: &TspRecoveryForward,
        now: u64,
        rng: &mut R,
    ) -> Result<RecoveryResponse, ServerError> {
        let account = self.lookup(&forward.user_id)?;
        if account.status == AccountStatus::Pending {
            return Err(ServerError::UnknownAccount(forward.user_id.clone()));
        }
        if account.user_phone != forward.user_phone {
            return Err(ServerError::SubscriberMismatch);
        }
        let next = account.next_index();
        let reseed = next == 0 || next >= account.chain_length() - 1;
        let (seed, index) = if reseed { (ServerSeed::generate(rng), 0) } else { (*account.seed(), next) };
        let nonce = Nonce::generate(rng);

        self.challenges.remove(&forward.user_id);
        self.recoveries.insert(forward.user_id.clone(), PendingRecovery { nonce, index, seed, reseed, issued_at: now });
        let account = self.accounts.get_mut(&forward.user_id).expect("looked up above");
        account.status = AccountStatus::Recovering;
        Ok(RecoveryResponse {
            server_id: self.config.server_id.clone(),
            seed,
            server_phone: self.config.phone.clone(),
            index,
            nonce,
        })
    }

    /// Opens `(C ‖ n_s)` and reactivates the account one past the consumed
    /// index.
    ///
    /// On the reseed path the server has nothing to compare the new `C′`
    /// with; it is accepted on the strength of the MAC and nonce alone. That
    /// is a gap in the protocol rather than in this check.
    pub fn verify_recovery_sms(
        &mut self,
        sms: &RecoverySms,
        sender: &PhoneNumber,
        now: u64,
    ) -> Result<RecoveryAccepted, ServerError> {
        let account = self.lookup(&sms.user_id)?;
        let pending = self.recoveries.get(&sms.user_id).ok_or(ServerError::NoChallenge)?;
        if account.status != AccountStatus::Recovering {
            return Err(ServerError::WrongPhase(account.status));
        }
        if now.saturating_sub(pending.issued_at) > self.config.challenge_ttl {
            return Err(ServerError::ChallengeExpired);
        }
        check_sender(account, sender)?;
        let stored = account.credential().ok_or(ServerError::WrongPhase(account.status))?;
        let key = if pending.reseed {
            crypto::reseed_envelope_key(&pending.nonce, &pending.seed)
        } else {
            otp_at_index(stored, account.chain_length(), pending.index)?.envelope_key()
        };
        let plain = crypto::open(&key, &sms.user_id, &sms.envelope)?;
        let [c, n_s] = split_fields::<2>(&plain).ok_or(ServerError::MalformedPayload)?;
        let recovered = Credential::from_slice(c).ok_or(ServerError::MalformedPayload)?;
        if !bool::from(n_s.ct_eq(pending.nonce.as_bytes())) {
            return Err(ServerError::NonceMismatch);
        }
        if !pending.reseed && !bool::from(recovered.as_bytes().ct_eq(stored.as_bytes())) {
            return Err(ServerError::CredentialMismatch);
        }

        let pending = self.recoveries.remove(&sms.user_id).expect("looked up above");
        let account = self.accounts.get_mut(&sms.user_id).expect("looked up above");
        account.cursor = HashChainCursor::new(pending.seed, account.chain_length(), pending.index + 1)?;
        if pending.reseed {
            account.secret = AccountSecret::Credential(recovered);
        }
        account.status = AccountStatus::Active;
        Ok(RecoveryAccepted { index: pending.index, reseeded: pending.reseed })
    }

    /// Writes the account store; challenges and pending recoveries are not
    /// persisted.
    pub fn persist(&self, path: impl AsRef<Path>) -> Result<(), ServerError> {
        std::fs::write(path, self.store_text())?;
        Ok(())
    }

    pub fn load(config: ServerConfig, path: impl AsRef<Path>) -> Result<Self, ServerError> {
        let text = std::fs::read_to_string(path)?;
        let mut agent = Self::new(config)?;
        agent.accounts = store::parse(&text)?;
        Ok(agent)
    }

    /// The exact text [`persist`](Self::persist) writes.
    pub fn store_text(&self) -> String {
        store::render(self.accounts.values())
    }

    /// Every byte of agent state, persisted or not, for secret-hygiene audits.
    pub fn snapshot(&self) -> Vec<u8> {
        let mut out = self.store_text().into_bytes();
        for (user, c) in &self.challenges {
            put_field(&mut out, user.as_bytes());
            put_field(&mut out, c.nonce.as_bytes());
            put_field(&mut out, &c.issued_at.to_be_bytes());
        }
        for (user, r) in &self.recoveries {
            put_field(&mut out, user.as_bytes());
            put_field(&mut out, r.nonce.as_bytes());
            put_field(&mut out, r.seed.as_bytes());
            put_field(&mut out, &r.index.to_be_bytes());
            put_field(&mut out, &[r.reseed as u8]);
            put_field(&mut out, &r.issued_at.to_be_bytes());
        }
        out
    }

    fn lookup(&self, user_id: &str) -> Result<&AccountRecord, ServerError> {
        self.accounts.get(user_id).ok_or_else(|| ServerError::UnknownAccount(user_id.to_owned()))
    }
}

fn check_sender(account: &AccountRecord, sender: &PhoneNumber) -> Result<(), ServerError> {
    if &account.user_phone != sender {
        return Err(ServerError::SpoofedSource(sender.clone()));
    }
    Ok(())
}

fn validate_user_id(user_id: &str) -> Result<(), ServerError> {
    if user_id.is_empty() {
        return Err(ServerError::InvalidUserId("empty"));
    }
    if user_id.chars().any(char::is_control) {
        return Err(ServerError::InvalidUserId("control characters"));
    }
    Ok(())
}

/// Parses persisted store text without building an agent.
pub fn parse_store(text: &str) -> Result<Vec<AccountRecord>, ServerError> {
    Ok(store::parse(text)?.into_values().collect())
}
