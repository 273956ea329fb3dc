//! Cryptographic building blocks of the protocol.
//!
//! * A credential `C = H(P_u ‖ ID_s ‖ seed)` binds the user's long-term
//!   password to one server and one seed.
//! * One-time passwords form a Lamport chain rooted at `C`: the password
//!   for login `i` is `H^(N - i)(C)`, so each login reveals the preimage of
//!   the previous one and nothing about the next.
//! * Every protected message travels in an [`AuthenticatedEnvelope`]:
//!   AES-128-CBC with PKCS#7 padding, then HMAC-SHA1 over the associated
//!   identity, the ciphertext and the IV (encrypt-then-MAC).
//!
//! `H` is SHA-256 throughout. Every concatenation that feeds a hash or an
//! envelope is length-prefixed (4-byte big-endian length, then bytes).

use std::fmt;

use aes::Aes128;
use cbc::cipher::block_padding::Pkcs7;
use cbc::cipher::{BlockDecryptMut, BlockEncryptMut, KeyIvInit};
use hmac::{Hmac, Mac};
use rand::{CryptoRng, RngCore};
use sha1::Sha1;
use sha2::{Digest, Sha256};
use subtle::ConstantTimeEq;
use thiserror::Error;

use crate::codec::{join_fields, put_field};

pub const DIGEST_LEN: usize = 32;
pub const KEY_LEN: usize = 16;
pub const IV_LEN: usize = 16;
pub const MAC_LEN: usize = 20;
pub const SEED_LEN: usize = 16;
pub const NONCE_LEN: usize = 16;
pub const BLOCK_LEN: usize = 16;
pub const MAX_PASSWORD_LEN: usize = 64;

const RESEED_LABEL: &[u8] = b"chainpass-reseed";

type HmacSha1 = Hmac<Sha1>;
type CbcEncryptor = cbc::Encryptor<Aes128>;
type CbcDecryptor = cbc::Decryptor<Aes128>;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CryptoError {
    #[error("invalid argument: {0}")]
    InvalidArgument(&'static str),
    #[error("index {index} is outside a chain of length {chain_length}")]
    IndexOutOfRange { index: u32, chain_length: u32 },
    #[error("envelope authentication failed")]
    AuthenticationFailure,
    #[error("envelope decrypted to invalid padding")]
    CorruptEnvelope,
}

impl CryptoError {
    pub fn kind(&self) -> &'static str {
        match self {
            CryptoError::InvalidArgument(_) => "invalid-argument",
            CryptoError::IndexOutOfRange { .. } => "index-out-of-range",
            CryptoError::AuthenticationFailure => "authentication-failure",
            CryptoError::CorruptEnvelope => "corrupt-envelope",
        }
    }
}

/// The only secret a user memorises. Never encoded into a frame or store.
#[derive(Clone, PartialEq, Eq)]
pub struct LongTermPassword(Vec<u8>);

impl LongTermPassword {
    pub fn new(bytes: impl Into<Vec<u8>>) -> Result<Self, CryptoError> {
        let bytes = bytes.into();
        if bytes.is_empty() {
            return Err(CryptoError::InvalidArgument("password is empty"));
        }
        if bytes.len() > MAX_PASSWORD_LEN {
            return Err(CryptoError::InvalidArgument("password longer than 64 bytes"));
        }
        Ok(Self(bytes))
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }
}

impl fmt::Debug for LongTermPassword {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("LongTermPassword(..)")
    }
}

macro_rules! byte_newtype {
    ($(#[$meta:meta])* $name:ident, $len:expr) => {
        $(#[$meta])*
        #[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub struct $name([u8; $len]);

        impl $name {
            pub const LEN: usize = $len;

            pub fn from_bytes(bytes: [u8; $len]) -> Self {
                Self(bytes)
            }

            pub fn from_slice(bytes: &[u8]) -> Option<Self> {
                bytes.try_into().ok().map(Self)
            }

            pub fn as_bytes(&self) -> &[u8; $len] {
                &self.0
            }
        }

        impl AsRef<[u8]> for $name {
            fn as_ref(&self) -> &[u8] {
                &self.0
            }
        }
    };
}

macro_rules! random_newtype {
    ($name:ident) => {
        impl $name {
            pub fn generate<R: RngCore + CryptoRng + ?Sized>(rng: &mut R) -> Self {
                let mut bytes = [0u8; Self::LEN];
                rng.fill_bytes(&mut bytes);
                Self(bytes)
            }
        }

        impl fmt::Debug for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, concat!(stringify!($name), "({})"), hex::encode(self.0))
            }
        }
    };
}

byte_newtype!(
    /// Per-account random seed chosen by the server.
    ServerSeed,
    SEED_LEN
);
random_newtype!(ServerSeed);

byte_newtype!(
    /// Fresh per-session value (`n_s` from the server, `n_d` from the device).
    Nonce,
    NONCE_LEN
);
random_newtype!(Nonce);

byte_newtype!(
    /// Registration key `K_sd` minted by the TSP.
    SessionKey,
    KEY_LEN
);
random_newtype!(SessionKey);

byte_newtype!(
    /// Root of a hash chain; stored by the server, re-derived on the phone.
    Credential,
    DIGEST_LEN
);

impl fmt::Debug for Credential {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Credential(..)")
    }
}

/// `δ_i`: chain element `i` together with its index.
#[derive(Clone, Copy, PartialEq, Eq)]
pub struct OneTimePassword {
    digest: [u8; DIGEST_LEN],
    index: u32,
}

impl OneTimePassword {
    pub fn from_parts(digest: [u8; DIGEST_LEN], index: u32) -> Self {
        Self { digest, index }
    }

    pub fn digest(&self) -> &[u8; DIGEST_LEN] {
        &self.digest
    }

    pub fn index(&self) -> u32 {
        self.index
    }

    /// AES/HMAC key for envelopes protected by this password: the first
    /// 16 bytes of the digest.
    pub fn envelope_key(&self) -> [u8; KEY_LEN] {
        let mut key = [0u8; KEY_LEN];
        key.copy_from_slice(&self.digest[..KEY_LEN]);
        key
    }
}

impl fmt::Debug for OneTimePassword {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OneTimePassword").field("index", &self.index).finish_non_exhaustive()
    }
}

/// Position in a hash chain: which seed, how long, and the next unused index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashChainCursor {
    seed: ServerSeed,
    chain_length: u32,
    next_index: u32,
}

impl HashChainCursor {
    pub fn new(seed: ServerSeed, chain_length: u32, next_index: u32) -> Result<Self, CryptoError> {
        if chain_length < 2 {
            return Err(CryptoError::InvalidArgument("chain length must be at least 2"));
        }
        if next_index > chain_length {
            return Err(CryptoError::IndexOutOfRange { index: next_index, chain_length });
        }
        Ok(Self { seed, chain_length, next_index })
    }

    pub fn seed(&self) -> &ServerSeed {
        &self.seed
    }

    pub fn chain_length(&self) -> u32 {
        self.chain_length
    }

    pub fn next_index(&self) -> u32 {
        self.next_index
    }

    pub fn is_exhausted(&self) -> bool {
        self.next_index >= self.chain_length
    }

    /// The one-time password at the next unused index.
    pub fn current_otp(&self, credential: &Credential) -> Result<OneTimePassword, CryptoError> {
        otp_at_index(credential, self.chain_length, self.next_index)
    }

    /// Moves past the current index. Fails once the chain is exhausted.
    pub fn advance(&mut self) -> Result<(), CryptoError> {
        if self.is_exhausted() {
            return Err(CryptoError::IndexOutOfRange { index: self.next_index + 1, chain_length: self.chain_length });
        }
        self.next_index += 1;
        Ok(())
    }
}

/// `(ciphertext, IV, MAC)` carried inside every protected SMS.
#[derive(Clone, PartialEq, Eq)]
pub struct AuthenticatedEnvelope {
    ciphertext: Vec<u8>,
    iv: [u8; IV_LEN],
    mac: [u8; MAC_LEN],
}

impl AuthenticatedEnvelope {
    pub fn new(ciphertext: Vec<u8>, iv: [u8; IV_LEN], mac: [u8; MAC_LEN]) -> Result<Self, CryptoError> {
        if ciphertext.is_empty() || !ciphertext.len().is_multiple_of(BLOCK_LEN) {
            return Err(CryptoError::InvalidArgument("ciphertext must be a positive multiple of 16 bytes"));
        }
        Ok(Self { ciphertext, iv, mac })
    }

    pub fn ciphertext(&self) -> &[u8] {
        &self.ciphertext
    }

    pub fn iv(&self) -> &[u8; IV_LEN] {
        &self.iv
    }

    pub fn mac(&self) -> &[u8; MAC_LEN] {
        &self.mac
    }
}

impl fmt::Debug for AuthenticatedEnvelope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AuthenticatedEnvelope")
            .field("ciphertext", &hex::encode(&self.ciphertext))
            .field("iv", &hex::encode(self.iv))
            .field("mac", &hex::encode(self.mac))
            .finish()
    }
}

/// `C = SHA-256(lp(P_u) ‖ lp(ID_s) ‖ lp(seed))`.
pub fn derive_credential(
    password: &LongTermPassword,
    server_id: &str,
    seed: &ServerSeed,
) -> Result<Credential, CryptoError> {
    if server_id.is_empty() {
        return Err(CryptoError::InvalidArgument("server id is empty"));
    }
    let mut hasher = Sha256::new();
    hasher.update(join_fields(&[password.as_bytes(), server_id.as_bytes(), seed.as_bytes()]));
    Ok(Credential(hasher.finalize().into()))
}

/// `δ_i = H^(N - i)(C)`. Index `N` is the credential itself.
pub fn otp_at_index(credential: &Credential, chain_length: u32, index: u32) -> Result<OneTimePassword, CryptoError> {
    if index > chain_length {
        return Err(CryptoError::IndexOutOfRange { index, chain_length });
    }
    let mut digest = credential.0;
    for _ in index..chain_length {
        digest = Sha256::digest(digest).into();
    }
    Ok(OneTimePassword { digest, index })
}

/// True iff hashing `candidate` once yields `predecessor_digest`.
pub fn chain_step_verify(candidate: &OneTimePassword, predecessor_digest: &[u8; DIGEST_LEN]) -> bool {
    let stepped: [u8; DIGEST_LEN] = Sha256::digest(candidate.digest).into();
    stepped.ct_eq(predecessor_digest).into()
}

/// `H(n_d ‖ δ_i)`, the value a genuine server returns after a login.
pub fn success_digest(device_nonce: &Nonce, otp: &OneTimePassword) -> [u8; DIGEST_LEN] {
    Sha256::digest(join_fields(&[device_nonce.as_bytes(), otp.digest()])).into()
}

/// Key for a recovery envelope on the reseed path, where the server cannot
/// derive the new chain. Bound to the server nonce and the fresh seed, both
/// of which reach only the SIM holder over the secure channel.
pub fn reseed_envelope_key(server_nonce: &Nonce, seed: &ServerSeed) -> [u8; KEY_LEN] {
    let digest = Sha256::digest(join_fields(&[RESEED_LABEL, server_nonce.as_bytes(), seed.as_bytes()]));
    let mut key = [0u8; KEY_LEN];
    key.copy_from_slice(&digest[..KEY_LEN]);
    key
}

fn check_key(key: &[u8]) -> Result<(), CryptoError> {
    if key.len() != KEY_LEN {
        return Err(CryptoError::InvalidArgument("key must be 16 bytes"));
    }
    Ok(())
}

fn compute_mac(key: &[u8], associated_id: &str, ciphertext: &[u8], iv: &[u8]) -> HmacSha1 {
    let mut input = Vec::with_capacity(associated_id.len() + ciphertext.len() + iv.len() + 12);
    put_field(&mut input, associated_id.as_bytes());
    put_field(&mut input, ciphertext);
    put_field(&mut input, iv);
    let mut mac = HmacSha1::new_from_slice(key).expect("HMAC accepts any key length");
    mac.update(&input);
    mac
}

/// Encrypts then MACs `plaintext` under `key` with a fresh random IV.
pub fn seal<R: RngCore + CryptoRng + ?Sized>(
    key: &[u8],
    associated_id: &str,
    plaintext: &[u8],
    rng: &mut R,
) -> Result<AuthenticatedEnvelope, CryptoError> {
    let mut iv = [0u8; IV_LEN];
    rng.fill_bytes(&mut iv);
    seal_with_iv(key, associated_id, plaintext, iv)
}

/// [`seal`] with a caller-chosen IV. Reusing an IV under one key leaks
/// plaintext equality; only known-answer tests should need this.
pub fn seal_with_iv(
    key: &[u8],
    associated_id: &str,
    plaintext: &[u8],
    iv: [u8; IV_LEN],
) -> Result<AuthenticatedEnvelope, CryptoError> {
    check_key(key)?;
    if plaintext.is_empty() {
        return Err(CryptoError::InvalidArgument("plaintext is empty"));
    }
    let ciphertext = CbcEncryptor::new(key.into(), (&iv).into()).encrypt_padded_vec_mut::<Pkcs7>(plaintext);
    let mac = compute_mac(key, associated_id, &ciphertext, &iv).finalize().into_bytes();
    Ok(AuthenticatedEnvelope { ciphertext, iv, mac: mac.into() })
}

/// Verifies the MAC, then decrypts. No plaintext is produced unless the MAC
/// verifies.
pub fn open(key: &[u8], associated_id: &str, envelope: &AuthenticatedEnvelope) -> Result<Vec<u8>, CryptoError> {
    check_key(key)?;
    compute_mac(key, associated_id, &envelope.ciphertext, &envelope.iv)
        .verify_slice(&envelope.mac)
        .map_err(|_| CryptoError::AuthenticationFailure)?;
    CbcDecryptor::new(key.into(), (&envelope.iv).into())
        .decrypt_padded_vec_mut::<Pkcs7>(&envelope.ciphertext)
        .map_err(|_| CryptoError::CorruptEnvelope)
}
