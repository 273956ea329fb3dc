//! Text account store.
//!
//! ```text
//! chainpass-store v1
//! <user_id>\t<T_u>\t<hex secret>\t<hex seed>\t<next_index>\t<chain_length>\t<status>
//! ```
//!
//! Records are sorted by user id and every line ends in `\n`. The secret
//! column holds `C` (32 bytes) for active and recovering accounts and
//! `K_sd` (16 bytes) for pending ones.

use std::collections::BTreeMap;

use super::{validate_user_id, AccountRecord, AccountSecret, AccountStatus, ServerError};
use crate::crypto::{Credential, HashChainCursor, ServerSeed, SessionKey};
use crate::wire::PhoneNumber;

pub const STORE_HEADER: &str = "chainpass-store v1";

pub(super) fn render<'a>(records: impl Iterator<Item = &'a AccountRecord>) -> String {
    let mut out = String::from(STORE_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            r.user_id,
            r.user_phone,
            hex::encode(r.secret.as_bytes()),
            hex::encode(r.cursor.seed().as_bytes()),
            r.cursor.next_index(),
            r.cursor.chain_length(),
            r.status,
        ));
    }
    out
}

pub(super) fn parse(text: &str) -> Result<BTreeMap<String, AccountRecord>, ServerError> {
    if !text.is_empty() && !text.ends_with('\n') {
        let line = text.lines().count();
        return Err(corrupt(line, "missing final newline"));
    }
    let mut lines = text.split_terminator('\n').enumerate().map(|(i, l)| (i + 1, l));
    match lines.next() {
        Some((_, STORE_HEADER)) => {}
        Some((n, _)) => return Err(corrupt(n, "bad header")),
        None => return Err(corrupt(1, "missing header")),
    }
    let mut accounts = BTreeMap::new();
    for (n, line) in lines {
        let record = parse_record(line).map_err(|reason| corrupt(n, reason))?;
        if accounts.insert(record.user_id.clone(), record).is_some() {
            return Err(corrupt(n, "duplicate user id"));
        }
    }
    Ok(accounts)
}

fn parse_record(line: &str) -> Result<AccountRecord, &'static str> {
    let fields: Vec<&str> = line.split('\t').collect();
    let [user_id, phone, secret, seed, next, n, status] = fields[..] else {
        return Err("expected 7 tab-separated fields");
    };
    validate_user_id(user_id).map_err(|_| "invalid user id")?;
    let user_phone = PhoneNumber::parse(phone).map_err(|_| "invalid phone number")?;
    let status = AccountStatus::parse(status).ok_or("unknown status")?;
    let secret = decode_hex(secret)?;
    let secret = match status {
        AccountStatus::Pending => {
            AccountSecret::SessionKey(SessionKey::from_slice(&secret).ok_or("session key length")?)
        }
        AccountStatus::Active | AccountStatus::Recovering => {
            AccountSecret::Credential(Credential::from_slice(&secret).ok_or("credential length")?)
        }
    };
    let seed = ServerSeed::from_slice(&decode_hex(seed)?).ok_or("seed length")?;
    let next_index = parse_u32(next).ok_or("invalid next_index")?;
    let chain_length = parse_u32(n).ok_or("invalid chain_length")?;
    let cursor = HashChainCursor::new(seed, chain_length, next_index).map_err(|_| "index out of range")?;
    Ok(AccountRecord { user_id: user_id.to_owned(), user_phone, secret, cursor, status })
}

// Lowercase only, so that a loaded store re-renders byte for byte.
fn decode_hex(s: &str) -> Result<Vec<u8>, &'static str> {
    if s.bytes().any(|b| b.is_ascii_uppercase()) {
        return Err("uppercase hex");
    }
    hex::decode(s).map_err(|_| "invalid hex")
}

fn parse_u32(s: &str) -> Option<u32> {
    if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()) || (s.len() > 1 && s.starts_with('0')) {
        return None;
    }
    s.parse().ok()
}

fn corrupt(line: usize, reason: &str) -> ServerError {
    ServerError::CorruptStore { line, reason: reason.to_owned() }
}
