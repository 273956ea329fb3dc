//! Multi-frame adversary strategies.

use rand::{Rng, RngCore};
use rand_chacha::ChaCha20Rng;

use super::StepError;
use crate::codec::join_fields;
use crate::crypto::{
    derive_credential, otp_at_index, seal, AuthenticatedEnvelope, Credential, LongTermPassword, Nonce, ServerSeed,
    IV_LEN, MAC_LEN,
};
use crate::simnet::{ChannelKind, Hop, Injection, Network, NodeId};
use crate::wire::{self, LoginSms, Message, MessageKind};

/// Replays every kiosk-side frame plus the raw keystroke log. Each blob goes
/// to the server over HTTP, to the server as SMS from the user's number, and
/// to the phone over the local link.
pub(super) fn replay_kiosk_log(net: &mut Network, server: &str) -> Result<(), StepError> {
    let mut blobs: Vec<Vec<u8>> = net
        .adversary()
        .captures()
        .iter()
        .filter(|c| c.hop.from == NodeId::Kiosk || c.hop.to == NodeId::Kiosk)
        .map(|c| c.bytes.clone())
        .collect();
    blobs.push(net.kiosk_log().to_vec());
    if blobs.len() == 1 && blobs[0].is_empty() {
        return Err(StepError::Failed("kiosk log is empty".into()));
    }
    let target = NodeId::Server(server.to_owned());
    let user_phone = net.user().phone.clone();
    for bytes in blobs {
        let hops = [
            (Hop::new(ChannelKind::KioskHttp, NodeId::Adversary, target.clone()), None),
            (Hop::new(ChannelKind::Sms, NodeId::Adversary, target.clone()), Some(user_phone.clone())),
            (Hop::new(ChannelKind::LocalLink, NodeId::Kiosk, NodeId::Phone), None),
        ];
        for (hop, sender) in hops {
            net.inject(Injection { hop, bytes: bytes.clone(), sender, delay: 0 })?;
            net.run_until_idle()?;
        }
    }
    Ok(())
}

/// Everything the adversary holds after `source` leaks: the user's record
/// there, including the credential, plus all captured frames.
struct Leak {
    user_id: String,
    credential: Credential,
    chain_length: u32,
    captured_sms: Vec<Vec<u8>>,
    dictionary: Vec<Credential>,
}

fn leak(net: &Network, source: &str, target: &str, rng: &mut ChaCha20Rng) -> Result<Leak, StepError> {
    let user_id = net.user().user_id.clone();
    let account = net
        .server(source)
        .and_then(|s| s.account(&user_id))
        .ok_or_else(|| StepError::Failed(format!("no account for {user_id} at {source}")))?;
    let credential = *account
        .credential()
        .ok_or_else(|| StepError::Failed(format!("account at {source} never completed registration")))?;
    let seed = *account.seed();

    // Offline cracking of the leaked credential is assumed to succeed, so the
    // real password is among the guesses.
    let mut guesses: Vec<LongTermPassword> = ["123456", "password", "letmein", "qwerty"]
        .iter()
        .map(|p| LongTermPassword::new(p.as_bytes().to_vec()).expect("valid password"))
        .collect();
    guesses.push(net.user().password.clone());
    let mut random_seed = [0u8; 16];
    rng.fill_bytes(&mut random_seed);
    let seeds = [seed, ServerSeed::from_bytes([0; 16]), ServerSeed::from_bytes(random_seed)];
    let mut dictionary = Vec::new();
    for guess in &guesses {
        for id in [target, source] {
            for s in &seeds {
                dictionary.push(derive_credential(guess, id, s).map_err(|e| StepError::Failed(e.to_string()))?);
            }
        }
    }

    let captured_sms = net
        .adversary()
        .captures()
        .iter()
        .filter(|c| c.kind == Some(MessageKind::LoginSms))
        .map(|c| c.bytes.clone())
        .collect();
    Ok(Leak { user_id, credential, chain_length: account.chain_length(), captured_sms, dictionary })
}

/// Tries `attempts` logins at `target` as the user, using what leaked from
/// `source`. Each attempt fetches a fresh challenge first, then sends one
/// forged login SMS from the user's number.
pub(super) fn password_reuse(
    net: &mut Network,
    source: &str,
    target: &str,
    attempts: u32,
    rng: &mut ChaCha20Rng,
) -> Result<(), StepError> {
    let leak = leak(net, source, target, rng)?;
    let target_node = NodeId::Server(target.to_owned());
    let user_phone = net.user().phone.clone();
    let n = leak.chain_length;

    for attempt in 0..attempts {
        net.adversary_login_request(target)?;
        net.run_until_idle()?;
        let server_nonce = latest_challenge(net, target).unwrap_or_else(|| Nonce::generate(rng));
        let round = attempt / 5;

        let bytes = match attempt % 5 {
            0 => {
                let otp = otp_at_index(&leak.credential, n, round % (n + 1)).expect("index in range");
                forged_login(&leak.user_id, &otp.envelope_key(), &server_nonce, rng)
            }
            1 => {
                let credential = &leak.dictionary[round as usize % leak.dictionary.len()];
                let otp = otp_at_index(credential, n, round % (n + 1)).expect("index in range");
                forged_login(&leak.user_id, &otp.envelope_key(), &server_nonce, rng)
            }
            2 if !leak.captured_sms.is_empty() => leak.captured_sms[round as usize % leak.captured_sms.len()].clone(),
            3 if !leak.captured_sms.is_empty() => {
                let mut bytes = leak.captured_sms[round as usize % leak.captured_sms.len()].clone();
                for _ in 0..rng.gen_range(1..=3) {
                    let bit = rng.gen_range(0..bytes.len() * 8);
                    bytes[bit / 8] ^= 1 << (bit % 8);
                }
                bytes
            }
            _ => random_login(&leak.user_id, rng),
        };
        net.inject(Injection {
            hop: Hop::new(ChannelKind::Sms, NodeId::Adversary, target_node.clone()),
            bytes,
            sender: Some(user_phone.clone()),
            delay: 0,
        })?;
        net.run_until_idle()?;
    }
    Ok(())
}

fn latest_challenge(net: &Network, server: &str) -> Option<Nonce> {
    net.adversary().inbox().iter().rev().find_map(|c| match wire::decode(&c.bytes) {
        Ok(Message::ServerChallenge(ch)) if ch.server_id == server => Some(ch.nonce),
        _ => None,
    })
}

fn forged_login(user_id: &str, key: &[u8], server_nonce: &Nonce, rng: &mut ChaCha20Rng) -> Vec<u8> {
    let device_nonce = Nonce::generate(rng);
    let plaintext = join_fields(&[device_nonce.as_bytes(), server_nonce.as_bytes()]);
    let envelope = seal(key, user_id, &plaintext, rng).expect("16-byte key");
    wire::encode(&LoginSms { user_id: user_id.to_owned(), envelope }.into())
}

fn random_login(user_id: &str, rng: &mut ChaCha20Rng) -> Vec<u8> {
    let mut ciphertext = vec![0u8; 48];
    rng.fill_bytes(&mut ciphertext);
    let iv: [u8; IV_LEN] = rng.gen();
    let mut mac = [0u8; MAC_LEN];
    rng.fill_bytes(&mut mac);
    let envelope = AuthenticatedEnvelope::new(ciphertext, iv, mac).expect("block-aligned ciphertext");
    wire::encode(&LoginSms { user_id: user_id.to_owned(), envelope }.into())
}
