//! Telecom provider: SIM directory, `K_sd` distribution and forwarding of
//! registration and recovery requests to servers.
//!
//! The TSP mints `K_sd` for each registration and hands it on without
//! keeping a copy.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::{CryptoRng, RngCore};
use thiserror::Error;

use crate::codec::put_field;
use crate::crypto::SessionKey;
use crate::wire::{PhoneNumber, RecoveryRequest, RegistrationRequest, TspRecoveryForward, TspRegistrationForward};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SimId(String);

impl SimId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for SimId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TspError {
    #[error("unknown subscriber {0}")]
    UnknownSubscriber(SimId),
    #[error("SIM {0} is disabled")]
    SimDisabled(SimId),
    #[error("unknown server {0}")]
    UnknownServer(String),
    #[error("SIM {0} is already enrolled")]
    DuplicateSim(SimId),
}

impl TspError {
    pub fn kind(&self) -> &'static str {
        match self {
            TspError::UnknownSubscriber(_) => "unknown-subscriber",
            TspError::SimDisabled(_) => "sim-disabled",
            TspError::UnknownServer(_) => "unknown-server",
            TspError::DuplicateSim(_) => "duplicate-sim",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct SimEntry {
    number: PhoneNumber,
    enabled: bool,
}

#[derive(Debug, Clone, Default)]
pub struct TspAgent {
    directory: BTreeMap<SimId, SimEntry>,
    servers: BTreeSet<String>,
    // Which SIM the next response from a server should be relayed to.
    routes: BTreeMap<String, SimId>,
}

impl TspAgent {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn enroll(&mut self, sim: SimId, number: PhoneNumber) -> Result<(), TspError> {
        if self.directory.contains_key(&sim) {
            return Err(TspError::DuplicateSim(sim));
        }
        self.directory.insert(sim, SimEntry { number, enabled: true });
        Ok(())
    }

    pub fn register_server(&mut self, server_id: impl Into<String>) {
        self.servers.insert(server_id.into());
    }

    /// Number bound to `sim`, whether or not the SIM is still enabled.
    pub fn number_of(&self, sim: &SimId) -> Option<&PhoneNumber> {
        self.directory.get(sim).map(|e| &e.number)
    }

    pub fn is_enabled(&self, sim: &SimId) -> bool {
        self.directory.get(sim).is_some_and(|e| e.enabled)
    }

    /// Looks up `T_u`, mints a fresh `K_sd` and builds the forward for the
    /// server named in the request.
    pub fn forward_registration<R: RngCore + CryptoRng + ?Sized>(
        &mut self,
        request: &RegistrationRequest,
        sim: &SimId,
        rng: &mut R,
    ) -> Result<TspRegistrationForward, TspError> {
        let number = self.subscriber(sim)?.clone();
        self.known_server(&request.server_id)?;
        self.routes.insert(request.server_id.clone(), sim.clone());
        Ok(TspRegistrationForward {
            user_id: request.user_id.clone(),
            user_phone: number,
            session_key: SessionKey::generate(rng),
        })
    }

    pub fn forward_recovery(&mut self, request: &RecoveryRequest, sim: &SimId) -> Result<TspRecoveryForward, TspError> {
        let number = self.subscriber(sim)?.clone();
        self.known_server(&request.server_id)?;
        self.routes.insert(request.server_id.clone(), sim.clone());
        Ok(TspRecoveryForward { user_id: request.user_id.clone(), user_phone: number })
    }

    /// SIM that a response from `server_id` goes back to.
    pub fn relay_target(&self, server_id: &str) -> Result<&SimId, TspError> {
        let sim = self.routes.get(server_id).ok_or_else(|| TspError::UnknownServer(server_id.to_owned()))?;
        if !self.is_enabled(sim) {
            return Err(TspError::SimDisabled(sim.clone()));
        }
        Ok(sim)
    }

    pub fn disable_sim(&mut self, sim: &SimId) -> Result<(), TspError> {
        let entry = self.directory.get_mut(sim).ok_or_else(|| TspError::UnknownSubscriber(sim.clone()))?;
        entry.enabled = false;
        Ok(())
    }

    /// Binds the number of `old` to `new` and disables every other SIM that
    /// carried that number.
    pub fn reissue_sim(&mut self, old: &SimId, new: SimId) -> Result<(), TspError> {
        let number = self.directory.get(old).ok_or_else(|| TspError::UnknownSubscriber(old.clone()))?.number.clone();
        if self.directory.contains_key(&new) {
            return Err(TspError::DuplicateSim(new));
        }
        for entry in self.directory.values_mut() {
            if entry.number == number {
                entry.enabled = false;
            }
        }
        self.directory.insert(new, SimEntry { number, enabled: true });
        Ok(())
    }

    /// Every byte of agent state, for secret-hygiene audits.
    pub fn snapshot(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for (sim, entry) in &self.directory {
            put_field(&mut out, sim.0.as_bytes());
            put_field(&mut out, entry.number.as_str().as_bytes());
            put_field(&mut out, &[entry.enabled as u8]);
        }
        for server in &self.servers {
            put_field(&mut out, server.as_bytes());
        }
        for (server, sim) in &self.routes {
            put_field(&mut out, server.as_bytes());
            put_field(&mut out, sim.0.as_bytes());
        }
        out
    }

    fn subscriber(&self, sim: &SimId) -> Result<&PhoneNumber, TspError> {
        let entry = self.directory.get(sim).ok_or_else(|| TspError::UnknownSubscriber(sim.clone()))?;
        if !entry.enabled {
            return Err(TspError::SimDisabled(sim.clone()));
        }
        Ok(&entry.number)
    }

    fn known_server(&self, server_id: &str) -> Result<(), TspError> {
        if self.servers.contains(server_id) {
            Ok(())
        } else {
            Err(TspError::UnknownServer(server_id.to_owned()))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn tsp() -> TspAgent {
        let mut tsp = TspAgent::new();
        tsp.enroll(SimId::new("sim-1"), PhoneNumber::parse("15550001").unwrap()).unwrap();
        tsp.register_server("bank.example");
        tsp
    }

    fn reg(server: &str) -> RegistrationRequest {
        RegistrationRequest { user_id: "alice".into(), server_id: server.into() }
    }

    #[test]
    fn registration_forward_uses_directory_number_and_fresh_keys() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let mut tsp = tsp();
        let sim = SimId::new("sim-1");
        let a = tsp.forward_registration(&reg("bank.example"), &sim, &mut rng).unwrap();
        let b = tsp.forward_registration(&reg("bank.example"), &sim, &mut rng).unwrap();
        assert_eq!(a.user_phone.as_str(), "15550001");
        assert_ne!(a.session_key, b.session_key);
        let snap = tsp.snapshot();
        for key in [a.session_key, b.session_key] {
            assert!(!snap.windows(16).any(|w| w == key.as_bytes()));
        }
        assert_eq!(tsp.relay_target("bank.example").unwrap(), &sim);
    }

    #[test]
    fn forwarding_errors() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let mut tsp = tsp();
        let sim = SimId::new("sim-1");
        let err = tsp.forward_registration(&reg("bank.example"), &SimId::new("nope"), &mut rng).unwrap_err();
        assert_eq!(err.kind(), "unknown-subscriber");
        let err = tsp.forward_registration(&reg("shop.example"), &sim, &mut rng).unwrap_err();
        assert_eq!(err.kind(), "unknown-server");
        let rec = RecoveryRequest { user_id: "alice".into(), server_id: "shop.example".into() };
        assert_eq!(tsp.forward_recovery(&rec, &sim).unwrap_err().kind(), "unknown-server");

        tsp.disable_sim(&sim).unwrap();
        let err = tsp.forward_registration(&reg("bank.example"), &sim, &mut rng).unwrap_err();
        assert_eq!(err.kind(), "sim-disabled");
        assert_eq!(tsp.disable_sim(&SimId::new("nope")).unwrap_err().kind(), "unknown-subscriber");
    }

    #[test]
    fn reissue_keeps_number_and_latest_wins() {
        let mut tsp = tsp();
        let rec = RecoveryRequest { user_id: "alice".into(), server_id: "bank.example".into() };
        tsp.reissue_sim(&SimId::new("sim-1"), SimId::new("sim-2")).unwrap();
        tsp.reissue_sim(&SimId::new("sim-2"), SimId::new("sim-3")).unwrap();
        assert!(!tsp.is_enabled(&SimId::new("sim-1")));
        assert!(!tsp.is_enabled(&SimId::new("sim-2")));
        let fwd = tsp.forward_recovery(&rec, &SimId::new("sim-3")).unwrap();
        assert_eq!(fwd.user_phone.as_str(), "15550001");
        assert_eq!(tsp.forward_recovery(&rec, &SimId::new("sim-1")).unwrap_err().kind(), "sim-disabled");
        let err = tsp.reissue_sim(&SimId::new("ghost"), SimId::new("sim-4")).unwrap_err();
        assert_eq!(err.kind(), "unknown-subscriber");
    }
}
