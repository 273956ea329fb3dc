//! One-time-password authentication with a cell phone as the password
//! store: hash-chain credentials, authenticated SMS envelopes, the phone,
//! server and telecom agents, and a deterministic network simulator for
//! running attack scenarios against them.

mod codec;
pub mod crypto;
pub mod phone;
pub mod scenario;
pub mod server;
pub mod simnet;
pub mod tsp;
pub mod wire;
