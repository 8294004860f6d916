//! Deterministic discrete-event simulator of an Internet-of-Drones
//! search-and-rescue system with an embedded permissioned ledger.

pub mod device;
pub mod energy;
pub mod fleet;
pub mod kernel;
pub mod ledger;
pub mod metrics;
pub mod netsim;
pub mod offload;
pub mod raft;
pub mod scenario;
pub mod sim;
pub mod trace;
pub mod txflow;
