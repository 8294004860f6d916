//! Smart contracts and the simulated transaction flow.

pub mod contracts;
pub mod network;
pub mod standalone;

pub use contracts::{ContractError, SeedData};
pub use network::{KernelHost, LedgerConfig, LedgerEvent, LedgerHost, LedgerMsg, LedgerNet, QueryReceipt, TxReceipt};
pub use standalone::StandaloneLedger;
