//! Blockchain data structures: canonical encoding, digests and signatures,
//! Merkle roots, blocks, versioned world state and the validated chain.

pub mod block;
pub mod chain;
pub mod codec;
pub mod crypto;
pub mod export;
pub mod merkle;
pub mod state;

pub use block::{Block, BlockHeader, ContractId, Transaction, TxKind, ValidityFlag, Version};
pub use chain::{genesis_block, seal_block, verify_chain, Chain, ChainConfig, ChainError, EndorsementPolicy, FirstBadBlock};
pub use crypto::{Digest, IdentityId, IdentityRegistry, Role};
pub use state::WorldState;
