//! Hash-linked chain with commit-time validation and full re-verification.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;

use bytes::Bytes;
use serde::{Deserialize, Serialize};

use super::block::{Block, BlockHeader, Transaction, TxKind, ValidityFlag, Version};
use super::crypto::{CryptoError, Digest, IdentityRegistry, Role};
use super::merkle::{self, MerkleProof};
use super::state::WorldState;
use crate::kernel::SimTime;

/// Number of distinct registered peers whose endorsement an invoke needs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EndorsementPolicy {
    pub threshold: usize,
}

impl EndorsementPolicy {
    pub fn majority_of(peers: usize) -> Self {
        EndorsementPolicy { threshold: peers / 2 + 1 }
    }

    /// Counts distinct peers with a verifying signature over the endorsement message.
    pub fn valid_endorsers(&self, tx: &Transaction, registry: &IdentityRegistry) -> usize {
        let msg = tx.endorsement_message();
        let mut seen = HashSet::new();
        for e in &tx.endorsements {
            if registry.role(&e.peer) == Some(Role::Peer) && registry.verify(&e.peer, &msg, &e.signature) {
                seen.insert(e.peer.as_str());
            }
        }
        seen.len()
    }

    pub fn satisfied(&self, tx: &Transaction, registry: &IdentityRegistry) -> bool {
        self.valid_endorsers(tx, registry) >= self.threshold
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainConfig {
    pub policy: EndorsementPolicy,
    pub max_block_txs: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChainError {
    NonConsecutive,
    BadPrevHash,
    BadRoot,
    BadSignature,
    /// Recorded validity flags differ from re-derived ones.
    BadValidity,
    EmptyBlock,
    TooManyTxs,
    BadGenesis,
    /// The block's bytes do not decode.
    Malformed,
}

impl fmt::Display for ChainError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ChainError::NonConsecutive => "non-consecutive block number",
            ChainError::BadPrevHash => "prev_hash does not match predecessor",
            ChainError::BadRoot => "merkle root mismatch",
            ChainError::BadSignature => "bad proposer signature",
            ChainError::BadValidity => "validity flags do not replay",
            ChainError::EmptyBlock => "empty block",
            ChainError::TooManyTxs => "block exceeds batch size",
            ChainError::BadGenesis => "malformed genesis block",
            ChainError::Malformed => "undecodable block",
        };
        f.write_str(s)
    }
}

impl std::error::Error for ChainError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
#[error("first bad block {number}: {reason}")]
pub struct FirstBadBlock {
    pub number: u64,
    pub reason: ChainError,
}

fn header_message(h: &BlockHeader) -> [u8; 32] {
    h.digest().0
}

/// Signs `header` as `proposer` and assembles an unvalidated block.
pub fn seal_block(
    registry: &IdentityRegistry,
    proposer: &str,
    number: u64,
    prev_hash: Digest,
    timestamp: SimTime,
    txs: Vec<Transaction>,
) -> Result<Block, CryptoError> {
    let merkle_root = Block::compute_root(&txs).unwrap_or(Digest::ZERO);
    let header = BlockHeader { number, prev_hash, merkle_root, proposer: proposer.to_string(), timestamp };
    let signature = Bytes::from(registry.sign(proposer, &header_message(&header))?);
    Ok(Block { header, signature, txs, validity_flags: Vec::new() })
}

/// Builds the genesis block from configuration transactions, signed by the CA.
pub fn genesis_block(registry: &IdentityRegistry, ca: &str, txs: Vec<Transaction>) -> Result<Block, CryptoError> {
    let n = txs.len();
    let mut b = seal_block(registry, ca, 0, Digest::ZERO, SimTime::ZERO, txs)?;
    b.validity_flags = vec![ValidityFlag::Valid; n];
    Ok(b)
}

#[derive(Debug, Clone)]
pub struct Chain {
    blocks: Vec<Block>,
    state: WorldState,
    registry: IdentityRegistry,
    config: ChainConfig,
    tx_index: HashMap<Digest, Version>,
    payload_index: HashMap<Digest, Version>,
}

impl Chain {
    pub fn new(genesis: Block, registry: IdentityRegistry, config: ChainConfig) -> Result<Chain, ChainError> {
        let mut c = Chain {
            blocks: Vec::new(),
            state: WorldState::new(),
            registry,
            config,
            tx_index: HashMap::new(),
            payload_index: HashMap::new(),
        };
        c.append_block(genesis)?;
        Ok(c)
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn height(&self) -> u64 {
        self.blocks.len() as u64
    }

    pub fn tip(&self) -> &Block {
        self.blocks.last().expect("chain always holds genesis")
    }

    pub fn tip_digest(&self) -> Digest {
        self.tip().header.digest()
    }

    pub fn state(&self) -> &WorldState {
        &self.state
    }

    pub fn registry(&self) -> &IdentityRegistry {
        &self.registry
    }

    pub fn config(&self) -> ChainConfig {
        self.config
    }

    pub fn contains_tx(&self, id: &Digest) -> bool {
        self.tx_index.contains_key(id)
    }

    pub fn tx_location(&self, id: &Digest) -> Option<Version> {
        self.tx_index.get(id).copied()
    }

    pub fn tx(&self, loc: Version) -> Option<&Transaction> {
        self.blocks.get(loc.block as usize)?.txs.get(loc.tx as usize)
    }

    /// The payload bytes whose digest is `d`, from the committed transaction that carried them.
    pub fn payload(&self, d: &Digest) -> Option<&Bytes> {
        self.payload_index.get(d).and_then(|loc| self.tx(*loc)).map(|t| &t.payload)
    }

    pub fn prove_tx(&self, id: &Digest) -> Option<(Digest, Digest, MerkleProof)> {
        let loc = self.tx_location(id)?;
        let block = &self.blocks[loc.block as usize];
        let leaves = block.leaves();
        let proof = merkle::prove(&leaves, loc.tx as usize).ok()?;
        Some((block.header.merkle_root, leaves[loc.tx as usize], proof))
    }

    fn check_structure(&self, block: &Block, payload_digests: &[Digest]) -> Result<(), ChainError> {
        let h = &block.header;
        let expected = self.blocks.len() as u64;
        if h.number != expected {
            return Err(ChainError::NonConsecutive);
        }
        let prev = match self.blocks.last() {
            Some(tip) => tip.header.digest(),
            None => Digest::ZERO,
        };
        if h.prev_hash != prev {
            return Err(ChainError::BadPrevHash);
        }
        if block.txs.is_empty() {
            return Err(ChainError::EmptyBlock);
        }
        let leaves: Vec<Digest> = block.txs.iter().zip(payload_digests).map(|(t, d)| t.leaf_with(d)).collect();
        if merkle::root_of_leaves(&leaves).map_err(|_| ChainError::EmptyBlock)? != h.merkle_root {
            return Err(ChainError::BadRoot);
        }
        let proposer_role = if expected == 0 { Role::Ca } else { Role::Orderer };
        if self.registry.role(&h.proposer) != Some(proposer_role)
            || !self.registry.verify(&h.proposer, &header_message(h), &block.signature)
        {
            return Err(ChainError::BadSignature);
        }
        if expected > 0 && block.txs.len() > self.config.max_block_txs {
            return Err(ChainError::TooManyTxs);
        }
        Ok(())
    }

    /// Derives validity flags for `block` against the current state.
    pub fn validate(&self, block: &Block) -> Vec<ValidityFlag> {
        let digests: Vec<Digest> = block.txs.iter().map(Transaction::payload_digest).collect();
        self.validate_with(block, &digests)
    }

    fn validate_with(&self, block: &Block, payload_digests: &[Digest]) -> Vec<ValidityFlag> {
        if block.header.number == 0 {
            return block
                .txs
                .iter()
                .map(|t| if t.kind == TxKind::Config { ValidityFlag::Valid } else { ValidityFlag::InvalidEndorsement })
                .collect();
        }
        let mut flags = Vec::with_capacity(block.txs.len());
        let mut overlay: BTreeMap<&str, Option<Version>> = BTreeMap::new();
        let mut in_block: HashSet<Digest> = HashSet::new();
        for (idx, tx) in block.txs.iter().enumerate() {
            let flag = if self.tx_index.contains_key(&tx.tx_id) || in_block.contains(&tx.tx_id) {
                ValidityFlag::InvalidDuplicate
            } else if tx.kind != TxKind::Invoke
                || tx.id_with(&payload_digests[idx]) != tx.tx_id
                || self.registry.role(&tx.creator) != Some(Role::Client)
                || !self.config.policy.satisfied(tx, &self.registry)
            {
                ValidityFlag::InvalidEndorsement
            } else if tx.read_set.iter().any(|r| {
                let current = overlay.get(r.key.as_str()).copied().unwrap_or_else(|| self.state.version(&r.key));
                current != r.version
            }) {
                ValidityFlag::InvalidVersionConflict
            } else {
                ValidityFlag::Valid
            };
            in_block.insert(tx.tx_id);
            if flag == ValidityFlag::Valid {
                let v = Version { block: block.header.number, tx: idx as u32 };
                for w in &tx.write_set {
                    overlay.insert(w.key.as_str(), Some(v));
                }
            }
            flags.push(flag);
        }
        flags
    }

    /// Checks links, root and signature, derives validity flags (or checks
    /// recorded ones), then commits and applies the block.
    pub fn append_block(&mut self, mut block: Block) -> Result<&Block, ChainError> {
        let digests: Vec<Digest> = block.txs.iter().map(Transaction::payload_digest).collect();
        self.check_structure(&block, &digests)?;
        if block.header.number == 0 && block.txs.iter().any(|t| t.kind != TxKind::Config) {
            return Err(ChainError::BadGenesis);
        }
        let flags = self.validate_with(&block, &digests);
        if block.validity_flags.is_empty() {
            block.validity_flags = flags;
        } else if block.validity_flags != flags {
            return Err(ChainError::BadValidity);
        }
        self.state.apply(&block).expect("number checked above");
        let number = block.header.number;
        for (i, tx) in block.txs.iter().enumerate() {
            let loc = Version { block: number, tx: i as u32 };
            self.tx_index.entry(tx.tx_id).or_insert(loc);
            if block.validity_flags[i] == ValidityFlag::Valid && !tx.payload.is_empty() {
                self.payload_index.entry(digests[i]).or_insert(loc);
            }
        }
        self.blocks.push(block);
        Ok(self.blocks.last().unwrap())
    }
}

/// Re-walks `blocks` from genesis: links, roots, signatures and a replay of
/// every validity flag. Reports the first violation.
pub fn verify_chain(blocks: &[Block], registry: &IdentityRegistry, config: ChainConfig) -> Result<Chain, FirstBadBlock> {
    let mut iter = blocks.iter();
    let genesis = iter.next().ok_or(FirstBadBlock { number: 0, reason: ChainError::BadGenesis })?;
    let mut chain =
        Chain::new(genesis.clone(), registry.clone(), config).map_err(|reason| FirstBadBlock { number: 0, reason })?;
    if genesis.validity_flags.len() != genesis.txs.len() {
        return Err(FirstBadBlock { number: 0, reason: ChainError::BadValidity });
    }
    for (i, b) in iter.enumerate() {
        let number = i as u64 + 1;
        if b.validity_flags.len() != b.txs.len() {
            return Err(FirstBadBlock { number, reason: ChainError::BadValidity });
        }
        chain.append_block(b.clone()).map_err(|reason| FirstBadBlock { number, reason })?;
    }
    Ok(chain)
}
