//! Transactions, block headers and blocks with their canonical encodings.

use std::fmt;
use std::str::FromStr;

use bytes::Bytes;
use serde::{Deserialize, Serialize};

use super::codec::{DecodeError, Decoder, Encoder};
use super::crypto::{Digest, IdentityId};
use super::merkle::{self, MerkleError};
use crate::kernel::SimTime;

const TX_FORMAT: u8 = 1;
const BLOCK_FORMAT: u8 = 1;

/// Position of the write that produced a key's current value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Version {
    pub block: u64,
    pub tx: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TxKind {
    Invoke,
    Query,
    /// Seed data written in the genesis block only.
    Config,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContractId {
    DroneObject,
    RescueTeam,
    Hospital,
}

impl ContractId {
    pub const ALL: [ContractId; 3] = [ContractId::DroneObject, ContractId::RescueTeam, ContractId::Hospital];

    pub fn as_str(self) -> &'static str {
        match self {
            ContractId::DroneObject => "drone_object",
            ContractId::RescueTeam => "rescue_team",
            ContractId::Hospital => "hospital",
        }
    }
}

impl fmt::Display for ContractId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ContractId {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        ContractId::ALL.into_iter().find(|c| c.as_str() == s).ok_or_else(|| format!("unknown contract `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValidityFlag {
    Valid,
    InvalidVersionConflict,
    InvalidEndorsement,
    /// A transaction with the same id was already committed.
    InvalidDuplicate,
}

impl ValidityFlag {
    fn tag(self) -> u8 {
        match self {
            ValidityFlag::Valid => 0,
            ValidityFlag::InvalidVersionConflict => 1,
            ValidityFlag::InvalidEndorsement => 2,
            ValidityFlag::InvalidDuplicate => 3,
        }
    }

    fn from_tag(t: u8) -> Result<Self, DecodeError> {
        Ok(match t {
            0 => ValidityFlag::Valid,
            1 => ValidityFlag::InvalidVersionConflict,
            2 => ValidityFlag::InvalidEndorsement,
            3 => ValidityFlag::InvalidDuplicate,
            tag => return Err(DecodeError::BadTag { what: "validity flag", tag }),
        })
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ValidityFlag::Valid => "valid",
            ValidityFlag::InvalidVersionConflict => "invalid_version_conflict",
            ValidityFlag::InvalidEndorsement => "invalid_endorsement",
            ValidityFlag::InvalidDuplicate => "invalid_duplicate",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReadEntry {
    pub key: String,
    /// `None` records that the key was absent.
    pub version: Option<Version>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WriteEntry {
    pub key: String,
    pub value: Bytes,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Endorsement {
    pub peer: IdentityId,
    pub signature: Bytes,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transaction {
    pub tx_id: Digest,
    pub kind: TxKind,
    pub creator: IdentityId,
    pub contract: ContractId,
    pub function: String,
    /// Canonical JSON arguments.
    pub args: Bytes,
    /// Opaque data carried with the transaction (images, reports).
    pub payload: Bytes,
    pub nonce: u64,
    pub timestamp: SimTime,
    pub read_set: Vec<ReadEntry>,
    pub write_set: Vec<WriteEntry>,
    pub endorsements: Vec<Endorsement>,
}

fn kind_tag(k: TxKind) -> u8 {
    match k {
        TxKind::Invoke => 0,
        TxKind::Query => 1,
        TxKind::Config => 2,
    }
}

fn contract_tag(c: ContractId) -> u8 {
    match c {
        ContractId::DroneObject => 0,
        ContractId::RescueTeam => 1,
        ContractId::Hospital => 2,
    }
}

impl Transaction {
    /// Builds an unendorsed transaction with its id computed.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        kind: TxKind,
        creator: &str,
        contract: ContractId,
        function: &str,
        args: Bytes,
        payload: Bytes,
        nonce: u64,
        timestamp: SimTime,
    ) -> Transaction {
        let mut tx = Transaction {
            tx_id: Digest::ZERO,
            kind,
            creator: creator.to_string(),
            contract,
            function: function.to_string(),
            args,
            payload,
            nonce,
            timestamp,
            read_set: Vec::new(),
            write_set: Vec::new(),
            endorsements: Vec::new(),
        };
        tx.tx_id = tx.compute_id();
        tx
    }

    pub fn payload_digest(&self) -> Digest {
        Digest::of(&self.payload)
    }

    /// Digest of the proposal content (everything a client chooses).
    pub fn compute_id(&self) -> Digest {
        self.id_with(&self.payload_digest())
    }

    /// `compute_id` with the payload digest already in hand.
    pub(crate) fn id_with(&self, payload_digest: &Digest) -> Digest {
        let mut e = Encoder::with_capacity(128);
        e.u8(kind_tag(self.kind))
            .str(&self.creator)
            .u8(contract_tag(self.contract))
            .str(&self.function)
            .bytes(&self.args)
            .fixed(&payload_digest.0)
            .u64(self.nonce)
            .u64(self.timestamp.0);
        Digest::of(&e.finish())
    }

    fn encode_rwset(&self, e: &mut Encoder) {
        e.u32(self.read_set.len() as u32);
        for r in &self.read_set {
            e.str(&r.key);
            match r.version {
                None => {
                    e.u8(0);
                }
                Some(v) => {
                    e.u8(1).u64(v.block).u32(v.tx);
                }
            }
        }
        e.u32(self.write_set.len() as u32);
        for w in &self.write_set {
            e.str(&w.key).bytes(&w.value);
        }
    }

    /// Bytes an endorser signs: the transaction id bound to the simulated read/write sets.
    pub fn endorsement_message(&self) -> Vec<u8> {
        let mut e = Encoder::new();
        e.fixed(b"sarsim-endorse").fixed(&self.tx_id.0);
        self.encode_rwset(&mut e);
        e.finish()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut e = Encoder::with_capacity(self.payload.len() + self.args.len() + 256);
        self.encode_into(&mut e, |e| {
            e.bytes(&self.payload);
        });
        e.finish()
    }

    /// Merkle leaf: the transaction encoding with the payload replaced by its
    /// digest, so a large payload is hashed once per validation.
    pub fn leaf(&self) -> Digest {
        self.leaf_with(&self.payload_digest())
    }

    pub(crate) fn leaf_with(&self, payload_digest: &Digest) -> Digest {
        let mut e = Encoder::with_capacity(self.args.len() + 256);
        self.encode_into(&mut e, |e| {
            e.fixed(&payload_digest.0);
        });
        Digest::of(&e.finish())
    }

    fn encode_into(&self, e: &mut Encoder, payload: impl FnOnce(&mut Encoder)) {
        e.u8(TX_FORMAT)
            .fixed(&self.tx_id.0)
            .u8(kind_tag(self.kind))
            .str(&self.creator)
            .u8(contract_tag(self.contract))
            .str(&self.function)
            .bytes(&self.args);
        payload(e);
        e.u64(self.nonce).u64(self.timestamp.0);
        self.encode_rwset(e);
        e.u32(self.endorsements.len() as u32);
        for en in &self.endorsements {
            e.str(&en.peer).bytes(&en.signature);
        }
    }

    fn decode_from(d: &mut Decoder<'_>) -> Result<Transaction, DecodeError> {
        let fmt = d.u8()?;
        if fmt != TX_FORMAT {
            return Err(DecodeError::BadTag { what: "tx format", tag: fmt });
        }
        let tx_id = Digest(d.fixed()?);
        let kind = match d.u8()? {
            0 => TxKind::Invoke,
            1 => TxKind::Query,
            2 => TxKind::Config,
            tag => return Err(DecodeError::BadTag { what: "tx kind", tag }),
        };
        let creator = d.str()?;
        let contract = match d.u8()? {
            0 => ContractId::DroneObject,
            1 => ContractId::RescueTeam,
            2 => ContractId::Hospital,
            tag => return Err(DecodeError::BadTag { what: "contract", tag }),
        };
        let function = d.str()?;
        let args = d.bytes()?;
        let payload = d.bytes()?;
        let nonce = d.u64()?;
        let timestamp = SimTime(d.u64()?);
        let n = d.u32()?;
        let mut read_set = Vec::new();
        for _ in 0..n {
            let key = d.str()?;
            let version = match d.u8()? {
                0 => None,
                1 => Some(Version { block: d.u64()?, tx: d.u32()? }),
                tag => return Err(DecodeError::BadTag { what: "read version", tag }),
            };
            read_set.push(ReadEntry { key, version });
        }
        let n = d.u32()?;
        let mut write_set = Vec::new();
        for _ in 0..n {
            write_set.push(WriteEntry { key: d.str()?, value: d.bytes()? });
        }
        let n = d.u32()?;
        let mut endorsements = Vec::new();
        for _ in 0..n {
            endorsements.push(Endorsement { peer: d.str()?, signature: d.bytes()? });
        }
        Ok(Transaction {
            tx_id,
            kind,
            creator,
            contract,
            function,
            args,
            payload,
            nonce,
            timestamp,
            read_set,
            write_set,
            endorsements,
        })
    }

    pub fn decode(buf: &Bytes) -> Result<Transaction, DecodeError> {
        let mut d = Decoder::shared(buf);
        let tx = Transaction::decode_from(&mut d)?;
        d.finish()?;
        Ok(tx)
    }

    /// Encoded size in bytes.
    pub fn size_bytes(&self) -> u64 {
        let rw: usize = self.read_set.iter().map(|r| r.key.len() + 5 + if r.version.is_some() { 12 } else { 0 }).sum::<usize>()
            + self.write_set.iter().map(|w| w.key.len() + w.value.len() + 8).sum::<usize>();
        let en: usize = self.endorsements.iter().map(|e| e.peer.len() + e.signature.len() + 8).sum();
        (1 + 32 + 1 + 4 + self.creator.len() + 1 + 4 + self.function.len() + 4 + self.args.len() + 4 + self.payload.len()
            + 16
            + 12
            + rw
            + en) as u64
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockHeader {
    pub number: u64,
    pub prev_hash: Digest,
    pub merkle_root: Digest,
    pub proposer: IdentityId,
    pub timestamp: SimTime,
}

impl BlockHeader {
    fn encode_into(&self, e: &mut Encoder) {
        e.u64(self.number)
            .fixed(&self.prev_hash.0)
            .fixed(&self.merkle_root.0)
            .str(&self.proposer)
            .u64(self.timestamp.0);
    }

    /// Digest of the canonical header encoding; the next block's `prev_hash`.
    pub fn digest(&self) -> Digest {
        let mut e = Encoder::new();
        self.encode_into(&mut e);
        Digest::of(&e.finish())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub header: BlockHeader,
    /// Proposer's signature over the header digest.
    pub signature: Bytes,
    pub txs: Vec<Transaction>,
    /// Empty until the block is validated by a peer.
    pub validity_flags: Vec<ValidityFlag>,
}

impl Block {
    pub fn compute_root(txs: &[Transaction]) -> Result<Digest, MerkleError> {
        merkle::root_of_leaves(&txs.iter().map(Transaction::leaf).collect::<Vec<_>>())
    }

    /// Leaf digests, for inclusion proofs.
    pub fn leaves(&self) -> Vec<Digest> {
        self.txs.iter().map(Transaction::leaf).collect()
    }

    pub fn size_bytes(&self) -> u64 {
        self.txs.iter().map(Transaction::size_bytes).sum::<u64>() + 128
    }

    pub fn encode(&self) -> Vec<u8> {
        let cap = self.txs.iter().map(|t| t.size_bytes() as usize + 4).sum::<usize>() + 256;
        let mut e = Encoder::with_capacity(cap);
        e.u8(BLOCK_FORMAT);
        self.header.encode_into(&mut e);
        e.bytes(&self.signature);
        e.u32(self.txs.len() as u32);
        for tx in &self.txs {
            e.bytes(&tx.encode());
        }
        e.u32(self.validity_flags.len() as u32);
        for f in &self.validity_flags {
            e.u8(f.tag());
        }
        e.finish()
    }

    pub fn decode(buf: &Bytes) -> Result<Block, DecodeError> {
        let mut d = Decoder::shared(buf);
        let fmt = d.u8()?;
        if fmt != BLOCK_FORMAT {
            return Err(DecodeError::BadTag { what: "block format", tag: fmt });
        }
        let header = BlockHeader {
            number: d.u64()?,
            prev_hash: Digest(d.fixed()?),
            merkle_root: Digest(d.fixed()?),
            proposer: d.str()?,
            timestamp: SimTime(d.u64()?),
        };
        let signature = d.bytes()?;
        let n = d.u32()?;
        let mut txs = Vec::new();
        for _ in 0..n {
            let raw = d.bytes()?;
            txs.push(Transaction::decode(&raw)?);
        }
        let n = d.u32()?;
        let mut validity_flags = Vec::new();
        for _ in 0..n {
            validity_flags.push(ValidityFlag::from_tag(d.u8()?)?);
        }
        d.finish()?;
        Ok(Block { header, signature, txs, validity_flags })
    }
}
