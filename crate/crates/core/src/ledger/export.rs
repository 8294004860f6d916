//! Ledger export: a length-prefixed binary block log plus a JSON index.
//!
//! Log layout: the 8-byte magic `SARLEDG1`, then one frame per block,
//! each a `u32` big-endian length followed by the block's canonical encoding.

use std::fs;
use std::path::{Path, PathBuf};

use bytes::Bytes;
use serde::{Deserialize, Serialize};

use super::block::{Block, ValidityFlag};
use super::chain::{verify_chain, Chain, ChainConfig, ChainError, FirstBadBlock};
use super::crypto::{Digest, IdentityRegistry};

pub const MAGIC: &[u8; 8] = b"SARLEDG1";

#[derive(Debug, thiserror::Error)]
pub enum ExportError {
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("invalid ledger index {path}: {source}")]
    Index { path: PathBuf, source: serde_json::Error },
    #[error(transparent)]
    Bad(#[from] FirstBadBlock),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockIndexEntry {
    pub number: u64,
    pub offset: u64,
    pub length: u64,
    pub header_digest: Digest,
    pub tx_count: usize,
    pub valid_count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerIndex {
    pub format: u32,
    pub config: ChainConfig,
    pub registry: IdentityRegistry,
    pub tip_digest: Digest,
    pub state_digest: Digest,
    pub blocks: Vec<BlockIndexEntry>,
}

/// Sibling index path: `ledger.bin` → `ledger.json`.
pub fn index_path(log: &Path) -> PathBuf {
    log.with_extension("json")
}

pub fn encode_log(blocks: &[Block]) -> (Vec<u8>, Vec<BlockIndexEntry>) {
    let mut out = MAGIC.to_vec();
    let mut entries = Vec::with_capacity(blocks.len());
    for b in blocks {
        let enc = b.encode();
        entries.push(BlockIndexEntry {
            number: b.header.number,
            offset: out.len() as u64,
            length: enc.len() as u64 + 4,
            header_digest: b.header.digest(),
            tx_count: b.txs.len(),
            valid_count: b.validity_flags.iter().filter(|f| **f == ValidityFlag::Valid).count(),
        });
        out.extend_from_slice(&(enc.len() as u32).to_be_bytes());
        out.extend_from_slice(&enc);
    }
    (out, entries)
}

/// Splits and decodes a block log. Any framing or decode failure is reported
/// against the block whose frame it occurred in.
pub fn decode_log(buf: &Bytes) -> Result<Vec<Block>, FirstBadBlock> {
    let malformed = |number: u64| FirstBadBlock { number, reason: ChainError::Malformed };
    if buf.len() < MAGIC.len() || &buf[..MAGIC.len()] != MAGIC {
        return Err(malformed(0));
    }
    let mut pos = MAGIC.len();
    let mut blocks = Vec::new();
    while pos < buf.len() {
        let number = blocks.len() as u64;
        if buf.len() - pos < 4 {
            return Err(malformed(number));
        }
        let len = u32::from_be_bytes(buf[pos..pos + 4].try_into().unwrap()) as usize;
        pos += 4;
        if buf.len() - pos < len {
            return Err(malformed(number));
        }
        let frame = buf.slice(pos..pos + len);
        pos += len;
        let block = Block::decode(&frame).map_err(|_| malformed(number))?;
        if block.header.number != number {
            return Err(FirstBadBlock { number, reason: ChainError::NonConsecutive });
        }
        blocks.push(block);
    }
    Ok(blocks)
}

/// Writes `<path>` (binary log) and its JSON index; returns the index path.
pub fn write_export(chain: &Chain, path: &Path) -> Result<PathBuf, ExportError> {
    let (log, entries) = encode_log(chain.blocks());
    fs::write(path, &log).map_err(|source| ExportError::Io { path: path.to_path_buf(), source })?;
    let index = LedgerIndex {
        format: 1,
        config: chain.config(),
        registry: chain.registry().clone(),
        tip_digest: chain.tip_digest(),
        state_digest: chain.state().digest(),
        blocks: entries,
    };
    let ipath = index_path(path);
    let json = serde_json::to_string_pretty(&index).expect("index serializes");
    fs::write(&ipath, json).map_err(|source| ExportError::Io { path: ipath.clone(), source })?;
    Ok(ipath)
}

pub fn read_index(path: &Path) -> Result<LedgerIndex, ExportError> {
    let ipath = index_path(path);
    let text = fs::read_to_string(&ipath).map_err(|source| ExportError::Io { path: ipath.clone(), source })?;
    serde_json::from_str(&text).map_err(|source| ExportError::Index { path: ipath, source })
}

/// Verifies an in-memory log against a registry and configuration.
pub fn verify_log(log: &Bytes, registry: &IdentityRegistry, config: ChainConfig) -> Result<Chain, FirstBadBlock> {
    let blocks = decode_log(log)?;
    verify_chain(&blocks, registry, config)
}

/// Loads `<path>` and its index, and re-verifies the whole chain.
pub fn verify_export(path: &Path) -> Result<Chain, ExportError> {
    let index = read_index(path)?;
    let log = fs::read(path).map_err(|source| ExportError::Io { path: path.to_path_buf(), source })?;
    Ok(verify_log(&Bytes::from(log), &index.registry, index.config)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ledger::chain::tests::{invoke, new_chain, next_block};

    fn chain(n: u64) -> Chain {
        let mut c = new_chain();
        for i in 1..n {
            let tx = invoke(c.registry(), i, vec![], &[("k", "v")], &["peer1", "peer3"]);
            let b = next_block(&c, vec![tx]);
            c.append_block(b).unwrap();
        }
        c
    }

    #[test]
    fn export_round_trip() {
        let c = chain(12);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ledger.bin");
        write_export(&c, &p).unwrap();
        let v = verify_export(&p).unwrap();
        assert_eq!(v.tip_digest(), c.tip_digest());
        assert_eq!(v.state().digest(), c.state().digest());
        let idx = read_index(&p).unwrap();
        assert_eq!(idx.blocks.len(), 12);
        assert_eq!(idx.blocks[3].tx_count, 1);
    }

    #[test]
    fn every_bit_flip_is_caught_at_its_block() {
        let c = chain(4);
        let (log, entries) = encode_log(c.blocks());
        for bit in (MAGIC.len() * 8..log.len() * 8).step_by(7) {
            let byte = bit / 8;
            let mut m = log.clone();
            m[byte] ^= 1 << (bit % 8);
            let owner = entries.iter().rfind(|e| e.offset as usize <= byte).unwrap().number;
            let err = verify_log(&Bytes::from(m), c.registry(), c.config()).unwrap_err();
            assert_eq!(err.number, owner, "bit {bit}: {err}");
        }
    }
}
