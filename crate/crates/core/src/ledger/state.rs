//! Versioned key-value world state.

use std::collections::BTreeMap;

use bytes::Bytes;

use super::block::{Block, ValidityFlag, Version};
use super::codec::Encoder;
use super::crypto::Digest;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum StateError {
    #[error("block {got} applied out of order, expected {expected}")]
    OutOfOrderApply { expected: u64, got: u64 },
    #[error("block {0} has not been validated")]
    Unvalidated(u64),
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct WorldState {
    entries: BTreeMap<String, (Bytes, Version)>,
    /// Number of blocks applied so far.
    height: u64,
}

impl WorldState {
    pub fn new() -> Self {
        WorldState::default()
    }

    pub fn height(&self) -> u64 {
        self.height
    }

    pub fn get(&self, key: &str) -> Option<(&Bytes, Version)> {
        self.entries.get(key).map(|(v, ver)| (v, *ver))
    }

    pub fn version(&self, key: &str) -> Option<Version> {
        self.entries.get(key).map(|(_, v)| *v)
    }

    /// Keys starting with `prefix`, in order.
    pub fn scan<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = (&'a String, &'a Bytes, Version)> + 'a {
        self.entries
            .range(prefix.to_string()..)
            .take_while(move |(k, _)| k.starts_with(prefix))
            .map(|(k, (v, ver))| (k, v, *ver))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Applies the writes of every Valid transaction in `block`, in order.
    pub fn apply(&mut self, block: &Block) -> Result<(), StateError> {
        if block.header.number != self.height {
            return Err(StateError::OutOfOrderApply { expected: self.height, got: block.header.number });
        }
        if block.validity_flags.len() != block.txs.len() {
            return Err(StateError::Unvalidated(block.header.number));
        }
        for (idx, (tx, flag)) in block.txs.iter().zip(&block.validity_flags).enumerate() {
            if *flag != ValidityFlag::Valid {
                continue;
            }
            let version = Version { block: block.header.number, tx: idx as u32 };
            for w in &tx.write_set {
                self.entries.insert(w.key.clone(), (w.value.clone(), version));
            }
        }
        self.height += 1;
        Ok(())
    }

    /// Digest over the canonical encoding of every entry.
    pub fn digest(&self) -> Digest {
        let mut e = Encoder::new();
        e.u64(self.height).u64(self.entries.len() as u64);
        for (k, (v, ver)) in &self.entries {
            e.str(k).bytes(v).u64(ver.block).u32(ver.tx);
        }
        Digest::of(&e.finish())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::SimTime;
    use crate::ledger::block::{BlockHeader, ContractId, Transaction, TxKind, WriteEntry};

    fn block(number: u64, writes: &[&[(&str, &str)]], flags: Vec<ValidityFlag>) -> Block {
        let txs: Vec<Transaction> = writes
            .iter()
            .enumerate()
            .map(|(i, ws)| {
                let mut tx = Transaction::new(
                    TxKind::Invoke,
                    "c",
                    ContractId::DroneObject,
                    "f",
                    Bytes::new(),
                    Bytes::new(),
                    i as u64,
                    SimTime::ZERO,
                );
                tx.write_set =
                    ws.iter().map(|(k, v)| WriteEntry { key: k.to_string(), value: Bytes::from(v.to_string()) }).collect();
                tx
            })
            .collect();
        Block {
            header: BlockHeader {
                number,
                prev_hash: Digest::ZERO,
                merkle_root: Digest::ZERO,
                proposer: "o".into(),
                timestamp: SimTime::ZERO,
            },
            signature: Bytes::new(),
            txs,
            validity_flags: flags,
        }
    }

    #[test]
    fn last_write_wins_with_later_version() {
        let mut s = WorldState::new();
        s.apply(&block(0, &[&[]], vec![ValidityFlag::Valid])).unwrap();
        s.apply(&block(1, &[&[]], vec![ValidityFlag::Valid])).unwrap();
        s.apply(&block(2, &[&[]], vec![ValidityFlag::Valid])).unwrap();
        let b = block(3, &[&[("k", "a")], &[("k", "b")]], vec![ValidityFlag::Valid, ValidityFlag::Valid]);
        s.apply(&b).unwrap();
        let (v, ver) = s.get("k").unwrap();
        assert_eq!(&v[..], b"b");
        assert_eq!(ver, Version { block: 3, tx: 1 });
        assert!(s.get("unknown").is_none());
    }

    #[test]
    fn invalid_txs_are_skipped() {
        let mut s = WorldState::new();
        let b = block(0, &[&[("k", "a")], &[("k", "b")]], vec![ValidityFlag::Valid, ValidityFlag::InvalidVersionConflict]);
        s.apply(&b).unwrap();
        assert_eq!(&s.get("k").unwrap().0[..], b"a");
    }

    #[test]
    fn out_of_order_apply_rejected() {
        let mut s = WorldState::new();
        let err = s.apply(&block(1, &[&[]], vec![ValidityFlag::Valid])).unwrap_err();
        assert_eq!(err, StateError::OutOfOrderApply { expected: 0, got: 1 });
        assert_eq!(s.apply(&block(0, &[&[]], vec![])), Err(StateError::Unvalidated(0)));
    }

    #[test]
    fn scan_prefix() {
        let mut s = WorldState::new();
        s.apply(&block(0, &[&[("team/1", "x"), ("team/2", "y"), ("tea", "z"), ("teamz", "w")]], vec![ValidityFlag::Valid]))
            .unwrap();
        let keys: Vec<&String> = s.scan("team/").map(|(k, _, _)| k).collect();
        assert_eq!(keys, vec!["team/1", "team/2"]);
    }
}
