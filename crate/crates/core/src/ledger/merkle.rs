//! Merkle root over a block's transactions.
//!
//! Leaves are `H(tx_bytes)`. Each level hashes adjacent pairs `H(l || r)`,
//! duplicating the last node of an odd level. A one-leaf tree has root
//! `H(leaf)`.

use serde::{Deserialize, Serialize};

use super::crypto::Digest;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MerkleError {
    #[error("cannot build a Merkle tree over zero leaves")]
    EmptyList,
    #[error("leaf index {0} out of range")]
    BadIndex(usize),
}

fn parent(l: &Digest, r: &Digest) -> Digest {
    Digest::of_parts(&[&l.0, &r.0])
}

fn next_level(level: &[Digest]) -> Vec<Digest> {
    level
        .chunks(2)
        .map(|pair| match pair {
            [l, r] => parent(l, r),
            [l] => parent(l, l),
            _ => unreachable!(),
        })
        .collect()
}

/// Root over already-hashed leaves.
pub fn root_of_leaves(leaves: &[Digest]) -> Result<Digest, MerkleError> {
    match leaves.len() {
        0 => Err(MerkleError::EmptyList),
        1 => Ok(Digest::of(&leaves[0].0)),
        _ => {
            let mut level = leaves.to_vec();
            while level.len() > 1 {
                level = next_level(&level);
            }
            Ok(level[0])
        }
    }
}

/// Root over raw transaction encodings.
pub fn merkle_root<T: AsRef<[u8]>>(txs: &[T]) -> Result<Digest, MerkleError> {
    let leaves: Vec<Digest> = txs.iter().map(|t| Digest::of(t.as_ref())).collect();
    root_of_leaves(&leaves)
}

/// Inclusion proof: sibling hashes from the leaf upwards.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MerkleProof {
    pub index: usize,
    pub leaf_count: usize,
    pub siblings: Vec<Digest>,
}

pub fn prove(leaves: &[Digest], index: usize) -> Result<MerkleProof, MerkleError> {
    if leaves.is_empty() {
        return Err(MerkleError::EmptyList);
    }
    if index >= leaves.len() {
        return Err(MerkleError::BadIndex(index));
    }
    let mut siblings = Vec::new();
    let mut level = leaves.to_vec();
    let mut i = index;
    while level.len() > 1 {
        let sib = if i.is_multiple_of(2) { *level.get(i + 1).unwrap_or(&level[i]) } else { level[i - 1] };
        siblings.push(sib);
        level = next_level(&level);
        i /= 2;
    }
    Ok(MerkleProof { index, leaf_count: leaves.len(), siblings })
}

pub fn verify_proof(root: &Digest, leaf: &Digest, proof: &MerkleProof) -> bool {
    if proof.leaf_count == 0 || proof.index >= proof.leaf_count {
        return false;
    }
    if proof.leaf_count == 1 {
        return proof.siblings.is_empty() && Digest::of(&leaf.0) == *root;
    }
    let mut h = *leaf;
    let mut i = proof.index;
    for sib in &proof.siblings {
        h = if i.is_multiple_of(2) { parent(&h, sib) } else { parent(sib, &h) };
        i /= 2;
    }
    h == *root
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Independent recursive oracle: pads to a power of two by repeating the last leaf
    /// at every level, which is what duplicate-last produces.
    fn oracle(leaves: &[Digest]) -> Digest {
        fn rec(level: Vec<Digest>) -> Digest {
            if level.len() == 1 {
                return level[0];
            }
            let mut v = level;
            if v.len() % 2 == 1 {
                v.push(*v.last().unwrap());
            }
            let up = (0..v.len() / 2)
                .map(|i| {
                    let mut buf = Vec::with_capacity(64);
                    buf.extend_from_slice(&v[2 * i].0);
                    buf.extend_from_slice(&v[2 * i + 1].0);
                    Digest::of(&buf)
                })
                .collect();
            rec(up)
        }
        if leaves.len() == 1 {
            return Digest::of(&leaves[0].0);
        }
        rec(leaves.to_vec())
    }

    #[test]
    fn single_tx_root_is_double_hash() {
        let tx = b"tx".to_vec();
        assert_eq!(merkle_root(std::slice::from_ref(&tx)).unwrap(), Digest::of(&Digest::of(&tx).0));
    }

    #[test]
    fn two_identical_txs() {
        let leaf = Digest::of(b"tx");
        let mut buf = leaf.0.to_vec();
        buf.extend_from_slice(&leaf.0);
        assert_eq!(merkle_root(&[b"tx", b"tx"]).unwrap(), Digest::of(&buf));
    }

    #[test]
    fn three_equals_four_with_last_duplicated() {
        assert_eq!(merkle_root(&[b"a", b"b", b"c"]).unwrap(), merkle_root(&[b"a", b"b", b"c", b"c"]).unwrap());
    }

    #[test]
    fn empty_is_an_error() {
        assert_eq!(merkle_root::<Vec<u8>>(&[]), Err(MerkleError::EmptyList));
    }

    proptest! {
        #[test]
        fn matches_oracle(txs in prop::collection::vec(prop::collection::vec(any::<u8>(), 0..40), 1..40)) {
            let leaves: Vec<Digest> = txs.iter().map(|t| Digest::of(t)).collect();
            prop_assert_eq!(merkle_root(&txs).unwrap(), oracle(&leaves));
        }

        #[test]
        fn any_byte_flip_changes_root(
            txs in prop::collection::vec(prop::collection::vec(any::<u8>(), 1..40), 1..20),
            pick in any::<prop::sample::Index>(),
            bit in 0u8..8,
        ) {
            let root = merkle_root(&txs).unwrap();
            let mut m = txs.clone();
            let i = pick.index(m.len());
            let j = pick.index(m[i].len());
            m[i][j] ^= 1 << bit;
            prop_assert_ne!(merkle_root(&m).unwrap(), root);
        }

        #[test]
        fn proofs_verify(n in 1usize..70, idx in any::<prop::sample::Index>()) {
            let leaves: Vec<Digest> = (0..n).map(|i| Digest::of(&(i as u64).to_be_bytes())).collect();
            let root = root_of_leaves(&leaves).unwrap();
            let i = idx.index(n);
            let proof = prove(&leaves, i).unwrap();
            prop_assert!(proof.siblings.len() <= (n as f64).log2().ceil() as usize);
            prop_assert!(verify_proof(&root, &leaves[i], &proof));
            prop_assert!(!verify_proof(&root, &Digest::of(b"other"), &proof));
        }
    }
}
