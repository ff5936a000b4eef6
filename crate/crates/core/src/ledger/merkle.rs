//! Binary Merkle tree over transaction ids.
//!
//! Leaves are the tx ids themselves; an inner node is
//! `SHA-256(0x01 ‖ left ‖ right)`. A level with an odd number of nodes
//! duplicates its last node. The root of an empty list is the zero digest.

use serde::{Deserialize, Serialize};

use crate::hash::{Digest, HashAlg};

const NODE_TAG: [u8; 1] = [0x01];

fn node(left: &Digest, right: &Digest) -> Digest {
    HashAlg::Sha256.digest_parts(&[&NODE_TAG, left.as_bytes(), right.as_bytes()])
}

fn next_level(level: &[Digest]) -> Vec<Digest> {
    level
        .chunks(2)
        .map(|pair| match pair {
            [l, r] => node(l, r),
            [l] => node(l, l),
            _ => unreachable!(),
        })
        .collect()
}

pub fn merkle_root(leaves: &[Digest]) -> Digest {
    if leaves.is_empty() {
        return Digest::ZERO;
    }
    let mut level = leaves.to_vec();
    while level.len() > 1 {
        level = next_level(&level);
    }
    level[0]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProofStep {
    pub sibling: Digest,
    pub sibling_is_left: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InclusionProof {
    pub leaf_index: usize,
    pub steps: Vec<ProofStep>,
}

impl InclusionProof {
    pub fn verify(&self, leaf: &Digest, root: &Digest) -> bool {
        let mut acc = *leaf;
        for step in &self.steps {
            acc = if step.sibling_is_left {
                node(&step.sibling, &acc)
            } else {
                node(&acc, &step.sibling)
            };
        }
        acc == *root
    }
}

/// Inclusion proof for `leaves[index]`, or `None` if out of range.
pub fn inclusion_proof(leaves: &[Digest], index: usize) -> Option<InclusionProof> {
    if index >= leaves.len() {
        return None;
    }
    let mut steps = Vec::new();
    let mut level = leaves.to_vec();
    let mut pos = index;
    while level.len() > 1 {
        let sibling_pos = pos ^ 1;
        let sibling = *level.get(sibling_pos).unwrap_or(&level[pos]);
        steps.push(ProofStep {
            sibling,
            sibling_is_left: pos % 2 == 1,
        });
        level = next_level(&level);
        pos /= 2;
    }
    Some(InclusionProof {
        leaf_index: index,
        steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hash::sha256;
    use proptest::prelude::*;

    // Independent recursive definition: pad to even by duplicating the
    // last element, then hash pairs.
    fn oracle_root(leaves: &[Digest]) -> Digest {
        use sha2::{Digest as _, Sha256};
        match leaves.len() {
            0 => Digest::ZERO,
            1 => leaves[0],
            _ => {
                let mut padded = leaves.to_vec();
                if padded.len() % 2 == 1 {
                    padded.push(*padded.last().unwrap());
                }
                let parents: Vec<Digest> = padded
                    .chunks(2)
                    .map(|p| {
                        let mut h = Sha256::new();
                        h.update([1u8]);
                        h.update(p[0].as_bytes());
                        h.update(p[1].as_bytes());
                        Digest::from_bytes(h.finalize().into())
                    })
                    .collect();
                oracle_root(&parents)
            }
        }
    }

    fn leaves(n: usize) -> Vec<Digest> {
        (0..n).map(|i| sha256(&(i as u64).to_be_bytes())).collect()
    }

    #[test]
    fn small_trees() {
        assert_eq!(merkle_root(&[]), Digest::ZERO);
        let l = leaves(3);
        assert_eq!(merkle_root(&l[..1]), l[0]);
        let expected = node(&node(&l[0], &l[1]), &node(&l[2], &l[2]));
        assert_eq!(merkle_root(&l), expected);
    }

    #[test]
    fn proof_fails_against_other_root() {
        let l = leaves(5);
        let other = merkle_root(&leaves(6));
        for i in 0..5 {
            let proof = inclusion_proof(&l, i).unwrap();
            assert!(proof.verify(&l[i], &merkle_root(&l)));
            assert!(!proof.verify(&l[i], &other));
        }
        assert!(inclusion_proof(&l, 5).is_none());
    }

    proptest! {
        #[test]
        fn root_matches_oracle_and_every_proof_verifies(n in 1usize..40) {
            let l = leaves(n);
            let root = merkle_root(&l);
            prop_assert_eq!(root, oracle_root(&l));
            for (i, leaf) in l.iter().enumerate() {
                prop_assert!(inclusion_proof(&l, i).unwrap().verify(leaf, &root));
            }
        }
    }
}
