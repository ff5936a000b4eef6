use serde::{Deserialize, Serialize};

use crate::codec::{Canonical, DecodeError, Decoder, Encoder};
use crate::hash::{sha256, Digest};
use crate::identity::{Address, SecretKey, SignatureBytes};

use super::merkle::{inclusion_proof, merkle_root, InclusionProof};
use super::tx::{Genesis, Proposal, Transaction};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub height: u64,
    pub prev_hash: Digest,
    pub timestamp: u64,
    pub txs: Vec<Transaction>,
    pub tx_merkle_root: Digest,
    pub block_hash: Digest,
    pub proposer: Address,
    pub proposer_signature: SignatureBytes,
}

/// `Hash(height ‖ prev_hash ‖ timestamp ‖ tx_merkle_root ‖ proposer)`.
pub fn header_hash(
    height: u64,
    prev_hash: &Digest,
    timestamp: u64,
    tx_merkle_root: &Digest,
    proposer: &Address,
) -> Digest {
    let mut enc = Encoder::new();
    enc.u64(height)
        .value(prev_hash)
        .u64(timestamp)
        .value(tx_merkle_root)
        .value(proposer);
    sha256(&enc.finish())
}

impl Block {
    /// Assembles and signs a block. The proposer signs the block hash.
    pub fn seal(
        height: u64,
        prev_hash: Digest,
        timestamp: u64,
        txs: Vec<Transaction>,
        proposer: Address,
        key: &SecretKey,
    ) -> Self {
        let tx_merkle_root = merkle_root(&txs.iter().map(|t| t.tx_id).collect::<Vec<_>>());
        let block_hash = header_hash(height, &prev_hash, timestamp, &tx_merkle_root, &proposer);
        let proposer_signature = key.sign(block_hash.as_bytes());
        Self {
            height,
            prev_hash,
            timestamp,
            txs,
            tx_merkle_root,
            block_hash,
            proposer,
            proposer_signature,
        }
    }

    /// Height-0 block holding the single GENESIS transaction, signed by the
    /// orderer named in it.
    pub fn genesis(genesis: Genesis, orderer_key: &SecretKey) -> Self {
        let orderer = genesis.orderer;
        let timestamp = genesis.timestamp;
        let tx = Proposal::Genesis(genesis).sign(orderer, orderer_key);
        Self::seal(0, Digest::ZERO, timestamp, vec![tx], orderer, orderer_key)
    }

    pub fn tx_ids(&self) -> Vec<Digest> {
        self.txs.iter().map(|t| t.tx_id).collect()
    }

    pub fn compute_merkle_root(&self) -> Digest {
        merkle_root(&self.tx_ids())
    }

    pub fn compute_hash(&self) -> Digest {
        header_hash(
            self.height,
            &self.prev_hash,
            self.timestamp,
            &self.tx_merkle_root,
            &self.proposer,
        )
    }

    pub fn inclusion_proof(&self, index: usize) -> Option<InclusionProof> {
        inclusion_proof(&self.tx_ids(), index)
    }
}

impl Canonical for Block {
    fn encode_to(&self, enc: &mut Encoder) {
        enc.u64(self.height)
            .value(&self.prev_hash)
            .u64(self.timestamp)
            .list(&self.txs)
            .value(&self.tx_merkle_root)
            .value(&self.block_hash)
            .value(&self.proposer)
            .value(&self.proposer_signature);
    }
    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Self {
            height: dec.u64()?,
            prev_hash: dec.value()?,
            timestamp: dec.u64()?,
            txs: dec.list()?,
            tx_merkle_root: dec.value()?,
            block_hash: dec.value()?,
            proposer: dec.value()?,
            proposer_signature: dec.value()?,
        })
    }
}
