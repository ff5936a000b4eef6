//! Response documents shared by the HTTP API and the CLI's structured
//! output. Field order is declaration order, so renderings are stable.

use ctb_core::chaincode::EvidenceLocator;
use ctb_core::hash::Digest;
use ctb_core::identity::{Address, Role};
use ctb_core::ledger::{Block, CustodyInterval, DeviceRecord, EvidenceRecord, Proposal, Transaction, WorldState};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TxView {
    pub tx_id: Digest,
    pub kind: String,
    pub submitter: Address,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub block_height: Option<u64>,
    pub proposal: Proposal,
    pub submitter_signature: String,
}

impl TxView {
    pub fn new(tx: &Transaction, block_height: Option<u64>) -> Self {
        Self {
            tx_id: tx.tx_id,
            kind: tx.kind.to_string(),
            submitter: tx.submitter,
            block_height,
            proposal: tx.proposal.clone(),
            submitter_signature: hex::encode(&tx.submitter_signature.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockView {
    pub height: u64,
    pub block_hash: Digest,
    pub prev_hash: Digest,
    pub timestamp: u64,
    pub tx_merkle_root: Digest,
    pub proposer: Address,
    pub tx_count: usize,
    pub txs: Vec<TxView>,
}

impl From<&Block> for BlockView {
    fn from(b: &Block) -> Self {
        Self {
            height: b.height,
            block_hash: b.block_hash,
            prev_hash: b.prev_hash,
            timestamp: b.timestamp,
            tx_merkle_root: b.tx_merkle_root,
            proposer: b.proposer,
            tx_count: b.txs.len(),
            txs: b.txs.iter().map(|t| TxView::new(t, Some(b.height))).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockSummary {
    pub height: u64,
    pub block_hash: Digest,
    pub timestamp: u64,
    pub tx_count: usize,
}

impl From<&Block> for BlockSummary {
    fn from(b: &Block) -> Self {
        Self { height: b.height, block_hash: b.block_hash, timestamp: b.timestamp, tx_count: b.txs.len() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvidenceDoc {
    pub id: Digest,
    pub creator: Address,
    pub dsc: String,
    pub tm: u64,
    pub own: Address,
    pub own_prev: Option<Address>,
    pub device_type: String,
    pub custody_times: Vec<CustodyInterval>,
    pub erased: bool,
    /// Absent once the payload has been erased.
    pub payload_locator: Option<EvidenceLocator>,
}

impl EvidenceDoc {
    pub fn new(record: &EvidenceRecord, erased: bool) -> Self {
        Self {
            id: record.id,
            creator: record.creator,
            dsc: record.dsc.clone(),
            tm: record.tm,
            own: record.own,
            own_prev: record.own_prev,
            device_type: record.device_type.clone(),
            custody_times: record.custody_times.clone(),
            erased,
            payload_locator: (!erased).then_some(EvidenceLocator { isp: record.creator, id: record.id }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvidenceRow {
    pub id: Digest,
    pub device_type: String,
    pub own: Address,
    pub erased: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrailView {
    pub id: Digest,
    pub trail: Vec<CustodyInterval>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceView {
    pub device_id: String,
    pub history: Vec<DeviceRecord>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainSummary {
    pub chain_id: String,
    pub height: u64,
    pub tip_hash: Digest,
    pub evidence_count: usize,
    pub erased_count: usize,
    pub device_count: usize,
}

impl ChainSummary {
    pub fn new(state: &WorldState, height: u64, tip_hash: Digest) -> Self {
        Self {
            chain_id: state.chain_id.clone(),
            height,
            tip_hash,
            evidence_count: state.evidence.len(),
            erased_count: state.erased.len(),
            device_count: state.devices.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InvokeResponse {
    pub tx_id: Digest,
    pub status: String,
    pub block_height: u64,
    /// False when an identical transaction was already committed.
    pub fresh: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChallengeRequest {
    pub address: Address,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChallengeResponse {
    pub challenge: String,
    pub expires_at: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoginRequest {
    pub address: Address,
    pub challenge: String,
    /// Hex Ed25519 signature over [`login_message`].
    pub signature: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoginResponse {
    pub token: String,
    pub address: Address,
    pub role: Role,
    pub expires_at: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InvokeRequest {
    /// Base64 of the canonical encoding of a client-signed transaction.
    pub tx: String,
}

/// Bytes a client signs to answer a login challenge.
pub fn login_message(challenge: &str) -> Vec<u8> {
    format!("ctb-login:{challenge}").into_bytes()
}
