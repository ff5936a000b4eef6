//! Blocks, transactions, the hash chain, world-state replay and block storage.

mod block;
mod chain;
mod merkle;
mod state;
mod store;
mod tx;

pub use block::{header_hash, Block};
pub use chain::{
    orderer_signed, replay, validate_next, verify_chain, verify_store, BlockCheck, BlockRejected, Chain,
    RejectReason, ReplayError, VerificationReport,
};
pub use merkle::{inclusion_proof, merkle_root, InclusionProof, ProofStep};
pub use state::WorldState;
pub use store::{read_index, scan_records, BlockStore, RawRecord, Scan, DATA_FILE, INDEX_FILE};
pub use tx::{
    AccessEvidence, CreateEvidence, CustodyInterval, DeviceRecord, DeviceState, EraseEvidence,
    EvidenceRecord, Genesis, MetadataAccess, Policy, Proposal, Transaction, TransferOwnership,
    TxKind, MAX_DSC_BYTES,
};

use thiserror::Error;

use crate::codec::DecodeError;

#[derive(Debug, Error)]
pub enum LedgerError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("decode: {0}")]
    Decode(#[from] DecodeError),
    #[error("block file framing broken at byte offset {0}")]
    Framing(u64),
    #[error("block index does not match block file")]
    IndexMismatch,
    #[error("no block at height {0}")]
    NoSuchHeight(u64),
    #[error("block exceeds 4 GiB")]
    BlockTooLarge,
    #[error(transparent)]
    Rejected(#[from] BlockRejected),
    #[error(transparent)]
    Replay(#[from] ReplayError),
}
