use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chaincode::{self, ChaincodeError};
use crate::codec::Canonical;
use crate::hash::Digest;
use crate::identity::Address;

use super::block::Block;
use super::merkle::merkle_root;
use super::state::WorldState;
use super::store::{read_index, scan_records, BlockStore, DATA_FILE, INDEX_FILE};
use super::tx::{CustodyInterval, Transaction, TxKind};
use super::LedgerError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RejectReason {
    Height { expected: u64 },
    Linkage,
    Timestamp,
    Empty,
    MerkleRoot,
    BlockHash,
    Genesis,
    Proposer,
    ProposerSignature,
    MalformedTx { index: usize },
    DuplicateTx { index: usize },
    TxSignature { index: usize },
    Semantics { index: usize, error: ChaincodeError },
    Decode { detail: String },
    Framing,
    Index,
}

impl RejectReason {
    pub fn code(&self) -> &'static str {
        match self {
            Self::Height { .. } => "HEIGHT",
            Self::Linkage => "LINKAGE",
            Self::Timestamp => "TIMESTAMP",
            Self::Empty => "EMPTY",
            Self::MerkleRoot => "MERKLE",
            Self::BlockHash => "BLOCK_HASH",
            Self::Genesis => "GENESIS",
            Self::Proposer => "PROPOSER",
            Self::ProposerSignature => "PROPOSER_SIGNATURE",
            Self::MalformedTx { .. } => "MALFORMED_TX",
            Self::DuplicateTx { .. } => "DUPLICATE_TX",
            Self::TxSignature { .. } => "TX_SIGNATURE",
            Self::Semantics { .. } => "SEMANTICS",
            Self::Decode { .. } => "DECODE",
            Self::Framing => "FRAMING",
            Self::Index => "INDEX",
        }
    }
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Height { expected } => write!(f, "HEIGHT (expected {expected})"),
            Self::MalformedTx { index } | Self::DuplicateTx { index } | Self::TxSignature { index } => {
                write!(f, "{} (tx {index})", self.code())
            }
            Self::Semantics { index, error } => write!(f, "SEMANTICS (tx {index}: {})", error.code()),
            Self::Decode { detail } => write!(f, "DECODE ({detail})"),
            _ => f.write_str(self.code()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[error("block {height} rejected: {reason}")]
pub struct BlockRejected {
    pub height: u64,
    pub reason: RejectReason,
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[error("replay failed at height {height}: {reason}")]
pub struct ReplayError {
    pub height: u64,
    pub reason: RejectReason,
}

/// Checks that need nothing but the block and its predecessor.
fn structural_check(prev: Option<&Block>, block: &Block) -> Result<(), RejectReason> {
    let expected = prev.map_or(0, |p| p.height + 1);
    if block.height != expected {
        return Err(RejectReason::Height { expected });
    }
    let expected_prev = prev.map_or(Digest::ZERO, |p| p.block_hash);
    if block.prev_hash != expected_prev {
        return Err(RejectReason::Linkage);
    }
    if prev.is_some_and(|p| block.timestamp < p.timestamp) {
        return Err(RejectReason::Timestamp);
    }
    if block.txs.is_empty() {
        return Err(RejectReason::Empty);
    }
    let content_ids: Vec<Digest> = block.txs.iter().map(Transaction::compute_id).collect();
    if merkle_root(&content_ids) != block.tx_merkle_root {
        return Err(RejectReason::MerkleRoot);
    }
    if block.compute_hash() != block.block_hash {
        return Err(RejectReason::BlockHash);
    }
    for (index, tx) in block.txs.iter().enumerate() {
        if !tx.is_well_formed() {
            return Err(RejectReason::MalformedTx { index });
        }
    }
    Ok(())
}

fn check_proposer(state: &WorldState, block: &Block) -> Result<(), RejectReason> {
    if state.orderer != Some(block.proposer) {
        return Err(RejectReason::Proposer);
    }
    let anchor = state.anchor.expect("initialized state has an anchor");
    let cert = state.participants.get(&block.proposer).ok_or(RejectReason::Proposer)?;
    if !anchor.verify(cert, block.block_hash.as_bytes(), &block.proposer_signature, block.timestamp) {
        return Err(RejectReason::ProposerSignature);
    }
    Ok(())
}

/// True if `block` carries a valid signature by the orderer configured in
/// `state` over its recomputed hash.
pub fn orderer_signed(state: &WorldState, block: &Block) -> bool {
    block.compute_hash() == block.block_hash && check_proposer(state, block).is_ok()
}

fn check_tx_signature(state: &WorldState, tx: &Transaction, index: usize, at: u64) -> Result<(), RejectReason> {
    let anchor = state.anchor.ok_or(RejectReason::Genesis)?;
    let cert = state
        .participants
        .get(&tx.submitter)
        .ok_or(RejectReason::TxSignature { index })?;
    if anchor.verify(cert, &tx.signed_bytes(), &tx.submitter_signature, at) {
        Ok(())
    } else {
        Err(RejectReason::TxSignature { index })
    }
}

/// Full validation of `block` as the successor of `prev` on top of `state`.
/// `known_tx` reports tx ids already on the chain. Returns the advanced state.
pub fn validate_next(
    state: &WorldState,
    prev: Option<&Block>,
    block: &Block,
    known_tx: impl Fn(&Digest) -> bool,
) -> Result<WorldState, BlockRejected> {
    let reject = |reason| BlockRejected { height: block.height, reason };
    structural_check(prev, block).map_err(reject)?;

    let mut seen = HashSet::new();
    for (index, tx) in block.txs.iter().enumerate() {
        if !seen.insert(tx.tx_id) || known_tx(&tx.tx_id) {
            return Err(reject(RejectReason::DuplicateTx { index }));
        }
    }

    let mut next = state.clone();
    if block.height == 0 {
        if block.txs.len() != 1 || block.txs[0].kind != TxKind::Genesis {
            return Err(reject(RejectReason::Genesis));
        }
        let tx = &block.txs[0];
        chaincode::apply(&mut next, tx, block.timestamp)
            .map_err(|error| reject(RejectReason::Semantics { index: 0, error }))?;
        check_tx_signature(&next, tx, 0, block.timestamp).map_err(reject)?;
        check_proposer(&next, block).map_err(reject)?;
        return Ok(next);
    }

    if !state.is_initialized() {
        return Err(reject(RejectReason::Genesis));
    }
    check_proposer(state, block).map_err(reject)?;
    for (index, tx) in block.txs.iter().enumerate() {
        check_tx_signature(&next, tx, index, block.timestamp).map_err(reject)?;
        chaincode::apply(&mut next, tx, block.timestamp)
            .map_err(|error| reject(RejectReason::Semantics { index, error }))?;
    }
    Ok(next)
}

/// Folds `blocks` into a world state, validating each one.
pub fn replay(blocks: &[Block]) -> Result<WorldState, ReplayError> {
    let mut state = WorldState::default();
    let mut known = HashSet::new();
    let mut prev: Option<&Block> = None;
    for block in blocks {
        state = validate_next(&state, prev, block, |id| known.contains(id))
            .map_err(|e| ReplayError { height: e.height, reason: e.reason })?;
        known.extend(block.txs.iter().map(|t| t.tx_id));
        prev = Some(block);
    }
    Ok(state)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockCheck {
    pub height: u64,
    pub valid: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub valid: bool,
    pub block_count: u64,
    pub first_failure: Option<u64>,
    pub blocks: Vec<BlockCheck>,
}

impl VerificationReport {
    fn from_checks(block_count: u64, mut blocks: Vec<BlockCheck>) -> Self {
        blocks.sort_by_key(|c| c.height);
        let first_failure = blocks.iter().find(|c| !c.valid).map(|c| c.height);
        Self {
            valid: first_failure.is_none(),
            block_count,
            first_failure,
            blocks,
        }
    }
}

/// Per-block verification. After the first failure, later blocks still get
/// structural checks (linkage, Merkle root, header hash) against their
/// stored predecessor, but no longer state-dependent ones.
pub fn verify_chain(blocks: &[Block]) -> VerificationReport {
    let checks = check_blocks(blocks);
    VerificationReport::from_checks(blocks.len() as u64, checks)
}

fn check_blocks(blocks: &[Block]) -> Vec<BlockCheck> {
    let mut checks = Vec::with_capacity(blocks.len());
    let mut state = Some(WorldState::default());
    let mut known = HashSet::new();
    for (i, block) in blocks.iter().enumerate() {
        let prev = i.checked_sub(1).map(|p| &blocks[p]);
        let result = match &state {
            Some(s) => validate_next(s, prev, block, |id| known.contains(id))
                .map(Some)
                .map_err(|e| e.reason),
            None => structural_check(prev, block).map(|()| None),
        };
        let height = prev.map_or(0, |p| p.height + 1);
        match result {
            Ok(next) => {
                if next.is_some() {
                    state = next;
                    known.extend(block.txs.iter().map(|t| t.tx_id));
                }
                checks.push(BlockCheck { height, valid: true, reason: None });
            }
            Err(reason) => {
                state = None;
                checks.push(BlockCheck { height, valid: false, reason: Some(reason.to_string()) });
            }
        }
    }
    checks
}

/// Verifies the on-disk block store in `dir` byte by byte: record framing,
/// strict decoding, the offset index, then every block check.
pub fn verify_store(dir: &Path) -> Result<VerificationReport, LedgerError> {
    let raw = match std::fs::read(dir.join(DATA_FILE)) {
        Ok(raw) => raw,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
        Err(e) => return Err(e.into()),
    };
    let index = match std::fs::read(dir.join(INDEX_FILE)) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
        Err(e) => return Err(e.into()),
    };
    let scan = scan_records(&raw);
    let mut blocks = Vec::new();
    let mut failures = Vec::new();
    for (height, record) in scan.records.iter().enumerate() {
        match Block::from_canonical_bytes(&record.bytes) {
            Ok(b) => blocks.push(b),
            Err(e) => {
                failures.push(BlockCheck {
                    height: height as u64,
                    valid: false,
                    reason: Some(RejectReason::Decode { detail: e.to_string() }.to_string()),
                });
                break;
            }
        }
    }
    let decoded = blocks.len();
    if failures.is_empty() && scan.broken_at.is_some() {
        failures.push(BlockCheck {
            height: decoded as u64,
            valid: false,
            reason: Some(RejectReason::Framing.to_string()),
        });
    }

    let offsets = read_index(&index);
    let record_offsets: Vec<u64> = scan.records.iter().map(|r| r.offset).collect();
    let index_failure = (0..record_offsets.len().max(offsets.len()))
        .find(|&i| record_offsets.get(i) != offsets.get(i))
        .or((index.len() % 8 != 0).then_some(offsets.len()));
    if let Some(h) = index_failure {
        failures.push(BlockCheck {
            height: h as u64,
            valid: false,
            reason: Some(RejectReason::Index.to_string()),
        });
    }

    let mut checks = check_blocks(&blocks);
    for f in failures {
        match checks.iter_mut().find(|c| c.height == f.height) {
            Some(c) if c.valid => *c = f,
            Some(_) => {}
            None => checks.push(f),
        }
    }
    let count = scan.records.len().max(decoded) as u64;
    Ok(VerificationReport::from_checks(count, checks))
}

/// An in-memory chain with its materialized state, optionally backed by a
/// [`BlockStore`]. Blocks are only ever appended.
#[derive(Debug)]
pub struct Chain {
    blocks: Vec<Block>,
    state: WorldState,
    tx_index: HashMap<Digest, (u64, usize)>,
    store: Option<BlockStore>,
}

impl Default for Chain {
    fn default() -> Self {
        Self::in_memory()
    }
}

impl Chain {
    pub fn in_memory() -> Self {
        Self {
            blocks: Vec::new(),
            state: WorldState::default(),
            tx_index: HashMap::new(),
            store: None,
        }
    }

    /// Opens a file-backed chain, replaying and validating every stored block.
    pub fn open(dir: &Path) -> Result<Self, LedgerError> {
        let store = BlockStore::open(dir)?;
        let blocks = BlockStore::load_all(dir)?;
        let state = replay(&blocks)?;
        let mut chain = Self {
            blocks: Vec::new(),
            state,
            tx_index: HashMap::new(),
            store: Some(store),
        };
        for block in blocks {
            chain.index_block(&block);
            chain.blocks.push(block);
        }
        Ok(chain)
    }

    fn index_block(&mut self, block: &Block) {
        for (i, tx) in block.txs.iter().enumerate() {
            self.tx_index.insert(tx.tx_id, (block.height, i));
        }
    }

    /// Number of blocks.
    pub fn len(&self) -> u64 {
        self.blocks.len() as u64
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn tip(&self) -> Option<&Block> {
        self.blocks.last()
    }

    pub fn tip_hash(&self) -> Digest {
        self.tip().map_or(Digest::ZERO, |b| b.block_hash)
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn block(&self, height: u64) -> Option<&Block> {
        self.blocks.get(height as usize)
    }

    pub fn state(&self) -> &WorldState {
        &self.state
    }

    pub fn contains_tx(&self, tx_id: &Digest) -> bool {
        self.tx_index.contains_key(tx_id)
    }

    pub fn find_tx(&self, tx_id: &Digest) -> Option<(&Block, &Transaction)> {
        let (h, i) = *self.tx_index.get(tx_id)?;
        let block = &self.blocks[h as usize];
        Some((block, &block.txs[i]))
    }

    /// Validates `block` against the tip without appending it.
    pub fn validate(&self, block: &Block) -> Result<WorldState, BlockRejected> {
        validate_next(&self.state, self.tip(), block, |id| self.contains_tx(id))
    }

    /// Validates, persists and applies `block`. On rejection the chain is
    /// unchanged.
    pub fn append_block(&mut self, block: Block) -> Result<(), LedgerError> {
        let next = self.validate(&block)?;
        if let Some(store) = &mut self.store {
            store.append(&block)?;
        }
        self.state = next;
        self.index_block(&block);
        self.blocks.push(block);
        Ok(())
    }

    pub fn custody_trail(&self, id: &Digest) -> Option<&[CustodyInterval]> {
        self.state.custody_trail(id)
    }

    pub fn verify(&self) -> VerificationReport {
        verify_chain(&self.blocks)
    }

    /// Mutable access for fault injection in simulations.
    pub fn blocks_mut_for_fault_injection(&mut self) -> &mut Vec<Block> {
        &mut self.blocks
    }

    pub fn orderer(&self) -> Option<Address> {
        self.state.orderer
    }

    /// Transactions of `kind` touching evidence `id`, in chain order.
    pub fn evidence_history(&self, id: &Digest) -> Vec<(&Block, &Transaction)> {
        self.blocks
            .iter()
            .flat_map(|b| b.txs.iter().map(move |t| (b, t)))
            .filter(|(_, t)| t.proposal.evidence_id() == Some(*id))
            .collect()
    }
}
