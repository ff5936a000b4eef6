//! In-process simulation of a permissioned deployment.
//!
//! Nodes are independent: each owns its chain and talks to the others only
//! through signed [`Message`]s delivered by a seeded event queue with
//! per-node latency, drop and partition settings. One node is the ordering
//! service; it batches proposals FIFO into signed blocks and announces them.
//! Peers fully validate every block, buffer out-of-order ones, quarantine
//! invalid ones and catch up through periodic block requests. Faults are
//! injected through [`Network::inject_fault`] or scheduled from a scenario
//! file, and every one is logged.

use std::collections::{BTreeMap, BTreeSet, HashSet, VecDeque};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chaincode::{self, ChaincodeError};
use crate::codec::{Canonical, DecodeError, Decoder, Encoder};
use crate::hash::{sha256, Digest};
use crate::identity::{Address, CertificateAuthority, Participant, Role, SecretKey, SignatureBytes};
use crate::ledger::{orderer_signed, Block, Chain, Genesis, LedgerError, Policy, RejectReason, Transaction, TxKind, WorldState};

pub type NodeId = usize;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("network spec: {0}")]
    Invalid(String),
    #[error("network spec parse: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("network spec i/o: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[serde(tag = "code", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SubmitError {
    #[error("malformed transaction")]
    Malformed,
    #[error("submitter signature does not verify")]
    BadSignature,
    #[error("channel is not attested for evidence traffic")]
    Unattested,
    #[error("genesis transactions cannot be submitted")]
    Genesis,
    #[error("no such node")]
    NoSuchNode,
}

fn isp() -> Role {
    Role::Isp
}

fn default_latency() -> (u64, u64) {
    (5, 50)
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeConfig {
    pub node_id: String,
    #[serde(default = "isp")]
    pub role: Role,
    #[serde(default)]
    pub is_orderer: bool,
    /// Uniform inbound latency range in milliseconds.
    #[serde(default = "default_latency")]
    pub latency_ms: (u64, u64),
    /// Probability that an inbound message is lost.
    #[serde(default)]
    pub drop_rate: f64,
    #[serde(default)]
    pub partition_group: u32,
    /// Stand-in for an attested evidence channel; CREATE proposals are
    /// refused at un-attested entry points.
    #[serde(default = "yes")]
    pub attested: bool,
}

impl NodeConfig {
    pub fn new(node_id: impl Into<String>) -> Self {
        Self {
            node_id: node_id.into(),
            role: Role::Isp,
            is_orderer: false,
            latency_ms: default_latency(),
            drop_rate: 0.0,
            partition_group: 0,
            attested: true,
        }
    }

    pub fn orderer(mut self) -> Self {
        self.is_orderer = true;
        self
    }

    fn validate(&self) -> Result<(), NetError> {
        if !(0.0..=1.0).contains(&self.drop_rate) {
            return Err(NetError::Invalid(format!("{}: drop_rate outside [0,1]", self.node_id)));
        }
        if self.latency_ms.0 > self.latency_ms.1 {
            return Err(NetError::Invalid(format!("{}: latency min > max", self.node_id)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetParams {
    pub batch_window_ms: u64,
    pub max_batch: usize,
    pub sync_interval_ms: u64,
    /// Most blocks returned by one BLOCK_RESPONSE.
    pub sync_batch: u64,
    pub retry_ms: u64,
    pub max_attempts: u32,
    /// Quiet period after which the network counts as quiescent.
    pub settle_ms: u64,
    pub max_time_ms: u64,
    /// Extra delay on the conflicting twin of an equivocated block.
    pub equivocation_delay_ms: u64,
}

impl Default for NetParams {
    fn default() -> Self {
        Self {
            batch_window_ms: 200,
            max_batch: 10,
            sync_interval_ms: 500,
            sync_batch: 50,
            retry_ms: 2_000,
            max_attempts: 100,
            settle_ms: 10_000,
            max_time_ms: 3_600_000,
            equivocation_delay_ms: 1_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Fault {
    /// Sets the inbound loss probability of `node`.
    Drop { node: String, rate: f64 },
    /// Adds latency to every message delivered to `node`.
    Delay { node: String, extra_ms: u64 },
    /// Splits the network by partition group. Explicit `groups` override
    /// the configured ones.
    Partition {
        #[serde(default)]
        groups: BTreeMap<String, u32>,
    },
    Heal,
    /// Flips one byte inside a stored block of `node`.
    TamperBlock { node: String, height: u64 },
    /// The orderer signs a conflicting twin of its next block.
    Equivocate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduledFault {
    pub at_ms: u64,
    #[serde(flatten)]
    pub fault: Fault,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorkloadSpec {
    pub transactions: usize,
    pub duration_ms: u64,
    pub isp_clients: usize,
    pub lea_clients: usize,
    pub prosecutor_clients: usize,
}

impl Default for WorkloadSpec {
    fn default() -> Self {
        Self {
            transactions: 200,
            duration_ms: 20_000,
            isp_clients: 2,
            lea_clients: 2,
            prosecutor_clients: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub seed: u64,
    #[serde(default = "default_base_time")]
    pub base_time: u64,
    #[serde(default)]
    pub params: NetParams,
    #[serde(default)]
    pub policy: Policy,
    pub nodes: Vec<NodeConfig>,
    #[serde(default)]
    pub workload: WorkloadSpec,
    #[serde(default)]
    pub faults: Vec<ScheduledFault>,
}

fn default_base_time() -> u64 {
    1_700_000_000
}

impl NetworkSpec {
    /// Orderer plus `peers` ISP peers, default settings, no faults.
    pub fn standard(seed: u64, peers: usize) -> Self {
        let mut nodes = vec![NodeConfig::new("orderer").orderer()];
        nodes.extend((1..=peers).map(|i| NodeConfig::new(format!("peer-{i}"))));
        Self {
            seed,
            base_time: default_base_time(),
            params: NetParams::default(),
            policy: Policy::default(),
            nodes,
            workload: WorkloadSpec::default(),
            faults: Vec::new(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, NetError> {
        let spec: Self = toml::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self, NetError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<(), NetError> {
        let bad = |m: &str| Err(NetError::Invalid(m.to_owned()));
        let mut ids = BTreeSet::new();
        for n in &self.nodes {
            n.validate()?;
            if !ids.insert(n.node_id.as_str()) {
                return bad("duplicate node id");
            }
        }
        let orderers: Vec<_> = self.nodes.iter().filter(|n| n.is_orderer).collect();
        if orderers.len() != 1 {
            return bad("exactly one node must be the orderer");
        }
        if orderers[0].role != Role::Isp {
            return bad("the orderer must be an ISP node");
        }
        if self.params.max_batch == 0 || self.params.batch_window_ms == 0 || self.params.sync_interval_ms == 0 {
            return bad("batching and sync parameters must be positive");
        }
        let w = &self.workload;
        if w.transactions > 0 && (w.isp_clients == 0 || w.lea_clients == 0) {
            return bad("a workload needs at least one ISP and one LEA client");
        }
        for f in &self.faults {
            let node = match &f.fault {
                Fault::Drop { node, rate } => {
                    if !(0.0..=1.0).contains(rate) {
                        return bad("fault drop rate outside [0,1]");
                    }
                    Some(node)
                }
                Fault::Delay { node, .. } | Fault::TamperBlock { node, .. } => Some(node),
                Fault::Partition { groups } => groups.keys().find(|k| !ids.contains(k.as_str())),
                Fault::Heal | Fault::Equivocate => None,
            };
            if let Some(node) = node {
                if !ids.contains(node.as_str()) {
                    return Err(NetError::Invalid(format!("fault names unknown node `{node}`")));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MessageKind {
    Proposal,
    BlockAnnounce,
    BlockRequest,
    BlockResponse,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Payload {
    Proposal(Transaction),
    BlockAnnounce(Block),
    BlockRequest { from_height: u64 },
    BlockResponse(Vec<Block>),
}

impl Payload {
    pub fn kind(&self) -> MessageKind {
        match self {
            Self::Proposal(_) => MessageKind::Proposal,
            Self::BlockAnnounce(_) => MessageKind::BlockAnnounce,
            Self::BlockRequest { .. } => MessageKind::BlockRequest,
            Self::BlockResponse(_) => MessageKind::BlockResponse,
        }
    }
}

impl Canonical for Payload {
    fn encode_to(&self, enc: &mut Encoder) {
        match self {
            Self::Proposal(tx) => enc.u8(0).value(tx),
            Self::BlockAnnounce(b) => enc.u8(1).value(b),
            Self::BlockRequest { from_height } => enc.u8(2).u64(*from_height),
            Self::BlockResponse(bs) => enc.u8(3).list(bs),
        };
    }
    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(match dec.u8()? {
            0 => Self::Proposal(dec.value()?),
            1 => Self::BlockAnnounce(dec.value()?),
            2 => Self::BlockRequest { from_height: dec.u64()? },
            3 => Self::BlockResponse(dec.list()?),
            _ => return Err(dec.invalid("payload tag")),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Message {
    pub kind: MessageKind,
    pub payload: Vec<u8>,
    pub sender: Address,
    pub signature: SignatureBytes,
}

impl Message {
    fn signed_bytes(kind: MessageKind, payload: &[u8]) -> Vec<u8> {
        let mut enc = Encoder::new();
        enc.u8(kind as u8).bytes(payload);
        enc.finish()
    }

    pub fn seal(payload: &Payload, sender: Address, key: &SecretKey) -> Self {
        let kind = payload.kind();
        let payload = payload.to_canonical_bytes();
        let signature = key.sign(&Self::signed_bytes(kind, &payload));
        Self { kind, payload, sender, signature }
    }

    /// Verifies the sender signature under its roster certificate and
    /// decodes the payload.
    pub fn open(&self, state: &WorldState, at: u64) -> Option<Payload> {
        let anchor = state.anchor?;
        let cert = state.participants.get(&self.sender)?;
        if !anchor.verify(cert, &Self::signed_bytes(self.kind, &self.payload), &self.signature, at) {
            return None;
        }
        let payload = Payload::from_canonical_bytes(&self.payload).ok()?;
        (payload.kind() == self.kind).then_some(payload)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "alert", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AlertKind {
    Quarantined { height: u64, block_hash: Digest, reason: RejectReason },
    Equivocation { height: u64, kept: Digest, conflicting: Digest },
    BadMessage { sender: Address },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Alert {
    pub at_ms: u64,
    pub node: String,
    #[serde(flatten)]
    pub kind: AlertKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    pub at_ms: u64,
    pub tx_id: Digest,
    pub error: ChaincodeError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultRecord {
    pub at_ms: u64,
    pub fault: Fault,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuarantinedBlock {
    pub block: Block,
    pub reason: RejectReason,
}

#[derive(Debug)]
pub struct Node {
    pub config: NodeConfig,
    pub participant: Participant,
    key: SecretKey,
    pub chain: Chain,
    /// Blocks ahead of the tip, waiting for the gap to fill.
    pending: BTreeMap<u64, Block>,
    pub quarantine: Vec<QuarantinedBlock>,
    equivocations: BTreeSet<(u64, Digest)>,
    pub tampered: bool,
    drop_rate: f64,
    extra_delay_ms: u64,
}

impl Node {
    pub fn is_stalled(&self) -> bool {
        self.drop_rate >= 1.0
    }

    /// Canonical bytes of every block, hashed.
    pub fn chain_digest(&self) -> Digest {
        let mut enc = Encoder::new();
        enc.list(self.chain.blocks());
        sha256(&enc.finish())
    }
}

/// A client identity; clients reach the network through a gateway node.
#[derive(Debug)]
pub struct Client {
    pub participant: Participant,
    pub key: SecretKey,
}

#[derive(Debug, Clone)]
struct WorkItem {
    client: usize,
    tx: Transaction,
    attempts: u32,
    gateway: NodeId,
    done: bool,
    abandoned: bool,
}

#[derive(Debug, Clone)]
enum Event {
    Deliver { to: NodeId, msg: Message },
    OrdererTick,
    SyncTick(NodeId),
    Submit(usize),
    Check(usize),
    Fault(Fault),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSummary {
    pub node_id: String,
    pub height: u64,
    pub tip_hash: Digest,
    pub chain_digest: Digest,
    pub state_digest: Digest,
    pub chain_valid: bool,
    pub tampered: bool,
    pub stalled: bool,
    pub quarantined: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkReport {
    pub seed: u64,
    pub quiescent: bool,
    pub end_ms: u64,
    pub nodes: Vec<NodeSummary>,
    /// Every honest, non-stalled node holds a bit-identical chain.
    pub converged: bool,
    /// Every honest chain is a prefix of the orderer's.
    pub common_prefix: bool,
    /// Every tx at depth >= 1 on the orderer sits at the same height on
    /// every honest, non-stalled node.
    pub persistence: bool,
    pub submitted: usize,
    pub committed: usize,
    pub abandoned: usize,
    pub duplicates_absorbed: usize,
    pub rejected_at_entry: usize,
    pub messages_sent: u64,
    pub messages_dropped: u64,
    pub rejections: Vec<Rejection>,
    pub alerts: Vec<Alert>,
    pub faults: Vec<FaultRecord>,
}

impl NetworkReport {
    pub fn passed(&self) -> bool {
        self.quiescent && self.converged && self.common_prefix && self.persistence && self.abandoned == 0
    }
}

#[derive(Debug, Default)]
struct Orderer {
    queue: VecDeque<Transaction>,
    queued: HashSet<Digest>,
    equivocate_next: bool,
}

pub struct Network {
    pub params: NetParams,
    base_time: u64,
    seed: u64,
    pub nodes: Vec<Node>,
    pub clients: Vec<Client>,
    orderer_id: NodeId,
    orderer: Orderer,
    rng: ChaCha20Rng,
    queue: BTreeMap<(u64, u64), Event>,
    seq: u64,
    now_ms: u64,
    partition: Option<BTreeMap<NodeId, u32>>,
    work: Vec<WorkItem>,
    last_progress_ms: u64,
    pub alerts: Vec<Alert>,
    pub rejections: Vec<Rejection>,
    pub fault_log: Vec<FaultRecord>,
    duplicates: usize,
    rejected_at_entry: usize,
    sent: u64,
    dropped: u64,
}

impl Network {
    /// Enrolls every node and `clients` (roles in order) under a CA seeded
    /// from `seed`, and boots each node from the shared genesis block.
    pub fn new(spec: &NetworkSpec, clients: &[Role]) -> Result<Self, NetError> {
        spec.validate()?;
        let t0 = spec.base_time;
        let mut ca = CertificateAuthority::from_u64_seed(spec.seed);
        let enrolled: Vec<_> = spec.nodes.iter().map(|n| ca.enroll(n.role, t0)).collect();
        let clients: Vec<Client> = clients
            .iter()
            .map(|&r| {
                let (participant, key) = ca.enroll(r, t0);
                Client { participant, key }
            })
            .collect();
        let orderer_id = spec.nodes.iter().position(|n| n.is_orderer).expect("validated");
        let roster = enrolled
            .iter()
            .map(|(p, _)| p.cert.clone())
            .chain(clients.iter().map(|c| c.participant.cert.clone()))
            .collect();
        let genesis = Block::genesis(
            Genesis {
                chain_id: format!("sim-{}", spec.seed),
                ca_root: ca.root_public_key(),
                orderer: enrolled[orderer_id].0.address,
                roster,
                policy: spec.policy,
                timestamp: t0,
            },
            &enrolled[orderer_id].1,
        );
        let nodes = spec
            .nodes
            .iter()
            .zip(enrolled)
            .map(|(config, (participant, key))| {
                let mut chain = Chain::in_memory();
                chain.append_block(genesis.clone()).expect("genesis is valid");
                Node {
                    drop_rate: config.drop_rate,
                    config: config.clone(),
                    participant,
                    key,
                    chain,
                    pending: BTreeMap::new(),
                    quarantine: Vec::new(),
                    equivocations: BTreeSet::new(),
                    tampered: false,
                    extra_delay_ms: 0,
                }
            })
            .collect();
        let mut net = Self {
            params: spec.params,
            base_time: t0,
            seed: spec.seed,
            nodes,
            clients,
            orderer_id,
            orderer: Orderer::default(),
            rng: ChaCha20Rng::seed_from_u64(spec.seed ^ 0x6e65_7477_6f72_6b00),
            queue: BTreeMap::new(),
            seq: 0,
            now_ms: 0,
            partition: None,
            work: Vec::new(),
            last_progress_ms: 0,
            alerts: Vec::new(),
            rejections: Vec::new(),
            fault_log: Vec::new(),
            duplicates: 0,
            rejected_at_entry: 0,
            sent: 0,
            dropped: 0,
        };
        net.schedule(net.params.batch_window_ms, Event::OrdererTick);
        for i in 0..net.nodes.len() {
            if i != orderer_id {
                let offset = net.rng.gen_range(1..=net.params.sync_interval_ms);
                net.schedule(offset, Event::SyncTick(i));
            }
        }
        for f in &spec.faults {
            net.schedule(f.at_ms, Event::Fault(f.fault.clone()));
        }
        Ok(net)
    }

    pub fn now_ms(&self) -> u64 {
        self.now_ms
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn orderer_id(&self) -> NodeId {
        self.orderer_id
    }

    pub fn node_index(&self, id: &str) -> Option<NodeId> {
        self.nodes.iter().position(|n| n.config.node_id == id)
    }

    /// Ledger time in seconds at simulation time `ms`.
    pub fn ledger_time(&self, ms: u64) -> u64 {
        self.base_time + ms / 1000
    }

    /// Ledger state as seen by the orderer.
    pub fn orderer_state(&self) -> &WorldState {
        self.nodes[self.orderer_id].chain.state()
    }

    fn schedule(&mut self, at_ms: u64, ev: Event) {
        self.seq += 1;
        self.queue.insert((at_ms, self.seq), ev);
    }

    fn progress(&mut self) {
        self.last_progress_ms = self.now_ms;
    }

    fn send(&mut self, from: NodeId, to: NodeId, payload: &Payload, extra_ms: u64) {
        self.sent += 1;
        if let Some(groups) = &self.partition {
            if groups.get(&from) != groups.get(&to) {
                self.dropped += 1;
                return;
            }
        }
        let dest = &self.nodes[to];
        if dest.drop_rate > 0.0 && self.rng.gen_bool(dest.drop_rate) {
            self.dropped += 1;
            return;
        }
        let (lo, hi) = dest.config.latency_ms;
        let delay = self.rng.gen_range(lo..=hi) + dest.extra_delay_ms + extra_ms;
        let sender = &self.nodes[from];
        let msg = Message::seal(payload, sender.participant.address, &sender.key);
        self.schedule(self.now_ms + delay.max(1), Event::Deliver { to, msg });
    }

    fn broadcast(&mut self, from: NodeId, payload: &Payload, extra_ms: u64) {
        for to in 0..self.nodes.len() {
            if to != from {
                self.send(from, to, payload, extra_ms);
            }
        }
    }

    /// First-hop admission of a client-signed transaction at node `via`.
    /// Accepted transactions are forwarded to the orderer.
    pub fn submit_proposal(&mut self, via: NodeId, tx: Transaction) -> Result<(), SubmitError> {
        let node = self.nodes.get(via).ok_or(SubmitError::NoSuchNode)?;
        if tx.kind == TxKind::Genesis {
            return Err(SubmitError::Genesis);
        }
        if !tx.is_well_formed() {
            return Err(SubmitError::Malformed);
        }
        if tx.kind == TxKind::Create && !node.config.attested {
            return Err(SubmitError::Unattested);
        }
        let state = node.chain.state();
        let at = self.ledger_time(self.now_ms);
        let signed = state
            .participants
            .get(&tx.submitter)
            .is_some_and(|cert| state.anchor.is_some_and(|a| a.verify(cert, &tx.signed_bytes(), &tx.submitter_signature, at)));
        if !signed {
            self.rejected_at_entry += 1;
            return Err(SubmitError::BadSignature);
        }
        if via == self.orderer_id {
            self.enqueue(tx);
        } else {
            self.send(via, self.orderer_id, &Payload::Proposal(tx), 0);
        }
        Ok(())
    }

    fn enqueue(&mut self, tx: Transaction) {
        let chain = &self.nodes[self.orderer_id].chain;
        if chain.contains_tx(&tx.tx_id) || self.orderer.queued.contains(&tx.tx_id) {
            self.duplicates += 1;
            return;
        }
        self.orderer.queued.insert(tx.tx_id);
        self.orderer.queue.push_back(tx);
        self.progress();
        while self.orderer.queue.len() >= self.params.max_batch {
            self.cut_block();
        }
    }

    /// Takes up to `max_batch` queued proposals in arrival order and seals
    /// the semantically valid ones into a block. Emits nothing if none is.
    fn cut_block(&mut self) {
        let n = self.orderer.queue.len().min(self.params.max_batch);
        let batch: Vec<Transaction> = self.orderer.queue.drain(..n).collect();
        for tx in &batch {
            self.orderer.queued.remove(&tx.tx_id);
        }
        let oid = self.orderer_id;
        let ts = self.ledger_time(self.now_ms).max(self.nodes[oid].chain.tip().map_or(0, |b| b.timestamp));
        let mut scratch = self.nodes[oid].chain.state().clone();
        let mut valid = Vec::new();
        for tx in batch {
            match chaincode::apply(&mut scratch, &tx, ts) {
                Ok(()) => valid.push(tx),
                Err(error) => self.rejections.push(Rejection { at_ms: self.now_ms, tx_id: tx.tx_id, error }),
            }
        }
        if valid.is_empty() {
            return;
        }
        let node = &self.nodes[oid];
        let (height, prev) = (node.chain.len(), node.chain.tip_hash());
        let block = Block::seal(height, prev, ts, valid, node.participant.address, &node.key);
        let twin = self.orderer.equivocate_next.then(|| {
            Block::seal(height, prev, ts + 1, block.txs.clone(), node.participant.address, &node.key)
        });
        self.nodes[oid]
            .chain
            .append_block(block.clone())
            .expect("orderer builds valid blocks");
        self.progress();
        self.broadcast(oid, &Payload::BlockAnnounce(block), 0);
        if let Some(twin) = twin {
            self.orderer.equivocate_next = false;
            self.fault_log.push(FaultRecord {
                at_ms: self.now_ms,
                fault: Fault::Equivocate,
                detail: format!("twin of height {height} sent"),
            });
            let delay = self.params.equivocation_delay_ms;
            self.broadcast(oid, &Payload::BlockAnnounce(twin), delay);
        }
    }

    fn alert(&mut self, node: NodeId, kind: AlertKind) {
        self.alerts.push(Alert {
            at_ms: self.now_ms,
            node: self.nodes[node].config.node_id.clone(),
            kind,
        });
    }

    fn try_append(&mut self, n: NodeId, block: Block) -> bool {
        let hash = block.block_hash;
        let height = block.height;
        match self.nodes[n].chain.append_block(block.clone()) {
            Ok(()) => {
                self.progress();
                true
            }
            Err(LedgerError::Rejected(r)) => {
                self.nodes[n].quarantine.push(QuarantinedBlock { block, reason: r.reason.clone() });
                self.alert(n, AlertKind::Quarantined { height, block_hash: hash, reason: r.reason });
                false
            }
            Err(e) => panic!("in-memory append failed: {e}"),
        }
    }

    fn offer_block(&mut self, n: NodeId, from: NodeId, block: Block) {
        let height = self.nodes[n].chain.len();
        if block.height < height {
            let kept = self.nodes[n].chain.block(block.height).expect("below tip").block_hash;
            if kept == block.block_hash {
                return;
            }
            if orderer_signed(self.nodes[n].chain.state(), &block) {
                if self.nodes[n].equivocations.insert((block.height, block.block_hash)) {
                    self.alert(n, AlertKind::Equivocation { height: block.height, kept, conflicting: block.block_hash });
                }
            } else if !self.nodes[n].quarantine.iter().any(|q| q.block == block) {
                let reason = RejectReason::ProposerSignature;
                self.alert(n, AlertKind::Quarantined { height: block.height, block_hash: block.block_hash, reason: reason.clone() });
                self.nodes[n].quarantine.push(QuarantinedBlock { block, reason });
            }
            return;
        }
        if block.height > height {
            let node = &mut self.nodes[n];
            if node.pending.len() < 1024 {
                node.pending.entry(block.height).or_insert(block);
            }
            self.send(n, from, &Payload::BlockRequest { from_height: height }, 0);
            return;
        }
        if !self.try_append(n, block) {
            return;
        }
        loop {
            let node = &mut self.nodes[n];
            let next = node.chain.len();
            node.pending.retain(|h, _| *h >= next);
            let Some(b) = node.pending.remove(&next) else { break };
            if !self.try_append(n, b) {
                break;
            }
        }
    }

    fn deliver(&mut self, to: NodeId, msg: Message) {
        let at = self.ledger_time(self.now_ms);
        let Some(payload) = msg.open(self.nodes[to].chain.state(), at) else {
            self.alert(to, AlertKind::BadMessage { sender: msg.sender });
            return;
        };
        let Some(from) = self.nodes.iter().position(|n| n.participant.address == msg.sender) else {
            return;
        };
        match payload {
            Payload::Proposal(tx) => {
                if to == self.orderer_id {
                    let state = self.nodes[to].chain.state();
                    let ok = state.participants.get(&tx.submitter).is_some_and(|c| {
                        state.anchor.is_some_and(|a| a.verify(c, &tx.signed_bytes(), &tx.submitter_signature, at))
                    });
                    if ok && tx.is_well_formed() && tx.kind != TxKind::Genesis {
                        self.enqueue(tx);
                    }
                }
            }
            Payload::BlockAnnounce(b) => self.offer_block(to, from, b),
            Payload::BlockResponse(bs) => {
                for b in bs {
                    self.offer_block(to, from, b);
                }
            }
            Payload::BlockRequest { from_height } => {
                let chain = &self.nodes[to].chain;
                if from_height < chain.len() {
                    let end = chain.len().min(from_height + self.params.sync_batch);
                    let blocks = chain.blocks()[from_height as usize..end as usize].to_vec();
                    self.send(to, from, &Payload::BlockResponse(blocks), 0);
                }
            }
        }
    }

    /// Applies `fault` now and logs it.
    pub fn inject_fault(&mut self, fault: Fault) {
        let detail = match &fault {
            Fault::Drop { node, rate } => {
                let i = self.node_index(node).expect("validated");
                self.nodes[i].drop_rate = *rate;
                format!("{node} inbound loss {rate}")
            }
            Fault::Delay { node, extra_ms } => {
                let i = self.node_index(node).expect("validated");
                self.nodes[i].extra_delay_ms = *extra_ms;
                format!("{node} +{extra_ms}ms")
            }
            Fault::Partition { groups } => {
                let map: BTreeMap<NodeId, u32> = self
                    .nodes
                    .iter()
                    .enumerate()
                    .map(|(i, n)| (i, groups.get(&n.config.node_id).copied().unwrap_or(n.config.partition_group)))
                    .collect();
                let detail = map.iter().map(|(i, g)| format!("{}:{g}", self.nodes[*i].config.node_id)).collect::<Vec<_>>().join(",");
                self.partition = Some(map);
                format!("partition {detail}")
            }
            Fault::Heal => {
                self.partition = None;
                "healed".to_owned()
            }
            Fault::TamperBlock { node, height } => {
                let i = self.node_index(node).expect("validated");
                let blocks = self.nodes[i].chain.blocks_mut_for_fault_injection();
                match blocks.get_mut(*height as usize) {
                    Some(b) => {
                        tamper(b);
                        self.nodes[i].tampered = true;
                        format!("{node} block {height} altered")
                    }
                    None => format!("{node} has no block {height}; nothing altered"),
                }
            }
            Fault::Equivocate => {
                self.orderer.equivocate_next = true;
                "orderer will equivocate on its next block".to_owned()
            }
        };
        self.progress();
        self.fault_log.push(FaultRecord { at_ms: self.now_ms, fault, detail });
    }

    /// Registers a client transaction to be submitted at `at_ms` and retried
    /// until it shows up on its gateway's chain.
    pub fn schedule_submission(&mut self, at_ms: u64, client: usize, tx: Transaction) {
        let i = self.work.len();
        let gateway = self.gateway_for(client, 0);
        self.work.push(WorkItem { client, tx, attempts: 0, gateway, done: false, abandoned: false });
        self.schedule(at_ms, Event::Submit(i));
    }

    fn gateway_for(&self, client: usize, attempt: u32) -> NodeId {
        (client + attempt as usize) % self.nodes.len()
    }

    fn step(&mut self, ev: Event) {
        match ev {
            Event::Deliver { to, msg } => self.deliver(to, msg),
            Event::OrdererTick => {
                while !self.orderer.queue.is_empty() {
                    self.cut_block();
                }
                self.schedule(self.now_ms + self.params.batch_window_ms, Event::OrdererTick);
            }
            Event::SyncTick(n) => {
                let peers: Vec<NodeId> = (0..self.nodes.len()).filter(|&p| p != n).collect();
                let target = if self.rng.gen_bool(0.5) {
                    self.orderer_id
                } else {
                    *peers.choose(&mut self.rng).expect("at least two nodes")
                };
                let from_height = self.nodes[n].chain.len();
                self.send(n, target, &Payload::BlockRequest { from_height }, 0);
                self.schedule(self.now_ms + self.params.sync_interval_ms, Event::SyncTick(n));
            }
            Event::Submit(i) => {
                let item = &mut self.work[i];
                item.attempts += 1;
                let (gateway, tx) = (item.gateway, item.tx.clone());
                self.progress();
                // entry refusals are final for this attempt; the check retries
                let _ = self.submit_proposal(gateway, tx);
                self.schedule(self.now_ms + self.params.retry_ms, Event::Check(i));
            }
            Event::Check(i) => {
                let item = &self.work[i];
                if self.nodes[item.gateway].chain.contains_tx(&item.tx.tx_id) {
                    self.work[i].done = true;
                    self.progress();
                } else if item.attempts >= self.params.max_attempts {
                    self.work[i].abandoned = true;
                } else {
                    let gateway = self.gateway_for(item.client, item.attempts);
                    self.work[i].gateway = gateway;
                    self.schedule(self.now_ms, Event::Submit(i));
                }
            }
            Event::Fault(f) => self.inject_fault(f),
        }
    }

    fn outstanding_work(&self) -> bool {
        !self.orderer.queue.is_empty()
            || self.work.iter().any(|w| !w.done && !w.abandoned)
            || self.queue.values().any(|e| matches!(e, Event::Fault(_) | Event::Submit(_)))
    }

    /// Processes events up to and including `until_ms`.
    pub fn run_until(&mut self, until_ms: u64) {
        while let Some(entry) = self.queue.first_entry() {
            if entry.key().0 > until_ms {
                break;
            }
            let ((t, _), ev) = entry.remove_entry();
            self.now_ms = t;
            self.step(ev);
        }
        self.now_ms = self.now_ms.max(until_ms);
    }

    /// Runs until no work is outstanding and no node has changed for
    /// `settle_ms`, or until `max_time_ms`. Returns whether quiescence was
    /// reached.
    pub fn run_until_quiescent(&mut self) -> bool {
        while let Some(entry) = self.queue.first_entry() {
            if entry.key().0 > self.params.max_time_ms {
                return false;
            }
            let ((t, _), ev) = entry.remove_entry();
            self.now_ms = t;
            self.step(ev);
            if !self.outstanding_work() && self.now_ms.saturating_sub(self.last_progress_ms) >= self.params.settle_ms {
                return true;
            }
        }
        true
    }

    pub fn report(&self, quiescent: bool) -> NetworkReport {
        let nodes: Vec<NodeSummary> = self
            .nodes
            .iter()
            .map(|n| NodeSummary {
                node_id: n.config.node_id.clone(),
                height: n.chain.len(),
                tip_hash: n.chain.tip_hash(),
                chain_digest: n.chain_digest(),
                state_digest: n.chain.state().digest(),
                chain_valid: n.chain.verify().valid,
                tampered: n.tampered,
                stalled: n.is_stalled(),
                quarantined: n.quarantine.len(),
            })
            .collect();
        let orderer = &self.nodes[self.orderer_id].chain;
        let honest: Vec<&Node> = self.nodes.iter().filter(|n| !n.tampered).collect();
        let live: Vec<&&Node> = honest.iter().filter(|n| !n.is_stalled()).collect();
        let converged = live.windows(2).all(|w| {
            w[0].chain_digest() == w[1].chain_digest() && w[0].chain.state().digest() == w[1].chain.state().digest()
        });
        let common_prefix = honest.iter().all(|n| {
            n.chain.len() <= orderer.len()
                && n.chain.blocks().iter().zip(orderer.blocks()).all(|(a, b)| a == b)
        });
        let deep = orderer.len().saturating_sub(1) as usize;
        let persistence = live.iter().all(|n| {
            orderer.blocks()[..deep].iter().all(|b| {
                b.txs.iter().all(|tx| n.chain.find_tx(&tx.tx_id).is_some_and(|(nb, _)| nb.height == b.height))
            })
        });
        NetworkReport {
            seed: self.seed,
            quiescent,
            end_ms: self.now_ms,
            nodes,
            converged,
            common_prefix,
            persistence,
            submitted: self.work.len(),
            committed: self.work.iter().filter(|w| orderer.contains_tx(&w.tx.tx_id)).count(),
            abandoned: self.work.iter().filter(|w| w.abandoned).count(),
            duplicates_absorbed: self.duplicates,
            rejected_at_entry: self.rejected_at_entry,
            messages_sent: self.sent,
            messages_dropped: self.dropped,
            rejections: self.rejections.clone(),
            alerts: self.alerts.clone(),
            faults: self.fault_log.clone(),
        }
    }
}

/// Alters the first transaction's content in place, leaving the header.
fn tamper(block: &mut Block) {
    use crate::ledger::Proposal;
    let tx = &mut block.txs[0];
    match &mut tx.proposal {
        Proposal::Create(c) => c.dsc.push('!'),
        Proposal::Transfer(t) => t.timestamp ^= 1,
        Proposal::Erase(e) => e.timestamp ^= 1,
        Proposal::Access(a) => a.timestamp ^= 1,
        Proposal::DeviceRegister(d) | Proposal::DeviceVerify(d) => d.timestamp ^= 1,
        Proposal::Genesis(g) => g.chain_id.push('!'),
    }
}

/// Client roles for a workload spec, ISPs first.
pub fn client_roles(w: &WorkloadSpec) -> Vec<Role> {
    let mut roles = vec![Role::Isp; w.isp_clients];
    roles.extend(vec![Role::Lea; w.lea_clients]);
    roles.extend(vec![Role::Prosecutor; w.prosecutor_clients]);
    roles
}

/// A sequence of `n` transactions that is valid when applied in order on
/// top of `state`: evidence creation, custody hand-offs ISP to LEA to
/// prosecutor, device registrations and verifications. Returns
/// `(at_ms, client, tx)` triples.
pub fn generate_workload(
    rng: &mut ChaCha20Rng,
    state: &WorldState,
    clients: &[Client],
    n: usize,
    duration_ms: u64,
    base_time: u64,
) -> Vec<(u64, usize, Transaction)> {
    let by_role = |r: Role| -> Vec<usize> {
        clients.iter().enumerate().filter(|(_, c)| c.participant.role == r).map(|(i, _)| i).collect()
    };
    let (isps, leas, pros) = (by_role(Role::Isp), by_role(Role::Lea), by_role(Role::Prosecutor));
    let client_of: BTreeMap<Address, usize> =
        clients.iter().enumerate().map(|(i, c)| (c.participant.address, i)).collect();
    let mut scratch = state.clone();
    let mut ids = HashSet::new();
    let mut devices: Vec<String> = Vec::new();
    let mut out = Vec::with_capacity(n);
    let mut salt = rng.gen::<u64>();
    for i in 0..n {
        let at_ms = if n > 1 { i as u64 * duration_ms / n as u64 } else { 0 };
        let now = base_time + at_ms / 1000;
        let roll = rng.gen_range(0..100);
        let movable: Vec<Digest> = scratch
            .evidence
            .values()
            .filter(|r| !scratch.is_erased(&r.id))
            .filter(|r| client_of.get(&r.own).is_some_and(|&c| clients[c].participant.role != Role::Prosecutor))
            .map(|r| r.id)
            .collect();
        let attempt = if roll < 40 && !movable.is_empty() {
            let id = *movable.choose(rng).expect("non-empty");
            let owner = client_of[&scratch.record(&id).expect("live").own];
            let next = match clients[owner].participant.role {
                Role::Isp => leas.choose(rng).copied(),
                _ if pros.is_empty() || rng.gen_bool(0.3) => leas.iter().copied().filter(|&l| l != owner).collect::<Vec<_>>().choose(rng).copied(),
                _ => pros.choose(rng).copied(),
            };
            next.and_then(|to| {
                let c = &clients[owner];
                chaincode::transfer_ownership(&scratch, &c.participant, &c.key, id, clients[to].participant.address, None, now)
                    .ok()
                    .map(|tx| (owner, tx))
            })
        } else if roll < 55 {
            let c = *isps.choose(rng).expect("an ISP client");
            let device = format!("dev-{}", rng.gen_range(0..12));
            let fw = sha256(format!("fw-{}", rng.gen_range(0..3)).as_bytes());
            let cfg = sha256(format!("cfg-{}", rng.gen_range(0..3)).as_bytes());
            let cl = &clients[c];
            chaincode::register_device_state(&scratch, &cl.participant, &cl.key, &device, fw, cfg, now)
                .ok()
                .map(|tx| {
                    devices.push(device);
                    (c, tx)
                })
        } else if roll < 65 && !devices.is_empty() {
            let c = rng.gen_range(0..clients.len());
            let device = devices.choose(rng).expect("non-empty").clone();
            let rec = scratch.devices[&device].last().expect("registered").clone();
            let cl = &clients[c];
            chaincode::record_device_verification(&scratch, &cl.participant, &cl.key, &device, rec.firmware_hash, rec.config_hash, now)
                .ok()
                .map(|tx| (c, tx))
        } else {
            None
        };
        let (client, tx) = match attempt.filter(|(_, tx)| !ids.contains(&tx.tx_id)) {
            Some(pair) => pair,
            None => loop {
                salt += 1;
                let c = *isps.choose(rng).expect("an ISP client");
                let cl = &clients[c];
                let id = sha256(&salt.to_be_bytes());
                let kind = ["DDOS", "SPAM", "MITM", "PROPAGATION", "RALLYING"].choose(rng).expect("non-empty");
                if let Ok(tx) = chaincode::create_evidence(&scratch, &cl.participant, &cl.key, id, kind, now, "camera", now) {
                    break (c, tx);
                }
            },
        };
        chaincode::apply(&mut scratch, &tx, now).expect("workload is valid in order");
        ids.insert(tx.tx_id);
        out.push((at_ms, client, tx));
    }
    out
}

/// Builds the network from `spec`, schedules its workload and faults, runs
/// to quiescence and reports.
pub fn run_network_scenario(spec: &NetworkSpec) -> Result<NetworkReport, NetError> {
    let mut net = Network::new(spec, &client_roles(&spec.workload))?;
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
    let work = generate_workload(
        &mut rng,
        net.orderer_state(),
        &net.clients,
        spec.workload.transactions,
        spec.workload.duration_ms,
        spec.base_time,
    );
    for (at, client, tx) in work {
        net.schedule_submission(at, client, tx);
    }
    let quiescent = net.run_until_quiescent();
    Ok(net.report(quiescent))
}
