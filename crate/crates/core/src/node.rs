//! File-backed single-node deployment: CA material, enrolled identities,
//! the block store and one evidence database per ISP, all under one data
//! directory. The node is its own orderer; [`LocalNode::commit`] is the
//! serialized commit path used by the CLI and the explorer API.
//!
//! ```text
//! <data>/deployment.toml
//! <data>/ca/root.key
//! <data>/identities/<name>.toml
//! <data>/keys/<name>.key
//! <data>/chain/blocks.dat, blocks.idx
//! <data>/evdb/<isp address>/<evidence id>/...
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chaincode::{self, ChaincodeError};
use crate::collection::{IncidentDescriptor, ScenarioOutcome};
use crate::evidence::{tx_gen, Evidence, EvidenceError, EvidenceStore, NonceSource, StoreConfig};
use crate::hash::{sha256, Digest};
use crate::identity::{
    Address, Certificate, CertificateAuthority, IdentityError, Participant, Role, SecretKey, DEFAULT_CERT_VALIDITY_SECS,
};
use crate::ledger::{Block, Chain, Genesis, LedgerError, Policy, Proposal, Transaction, TxKind, WorldState};

pub const DEPLOYMENT_FILE: &str = "deployment.toml";
pub const ORDERER_NAME: &str = "orderer";

#[derive(Debug, Error)]
pub enum NodeError {
    #[error("no deployment at {0} (run `ca init`)")]
    NotInitialized(PathBuf),
    #[error("deployment already initialized at {0}")]
    AlreadyInitialized(PathBuf),
    #[error("invalid deployment config: {0}")]
    Config(String),
    #[error("unknown identity `{0}`")]
    UnknownIdentity(String),
    #[error("no signing key for `{0}`")]
    MissingKey(String),
    #[error("identity `{0}` already enrolled")]
    AlreadyEnrolled(String),
    #[error("the roster is fixed once the chain exists")]
    RosterFrozen,
    #[error("transaction signature does not verify")]
    BadSignature,
    #[error("malformed transaction")]
    Malformed,
    #[error(transparent)]
    Chaincode(#[from] ChaincodeError),
    #[error(transparent)]
    Evidence(#[from] EvidenceError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error(transparent)]
    Identity(#[from] IdentityError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

impl NodeError {
    pub fn code(&self) -> &'static str {
        match self {
            Self::NotInitialized(_) => "NotInitialized",
            Self::AlreadyInitialized(_) => "AlreadyInitialized",
            Self::Config(_) => "ConfigError",
            Self::UnknownIdentity(_) => "UnknownIdentity",
            // without the owner's key nothing can be signed on its behalf
            Self::MissingKey(_) => "PermissionDenied",
            Self::AlreadyEnrolled(_) => "AlreadyEnrolled",
            Self::RosterFrozen => "RosterFrozen",
            Self::BadSignature => "BadSignature",
            Self::Malformed => "Malformed",
            Self::Chaincode(e) => e.code(),
            Self::Evidence(e) => e.code(),
            Self::Ledger(_) => "LedgerError",
            Self::Identity(_) => "IdentityError",
            Self::Io(_) => "IoError",
        }
    }
}

pub type Result<T, E = NodeError> = std::result::Result<T, E>;

fn default_validity() -> u64 {
    DEFAULT_CERT_VALIDITY_SECS
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeploymentConfig {
    pub chain_id: String,
    /// Makes keys and nonces reproducible. Leave unset outside tests and demos.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub policy: Policy,
    #[serde(default)]
    pub evidence: StoreConfig,
    #[serde(default = "default_validity")]
    pub cert_validity_secs: u64,
}

impl DeploymentConfig {
    pub fn new(chain_id: impl Into<String>, seed: Option<u64>) -> Self {
        Self {
            chain_id: chain_id.into(),
            seed,
            policy: Policy::default(),
            evidence: StoreConfig::default(),
            cert_validity_secs: DEFAULT_CERT_VALIDITY_SECS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdentityFile {
    pub name: String,
    pub role: Role,
    pub address: Address,
    pub certificate: String,
}

impl IdentityFile {
    pub fn participant(&self) -> Result<Participant> {
        Ok(Participant::from_certificate(Certificate::from_base64(&self.certificate)?))
    }
}

fn valid_name(name: &str) -> bool {
    !name.is_empty()
        && name.len() <= 64
        && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

#[derive(Debug, Clone)]
pub struct Deployment {
    dir: PathBuf,
    pub config: DeploymentConfig,
}

impl Deployment {
    /// Creates the CA and the orderer identity.
    pub fn init(dir: &Path, config: DeploymentConfig, now: u64) -> Result<Self> {
        if dir.join(DEPLOYMENT_FILE).exists() {
            return Err(NodeError::AlreadyInitialized(dir.to_owned()));
        }
        if config.chain_id.is_empty() {
            return Err(NodeError::Config("chain_id must not be empty".into()));
        }
        for sub in ["ca", "identities", "keys", "evdb"] {
            fs::create_dir_all(dir.join(sub))?;
        }
        let ca = match config.seed {
            Some(seed) => CertificateAuthority::from_u64_seed(seed),
            None => CertificateAuthority::new(None),
        };
        write_secret(&dir.join("ca").join("root.key"), &ca.export_key())?;
        let text = toml::to_string_pretty(&config).map_err(|e| NodeError::Config(e.to_string()))?;
        fs::write(dir.join(DEPLOYMENT_FILE), text)?;
        let deployment = Self { dir: dir.to_owned(), config };
        deployment.enroll(ORDERER_NAME, Role::Isp, now)?;
        Ok(deployment)
    }

    pub fn open(dir: &Path) -> Result<Self> {
        let path = dir.join(DEPLOYMENT_FILE);
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(NodeError::NotInitialized(dir.to_owned())),
            Err(e) => return Err(e.into()),
        };
        let config = toml::from_str(&text).map_err(|e| NodeError::Config(e.to_string()))?;
        Ok(Self { dir: dir.to_owned(), config })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn chain_dir(&self) -> PathBuf {
        self.dir.join("chain")
    }

    pub fn evdb_dir(&self, isp: &Address) -> PathBuf {
        self.dir.join("evdb").join(isp.to_string())
    }

    fn ca(&self) -> Result<CertificateAuthority> {
        let key = SecretKey::from_bytes(&read_secret(&self.dir.join("ca").join("root.key"))?)?;
        Ok(CertificateAuthority::from_key(key).with_validity(self.config.cert_validity_secs))
    }

    pub fn chain_exists(&self) -> bool {
        self.chain_dir().join(crate::ledger::DATA_FILE).exists()
    }

    /// Issues a key and certificate for `name`. Refused once the genesis
    /// block has fixed the roster.
    pub fn enroll(&self, name: &str, role: Role, now: u64) -> Result<Participant> {
        if !valid_name(name) {
            return Err(NodeError::Config(format!("identity name `{name}` must be 1-64 of [A-Za-z0-9_-]")));
        }
        if self.chain_exists() {
            return Err(NodeError::RosterFrozen);
        }
        let path = self.dir.join("identities").join(format!("{name}.toml"));
        if path.exists() {
            return Err(NodeError::AlreadyEnrolled(name.to_owned()));
        }
        let key = match self.config.seed {
            Some(seed) => {
                let material = sha256(format!("enroll/{seed}/{name}").as_bytes());
                SecretKey::generate(&mut ChaCha20Rng::from_seed(*material.as_bytes()))
            }
            None => SecretKey::generate(&mut rand::rngs::OsRng),
        };
        let cert = self.ca()?.issue(key.public_key(), role, now)?;
        let file = IdentityFile {
            name: name.to_owned(),
            role,
            address: cert.subject_address,
            certificate: cert.to_base64(),
        };
        write_secret(&self.dir.join("keys").join(format!("{name}.key")), &key.to_bytes())?;
        fs::write(path, toml::to_string_pretty(&file).map_err(|e| NodeError::Config(e.to_string()))?)?;
        Ok(Participant::from_certificate(cert))
    }

    /// Every enrolled identity, by name.
    pub fn identities(&self) -> Result<Vec<IdentityFile>> {
        let mut out = Vec::new();
        for entry in fs::read_dir(self.dir.join("identities"))? {
            let path = entry?.path();
            if path.extension().is_some_and(|e| e == "toml") {
                let file: IdentityFile =
                    toml::from_str(&fs::read_to_string(&path)?).map_err(|e| NodeError::Config(e.to_string()))?;
                out.push(file);
            }
        }
        out.sort_by(|a, b| a.name.cmp(&b.name));
        Ok(out)
    }

    /// Looks an identity up by name or hex address.
    pub fn identity(&self, name_or_address: &str) -> Result<(String, Participant)> {
        let found = self
            .identities()?
            .into_iter()
            .find(|f| f.name == name_or_address || f.address.to_string() == name_or_address)
            .ok_or_else(|| NodeError::UnknownIdentity(name_or_address.to_owned()))?;
        Ok((found.name.clone(), found.participant()?))
    }

    pub fn name_of(&self, address: &Address) -> Option<String> {
        self.identities().ok()?.into_iter().find(|f| f.address == *address).map(|f| f.name)
    }

    /// The identity plus its signing key, read from `keys/<name>.key` or
    /// from `key_file` when given.
    pub fn signer(&self, name_or_address: &str, key_file: Option<&Path>) -> Result<(Participant, SecretKey)> {
        let (name, participant) = self.identity(name_or_address)?;
        let path = key_file.map_or_else(|| self.dir.join("keys").join(format!("{name}.key")), Path::to_owned);
        let bytes = match read_secret(&path) {
            Ok(b) => b,
            Err(NodeError::Io(e)) if e.kind() == std::io::ErrorKind::NotFound => return Err(NodeError::MissingKey(name)),
            Err(e) => return Err(e),
        };
        let key = SecretKey::from_bytes(&bytes)?;
        if key.public_key() != participant.public_key {
            return Err(NodeError::MissingKey(name));
        }
        Ok((participant, key))
    }

    /// Opens the node, writing the genesis block from the current roster
    /// if the chain does not exist yet.
    pub fn open_node(&self, now: u64) -> Result<LocalNode> {
        let orderer = self.signer(ORDERER_NAME, None)?;
        let fresh = !self.chain_exists();
        let mut chain = Chain::open(&self.chain_dir())?;
        if fresh {
            let roster = self
                .identities()?
                .iter()
                .map(|f| Certificate::from_base64(&f.certificate))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            let genesis = Block::genesis(
                Genesis {
                    chain_id: self.config.chain_id.clone(),
                    ca_root: self.ca()?.root_public_key(),
                    orderer: orderer.0.address,
                    roster,
                    policy: self.config.policy,
                    timestamp: now,
                },
                &orderer.1,
            );
            chain.append_block(genesis)?;
        }
        Ok(LocalNode { deployment: self.clone(), chain, orderer })
    }
}

fn write_secret(path: &Path, bytes: &[u8; 32]) -> Result<()> {
    fs::write(path, hex::encode(bytes) + "\n")?;
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        fs::set_permissions(path, fs::Permissions::from_mode(0o600))?;
    }
    Ok(())
}

fn read_secret(path: &Path) -> Result<Vec<u8>> {
    let text = fs::read_to_string(path)?;
    hex::decode(text.trim()).map_err(|_| NodeError::Config(format!("{} is not a hex key", path.display())))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Receipt {
    pub tx_id: Digest,
    pub height: u64,
    /// False when the transaction was already on the chain.
    pub fresh: bool,
}

pub struct LocalNode {
    deployment: Deployment,
    chain: Chain,
    orderer: (Participant, SecretKey),
}

impl std::fmt::Debug for LocalNode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LocalNode")
            .field("dir", &self.deployment.dir)
            .field("height", &self.chain.len())
            .finish_non_exhaustive()
    }
}

impl LocalNode {
    pub fn deployment(&self) -> &Deployment {
        &self.deployment
    }

    pub fn chain(&self) -> &Chain {
        &self.chain
    }

    pub fn state(&self) -> &WorldState {
        self.chain.state()
    }

    /// The evidence database of `isp`. With a deployment seed, nonces are
    /// drawn from a stream keyed by the seed, the ISP and the item count.
    pub fn evidence_store(&self, isp: &Address) -> Result<EvidenceStore> {
        let mut store = EvidenceStore::open(self.deployment.evdb_dir(isp), self.deployment.config.evidence)?;
        if let Some(seed) = self.deployment.config.seed {
            let count = store.list()?.len();
            let material = sha256(format!("nonce/{seed}/{isp}/{count}").as_bytes());
            store.set_nonce_source(NonceSource::Seeded(Box::new(ChaCha20Rng::from_seed(*material.as_bytes()))));
        }
        Ok(store)
    }

    /// Orders `txs` into one block. Transactions already on the chain are
    /// answered with their existing location; if any new one is invalid the
    /// whole batch is refused and nothing is written.
    pub fn commit(&mut self, txs: Vec<Transaction>, now: u64) -> Result<Vec<Receipt>> {
        let ts = now.max(self.chain.tip().map_or(0, |b| b.timestamp));
        let state = self.chain.state();
        let anchor = state.anchor.ok_or(ChaincodeError::NotInitialized)?;
        let mut scratch = state.clone();
        let mut fresh = Vec::new();
        let mut receipts = Vec::with_capacity(txs.len());
        for tx in txs {
            if let Some((block, _)) = self.chain.find_tx(&tx.tx_id) {
                receipts.push(Receipt { tx_id: tx.tx_id, height: block.height, fresh: false });
                continue;
            }
            if fresh.iter().any(|t: &Transaction| t.tx_id == tx.tx_id) {
                continue;
            }
            if tx.kind == TxKind::Genesis || !tx.is_well_formed() {
                return Err(NodeError::Malformed);
            }
            let cert = scratch.participants.get(&tx.submitter).ok_or(ChaincodeError::UnknownParticipant)?;
            if !anchor.verify(cert, &tx.signed_bytes(), &tx.submitter_signature, ts) {
                return Err(NodeError::BadSignature);
            }
            chaincode::apply(&mut scratch, &tx, ts)?;
            receipts.push(Receipt { tx_id: tx.tx_id, height: self.chain.len(), fresh: true });
            fresh.push(tx);
        }
        if fresh.is_empty() {
            return Ok(receipts);
        }
        let block = Block::seal(self.chain.len(), self.chain.tip_hash(), ts, fresh, self.orderer.0.address, &self.orderer.1);
        self.chain.append_block(block.clone())?;
        for tx in &block.txs {
            if let Proposal::Erase(e) = &tx.proposal {
                self.erase_payload(&e.id, &tx.submitter, ts)?;
            }
        }
        Ok(receipts)
    }

    pub fn submit(&mut self, tx: Transaction, now: u64) -> Result<Receipt> {
        Ok(self.commit(vec![tx], now)?.remove(0))
    }

    /// Destroys the off-chain payload behind a committed ERASE.
    fn erase_payload(&self, id: &Digest, submitter: &Address, now: u64) -> Result<()> {
        let creator = self.chain.state().record(id).map(|r| r.creator).unwrap_or(*submitter);
        let mut store = self.evidence_store(&creator)?;
        if !store.contains(id) {
            return Ok(());
        }
        let caller = self.chain.state().participant(submitter).ok_or(ChaincodeError::UnknownParticipant)?;
        match store.erase(id, &caller, now) {
            Ok(_) | Err(EvidenceError::AlreadyErased) => Ok(()),
            Err(e) => Err(e.into()),
        }
    }

    /// Owner-only payload retrieval from the creating ISP's database.
    pub fn fetch_payload(&self, caller: &Address, id: &Digest) -> Result<Evidence> {
        let state = self.chain.state();
        let record = state.record(id).ok_or(ChaincodeError::NotFound)?;
        if state.is_erased(id) {
            return Err(ChaincodeError::Erased.into());
        }
        if record.own != *caller {
            return Err(ChaincodeError::PermissionDenied.into());
        }
        Ok(self.evidence_store(&record.creator)?.fetch(id)?)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestedIncident {
    pub evidence_id: Digest,
    pub incident: IncidentDescriptor,
    pub payload_len: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub incidents: Vec<IngestedIncident>,
    pub devices_registered: usize,
    pub block_height: Option<u64>,
}

/// Firmware and configuration fingerprints a simulated device reports.
pub fn simulated_device_state(device_id: &str, seed: u64) -> (Digest, Digest) {
    (
        sha256(format!("firmware/{device_id}/{seed}").as_bytes()),
        sha256(format!("config/{device_id}/{seed}").as_bytes()),
    )
}

/// Stores every incident payload in `isp`'s evidence database, registers
/// the simulated devices and commits the CREATE and DEVICE_REGISTER
/// transactions in one block.
pub fn ingest_scenario(
    node: &mut LocalNode,
    isp: &Participant,
    key: &SecretKey,
    outcome: &ScenarioOutcome,
    now: u64,
) -> Result<IngestReport> {
    let state = node.state().clone();
    let anchor = state.anchor.ok_or(ChaincodeError::NotInitialized)?;
    let cert = state.participants.get(&isp.address).ok_or(ChaincodeError::UnknownParticipant)?.clone();
    if !chaincode::PermissionMatrix::new(state.policy).may_create(isp.role) {
        return Err(ChaincodeError::PermissionDenied.into());
    }
    let mut txs = Vec::new();
    let mut registered = 0;
    for device in &outcome.devices {
        let id = &device.spec.id;
        if state.devices.contains_key(id) {
            continue;
        }
        let (fw, cfg) = simulated_device_state(id, outcome.seed);
        txs.push(chaincode::register_device_state(&state, isp, key, id, fw, cfg, now)?);
        registered += 1;
    }
    let mut store = node.evidence_store(&isp.address)?;
    let mut incidents = Vec::new();
    for emitted in &outcome.incidents {
        let event = store.ev_gen(isp, key, &emitted.payload, &emitted.descriptor, now)?;
        let proposal = tx_gen(&event, &cert, &anchor, &emitted.descriptor)?;
        txs.push(proposal.sign(isp.address, key));
        incidents.push(IngestedIncident {
            evidence_id: event.id,
            incident: emitted.descriptor.clone(),
            payload_len: emitted.payload.len(),
        });
    }
    let block_height = if txs.is_empty() {
        None
    } else {
        node.commit(txs, now)?.first().map(|r| r.height)
    };
    Ok(IngestReport { incidents, devices_registered: registered, block_height })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::collection::{run_scenario, DeviceSpec, ScenarioSpec, Service};

    const NOW: u64 = 1_700_000_000;

    fn setup() -> (tempfile::TempDir, Deployment) {
        let dir = tempfile::tempdir().unwrap();
        let d = Deployment::init(dir.path(), DeploymentConfig::new("test", Some(3)), NOW).unwrap();
        for (n, r) in [("isp1", Role::Isp), ("lea1", Role::Lea), ("pros1", Role::Prosecutor)] {
            d.enroll(n, r, NOW).unwrap();
        }
        (dir, d)
    }

    fn scenario() -> ScenarioSpec {
        let devices = (0..4)
            .map(|i| DeviceSpec {
                id: format!("d{i}"),
                device_type: "camera".into(),
                services: [Service::Telnet].into(),
                default_credentials: true,
                vulnerable_firmware: false,
                sda: false,
            })
            .collect();
        ScenarioSpec {
            seed: None,
            start_time: NOW,
            duration_secs: 1800,
            patient_zero: "d0".into(),
            devices,
            links: vec![],
            thresholds: Default::default(),
            timing: Default::default(),
        }
    }

    #[test]
    fn lifecycle_through_local_node() {
        let (_dir, d) = setup();
        let mut node = d.open_node(NOW).unwrap();
        assert!(matches!(d.enroll("late", Role::Lea, NOW), Err(NodeError::RosterFrozen)));
        let (isp, isp_key) = d.signer("isp1", None).unwrap();
        let (lea, lea_key) = d.signer("lea1", None).unwrap();
        let outcome = run_scenario(&scenario(), 42).unwrap();
        let report = ingest_scenario(&mut node, &isp, &isp_key, &outcome, NOW + 10).unwrap();
        assert!(!report.incidents.is_empty());
        let id = report.incidents[0].evidence_id;

        let t = chaincode::transfer_ownership(node.state(), &isp, &isp_key, id, lea.address, None, NOW + 20).unwrap();
        let r1 = node.submit(t.clone(), NOW + 20).unwrap();
        let r2 = node.submit(t, NOW + 30).unwrap();
        assert!(r1.fresh && !r2.fresh);
        assert_eq!(r1.height, r2.height);

        assert!(matches!(node.fetch_payload(&isp.address, &id), Err(NodeError::Chaincode(ChaincodeError::PermissionDenied))));
        let ev = node.fetch_payload(&lea.address, &id).unwrap();
        assert_eq!(ev.recompute_id(d.config.evidence.hash), id);

        let other = report.incidents[1].evidence_id;
        let erase = chaincode::erase_evidence(node.state(), &isp, &isp_key, other, NOW + 40).unwrap();
        node.submit(erase, NOW + 40).unwrap();
        assert!(matches!(node.fetch_payload(&isp.address, &other), Err(NodeError::Chaincode(ChaincodeError::Erased))));
        assert!(matches!(node.evidence_store(&isp.address).unwrap().fetch(&other), Err(EvidenceError::Erased)));
        assert!(node.chain().verify().valid);
        let _ = lea_key;

        let height = node.chain().len();
        drop(node);
        let reopened = d.open_node(NOW + 50).unwrap();
        assert_eq!(reopened.chain().len(), height);
        assert!(reopened.state().is_erased(&other));
    }

    #[test]
    fn invalid_batch_writes_nothing() {
        let (_dir, d) = setup();
        let mut node = d.open_node(NOW).unwrap();
        let (lea, lea_key) = d.signer("lea1", None).unwrap();
        let bad = Proposal::Erase(crate::ledger::EraseEvidence { id: Digest::ZERO, timestamp: NOW }).sign(lea.address, &lea_key);
        let before = node.chain().len();
        assert!(matches!(node.submit(bad, NOW), Err(NodeError::Chaincode(ChaincodeError::NotFound))));
        assert_eq!(node.chain().len(), before);
    }

    #[test]
    fn missing_key_maps_to_permission_denied() {
        let (dir, d) = setup();
        fs::remove_file(dir.path().join("keys").join("lea1.key")).unwrap();
        let err = d.signer("lea1", None).unwrap_err();
        assert_eq!(err.code(), "PermissionDenied");
        assert!(matches!(d.signer("nobody", None), Err(NodeError::UnknownIdentity(_))));
    }

    #[test]
    fn seeded_deployments_are_reproducible() {
        let run = || {
            let (dir, d) = setup();
            let mut node = d.open_node(NOW).unwrap();
            let (isp, key) = d.signer("isp1", None).unwrap();
            let outcome = run_scenario(&scenario(), 42).unwrap();
            ingest_scenario(&mut node, &isp, &key, &outcome, NOW).unwrap();
            let tip = node.chain().tip_hash();
            drop(dir);
            tip
        };
        assert_eq!(run(), run());
    }
}
