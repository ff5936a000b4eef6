//! The `ctb` operator tool. Each subcommand maps onto one core operation
//! and yields an [`Output`] holding both renderings, so `main` only picks
//! the format and the exit status.

mod text;

use std::collections::BTreeMap;
use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use ctb_core::chaincode::{self, ChaincodeError, VerificationResult};
use ctb_core::collection::{run_scenario, AttackKind, IncidentDescriptor, Infection, ScenarioSpec, SpecError};
use ctb_core::evidence::{tx_gen, EvidenceError};
use ctb_core::hash::{Digest, HashAlg};
use ctb_core::identity::{Address, Participant, Role, SecretKey};
use ctb_core::ledger::{
    verify_store, DeviceState, EraseEvidence, LedgerError, MetadataAccess, Proposal, TransferOwnership, VerificationReport,
};
use ctb_core::network::{run_network_scenario, NetError, NetworkReport, NetworkSpec};
use ctb_core::node::{ingest_scenario, Deployment, DeploymentConfig, IdentityFile, LocalNode, NodeError, Receipt};
use ctb_explorer::views::{BlockView, ChainSummary, DeviceView, EvidenceDoc, EvidenceRow, InvokeResponse, TrailView};
use ctb_explorer::{ApiConfig, AppState};
use serde::{Deserialize, Serialize};

pub const DEFAULT_DATA_DIR: &str = "ctb-data";
pub const DEFAULT_BIND: &str = "127.0.0.1:7050";

#[derive(Debug, Parser)]
#[command(name = "ctb", version, about = "Operator tool for the evidence-custody ledger")]
pub struct Cli {
    /// Deployment directory (CA, identities, keys, chain, evidence databases).
    #[arg(long, global = true, env = "CTB_DATA_DIR")]
    pub data_dir: Option<PathBuf>,
    /// Node configuration file.
    #[arg(long, global = true, env = "CTB_CONFIG")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = OutputFormat::Text)]
    pub output: OutputFormat,
    /// Use this unix time (seconds) instead of the system clock.
    #[arg(long, global = true, env = "CTB_CLOCK")]
    pub clock: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    Text,
    /// Pretty JSON with the same schema as the HTTP API.
    Structured,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Certificate authority and deployment setup.
    #[command(subcommand)]
    Ca(CaCommand),
    /// Issue a key and certificate for a new participant.
    Enroll(EnrollArgs),
    #[command(subcommand)]
    Node(NodeCommand),
    #[command(subcommand)]
    Scenario(ScenarioCommand),
    #[command(subcommand)]
    Network(NetworkCommand),
    #[command(subcommand)]
    Evidence(EvidenceCommand),
    #[command(subcommand)]
    Device(DeviceCommand),
    #[command(subcommand)]
    Chain(ChainCommand),
    #[command(subcommand)]
    Trail(TrailCommand),
    #[command(subcommand)]
    Explorer(ExplorerCommand),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum RoleArg {
    Isp,
    Lea,
    Prosecutor,
}

impl From<RoleArg> for Role {
    fn from(r: RoleArg) -> Self {
        match r {
            RoleArg::Isp => Role::Isp,
            RoleArg::Lea => Role::Lea,
            RoleArg::Prosecutor => Role::Prosecutor,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum HashArg {
    Sha256,
    #[value(name = "sha3-256")]
    Sha3_256,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum AccessArg {
    Investigators,
    OwnerOnly,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum AttackArg {
    Mitm,
    Ddos,
    Spam,
    Propagation,
    Rallying,
}

impl From<AttackArg> for AttackKind {
    fn from(a: AttackArg) -> Self {
        match a {
            AttackArg::Mitm => AttackKind::Mitm,
            AttackArg::Ddos => AttackKind::Ddos,
            AttackArg::Spam => AttackKind::Spam,
            AttackArg::Propagation => AttackKind::Propagation,
            AttackArg::Rallying => AttackKind::Rallying,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum CaCommand {
    /// Create the CA, the deployment config and the orderer identity.
    Init(CaInitArgs),
    /// List enrolled identities.
    Roster,
}

#[derive(Debug, Args)]
pub struct CaInitArgs {
    #[arg(long, default_value = "ctb")]
    pub chain_id: String,
    /// Derive every key and nonce from this seed (tests and demos only).
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum, default_value_t = HashArg::Sha256)]
    pub hash: HashArg,
    #[arg(long, value_enum, default_value_t = AccessArg::Investigators)]
    pub metadata_access: AccessArg,
    #[arg(long)]
    pub allow_prosecutor_transfer: bool,
    #[arg(long)]
    pub allow_isp_transfer: bool,
    #[arg(long)]
    pub cert_validity_secs: Option<u64>,
}

#[derive(Debug, Args)]
pub struct EnrollArgs {
    #[arg(long, value_enum)]
    pub role: RoleArg,
    #[arg(long)]
    pub name: String,
}

/// Who signs: an enrolled name or address, plus an optional key file.
#[derive(Debug, Clone, Args)]
pub struct Signer {
    #[arg(long = "as", value_name = "IDENTITY")]
    pub as_: String,
    /// Signing key file; defaults to the deployment's key store.
    #[arg(long)]
    pub key: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum NodeCommand {
    /// Open the node (writing genesis on first start) and serve the API.
    Start {
        #[arg(long)]
        bind: Option<String>,
        /// Open the node and report its state without serving.
        #[arg(long)]
        dry_run: bool,
    },
}

#[derive(Debug, Subcommand)]
pub enum ScenarioCommand {
    /// Run the smart-home attack simulation. With `--as`, the detected
    /// incidents are stored and committed as evidence by that ISP.
    Run {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long = "as", value_name = "ISP")]
        as_: Option<String>,
        #[arg(long)]
        key: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
pub enum NetworkCommand {
    /// Run a multi-node simulation with fault injection and report the
    /// consistency checks.
    Run {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Debug, Subcommand)]
pub enum EvidenceCommand {
    /// Store a payload in the ISP's evidence database and commit its CREATE.
    Create {
        #[command(flatten)]
        signer: Signer,
        #[arg(long)]
        payload: PathBuf,
        #[arg(long, value_enum)]
        kind: AttackArg,
        #[arg(long)]
        source: String,
        #[arg(long)]
        target: String,
        #[arg(long)]
        device_type: String,
        /// Incident time; defaults to now.
        #[arg(long)]
        tm: Option<u64>,
        #[arg(long, default_value = "")]
        summary: String,
    },
    /// Owner retrieval: commits an ACCESS record, fetches the payload and
    /// checks it against its id.
    Get {
        #[arg(long)]
        id: Digest,
        #[command(flatten)]
        signer: Signer,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// On-chain metadata.
    Show {
        #[arg(long)]
        id: Digest,
        #[arg(long = "as", value_name = "IDENTITY")]
        as_: String,
    },
    Transfer {
        #[arg(long)]
        id: Digest,
        #[command(flatten)]
        signer: Signer,
        #[arg(long)]
        to: String,
        #[arg(long)]
        dsc: Option<String>,
    },
    Erase {
        #[arg(long)]
        id: Digest,
        #[command(flatten)]
        signer: Signer,
    },
    /// Evidence visible to the caller.
    List {
        #[arg(long = "as", value_name = "IDENTITY")]
        as_: String,
    },
}

#[derive(Debug, Subcommand)]
pub enum DeviceCommand {
    Register {
        #[command(flatten)]
        signer: Signer,
        #[arg(long)]
        device_id: String,
        #[arg(long)]
        firmware: Digest,
        #[arg(long = "config-hash")]
        config_hash: Digest,
    },
    /// Compare a reported state with the registered history and record the
    /// check on-chain.
    Verify {
        #[command(flatten)]
        signer: Signer,
        #[arg(long)]
        device_id: String,
        #[arg(long)]
        firmware: Digest,
        #[arg(long = "config-hash")]
        config_hash: Digest,
    },
    Show {
        #[arg(long)]
        device_id: String,
    },
}

#[derive(Debug, Subcommand)]
pub enum ChainCommand {
    /// Verify the on-disk block store; exits nonzero on the first bad block.
    Verify,
    /// Chain summary, or one block with `--height` (a number or `latest`).
    Show {
        #[arg(long)]
        height: Option<String>,
    },
}

#[derive(Debug, Subcommand)]
pub enum TrailCommand {
    Show {
        #[arg(long)]
        id: Digest,
        #[arg(long = "as", value_name = "IDENTITY")]
        as_: String,
    },
}

#[derive(Debug, Subcommand)]
pub enum ExplorerCommand {
    Serve {
        #[arg(long)]
        bind: Option<String>,
    },
}

/// Machine-readable failure, printed to stderr as JSON.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CliError {
    pub code: String,
    pub message: String,
}

impl CliError {
    pub fn new(code: &str, message: impl Into<String>) -> Self {
        Self { code: code.to_owned(), message: message.into() }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("plain strings serialize")
    }
}

impl From<NodeError> for CliError {
    fn from(e: NodeError) -> Self {
        Self::new(e.code(), e.to_string())
    }
}

impl From<ChaincodeError> for CliError {
    fn from(e: ChaincodeError) -> Self {
        Self::new(e.code(), e.to_string())
    }
}

impl From<EvidenceError> for CliError {
    fn from(e: EvidenceError) -> Self {
        Self::new(e.code(), e.to_string())
    }
}

impl From<LedgerError> for CliError {
    fn from(e: LedgerError) -> Self {
        NodeError::from(e).into()
    }
}

impl From<SpecError> for CliError {
    fn from(e: SpecError) -> Self {
        Self::new("InvalidSpec", e.to_string())
    }
}

impl From<NetError> for CliError {
    fn from(e: NetError) -> Self {
        Self::new("InvalidSpec", e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::new("IoError", e.to_string())
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

type Deferred = Box<dyn FnOnce() -> Result<()>>;

/// Both renderings of a command result. `failure` marks results that are
/// printed but still end in a nonzero exit; `then` runs after printing
/// (long-lived servers).
pub struct Output {
    pub structured: String,
    pub text: String,
    pub failure: Option<CliError>,
    pub then: Option<Deferred>,
}

impl Output {
    fn new<T: Serialize>(value: &T, text: String) -> Self {
        let mut structured = serde_json::to_string_pretty(value).expect("views serialize");
        structured.push('\n');
        Self { structured, text, failure: None, then: None }
    }

    pub fn render(&self, format: OutputFormat) -> &str {
        match format {
            OutputFormat::Text => &self.text,
            OutputFormat::Structured => &self.structured,
        }
    }
}

/// Node configuration file. Relative paths are taken from the file's
/// directory.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NodeFileConfig {
    pub data_dir: Option<PathBuf>,
    pub bind: Option<String>,
    /// Directory holding `<name>.key` signing keys, for operators who keep
    /// keys outside the deployment.
    pub key_dir: Option<PathBuf>,
    pub session_ttl_secs: Option<u64>,
    pub challenge_ttl_secs: Option<u64>,
}

impl NodeFileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::new("ConfigError", format!("{}: {e}", path.display())))?;
        let mut config: Self =
            toml::from_str(&text).map_err(|e| CliError::new("ConfigError", format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut config.data_dir, &mut config.key_dir].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(config)
    }
}

struct Ctx {
    data_dir: PathBuf,
    config: NodeFileConfig,
    fixed_clock: Option<u64>,
}

impl Ctx {
    fn now(&self) -> u64 {
        self.fixed_clock.unwrap_or_else(|| {
            std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map_or(0, |d| d.as_secs())
        })
    }

    fn deployment(&self) -> Result<Deployment> {
        Ok(Deployment::open(&self.data_dir)?)
    }

    fn node(&self) -> Result<LocalNode> {
        Ok(self.deployment()?.open_node(self.now())?)
    }

    fn signer(&self, d: &Deployment, s: &Signer) -> Result<(Participant, SecretKey)> {
        let key_file = match (&s.key, &self.config.key_dir) {
            (Some(k), _) => Some(k.clone()),
            (None, Some(dir)) => Some(dir.join(format!("{}.key", d.identity(&s.as_)?.0))),
            (None, None) => None,
        };
        Ok(d.signer(&s.as_, key_file.as_deref())?)
    }

    fn api_config(&self) -> ApiConfig {
        let default = ApiConfig::default();
        ApiConfig {
            session_ttl_secs: self.config.session_ttl_secs.unwrap_or(default.session_ttl_secs),
            challenge_ttl_secs: self.config.challenge_ttl_secs.unwrap_or(default.challenge_ttl_secs),
        }
    }

    fn bind(&self, flag: Option<&String>) -> Result<SocketAddr> {
        let text = flag.or(self.config.bind.as_ref()).map_or(DEFAULT_BIND, String::as_str);
        text.parse().map_err(|_| CliError::new("ConfigError", format!("`{text}` is not a socket address")))
    }
}

/// Names addresses in text output.
struct Names(BTreeMap<Address, String>);

impl Names {
    fn load(d: &Deployment) -> Self {
        Self(d.identities().unwrap_or_default().into_iter().map(|f| (f.address, f.name)).collect())
    }

    fn show(&self, a: &Address) -> String {
        match self.0.get(a) {
            Some(n) => format!("{n} ({a})"),
            None => a.to_string(),
        }
    }
}

pub fn run(cli: Cli) -> Result<Output> {
    let config = cli.config.as_deref().map(NodeFileConfig::load).transpose()?.unwrap_or_default();
    let data_dir = cli
        .data_dir
        .clone()
        .or_else(|| config.data_dir.clone())
        .unwrap_or_else(|| PathBuf::from(DEFAULT_DATA_DIR));
    let ctx = Ctx { data_dir, config, fixed_clock: cli.clock };
    match cli.command {
        Command::Ca(CaCommand::Init(args)) => ca_init(&ctx, args),
        Command::Ca(CaCommand::Roster) => roster(&ctx),
        Command::Enroll(args) => enroll(&ctx, args),
        Command::Node(NodeCommand::Start { bind, dry_run }) => node_start(&ctx, bind, dry_run),
        Command::Scenario(ScenarioCommand::Run { spec, seed, as_, key }) => scenario_run(&ctx, &spec, seed, as_, key),
        Command::Network(NetworkCommand::Run { spec, seed }) => network_run(&spec, seed),
        Command::Evidence(cmd) => evidence(&ctx, cmd),
        Command::Device(cmd) => device(&ctx, cmd),
        Command::Chain(ChainCommand::Verify) => chain_verify(&ctx),
        Command::Chain(ChainCommand::Show { height }) => chain_show(&ctx, height),
        Command::Trail(TrailCommand::Show { id, as_ }) => trail_show(&ctx, id, &as_),
        Command::Explorer(ExplorerCommand::Serve { bind }) => explorer_serve(&ctx, bind),
    }
}

fn ca_init(ctx: &Ctx, a: CaInitArgs) -> Result<Output> {
    let mut config = DeploymentConfig::new(a.chain_id, a.seed);
    config.evidence.hash = match a.hash {
        HashArg::Sha256 => HashAlg::Sha256,
        HashArg::Sha3_256 => HashAlg::Sha3_256,
    };
    config.policy.metadata_access = match a.metadata_access {
        AccessArg::Investigators => MetadataAccess::Investigators,
        AccessArg::OwnerOnly => MetadataAccess::OwnerOnly,
    };
    config.policy.allow_prosecutor_transfer = a.allow_prosecutor_transfer;
    config.policy.allow_isp_transfer = a.allow_isp_transfer;
    if let Some(v) = a.cert_validity_secs {
        config.cert_validity_secs = v;
    }
    let d = Deployment::init(&ctx.data_dir, config, ctx.now())?;
    let text = format!("initialized deployment `{}` at {}\n", d.config.chain_id, d.dir().display());
    Ok(Output::new(&d.config, text))
}

fn roster(ctx: &Ctx) -> Result<Output> {
    let ids = ctx.deployment()?.identities()?;
    let text = text::roster(&ids);
    Ok(Output::new(&ids, text))
}

fn enroll(ctx: &Ctx, a: EnrollArgs) -> Result<Output> {
    let d = ctx.deployment()?;
    d.enroll(&a.name, a.role.into(), ctx.now())?;
    let file: IdentityFile = d.identities()?.into_iter().find(|f| f.name == a.name).expect("just enrolled");
    let text = format!("enrolled {} as {} with address {}\n", file.name, file.role, file.address);
    Ok(Output::new(&file, text))
}

fn summary_of(node: &LocalNode) -> ChainSummary {
    let chain = node.chain();
    ChainSummary::new(chain.state(), chain.len(), chain.tip_hash())
}

fn serve_later(ctx: &Ctx, node: LocalNode, addr: SocketAddr) -> Deferred {
    let clock = match ctx.fixed_clock {
        Some(t) => ctb_explorer::fixed_clock(t),
        None => ctb_explorer::system_clock(),
    };
    let state = AppState::new(node, ctx.api_config(), clock);
    Box::new(move || {
        let runtime = tokio::runtime::Runtime::new()?;
        runtime.block_on(ctb_explorer::serve(addr, state))?;
        Ok(())
    })
}

fn node_start(ctx: &Ctx, bind: Option<String>, dry_run: bool) -> Result<Output> {
    let node = ctx.node()?;
    let addr = ctx.bind(bind.as_ref())?;
    let summary = summary_of(&node);
    let mut text = text::chain_summary(&summary);
    if !dry_run {
        text.push_str(&format!("serving on http://{addr}\n"));
    }
    let mut out = Output::new(&summary, text);
    if !dry_run {
        out.then = Some(serve_later(ctx, node, addr));
    }
    Ok(out)
}

fn explorer_serve(ctx: &Ctx, bind: Option<String>) -> Result<Output> {
    let node = ctx.node()?;
    let addr = ctx.bind(bind.as_ref())?;
    let mut out = Output::new(&summary_of(&node), format!("serving on http://{addr}\n"));
    out.then = Some(serve_later(ctx, node, addr));
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioSummary {
    pub seed: u64,
    pub devices: usize,
    pub vulnerable: usize,
    pub infected: usize,
    pub traffic_events: usize,
    pub incidents: BTreeMap<AttackKind, usize>,
    pub infections: Vec<Infection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ingest: Option<IngestSummary>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub isp: Address,
    pub block_height: Option<u64>,
    pub devices_registered: usize,
    pub evidence: Vec<IngestedEvidence>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestedEvidence {
    pub id: Digest,
    pub attack_kind: AttackKind,
    pub source_device: String,
    pub device_type: String,
    pub payload_len: usize,
}

fn scenario_run(ctx: &Ctx, spec: &Path, seed: Option<u64>, as_: Option<String>, key: Option<PathBuf>) -> Result<Output> {
    let spec = ScenarioSpec::load(spec)?;
    let seed = seed
        .or(spec.seed)
        .ok_or_else(|| CliError::new("InvalidSpec", "no seed given and the spec sets none"))?;
    let outcome = run_scenario(&spec, seed)?;
    let mut incidents = BTreeMap::new();
    for i in &outcome.incidents {
        *incidents.entry(i.descriptor.attack_kind).or_insert(0) += 1;
    }
    let ingest = match as_ {
        None => None,
        Some(as_) => {
            let d = ctx.deployment()?;
            let (isp, key) = ctx.signer(&d, &Signer { as_, key })?;
            let mut node = d.open_node(ctx.now())?;
            let report = ingest_scenario(&mut node, &isp, &key, &outcome, ctx.now())?;
            Some(IngestSummary {
                isp: isp.address,
                block_height: report.block_height,
                devices_registered: report.devices_registered,
                evidence: report
                    .incidents
                    .iter()
                    .map(|i| IngestedEvidence {
                        id: i.evidence_id,
                        attack_kind: i.incident.attack_kind,
                        source_device: i.incident.source_device.clone(),
                        device_type: i.incident.device_type.clone(),
                        payload_len: i.payload_len,
                    })
                    .collect(),
            })
        }
    };
    let summary = ScenarioSummary {
        seed,
        devices: outcome.devices.len(),
        vulnerable: outcome.devices.iter().filter(|d| d.spec.is_vulnerable()).count(),
        infected: outcome.devices.iter().filter(|d| d.infected).count(),
        traffic_events: outcome.traffic_events,
        incidents,
        infections: outcome.infections.clone(),
        ingest,
    };
    let text = text::scenario(&summary);
    Ok(Output::new(&summary, text))
}

fn network_run(spec: &Path, seed: Option<u64>) -> Result<Output> {
    let mut spec = NetworkSpec::load(spec)?;
    if let Some(seed) = seed {
        spec.seed = seed;
    }
    let report: NetworkReport = run_network_scenario(&spec)?;
    let mut out = Output::new(&report, text::network(&report));
    if !report.passed() {
        out.failure = Some(CliError::new("NetworkCheckFailed", "consistency checks failed; see report"));
    }
    Ok(out)
}

// Invoke commands sign the proposal as given and leave every check to the
// commit path, so an identical resubmission is answered as already
// committed instead of failing a stale client-side pre-check.
fn receipt_output(r: &Receipt, what: &str) -> Output {
    let resp = InvokeResponse { tx_id: r.tx_id, status: "COMMITTED".into(), block_height: r.height, fresh: r.fresh };
    let text = text::receipt(what, &resp);
    Output::new(&resp, text)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CreateResponse {
    pub evidence_id: Digest,
    pub tx_id: Digest,
    pub status: String,
    pub block_height: u64,
    pub fresh: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GetResponse {
    pub id: Digest,
    pub access_tx_id: Digest,
    pub block_height: u64,
    pub payload_len: usize,
    pub nonce: String,
    pub hash: HashAlg,
    /// The id recomputed from payload, signature and nonce matched.
    pub verified: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

fn evidence(ctx: &Ctx, cmd: EvidenceCommand) -> Result<Output> {
    let d = ctx.deployment()?;
    let now = ctx.now();
    match cmd {
        EvidenceCommand::Create { signer, payload, kind, source, target, device_type, tm, summary } => {
            let (isp, key) = ctx.signer(&d, &signer)?;
            let mut node = d.open_node(now)?;
            let state = node.state().clone();
            let anchor = state.anchor.ok_or(ChaincodeError::NotInitialized)?;
            let cert = state.participants.get(&isp.address).ok_or(ChaincodeError::UnknownParticipant)?.clone();
            if !chaincode::PermissionMatrix::new(state.policy).may_create(isp.role) {
                return Err(ChaincodeError::PermissionDenied.into());
            }
            let bytes = fs::read(&payload)?;
            let incident = IncidentDescriptor {
                attack_kind: kind.into(),
                source_device: source,
                target,
                tm: tm.unwrap_or(now),
                device_type,
                summary,
            };
            let event = node.evidence_store(&isp.address)?.ev_gen(&isp, &key, &bytes, &incident, now)?;
            let tx = tx_gen(&event, &cert, &anchor, &incident)?.sign(isp.address, &key);
            let r = node.submit(tx, now)?;
            let resp = CreateResponse {
                evidence_id: event.id,
                tx_id: r.tx_id,
                status: "COMMITTED".into(),
                block_height: r.height,
                fresh: r.fresh,
            };
            let text = format!("created evidence {} in tx {} at height {}\n", resp.evidence_id, resp.tx_id, resp.block_height);
            Ok(Output::new(&resp, text))
        }
        EvidenceCommand::Get { id, signer, out } => {
            let (caller, key) = ctx.signer(&d, &signer)?;
            let mut node = d.open_node(now)?;
            let (_, tx) = chaincode::get_evidence(node.state(), &caller, &key, id, now)?;
            let r = node.submit(tx, now)?;
            let ev = node.fetch_payload(&caller.address, &id)?;
            let hash = d.config.evidence.hash;
            if ev.recompute_id(hash) != id {
                return Err(CliError::new("IntegrityError", format!("payload does not hash to {id}")));
            }
            if let Some(path) = &out {
                fs::write(path, &ev.payload)?;
            }
            let resp = GetResponse {
                id,
                access_tx_id: r.tx_id,
                block_height: r.height,
                payload_len: ev.payload.len(),
                nonce: hex::encode(ev.nonce),
                hash,
                verified: true,
                out,
            };
            let text = text::get(&resp);
            Ok(Output::new(&resp, text))
        }
        EvidenceCommand::Show { id, as_ } => {
            let (_, caller) = d.identity(&as_)?;
            let node = d.open_node(now)?;
            let view = chaincode::query_metadata(node.state(), &caller, &id)?;
            let doc = EvidenceDoc::new(&view.record, view.erased);
            let text = text::evidence(&doc, &Names::load(&d));
            Ok(Output::new(&doc, text))
        }
        EvidenceCommand::Transfer { id, signer, to, dsc } => {
            let (owner, key) = ctx.signer(&d, &signer)?;
            let (_, recipient) = d.identity(&to)?;
            let mut node = d.open_node(now)?;
            let tx = Proposal::Transfer(TransferOwnership { id, new_owner: recipient.address, dsc_amendment: dsc, timestamp: now })
                .sign(owner.address, &key);
            Ok(receipt_output(&node.submit(tx, now)?, "transfer"))
        }
        EvidenceCommand::Erase { id, signer } => {
            let (isp, key) = ctx.signer(&d, &signer)?;
            let mut node = d.open_node(now)?;
            let tx = Proposal::Erase(EraseEvidence { id, timestamp: now }).sign(isp.address, &key);
            Ok(receipt_output(&node.submit(tx, now)?, "erase"))
        }
        EvidenceCommand::List { as_ } => {
            let (_, caller) = d.identity(&as_)?;
            let node = d.open_node(now)?;
            let state = node.state();
            let rows: Vec<EvidenceRow> = state
                .evidence
                .keys()
                .filter_map(|id| chaincode::query_metadata(state, &caller, id).ok())
                .map(|v| EvidenceRow { id: v.record.id, device_type: v.record.device_type, own: v.record.own, erased: v.erased })
                .collect();
            let text = text::evidence_list(&rows, &Names::load(&d));
            Ok(Output::new(&rows, text))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceCheck {
    pub device_id: String,
    pub result: VerificationResult,
    pub tx_id: Digest,
    pub block_height: u64,
    pub fresh: bool,
}

fn device(ctx: &Ctx, cmd: DeviceCommand) -> Result<Output> {
    let d = ctx.deployment()?;
    let now = ctx.now();
    match cmd {
        DeviceCommand::Register { signer, device_id, firmware, config_hash } => {
            let (isp, key) = ctx.signer(&d, &signer)?;
            let mut node = d.open_node(now)?;
            let state = DeviceState { device_id, firmware_hash: firmware, config_hash, timestamp: now };
            let tx = Proposal::DeviceRegister(state).sign(isp.address, &key);
            Ok(receipt_output(&node.submit(tx, now)?, "device registration"))
        }
        DeviceCommand::Verify { signer, device_id, firmware, config_hash } => {
            let (caller, key) = ctx.signer(&d, &signer)?;
            let mut node = d.open_node(now)?;
            let result = chaincode::verify_device_state(node.state(), &device_id, &firmware, &config_hash)?;
            let state = DeviceState { device_id: device_id.clone(), firmware_hash: firmware, config_hash, timestamp: now };
            let tx = Proposal::DeviceVerify(state).sign(caller.address, &key);
            let r = node.submit(tx, now)?;
            let check = DeviceCheck { device_id, result, tx_id: r.tx_id, block_height: r.height, fresh: r.fresh };
            let text = text::device_check(&check);
            Ok(Output::new(&check, text))
        }
        DeviceCommand::Show { device_id } => {
            let node = d.open_node(now)?;
            let history = node.state().devices.get(&device_id).cloned().ok_or(ChaincodeError::NotFound)?;
            let view = DeviceView { device_id, history };
            let text = text::device(&view, &Names::load(&d));
            Ok(Output::new(&view, text))
        }
    }
}

fn chain_verify(ctx: &Ctx) -> Result<Output> {
    let d = ctx.deployment()?;
    let report: VerificationReport = verify_store(&d.chain_dir())?;
    let mut out = Output::new(&report, text::verification(&report));
    if let Some(h) = report.first_failure {
        out.failure = Some(CliError::new("ChainInvalid", format!("verification failed at height {h}")));
    } else if report.block_count == 0 {
        out.failure = Some(CliError::new("NotInitialized", "the chain has no blocks"));
    }
    Ok(out)
}

fn chain_show(ctx: &Ctx, height: Option<String>) -> Result<Output> {
    let d = ctx.deployment()?;
    let node = d.open_node(ctx.now())?;
    let chain = node.chain();
    match height {
        None => {
            let summary = summary_of(&node);
            let text = text::chain_summary(&summary);
            Ok(Output::new(&summary, text))
        }
        Some(h) => {
            let block = if h == "latest" {
                chain.tip()
            } else {
                let h: u64 = h.parse().map_err(|_| CliError::new("InvalidInput", "height must be an integer or `latest`"))?;
                chain.block(h)
            }
            .ok_or_else(|| CliError::new("NotFound", "no block at that height"))?;
            let view = BlockView::from(block);
            let text = text::block(&view, &Names::load(&d));
            Ok(Output::new(&view, text))
        }
    }
}

fn trail_show(ctx: &Ctx, id: Digest, as_: &str) -> Result<Output> {
    let d = ctx.deployment()?;
    let (_, caller) = d.identity(as_)?;
    let node = d.open_node(ctx.now())?;
    chaincode::query_metadata(node.state(), &caller, &id)?;
    let trail = node.chain().custody_trail(&id).unwrap_or_default().to_vec();
    let view = TrailView { id, trail };
    let text = text::trail(&view, &Names::load(&d));
    Ok(Output::new(&view, text))
}
