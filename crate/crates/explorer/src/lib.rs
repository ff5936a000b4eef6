//! Query and invoke API over one local node.
//!
//! Clients authenticate by signing a server challenge with their enrolled
//! key and then send `Authorization: Bearer <token>`. The server never holds
//! client keys: invoke endpoints accept client-signed transactions and only
//! relay them into the node's serialized commit path.

pub mod views;

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex, RwLock};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine;
use ctb_core::chaincode::{self, ChaincodeError};
use ctb_core::codec::Canonical;
use ctb_core::evidence::EvidenceError;
use ctb_core::hash::Digest;
use ctb_core::identity::{Address, Participant, SignatureBytes};
use ctb_core::ledger::{verify_store, Transaction, TxKind};
use ctb_core::node::{LocalNode, NodeError};
use rand::RngCore;
use serde::{Deserialize, Serialize};

use views::*;

pub type Clock = Arc<dyn Fn() -> u64 + Send + Sync>;

pub fn system_clock() -> Clock {
    Arc::new(|| {
        std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map_or(0, |d| d.as_secs())
    })
}

pub fn fixed_clock(t: u64) -> Clock {
    Arc::new(move || t)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiConfig {
    pub session_ttl_secs: u64,
    pub challenge_ttl_secs: u64,
}

impl Default for ApiConfig {
    fn default() -> Self {
        Self { session_ttl_secs: 3_600, challenge_ttl_secs: 120 }
    }
}

#[derive(Debug, Clone)]
struct Session {
    address: Address,
    expires_at: u64,
}

pub struct AppState {
    node: RwLock<LocalNode>,
    sessions: Mutex<HashMap<String, Session>>,
    challenges: Mutex<HashMap<String, (Address, u64)>>,
    config: ApiConfig,
    clock: Clock,
}

impl AppState {
    pub fn new(node: LocalNode, config: ApiConfig, clock: Clock) -> Arc<Self> {
        Arc::new(Self {
            node: RwLock::new(node),
            sessions: Mutex::new(HashMap::new()),
            challenges: Mutex::new(HashMap::new()),
            config,
            clock,
        })
    }

    fn now(&self) -> u64 {
        (self.clock)()
    }

    fn node(&self) -> std::sync::RwLockReadGuard<'_, LocalNode> {
        self.node.read().unwrap_or_else(|e| e.into_inner())
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: String,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self { status, code: code.to_owned(), message: message.into() }
    }

    fn unauthorized(message: &str) -> Self {
        Self::new(StatusCode::UNAUTHORIZED, "Unauthorized", message)
    }

    fn bad_request(code: &str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, code, message)
    }

    fn not_found(what: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "NotFound", format!("{what} not found"))
    }
}

impl From<ChaincodeError> for ApiError {
    fn from(e: ChaincodeError) -> Self {
        let status = match e {
            ChaincodeError::NotFound => StatusCode::NOT_FOUND,
            ChaincodeError::Erased => StatusCode::GONE,
            ChaincodeError::InvalidInput(_) => StatusCode::BAD_REQUEST,
            _ => StatusCode::FORBIDDEN,
        };
        Self::new(status, e.code(), e.to_string())
    }
}

impl From<NodeError> for ApiError {
    fn from(e: NodeError) -> Self {
        match e {
            NodeError::Chaincode(c) => c.into(),
            NodeError::Evidence(EvidenceError::Erased) => Self::new(StatusCode::GONE, "Erased", e.to_string()),
            NodeError::Evidence(EvidenceError::NotFound) => Self::not_found("payload"),
            NodeError::BadSignature | NodeError::Malformed => Self::bad_request(e.code(), e.to_string()),
            _ => Self::new(StatusCode::INTERNAL_SERVER_ERROR, e.code(), e.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(ErrorBody { code: self.code, message: self.message })).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

fn parse_digest(s: &str) -> Result<Digest, ApiError> {
    s.parse().map_err(|_| ApiError::bad_request("Malformed", format!("`{s}` is not a 64-digit hex id")))
}

fn random_token() -> String {
    let mut bytes = [0u8; 32];
    rand::rngs::OsRng.fill_bytes(&mut bytes);
    hex::encode(bytes)
}

/// Resolves the bearer token to an enrolled participant with a current
/// certificate.
fn authenticate(state: &AppState, headers: &HeaderMap) -> Result<Participant, ApiError> {
    let token = headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "))
        .ok_or_else(|| ApiError::unauthorized("missing bearer token"))?;
    let now = state.now();
    let session = {
        let mut sessions = state.sessions.lock().unwrap_or_else(|e| e.into_inner());
        sessions.retain(|_, s| s.expires_at > now);
        sessions.get(token).cloned().ok_or_else(|| ApiError::unauthorized("unknown or expired token"))?
    };
    let node = state.node();
    let ledger = node.state();
    let participant = ledger
        .participant(&session.address)
        .ok_or_else(|| ApiError::unauthorized("participant not on the roster"))?;
    if !ledger.anchor.is_some_and(|a| a.certificate_valid(&participant.cert, now)) {
        return Err(ApiError::unauthorized("certificate not valid"));
    }
    Ok(participant)
}

async fn challenge(State(state): State<Arc<AppState>>, Json(req): Json<ChallengeRequest>) -> ApiResult<ChallengeResponse> {
    if state.node().state().participant(&req.address).is_none() {
        return Err(ApiError::unauthorized("participant not on the roster"));
    }
    let challenge = random_token();
    let expires_at = state.now() + state.config.challenge_ttl_secs;
    let mut challenges = state.challenges.lock().unwrap_or_else(|e| e.into_inner());
    let now = state.now();
    challenges.retain(|_, (_, exp)| *exp > now);
    challenges.insert(challenge.clone(), (req.address, expires_at));
    Ok(Json(ChallengeResponse { challenge, expires_at }))
}

async fn login(State(state): State<Arc<AppState>>, Json(req): Json<LoginRequest>) -> ApiResult<LoginResponse> {
    let now = state.now();
    let issued = state
        .challenges
        .lock()
        .unwrap_or_else(|e| e.into_inner())
        .remove(&req.challenge);
    match issued {
        Some((addr, exp)) if addr == req.address && exp > now => {}
        _ => return Err(ApiError::unauthorized("unknown, expired or foreign challenge")),
    }
    let signature = hex::decode(&req.signature)
        .map(SignatureBytes)
        .map_err(|_| ApiError::bad_request("Malformed", "signature is not hex"))?;
    let participant = {
        let node = state.node();
        let ledger = node.state();
        let participant = ledger
            .participant(&req.address)
            .ok_or_else(|| ApiError::unauthorized("participant not on the roster"))?;
        let anchor = ledger.anchor.ok_or_else(|| ApiError::unauthorized("ledger has no trust anchor"))?;
        if !anchor.verify(&participant.cert, &login_message(&req.challenge), &signature, now) {
            return Err(ApiError::unauthorized("challenge signature does not verify"));
        }
        participant
    };
    let token = random_token();
    let expires_at = now + state.config.session_ttl_secs;
    state
        .sessions
        .lock()
        .unwrap_or_else(|e| e.into_inner())
        .insert(token.clone(), Session { address: participant.address, expires_at });
    Ok(Json(LoginResponse { token, address: participant.address, role: participant.role, expires_at }))
}

async fn summary(State(state): State<Arc<AppState>>, headers: HeaderMap) -> ApiResult<ChainSummary> {
    authenticate(&state, &headers)?;
    let node = state.node();
    let chain = node.chain();
    Ok(Json(ChainSummary::new(chain.state(), chain.len(), chain.tip_hash())))
}

#[derive(Debug, Deserialize)]
struct Page {
    #[serde(default)]
    offset: u64,
    #[serde(default = "default_limit")]
    limit: u64,
}

fn default_limit() -> u64 {
    50
}

async fn blocks(State(state): State<Arc<AppState>>, headers: HeaderMap, Query(page): Query<Page>) -> ApiResult<Vec<BlockSummary>> {
    authenticate(&state, &headers)?;
    let node = state.node();
    let list = node
        .chain()
        .blocks()
        .iter()
        .skip(page.offset as usize)
        .take(page.limit.min(500) as usize)
        .map(BlockSummary::from)
        .collect();
    Ok(Json(list))
}

async fn block(State(state): State<Arc<AppState>>, headers: HeaderMap, Path(height): Path<String>) -> ApiResult<BlockView> {
    authenticate(&state, &headers)?;
    let node = state.node();
    let chain = node.chain();
    let block = if height == "latest" {
        chain.tip()
    } else {
        let h: u64 = height.parse().map_err(|_| ApiError::bad_request("Malformed", "height must be an integer"))?;
        chain.block(h)
    };
    block.map(|b| Json(BlockView::from(b))).ok_or_else(|| ApiError::not_found("block"))
}

async fn tx(State(state): State<Arc<AppState>>, headers: HeaderMap, Path(id): Path<String>) -> ApiResult<TxView> {
    authenticate(&state, &headers)?;
    let id = parse_digest(&id)?;
    let node = state.node();
    let (block, tx) = node.chain().find_tx(&id).ok_or_else(|| ApiError::not_found("transaction"))?;
    Ok(Json(TxView::new(tx, Some(block.height))))
}

async fn evidence_list(State(state): State<Arc<AppState>>, headers: HeaderMap) -> ApiResult<Vec<EvidenceRow>> {
    let caller = authenticate(&state, &headers)?;
    let node = state.node();
    let ledger = node.state();
    let rows = ledger
        .evidence
        .keys()
        .filter_map(|id| chaincode::query_metadata(ledger, &caller, id).ok())
        .map(|v| EvidenceRow { id: v.record.id, device_type: v.record.device_type, own: v.record.own, erased: v.erased })
        .collect();
    Ok(Json(rows))
}

async fn evidence(State(state): State<Arc<AppState>>, headers: HeaderMap, Path(id): Path<String>) -> ApiResult<EvidenceDoc> {
    let caller = authenticate(&state, &headers)?;
    let id = parse_digest(&id)?;
    let node = state.node();
    let view = chaincode::query_metadata(node.state(), &caller, &id)?;
    Ok(Json(EvidenceDoc::new(&view.record, view.erased)))
}

async fn trail(State(state): State<Arc<AppState>>, headers: HeaderMap, Path(id): Path<String>) -> ApiResult<TrailView> {
    let caller = authenticate(&state, &headers)?;
    let id = parse_digest(&id)?;
    let node = state.node();
    chaincode::query_metadata(node.state(), &caller, &id)?;
    let trail = node.chain().custody_trail(&id).unwrap_or_default().to_vec();
    Ok(Json(TrailView { id, trail }))
}

async fn payload(State(state): State<Arc<AppState>>, headers: HeaderMap, Path(id): Path<String>) -> Result<Response, ApiError> {
    let caller = authenticate(&state, &headers)?;
    let id = parse_digest(&id)?;
    let node = state.node();
    let evidence = node.fetch_payload(&caller.address, &id)?;
    let hash = node.deployment().config.evidence.hash;
    let mut response = Bytes::from(evidence.payload).into_response();
    let h = response.headers_mut();
    let value = |s: String| HeaderValue::from_str(&s).expect("hex is a valid header value");
    h.insert(header::CONTENT_TYPE, HeaderValue::from_static("application/octet-stream"));
    h.insert("x-evidence-id", value(evidence.id.to_hex()));
    h.insert("x-evidence-nonce", value(hex::encode(evidence.nonce)));
    h.insert("x-creator-signature", value(hex::encode(&evidence.creator_signature.0)));
    h.insert("x-evidence-hash", value(hash.name().to_owned()));
    Ok(response)
}

async fn device(State(state): State<Arc<AppState>>, headers: HeaderMap, Path(id): Path<String>) -> ApiResult<DeviceView> {
    authenticate(&state, &headers)?;
    let node = state.node();
    let history = node.state().devices.get(&id).cloned().ok_or_else(|| ApiError::not_found("device"))?;
    Ok(Json(DeviceView { device_id: id, history }))
}

async fn chain_verify(State(state): State<Arc<AppState>>, headers: HeaderMap) -> ApiResult<ctb_core::ledger::VerificationReport> {
    authenticate(&state, &headers)?;
    let dir = state.node().deployment().chain_dir();
    let report = verify_store(&dir).map_err(|e| ApiError::from(NodeError::from(e)))?;
    Ok(Json(report))
}

fn kind_for(op: &str) -> Option<TxKind> {
    Some(match op {
        "create" => TxKind::Create,
        "transfer" => TxKind::Transfer,
        "erase" => TxKind::Erase,
        "register_device" => TxKind::DeviceRegister,
        "verify_device" => TxKind::DeviceVerify,
        "access" => TxKind::Access,
        _ => return None,
    })
}

/// Relays a client-signed transaction into the commit path. Commits are
/// synchronous, so the response already carries the block height; an
/// identical resubmission returns the same tx id and height.
async fn invoke(
    State(state): State<Arc<AppState>>,
    headers: HeaderMap,
    Path(op): Path<String>,
    body: Bytes,
) -> ApiResult<InvokeResponse> {
    let caller = authenticate(&state, &headers)?;
    let kind = kind_for(&op).ok_or_else(|| ApiError::not_found("operation"))?;
    let req: InvokeRequest =
        serde_json::from_slice(&body).map_err(|e| ApiError::bad_request("Malformed", e.to_string()))?;
    let raw = base64::engine::general_purpose::STANDARD
        .decode(req.tx.trim())
        .map_err(|_| ApiError::bad_request("Malformed", "tx is not base64"))?;
    let tx = Transaction::from_canonical_bytes(&raw).map_err(|e| ApiError::bad_request("Malformed", e.to_string()))?;
    if tx.kind != kind {
        return Err(ApiError::bad_request("Malformed", format!("/invoke/{op} cannot carry a {} transaction", tx.kind)));
    }
    if tx.submitter != caller.address {
        return Err(ApiError::new(StatusCode::FORBIDDEN, "SubmitterMismatch", "transaction is not signed by the session participant"));
    }
    let now = state.now();
    let receipt = {
        let mut node = state.node.write().unwrap_or_else(|e| e.into_inner());
        node.submit(tx, now).map_err(|e| match e {
            // on invoke, a missing or erased target is a chaincode denial
            NodeError::Chaincode(c @ (ChaincodeError::NotFound | ChaincodeError::Erased)) => {
                ApiError::new(StatusCode::FORBIDDEN, c.code(), c.to_string())
            }
            other => other.into(),
        })?
    };
    Ok(Json(InvokeResponse {
        tx_id: receipt.tx_id,
        status: "COMMITTED".into(),
        block_height: receipt.height,
        fresh: receipt.fresh,
    }))
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/session/challenge", post(challenge))
        .route("/session/login", post(login))
        .route("/chain", get(summary))
        .route("/chain/verify", get(chain_verify))
        .route("/blocks", get(blocks))
        .route("/blocks/{height}", get(block))
        .route("/tx/{tx_id}", get(tx))
        .route("/evidence", get(evidence_list))
        .route("/evidence/{id}", get(evidence))
        .route("/evidence/{id}/trail", get(trail))
        .route("/evidence/{id}/payload", get(payload))
        .route("/devices/{device_id}", get(device))
        .route("/invoke/{op}", post(invoke))
        .with_state(state)
}

/// Serves until the process is stopped.
pub async fn serve(addr: SocketAddr, state: Arc<AppState>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(state)).await
}
