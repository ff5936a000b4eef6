use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use base64::Engine;
use ctb_core::chaincode;
use ctb_core::codec::Canonical;
use ctb_core::collection::{run_scenario, DeviceSpec, ScenarioSpec, Service};
use ctb_core::hash::{Digest, HashAlg};
use ctb_core::identity::{Participant, Role, SecretKey};
use ctb_core::ledger::Transaction;
use ctb_core::node::{ingest_scenario, Deployment, DeploymentConfig};
use ctb_explorer::views::*;
use ctb_explorer::{router, ApiConfig, AppState};
use http_body_util::BodyExt;
use serde::de::DeserializeOwned;
use tower::ServiceExt;

const NOW: u64 = 1_700_000_000;

struct Fixture {
    _dir: tempfile::TempDir,
    app: Router,
    clock: Arc<AtomicU64>,
    deployment: Deployment,
    evidence: Vec<Digest>,
}

fn signer(f: &Fixture, name: &str) -> (Participant, SecretKey) {
    f.deployment.signer(name, None).unwrap()
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let deployment = Deployment::init(dir.path(), DeploymentConfig::new("api-test", Some(8)), NOW).unwrap();
    for (n, r) in [("isp1", Role::Isp), ("lea1", Role::Lea), ("lea2", Role::Lea), ("pros1", Role::Prosecutor)] {
        deployment.enroll(n, r, NOW).unwrap();
    }
    let mut node = deployment.open_node(NOW).unwrap();
    let devices = (0..3)
        .map(|i| DeviceSpec {
            id: format!("cam-{i}"),
            device_type: "camera".into(),
            services: [Service::Telnet].into(),
            default_credentials: true,
            vulnerable_firmware: false,
            sda: false,
        })
        .collect();
    let spec = ScenarioSpec {
        seed: None,
        start_time: NOW,
        duration_secs: 1_800,
        patient_zero: "cam-0".into(),
        devices,
        links: vec![],
        thresholds: Default::default(),
        timing: Default::default(),
    };
    let outcome = run_scenario(&spec, 42).unwrap();
    let (isp, key) = deployment.signer("isp1", None).unwrap();
    let report = ingest_scenario(&mut node, &isp, &key, &outcome, NOW + 5).unwrap();
    assert!(report.incidents.len() >= 3);
    let evidence = report.incidents.iter().map(|i| i.evidence_id).collect();
    let clock = Arc::new(AtomicU64::new(NOW + 10));
    let c = clock.clone();
    let state = AppState::new(node, ApiConfig::default(), Arc::new(move || c.load(Ordering::SeqCst)));
    Fixture { _dir: dir, app: router(state), clock, deployment, evidence }
}

async fn call(app: &Router, method: &str, uri: &str, token: Option<&str>, body: Option<String>) -> (StatusCode, Vec<u8>, axum::http::HeaderMap) {
    let mut req = Request::builder().method(method).uri(uri);
    if let Some(t) = token {
        req = req.header("authorization", format!("Bearer {t}"));
    }
    let req = match body {
        Some(b) => req.header("content-type", "application/json").body(Body::from(b)),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let headers = resp.headers().clone();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, bytes, headers)
}

async fn get<T: DeserializeOwned>(app: &Router, uri: &str, token: &str) -> (StatusCode, Option<T>) {
    let (status, body, _) = call(app, "GET", uri, Some(token), None).await;
    (status, serde_json::from_slice(&body).ok())
}

async fn login(f: &Fixture, name: &str) -> String {
    let (p, key) = signer(f, name);
    let body = serde_json::to_string(&ChallengeRequest { address: p.address }).unwrap();
    let (status, raw, _) = call(&f.app, "POST", "/session/challenge", None, Some(body)).await;
    assert_eq!(status, StatusCode::OK);
    let ch: ChallengeResponse = serde_json::from_slice(&raw).unwrap();
    let sig = key.sign(&login_message(&ch.challenge));
    let body = serde_json::to_string(&LoginRequest { address: p.address, challenge: ch.challenge, signature: hex::encode(&sig.0) }).unwrap();
    let (status, raw, _) = call(&f.app, "POST", "/session/login", None, Some(body)).await;
    assert_eq!(status, StatusCode::OK, "{}", String::from_utf8_lossy(&raw));
    serde_json::from_slice::<LoginResponse>(&raw).unwrap().token
}

async fn invoke(f: &Fixture, op: &str, token: &str, tx: &Transaction) -> (StatusCode, Vec<u8>) {
    let body = serde_json::to_string(&InvokeRequest {
        tx: base64::engine::general_purpose::STANDARD.encode(tx.to_canonical_bytes()),
    })
    .unwrap();
    let (s, b, _) = call(&f.app, "POST", &format!("/invoke/{op}"), Some(token), Some(body)).await;
    (s, b)
}

fn transfer(f: &Fixture, from: &str, to: &str, id: Digest, t: u64) -> Transaction {
    use ctb_core::ledger::{Proposal, TransferOwnership};
    let (p, key) = signer(f, from);
    let (to, _) = signer(f, to);
    Proposal::Transfer(TransferOwnership { id, new_owner: to.address, dsc_amendment: None, timestamp: t }).sign(p.address, &key)
}

fn error_code(body: &[u8]) -> String {
    serde_json::from_slice::<ErrorBody>(body).unwrap().code
}

#[tokio::test]
async fn sessions_are_required_and_expire() {
    let f = fixture();
    let (s, _, _) = call(&f.app, "GET", "/blocks/0", None, None).await;
    assert_eq!(s, StatusCode::UNAUTHORIZED);
    let (s, _, _) = call(&f.app, "GET", "/blocks/0", Some("nope"), None).await;
    assert_eq!(s, StatusCode::UNAUTHORIZED);

    let token = login(&f, "lea1").await;
    assert_eq!(get::<BlockView>(&f.app, "/blocks/0", &token).await.0, StatusCode::OK);
    f.clock.fetch_add(ApiConfig::default().session_ttl_secs + 1, Ordering::SeqCst);
    assert_eq!(get::<BlockView>(&f.app, "/blocks/0", &token).await.0, StatusCode::UNAUTHORIZED);
}

#[tokio::test]
async fn login_rejects_wrong_key() {
    let f = fixture();
    let (p, _) = signer(&f, "lea1");
    let (_, other_key) = signer(&f, "lea2");
    let body = serde_json::to_string(&ChallengeRequest { address: p.address }).unwrap();
    let (_, raw, _) = call(&f.app, "POST", "/session/challenge", None, Some(body)).await;
    let ch: ChallengeResponse = serde_json::from_slice(&raw).unwrap();
    let sig = other_key.sign(&login_message(&ch.challenge));
    let body = serde_json::to_string(&LoginRequest { address: p.address, challenge: ch.challenge, signature: hex::encode(&sig.0) }).unwrap();
    let (status, _, _) = call(&f.app, "POST", "/session/login", None, Some(body)).await;
    assert_eq!(status, StatusCode::UNAUTHORIZED);
}

#[tokio::test]
async fn block_queries() {
    let f = fixture();
    let token = login(&f, "isp1").await;
    let (s, genesis) = get::<BlockView>(&f.app, "/blocks/0", &token).await;
    assert_eq!(s, StatusCode::OK);
    let genesis = genesis.unwrap();
    assert!(genesis.prev_hash.is_zero());
    assert_eq!(genesis.txs[0].kind, "GENESIS");
    let (_, latest) = get::<BlockView>(&f.app, "/blocks/latest", &token).await;
    assert_eq!(latest.unwrap().height, 1);
    assert_eq!(get::<BlockView>(&f.app, "/blocks/99", &token).await.0, StatusCode::NOT_FOUND);
    assert_eq!(get::<BlockView>(&f.app, "/blocks/x", &token).await.0, StatusCode::BAD_REQUEST);
    let (_, list) = get::<Vec<BlockSummary>>(&f.app, "/blocks?offset=1&limit=5", &token).await;
    assert_eq!(list.unwrap().len(), 1);
    let (_, report) = get::<ctb_core::ledger::VerificationReport>(&f.app, "/chain/verify", &token).await;
    assert!(report.unwrap().valid);
    let (s, dev) = get::<DeviceView>(&f.app, "/devices/cam-1", &token).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(dev.unwrap().history.len(), 1);
    assert_eq!(get::<DeviceView>(&f.app, "/devices/none", &token).await.0, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn transfer_round_trip_and_idempotence() {
    let f = fixture();
    let isp = login(&f, "isp1").await;
    let id = f.evidence[0];
    let tx = transfer(&f, "isp1", "lea1", id, NOW + 11);
    let (s, body) = invoke(&f, "transfer", &isp, &tx).await;
    assert_eq!(s, StatusCode::OK, "{}", String::from_utf8_lossy(&body));
    let first: InvokeResponse = serde_json::from_slice(&body).unwrap();
    assert_eq!(first.tx_id, tx.tx_id);
    assert!(first.fresh);

    let (_, body) = invoke(&f, "transfer", &isp, &tx).await;
    let again: InvokeResponse = serde_json::from_slice(&body).unwrap();
    assert_eq!((again.tx_id, again.block_height, again.fresh), (first.tx_id, first.block_height, false));

    let (s, view) = get::<TxView>(&f.app, &format!("/tx/{}", tx.tx_id), &isp).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(view.unwrap().block_height, Some(first.block_height));
    let (_, latest) = get::<BlockView>(&f.app, "/blocks/latest", &isp).await;
    let hits: usize = latest.unwrap().txs.iter().filter(|t| t.tx_id == tx.tx_id).count();
    assert_eq!(hits, 1);
}

#[tokio::test]
async fn invoke_denials() {
    let f = fixture();
    let lea = login(&f, "lea1").await;
    let id = f.evidence[0];
    // lea1 is not the owner
    let (s, body) = invoke(&f, "transfer", &lea, &transfer(&f, "lea1", "pros1", id, NOW + 11)).await;
    assert_eq!(s, StatusCode::FORBIDDEN);
    assert_eq!(error_code(&body), "PermissionDenied");
    // signed by isp1 but sent on lea1's session
    let (s, body) = invoke(&f, "transfer", &lea, &transfer(&f, "isp1", "lea1", id, NOW + 11)).await;
    assert_eq!(s, StatusCode::FORBIDDEN);
    assert_eq!(error_code(&body), "SubmitterMismatch");
    // wrong endpoint for the kind
    let (s, _) = invoke(&f, "erase", &lea, &transfer(&f, "lea1", "pros1", id, NOW + 11)).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _, _) = call(&f.app, "POST", "/invoke/transfer", Some(&lea), Some("{\"tx\":\"!!\"}".into())).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let mut forged = transfer(&f, "lea1", "pros1", id, NOW + 12);
    forged.submitter_signature.0[5] ^= 1;
    forged.tx_id = forged.compute_id();
    let (s, body) = invoke(&f, "transfer", &lea, &forged).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(error_code(&body), "BadSignature");
    let (s, _) = invoke(&f, "bogus", &lea, &forged).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn payload_access_follows_ownership_and_erasure() {
    let f = fixture();
    let isp = login(&f, "isp1").await;
    let lea = login(&f, "lea1").await;
    let id = f.evidence[0];

    let (s, body, headers) = call(&f.app, "GET", &format!("/evidence/{id}/payload"), Some(&isp), None).await;
    assert_eq!(s, StatusCode::OK);
    let nonce: [u8; 32] = hex::decode(headers["x-evidence-nonce"].to_str().unwrap()).unwrap().try_into().unwrap();
    let sig = ctb_core::identity::SignatureBytes(hex::decode(headers["x-creator-signature"].to_str().unwrap()).unwrap());
    let alg = HashAlg::from_name(headers["x-evidence-hash"].to_str().unwrap()).unwrap();
    assert_eq!(ctb_core::evidence::evidence_id(alg, &body, &sig, &nonce), id);
    assert_eq!(headers["x-evidence-id"].to_str().unwrap(), id.to_hex());

    assert_eq!(invoke(&f, "transfer", &isp, &transfer(&f, "isp1", "lea1", id, NOW + 11)).await.0, StatusCode::OK);
    let (s, _, _) = call(&f.app, "GET", &format!("/evidence/{id}/payload"), Some(&isp), None).await;
    assert_eq!(s, StatusCode::FORBIDDEN, "previous owner");
    let (s, _, _) = call(&f.app, "GET", &format!("/evidence/{id}/payload"), Some(&lea), None).await;
    assert_eq!(s, StatusCode::OK);

    let (p, key) = signer(&f, "isp1");
    let other = f.evidence[1];
    let erase = ctb_core::ledger::Proposal::Erase(ctb_core::ledger::EraseEvidence { id: other, timestamp: NOW + 12 }).sign(p.address, &key);
    assert_eq!(invoke(&f, "erase", &isp, &erase).await.0, StatusCode::OK);
    let (s, _, _) = call(&f.app, "GET", &format!("/evidence/{other}/payload"), Some(&isp), None).await;
    assert_eq!(s, StatusCode::GONE);
    let (s, doc) = get::<EvidenceDoc>(&f.app, &format!("/evidence/{other}"), &lea).await;
    assert_eq!(s, StatusCode::OK);
    let doc = doc.unwrap();
    assert!(doc.erased);
    assert!(doc.payload_locator.is_none());
    let (_, trail) = get::<TrailView>(&f.app, &format!("/evidence/{other}/trail"), &lea).await;
    assert_eq!(trail.unwrap().trail.len(), 1);
    let (_, report) = get::<ctb_core::ledger::VerificationReport>(&f.app, "/chain/verify", &lea).await;
    assert!(report.unwrap().valid);
}

#[tokio::test]
async fn responses_agree_with_local_replay() {
    let f = fixture();
    let isp = login(&f, "isp1").await;
    let lea = login(&f, "lea1").await;
    for (i, id) in f.evidence.iter().enumerate().take(3) {
        let tx = transfer(&f, "isp1", "lea1", *id, NOW + 20 + i as u64);
        assert_eq!(invoke(&f, "transfer", &isp, &tx).await.0, StatusCode::OK);
    }
    let chain = ctb_core::ledger::Chain::open(&f.deployment.chain_dir()).unwrap();
    let replayed = ctb_core::ledger::replay(chain.blocks()).unwrap();
    let (lea_p, _) = signer(&f, "lea1");
    for id in &f.evidence {
        let expected = chaincode::query_metadata(&replayed, &lea_p, id).unwrap();
        let (_, doc) = get::<EvidenceDoc>(&f.app, &format!("/evidence/{id}"), &lea).await;
        assert_eq!(doc.unwrap(), EvidenceDoc::new(&expected.record, expected.erased));
        let (_, trail) = get::<TrailView>(&f.app, &format!("/evidence/{id}/trail"), &lea).await;
        assert_eq!(trail.unwrap().trail, replayed.custody_trail(id).unwrap());
    }
    let (_, rows) = get::<Vec<EvidenceRow>>(&f.app, "/evidence", &lea).await;
    assert_eq!(rows.unwrap().len(), replayed.evidence.len());
    for block in chain.blocks() {
        for tx in &block.txs {
            let (_, view) = get::<TxView>(&f.app, &format!("/tx/{}", tx.tx_id), &lea).await;
            let view = view.unwrap();
            assert_eq!(view.submitter, tx.submitter);
            assert_eq!(view.block_height, Some(block.height));
        }
    }
}
