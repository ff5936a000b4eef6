use std::fs;
use std::path::Path;

use ctb_core::chaincode;
use ctb_core::hash::sha256;
use ctb_core::identity::{CertificateAuthority, Role};
use ctb_core::ledger::{
    replay, scan_records, verify_store, Block, BlockStore, Chain, Genesis, LedgerError, Policy, DATA_FILE, INDEX_FILE,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

const T0: u64 = 1_700_000_000;

/// Genesis plus `n` blocks of two CREATE transactions each.
fn build(dir: &Path, n: u64) -> Chain {
    let mut ca = CertificateAuthority::from_u64_seed(99);
    let orderer = ca.enroll(Role::Isp, T0);
    let isp = ca.enroll(Role::Isp, T0);
    let genesis = Block::genesis(
        Genesis {
            chain_id: "store-test".into(),
            ca_root: ca.root_public_key(),
            orderer: orderer.0.address,
            roster: vec![orderer.0.cert.clone(), isp.0.cert.clone()],
            policy: Policy::default(),
            timestamp: T0,
        },
        &orderer.1,
    );
    let mut chain = Chain::open(dir).unwrap();
    chain.append_block(genesis).unwrap();
    for h in 1..=n {
        let txs = (0..2u64)
            .map(|k| {
                let id = sha256(&(h * 10 + k).to_be_bytes());
                chaincode::create_evidence(chain.state(), &isp.0, &isp.1, id, "flow capture", T0, "camera", T0 + h).unwrap()
            })
            .collect();
        let block = Block::seal(h, chain.tip_hash(), T0 + h, txs, orderer.0.address, &orderer.1);
        chain.append_block(block).unwrap();
    }
    chain
}

#[test]
fn reopen_replays_to_the_same_state() {
    let dir = tempfile::tempdir().unwrap();
    let chain = build(dir.path(), 12);
    let digest = chain.state().digest();
    drop(chain);
    let reopened = Chain::open(dir.path()).unwrap();
    assert_eq!(reopened.len(), 13);
    assert_eq!(reopened.state().digest(), digest);
    assert_eq!(replay(reopened.blocks()).unwrap().digest(), digest);
    assert!(verify_store(dir.path()).unwrap().valid);
}

#[test]
fn bit_flips_fail_at_or_before_their_block() {
    let dir = tempfile::tempdir().unwrap();
    drop(build(dir.path(), 20));
    let path = dir.path().join(DATA_FILE);
    let original = fs::read(&path).unwrap();
    let records = scan_records(&original).records;
    let mut rng = ChaCha20Rng::seed_from_u64(5);
    for _ in 0..60 {
        let byte = rng.gen_range(0..original.len());
        let bit = rng.gen_range(0..8);
        let height = records.iter().rposition(|r| r.offset as usize <= byte).unwrap() as u64;
        let mut mutated = original.clone();
        mutated[byte] ^= 1 << bit;
        fs::write(&path, &mutated).unwrap();
        let report = verify_store(dir.path()).unwrap();
        assert!(!report.valid, "flip at byte {byte} bit {bit} went unnoticed");
        assert!(report.first_failure.unwrap() <= height, "byte {byte}: {report:?}");
    }
}

#[test]
fn torn_tail_needs_explicit_repair() {
    let dir = tempfile::tempdir().unwrap();
    drop(build(dir.path(), 5));
    let path = dir.path().join(DATA_FILE);
    let mut bytes = fs::read(&path).unwrap();
    bytes.truncate(bytes.len() - 7);
    fs::write(&path, &bytes).unwrap();
    assert!(matches!(Chain::open(dir.path()), Err(LedgerError::Framing(_)) | Err(LedgerError::IndexMismatch)));
    assert!(!verify_store(dir.path()).unwrap().valid);
    let dropped = BlockStore::repair(dir.path()).unwrap();
    assert!(dropped > 0);
    let chain = Chain::open(dir.path()).unwrap();
    assert_eq!(chain.len(), 5);
    assert!(verify_store(dir.path()).unwrap().valid);
}

#[test]
fn index_corruption_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    drop(build(dir.path(), 4));
    let path = dir.path().join(INDEX_FILE);
    let mut idx = fs::read(&path).unwrap();
    idx[8 * 2 + 7] ^= 0x10;
    fs::write(&path, &idx).unwrap();
    let report = verify_store(dir.path()).unwrap();
    assert_eq!(report.first_failure, Some(2));
    assert!(Chain::open(dir.path()).is_err());
}
