//! Evidence and device-state business logic.
//!
//! [`check`] decides whether a proposal is admissible against a state;
//! [`apply`] runs the same checks and then mutates the state. Both are pure
//! functions of `(state, transaction, block_time)`, and the orderer and
//! every validating peer run exactly this code.
//!
//! The builder functions (`create_evidence`, `transfer_ownership`, ...)
//! are the client-side entry points: they pre-check against a local state
//! snapshot and return a signed [`Transaction`] ready for submission.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hash::Digest;
use crate::identity::{Address, Participant, Role, SecretKey};
use crate::ledger::{
    AccessEvidence, CreateEvidence, CustodyInterval, DeviceRecord, DeviceState, EraseEvidence,
    EvidenceRecord, Genesis, MetadataAccess, Policy, Proposal, Transaction, TransferOwnership,
    WorldState, MAX_DSC_BYTES,
};

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[serde(tag = "code", content = "detail")]
pub enum ChaincodeError {
    #[error("permission denied")]
    PermissionDenied,
    #[error("evidence already exists")]
    AlreadyExists,
    #[error("not found")]
    NotFound,
    #[error("evidence has been erased")]
    Erased,
    #[error("evidence already erased")]
    AlreadyErased,
    #[error("unknown participant")]
    UnknownParticipant,
    #[error("recipient role may not hold evidence")]
    NotAuthorized,
    #[error("invalid transfer")]
    InvalidTransfer,
    #[error("current owner is terminal")]
    TerminalOwner,
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("chain has no genesis")]
    NotInitialized,
}

impl ChaincodeError {
    /// Stable reason code, mirrored by the API and CLI.
    pub fn code(&self) -> &'static str {
        match self {
            Self::PermissionDenied => "PermissionDenied",
            Self::AlreadyExists => "AlreadyExists",
            Self::NotFound => "NotFound",
            Self::Erased => "Erased",
            Self::AlreadyErased => "AlreadyErased",
            Self::UnknownParticipant => "UnknownParticipant",
            Self::NotAuthorized => "NotAuthorized",
            Self::InvalidTransfer => "InvalidTransfer",
            Self::TerminalOwner => "TerminalOwner",
            Self::InvalidInput(_) => "InvalidInput",
            Self::NotInitialized => "NotInitialized",
        }
    }
}

pub type Result<T, E = ChaincodeError> = std::result::Result<T, E>;

/// Role rules, parameterized by the genesis policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PermissionMatrix {
    pub policy: Policy,
}

impl PermissionMatrix {
    pub fn new(policy: Policy) -> Self {
        Self { policy }
    }

    pub fn may_create(&self, role: Role) -> bool {
        role == Role::Isp
    }

    pub fn may_register_device(&self, role: Role) -> bool {
        role == Role::Isp
    }

    /// Roles that may receive evidence by transfer.
    pub fn may_hold(&self, role: Role) -> bool {
        match role {
            Role::Lea | Role::Prosecutor => true,
            Role::Isp => self.policy.allow_isp_transfer,
        }
    }

    /// Whether an owner with `role` may pass evidence on.
    pub fn may_transfer_onward(&self, role: Role) -> bool {
        role != Role::Prosecutor || self.policy.allow_prosecutor_transfer
    }

    pub fn may_read_metadata(&self, caller: &Participant, record: &EvidenceRecord) -> bool {
        if caller.address == record.creator || caller.address == record.own {
            return true;
        }
        match self.policy.metadata_access {
            MetadataAccess::Investigators => matches!(caller.role, Role::Lea | Role::Prosecutor),
            MetadataAccess::OwnerOnly => false,
        }
    }
}

fn caller(state: &WorldState, address: &Address) -> Result<Participant> {
    state
        .participant(address)
        .ok_or(ChaincodeError::UnknownParticipant)
}

fn live_record<'a>(state: &'a WorldState, id: &Digest) -> Result<&'a EvidenceRecord> {
    let record = state.record(id).ok_or(ChaincodeError::NotFound)?;
    if state.is_erased(id) {
        return Err(ChaincodeError::Erased);
    }
    Ok(record)
}

fn check_text(what: &str, text: &str, max: usize) -> Result<()> {
    if text.len() > max {
        return Err(ChaincodeError::InvalidInput(format!(
            "{what} exceeds {max} bytes"
        )));
    }
    Ok(())
}

fn check_genesis(state: &WorldState, submitter: &Address, g: &Genesis) -> Result<()> {
    if state.is_initialized() {
        return Err(ChaincodeError::InvalidInput("genesis already applied".into()));
    }
    if *submitter != g.orderer {
        return Err(ChaincodeError::PermissionDenied);
    }
    let anchor = crate::identity::TrustAnchor::new(g.ca_root);
    let mut seen = BTreeSet::new();
    for cert in &g.roster {
        if !anchor.certificate_valid(cert, g.timestamp) {
            return Err(ChaincodeError::InvalidInput(format!(
                "roster certificate {} invalid",
                cert.subject_address
            )));
        }
        if !seen.insert(cert.subject_address) {
            return Err(ChaincodeError::InvalidInput("duplicate roster entry".into()));
        }
    }
    if !seen.contains(&g.orderer) {
        return Err(ChaincodeError::UnknownParticipant);
    }
    Ok(())
}

/// Admissibility of `proposal` signed by `submitter` against `state`.
pub fn check(state: &WorldState, submitter: &Address, proposal: &Proposal) -> Result<()> {
    if let Proposal::Genesis(g) = proposal {
        return check_genesis(state, submitter, g);
    }
    if !state.is_initialized() {
        return Err(ChaincodeError::NotInitialized);
    }
    let who = caller(state, submitter)?;
    let matrix = PermissionMatrix::new(state.policy);
    match proposal {
        Proposal::Genesis(_) => unreachable!(),
        Proposal::Create(c) => {
            if !matrix.may_create(who.role) {
                return Err(ChaincodeError::PermissionDenied);
            }
            if c.creator != who.address || c.own != who.address || c.own_prev.is_some() {
                return Err(ChaincodeError::InvalidInput(
                    "creator and first owner must be the submitting ISP".into(),
                ));
            }
            check_text("description", &c.dsc, MAX_DSC_BYTES)?;
            check_text("device type", &c.device_type, 256)?;
            if state.record(&c.id).is_some() {
                return Err(ChaincodeError::AlreadyExists);
            }
            Ok(())
        }
        Proposal::Access(a) => {
            let record = live_record(state, &a.id)?;
            if record.own != who.address {
                return Err(ChaincodeError::PermissionDenied);
            }
            Ok(())
        }
        Proposal::Erase(e) => {
            let record = state.record(&e.id).ok_or(ChaincodeError::NotFound)?;
            if who.role != Role::Isp || record.creator != who.address {
                return Err(ChaincodeError::PermissionDenied);
            }
            if state.is_erased(&e.id) {
                return Err(ChaincodeError::AlreadyErased);
            }
            Ok(())
        }
        Proposal::Transfer(t) => {
            let record = live_record(state, &t.id)?;
            if record.own != who.address {
                return Err(ChaincodeError::PermissionDenied);
            }
            if !matrix.may_transfer_onward(who.role) {
                return Err(ChaincodeError::TerminalOwner);
            }
            if t.new_owner == who.address {
                return Err(ChaincodeError::InvalidTransfer);
            }
            let recipient = state
                .participant(&t.new_owner)
                .ok_or(ChaincodeError::UnknownParticipant)?;
            if !matrix.may_hold(recipient.role) {
                return Err(ChaincodeError::NotAuthorized);
            }
            if let Some(amendment) = &t.dsc_amendment {
                check_text("description amendment", amendment, MAX_DSC_BYTES)?;
            }
            Ok(())
        }
        Proposal::DeviceRegister(d) => {
            if !matrix.may_register_device(who.role) {
                return Err(ChaincodeError::PermissionDenied);
            }
            if d.device_id.is_empty() {
                return Err(ChaincodeError::InvalidInput("empty device id".into()));
            }
            check_text("device id", &d.device_id, 256)
        }
        Proposal::DeviceVerify(d) => {
            if state.devices.contains_key(&d.device_id) {
                Ok(())
            } else {
                Err(ChaincodeError::NotFound)
            }
        }
    }
}

/// Checks `tx` and applies its effect at `block_time`. On error the state
/// is untouched.
pub fn apply(state: &mut WorldState, tx: &Transaction, block_time: u64) -> Result<()> {
    check(state, &tx.submitter, &tx.proposal)?;
    match &tx.proposal {
        Proposal::Genesis(g) => {
            state.chain_id = g.chain_id.clone();
            state.anchor = Some(crate::identity::TrustAnchor::new(g.ca_root));
            state.orderer = Some(g.orderer);
            state.policy = g.policy;
            state.participants = g
                .roster
                .iter()
                .map(|c| (c.subject_address, c.clone()))
                .collect();
        }
        Proposal::Create(c) => {
            state.evidence.insert(
                c.id,
                EvidenceRecord {
                    id: c.id,
                    creator: c.creator,
                    dsc: c.dsc.clone(),
                    tm: c.tm,
                    own: c.own,
                    own_prev: None,
                    device_type: c.device_type.clone(),
                    custody_times: vec![CustodyInterval {
                        owner: c.own,
                        start: block_time,
                        end: None,
                    }],
                },
            );
        }
        Proposal::Transfer(t) => {
            let record = state.evidence.get_mut(&t.id).expect("checked");
            if let Some(open) = record.custody_times.last_mut() {
                open.end = Some(block_time);
            }
            record.custody_times.push(CustodyInterval {
                owner: t.new_owner,
                start: block_time,
                end: None,
            });
            record.own_prev = Some(record.own);
            record.own = t.new_owner;
            if let Some(amendment) = &t.dsc_amendment {
                record.dsc.push_str(&format!(
                    "\n[amended by {} at {}] {}",
                    tx.submitter, block_time, amendment
                ));
            }
        }
        Proposal::Erase(e) => {
            let record = state.evidence.get_mut(&e.id).expect("checked");
            if let Some(open) = record.custody_times.last_mut() {
                if open.end.is_none() {
                    open.end = Some(block_time);
                }
            }
            state.erased.insert(e.id);
        }
        Proposal::DeviceRegister(d) => {
            state
                .devices
                .entry(d.device_id.clone())
                .or_default()
                .push(DeviceRecord {
                    device_id: d.device_id.clone(),
                    firmware_hash: d.firmware_hash,
                    config_hash: d.config_hash,
                    registered_at: block_time,
                    registrar: tx.submitter,
                });
        }
        Proposal::Access(_) | Proposal::DeviceVerify(_) => {}
    }
    Ok(())
}

fn signed(
    state: &WorldState,
    caller: &Participant,
    key: &SecretKey,
    proposal: Proposal,
) -> Result<Transaction> {
    check(state, &caller.address, &proposal)?;
    Ok(proposal.sign(caller.address, key))
}

#[allow(clippy::too_many_arguments)]
pub fn create_evidence(
    state: &WorldState,
    caller: &Participant,
    key: &SecretKey,
    id: Digest,
    dsc: &str,
    tm: u64,
    device_type: &str,
    now: u64,
) -> Result<Transaction> {
    let proposal = Proposal::Create(CreateEvidence {
        id,
        creator: caller.address,
        dsc: dsc.to_owned(),
        tm,
        own: caller.address,
        own_prev: None,
        device_type: device_type.to_owned(),
        timestamp: now,
    });
    signed(state, caller, key, proposal)
}

/// Where the raw payload of an evidence item lives.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvidenceLocator {
    /// The ISP whose evidence database holds the payload.
    pub isp: Address,
    pub id: Digest,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvidenceHandle {
    pub record: EvidenceRecord,
    pub locator: EvidenceLocator,
}

/// Owner-only retrieval. Returns the handle plus the ACCESS transaction that
/// records the retrieval on-chain.
pub fn get_evidence(
    state: &WorldState,
    caller: &Participant,
    key: &SecretKey,
    id: Digest,
    now: u64,
) -> Result<(EvidenceHandle, Transaction)> {
    let tx = signed(
        state,
        caller,
        key,
        Proposal::Access(AccessEvidence { id, timestamp: now }),
    )?;
    let record = state.record(&id).expect("checked").clone();
    let locator = EvidenceLocator {
        isp: record.creator,
        id,
    };
    Ok((EvidenceHandle { record, locator }, tx))
}

pub fn erase_evidence(
    state: &WorldState,
    caller: &Participant,
    key: &SecretKey,
    id: Digest,
    now: u64,
) -> Result<Transaction> {
    signed(
        state,
        caller,
        key,
        Proposal::Erase(EraseEvidence { id, timestamp: now }),
    )
}

pub fn transfer_ownership(
    state: &WorldState,
    caller: &Participant,
    key: &SecretKey,
    id: Digest,
    new_owner: Address,
    dsc_amendment: Option<String>,
    now: u64,
) -> Result<Transaction> {
    signed(
        state,
        caller,
        key,
        Proposal::Transfer(TransferOwnership {
            id,
            new_owner,
            dsc_amendment,
            timestamp: now,
        }),
    )
}

pub fn register_device_state(
    state: &WorldState,
    caller: &Participant,
    key: &SecretKey,
    device_id: &str,
    firmware_hash: Digest,
    config_hash: Digest,
    now: u64,
) -> Result<Transaction> {
    signed(
        state,
        caller,
        key,
        Proposal::DeviceRegister(DeviceState {
            device_id: device_id.to_owned(),
            firmware_hash,
            config_hash,
            timestamp: now,
        }),
    )
}

/// Signed DEVICE_VERIFY audit transaction.
pub fn record_device_verification(
    state: &WorldState,
    caller: &Participant,
    key: &SecretKey,
    device_id: &str,
    firmware_hash: Digest,
    config_hash: Digest,
    now: u64,
) -> Result<Transaction> {
    signed(
        state,
        caller,
        key,
        Proposal::DeviceVerify(DeviceState {
            device_id: device_id.to_owned(),
            firmware_hash,
            config_hash,
            timestamp: now,
        }),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum VerificationResult {
    Current,
    Historical,
    Unknown,
}

pub fn verify_device_state(
    state: &WorldState,
    device_id: &str,
    firmware_hash: &Digest,
    config_hash: &Digest,
) -> Result<VerificationResult> {
    let history = state
        .devices
        .get(device_id)
        .filter(|h| !h.is_empty())
        .ok_or(ChaincodeError::NotFound)?;
    let matches = |r: &DeviceRecord| r.firmware_hash == *firmware_hash && r.config_hash == *config_hash;
    if matches(history.last().expect("non-empty")) {
        Ok(VerificationResult::Current)
    } else if history.iter().any(matches) {
        Ok(VerificationResult::Historical)
    } else {
        Ok(VerificationResult::Unknown)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvidenceView {
    pub record: EvidenceRecord,
    pub erased: bool,
}

/// On-chain metadata read, gated by the metadata-access policy. Erased
/// records stay readable.
pub fn query_metadata(state: &WorldState, caller: &Participant, id: &Digest) -> Result<EvidenceView> {
    let record = state.record(id).ok_or(ChaincodeError::NotFound)?;
    if !state.participants.contains_key(&caller.address) {
        return Err(ChaincodeError::UnknownParticipant);
    }
    if !PermissionMatrix::new(state.policy).may_read_metadata(caller, record) {
        return Err(ChaincodeError::PermissionDenied);
    }
    Ok(EvidenceView {
        record: record.clone(),
        erased: state.is_erased(id),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::identity::CertificateAuthority;

    struct World {
        state: WorldState,
        isp: (Participant, SecretKey),
        isp2: (Participant, SecretKey),
        lea: (Participant, SecretKey),
        lea2: (Participant, SecretKey),
        pros: (Participant, SecretKey),
    }

    const T0: u64 = 1_000;

    fn world(policy: Policy) -> World {
        let mut ca = CertificateAuthority::from_u64_seed(21);
        let isp = ca.enroll(Role::Isp, 0);
        let isp2 = ca.enroll(Role::Isp, 0);
        let lea = ca.enroll(Role::Lea, 0);
        let lea2 = ca.enroll(Role::Lea, 0);
        let pros = ca.enroll(Role::Prosecutor, 0);
        let genesis = Proposal::Genesis(Genesis {
            chain_id: "test".into(),
            ca_root: ca.root_public_key(),
            orderer: isp.0.address,
            roster: [&isp, &isp2, &lea, &lea2, &pros].iter().map(|p| p.0.cert.clone()).collect(),
            policy,
            timestamp: T0,
        })
        .sign(isp.0.address, &isp.1);
        let mut state = WorldState::default();
        apply(&mut state, &genesis, T0).unwrap();
        World { state, isp, isp2, lea, lea2, pros }
    }

    fn id(n: u8) -> Digest {
        Digest::from_bytes([n; 32])
    }

    fn create(w: &mut World, n: u8, t: u64) {
        let tx = create_evidence(&w.state, &w.isp.0, &w.isp.1, id(n), "ddos", 900, "camera", t).unwrap();
        apply(&mut w.state, &tx, t).unwrap();
    }

    fn transfer(w: &mut World, from: &(Participant, SecretKey), to: Address, n: u8, t: u64) -> Result<()> {
        let tx = transfer_ownership(&w.state, &from.0, &from.1, id(n), to, None, t)?;
        apply(&mut w.state, &tx, t)
    }

    #[test]
    fn create_sets_creator_as_first_owner() {
        let mut w = world(Policy::default());
        create(&mut w, 1, 2_000);
        let r = w.state.record(&id(1)).unwrap();
        assert_eq!(r.own, w.isp.0.address);
        assert_eq!(r.creator, w.isp.0.address);
        assert_eq!(r.custody_times, vec![CustodyInterval { owner: w.isp.0.address, start: 2_000, end: None }]);
    }

    #[test]
    fn duplicate_and_role_checks_on_create() {
        let mut w = world(Policy::default());
        create(&mut w, 1, 2_000);
        let dup = create_evidence(&w.state, &w.isp.0, &w.isp.1, id(1), "x", 0, "camera", 2_001);
        assert_eq!(dup.unwrap_err(), ChaincodeError::AlreadyExists);
        let lea = create_evidence(&w.state, &w.lea.0, &w.lea.1, id(2), "x", 0, "camera", 2_001);
        assert_eq!(lea.unwrap_err(), ChaincodeError::PermissionDenied);
    }

    #[test]
    fn oversized_description_rejected() {
        let w = world(Policy::default());
        let big = "x".repeat(MAX_DSC_BYTES + 1);
        let err = create_evidence(&w.state, &w.isp.0, &w.isp.1, id(1), &big, 0, "camera", 1).unwrap_err();
        assert_eq!(err.code(), "InvalidInput");
    }

    #[test]
    fn transfer_chain_and_errors() {
        let mut w = world(Policy::default());
        create(&mut w, 1, 2_000);
        let (isp, lea, lea2, pros) = (w.isp.clone(), w.lea.clone(), w.lea2.clone(), w.pros.clone());
        transfer(&mut w, &isp, lea.0.address, 1, 2_100).unwrap();
        let r = w.state.record(&id(1)).unwrap();
        assert_eq!((r.own, r.own_prev), (lea.0.address, Some(isp.0.address)));

        assert_eq!(transfer(&mut w, &lea2, pros.0.address, 1, 2_150), Err(ChaincodeError::PermissionDenied));
        assert_eq!(transfer(&mut w, &isp, pros.0.address, 1, 2_150), Err(ChaincodeError::PermissionDenied));
        assert_eq!(transfer(&mut w, &lea, lea.0.address, 1, 2_150), Err(ChaincodeError::InvalidTransfer));
        assert_eq!(transfer(&mut w, &lea, Address::from_bytes([3; 20]), 1, 2_150), Err(ChaincodeError::UnknownParticipant));
        let isp2 = w.isp2.0.address;
        assert_eq!(transfer(&mut w, &lea, isp2, 1, 2_150), Err(ChaincodeError::NotAuthorized));

        transfer(&mut w, &lea, pros.0.address, 1, 2_200).unwrap();
        assert_eq!(transfer(&mut w, &pros, lea.0.address, 1, 2_300), Err(ChaincodeError::TerminalOwner));

        let trail = w.state.custody_trail(&id(1)).unwrap();
        assert_eq!(
            trail,
            &[
                CustodyInterval { owner: isp.0.address, start: 2_000, end: Some(2_100) },
                CustodyInterval { owner: lea.0.address, start: 2_100, end: Some(2_200) },
                CustodyInterval { owner: pros.0.address, start: 2_200, end: None },
            ]
        );
    }

    #[test]
    fn prosecutor_transfer_allowed_by_policy() {
        let mut w = world(Policy { allow_prosecutor_transfer: true, ..Policy::default() });
        create(&mut w, 1, 2_000);
        let (isp, lea, pros) = (w.isp.clone(), w.lea.clone(), w.pros.clone());
        transfer(&mut w, &isp, pros.0.address, 1, 2_100).unwrap();
        transfer(&mut w, &pros, lea.0.address, 1, 2_200).unwrap();
    }

    #[test]
    fn amendments_append_to_description() {
        let mut w = world(Policy::default());
        create(&mut w, 1, 2_000);
        let tx = transfer_ownership(&w.state, &w.isp.0, &w.isp.1, id(1), w.lea.0.address, Some("seized router".into()), 2_100).unwrap();
        apply(&mut w.state, &tx, 2_100).unwrap();
        let dsc = &w.state.record(&id(1)).unwrap().dsc;
        assert!(dsc.starts_with("ddos\n[amended by "));
        assert!(dsc.ends_with("seized router"));
    }

    #[test]
    fn erase_by_creator_while_lea_owns() {
        let mut w = world(Policy::default());
        create(&mut w, 1, 2_000);
        let (isp, lea, pros) = (w.isp.clone(), w.lea.clone(), w.pros.clone());
        transfer(&mut w, &isp, lea.0.address, 1, 2_100).unwrap();

        assert_eq!(erase_evidence(&w.state, &pros.0, &pros.1, id(1), 2_200).unwrap_err(), ChaincodeError::PermissionDenied);
        assert_eq!(erase_evidence(&w.state, &w.isp2.0, &w.isp2.1, id(1), 2_200).unwrap_err(), ChaincodeError::PermissionDenied);

        let tx = erase_evidence(&w.state, &isp.0, &isp.1, id(1), 2_300).unwrap();
        apply(&mut w.state, &tx, 2_300).unwrap();
        assert!(w.state.custody_trail(&id(1)).unwrap().iter().all(|i| i.end.is_some()));
        assert_eq!(w.state.custody_trail(&id(1)).unwrap().last().unwrap().end, Some(2_300));
        assert_eq!(erase_evidence(&w.state, &isp.0, &isp.1, id(1), 2_400).unwrap_err(), ChaincodeError::AlreadyErased);

        let view = query_metadata(&w.state, &lea.0, &id(1)).unwrap();
        assert!(view.erased);
        assert_eq!(get_evidence(&w.state, &lea.0, &lea.1, id(1), 2_500).unwrap_err(), ChaincodeError::Erased);
        assert_eq!(transfer(&mut w, &lea, pros.0.address, 1, 2_500), Err(ChaincodeError::Erased));
    }

    #[test]
    fn get_is_owner_only() {
        let mut w = world(Policy::default());
        create(&mut w, 1, 2_000);
        let (isp, lea) = (w.isp.clone(), w.lea.clone());
        let (handle, tx) = get_evidence(&w.state, &isp.0, &isp.1, id(1), 2_050).unwrap();
        assert_eq!(handle.locator.isp, isp.0.address);
        assert_eq!(tx.kind, crate::ledger::TxKind::Access);
        transfer(&mut w, &isp, lea.0.address, 1, 2_100).unwrap();
        assert!(get_evidence(&w.state, &lea.0, &lea.1, id(1), 2_150).is_ok());
        assert_eq!(get_evidence(&w.state, &isp.0, &isp.1, id(1), 2_150).unwrap_err(), ChaincodeError::PermissionDenied);
        assert_eq!(get_evidence(&w.state, &isp.0, &isp.1, id(9), 2_150).unwrap_err(), ChaincodeError::NotFound);
    }

    #[test]
    fn metadata_policy_switch() {
        let mut open = world(Policy::default());
        create(&mut open, 1, 2_000);
        assert!(query_metadata(&open.state, &open.lea2.0, &id(1)).is_ok());
        assert_eq!(query_metadata(&open.state, &open.isp2.0, &id(1)).unwrap_err(), ChaincodeError::PermissionDenied);

        let mut closed = world(Policy { metadata_access: MetadataAccess::OwnerOnly, ..Policy::default() });
        create(&mut closed, 1, 2_000);
        assert_eq!(query_metadata(&closed.state, &closed.lea2.0, &id(1)).unwrap_err(), ChaincodeError::PermissionDenied);
        assert!(query_metadata(&closed.state, &closed.isp.0, &id(1)).is_ok());
    }

    #[test]
    fn device_registration_and_verification() {
        let mut w = world(Policy::default());
        let (fw1, cfg1, fw2) = (id(10), id(11), id(12));
        let tx = register_device_state(&w.state, &w.isp.0, &w.isp.1, "cam-1", fw1, cfg1, 3_000).unwrap();
        apply(&mut w.state, &tx, 3_000).unwrap();
        assert_eq!(w.state.devices["cam-1"].len(), 1);
        let tx = register_device_state(&w.state, &w.isp.0, &w.isp.1, "cam-1", fw2, cfg1, 3_100).unwrap();
        apply(&mut w.state, &tx, 3_100).unwrap();
        let history = &w.state.devices["cam-1"];
        assert_eq!(history.len(), 2);
        assert!(history[0].registered_at < history[1].registered_at);

        assert_eq!(verify_device_state(&w.state, "cam-1", &fw2, &cfg1), Ok(VerificationResult::Current));
        assert_eq!(verify_device_state(&w.state, "cam-1", &fw1, &cfg1), Ok(VerificationResult::Historical));
        assert_eq!(verify_device_state(&w.state, "cam-1", &id(99), &id(98)), Ok(VerificationResult::Unknown));
        assert_eq!(verify_device_state(&w.state, "cam-2", &fw1, &cfg1), Err(ChaincodeError::NotFound));

        let lea = register_device_state(&w.state, &w.lea.0, &w.lea.1, "cam-1", fw1, cfg1, 3_200);
        assert_eq!(lea.unwrap_err(), ChaincodeError::PermissionDenied);
        assert!(record_device_verification(&w.state, &w.lea.0, &w.lea.1, "cam-1", fw1, cfg1, 3_200).is_ok());
    }

    #[test]
    fn apply_is_deterministic() {
        let mut a = world(Policy::default());
        let mut b = world(Policy::default());
        create(&mut a, 1, 2_000);
        create(&mut b, 1, 2_000);
        assert_eq!(a.state.canonical_bytes(), b.state.canonical_bytes());
    }
}
