//! Transactions and the records they carry.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::codec::{Canonical, DecodeError, Decoder, Encoder};
use crate::hash::{sha256, Digest};
use crate::identity::{Address, Certificate, PublicKey, SecretKey, SignatureBytes};

/// Maximum size of an incident description or amendment, in bytes.
pub const MAX_DSC_BYTES: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TxKind {
    Genesis,
    Create,
    Transfer,
    Erase,
    Access,
    DeviceRegister,
    DeviceVerify,
}

impl TxKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            TxKind::Genesis => "GENESIS",
            TxKind::Create => "CREATE",
            TxKind::Transfer => "TRANSFER",
            TxKind::Erase => "ERASE",
            TxKind::Access => "ACCESS",
            TxKind::DeviceRegister => "DEVICE_REGISTER",
            TxKind::DeviceVerify => "DEVICE_VERIFY",
        }
    }
}

impl fmt::Display for TxKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Who may read evidence metadata on-chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetadataAccess {
    /// Any enrolled LEA or prosecutor, plus the creator and current owner.
    #[default]
    Investigators,
    /// Only the creator and the current owner.
    OwnerOnly,
}

/// Chaincode policy switches, fixed at genesis so every node agrees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Policy {
    pub allow_prosecutor_transfer: bool,
    pub allow_isp_transfer: bool,
    pub metadata_access: MetadataAccess,
}

impl Canonical for Policy {
    fn encode_to(&self, enc: &mut Encoder) {
        enc.bool(self.allow_prosecutor_transfer)
            .bool(self.allow_isp_transfer)
            .u8(match self.metadata_access {
                MetadataAccess::Investigators => 0,
                MetadataAccess::OwnerOnly => 1,
            });
    }
    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Self {
            allow_prosecutor_transfer: dec.bool()?,
            allow_isp_transfer: dec.bool()?,
            metadata_access: match dec.u8()? {
                0 => MetadataAccess::Investigators,
                1 => MetadataAccess::OwnerOnly,
                _ => return Err(dec.invalid("metadata access")),
            },
        })
    }
}

/// Membership and policy anchored in block 0.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Genesis {
    pub chain_id: String,
    pub ca_root: PublicKey,
    pub orderer: Address,
    pub roster: Vec<Certificate>,
    pub policy: Policy,
    pub timestamp: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CreateEvidence {
    pub id: Digest,
    pub creator: Address,
    pub dsc: String,
    pub tm: u64,
    pub own: Address,
    pub own_prev: Option<Address>,
    pub device_type: String,
    pub timestamp: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransferOwnership {
    pub id: Digest,
    pub new_owner: Address,
    pub dsc_amendment: Option<String>,
    pub timestamp: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EraseEvidence {
    pub id: Digest,
    pub timestamp: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessEvidence {
    pub id: Digest,
    pub timestamp: u64,
}

/// Firmware/config fingerprint of a device, used both to register and to
/// verify a device state.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceState {
    pub device_id: String,
    pub firmware_hash: Digest,
    pub config_hash: Digest,
    pub timestamp: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Proposal {
    Genesis(Genesis),
    Create(CreateEvidence),
    Transfer(TransferOwnership),
    Erase(EraseEvidence),
    Access(AccessEvidence),
    DeviceRegister(DeviceState),
    DeviceVerify(DeviceState),
}

impl Proposal {
    pub fn kind(&self) -> TxKind {
        match self {
            Proposal::Genesis(_) => TxKind::Genesis,
            Proposal::Create(_) => TxKind::Create,
            Proposal::Transfer(_) => TxKind::Transfer,
            Proposal::Erase(_) => TxKind::Erase,
            Proposal::Access(_) => TxKind::Access,
            Proposal::DeviceRegister(_) => TxKind::DeviceRegister,
            Proposal::DeviceVerify(_) => TxKind::DeviceVerify,
        }
    }

    /// Evidence id touched by this proposal, if any.
    pub fn evidence_id(&self) -> Option<Digest> {
        match self {
            Proposal::Create(p) => Some(p.id),
            Proposal::Transfer(p) => Some(p.id),
            Proposal::Erase(p) => Some(p.id),
            Proposal::Access(p) => Some(p.id),
            _ => None,
        }
    }

    /// Signs the proposal on behalf of `submitter`.
    pub fn sign(self, submitter: Address, key: &SecretKey) -> Transaction {
        let signature = key.sign(&self.to_canonical_bytes());
        Transaction::new(self, submitter, signature)
    }
}

impl Canonical for DeviceState {
    fn encode_to(&self, enc: &mut Encoder) {
        enc.str(&self.device_id)
            .value(&self.firmware_hash)
            .value(&self.config_hash)
            .u64(self.timestamp);
    }
    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Self {
            device_id: dec.string()?,
            firmware_hash: dec.value()?,
            config_hash: dec.value()?,
            timestamp: dec.u64()?,
        })
    }
}

impl Canonical for Proposal {
    fn encode_to(&self, enc: &mut Encoder) {
        match self {
            Proposal::Genesis(g) => {
                enc.u8(0)
                    .str(&g.chain_id)
                    .value(&g.ca_root)
                    .value(&g.orderer)
                    .list(&g.roster)
                    .value(&g.policy)
                    .u64(g.timestamp);
            }
            Proposal::Create(c) => {
                enc.u8(1)
                    .value(&c.id)
                    .value(&c.creator)
                    .str(&c.dsc)
                    .u64(c.tm)
                    .value(&c.own)
                    .option(&c.own_prev)
                    .str(&c.device_type)
                    .u64(c.timestamp);
            }
            Proposal::Transfer(t) => {
                enc.u8(2)
                    .value(&t.id)
                    .value(&t.new_owner)
                    .option(&t.dsc_amendment)
                    .u64(t.timestamp);
            }
            Proposal::Erase(e) => {
                enc.u8(3).value(&e.id).u64(e.timestamp);
            }
            Proposal::Access(a) => {
                enc.u8(4).value(&a.id).u64(a.timestamp);
            }
            Proposal::DeviceRegister(d) => {
                enc.u8(5).value(d);
            }
            Proposal::DeviceVerify(d) => {
                enc.u8(6).value(d);
            }
        }
    }

    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(match dec.u8()? {
            0 => Proposal::Genesis(Genesis {
                chain_id: dec.string()?,
                ca_root: dec.value()?,
                orderer: dec.value()?,
                roster: dec.list()?,
                policy: dec.value()?,
                timestamp: dec.u64()?,
            }),
            1 => Proposal::Create(CreateEvidence {
                id: dec.value()?,
                creator: dec.value()?,
                dsc: dec.string()?,
                tm: dec.u64()?,
                own: dec.value()?,
                own_prev: dec.option()?,
                device_type: dec.string()?,
                timestamp: dec.u64()?,
            }),
            2 => Proposal::Transfer(TransferOwnership {
                id: dec.value()?,
                new_owner: dec.value()?,
                dsc_amendment: dec.option()?,
                timestamp: dec.u64()?,
            }),
            3 => Proposal::Erase(EraseEvidence {
                id: dec.value()?,
                timestamp: dec.u64()?,
            }),
            4 => Proposal::Access(AccessEvidence {
                id: dec.value()?,
                timestamp: dec.u64()?,
            }),
            5 => Proposal::DeviceRegister(dec.value()?),
            6 => Proposal::DeviceVerify(dec.value()?),
            _ => return Err(dec.invalid("proposal kind")),
        })
    }
}

/// A signed proposal. `tx_id` is SHA-256 over the canonical encoding of the
/// other fields.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transaction {
    pub kind: TxKind,
    pub proposal: Proposal,
    pub submitter: Address,
    pub submitter_signature: SignatureBytes,
    pub tx_id: Digest,
}

impl Transaction {
    pub fn new(proposal: Proposal, submitter: Address, submitter_signature: SignatureBytes) -> Self {
        let mut tx = Self {
            kind: proposal.kind(),
            proposal,
            submitter,
            submitter_signature,
            tx_id: Digest::ZERO,
        };
        tx.tx_id = tx.compute_id();
        tx
    }

    fn body_bytes(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        enc.value(&self.proposal)
            .value(&self.submitter)
            .value(&self.submitter_signature);
        enc.finish()
    }

    pub fn compute_id(&self) -> Digest {
        sha256(&self.body_bytes())
    }

    /// Bytes covered by `submitter_signature`.
    pub fn signed_bytes(&self) -> Vec<u8> {
        self.proposal.to_canonical_bytes()
    }

    /// Structural integrity: kind matches the proposal and the id matches
    /// the content. Signature checks need the roster and live in the chain.
    pub fn is_well_formed(&self) -> bool {
        self.kind == self.proposal.kind() && self.tx_id == self.compute_id()
    }
}

impl Canonical for Transaction {
    fn encode_to(&self, enc: &mut Encoder) {
        enc.fixed(&self.body_bytes()).value(&self.tx_id);
    }
    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let proposal: Proposal = dec.value()?;
        Ok(Self {
            kind: proposal.kind(),
            proposal,
            submitter: dec.value()?,
            submitter_signature: dec.value()?,
            tx_id: dec.value()?,
        })
    }
}

/// One owner's possession interval. `end == None` means still open.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CustodyInterval {
    pub owner: Address,
    pub start: u64,
    pub end: Option<u64>,
}

impl Canonical for CustodyInterval {
    fn encode_to(&self, enc: &mut Encoder) {
        enc.value(&self.owner).u64(self.start).option(&self.end);
    }
    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Self {
            owner: dec.value()?,
            start: dec.u64()?,
            end: dec.option()?,
        })
    }
}

/// On-chain evidence metadata: id, creator, dsc, tm, own, own', type and the
/// custody time records.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvidenceRecord {
    pub id: Digest,
    pub creator: Address,
    pub dsc: String,
    pub tm: u64,
    pub own: Address,
    pub own_prev: Option<Address>,
    pub device_type: String,
    pub custody_times: Vec<CustodyInterval>,
}

impl Canonical for EvidenceRecord {
    fn encode_to(&self, enc: &mut Encoder) {
        enc.value(&self.id)
            .value(&self.creator)
            .str(&self.dsc)
            .u64(self.tm)
            .value(&self.own)
            .option(&self.own_prev)
            .str(&self.device_type)
            .list(&self.custody_times);
    }
    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Self {
            id: dec.value()?,
            creator: dec.value()?,
            dsc: dec.string()?,
            tm: dec.u64()?,
            own: dec.value()?,
            own_prev: dec.option()?,
            device_type: dec.string()?,
            custody_times: dec.list()?,
        })
    }
}

/// One entry of a device's registered-state history.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceRecord {
    pub device_id: String,
    pub firmware_hash: Digest,
    pub config_hash: Digest,
    pub registered_at: u64,
    pub registrar: Address,
}

impl Canonical for DeviceRecord {
    fn encode_to(&self, enc: &mut Encoder) {
        enc.str(&self.device_id)
            .value(&self.firmware_hash)
            .value(&self.config_hash)
            .u64(self.registered_at)
            .value(&self.registrar);
    }
    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Self {
            device_id: dec.string()?,
            firmware_hash: dec.value()?,
            config_hash: dec.value()?,
            registered_at: dec.u64()?,
            registrar: dec.value()?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::identity::{CertificateAuthority, Role};
    use proptest::prelude::*;

    fn arb_digest() -> impl Strategy<Value = Digest> {
        any::<[u8; 32]>().prop_map(Digest::from_bytes)
    }

    fn arb_address() -> impl Strategy<Value = Address> {
        any::<[u8; 20]>().prop_map(Address::from_bytes)
    }

    fn arb_proposal() -> impl Strategy<Value = Proposal> {
        prop_oneof![
            (arb_digest(), arb_address(), ".{0,40}", any::<u64>(), arb_address(),
             proptest::option::of(arb_address()), "[a-z]{0,10}", any::<u64>())
                .prop_map(|(id, creator, dsc, tm, own, own_prev, device_type, timestamp)| {
                    Proposal::Create(CreateEvidence { id, creator, dsc, tm, own, own_prev, device_type, timestamp })
                }),
            (arb_digest(), arb_address(), proptest::option::of(".{0,20}"), any::<u64>())
                .prop_map(|(id, new_owner, dsc_amendment, timestamp)| {
                    Proposal::Transfer(TransferOwnership { id, new_owner, dsc_amendment, timestamp })
                }),
            (arb_digest(), any::<u64>()).prop_map(|(id, timestamp)| Proposal::Erase(EraseEvidence { id, timestamp })),
            (".{1,20}", arb_digest(), arb_digest(), any::<u64>()).prop_map(|(device_id, firmware_hash, config_hash, timestamp)| {
                Proposal::DeviceRegister(DeviceState { device_id, firmware_hash, config_hash, timestamp })
            }),
        ]
    }

    proptest! {
        #[test]
        fn proposal_canonical_round_trip(p in arb_proposal()) {
            let bytes = p.to_canonical_bytes();
            prop_assert_eq!(Proposal::from_canonical_bytes(&bytes).unwrap(), p);
        }
    }

    #[test]
    fn tx_id_covers_signature_and_submitter() {
        let mut ca = CertificateAuthority::from_u64_seed(11);
        let (p, key) = ca.enroll(Role::Isp, 100);
        let tx = Proposal::Erase(EraseEvidence { id: Digest::ZERO, timestamp: 5 }).sign(p.address, &key);
        assert!(tx.is_well_formed());
        let bytes = tx.to_canonical_bytes();
        assert_eq!(Transaction::from_canonical_bytes(&bytes).unwrap(), tx);

        let mut forged = tx.clone();
        forged.submitter = Address::from_bytes([9; 20]);
        assert!(!forged.is_well_formed());
    }

    #[test]
    fn identical_proposals_get_identical_ids() {
        let mut ca = CertificateAuthority::from_u64_seed(12);
        let (p, key) = ca.enroll(Role::Lea, 100);
        let prop = Proposal::Access(AccessEvidence { id: Digest::ZERO, timestamp: 1 });
        assert_eq!(prop.clone().sign(p.address, &key).tx_id, prop.sign(p.address, &key).tx_id);
    }
}
