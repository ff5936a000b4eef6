use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::codec::Encoder;
use crate::hash::{sha256, Digest};
use crate::identity::{Address, Certificate, Participant, TrustAnchor};

use super::tx::{CustodyInterval, DeviceRecord, EvidenceRecord, Policy};

/// Materialized view of the chain. Only ever produced by folding committed
/// transactions in order, so two replays of the same blocks are equal.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct WorldState {
    pub chain_id: String,
    pub anchor: Option<TrustAnchor>,
    pub orderer: Option<Address>,
    pub policy: Policy,
    pub participants: BTreeMap<Address, Certificate>,
    pub evidence: BTreeMap<Digest, EvidenceRecord>,
    pub erased: BTreeSet<Digest>,
    pub devices: BTreeMap<String, Vec<DeviceRecord>>,
}

impl WorldState {
    pub fn is_initialized(&self) -> bool {
        self.anchor.is_some()
    }

    pub fn participant(&self, address: &Address) -> Option<Participant> {
        self.participants
            .get(address)
            .cloned()
            .map(Participant::from_certificate)
    }

    pub fn record(&self, id: &Digest) -> Option<&EvidenceRecord> {
        self.evidence.get(id)
    }

    pub fn is_erased(&self, id: &Digest) -> bool {
        self.erased.contains(id)
    }

    pub fn custody_trail(&self, id: &Digest) -> Option<&[CustodyInterval]> {
        self.evidence.get(id).map(|r| r.custody_times.as_slice())
    }

    /// Canonical encoding of the full state.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        enc.str(&self.chain_id);
        match &self.anchor {
            Some(a) => enc.u8(1).value(&a.root),
            None => enc.u8(0),
        };
        enc.option(&self.orderer).value(&self.policy);
        enc.u32(self.participants.len() as u32);
        for cert in self.participants.values() {
            enc.value(cert);
        }
        enc.u32(self.evidence.len() as u32);
        for rec in self.evidence.values() {
            enc.value(rec);
        }
        enc.u32(self.erased.len() as u32);
        for id in &self.erased {
            enc.value(id);
        }
        enc.u32(self.devices.len() as u32);
        for (device_id, history) in &self.devices {
            enc.str(device_id).list(history);
        }
        enc.finish()
    }

    pub fn digest(&self) -> Digest {
        sha256(&self.canonical_bytes())
    }
}
