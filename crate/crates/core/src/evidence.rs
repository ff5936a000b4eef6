//! Off-chain evidence database, one per ISP.
//!
//! Each item lives in `<root>/<hex id>/` as `payload.bin` plus a
//! `meta.json` sidecar with the nonce, creator signature, log event and
//! incident. The identifier is `Hash(payload ‖ creator_signature ‖ nonce)`,
//! so it can be recomputed from the stored files alone. Erasure deletes the
//! payload and leaves the sidecar as a tombstone.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::Encoder;
use crate::collection::IncidentDescriptor;
use crate::hash::{Digest, HashAlg};
use crate::identity::{Address, Certificate, Participant, Role, SecretKey, SignatureBytes, TrustAnchor};
use crate::ledger::{CreateEvidence, Proposal};

/// 1 GiB.
pub const DEFAULT_MAX_PAYLOAD_BYTES: u64 = 1 << 30;

const PAYLOAD_FILE: &str = "payload.bin";
const META_FILE: &str = "meta.json";

#[derive(Debug, Error)]
pub enum EvidenceError {
    #[error("permission denied")]
    PermissionDenied,
    #[error("invalid evidence: {0}")]
    InvalidEvidence(String),
    #[error("evidence not found")]
    NotFound,
    #[error("evidence erased")]
    Erased,
    #[error("evidence already erased")]
    AlreadyErased,
    #[error("integrity check failed: {0}")]
    IntegrityError(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("metadata: {0}")]
    Meta(#[from] serde_json::Error),
}

impl EvidenceError {
    pub fn code(&self) -> &'static str {
        match self {
            Self::PermissionDenied => "PermissionDenied",
            Self::InvalidEvidence(_) => "InvalidEvidence",
            Self::NotFound => "NotFound",
            Self::Erased => "Erased",
            Self::AlreadyErased => "AlreadyErased",
            Self::IntegrityError(_) => "IntegrityError",
            Self::Io(_) | Self::Meta(_) => "StorageError",
        }
    }
}

pub type Result<T, E = EvidenceError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct StoreConfig {
    pub hash: HashAlg,
    pub max_payload_bytes: u64,
}

impl Default for StoreConfig {
    fn default() -> Self {
        Self {
            hash: HashAlg::default(),
            max_payload_bytes: DEFAULT_MAX_PAYLOAD_BYTES,
        }
    }
}

/// Where nonces come from. `Seeded` and `Fixed` exist for reproducible runs.
pub enum NonceSource {
    Os,
    Seeded(Box<ChaCha20Rng>),
    Fixed([u8; 32]),
}

impl NonceSource {
    pub fn seeded(seed: u64) -> Self {
        Self::Seeded(Box::new(ChaCha20Rng::seed_from_u64(seed)))
    }

    fn next(&mut self) -> [u8; 32] {
        let mut out = [0u8; 32];
        match self {
            Self::Os => rand::rngs::OsRng.fill_bytes(&mut out),
            Self::Seeded(rng) => rng.fill_bytes(&mut out),
            Self::Fixed(n) => out = *n,
        }
        out
    }
}

impl std::fmt::Debug for NonceSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Os => "Os",
            Self::Seeded(_) => "Seeded",
            Self::Fixed(_) => "Fixed",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Evidence {
    pub payload: Vec<u8>,
    pub nonce: [u8; 32],
    pub creator_signature: SignatureBytes,
    pub id: Digest,
}

/// `Hash(payload ‖ signature ‖ nonce)`.
pub fn evidence_id(hash: HashAlg, payload: &[u8], signature: &SignatureBytes, nonce: &[u8; 32]) -> Digest {
    hash.digest_parts(&[payload, signature.as_ref(), nonce])
}

impl Evidence {
    pub fn recompute_id(&self, hash: HashAlg) -> Digest {
        evidence_id(hash, &self.payload, &self.creator_signature, &self.nonce)
    }
}

/// Signed record of an insertion into the evidence database.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvidenceLogEvent {
    pub id: Digest,
    pub creator: Address,
    pub timestamp: u64,
    pub digest: Digest,
    pub signature: SignatureBytes,
}

impl EvidenceLogEvent {
    pub fn signed_bytes(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        enc.value(&self.id)
            .value(&self.creator)
            .u64(self.timestamp)
            .value(&self.digest);
        enc.finish()
    }

    pub fn verify(&self, cert: &Certificate, anchor: &TrustAnchor) -> bool {
        cert.subject_address == self.creator
            && anchor.verify(cert, &self.signed_bytes(), &self.signature, self.timestamp)
    }
}

/// Sidecar stored next to each payload.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvidenceMeta {
    pub id: Digest,
    pub hash: HashAlg,
    pub creator: Address,
    #[serde(with = "hex_nonce")]
    pub nonce: [u8; 32],
    pub creator_signature: SignatureBytes,
    pub payload_len: u64,
    pub stored_at: u64,
    pub event: EvidenceLogEvent,
    pub incident: IncidentDescriptor,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub erased_at: Option<u64>,
}

mod hex_nonce {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(n: &[u8; 32], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(n))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[u8; 32], D::Error> {
        let s = String::deserialize(d)?;
        let mut out = [0u8; 32];
        hex::decode_to_slice(&s, &mut out).map_err(serde::de::Error::custom)?;
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErasureReceipt {
    pub id: Digest,
    #[serde(with = "hex_nonce")]
    pub nonce: [u8; 32],
    pub erased_by: Address,
    pub erased_at: u64,
}

/// Evidence database for one ISP. Writes take `&mut self`; wrap in a
/// `RwLock` to share between readers and a writer.
#[derive(Debug)]
pub struct EvidenceStore {
    root: PathBuf,
    config: StoreConfig,
    nonces: NonceSource,
}

impl EvidenceStore {
    pub fn open(root: impl Into<PathBuf>, config: StoreConfig) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        Ok(Self {
            root,
            config,
            nonces: NonceSource::Os,
        })
    }

    pub fn with_nonce_source(mut self, nonces: NonceSource) -> Self {
        self.nonces = nonces;
        self
    }

    pub fn set_nonce_source(&mut self, nonces: NonceSource) {
        self.nonces = nonces;
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn config(&self) -> &StoreConfig {
        &self.config
    }

    fn entry_dir(&self, id: &Digest) -> PathBuf {
        self.root.join(id.to_hex())
    }

    fn write_meta(&self, meta: &EvidenceMeta) -> Result<()> {
        let dir = self.entry_dir(&meta.id);
        let tmp = dir.join(format!("{META_FILE}.tmp"));
        fs::write(&tmp, serde_json::to_vec_pretty(meta)?)?;
        fs::rename(tmp, dir.join(META_FILE))?;
        Ok(())
    }

    /// Stores `payload`, draws a nonce, derives the id and returns the
    /// signed log event.
    pub fn ev_gen(
        &mut self,
        creator: &Participant,
        key: &SecretKey,
        payload: &[u8],
        incident: &IncidentDescriptor,
        now: u64,
    ) -> Result<EvidenceLogEvent> {
        if creator.role != Role::Isp || key.public_key() != creator.public_key {
            return Err(EvidenceError::PermissionDenied);
        }
        if payload.is_empty() {
            return Err(EvidenceError::InvalidEvidence("empty payload".into()));
        }
        if payload.len() as u64 > self.config.max_payload_bytes {
            return Err(EvidenceError::InvalidEvidence(format!(
                "payload exceeds {} bytes",
                self.config.max_payload_bytes
            )));
        }
        let hash = self.config.hash;
        let creator_signature = key.sign(payload);
        let nonce = self.nonces.next();
        let id = evidence_id(hash, payload, &creator_signature, &nonce);
        let dir = self.entry_dir(&id);
        if dir.exists() {
            return Err(EvidenceError::InvalidEvidence(format!("id {id} already stored")));
        }

        let mut event = EvidenceLogEvent {
            id,
            creator: creator.address,
            timestamp: now,
            digest: hash.digest(payload),
            signature: SignatureBytes::default(),
        };
        event.signature = key.sign(&event.signed_bytes());

        fs::create_dir_all(&dir)?;
        fs::write(dir.join(PAYLOAD_FILE), payload)?;
        self.write_meta(&EvidenceMeta {
            id,
            hash,
            creator: creator.address,
            nonce,
            creator_signature,
            payload_len: payload.len() as u64,
            stored_at: now,
            event: event.clone(),
            incident: incident.clone(),
            erased_at: None,
        })?;
        Ok(event)
    }

    /// Ingests a file (raw bytes or pcap, never parsed) subject to the size cap.
    pub fn import(
        &mut self,
        creator: &Participant,
        key: &SecretKey,
        reader: impl Read,
        incident: &IncidentDescriptor,
        now: u64,
    ) -> Result<EvidenceLogEvent> {
        let mut payload = Vec::new();
        reader
            .take(self.config.max_payload_bytes.saturating_add(1))
            .read_to_end(&mut payload)?;
        self.ev_gen(creator, key, &payload, incident, now)
    }

    pub fn meta(&self, id: &Digest) -> Result<EvidenceMeta> {
        let path = self.entry_dir(id).join(META_FILE);
        match fs::read(&path) {
            Ok(raw) => Ok(serde_json::from_slice(&raw)?),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(EvidenceError::NotFound),
            Err(e) => Err(e.into()),
        }
    }

    pub fn contains(&self, id: &Digest) -> bool {
        self.entry_dir(id).join(META_FILE).exists()
    }

    /// Returns the payload with nonce and signature, after checking that the
    /// recomputed id still matches.
    pub fn fetch(&self, id: &Digest) -> Result<Evidence> {
        let meta = self.meta(id)?;
        if meta.erased_at.is_some() {
            return Err(EvidenceError::Erased);
        }
        let payload = fs::read(self.entry_dir(id).join(PAYLOAD_FILE))?;
        let evidence = Evidence {
            payload,
            nonce: meta.nonce,
            creator_signature: meta.creator_signature,
            id: meta.id,
        };
        if evidence.recompute_id(meta.hash) != *id {
            return Err(EvidenceError::IntegrityError(format!(
                "recomputed id does not match {id}"
            )));
        }
        Ok(evidence)
    }

    /// Destroys the payload, keeping a tombstone. Only the creating ISP may
    /// erase.
    pub fn erase(&mut self, id: &Digest, caller: &Participant, now: u64) -> Result<ErasureReceipt> {
        let mut meta = self.meta(id)?;
        if caller.role != Role::Isp || caller.address != meta.creator {
            return Err(EvidenceError::PermissionDenied);
        }
        if meta.erased_at.is_some() {
            return Err(EvidenceError::AlreadyErased);
        }
        let payload_path = self.entry_dir(id).join(PAYLOAD_FILE);
        if payload_path.exists() {
            // overwrite before unlinking
            fs::write(&payload_path, vec![0u8; meta.payload_len as usize])?;
            fs::remove_file(&payload_path)?;
        }
        meta.erased_at = Some(now);
        self.write_meta(&meta)?;
        Ok(ErasureReceipt {
            id: *id,
            nonce: meta.nonce,
            erased_by: caller.address,
            erased_at: now,
        })
    }

    /// Ids of every stored item, tombstones included, in id order.
    pub fn list(&self) -> Result<Vec<Digest>> {
        let mut ids = Vec::new();
        for entry in fs::read_dir(&self.root)? {
            let entry = entry?;
            if let Some(id) = entry.file_name().to_str().and_then(|n| n.parse::<Digest>().ok()) {
                ids.push(id);
            }
        }
        ids.sort();
        Ok(ids)
    }
}

/// Converts a verified log event into a CREATE proposal: creator and first
/// owner are the event's creator, and the proposal timestamp is the event's.
pub fn tx_gen(
    event: &EvidenceLogEvent,
    creator_cert: &Certificate,
    anchor: &TrustAnchor,
    incident: &IncidentDescriptor,
) -> Result<Proposal> {
    if !event.verify(creator_cert, anchor) {
        return Err(EvidenceError::IntegrityError(
            "evidence log event signature does not verify".into(),
        ));
    }
    Ok(Proposal::Create(CreateEvidence {
        id: event.id,
        creator: event.creator,
        dsc: incident.description(),
        tm: incident.tm,
        own: event.creator,
        own_prev: None,
        device_type: incident.device_type.clone(),
        timestamp: event.timestamp,
    }))
}
