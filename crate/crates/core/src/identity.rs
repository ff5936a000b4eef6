//! Certificate authority, participant identities and signatures.
//!
//! Signatures are Ed25519 over canonical byte serializations. A participant's
//! [`Address`] is the first 20 bytes of SHA-256 over its public key. There is a
//! single root CA and no revocation; a certificate stops being valid only at
//! `expires_at`.

use std::fmt;
use std::str::FromStr;

use base64::Engine as _;
use ed25519_dalek::Signer;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::codec::{Canonical, DecodeError, Decoder, Encoder};
use crate::hash::sha256;

/// Ten years.
pub const DEFAULT_CERT_VALIDITY_SECS: u64 = 10 * 365 * 24 * 3600;

#[derive(Debug, Error)]
pub enum IdentityError {
    #[error("certificate decode failed: {0}")]
    Decode(#[from] DecodeError),
    #[error("invalid base64: {0}")]
    Base64(#[from] base64::DecodeError),
    #[error("key material must be 32 bytes, got {0}")]
    KeyLength(usize),
    #[error("certificate validity window is empty")]
    EmptyValidity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Role {
    Isp,
    Lea,
    Prosecutor,
}

impl Role {
    pub const ALL: [Role; 3] = [Role::Isp, Role::Lea, Role::Prosecutor];

    fn tag(self) -> u8 {
        match self {
            Role::Isp => 0,
            Role::Lea => 1,
            Role::Prosecutor => 2,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Role::Isp => "ISP",
            Role::Lea => "LEA",
            Role::Prosecutor => "PROSECUTOR",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Role {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "ISP" => Ok(Role::Isp),
            "LEA" => Ok(Role::Lea),
            "PROSECUTOR" => Ok(Role::Prosecutor),
            other => Err(format!("unknown role `{other}`")),
        }
    }
}

impl Canonical for Role {
    fn encode_to(&self, enc: &mut Encoder) {
        enc.u8(self.tag());
    }
    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        match dec.u8()? {
            0 => Ok(Role::Isp),
            1 => Ok(Role::Lea),
            2 => Ok(Role::Prosecutor),
            _ => Err(dec.invalid("role")),
        }
    }
}

macro_rules! hex_newtype_serde {
    ($ty:ident) => {
        impl Serialize for $ty {
            fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.serialize_str(&hex::encode(self.as_ref()))
            }
        }

        impl<'de> Deserialize<'de> for $ty {
            fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let s = String::deserialize(d)?;
                s.parse().map_err(serde::de::Error::custom)
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&hex::encode(self.as_ref()))
            }
        }

        impl fmt::Debug for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}({})", stringify!($ty), hex::encode(self.as_ref()))
            }
        }
    };
}

/// 20-byte participant identifier.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Address([u8; 20]);

impl Address {
    pub const fn from_bytes(bytes: [u8; 20]) -> Self {
        Self(bytes)
    }

    pub fn from_public_key(key: &PublicKey) -> Self {
        let digest = sha256(key.as_bytes());
        let mut out = [0u8; 20];
        out.copy_from_slice(&digest.as_bytes()[..20]);
        Self(out)
    }

    pub fn as_bytes(&self) -> &[u8; 20] {
        &self.0
    }
}

impl AsRef<[u8]> for Address {
    fn as_ref(&self) -> &[u8] {
        &self.0
    }
}

impl FromStr for Address {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut out = [0u8; 20];
        hex::decode_to_slice(s, &mut out).map_err(|_| format!("invalid address `{s}`"))?;
        Ok(Self(out))
    }
}

hex_newtype_serde!(Address);

impl Canonical for Address {
    fn encode_to(&self, enc: &mut Encoder) {
        enc.fixed(&self.0);
    }
    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Self(dec.fixed()?))
    }
}

/// Ed25519 verification key bytes.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct PublicKey([u8; 32]);

impl PublicKey {
    pub const fn from_bytes(bytes: [u8; 32]) -> Self {
        Self(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    pub fn address(&self) -> Address {
        Address::from_public_key(self)
    }

    /// Verifies `signature` over `message`. Malformed keys or signatures
    /// simply fail verification.
    pub fn verify(&self, message: &[u8], signature: &SignatureBytes) -> bool {
        let Ok(key) = ed25519_dalek::VerifyingKey::from_bytes(&self.0) else {
            return false;
        };
        let Ok(sig) = ed25519_dalek::Signature::from_slice(&signature.0) else {
            return false;
        };
        key.verify_strict(message, &sig).is_ok()
    }
}

impl AsRef<[u8]> for PublicKey {
    fn as_ref(&self) -> &[u8] {
        &self.0
    }
}

impl FromStr for PublicKey {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut out = [0u8; 32];
        hex::decode_to_slice(s, &mut out).map_err(|_| format!("invalid public key `{s}`"))?;
        Ok(Self(out))
    }
}

hex_newtype_serde!(PublicKey);

impl Canonical for PublicKey {
    fn encode_to(&self, enc: &mut Encoder) {
        enc.bytes(&self.0);
    }
    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let raw = dec.bytes()?;
        let arr: [u8; 32] = raw
            .as_slice()
            .try_into()
            .map_err(|_| dec.invalid("public key length"))?;
        Ok(Self(arr))
    }
}

/// Raw signature bytes. Kept as a byte string so that malformed signatures
/// are representable and rejected at verification time.
#[derive(Clone, PartialEq, Eq, Hash, Default)]
pub struct SignatureBytes(pub Vec<u8>);

impl AsRef<[u8]> for SignatureBytes {
    fn as_ref(&self) -> &[u8] {
        &self.0
    }
}

impl FromStr for SignatureBytes {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        hex::decode(s)
            .map(Self)
            .map_err(|_| format!("invalid signature hex `{s}`"))
    }
}

hex_newtype_serde!(SignatureBytes);

impl Canonical for SignatureBytes {
    fn encode_to(&self, enc: &mut Encoder) {
        enc.bytes(&self.0);
    }
    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Self(dec.bytes()?))
    }
}

/// A participant's private signing key.
#[derive(Clone)]
pub struct SecretKey(ed25519_dalek::SigningKey);

impl SecretKey {
    pub fn generate<R: RngCore + rand::CryptoRng>(rng: &mut R) -> Self {
        Self(ed25519_dalek::SigningKey::generate(rng))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, IdentityError> {
        let arr: [u8; 32] = bytes
            .try_into()
            .map_err(|_| IdentityError::KeyLength(bytes.len()))?;
        Ok(Self(ed25519_dalek::SigningKey::from_bytes(&arr)))
    }

    pub fn to_bytes(&self) -> [u8; 32] {
        self.0.to_bytes()
    }

    pub fn public_key(&self) -> PublicKey {
        PublicKey(self.0.verifying_key().to_bytes())
    }

    pub fn sign(&self, message: &[u8]) -> SignatureBytes {
        SignatureBytes(self.0.sign(message).to_bytes().to_vec())
    }
}

impl fmt::Debug for SecretKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SecretKey({})", self.public_key())
    }
}

/// Signs `message` with `key`.
pub fn sign(key: &SecretKey, message: &[u8]) -> SignatureBytes {
    key.sign(message)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Certificate {
    pub subject_address: Address,
    pub subject_role: Role,
    pub subject_public_key: PublicKey,
    pub issued_at: u64,
    pub expires_at: u64,
    pub issuer_signature: SignatureBytes,
}

impl Certificate {
    /// Canonical bytes of every field except the issuer signature.
    pub fn signed_bytes(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        enc.value(&self.subject_address)
            .value(&self.subject_role)
            .value(&self.subject_public_key)
            .u64(self.issued_at)
            .u64(self.expires_at);
        enc.finish()
    }

    pub fn verify_issuer(&self, root: &PublicKey) -> bool {
        self.issued_at < self.expires_at
            && self.subject_address == self.subject_public_key.address()
            && root.verify(&self.signed_bytes(), &self.issuer_signature)
    }

    pub fn is_current(&self, now: u64) -> bool {
        self.issued_at <= now && now < self.expires_at
    }

    pub fn to_base64(&self) -> String {
        base64::engine::general_purpose::STANDARD.encode(self.to_canonical_bytes())
    }

    pub fn from_base64(text: &str) -> Result<Self, IdentityError> {
        let raw = base64::engine::general_purpose::STANDARD.decode(text.trim())?;
        Ok(Self::from_canonical_bytes(&raw)?)
    }
}

impl Canonical for Certificate {
    fn encode_to(&self, enc: &mut Encoder) {
        enc.fixed(&self.signed_bytes()).value(&self.issuer_signature);
    }
    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Self {
            subject_address: dec.value()?,
            subject_role: dec.value()?,
            subject_public_key: dec.value()?,
            issued_at: dec.u64()?,
            expires_at: dec.u64()?,
            issuer_signature: dec.value()?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Participant {
    pub address: Address,
    pub role: Role,
    pub public_key: PublicKey,
    pub cert: Certificate,
}

impl Participant {
    pub fn from_certificate(cert: Certificate) -> Self {
        Self {
            address: cert.subject_address,
            role: cert.subject_role,
            public_key: cert.subject_public_key,
            cert,
        }
    }
}

/// Root of trust: the CA public key plus the verification rules.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrustAnchor {
    pub root: PublicKey,
}

impl TrustAnchor {
    pub fn new(root: PublicKey) -> Self {
        Self { root }
    }

    /// The certificate chains to the root and is inside its validity window.
    pub fn certificate_valid(&self, cert: &Certificate, now: u64) -> bool {
        cert.is_current(now) && cert.verify_issuer(&self.root)
    }

    /// True iff `cert` is currently valid under this root and `signature`
    /// was produced over `message` by the certified key.
    pub fn verify(
        &self,
        cert: &Certificate,
        message: &[u8],
        signature: &SignatureBytes,
        now: u64,
    ) -> bool {
        self.certificate_valid(cert, now) && cert.subject_public_key.verify(message, signature)
    }
}

/// The certificate authority. Enrollment is serialized through `&mut self`.
pub struct CertificateAuthority {
    key: SecretKey,
    rng: ChaCha20Rng,
    validity_secs: u64,
}

impl CertificateAuthority {
    /// A fixed seed yields the same root key and the same enrollment
    /// sequence; `None` draws from the OS RNG.
    pub fn new(seed: Option<[u8; 32]>) -> Self {
        let mut rng = match seed {
            Some(seed) => ChaCha20Rng::from_seed(seed),
            None => ChaCha20Rng::from_entropy(),
        };
        let key = SecretKey::generate(&mut rng);
        Self {
            key,
            rng,
            validity_secs: DEFAULT_CERT_VALIDITY_SECS,
        }
    }

    /// Seed expanded from a small integer, for tests and simulations.
    pub fn from_u64_seed(seed: u64) -> Self {
        let mut bytes = [0u8; 32];
        bytes[..8].copy_from_slice(&seed.to_be_bytes());
        Self::new(Some(bytes))
    }

    /// Restores a CA from its exported root key. Enrollment keys are then
    /// drawn from the OS RNG.
    pub fn from_key(key: SecretKey) -> Self {
        Self {
            key,
            rng: ChaCha20Rng::from_entropy(),
            validity_secs: DEFAULT_CERT_VALIDITY_SECS,
        }
    }

    pub fn with_validity(mut self, secs: u64) -> Self {
        self.validity_secs = secs;
        self
    }

    pub fn root_public_key(&self) -> PublicKey {
        self.key.public_key()
    }

    pub fn trust_anchor(&self) -> TrustAnchor {
        TrustAnchor::new(self.root_public_key())
    }

    pub fn export_key(&self) -> [u8; 32] {
        self.key.to_bytes()
    }

    /// Certifies an externally generated key.
    pub fn issue(
        &mut self,
        public_key: PublicKey,
        role: Role,
        now: u64,
    ) -> Result<Certificate, IdentityError> {
        let expires_at = now.saturating_add(self.validity_secs);
        if expires_at <= now {
            return Err(IdentityError::EmptyValidity);
        }
        let mut cert = Certificate {
            subject_address: public_key.address(),
            subject_role: role,
            subject_public_key: public_key,
            issued_at: now,
            expires_at,
            issuer_signature: SignatureBytes::default(),
        };
        cert.issuer_signature = self.key.sign(&cert.signed_bytes());
        Ok(cert)
    }

    /// Generates a fresh keypair and certifies it for `role`.
    pub fn enroll(&mut self, role: Role, now: u64) -> (Participant, SecretKey) {
        let key = SecretKey::generate(&mut self.rng);
        let cert = self
            .issue(key.public_key(), role, now)
            .expect("validity window is positive");
        (Participant::from_certificate(cert), key)
    }
}

impl fmt::Debug for CertificateAuthority {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CertificateAuthority")
            .field("root", &self.root_public_key())
            .finish_non_exhaustive()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::HashSet;

    const NOW: u64 = 1_700_000_000;

    #[test]
    fn fixed_seed_is_deterministic() {
        let a = CertificateAuthority::new(Some([7u8; 32]));
        let b = CertificateAuthority::new(Some([7u8; 32]));
        assert_eq!(a.root_public_key(), b.root_public_key());
    }

    #[test]
    fn random_roots_differ() {
        let a = CertificateAuthority::new(None);
        let b = CertificateAuthority::new(None);
        assert_ne!(a.root_public_key(), b.root_public_key());
    }

    #[test]
    fn exported_root_verifies_issued_certificate() {
        let mut ca = CertificateAuthority::from_u64_seed(1);
        let (p, _) = ca.enroll(Role::Isp, NOW);
        let exported = PublicKey::from_bytes(*ca.root_public_key().as_bytes());
        assert!(TrustAnchor::new(exported).certificate_valid(&p.cert, NOW));

        let restored = CertificateAuthority::from_key(SecretKey::from_bytes(&ca.export_key()).unwrap());
        assert_eq!(restored.root_public_key(), ca.root_public_key());
    }

    #[test]
    fn enroll_contract() {
        let mut ca = CertificateAuthority::from_u64_seed(2);
        let (p, key) = ca.enroll(Role::Isp, NOW);
        assert_eq!(p.role, Role::Isp);
        assert_eq!(p.cert.subject_role, Role::Isp);
        assert_eq!(p.address, Address::from_public_key(&p.public_key));
        assert_eq!(key.public_key(), p.public_key);
        assert!(ca.trust_anchor().certificate_valid(&p.cert, NOW));

        let other = CertificateAuthority::from_u64_seed(3);
        assert!(!other.trust_anchor().certificate_valid(&p.cert, NOW));
    }

    #[test]
    fn sign_verify_examples() {
        let mut ca = CertificateAuthority::from_u64_seed(4);
        let anchor = ca.trust_anchor();
        let (p, key) = ca.enroll(Role::Lea, NOW);
        let m = b"custody".to_vec();
        let s = sign(&key, &m);
        assert!(anchor.verify(&p.cert, &m, &s, NOW));

        let mut m2 = m.clone();
        m2.push(0);
        assert!(!anchor.verify(&p.cert, &m2, &s, NOW));

        assert!(!anchor.verify(&p.cert, &m, &s, p.cert.expires_at));
        assert!(!anchor.verify(&p.cert, &m, &SignatureBytes(vec![1, 2, 3]), NOW));
    }

    #[test]
    fn base64_and_binary_export() {
        let mut ca = CertificateAuthority::from_u64_seed(5);
        let (p, _) = ca.enroll(Role::Prosecutor, NOW);
        let text = p.cert.to_base64();
        assert_eq!(Certificate::from_base64(&text).unwrap(), p.cert);
        let bin = p.cert.to_canonical_bytes();
        assert_eq!(Certificate::from_canonical_bytes(&bin).unwrap(), p.cert);
    }

    #[test]
    fn ten_thousand_enrollments_have_distinct_addresses() {
        let mut ca = CertificateAuthority::from_u64_seed(6);
        let mut seen = HashSet::new();
        for _ in 0..10_000 {
            let key = SecretKey::generate(&mut ca.rng);
            assert!(seen.insert(key.public_key().address()));
        }
    }

    #[test]
    fn any_byte_flip_in_certificate_invalidates_it() {
        let mut ca = CertificateAuthority::from_u64_seed(8);
        let anchor = ca.trust_anchor();
        let (p, _) = ca.enroll(Role::Isp, NOW);
        let bytes = p.cert.to_canonical_bytes();
        for i in 0..bytes.len() {
            let mut t = bytes.clone();
            t[i] ^= 0x01;
            if let Ok(cert) = Certificate::from_canonical_bytes(&t) {
                assert!(!anchor.certificate_valid(&cert, NOW), "flip at byte {i} undetected");
            }
        }
    }

    proptest! {
        #[test]
        fn sign_then_verify_round_trips(msg in proptest::collection::vec(any::<u8>(), 0..512)) {
            let mut ca = CertificateAuthority::from_u64_seed(9);
            let anchor = ca.trust_anchor();
            let (p, key) = ca.enroll(Role::Isp, NOW);
            prop_assert!(anchor.verify(&p.cert, &msg, &sign(&key, &msg), NOW));
        }
    }
}
