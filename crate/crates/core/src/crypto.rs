//! Signing keys and signature verification.
//!
//! One signature scheme is used system-wide (Ed25519, scheme id `"ed25519"`).
//! A [`PublicKey`] always carries its scheme id so that credential documents
//! remain self-describing if the scheme is ever rotated.

use std::fs;
use std::path::Path;

use ring::signature::{self, Ed25519KeyPair, KeyPair as _};
use thiserror::Error;

use crate::canonical::Value;

pub const SCHEME_ED25519: &str = "ed25519";

/// PKCS#8 v1 prefix for a raw Ed25519 seed, used for deterministic test keys.
const PKCS8_ED25519_PREFIX: [u8; 16] = [
    0x30, 0x2e, 0x02, 0x01, 0x00, 0x30, 0x05, 0x06, 0x03, 0x2b, 0x65, 0x70, 0x04, 0x22, 0x04, 0x20,
];

#[derive(Debug, Error)]
pub enum CryptoError {
    #[error("unsupported signature scheme `{0}`")]
    UnsupportedScheme(String),
    #[error("malformed key material: {0}")]
    BadKeyMaterial(String),
    #[error("key file {path}: {detail}")]
    KeyFile { path: String, detail: String },
}

/// A verification key plus the scheme that interprets it.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PublicKey {
    pub scheme: String,
    pub key: Vec<u8>,
}

impl PublicKey {
    /// Check `sig` over `message`. Unknown schemes never verify.
    pub fn verify(&self, message: &[u8], sig: &[u8]) -> bool {
        if self.scheme != SCHEME_ED25519 {
            return false;
        }
        signature::UnparsedPublicKey::new(&signature::ED25519, &self.key)
            .verify(message, sig)
            .is_ok()
    }

    pub fn to_doc(&self) -> Value {
        Value::map()
            .field_str("scheme", &self.scheme)
            .field_bytes("key", &self.key)
            .build()
    }

    pub fn from_doc(doc: &Value) -> Result<Self, crate::canonical::DocError> {
        Ok(PublicKey {
            scheme: doc.get_str("scheme")?.to_string(),
            key: doc.get_bytes("key")?,
        })
    }
}

/// A signing key with its public half and a per-issuer serial counter.
///
/// Credential serials are monotone per issuer; the counter lives with the key
/// so that the issuing side has a stable handle for revocation.
pub struct KeyPair {
    inner: Ed25519KeyPair,
    pkcs8: Vec<u8>,
    public: PublicKey,
    next_serial: u64,
}

impl std::fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("KeyPair")
            .field("public", &hex::encode(&self.public.key))
            .field("next_serial", &self.next_serial)
            .finish_non_exhaustive()
    }
}

impl KeyPair {
    pub fn generate() -> Result<Self, CryptoError> {
        let rng = ring::rand::SystemRandom::new();
        let pkcs8 = Ed25519KeyPair::generate_pkcs8(&rng)
            .map_err(|_| CryptoError::BadKeyMaterial("key generation failed".into()))?;
        Self::from_pkcs8(pkcs8.as_ref(), 1)
    }

    /// Deterministic key from a 32-byte seed. Intended for tests and fixtures.
    pub fn from_seed(seed: &[u8; 32]) -> Result<Self, CryptoError> {
        let mut pkcs8 = PKCS8_ED25519_PREFIX.to_vec();
        pkcs8.extend_from_slice(seed);
        Self::from_pkcs8(&pkcs8, 1)
    }

    fn from_pkcs8(pkcs8: &[u8], next_serial: u64) -> Result<Self, CryptoError> {
        let inner = Ed25519KeyPair::from_pkcs8_maybe_unchecked(pkcs8)
            .map_err(|e| CryptoError::BadKeyMaterial(e.to_string()))?;
        let public = PublicKey {
            scheme: SCHEME_ED25519.to_string(),
            key: inner.public_key().as_ref().to_vec(),
        };
        Ok(KeyPair {
            inner,
            pkcs8: pkcs8.to_vec(),
            public,
            next_serial,
        })
    }

    pub fn public(&self) -> &PublicKey {
        &self.public
    }

    pub fn sign(&self, message: &[u8]) -> Vec<u8> {
        self.inner.sign(message).as_ref().to_vec()
    }

    /// Hand out the next credential serial for this key.
    pub fn take_serial(&mut self) -> u64 {
        let s = self.next_serial;
        self.next_serial += 1;
        s
    }

    pub fn next_serial(&self) -> u64 {
        self.next_serial
    }

    /// Skip ahead by `n` serials, e.g. to keep serials monotone across
    /// restarts without persisting every issuance.
    pub fn reserve_serials(&mut self, n: u64) {
        self.next_serial = self.next_serial.saturating_add(n);
    }

    pub fn to_doc(&self) -> Value {
        Value::map()
            .field_str("format", "key")
            .field_str("scheme", SCHEME_ED25519)
            .field_bytes("pkcs8", &self.pkcs8)
            .field_bytes("public", &self.public.key)
            .field_u64("next_serial", self.next_serial)
            .build()
    }

    pub fn from_doc(doc: &Value) -> Result<Self, CryptoError> {
        let scheme = doc
            .get_str("scheme")
            .map_err(|e| CryptoError::BadKeyMaterial(e.to_string()))?;
        if scheme != SCHEME_ED25519 {
            return Err(CryptoError::UnsupportedScheme(scheme.to_string()));
        }
        let pkcs8 = doc
            .get_bytes("pkcs8")
            .map_err(|e| CryptoError::BadKeyMaterial(e.to_string()))?;
        let next_serial = doc
            .get_u64("next_serial")
            .map_err(|e| CryptoError::BadKeyMaterial(e.to_string()))?;
        Self::from_pkcs8(&pkcs8, next_serial)
    }

    /// Write the key document to `path` with owner-only permissions.
    pub fn save(&self, path: &Path) -> Result<(), CryptoError> {
        let bytes = self.to_doc().to_bytes();
        let keyfile_err = |detail: String| CryptoError::KeyFile {
            path: path.display().to_string(),
            detail,
        };
        fs::write(path, &bytes).map_err(|e| keyfile_err(e.to_string()))?;
        #[cfg(unix)]
        {
            use std::os::unix::fs::PermissionsExt;
            fs::set_permissions(path, fs::Permissions::from_mode(0o600))
                .map_err(|e| keyfile_err(e.to_string()))?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CryptoError> {
        let keyfile_err = |detail: String| CryptoError::KeyFile {
            path: path.display().to_string(),
            detail,
        };
        let bytes = fs::read(path).map_err(|e| keyfile_err(e.to_string()))?;
        let doc = Value::parse(&bytes).map_err(|e| keyfile_err(e.to_string()))?;
        Self::from_doc(&doc)
    }
}

/// Fill `buf` with system randomness (nonces).
pub fn random_bytes(buf: &mut [u8]) {
    use ring::rand::SecureRandom;
    ring::rand::SystemRandom::new()
        .fill(buf)
        .expect("system randomness unavailable");
}

/// SHA-256, the digest used for audit chaining. 32 bytes.
pub fn sha256(data: &[u8]) -> [u8; 32] {
    use sha2::{Digest, Sha256};
    Sha256::digest(data).into()
}

pub const DIGEST_NAME: &str = "sha-256";

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sign_then_verify() {
        let kp = KeyPair::generate().unwrap();
        let sig = kp.sign(b"message");
        assert!(kp.public().verify(b"message", &sig));
        assert!(!kp.public().verify(b"other message", &sig));
        let other = KeyPair::generate().unwrap();
        assert!(!other.public().verify(b"message", &sig));
    }

    #[test]
    fn mutated_signature_fails() {
        let kp = KeyPair::generate().unwrap();
        let mut sig = kp.sign(b"message");
        sig[10] ^= 0x01;
        assert!(!kp.public().verify(b"message", &sig));
    }

    #[test]
    fn seeded_keys_are_deterministic() {
        let a = KeyPair::from_seed(&[9u8; 32]).unwrap();
        let b = KeyPair::from_seed(&[9u8; 32]).unwrap();
        assert_eq!(a.public(), b.public());
        assert_eq!(a.sign(b"x"), b.sign(b"x"));
    }

    #[test]
    fn serial_counter_survives_roundtrip() {
        let mut kp = KeyPair::generate().unwrap();
        assert_eq!(kp.take_serial(), 1);
        assert_eq!(kp.take_serial(), 2);
        let doc = kp.to_doc();
        let restored = KeyPair::from_doc(&doc).unwrap();
        assert_eq!(restored.next_serial(), 3);
        assert_eq!(restored.public(), kp.public());
    }

    #[test]
    fn unknown_scheme_never_verifies() {
        let kp = KeyPair::generate().unwrap();
        let sig = kp.sign(b"m");
        let pk = PublicKey {
            scheme: "rot13".into(),
            key: kp.public().key.clone(),
        };
        assert!(!pk.verify(b"m", &sig));
    }

    #[cfg(unix)]
    #[test]
    fn key_file_is_mode_restricted() {
        use std::os::unix::fs::PermissionsExt;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("user.key");
        KeyPair::generate().unwrap().save(&path).unwrap();
        let mode = std::fs::metadata(&path).unwrap().permissions().mode();
        assert_eq!(mode & 0o777, 0o600);
        assert!(KeyPair::load(&path).is_ok());
    }
}
