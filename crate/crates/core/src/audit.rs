//! Hash-chained audit log.
//!
//! Every registry mutation appends one record. Each record's hash covers the
//! previous record's hash concatenated with the canonical bytes of the
//! record header and payload, so any edit, reorder, or deletion breaks the
//! chain. The genesis record links from 32 zero bytes.

use crate::canonical::{DocError, Value};
use crate::crypto::{sha256, DIGEST_NAME};
use crate::subject::SubjectName;

pub const GENESIS_HASH: [u8; 32] = [0u8; 32];

/// One entry in the audit chain.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuditRecord {
    pub seq: u64,
    pub timestamp: i64,
    pub actor: SubjectName,
    pub action: String,
    pub payload: Value,
    pub prev_hash: [u8; 32],
    pub hash: [u8; 32],
}

impl AuditRecord {
    /// The bytes the hash covers, beyond `prev_hash`.
    fn hashed_body(&self) -> Vec<u8> {
        Value::map()
            .field_u64("seq", self.seq)
            .field_int("timestamp", self.timestamp)
            .field_str("actor", self.actor.render())
            .field_str("action", &self.action)
            .field("payload", self.payload.clone())
            .build()
            .to_bytes()
    }

    fn compute_hash(&self) -> [u8; 32] {
        let mut input = Vec::with_capacity(32 + 256);
        input.extend_from_slice(&self.prev_hash);
        input.extend_from_slice(&self.hashed_body());
        sha256(&input)
    }

    pub fn to_doc(&self) -> Value {
        Value::map()
            .field_u64("seq", self.seq)
            .field_int("timestamp", self.timestamp)
            .field_str("actor", self.actor.render())
            .field_str("action", &self.action)
            .field("payload", self.payload.clone())
            .field_bytes("prev_hash", self.prev_hash)
            .field_bytes("hash", self.hash)
            .build()
    }

    pub fn from_doc(doc: &Value) -> Result<Self, DocError> {
        let digest = |field: &str| -> Result<[u8; 32], DocError> {
            let bytes = doc.get_bytes(field)?;
            bytes.try_into().map_err(|_| DocError::OutOfRange {
                field: field.into(),
                detail: "digest must be 32 bytes".into(),
            })
        };
        Ok(AuditRecord {
            seq: doc.get_u64("seq")?,
            timestamp: doc.get_int("timestamp")?,
            actor: SubjectName::parse(doc.get_str("actor")?).map_err(|e| DocError::OutOfRange {
                field: "actor".into(),
                detail: e.to_string(),
            })?,
            action: doc.get_str("action")?.to_string(),
            payload: doc.get("payload")?.clone(),
            prev_hash: digest("prev_hash")?,
            hash: digest("hash")?,
        })
    }
}

/// An append-only, hash-chained sequence of [`AuditRecord`]s.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AuditLog {
    records: Vec<AuditRecord>,
}

impl AuditLog {
    pub fn new() -> AuditLog {
        AuditLog {
            records: Vec::new(),
        }
    }

    pub fn from_records(records: Vec<AuditRecord>) -> AuditLog {
        AuditLog { records }
    }

    pub fn records(&self) -> &[AuditRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn since(&self, seq: u64) -> &[AuditRecord] {
        let start = self
            .records
            .iter()
            .position(|r| r.seq >= seq)
            .unwrap_or(self.records.len());
        &self.records[start..]
    }

    /// Append a new record, computing its position and hash. Returns the
    /// completed record.
    pub fn append(
        &mut self,
        timestamp: i64,
        actor: SubjectName,
        action: impl Into<String>,
        payload: Value,
    ) -> &AuditRecord {
        let prev_hash = self.records.last().map_or(GENESIS_HASH, |r| r.hash);
        let mut record = AuditRecord {
            seq: self.records.len() as u64,
            timestamp,
            actor,
            action: action.into(),
            payload,
            prev_hash,
            hash: [0u8; 32],
        };
        record.hash = record.compute_hash();
        self.records.push(record);
        self.records.last().expect("just pushed")
    }

    /// Recompute the chain from genesis; true iff every link matches.
    pub fn verify(&self) -> bool {
        let mut prev = GENESIS_HASH;
        for (i, record) in self.records.iter().enumerate() {
            if record.seq != i as u64
                || record.prev_hash != prev
                || record.compute_hash() != record.hash
            {
                return false;
            }
            prev = record.hash;
        }
        true
    }

    /// Name of the digest used in file headers.
    pub fn digest_name() -> &'static str {
        DIGEST_NAME
    }
}
