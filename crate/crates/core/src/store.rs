//! File-backed persistence: per-VO registry stores, trust-anchor
//! directories, and the small helpers shared by credential files.
//!
//! A VO occupies two files: an append-only audit log (the ground truth,
//! written first) and a snapshot (rewritten via temp file and atomic rename
//! after each mutation). On open the audit log is replayed and trusted over
//! the snapshot, so a crash between the two writes heals itself. Audit
//! records are framed as `<decimal length> <canonical bytes>\n` with a
//! header record naming the digest.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::audit::{AuditLog, AuditRecord};
use crate::canonical::{DocError, Value};
use crate::credential::{Credential, CredentialChain, IdentityCredential, RevocationList};
use crate::crypto::PublicKey;
use crate::registry::{RegistryError, VoRegistry};
use crate::subject::SubjectName;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("store io at {path}: {detail}")]
    Io { path: String, detail: String },
    #[error("corrupt store file {path}: {detail}")]
    Corrupt { path: String, detail: String },
    #[error(transparent)]
    Registry(#[from] RegistryError),
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> StoreError {
    StoreError::Io {
        path: path.display().to_string(),
        detail: e.to_string(),
    }
}

fn corrupt(path: &Path, detail: impl Into<String>) -> StoreError {
    StoreError::Corrupt {
        path: path.display().to_string(),
        detail: detail.into(),
    }
}

/// Write `bytes` to `path` through a temp file and atomic rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| io_err(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| io_err(path, e))?;
    Ok(())
}

/// One VO's registry bound to its snapshot and audit files.
pub struct VoStore {
    registry: VoRegistry,
    snapshot_path: PathBuf,
    audit_path: PathBuf,
    persisted_records: usize,
}

impl VoStore {
    fn paths(dir: &Path, vo: &str) -> (PathBuf, PathBuf) {
        (
            dir.join(format!("{vo}.registry")),
            dir.join(format!("{vo}.audit")),
        )
    }

    /// Create a fresh VO store; fails if one already exists.
    pub fn create(dir: &Path, vo: &str, owner: SubjectName) -> Result<VoStore, StoreError> {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        let (snapshot_path, audit_path) = Self::paths(dir, vo);
        if snapshot_path.exists() || audit_path.exists() {
            return Err(corrupt(&snapshot_path, "VO store already exists"));
        }
        let registry = VoRegistry::new(vo, owner)?;
        let header = Value::map()
            .field_str("format", "vo-audit")
            .field_str("hash", AuditLog::digest_name())
            .field_str("vo", vo)
            .build();
        let mut audit_file = fs::File::create(&audit_path).map_err(|e| io_err(&audit_path, e))?;
        write_frame(&mut audit_file, &header.to_bytes()).map_err(|e| io_err(&audit_path, e))?;
        write_atomic(&snapshot_path, &registry.snapshot_doc().to_bytes())?;
        Ok(VoStore {
            registry,
            snapshot_path,
            audit_path,
            persisted_records: 0,
        })
    }

    /// Open an existing store. The audit log is replayed and preferred over
    /// the snapshot if the two disagree (a torn final write).
    pub fn open(dir: &Path, vo: &str) -> Result<VoStore, StoreError> {
        let (snapshot_path, audit_path) = Self::paths(dir, vo);
        let snapshot_bytes = fs::read(&snapshot_path).map_err(|e| io_err(&snapshot_path, e))?;
        let snapshot_doc =
            Value::parse(&snapshot_bytes).map_err(|e| corrupt(&snapshot_path, e.to_string()))?;
        let owner = SubjectName::parse(
            snapshot_doc
                .get_str("owner")
                .map_err(|e| corrupt(&snapshot_path, e.to_string()))?,
        )
        .map_err(|e| corrupt(&snapshot_path, e.to_string()))?;

        let audit_bytes = fs::read(&audit_path).map_err(|e| io_err(&audit_path, e))?;
        let mut frames = read_frames(&audit_bytes).map_err(|e| corrupt(&audit_path, e))?;
        if frames.is_empty() {
            return Err(corrupt(&audit_path, "missing audit header"));
        }
        let header = frames.remove(0);
        if header
            .get_str("format")
            .map_err(|e| corrupt(&audit_path, e.to_string()))?
            != "vo-audit"
        {
            return Err(corrupt(&audit_path, "bad audit header"));
        }
        let mut records = Vec::with_capacity(frames.len());
        for frame in &frames {
            records.push(
                AuditRecord::from_doc(frame).map_err(|e| corrupt(&audit_path, e.to_string()))?,
            );
        }

        let replayed = VoRegistry::replay(vo, owner, &records)?;
        if !replayed.verify_audit_chain() {
            return Err(corrupt(&audit_path, "audit hash chain does not verify"));
        }
        let store = VoStore {
            persisted_records: records.len(),
            registry: replayed,
            snapshot_path,
            audit_path,
        };
        // heal a snapshot that fell behind the audit log
        let current = store.registry.snapshot_doc().to_bytes();
        if current != snapshot_bytes {
            write_atomic(&store.snapshot_path, &current)?;
        }
        Ok(store)
    }

    pub fn registry(&self) -> &VoRegistry {
        &self.registry
    }

    /// Apply one mutating operation and persist it: new audit records are
    /// appended first, then the snapshot is atomically replaced.
    pub fn mutate<T>(
        &mut self,
        op: impl FnOnce(&mut VoRegistry) -> Result<T, RegistryError>,
    ) -> Result<T, StoreError> {
        let result = op(&mut self.registry)?;
        let records = self.registry.audit().records();
        if records.len() > self.persisted_records {
            let mut file = fs::OpenOptions::new()
                .append(true)
                .open(&self.audit_path)
                .map_err(|e| io_err(&self.audit_path, e))?;
            for record in &records[self.persisted_records..] {
                write_frame(&mut file, &record.to_doc().to_bytes())
                    .map_err(|e| io_err(&self.audit_path, e))?;
            }
            file.sync_data().map_err(|e| io_err(&self.audit_path, e))?;
            self.persisted_records = records.len();
        }
        write_atomic(
            &self.snapshot_path,
            &self.registry.snapshot_doc().to_bytes(),
        )?;
        Ok(result)
    }
}

fn write_frame(w: &mut impl Write, bytes: &[u8]) -> std::io::Result<()> {
    write!(w, "{} ", bytes.len())?;
    w.write_all(bytes)?;
    w.write_all(b"\n")
}

fn read_frames(bytes: &[u8]) -> Result<Vec<Value>, String> {
    let mut frames = Vec::new();
    let mut pos = 0;
    while pos < bytes.len() {
        let space = bytes[pos..]
            .iter()
            .position(|b| *b == b' ')
            .ok_or("missing frame length separator")?;
        let len: usize = std::str::from_utf8(&bytes[pos..pos + space])
            .map_err(|_| "frame length not UTF-8".to_string())?
            .parse()
            .map_err(|_| "bad frame length".to_string())?;
        let start = pos + space + 1;
        let end = start + len;
        if end + 1 > bytes.len() {
            return Err("truncated frame".into());
        }
        if bytes[end] != b'\n' {
            return Err("missing frame terminator".into());
        }
        frames.push(Value::parse(&bytes[start..end]).map_err(|e| e.to_string())?);
        pos = end + 1;
    }
    Ok(frames)
}

// ---- credential file helpers ----

pub fn save_doc(path: &Path, doc: &Value) -> Result<(), StoreError> {
    write_atomic(path, &doc.to_bytes())
}

pub fn load_doc(path: &Path) -> Result<Value, StoreError> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    Value::parse(&bytes).map_err(|e| corrupt(path, e.to_string()))
}

pub fn load_identity(path: &Path) -> Result<IdentityCredential, StoreError> {
    IdentityCredential::from_doc(&load_doc(path)?).map_err(|e| corrupt(path, e.to_string()))
}

pub fn load_chain(path: &Path) -> Result<CredentialChain, StoreError> {
    CredentialChain::from_doc(&load_doc(path)?).map_err(|e| corrupt(path, e.to_string()))
}

pub fn load_revocation_list(path: &Path) -> Result<RevocationList, StoreError> {
    RevocationList::from_doc(&load_doc(path)?).map_err(|e| corrupt(path, e.to_string()))
}

/// Load every trust anchor in a directory (one credential file per anchor),
/// in file-name order.
pub fn load_trust_anchor_dir(dir: &Path) -> Result<Vec<IdentityCredential>, StoreError> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| io_err(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    paths.sort();
    let mut anchors = Vec::new();
    for path in paths {
        anchors.push(load_identity(&path)?);
    }
    Ok(anchors)
}

/// Chain file helper: an array of credential documents, leaf first.
pub fn save_chain(path: &Path, chain: &CredentialChain) -> Result<(), StoreError> {
    save_doc(path, &chain.to_doc())
}

pub fn save_credential(path: &Path, credential: &Credential) -> Result<(), StoreError> {
    save_doc(path, &credential.to_doc())
}

/// `{"servers": [{"vo": ..., "public_key": {...}}, ...]}` — the registered
/// attribute-server keys a client or site trusts.
pub fn load_trusted_servers(path: &Path) -> Result<BTreeMap<String, PublicKey>, StoreError> {
    let doc = load_doc(path)?;
    trusted_servers_from_doc(&doc).map_err(|e| corrupt(path, e.to_string()))
}

pub fn trusted_servers_from_doc(doc: &Value) -> Result<BTreeMap<String, PublicKey>, DocError> {
    let mut map = BTreeMap::new();
    for s in doc.get_array("servers")? {
        map.insert(
            s.get_str("vo")?.to_string(),
            PublicKey::from_doc(s.get_map("public_key")?)?,
        );
    }
    Ok(map)
}

pub fn trusted_servers_to_doc(servers: &BTreeMap<String, PublicKey>) -> Value {
    Value::map()
        .field(
            "servers",
            Value::Array(
                servers
                    .iter()
                    .map(|(vo, key)| {
                        Value::map()
                            .field_str("vo", vo)
                            .field("public_key", key.to_doc())
                            .build()
                    })
                    .collect(),
            ),
        )
        .build()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::registry::{Grant, GrantKind};
    use crate::schedule::TimeSchedule;
    use crate::testutil::{subject, FIXED_NOW};
    use std::collections::BTreeSet;

    fn owner() -> SubjectName {
        subject("owner")
    }

    #[test]
    fn create_mutate_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = VoStore::create(dir.path(), "datagrid", owner()).unwrap();
        let wp6 = store
            .mutate(|r| {
                r.create_group(
                    &owner(),
                    &BTreeSet::from([r.root()]),
                    "wp6",
                    false,
                    FIXED_NOW,
                )
            })
            .unwrap();
        store
            .mutate(|r| {
                r.grant(
                    &owner(),
                    Grant {
                        user: subject("alice"),
                        scope: wp6,
                        kind: GrantKind::Membership,
                        schedule: TimeSchedule::Always,
                    },
                    FIXED_NOW,
                )
            })
            .unwrap();
        drop(store);

        let reopened = VoStore::open(dir.path(), "datagrid").unwrap();
        let attrs: Vec<String> = reopened
            .registry()
            .effective_attributes(&subject("alice"), FIXED_NOW)
            .iter()
            .map(|f| f.render())
            .collect();
        assert_eq!(attrs, ["/datagrid", "/datagrid/wp6"]);
        assert!(reopened.registry().verify_audit_chain());
    }

    #[test]
    fn create_refuses_existing_store() {
        let dir = tempfile::tempdir().unwrap();
        VoStore::create(dir.path(), "datagrid", owner()).unwrap();
        assert!(VoStore::create(dir.path(), "datagrid", owner()).is_err());
        // a different VO in the same directory is fine
        assert!(VoStore::create(dir.path(), "cms", owner()).is_ok());
    }

    #[test]
    fn failed_mutation_persists_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = VoStore::create(dir.path(), "datagrid", owner()).unwrap();
        let err = store.mutate(|r| {
            r.create_group(
                &subject("intruder"),
                &BTreeSet::from([r.root()]),
                "x",
                false,
                FIXED_NOW,
            )
        });
        assert!(err.is_err());
        let reopened = VoStore::open(dir.path(), "datagrid").unwrap();
        assert_eq!(reopened.registry().audit().len(), 0);
    }

    #[test]
    fn stale_snapshot_is_healed_from_audit() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = VoStore::create(dir.path(), "datagrid", owner()).unwrap();
        let stale = store.registry().snapshot_doc().to_bytes();
        store
            .mutate(|r| {
                r.create_group(
                    &owner(),
                    &BTreeSet::from([r.root()]),
                    "wp6",
                    false,
                    FIXED_NOW,
                )
            })
            .unwrap();
        // simulate the crash window: snapshot reverted, audit already appended
        let (snapshot_path, _) = VoStore::paths(dir.path(), "datagrid");
        fs::write(&snapshot_path, &stale).unwrap();
        drop(store);

        let reopened = VoStore::open(dir.path(), "datagrid").unwrap();
        assert!(reopened
            .registry()
            .resolve_group(&crate::fqan::Fqan::parse("/datagrid/wp6").unwrap())
            .is_some());
    }

    #[test]
    fn tampered_audit_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = VoStore::create(dir.path(), "datagrid", owner()).unwrap();
        store
            .mutate(|r| {
                r.create_group(
                    &owner(),
                    &BTreeSet::from([r.root()]),
                    "wp6",
                    false,
                    FIXED_NOW,
                )
            })
            .unwrap();
        drop(store);
        let (_, audit_path) = VoStore::paths(dir.path(), "datagrid");
        let mut bytes = fs::read(&audit_path).unwrap();
        // flip a byte inside the last record's payload
        let n = bytes.len();
        bytes[n - 20] ^= 0x01;
        fs::write(&audit_path, &bytes).unwrap();
        assert!(VoStore::open(dir.path(), "datagrid").is_err());
    }

    #[test]
    fn separate_vo_files_keep_queries_isolated() {
        let dir = tempfile::tempdir().unwrap();
        VoStore::create(dir.path(), "voa", owner()).unwrap();
        VoStore::create(dir.path(), "vob", owner()).unwrap();
        // destroying B's files must not affect queries about A
        fs::remove_file(dir.path().join("vob.registry")).unwrap();
        fs::remove_file(dir.path().join("vob.audit")).unwrap();
        let a = VoStore::open(dir.path(), "voa").unwrap();
        assert!(a
            .registry()
            .effective_attributes(&subject("x"), FIXED_NOW)
            .is_empty());
        assert!(VoStore::open(dir.path(), "vob").is_err());
    }

    #[test]
    fn trusted_server_file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let key = crate::crypto::KeyPair::generate().unwrap();
        let servers = BTreeMap::from([("datagrid".to_string(), key.public().clone())]);
        let path = dir.path().join("servers");
        save_doc(&path, &trusted_servers_to_doc(&servers)).unwrap();
        assert_eq!(load_trusted_servers(&path).unwrap(), servers);
    }

    #[test]
    fn trust_anchor_dir_loads_sorted() {
        let dir = tempfile::tempdir().unwrap();
        let world = crate::testutil::World::new();
        save_doc(&dir.path().join("ca.cred"), &world.ca_credential.to_doc()).unwrap();
        let anchors = load_trust_anchor_dir(dir.path()).unwrap();
        assert_eq!(anchors, vec![world.ca_credential.clone()]);
    }
}
