//! Local credential mapping: grid identity plus VO attributes in, local
//! uid/gid out.
//!
//! Two rule kinds drive the uid choice: static per-subject accounts, and
//! pool rules that lease a generic account keyed by the encoded subject.
//! Pool leases are sticky (a returning subject gets the same account back),
//! allocated lexicographically-first-free, and held in a lease directory
//! where each binding is one record file published by temp-file-plus-rename
//! after the account itself is claimed with an exclusive create. That makes
//! acquisition safe across processes sharing the directory.
//!
//! Nothing here switches process credentials; callers apply the returned
//! uid/gid themselves.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::canonical::{DocError, Value};
use crate::fqan::{Fqan, FqanPattern};
use crate::subject::SubjectName;

#[derive(Debug, Error)]
pub enum MappingError {
    #[error("no mapping rule applies to this subject")]
    NoMappingRule,
    #[error("pool `{0}` has no free accounts")]
    PoolExhausted(String),
    #[error("pool `{0}` is not defined")]
    UnknownPool(String),
    #[error("no lease held by this subject in pool `{0}`")]
    NoSuchLease(String),
    #[error("mapping policy invalid: {0}")]
    BadPolicy(String),
    #[error("malformed document: {0}")]
    Malformed(#[from] DocError),
    #[error("lease io: {0}")]
    Io(#[from] std::io::Error),
}

/// The local identity a mapped request runs under.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LocalCredential {
    pub account: String,
    pub uid: u32,
    pub primary_gid: u32,
    pub supplementary_gids: BTreeSet<u32>,
}

impl LocalCredential {
    pub fn new(
        account: impl Into<String>,
        uid: u32,
        primary_gid: u32,
        mut supplementary_gids: BTreeSet<u32>,
    ) -> Self {
        supplementary_gids.remove(&primary_gid);
        LocalCredential {
            account: account.into(),
            uid,
            primary_gid,
            supplementary_gids,
        }
    }

    pub fn to_doc(&self) -> Value {
        Value::map()
            .field_str("account", &self.account)
            .field_u64("uid", self.uid.into())
            .field_u64("primary_gid", self.primary_gid.into())
            .field(
                "supplementary_gids",
                Value::Array(
                    self.supplementary_gids
                        .iter()
                        .map(|g| Value::Int(i64::from(*g)))
                        .collect(),
                ),
            )
            .build()
    }

    pub fn from_doc(doc: &Value) -> Result<Self, DocError> {
        let mut gids = BTreeSet::new();
        for g in doc.get_array("supplementary_gids")? {
            match g {
                Value::Int(n) if *n >= 0 && *n <= i64::from(u32::MAX) => gids.insert(*n as u32),
                _ => {
                    return Err(DocError::OutOfRange {
                        field: "supplementary_gids".into(),
                        detail: "gid out of range".into(),
                    })
                }
            };
        }
        Ok(LocalCredential::new(
            doc.get_str("account")?,
            doc.get_u32("uid")?,
            doc.get_u32("primary_gid")?,
            gids,
        ))
    }
}

/// Encode a subject for use as a lease file name: render, lowercase ASCII
/// letters, percent-encode every byte outside `[a-z0-9]` as lowercase
/// `%hh`.
///
/// Distinct rendered subjects encode distinctly except for ASCII letter
/// case, which is deliberately folded (subject comparison in mapped
/// environments has historically been case-insensitive).
pub fn encode_subject(subject: &SubjectName) -> String {
    let mut out = String::new();
    for b in subject.render().bytes() {
        let b = b.to_ascii_lowercase();
        if b.is_ascii_lowercase() || b.is_ascii_digit() {
            out.push(b as char);
        } else {
            out.push_str(&format!("%{b:02x}"));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum UidRule {
    /// A predefined account for one subject.
    Static {
        subject: SubjectName,
        account: String,
        uid: u32,
        default_gid: u32,
    },
    /// Lease from `pool` when any presented FQAN matches the pattern.
    Pool {
        fqan_pattern: FqanPattern,
        pool: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GidRule {
    pub fqan_pattern: FqanPattern,
    pub gid: u32,
    pub primary: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PoolSpec {
    pub name: String,
    pub default_gid: u32,
    /// `(account, uid)` pairs; allocation order is lexicographic by account.
    pub accounts: Vec<(String, u32)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MappingPolicy {
    pub uid_rules: Vec<UidRule>,
    pub gid_rules: Vec<GidRule>,
    pub pools: Vec<PoolSpec>,
}

impl MappingPolicy {
    /// Structural checks: at least one uid rule, pool references resolve,
    /// account names unique per pool.
    pub fn validate(&self) -> Result<(), MappingError> {
        if self.uid_rules.is_empty() {
            return Err(MappingError::BadPolicy(
                "at least one uid rule is required".into(),
            ));
        }
        for rule in &self.uid_rules {
            if let UidRule::Pool { pool, .. } = rule {
                if self.pool(pool).is_none() {
                    return Err(MappingError::UnknownPool(pool.clone()));
                }
            }
        }
        for pool in &self.pools {
            let mut seen = BTreeSet::new();
            for (account, _) in &pool.accounts {
                if !seen.insert(account) {
                    return Err(MappingError::BadPolicy(format!(
                        "pool `{}` lists account `{}` twice",
                        pool.name, account
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn pool(&self, name: &str) -> Option<&PoolSpec> {
        self.pools.iter().find(|p| p.name == name)
    }

    pub fn to_doc(&self) -> Value {
        let uid_rules = self
            .uid_rules
            .iter()
            .map(|r| match r {
                UidRule::Static {
                    subject,
                    account,
                    uid,
                    default_gid,
                } => Value::map()
                    .field_str("type", "static")
                    .field_str("subject", subject.render())
                    .field_str("account", account)
                    .field_u64("uid", (*uid).into())
                    .field_u64("default_gid", (*default_gid).into())
                    .build(),
                UidRule::Pool { fqan_pattern, pool } => Value::map()
                    .field_str("type", "pool")
                    .field_str("fqan_pattern", fqan_pattern.render())
                    .field_str("pool", pool)
                    .build(),
            })
            .collect();
        let gid_rules = self
            .gid_rules
            .iter()
            .map(|r| {
                Value::map()
                    .field_str("fqan_pattern", r.fqan_pattern.render())
                    .field_u64("gid", r.gid.into())
                    .field_bool("primary", r.primary)
                    .build()
            })
            .collect();
        let pools = self
            .pools
            .iter()
            .map(|p| {
                Value::map()
                    .field_str("name", &p.name)
                    .field_u64("default_gid", p.default_gid.into())
                    .field(
                        "accounts",
                        Value::Array(
                            p.accounts
                                .iter()
                                .map(|(a, uid)| {
                                    Value::map()
                                        .field_str("account", a)
                                        .field_u64("uid", (*uid).into())
                                        .build()
                                })
                                .collect(),
                        ),
                    )
                    .build()
            })
            .collect();
        Value::map()
            .field_str("format", "mapping-policy")
            .field("uid_rules", Value::Array(uid_rules))
            .field("gid_rules", Value::Array(gid_rules))
            .field("pools", Value::Array(pools))
            .build()
    }

    pub fn from_doc(doc: &Value) -> Result<Self, MappingError> {
        let bad = |detail: String| MappingError::BadPolicy(detail);
        let mut uid_rules = Vec::new();
        for r in doc.get_array("uid_rules")? {
            uid_rules.push(match r.get_str("type")? {
                "static" => UidRule::Static {
                    subject: SubjectName::parse(r.get_str("subject")?)
                        .map_err(|e| bad(e.to_string()))?,
                    account: r.get_str("account")?.to_string(),
                    uid: r.get_u32("uid")?,
                    default_gid: r.get_u32("default_gid")?,
                },
                "pool" => UidRule::Pool {
                    fqan_pattern: FqanPattern::parse(r.get_str("fqan_pattern")?)
                        .map_err(|e| bad(e.to_string()))?,
                    pool: r.get_str("pool")?.to_string(),
                },
                other => return Err(bad(format!("unknown uid rule type `{other}`"))),
            });
        }
        let mut gid_rules = Vec::new();
        for r in doc.get_array("gid_rules")? {
            gid_rules.push(GidRule {
                fqan_pattern: FqanPattern::parse(r.get_str("fqan_pattern")?)
                    .map_err(|e| bad(e.to_string()))?,
                gid: r.get_u32("gid")?,
                primary: r.get_bool("primary")?,
            });
        }
        let mut pools = Vec::new();
        for p in doc.get_array("pools")? {
            let mut accounts = Vec::new();
            for a in p.get_array("accounts")? {
                accounts.push((a.get_str("account")?.to_string(), a.get_u32("uid")?));
            }
            pools.push(PoolSpec {
                name: p.get_str("name")?.to_string(),
                default_gid: p.get_u32("default_gid")?,
                accounts,
            });
        }
        let policy = MappingPolicy {
            uid_rules,
            gid_rules,
            pools,
        };
        policy.validate()?;
        Ok(policy)
    }
}

/// A held lease as stored on disk.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LeaseRecord {
    pub pool: String,
    pub account: String,
    pub uid: u32,
    pub subject: SubjectName,
    pub leased_at: i64,
    pub last_used: i64,
}

impl LeaseRecord {
    fn to_doc(&self) -> Value {
        Value::map()
            .field_str("pool", &self.pool)
            .field_str("account", &self.account)
            .field_u64("uid", self.uid.into())
            .field_str("subject", self.subject.render())
            .field_int("leased_at", self.leased_at)
            .field_int("last_used", self.last_used)
            .build()
    }

    fn from_doc(doc: &Value) -> Result<Self, MappingError> {
        Ok(LeaseRecord {
            pool: doc.get_str("pool")?.to_string(),
            account: doc.get_str("account")?.to_string(),
            uid: doc.get_u32("uid")?,
            subject: SubjectName::parse(doc.get_str("subject")?)
                .map_err(|e| MappingError::BadPolicy(e.to_string()))?,
            leased_at: doc.get_int("leased_at")?,
            last_used: doc.get_int("last_used")?,
        })
    }
}

/// The on-disk lease store: `<dir>/<pool>/<encoded_subject>` record files
/// plus `<dir>/<pool>/.claims/<account>` exclusive-create claim markers.
#[derive(Debug, Clone)]
pub struct LeaseLedger {
    dir: PathBuf,
}

impl LeaseLedger {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, MappingError> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(LeaseLedger { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn record_path(&self, pool: &str, encoded: &str) -> PathBuf {
        self.dir.join(pool).join(encoded)
    }

    fn claim_path(&self, pool: &str, account: &str) -> PathBuf {
        self.dir.join(pool).join(".claims").join(account)
    }

    fn read_record(path: &Path) -> Result<Option<LeaseRecord>, MappingError> {
        match fs::read(path) {
            Ok(bytes) => Ok(Some(LeaseRecord::from_doc(&Value::parse(&bytes)?)?)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    fn write_record(&self, record: &LeaseRecord) -> Result<(), MappingError> {
        let encoded = encode_subject(&record.subject);
        let path = self.record_path(&record.pool, &encoded);
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, record.to_doc().to_bytes())?;
        fs::rename(&tmp, &path)?;
        Ok(())
    }

    /// Acquire (or refresh) a lease for `subject` in `pool`.
    ///
    /// An existing binding is returned unchanged with `last_used` bumped.
    /// Otherwise the lexicographically first unclaimed account is bound: the
    /// claim marker is created with `create_new` (atomic across processes),
    /// then the record is published by rename.
    pub fn acquire(
        &self,
        pool: &PoolSpec,
        subject: &SubjectName,
        now: i64,
    ) -> Result<(String, u32), MappingError> {
        let encoded = encode_subject(subject);
        fs::create_dir_all(self.dir.join(&pool.name).join(".claims"))?;

        if let Some(mut record) = Self::read_record(&self.record_path(&pool.name, &encoded))? {
            record.last_used = now;
            self.write_record(&record)?;
            return Ok((record.account, record.uid));
        }

        let mut accounts = pool.accounts.clone();
        accounts.sort();
        for (account, uid) in accounts {
            let claim = self.claim_path(&pool.name, &account);
            match fs::OpenOptions::new()
                .write(true)
                .create_new(true)
                .open(&claim)
            {
                Ok(mut file) => {
                    use std::io::Write;
                    let _ = file.write_all(encoded.as_bytes());
                    // lost a same-subject race? hand back the winner's account
                    if let Some(existing) =
                        Self::read_record(&self.record_path(&pool.name, &encoded))?
                    {
                        let _ = fs::remove_file(&claim);
                        return Ok((existing.account, existing.uid));
                    }
                    let record = LeaseRecord {
                        pool: pool.name.clone(),
                        account: account.clone(),
                        uid,
                        subject: subject.clone(),
                        leased_at: now,
                        last_used: now,
                    };
                    self.write_record(&record)?;
                    return Ok((account, uid));
                }
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
                Err(e) => return Err(e.into()),
            }
        }
        Err(MappingError::PoolExhausted(pool.name.clone()))
    }

    /// Free the binding held by `subject` in `pool`.
    pub fn release(&self, pool: &str, subject: &SubjectName) -> Result<(), MappingError> {
        let encoded = encode_subject(subject);
        let path = self.record_path(pool, &encoded);
        let record =
            Self::read_record(&path)?.ok_or_else(|| MappingError::NoSuchLease(pool.to_string()))?;
        fs::remove_file(&path)?;
        let _ = fs::remove_file(self.claim_path(pool, &record.account));
        Ok(())
    }

    /// Free leases idle for at least `idle_seconds` and clean up claim
    /// markers orphaned by crashes. Not safe to run concurrently with
    /// acquisitions; it is a deliberate operator action.
    pub fn gc(&self, idle_seconds: i64, now: i64) -> Result<Vec<(String, String)>, MappingError> {
        let mut released = Vec::new();
        for pool_entry in fs::read_dir(&self.dir)? {
            let pool_dir = pool_entry?.path();
            if !pool_dir.is_dir() {
                continue;
            }
            let pool = pool_dir
                .file_name()
                .unwrap_or_default()
                .to_string_lossy()
                .to_string();
            let mut live_accounts = BTreeSet::new();
            for entry in fs::read_dir(&pool_dir)? {
                let path = entry?.path();
                if !path.is_file() {
                    continue;
                }
                let Some(record) = Self::read_record(&path)? else {
                    continue;
                };
                if now - record.last_used >= idle_seconds {
                    fs::remove_file(&path)?;
                    let _ = fs::remove_file(self.claim_path(&pool, &record.account));
                    released.push((pool.clone(), record.account));
                } else {
                    live_accounts.insert(record.account);
                }
            }
            let claims_dir = pool_dir.join(".claims");
            if claims_dir.is_dir() {
                for entry in fs::read_dir(&claims_dir)? {
                    let path = entry?.path();
                    let account = path
                        .file_name()
                        .unwrap_or_default()
                        .to_string_lossy()
                        .to_string();
                    if !live_accounts.contains(&account) {
                        let _ = fs::remove_file(&path);
                    }
                }
            }
        }
        Ok(released)
    }

    /// All live leases, for inspection and invariant checks.
    pub fn leases(&self) -> Result<Vec<LeaseRecord>, MappingError> {
        let mut out = Vec::new();
        for pool_entry in fs::read_dir(&self.dir)? {
            let pool_dir = pool_entry?.path();
            if !pool_dir.is_dir() {
                continue;
            }
            for entry in fs::read_dir(&pool_dir)? {
                let path = entry?.path();
                if path.is_file() {
                    if let Some(record) = Self::read_record(&path)? {
                        out.push(record);
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Map a subject with its presented FQANs to a local credential.
///
/// The first applicable uid rule wins; every matching gid rule contributes.
/// The primary gid is the first matching rule flagged `primary`, falling
/// back to the static rule's or pool's default.
pub fn lcmaps_map(
    policy: &MappingPolicy,
    ledger: &LeaseLedger,
    subject: &SubjectName,
    fqans: &[Fqan],
    now: i64,
) -> Result<LocalCredential, MappingError> {
    policy.validate()?;

    let mut chosen: Option<(String, u32, u32)> = None; // account, uid, default gid
    for rule in &policy.uid_rules {
        match rule {
            UidRule::Static {
                subject: rule_subject,
                account,
                uid,
                default_gid,
            } => {
                if rule_subject == subject {
                    chosen = Some((account.clone(), *uid, *default_gid));
                    break;
                }
            }
            UidRule::Pool { fqan_pattern, pool } => {
                if fqans.iter().any(|f| fqan_pattern.matches(f)) {
                    let spec = policy
                        .pool(pool)
                        .ok_or_else(|| MappingError::UnknownPool(pool.clone()))?;
                    let (account, uid) = ledger.acquire(spec, subject, now)?;
                    chosen = Some((account, uid, spec.default_gid));
                    break;
                }
            }
        }
    }
    let (account, uid, default_gid) = chosen.ok_or(MappingError::NoMappingRule)?;

    let mut primary = None;
    let mut supplementary = BTreeSet::new();
    for rule in &policy.gid_rules {
        if fqans.iter().any(|f| rule.fqan_pattern.matches(f)) {
            if rule.primary && primary.is_none() {
                primary = Some(rule.gid);
            } else {
                supplementary.insert(rule.gid);
            }
        }
    }
    Ok(LocalCredential::new(
        account,
        uid,
        primary.unwrap_or(default_gid),
        supplementary,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{subject, FIXED_NOW};
    use std::sync::Arc;

    fn pool3() -> PoolSpec {
        PoolSpec {
            name: "dteam".into(),
            default_gid: 2500,
            accounts: vec![
                ("dteam002".into(), 3002),
                ("dteam001".into(), 3001),
                ("dteam003".into(), 3003),
            ],
        }
    }

    fn policy_with_pool() -> MappingPolicy {
        MappingPolicy {
            uid_rules: vec![
                UidRule::Static {
                    subject: subject("anna"),
                    account: "anna".into(),
                    uid: 1001,
                    default_gid: 100,
                },
                UidRule::Pool {
                    fqan_pattern: FqanPattern::parse("/datagrid/*").unwrap(),
                    pool: "dteam".into(),
                },
            ],
            gid_rules: vec![
                GidRule {
                    fqan_pattern: FqanPattern::parse("/datagrid/wp6/*").unwrap(),
                    gid: 2600,
                    primary: true,
                },
                GidRule {
                    fqan_pattern: FqanPattern::parse("/datagrid/*").unwrap(),
                    gid: 2700,
                    primary: false,
                },
            ],
            pools: vec![pool3()],
        }
    }

    #[test]
    fn encode_subject_worked_example() {
        let s =
            SubjectName::from_pairs([("C", "IT"), ("O", "INFN"), ("CN", "Mario Rossi")]).unwrap();
        assert_eq!(
            encode_subject(&s),
            "%2fc%3dit%2fo%3dinfn%2fcn%3dmario%20rossi"
        );
        let short = SubjectName::from_pairs([("CN", "a")]).unwrap();
        assert_eq!(encode_subject(&short), "%2fcn%3da");
    }

    #[test]
    fn distinct_subjects_encode_distinctly() {
        let names = ["alice", "bob", "a lice", "al-ice", "alice1"];
        let encodings: BTreeSet<String> =
            names.iter().map(|n| encode_subject(&subject(n))).collect();
        assert_eq!(encodings.len(), names.len());
    }

    #[test]
    fn pool_allocates_lexicographically_and_exhausts() {
        let dir = tempfile::tempdir().unwrap();
        let ledger = LeaseLedger::open(dir.path()).unwrap();
        let pool = pool3();
        let a = ledger.acquire(&pool, &subject("u1"), FIXED_NOW).unwrap();
        let b = ledger.acquire(&pool, &subject("u2"), FIXED_NOW).unwrap();
        let c = ledger.acquire(&pool, &subject("u3"), FIXED_NOW).unwrap();
        assert_eq!(
            (a.0.as_str(), b.0.as_str(), c.0.as_str()),
            ("dteam001", "dteam002", "dteam003")
        );
        let err = ledger
            .acquire(&pool, &subject("u4"), FIXED_NOW)
            .unwrap_err();
        assert!(matches!(err, MappingError::PoolExhausted(p) if p == "dteam"));
    }

    #[test]
    fn leases_are_sticky() {
        let dir = tempfile::tempdir().unwrap();
        let ledger = LeaseLedger::open(dir.path()).unwrap();
        let pool = pool3();
        let first = ledger.acquire(&pool, &subject("u1"), FIXED_NOW).unwrap();
        let again = ledger
            .acquire(&pool, &subject("u1"), FIXED_NOW + 50)
            .unwrap();
        assert_eq!(first, again);
        assert_eq!(ledger.leases().unwrap().len(), 1);
        assert_eq!(ledger.leases().unwrap()[0].last_used, FIXED_NOW + 50);
    }

    #[test]
    fn release_frees_account_for_reuse() {
        let dir = tempfile::tempdir().unwrap();
        let ledger = LeaseLedger::open(dir.path()).unwrap();
        let pool = pool3();
        let (account, _) = ledger.acquire(&pool, &subject("u1"), FIXED_NOW).unwrap();
        ledger.release("dteam", &subject("u1")).unwrap();
        let (reused, _) = ledger.acquire(&pool, &subject("u2"), FIXED_NOW).unwrap();
        assert_eq!(account, reused);
        let err = ledger.release("dteam", &subject("u1")).unwrap_err();
        assert!(matches!(err, MappingError::NoSuchLease(_)));
    }

    #[test]
    fn gc_frees_idle_leases_only() {
        let dir = tempfile::tempdir().unwrap();
        let ledger = LeaseLedger::open(dir.path()).unwrap();
        let pool = pool3();
        ledger
            .acquire(&pool, &subject("old"), FIXED_NOW - 10_000)
            .unwrap();
        ledger
            .acquire(&pool, &subject("fresh"), FIXED_NOW - 10)
            .unwrap();
        let released = ledger.gc(1000, FIXED_NOW).unwrap();
        assert_eq!(released.len(), 1);
        assert_eq!(ledger.leases().unwrap().len(), 1);
        // idle_seconds = 0 frees everything
        let released = ledger.gc(0, FIXED_NOW).unwrap();
        assert_eq!(released.len(), 1);
        assert!(ledger.leases().unwrap().is_empty());
    }

    #[test]
    fn randomized_acquire_release_interleavings_stay_exclusive() {
        use rand::{Rng, SeedableRng};
        let dir = tempfile::tempdir().unwrap();
        let ledger = Arc::new(LeaseLedger::open(dir.path()).unwrap());
        let pool = Arc::new(PoolSpec {
            name: "mixed".into(),
            default_gid: 9,
            accounts: (0..6).map(|i| (format!("m{i:02}"), 100 + i)).collect(),
        });
        let handles: Vec<_> = (0..8)
            .map(|thread| {
                let ledger = Arc::clone(&ledger);
                let pool = Arc::clone(&pool);
                std::thread::spawn(move || {
                    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(thread);
                    let who = subject(&format!("mix{thread}"));
                    for step in 0..40 {
                        if rng.random_bool(0.6) {
                            match ledger.acquire(&pool, &who, FIXED_NOW + step) {
                                Ok(_) | Err(MappingError::PoolExhausted(_)) => {}
                                Err(other) => panic!("unexpected error: {other}"),
                            }
                        } else {
                            match ledger.release("mixed", &who) {
                                Ok(()) | Err(MappingError::NoSuchLease(_)) => {}
                                Err(other) => panic!("unexpected error: {other}"),
                            }
                        }
                    }
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        // post-hoc invariant: each account bound to at most one subject
        let leases = ledger.leases().unwrap();
        let mut seen_accounts = BTreeSet::new();
        let mut seen_subjects = BTreeSet::new();
        for lease in &leases {
            assert!(
                seen_accounts.insert(lease.account.clone()),
                "account double-bound"
            );
            assert!(
                seen_subjects.insert(encode_subject(&lease.subject)),
                "subject double-bound"
            );
        }
        assert!(leases.len() <= 6);
    }

    #[test]
    fn concurrent_acquisitions_get_distinct_accounts() {
        let dir = tempfile::tempdir().unwrap();
        let ledger = Arc::new(LeaseLedger::open(dir.path()).unwrap());
        let accounts: Vec<(String, u32)> = (1..=16)
            .map(|i| (format!("pool{i:03}"), 4000 + i))
            .collect();
        let pool = Arc::new(PoolSpec {
            name: "big".into(),
            default_gid: 99,
            accounts,
        });

        let handles: Vec<_> = (0..16)
            .map(|i| {
                let ledger = Arc::clone(&ledger);
                let pool = Arc::clone(&pool);
                std::thread::spawn(move || {
                    ledger
                        .acquire(&pool, &subject(&format!("user{i}")), FIXED_NOW)
                        .unwrap()
                        .0
                })
            })
            .collect();
        let got: BTreeSet<String> = handles.into_iter().map(|h| h.join().unwrap()).collect();
        assert_eq!(got.len(), 16, "every subject must get a distinct account");
        let expected: BTreeSet<String> = pool.accounts.iter().map(|(a, _)| a.clone()).collect();
        assert_eq!(got, expected);
    }

    #[test]
    fn static_rule_wins_without_touching_pool() {
        let dir = tempfile::tempdir().unwrap();
        let ledger = LeaseLedger::open(dir.path()).unwrap();
        let policy = policy_with_pool();
        let cred = lcmaps_map(
            &policy,
            &ledger,
            &subject("anna"),
            &[Fqan::parse("/datagrid/wp6").unwrap()],
            FIXED_NOW,
        )
        .unwrap();
        assert_eq!(cred.account, "anna");
        assert_eq!(cred.uid, 1001);
        assert!(ledger.leases().unwrap().is_empty());
    }

    #[test]
    fn pool_rule_leases_with_gid_rules_applied() {
        let dir = tempfile::tempdir().unwrap();
        let ledger = LeaseLedger::open(dir.path()).unwrap();
        let policy = policy_with_pool();
        let cred = lcmaps_map(
            &policy,
            &ledger,
            &subject("pooluser"),
            &[Fqan::parse("/datagrid/wp6").unwrap()],
            FIXED_NOW,
        )
        .unwrap();
        assert_eq!(cred.account, "dteam001");
        assert_eq!(cred.primary_gid, 2600); // first primary gid rule
        assert_eq!(cred.supplementary_gids, BTreeSet::from([2700]));
    }

    #[test]
    fn pool_default_gid_when_no_primary_rule_matches() {
        let dir = tempfile::tempdir().unwrap();
        let ledger = LeaseLedger::open(dir.path()).unwrap();
        let policy = policy_with_pool();
        // matches the pool pattern and the non-primary gid rule only
        let cred = lcmaps_map(
            &policy,
            &ledger,
            &subject("pooluser"),
            &[Fqan::parse("/datagrid/other").unwrap()],
            FIXED_NOW,
        )
        .unwrap();
        assert_eq!(cred.primary_gid, 2500);
        assert_eq!(cred.supplementary_gids, BTreeSet::from([2700]));
    }

    #[test]
    fn no_rule_matches() {
        let dir = tempfile::tempdir().unwrap();
        let ledger = LeaseLedger::open(dir.path()).unwrap();
        let policy = policy_with_pool();
        let err = lcmaps_map(
            &policy,
            &ledger,
            &subject("stranger"),
            &[Fqan::parse("/othervo").unwrap()],
            FIXED_NOW,
        )
        .unwrap_err();
        assert!(matches!(err, MappingError::NoMappingRule));
    }

    #[test]
    fn primary_gid_never_in_supplementary() {
        let cred = LocalCredential::new("x", 1, 100, BTreeSet::from([100, 200]));
        assert_eq!(cred.supplementary_gids, BTreeSet::from([200]));
    }

    #[test]
    fn policy_doc_roundtrip_and_validation() {
        let policy = policy_with_pool();
        let doc = Value::parse(&policy.to_doc().to_bytes()).unwrap();
        assert_eq!(MappingPolicy::from_doc(&doc).unwrap(), policy);

        let mut broken = policy.clone();
        broken.pools.clear();
        assert!(matches!(
            broken.validate(),
            Err(MappingError::UnknownPool(_))
        ));
        let mut empty = policy.clone();
        empty.uid_rules.clear();
        assert!(matches!(empty.validate(), Err(MappingError::BadPolicy(_))));
    }

    #[test]
    fn mapping_is_deterministic() {
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let policy = policy_with_pool();
        let fqans = [Fqan::parse("/datagrid/wp6").unwrap()];
        let a = lcmaps_map(
            &policy,
            &LeaseLedger::open(dir_a.path()).unwrap(),
            &subject("u"),
            &fqans,
            FIXED_NOW,
        )
        .unwrap();
        let b = lcmaps_map(
            &policy,
            &LeaseLedger::open(dir_b.path()).unwrap(),
            &subject("u"),
            &fqans,
            FIXED_NOW,
        )
        .unwrap();
        assert_eq!(a, b);
    }
}
