//! Identity and proxy credentials, chains, revocation lists, and chain
//! validation.
//!
//! The credential format is a canonical document with the same trust
//! semantics as an X.509 chain: a self-signed authority anchors a chain of
//! identity credentials, and short-lived proxies extend the leaf subject by
//! one `CN=proxy` component. Attribute payloads ride in labeled extensions;
//! validators reject any critical extension they do not understand and
//! ignore non-critical ones, which is what lets attribute-unaware consumers
//! keep working.

use thiserror::Error;

use crate::canonical::{DocError, Value};
use crate::crypto::{KeyPair, PublicKey};
use crate::subject::SubjectName;

/// Default proxy lifetime: twelve hours.
pub const DEFAULT_PROXY_LIFETIME_SECS: u64 = 43_200;

#[derive(Debug, Error)]
pub enum CredentialError {
    #[error("issuer is not an authority")]
    NotAnAuthority,
    #[error("requested window [{0}, {1}) is outside the issuer window")]
    WindowOutOfRange(i64, i64),
    #[error("window start must precede end")]
    EmptyWindow,
    #[error("chain is invalid: {0}")]
    InvalidChain(String),
    #[error("malformed credential document: {0}")]
    Malformed(#[from] DocError),
    #[error("credential io: {0}")]
    Io(#[from] std::io::Error),
}

/// An extension attached to a proxy credential.
///
/// `critical` marks payloads the relying party must understand; validation
/// rejects a chain whose proxy carries an unrecognized critical extension.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Extension {
    pub label: String,
    pub critical: bool,
    pub payload: Vec<u8>,
}

impl Extension {
    fn to_doc(&self) -> Value {
        Value::map()
            .field_str("label", &self.label)
            .field_bool("critical", self.critical)
            .field_bytes("payload", &self.payload)
            .build()
    }

    fn from_doc(doc: &Value) -> Result<Self, DocError> {
        Ok(Extension {
            label: doc.get_str("label")?.to_string(),
            critical: doc.get_bool("critical")?,
            payload: doc.get_bytes("payload")?,
        })
    }
}

/// A long-lived credential binding a subject name to a key, signed by an
/// authority (or by itself, for trust anchors).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdentityCredential {
    pub subject: SubjectName,
    pub issuer: SubjectName,
    pub public_key: PublicKey,
    pub serial: u64,
    pub not_before: i64,
    pub not_after: i64,
    pub is_authority: bool,
    pub signature: Vec<u8>,
}

impl IdentityCredential {
    pub fn is_self_signed(&self) -> bool {
        self.subject == self.issuer
    }

    /// The byte form covered by the signature: the document minus the
    /// signature field.
    pub fn signing_base(&self) -> Vec<u8> {
        self.body_doc().to_bytes()
    }

    fn body_doc(&self) -> Value {
        Value::map()
            .field_str("kind", "identity")
            .field_str("subject", self.subject.render())
            .field_str("issuer", self.issuer.render())
            .field("public_key", self.public_key.to_doc())
            .field_u64("serial", self.serial)
            .field_int("not_before", self.not_before)
            .field_int("not_after", self.not_after)
            .field_bool("is_authority", self.is_authority)
            .build()
    }

    pub fn to_doc(&self) -> Value {
        let Value::Map(mut m) = self.body_doc() else {
            unreachable!()
        };
        m.insert("signature".into(), Value::Bytes(self.signature.clone()));
        Value::Map(m)
    }

    pub fn from_doc(doc: &Value) -> Result<Self, DocError> {
        let wrong_kind = || DocError::OutOfRange {
            field: "kind".into(),
            detail: "expected identity credential".into(),
        };
        if doc.get_str("kind")? != "identity" {
            return Err(wrong_kind());
        }
        Ok(IdentityCredential {
            subject: SubjectName::parse(doc.get_str("subject")?).map_err(|_| wrong_kind())?,
            issuer: SubjectName::parse(doc.get_str("issuer")?).map_err(|_| wrong_kind())?,
            public_key: PublicKey::from_doc(doc.get_map("public_key")?)?,
            serial: doc.get_u64("serial")?,
            not_before: doc.get_int("not_before")?,
            not_after: doc.get_int("not_after")?,
            is_authority: doc.get_bool("is_authority")?,
            signature: doc.get_bytes("signature")?,
        })
    }
}

/// A short-lived delegated credential. Its subject is the issuing
/// credential's subject plus one `CN=proxy` component.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProxyCredential {
    pub subject: SubjectName,
    pub issuer: SubjectName,
    pub public_key: PublicKey,
    pub serial: u64,
    pub not_before: i64,
    pub not_after: i64,
    pub extensions: Vec<Extension>,
    pub signature: Vec<u8>,
}

impl ProxyCredential {
    pub fn signing_base(&self) -> Vec<u8> {
        self.body_doc().to_bytes()
    }

    fn body_doc(&self) -> Value {
        Value::map()
            .field_str("kind", "proxy")
            .field_str("subject", self.subject.render())
            .field_str("issuer", self.issuer.render())
            .field("public_key", self.public_key.to_doc())
            .field_u64("serial", self.serial)
            .field_int("not_before", self.not_before)
            .field_int("not_after", self.not_after)
            .field(
                "extensions",
                Value::Array(self.extensions.iter().map(Extension::to_doc).collect()),
            )
            .build()
    }

    pub fn to_doc(&self) -> Value {
        let Value::Map(mut m) = self.body_doc() else {
            unreachable!()
        };
        m.insert("signature".into(), Value::Bytes(self.signature.clone()));
        Value::Map(m)
    }

    pub fn from_doc(doc: &Value) -> Result<Self, DocError> {
        let wrong_kind = || DocError::OutOfRange {
            field: "kind".into(),
            detail: "expected proxy credential".into(),
        };
        if doc.get_str("kind")? != "proxy" {
            return Err(wrong_kind());
        }
        let mut extensions = Vec::new();
        for e in doc.get_array("extensions")? {
            extensions.push(Extension::from_doc(e)?);
        }
        Ok(ProxyCredential {
            subject: SubjectName::parse(doc.get_str("subject")?).map_err(|_| wrong_kind())?,
            issuer: SubjectName::parse(doc.get_str("issuer")?).map_err(|_| wrong_kind())?,
            public_key: PublicKey::from_doc(doc.get_map("public_key")?)?,
            serial: doc.get_u64("serial")?,
            not_before: doc.get_int("not_before")?,
            not_after: doc.get_int("not_after")?,
            extensions,
            signature: doc.get_bytes("signature")?,
        })
    }

    pub fn extension(&self, label: &str) -> Option<&Extension> {
        self.extensions.iter().find(|e| e.label == label)
    }
}

/// Either kind of chain element.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Credential {
    Identity(IdentityCredential),
    Proxy(ProxyCredential),
}

impl Credential {
    pub fn subject(&self) -> &SubjectName {
        match self {
            Credential::Identity(c) => &c.subject,
            Credential::Proxy(c) => &c.subject,
        }
    }

    pub fn issuer(&self) -> &SubjectName {
        match self {
            Credential::Identity(c) => &c.issuer,
            Credential::Proxy(c) => &c.issuer,
        }
    }

    pub fn public_key(&self) -> &PublicKey {
        match self {
            Credential::Identity(c) => &c.public_key,
            Credential::Proxy(c) => &c.public_key,
        }
    }

    pub fn window(&self) -> (i64, i64) {
        match self {
            Credential::Identity(c) => (c.not_before, c.not_after),
            Credential::Proxy(c) => (c.not_before, c.not_after),
        }
    }

    pub fn signature(&self) -> &[u8] {
        match self {
            Credential::Identity(c) => &c.signature,
            Credential::Proxy(c) => &c.signature,
        }
    }

    pub fn signing_base(&self) -> Vec<u8> {
        match self {
            Credential::Identity(c) => c.signing_base(),
            Credential::Proxy(c) => c.signing_base(),
        }
    }

    pub fn to_doc(&self) -> Value {
        match self {
            Credential::Identity(c) => c.to_doc(),
            Credential::Proxy(c) => c.to_doc(),
        }
    }

    pub fn from_doc(doc: &Value) -> Result<Self, DocError> {
        match doc.get_str("kind")? {
            "identity" => Ok(Credential::Identity(IdentityCredential::from_doc(doc)?)),
            "proxy" => Ok(Credential::Proxy(ProxyCredential::from_doc(doc)?)),
            other => Err(DocError::OutOfRange {
                field: "kind".into(),
                detail: format!("unknown credential kind `{other}`"),
            }),
        }
    }
}

/// A leaf-first credential chain: zero or more proxies, the end-entity
/// identity, then issuing authorities up to a trust anchor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CredentialChain {
    pub elements: Vec<Credential>,
}

impl CredentialChain {
    pub fn new(elements: Vec<Credential>) -> Self {
        CredentialChain { elements }
    }

    pub fn leaf(&self) -> Option<&Credential> {
        self.elements.first()
    }

    /// The first identity credential, i.e. the end entity the chain speaks
    /// for.
    pub fn end_entity(&self) -> Option<&IdentityCredential> {
        self.elements.iter().find_map(|c| match c {
            Credential::Identity(id) => Some(id),
            Credential::Proxy(_) => None,
        })
    }

    /// Prepend a freshly issued proxy, producing the extended chain.
    pub fn extended_with(&self, proxy: ProxyCredential) -> CredentialChain {
        let mut elements = Vec::with_capacity(self.elements.len() + 1);
        elements.push(Credential::Proxy(proxy));
        elements.extend(self.elements.iter().cloned());
        CredentialChain::new(elements)
    }

    pub fn to_doc(&self) -> Value {
        Value::Array(self.elements.iter().map(Credential::to_doc).collect())
    }

    pub fn from_doc(doc: &Value) -> Result<Self, DocError> {
        let mut elements = Vec::new();
        for c in doc.as_array()? {
            elements.push(Credential::from_doc(c)?);
        }
        Ok(CredentialChain::new(elements))
    }
}

/// A signed list of revoked identity-credential serials. Proxies are never
/// revocable; they simply expire.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RevocationList {
    pub issuer: SubjectName,
    pub revoked_serials: std::collections::BTreeSet<u64>,
    pub issued_at: i64,
    pub signature: Vec<u8>,
}

impl RevocationList {
    pub fn build(
        issuer: &IdentityCredential,
        key: &KeyPair,
        serials: impl IntoIterator<Item = u64>,
        issued_at: i64,
    ) -> Self {
        let mut rl = RevocationList {
            issuer: issuer.subject.clone(),
            revoked_serials: serials.into_iter().collect(),
            issued_at,
            signature: Vec::new(),
        };
        rl.signature = key.sign(&rl.signing_base());
        rl
    }

    pub fn signing_base(&self) -> Vec<u8> {
        self.body_doc().to_bytes()
    }

    fn body_doc(&self) -> Value {
        Value::map()
            .field_str("kind", "revocation-list")
            .field_str("issuer", self.issuer.render())
            .field(
                "revoked_serials",
                Value::Array(
                    self.revoked_serials
                        .iter()
                        .map(|s| Value::Int(i64::try_from(*s).expect("serial exceeds i64")))
                        .collect(),
                ),
            )
            .field_int("issued_at", self.issued_at)
            .build()
    }

    pub fn to_doc(&self) -> Value {
        let Value::Map(mut m) = self.body_doc() else {
            unreachable!()
        };
        m.insert("signature".into(), Value::Bytes(self.signature.clone()));
        Value::Map(m)
    }

    pub fn from_doc(doc: &Value) -> Result<Self, DocError> {
        let wrong_kind = || DocError::OutOfRange {
            field: "kind".into(),
            detail: "expected revocation list".into(),
        };
        if doc.get_str("kind")? != "revocation-list" {
            return Err(wrong_kind());
        }
        let mut serials = std::collections::BTreeSet::new();
        for s in doc.get_array("revoked_serials")? {
            match s {
                Value::Int(n) if *n >= 0 => serials.insert(*n as u64),
                _ => {
                    return Err(DocError::OutOfRange {
                        field: "revoked_serials".into(),
                        detail: "serials must be non-negative integers".into(),
                    })
                }
            };
        }
        Ok(RevocationList {
            issuer: SubjectName::parse(doc.get_str("issuer")?).map_err(|_| wrong_kind())?,
            revoked_serials: serials,
            issued_at: doc.get_int("issued_at")?,
            signature: doc.get_bytes("signature")?,
        })
    }
}

/// Create a self-signed authority credential (a trust anchor).
pub fn create_authority(
    subject: SubjectName,
    key: &mut KeyPair,
    not_before: i64,
    not_after: i64,
) -> Result<IdentityCredential, CredentialError> {
    if not_before >= not_after {
        return Err(CredentialError::EmptyWindow);
    }
    let mut cred = IdentityCredential {
        subject: subject.clone(),
        issuer: subject,
        public_key: key.public().clone(),
        serial: key.take_serial(),
        not_before,
        not_after,
        is_authority: true,
        signature: Vec::new(),
    };
    cred.signature = key.sign(&cred.signing_base());
    Ok(cred)
}

/// Issue an identity credential for `subject` under `issuer`.
///
/// The serial comes from the issuer key's monotone counter; the requested
/// window must sit inside the issuer's own validity window.
pub fn issue_identity(
    issuer: &IdentityCredential,
    issuer_key: &mut KeyPair,
    subject: SubjectName,
    subject_key: PublicKey,
    not_before: i64,
    not_after: i64,
    is_authority: bool,
) -> Result<IdentityCredential, CredentialError> {
    if !issuer.is_authority {
        return Err(CredentialError::NotAnAuthority);
    }
    if not_before >= not_after {
        return Err(CredentialError::EmptyWindow);
    }
    if not_before < issuer.not_before || not_after > issuer.not_after {
        return Err(CredentialError::WindowOutOfRange(not_before, not_after));
    }
    let mut cred = IdentityCredential {
        subject,
        issuer: issuer.subject.clone(),
        public_key: subject_key,
        serial: issuer_key.take_serial(),
        not_before,
        not_after,
        is_authority,
        signature: Vec::new(),
    };
    cred.signature = issuer_key.sign(&cred.signing_base());
    Ok(cred)
}

/// Result of [`create_proxy`]: the proxy, its fresh keypair, and whether the
/// requested lifetime had to be clamped to the issuer's expiry.
#[derive(Debug)]
pub struct CreatedProxy {
    pub credential: ProxyCredential,
    pub key: KeyPair,
    pub clamped: bool,
}

/// Derive a fresh proxy from the chain's leaf credential.
///
/// `lifetime_secs` defaults to twelve hours. A request that outlives the
/// issuing credential is clamped to the issuer's expiry rather than
/// rejected; callers learn about it through [`CreatedProxy::clamped`].
pub fn create_proxy(
    chain: &CredentialChain,
    leaf_key: &mut KeyPair,
    lifetime_secs: Option<u64>,
    extensions: Vec<Extension>,
    trust_anchors: &[IdentityCredential],
    revocation_lists: &[RevocationList],
    now: i64,
) -> Result<CreatedProxy, CredentialError> {
    let report = validate_chain(chain, trust_anchors, revocation_lists, now);
    if !report.accepted() {
        return Err(CredentialError::InvalidChain(report.describe()));
    }
    let leaf = chain.leaf().expect("validated chain is non-empty");
    if leaf.public_key() != leaf_key.public() {
        return Err(CredentialError::InvalidChain(
            "signing key does not match the chain leaf".into(),
        ));
    }

    let lifetime = lifetime_secs.unwrap_or(DEFAULT_PROXY_LIFETIME_SECS);
    let (_, issuer_not_after) = leaf.window();
    let requested_end = now.saturating_add(i64::try_from(lifetime).unwrap_or(i64::MAX));
    let (not_after, clamped) = if requested_end > issuer_not_after {
        (issuer_not_after, true)
    } else {
        (requested_end, false)
    };

    let key = KeyPair::generate().map_err(|e| CredentialError::InvalidChain(e.to_string()))?;
    let mut proxy = ProxyCredential {
        subject: leaf.subject().with_proxy_component(),
        issuer: leaf.subject().clone(),
        public_key: key.public().clone(),
        serial: leaf_key.take_serial(),
        not_before: now,
        not_after,
        extensions,
        signature: Vec::new(),
    };
    proxy.signature = leaf_key.sign(&proxy.signing_base());
    Ok(CreatedProxy {
        credential: proxy,
        key,
        clamped,
    })
}

/// The rule a chain failed, if any.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ChainViolation {
    /// Structural problems: empty chain, proxy below an identity, missing
    /// anchor linkage.
    Structure(String),
    /// A link signature did not verify.
    Signature { index: usize },
    /// A credential window does not contain the validation instant.
    OutsideWindow { index: usize },
    /// The chain does not terminate at a configured trust anchor.
    UntrustedRoot,
    /// An identity credential's serial appears in a fresh revocation list
    /// from its issuer.
    Revoked { index: usize, serial: u64 },
    /// A proxy subject is not its issuer subject plus `CN=proxy`.
    ProxySubject { index: usize },
    /// A proxy carries a critical extension the validator does not
    /// understand.
    UnknownCriticalExtension { index: usize, label: String },
}

impl std::fmt::Display for ChainViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ChainViolation::Structure(d) => write!(f, "structure: {d}"),
            ChainViolation::Signature { index } => write!(f, "signature failed at element {index}"),
            ChainViolation::OutsideWindow { index } => {
                write!(f, "element {index} outside validity window")
            }
            ChainViolation::UntrustedRoot => write!(f, "chain does not root at a trust anchor"),
            ChainViolation::Revoked { index, serial } => {
                write!(f, "element {index} revoked (serial {serial})")
            }
            ChainViolation::ProxySubject { index } => {
                write!(f, "element {index} violates the proxy subject rule")
            }
            ChainViolation::UnknownCriticalExtension { index, label } => {
                write!(
                    f,
                    "element {index} carries unknown critical extension `{label}`"
                )
            }
        }
    }
}

/// Outcome of [`validate_chain`]. Failures are reported, never raised.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<ChainViolation>,
    pub checked_at: i64,
}

impl ValidationReport {
    pub fn accepted(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn describe(&self) -> String {
        if self.accepted() {
            "accepted".to_string()
        } else {
            self.violations
                .iter()
                .map(ChainViolation::to_string)
                .collect::<Vec<_>>()
                .join("; ")
        }
    }

    pub fn to_doc(&self) -> Value {
        Value::map()
            .field_bool("accepted", self.accepted())
            .field_int("checked_at", self.checked_at)
            .field(
                "violations",
                Value::Array(
                    self.violations
                        .iter()
                        .map(|v| Value::str(v.to_string()))
                        .collect(),
                ),
            )
            .build()
    }
}

/// Extension labels the validator understands when marked critical. The
/// attribute payload is deliberately non-critical, so nothing is listed.
const KNOWN_CRITICAL_LABELS: [&str; 0] = [];

/// Validate a leaf-first chain against trust anchors and revocation lists at
/// instant `now`.
///
/// Acceptance requires: sound structure, every link signature verifying
/// under the next element's key (anchor self-signed), every window
/// containing `now`, the root equal to a configured anchor, no identity
/// serial revoked by a fresh list from its issuer, every proxy subject
/// extending its issuer by exactly `CN=proxy`, and no unknown critical
/// extensions. Unknown non-critical extensions are ignored.
pub fn validate_chain(
    chain: &CredentialChain,
    trust_anchors: &[IdentityCredential],
    revocation_lists: &[RevocationList],
    now: i64,
) -> ValidationReport {
    let mut violations = Vec::new();
    let elements = &chain.elements;

    if elements.is_empty() {
        return ValidationReport {
            violations: vec![ChainViolation::Structure("empty chain".into())],
            checked_at: now,
        };
    }

    // Structure: proxies only above identities, exactly one transition.
    let mut seen_identity = false;
    for (i, element) in elements.iter().enumerate() {
        match element {
            Credential::Proxy(_) if seen_identity => {
                violations.push(ChainViolation::Structure(format!(
                    "proxy at element {i} below an identity credential"
                )));
            }
            Credential::Identity(_) => seen_identity = true,
            Credential::Proxy(_) => {}
        }
    }
    if !seen_identity {
        violations.push(ChainViolation::Structure(
            "chain has no identity credential".into(),
        ));
    }

    // Link-by-link checks.
    for (i, element) in elements.iter().enumerate() {
        let (not_before, not_after) = element.window();
        if !(not_before <= now && now < not_after) {
            violations.push(ChainViolation::OutsideWindow { index: i });
        }

        let signer_key = if let Some(next) = elements.get(i + 1) {
            if element.issuer() != next.subject() {
                violations.push(ChainViolation::Structure(format!(
                    "element {i} issuer does not match element {} subject",
                    i + 1
                )));
            }
            Some(next.public_key())
        } else {
            match element {
                // the root must be self-signed to be checkable
                Credential::Identity(id) if id.is_self_signed() => Some(&id.public_key),
                _ => {
                    violations.push(ChainViolation::Structure(
                        "chain root is not a self-signed identity".into(),
                    ));
                    None
                }
            }
        };
        if let Some(key) = signer_key {
            if !key.verify(&element.signing_base(), element.signature()) {
                violations.push(ChainViolation::Signature { index: i });
            }
        }

        match element {
            Credential::Proxy(p) => {
                if !p.subject.extends_as_proxy(&p.issuer) {
                    violations.push(ChainViolation::ProxySubject { index: i });
                }
                for ext in &p.extensions {
                    if ext.critical && !KNOWN_CRITICAL_LABELS.contains(&ext.label.as_str()) {
                        violations.push(ChainViolation::UnknownCriticalExtension {
                            index: i,
                            label: ext.label.clone(),
                        });
                    }
                }
            }
            Credential::Identity(id) => {
                if let Some(rl) =
                    freshest_list(revocation_lists, &id.issuer, issuer_key_for(elements, i))
                {
                    if rl.revoked_serials.contains(&id.serial) {
                        violations.push(ChainViolation::Revoked {
                            index: i,
                            serial: id.serial,
                        });
                    }
                }
            }
        }
    }

    // Root must be one of the configured anchors.
    if let Some(root) = elements.last() {
        let anchored = trust_anchors
            .iter()
            .any(|anchor| matches!(root, Credential::Identity(id) if id == anchor));
        if !anchored {
            violations.push(ChainViolation::UntrustedRoot);
        }
    }

    ValidationReport {
        violations,
        checked_at: now,
    }
}

/// The key that signed element `i`: the next element's key, or the
/// element's own key for a self-signed root.
fn issuer_key_for(elements: &[Credential], i: usize) -> Option<&PublicKey> {
    match elements.get(i + 1) {
        Some(next) => Some(next.public_key()),
        None => Some(elements[i].public_key()),
    }
}

/// Pick the most recently issued revocation list from `issuer` whose
/// signature verifies under the issuer's key.
fn freshest_list<'a>(
    lists: &'a [RevocationList],
    issuer: &SubjectName,
    issuer_key: Option<&PublicKey>,
) -> Option<&'a RevocationList> {
    let key = issuer_key?;
    lists
        .iter()
        .filter(|rl| &rl.issuer == issuer && key.verify(&rl.signing_base(), &rl.signature))
        .max_by_key(|rl| rl.issued_at)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::*;

    #[test]
    fn ca_issues_user_inside_window() {
        let mut world = World::new();
        let user = world.user("alice");
        let report = validate_chain(&user.chain, &world.anchors(), &[], world.now);
        assert!(report.accepted(), "{}", report.describe());
    }

    #[test]
    fn non_authority_cannot_issue() {
        let mut world = World::new();
        let user = world.user("alice");
        let mut user_key = KeyPair::generate().unwrap();
        let other = KeyPair::generate().unwrap();
        let err = issue_identity(
            &user.credential,
            &mut user_key,
            subject("mallory"),
            other.public().clone(),
            world.now,
            world.now + 1000,
            false,
        )
        .unwrap_err();
        assert!(matches!(err, CredentialError::NotAnAuthority));
    }

    #[test]
    fn window_must_fit_issuer() {
        let mut world = World::new();
        let key = KeyPair::generate().unwrap();
        let err = issue_identity(
            &world.ca_credential.clone(),
            &mut world.ca_key,
            subject("late"),
            key.public().clone(),
            world.now,
            world.ca_credential.not_after + 1,
            false,
        )
        .unwrap_err();
        assert!(matches!(err, CredentialError::WindowOutOfRange(..)));
    }

    #[test]
    fn proxy_defaults_to_twelve_hours() {
        let mut world = World::new();
        let mut user = world.user("alice");
        let created = create_proxy(
            &user.chain,
            &mut user.key,
            None,
            vec![],
            &world.anchors(),
            &[],
            world.now,
        )
        .unwrap();
        assert_eq!(created.credential.not_after, world.now + 43_200);
        assert!(!created.clamped);
        let chain = user.chain.extended_with(created.credential);
        assert!(validate_chain(&chain, &world.anchors(), &[], world.now).accepted());
    }

    #[test]
    fn overlong_proxy_is_clamped_with_warning() {
        let mut world = World::new();
        let mut user = world.user_with_window("shortlived", world.now, world.now + 2 * 86_400);
        let created = create_proxy(
            &user.chain,
            &mut user.key,
            Some(7 * 86_400),
            vec![],
            &world.anchors(),
            &[],
            world.now,
        )
        .unwrap();
        assert!(created.clamped);
        assert_eq!(created.credential.not_after, world.now + 2 * 86_400);
    }

    #[test]
    fn expired_issuer_fails_proxy_creation() {
        let mut world = World::new();
        let mut user = world.user_with_window("brief", world.now - 100, world.now - 1);
        let err = create_proxy(
            &user.chain,
            &mut user.key,
            None,
            vec![],
            &world.anchors(),
            &[],
            world.now,
        )
        .unwrap_err();
        assert!(matches!(err, CredentialError::InvalidChain(_)));
    }

    #[test]
    fn revoked_user_is_rejected() {
        let mut world = World::new();
        let user = world.user("alice");
        let rl = RevocationList::build(
            &world.ca_credential.clone(),
            &world.ca_key,
            [user.credential.serial],
            world.now,
        );
        let report = validate_chain(&user.chain, &world.anchors(), &[rl], world.now);
        assert_eq!(
            report.violations,
            vec![ChainViolation::Revoked {
                index: 0,
                serial: user.credential.serial
            }]
        );
    }

    #[test]
    fn newer_list_supersedes_older() {
        let mut world = World::new();
        let user = world.user("alice");
        let old = RevocationList::build(
            &world.ca_credential.clone(),
            &world.ca_key,
            [user.credential.serial],
            world.now - 100,
        );
        let newer =
            RevocationList::build(&world.ca_credential.clone(), &world.ca_key, [], world.now);
        // the freshest list from the issuer governs
        let report = validate_chain(&user.chain, &world.anchors(), &[old, newer], world.now);
        assert!(report.accepted());
    }

    #[test]
    fn forged_revocation_list_is_ignored() {
        let mut world = World::new();
        let user = world.user("alice");
        let rogue = KeyPair::generate().unwrap();
        let rl = RevocationList::build(
            &world.ca_credential.clone(),
            &rogue,
            [user.credential.serial],
            world.now,
        );
        assert!(validate_chain(&user.chain, &world.anchors(), &[rl], world.now).accepted());
    }

    #[test]
    fn critical_extension_rejects_noncritical_ignored() {
        let mut world = World::new();
        let mut user = world.user("alice");
        for (critical, expect_ok) in [(false, true), (true, false)] {
            let created = create_proxy(
                &user.chain,
                &mut user.key,
                None,
                vec![Extension {
                    label: "mystery".into(),
                    critical,
                    payload: vec![1, 2, 3],
                }],
                &world.anchors(),
                &[],
                world.now,
            )
            .unwrap();
            let chain = user.chain.extended_with(created.credential);
            let report = validate_chain(&chain, &world.anchors(), &[], world.now);
            assert_eq!(report.accepted(), expect_ok, "{}", report.describe());
        }
    }

    #[test]
    fn tampered_proxy_subject_is_rejected() {
        let mut world = World::new();
        let mut user = world.user("alice");
        let created = create_proxy(
            &user.chain,
            &mut user.key,
            None,
            vec![],
            &world.anchors(),
            &[],
            world.now,
        )
        .unwrap();
        let mut proxy = created.credential;
        proxy.subject = subject("impostor");
        // re-sign so only the subject rule trips
        proxy.signature = user.key.sign(&proxy.signing_base());
        let chain = user.chain.extended_with(proxy);
        let report = validate_chain(&chain, &world.anchors(), &[], world.now);
        assert!(report
            .violations
            .iter()
            .any(|v| matches!(v, ChainViolation::ProxySubject { index: 0 })));
    }

    #[test]
    fn proxy_below_identity_is_structural_violation() {
        let mut world = World::new();
        let mut user = world.user("alice");
        let created = create_proxy(
            &user.chain,
            &mut user.key,
            None,
            vec![],
            &world.anchors(),
            &[],
            world.now,
        )
        .unwrap();
        // proxy misplaced between the user and the authority
        let chain = CredentialChain::new(vec![
            Credential::Identity(user.credential.clone()),
            Credential::Proxy(created.credential),
            Credential::Identity(world.ca_credential.clone()),
        ]);
        let report = validate_chain(&chain, &world.anchors(), &[], world.now);
        assert!(report
            .violations
            .iter()
            .any(|v| matches!(v, ChainViolation::Structure(_))));
    }

    #[test]
    fn chain_without_identity_is_rejected() {
        let mut world = World::new();
        let mut user = world.user("alice");
        let created = create_proxy(
            &user.chain,
            &mut user.key,
            None,
            vec![],
            &world.anchors(),
            &[],
            world.now,
        )
        .unwrap();
        let chain = CredentialChain::new(vec![Credential::Proxy(created.credential)]);
        let report = validate_chain(&chain, &world.anchors(), &[], world.now);
        assert!(!report.accepted());
        assert!(validate_chain(&CredentialChain::new(vec![]), &world.anchors(), &[], world.now)
            .violations
            .iter()
            .any(|v| matches!(v, ChainViolation::Structure(_))));
    }

    #[test]
    fn untrusted_root_is_rejected() {
        let mut world = World::new();
        let user = world.user("alice");
        let report = validate_chain(&user.chain, &[], &[], world.now);
        assert!(report.violations.contains(&ChainViolation::UntrustedRoot));
    }

    #[test]
    fn credential_doc_roundtrip() {
        let mut world = World::new();
        let mut user = world.user("alice");
        let created = create_proxy(
            &user.chain,
            &mut user.key,
            None,
            vec![Extension {
                label: "x".into(),
                critical: false,
                payload: vec![9],
            }],
            &world.anchors(),
            &[],
            world.now,
        )
        .unwrap();
        let chain = user.chain.extended_with(created.credential);
        let bytes = chain.to_doc().to_bytes();
        let parsed = CredentialChain::from_doc(&Value::parse(&bytes).unwrap()).unwrap();
        assert_eq!(parsed, chain);
    }
}
