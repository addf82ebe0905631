//! The attribute authority: answers signed attribute requests with signed
//! assertions.
//!
//! Authentication is message-level rather than channel-level: the request
//! carries the requester's full credential chain and is signed by the chain
//! leaf key; the response is the assertion, signed by the server. A bounded
//! nonce cache covering the clock-skew window rejects verbatim replays.
//!
//! Issuance policy: a requested subset must be fully entitled or the whole
//! request is rejected with the offending FQANs listed; membership FQANs of
//! forced groups the holder belongs to are always added to the issued list,
//! so negative permissions survive subset selection.

use std::collections::{BTreeSet, HashMap};
use std::sync::Mutex;

use thiserror::Error;

use crate::assertion::AttributeAssertion;
use crate::canonical::{DocError, Value};
use crate::credential::{validate_chain, CredentialChain, IdentityCredential, RevocationList};
use crate::crypto::{random_bytes, KeyPair};
use crate::fqan::Fqan;
use crate::registry::VoRegistry;

pub const DEFAULT_MAX_ASSERTION_LIFETIME_SECS: u64 = 43_200;
pub const DEFAULT_CLOCK_SKEW_SECS: u64 = 300;

/// Issuance policy and trust configuration for one authority.
#[derive(Debug)]
pub struct ServerPolicy {
    pub vo: String,
    pub max_assertion_lifetime: u64,
    pub clock_skew: u64,
    pub trust_anchors: Vec<IdentityCredential>,
    pub revocation_lists: Vec<RevocationList>,
}

impl ServerPolicy {
    pub fn new(vo: impl Into<String>, trust_anchors: Vec<IdentityCredential>) -> Self {
        ServerPolicy {
            vo: vo.into(),
            max_assertion_lifetime: DEFAULT_MAX_ASSERTION_LIFETIME_SECS,
            clock_skew: DEFAULT_CLOCK_SKEW_SECS,
            trust_anchors,
            revocation_lists: Vec::new(),
        }
    }
}

/// A signed request for attributes, carrying the requester's chain.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttributeRequest {
    pub requester_chain: CredentialChain,
    pub vo: String,
    /// `None` means "everything I am entitled to".
    pub requested_fqans: Option<Vec<Fqan>>,
    pub lifetime_seconds: u64,
    pub nonce: [u8; 16],
    pub timestamp: i64,
    pub signature: Vec<u8>,
}

impl AttributeRequest {
    pub fn signing_base(&self) -> Vec<u8> {
        self.body_doc().to_bytes()
    }

    fn body_doc(&self) -> Value {
        Value::map()
            .field_str("kind", "attribute-request")
            .field("chain", self.requester_chain.to_doc())
            .field_str("vo", &self.vo)
            .field_opt(
                "requested_fqans",
                self.requested_fqans
                    .as_ref()
                    .map(|fs| Value::Array(fs.iter().map(|f| Value::str(f.render())).collect())),
            )
            .field_u64("lifetime", self.lifetime_seconds)
            .field_bytes("nonce", self.nonce)
            .field_int("timestamp", self.timestamp)
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
        let bad = |field: &str, detail: String| DocError::OutOfRange {
            field: field.into(),
            detail,
        };
        if doc.get_str("kind")? != "attribute-request" {
            return Err(bad("kind", "expected attribute-request".into()));
        }
        let requested_fqans = match doc.get_opt("requested_fqans") {
            Some(Value::Array(items)) => {
                let mut fs = Vec::new();
                for f in items {
                    fs.push(
                        Fqan::parse(f.str_value()?)
                            .map_err(|e| bad("requested_fqans", e.to_string()))?,
                    );
                }
                Some(fs)
            }
            Some(_) => return Err(bad("requested_fqans", "expected array".into())),
            None => None,
        };
        let nonce: [u8; 16] = doc
            .get_bytes("nonce")?
            .try_into()
            .map_err(|_| bad("nonce", "nonce must be 16 bytes".into()))?;
        Ok(AttributeRequest {
            requester_chain: CredentialChain::from_doc(doc.get("chain")?)?,
            vo: doc.get_str("vo")?.to_string(),
            requested_fqans,
            lifetime_seconds: doc.get_u64("lifetime")?,
            nonce,
            timestamp: doc.get_int("timestamp")?,
            signature: doc.get_bytes("signature")?,
        })
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RequestError {
    #[error("authentication failed: {0}")]
    AuthenticationFailed(String),
    #[error("replay detected")]
    ReplayDetected,
    #[error("unknown user")]
    UnknownUser,
    #[error("requested attributes not held: {}", render_fqans(.0))]
    UnauthorizedAttributes(Vec<Fqan>),
}

fn render_fqans(fqans: &[Fqan]) -> String {
    fqans
        .iter()
        .map(Fqan::render)
        .collect::<Vec<_>>()
        .join(", ")
}

impl RequestError {
    pub fn code(&self) -> &'static str {
        match self {
            RequestError::AuthenticationFailed(_) => "authentication_failed",
            RequestError::ReplayDetected => "replay_detected",
            RequestError::UnknownUser => "unknown_user",
            RequestError::UnauthorizedAttributes(_) => "unauthorized_attributes",
        }
    }

    pub fn http_status(&self) -> u16 {
        match self {
            RequestError::AuthenticationFailed(_) | RequestError::ReplayDetected => 401,
            RequestError::UnknownUser | RequestError::UnauthorizedAttributes(_) => 403,
        }
    }

    pub fn to_error_doc(&self) -> Value {
        Value::map()
            .field_str("code", self.code())
            .field_str("detail", self.to_string())
            .build()
    }
}

#[derive(Debug, Error)]
pub enum BuildRequestError {
    #[error("own chain is invalid: {0}")]
    InvalidChain(String),
}

/// Build and sign an attribute request after checking the chain locally.
#[allow(clippy::too_many_arguments)]
pub fn build_request(
    chain: &CredentialChain,
    leaf_key: &KeyPair,
    vo: impl Into<String>,
    requested_fqans: Option<Vec<Fqan>>,
    lifetime_seconds: u64,
    trust_anchors: &[IdentityCredential],
    revocation_lists: &[RevocationList],
    now: i64,
) -> Result<AttributeRequest, BuildRequestError> {
    let report = validate_chain(chain, trust_anchors, revocation_lists, now);
    if !report.accepted() {
        return Err(BuildRequestError::InvalidChain(report.describe()));
    }
    let mut nonce = [0u8; 16];
    random_bytes(&mut nonce);
    let mut request = AttributeRequest {
        requester_chain: chain.clone(),
        vo: vo.into(),
        requested_fqans,
        lifetime_seconds,
        nonce,
        timestamp: now,
        signature: Vec::new(),
    };
    request.signature = leaf_key.sign(&request.signing_base());
    Ok(request)
}

/// One VO's issuance endpoint: identity, signing key, policy, and the nonce
/// cache that backs replay rejection.
pub struct AttributeAuthority {
    credential: IdentityCredential,
    key: Mutex<KeyPair>,
    policy: ServerPolicy,
    seen_nonces: Mutex<HashMap<[u8; 16], i64>>,
}

impl AttributeAuthority {
    pub fn new(credential: IdentityCredential, key: KeyPair, policy: ServerPolicy) -> Self {
        AttributeAuthority {
            credential,
            key: Mutex::new(key),
            policy,
            seen_nonces: Mutex::new(HashMap::new()),
        }
    }

    pub fn policy(&self) -> &ServerPolicy {
        &self.policy
    }

    pub fn credential(&self) -> &IdentityCredential {
        &self.credential
    }

    /// Snapshot of the signing key document (for persisting the serial
    /// counter).
    pub fn key_doc(&self) -> Value {
        self.key.lock().expect("key lock").to_doc()
    }

    /// Handle one attribute request against the given registry state.
    pub fn handle_request(
        &self,
        registry: &VoRegistry,
        request: &AttributeRequest,
        now: i64,
    ) -> Result<AttributeAssertion, RequestError> {
        // 1. authenticate: chain, signature, clock, vo
        let report = validate_chain(
            &request.requester_chain,
            &self.policy.trust_anchors,
            &self.policy.revocation_lists,
            now,
        );
        if !report.accepted() {
            return Err(RequestError::AuthenticationFailed(report.describe()));
        }
        let leaf = request
            .requester_chain
            .leaf()
            .expect("validated chain is non-empty");
        if !leaf
            .public_key()
            .verify(&request.signing_base(), &request.signature)
        {
            return Err(RequestError::AuthenticationFailed(
                "request signature invalid".into(),
            ));
        }
        let skew = self.policy.clock_skew as i64;
        if (request.timestamp - now).abs() > skew {
            return Err(RequestError::AuthenticationFailed(format!(
                "request timestamp outside {}s clock-skew window",
                skew
            )));
        }
        if request.vo != self.policy.vo {
            return Err(RequestError::AuthenticationFailed(format!(
                "this authority serves VO `{}`",
                self.policy.vo
            )));
        }

        // 2. reserve the nonce atomically; concurrent duplicates lose here,
        //    and failed requests release it again further down
        {
            let mut nonces = self.seen_nonces.lock().expect("nonce lock");
            nonces.retain(|_, seen_at| now - *seen_at <= skew);
            if nonces.insert(request.nonce, now).is_some() {
                return Err(RequestError::ReplayDetected);
            }
        }
        self.issue(registry, request, now).inspect_err(|_| {
            self.seen_nonces
                .lock()
                .expect("nonce lock")
                .remove(&request.nonce);
        })
    }

    fn issue(
        &self,
        registry: &VoRegistry,
        request: &AttributeRequest,
        now: i64,
    ) -> Result<AttributeAssertion, RequestError> {
        // 3. entitlement
        let holder = request
            .requester_chain
            .end_entity()
            .expect("validated chain has an end entity");
        let entitled: BTreeSet<Fqan> = registry
            .effective_attributes(&holder.subject, now)
            .into_iter()
            .collect();
        if entitled.is_empty() {
            return Err(RequestError::UnknownUser);
        }

        let selected: BTreeSet<Fqan> = match &request.requested_fqans {
            Some(requested) if requested.is_empty() => {
                // issued assertions must carry at least one FQAN
                return Err(RequestError::AuthenticationFailed(
                    "requested attribute subset is empty".into(),
                ));
            }
            Some(requested) => {
                let offenders: Vec<Fqan> = requested
                    .iter()
                    .filter(|f| !entitled.contains(f))
                    .cloned()
                    .collect::<BTreeSet<_>>()
                    .into_iter()
                    .collect();
                if !offenders.is_empty() {
                    return Err(RequestError::UnauthorizedAttributes(offenders));
                }
                requested.iter().cloned().collect()
            }
            None => entitled,
        };

        // 4. forced groups are injected regardless of subset selection
        let mut issued = selected;
        issued.extend(registry.forced_membership_fqans(&holder.subject, now));

        // 5. issue
        let lifetime = request
            .lifetime_seconds
            .max(1)
            .min(self.policy.max_assertion_lifetime);
        let serial = self.key.lock().expect("key lock").take_serial();
        let mut assertion = AttributeAssertion {
            holder: holder.subject.clone(),
            holder_serial: holder.serial,
            issuer: self.credential.subject.clone(),
            vo: self.policy.vo.clone(),
            fqans: issued.into_iter().collect(),
            not_before: now,
            not_after: now + lifetime as i64,
            issued_at: now,
            serial,
            signature: Vec::new(),
        };
        assertion.signature = self
            .key
            .lock()
            .expect("key lock")
            .sign(&assertion.signing_base());
        Ok(assertion)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::registry::{Grant, GrantKind, GroupId};
    use crate::schedule::{TimeSchedule, Weekday};
    use crate::subject::SubjectName;
    use crate::testutil::*;
    use std::collections::BTreeSet as Set;

    struct Fixture {
        world: World,
        registry: VoRegistry,
        authority: AttributeAuthority,
        wp6: GroupId,
    }

    fn fqan(s: &str) -> Fqan {
        Fqan::parse(s).unwrap()
    }

    fn fixture() -> Fixture {
        let mut world = World::new();
        let owner = subject("vo owner");
        let mut registry = VoRegistry::new("datagrid", owner.clone()).unwrap();
        let wp6 = registry
            .create_group(
                &owner,
                &Set::from([registry.root()]),
                "wp6",
                false,
                world.now,
            )
            .unwrap();

        let server_key = KeyPair::generate().unwrap();
        let server_cred = crate::credential::issue_identity(
            &world.ca_credential.clone(),
            &mut world.ca_key,
            SubjectName::from_pairs([("O", "test"), ("CN", "voms.datagrid")]).unwrap(),
            server_key.public().clone(),
            world.now - 3600,
            world.now + 365 * 86_400,
            false,
        )
        .unwrap();
        let policy = ServerPolicy::new("datagrid", world.anchors());
        let authority = AttributeAuthority::new(server_cred, server_key, policy);
        Fixture {
            world,
            registry,
            authority,
            wp6,
        }
    }

    fn enroll(fix: &mut Fixture, name: &str, scope: GroupId) -> crate::testutil::TestUser {
        let user = fix.world.user(name);
        fix.registry
            .grant(
                &subject("vo owner"),
                Grant {
                    user: user.credential.subject.clone(),
                    scope,
                    kind: GrantKind::Membership,
                    schedule: TimeSchedule::Always,
                },
                fix.world.now,
            )
            .unwrap();
        user
    }

    fn request_for(fix: &Fixture, user: &TestUser, subset: Option<Vec<Fqan>>) -> AttributeRequest {
        build_request(
            &user.chain,
            &user.key,
            "datagrid",
            subset,
            43_200,
            &fix.world.anchors(),
            &[],
            fix.world.now,
        )
        .unwrap()
    }

    #[test]
    fn issues_full_entitlement_by_default() {
        let mut fix = fixture();
        let wp6 = fix.wp6;
        let alice = enroll(&mut fix, "alice", wp6);
        let req = request_for(&fix, &alice, None);
        let assertion = fix
            .authority
            .handle_request(&fix.registry, &req, fix.world.now)
            .unwrap();
        let rendered: Vec<String> = assertion.fqans.iter().map(Fqan::render).collect();
        assert_eq!(rendered, ["/datagrid", "/datagrid/wp6"]);
        assert_eq!(assertion.holder, alice.credential.subject);
        assert_eq!(assertion.holder_serial, alice.credential.serial);
        assert_eq!(assertion.not_after - assertion.not_before, 43_200);
    }

    #[test]
    fn subset_request_issues_exactly_that() {
        let mut fix = fixture();
        let wp6 = fix.wp6;
        let alice = enroll(&mut fix, "alice", wp6);
        let req = request_for(&fix, &alice, Some(vec![fqan("/datagrid")]));
        let assertion = fix
            .authority
            .handle_request(&fix.registry, &req, fix.world.now)
            .unwrap();
        let rendered: Vec<String> = assertion.fqans.iter().map(Fqan::render).collect();
        assert_eq!(rendered, ["/datagrid"]);
    }

    #[test]
    fn unentitled_subset_is_rejected_with_offenders() {
        let mut fix = fixture();
        let wp6 = fix.wp6;
        let alice = enroll(&mut fix, "alice", wp6);
        let req = request_for(
            &fix,
            &alice,
            Some(vec![fqan("/datagrid"), fqan("/datagrid/wp6/Role=admin")]),
        );
        let err = fix
            .authority
            .handle_request(&fix.registry, &req, fix.world.now)
            .unwrap_err();
        assert_eq!(
            err,
            RequestError::UnauthorizedAttributes(vec![fqan("/datagrid/wp6/Role=admin")])
        );
    }

    #[test]
    fn inactive_scheduled_role_is_not_entitled() {
        let mut fix = fixture();
        let wp6 = fix.wp6;
        let alice = enroll(&mut fix, "alice", wp6);
        // Role active Mon-Fri working hours; FIXED_NOW is a Sunday.
        fix.registry
            .grant(
                &subject("vo owner"),
                Grant {
                    user: alice.credential.subject.clone(),
                    scope: fix.wp6,
                    kind: GrantKind::Role("admin".into()),
                    schedule: TimeSchedule::weekly(
                        [
                            Weekday::Mon,
                            Weekday::Tue,
                            Weekday::Wed,
                            Weekday::Thu,
                            Weekday::Fri,
                        ],
                        540,
                        1020,
                    )
                    .unwrap(),
                },
                fix.world.now,
            )
            .unwrap();
        assert_eq!(Weekday::of_timestamp(fix.world.now), Weekday::Sun);
        let req = request_for(&fix, &alice, Some(vec![fqan("/datagrid/wp6/Role=admin")]));
        let err = fix
            .authority
            .handle_request(&fix.registry, &req, fix.world.now)
            .unwrap_err();
        assert_eq!(
            err,
            RequestError::UnauthorizedAttributes(vec![fqan("/datagrid/wp6/Role=admin")])
        );
    }

    #[test]
    fn forced_group_survives_subset_selection() {
        let mut fix = fixture();
        let owner = subject("vo owner");
        let watch = fix
            .registry
            .create_group(
                &owner,
                &Set::from([fix.registry.root()]),
                "banned-watch",
                true,
                fix.world.now,
            )
            .unwrap();
        let wp6 = fix.wp6;
        let alice = enroll(&mut fix, "alice", wp6);
        fix.registry
            .grant(
                &owner,
                Grant {
                    user: alice.credential.subject.clone(),
                    scope: watch,
                    kind: GrantKind::Membership,
                    schedule: TimeSchedule::Always,
                },
                fix.world.now,
            )
            .unwrap();
        let req = request_for(&fix, &alice, Some(vec![fqan("/datagrid")]));
        let assertion = fix
            .authority
            .handle_request(&fix.registry, &req, fix.world.now)
            .unwrap();
        let rendered: Vec<String> = assertion.fqans.iter().map(Fqan::render).collect();
        assert_eq!(rendered, ["/datagrid", "/datagrid/banned-watch"]);
    }

    #[test]
    fn replay_is_detected_within_window() {
        let mut fix = fixture();
        let wp6 = fix.wp6;
        let alice = enroll(&mut fix, "alice", wp6);
        let req = request_for(&fix, &alice, None);
        fix.authority
            .handle_request(&fix.registry, &req, fix.world.now)
            .unwrap();
        let err = fix
            .authority
            .handle_request(&fix.registry, &req, fix.world.now + 10)
            .unwrap_err();
        assert_eq!(err, RequestError::ReplayDetected);
    }

    #[test]
    fn concurrent_duplicates_issue_exactly_once() {
        use std::sync::Arc;
        let mut fix = fixture();
        let wp6 = fix.wp6;
        let alice = enroll(&mut fix, "alice", wp6);
        let request = Arc::new(request_for(&fix, &alice, None));
        let authority = Arc::new(fix.authority);
        let registry = Arc::new(fix.registry);
        let now = fix.world.now;

        let handles: Vec<_> = (0..8)
            .map(|_| {
                let authority = Arc::clone(&authority);
                let registry = Arc::clone(&registry);
                let request = Arc::clone(&request);
                std::thread::spawn(move || authority.handle_request(&registry, &request, now))
            })
            .collect();
        let results: Vec<_> = handles.into_iter().map(|h| h.join().unwrap()).collect();
        let issued = results.iter().filter(|r| r.is_ok()).count();
        let replays = results
            .iter()
            .filter(|r| matches!(r, Err(RequestError::ReplayDetected)))
            .count();
        assert_eq!(issued, 1, "one submission must win");
        assert_eq!(replays, 7, "the rest must be replays");
    }

    #[test]
    fn failed_request_leaves_nonce_retryable() {
        let mut fix = fixture();
        let wp6 = fix.wp6;
        let alice = enroll(&mut fix, "alice", wp6);
        let req = request_for(&fix, &alice, Some(vec![fqan("/datagrid/wp6/Role=admin")]));
        for _ in 0..2 {
            // the same rejected request twice: no spurious replay error
            let err = fix
                .authority
                .handle_request(&fix.registry, &req, fix.world.now)
                .unwrap_err();
            assert!(matches!(err, RequestError::UnauthorizedAttributes(_)));
        }
    }

    #[test]
    fn nonce_cache_is_bounded_by_skew_window() {
        let mut fix = fixture();
        let wp6 = fix.wp6;
        let alice = enroll(&mut fix, "alice", wp6);
        let req = request_for(&fix, &alice, None);
        fix.authority
            .handle_request(&fix.registry, &req, fix.world.now)
            .unwrap();
        // Far outside the window the nonce has been forgotten, but the stale
        // timestamp now fails authentication instead.
        let later = fix.world.now + 10_000;
        let fresh = build_request(
            &alice.chain,
            &alice.key,
            "datagrid",
            None,
            3600,
            &fix.world.anchors(),
            &[],
            later,
        )
        .unwrap();
        fix.authority
            .handle_request(&fix.registry, &fresh, later)
            .unwrap();
        let err = fix
            .authority
            .handle_request(&fix.registry, &req, later)
            .unwrap_err();
        assert!(matches!(err, RequestError::AuthenticationFailed(_)));
    }

    #[test]
    fn unknown_user_yields_distinct_error() {
        let mut fix = fixture();
        let stranger = fix.world.user("stranger");
        let req = request_for(&fix, &stranger, None);
        let err = fix
            .authority
            .handle_request(&fix.registry, &req, fix.world.now)
            .unwrap_err();
        assert_eq!(err, RequestError::UnknownUser);
    }

    #[test]
    fn revoked_requester_cannot_authenticate() {
        let mut fix = fixture();
        let wp6 = fix.wp6;
        let alice = enroll(&mut fix, "alice", wp6);
        let rl = crate::credential::RevocationList::build(
            &fix.world.ca_credential.clone(),
            &fix.world.ca_key,
            [alice.credential.serial],
            fix.world.now,
        );
        let mut policy = ServerPolicy::new("datagrid", fix.world.anchors());
        policy.revocation_lists = vec![rl];
        let authority = AttributeAuthority::new(
            fix.authority.credential.clone(),
            KeyPair::from_doc(&fix.authority.key_doc()).unwrap(),
            policy,
        );
        let req = request_for(&fix, &alice, None);
        let err = authority
            .handle_request(&fix.registry, &req, fix.world.now)
            .unwrap_err();
        assert!(matches!(err, RequestError::AuthenticationFailed(_)));
    }

    #[test]
    fn tampered_request_signature_fails() {
        let mut fix = fixture();
        let wp6 = fix.wp6;
        let alice = enroll(&mut fix, "alice", wp6);
        let mut req = request_for(&fix, &alice, None);
        req.lifetime_seconds = 999_999;
        let err = fix
            .authority
            .handle_request(&fix.registry, &req, fix.world.now)
            .unwrap_err();
        assert!(matches!(err, RequestError::AuthenticationFailed(_)));
    }

    #[test]
    fn empty_subset_is_refused() {
        let mut fix = fixture();
        let wp6 = fix.wp6;
        let alice = enroll(&mut fix, "alice", wp6);
        let req = request_for(&fix, &alice, Some(vec![]));
        let err = fix
            .authority
            .handle_request(&fix.registry, &req, fix.world.now)
            .unwrap_err();
        assert!(matches!(err, RequestError::AuthenticationFailed(_)));
    }

    #[test]
    fn wrong_vo_is_refused() {
        let mut fix = fixture();
        let wp6 = fix.wp6;
        let alice = enroll(&mut fix, "alice", wp6);
        let req = build_request(
            &alice.chain,
            &alice.key,
            "othervo",
            None,
            3600,
            &fix.world.anchors(),
            &[],
            fix.world.now,
        )
        .unwrap();
        let err = fix
            .authority
            .handle_request(&fix.registry, &req, fix.world.now)
            .unwrap_err();
        assert!(matches!(err, RequestError::AuthenticationFailed(_)));
    }

    #[test]
    fn lifetime_clamps_to_policy_max() {
        let mut fix = fixture();
        let wp6 = fix.wp6;
        let alice = enroll(&mut fix, "alice", wp6);
        let req = build_request(
            &alice.chain,
            &alice.key,
            "datagrid",
            None,
            7 * 86_400,
            &fix.world.anchors(),
            &[],
            fix.world.now,
        )
        .unwrap();
        let assertion = fix
            .authority
            .handle_request(&fix.registry, &req, fix.world.now)
            .unwrap();
        assert_eq!(
            (assertion.not_after - assertion.not_before) as u64,
            DEFAULT_MAX_ASSERTION_LIFETIME_SECS
        );
    }

    #[test]
    fn assertions_are_deterministic_up_to_serial() {
        let mut fix = fixture();
        let wp6 = fix.wp6;
        let alice = enroll(&mut fix, "alice", wp6);
        let req = request_for(&fix, &alice, None);
        let a = fix
            .authority
            .handle_request(&fix.registry, &req, fix.world.now)
            .unwrap();
        // a fresh authority with the same key state and a fresh nonce cache
        let authority2 = AttributeAuthority::new(
            fix.authority.credential.clone(),
            KeyPair::from_doc(&fix.authority.key_doc()).unwrap(),
            ServerPolicy::new("datagrid", fix.world.anchors()),
        );
        let b = authority2
            .handle_request(&fix.registry, &req, fix.world.now)
            .unwrap();
        assert_eq!(a.fqans, b.fqans);
        assert_eq!(a.not_before, b.not_before);
        assert_eq!(a.not_after, b.not_after);
        assert_ne!(a.serial, b.serial);
    }

    #[test]
    fn request_doc_roundtrip() {
        let mut fix = fixture();
        let wp6 = fix.wp6;
        let alice = enroll(&mut fix, "alice", wp6);
        for subset in [None, Some(vec![fqan("/datagrid")])] {
            let req = request_for(&fix, &alice, subset);
            let parsed =
                AttributeRequest::from_doc(&Value::parse(&req.to_doc().to_bytes()).unwrap())
                    .unwrap();
            assert_eq!(parsed, req);
        }
    }
}
