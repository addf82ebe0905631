//! Administration, history, request, and compatibility service surfaces for
//! one VO, plus the signed-envelope authentication they share.
//!
//! Every call carries an auth envelope in the `x-vo-auth` header: the
//! caller's credential chain and a leaf-key signature over the method,
//! path, query, body digest, nonce, and timestamp. The server validates the
//! chain against its anchors, checks the clock-skew window, and rejects
//! nonce replays — the same message-level discipline as the attribute
//! protocol.
//!
//! Endpoints:
//!
//! - `GET  /core/whoami` — caller's effective attributes
//! - `POST /admin/create-group | add-user | grant | revoke-grant | delegate`
//! - `GET  /admin/list-users`
//! - `GET  /history?since=SEQ` — audit records plus chain status
//! - `POST /request/submit`, `GET /request/list`, `POST /request/decide`
//! - `GET  /compat/userlist?fqan=...` — subjects holding an FQAN right now

use std::collections::{BTreeSet, HashMap};
use std::sync::{Arc, Mutex, RwLock};

use thiserror::Error;

use crate::authority::AttributeAuthority;
use crate::canonical::{DocError, Value};
use crate::credential::{validate_chain, CredentialChain, IdentityCredential, RevocationList};
use crate::crypto::{random_bytes, sha256, KeyPair};
use crate::fqan::Fqan;
use crate::registry::{Grant, GrantKind, GroupId, RegistryError, RequestState, VoRegistry};
use crate::schedule::TimeSchedule;
use crate::store::{StoreError, VoStore};
use crate::subject::SubjectName;
use crate::transport::{HttpRequest, HttpResponse, Transport};

pub const AUTH_HEADER: &str = "x-vo-auth";

/// The signed envelope authenticating one service call.
#[derive(Debug, Clone)]
pub struct AuthEnvelope {
    pub chain: CredentialChain,
    pub nonce: [u8; 16],
    pub timestamp: i64,
    pub signature: Vec<u8>,
}

fn envelope_signing_base(
    method: &str,
    path: &str,
    query: &str,
    body: &[u8],
    nonce: &[u8; 16],
    timestamp: i64,
) -> Vec<u8> {
    Value::map()
        .field_str("kind", "service-auth")
        .field_str("method", method)
        .field_str("path", path)
        .field_str("query", query)
        .field_bytes("body_sha256", sha256(body))
        .field_bytes("nonce", nonce)
        .field_int("timestamp", timestamp)
        .build()
        .to_bytes()
}

impl AuthEnvelope {
    pub fn build(
        chain: &CredentialChain,
        leaf_key: &KeyPair,
        method: &str,
        path: &str,
        query: &str,
        body: &[u8],
        now: i64,
    ) -> AuthEnvelope {
        let mut nonce = [0u8; 16];
        random_bytes(&mut nonce);
        let signature = leaf_key.sign(&envelope_signing_base(
            method, path, query, body, &nonce, now,
        ));
        AuthEnvelope {
            chain: chain.clone(),
            nonce,
            timestamp: now,
            signature,
        }
    }

    pub fn to_header_value(&self) -> String {
        let doc = Value::map()
            .field("chain", self.chain.to_doc())
            .field_bytes("nonce", self.nonce)
            .field_int("timestamp", self.timestamp)
            .field_bytes("signature", &self.signature)
            .build();
        hex::encode(doc.to_bytes())
    }

    pub fn from_header_value(text: &str) -> Result<AuthEnvelope, DocError> {
        let bytes = hex::decode(text.trim()).map_err(|_| DocError::BadHex("auth header".into()))?;
        let doc = Value::parse(&bytes)?;
        let nonce: [u8; 16] =
            doc.get_bytes("nonce")?
                .try_into()
                .map_err(|_| DocError::OutOfRange {
                    field: "nonce".into(),
                    detail: "must be 16 bytes".into(),
                })?;
        Ok(AuthEnvelope {
            chain: CredentialChain::from_doc(doc.get("chain")?)?,
            nonce,
            timestamp: doc.get_int("timestamp")?,
            signature: doc.get_bytes("signature")?,
        })
    }
}

/// The per-VO service state shared by all endpoints.
pub struct AdminService {
    store: Arc<RwLock<VoStore>>,
    trust_anchors: Vec<IdentityCredential>,
    revocation_lists: Vec<RevocationList>,
    clock_skew: i64,
    seen_nonces: Mutex<HashMap<[u8; 16], i64>>,
}

struct Caller {
    subject: SubjectName,
}

impl AdminService {
    pub fn new(
        store: Arc<RwLock<VoStore>>,
        trust_anchors: Vec<IdentityCredential>,
        revocation_lists: Vec<RevocationList>,
        clock_skew: u64,
    ) -> AdminService {
        AdminService {
            store,
            trust_anchors,
            revocation_lists,
            clock_skew: clock_skew as i64,
            seen_nonces: Mutex::new(HashMap::new()),
        }
    }

    /// Dispatch one request. Unknown paths get a 404 document.
    pub fn handle(&self, request: &HttpRequest, now: i64) -> HttpResponse {
        let caller = match self.authenticate(request, now) {
            Ok(caller) => caller,
            Err(response) => return response,
        };
        let route = (request.method.as_str(), request.path.as_str());
        let result = match route {
            ("GET", "/core/whoami") => self.whoami(&caller, now),
            ("POST", "/admin/create-group") => self.create_group(&caller, &request.body, now),
            ("POST", "/admin/add-user") => self.add_user(&caller, &request.body, now),
            ("POST", "/admin/grant") => self.grant(&caller, &request.body, now),
            ("POST", "/admin/revoke-grant") => self.revoke_grant(&caller, &request.body, now),
            ("POST", "/admin/delegate") => self.delegate(&caller, &request.body, now),
            ("GET", "/admin/list-users") => self.list_users(&caller),
            ("GET", "/history") => self.history(&caller, request),
            ("POST", "/request/submit") => self.submit_request(&caller, &request.body, now),
            ("GET", "/request/list") => self.list_requests(&caller),
            ("POST", "/request/decide") => self.decide_request(&caller, &request.body, now),
            ("GET", "/compat/userlist") => self.userlist(request, now),
            _ => return HttpResponse::not_found(),
        };
        result.unwrap_or_else(|e| e.into_response())
    }

    fn authenticate(&self, request: &HttpRequest, now: i64) -> Result<Caller, HttpResponse> {
        let denied = |detail: &str| {
            Err(HttpResponse::error(
                401,
                "authentication_failed",
                detail.to_string(),
            ))
        };
        let Some(header) = request.header(AUTH_HEADER) else {
            return denied("missing auth envelope");
        };
        let Ok(envelope) = AuthEnvelope::from_header_value(header) else {
            return denied("unparseable auth envelope");
        };
        let report = validate_chain(
            &envelope.chain,
            &self.trust_anchors,
            &self.revocation_lists,
            now,
        );
        if !report.accepted() {
            return denied(&format!("chain rejected: {}", report.describe()));
        }
        let leaf = envelope.chain.leaf().expect("validated chain is non-empty");
        let base = envelope_signing_base(
            &request.method,
            &request.path,
            &request.query,
            &request.body,
            &envelope.nonce,
            envelope.timestamp,
        );
        if !leaf.public_key().verify(&base, &envelope.signature) {
            return denied("envelope signature invalid");
        }
        if (envelope.timestamp - now).abs() > self.clock_skew {
            return denied("timestamp outside clock-skew window");
        }
        {
            let mut nonces = self.seen_nonces.lock().expect("nonce lock");
            nonces.retain(|_, seen| now - *seen <= self.clock_skew);
            if nonces.contains_key(&envelope.nonce) {
                return Err(HttpResponse::error(
                    401,
                    "replay_detected",
                    "nonce replayed",
                ));
            }
            nonces.insert(envelope.nonce, now);
        }
        let subject = envelope
            .chain
            .end_entity()
            .expect("validated chain has an end entity")
            .subject
            .clone();
        Ok(Caller { subject })
    }

    // ---- endpoint bodies ----

    fn whoami(&self, caller: &Caller, now: i64) -> Result<HttpResponse, ServiceFault> {
        let store = self.store.read().expect("store lock");
        let attributes = store.registry().effective_attributes(&caller.subject, now);
        Ok(HttpResponse::ok_doc(
            &Value::map()
                .field_str("subject", caller.subject.render())
                .field(
                    "attributes",
                    Value::Array(attributes.iter().map(|f| Value::str(f.render())).collect()),
                )
                .build(),
        ))
    }

    fn create_group(
        &self,
        caller: &Caller,
        body: &[u8],
        now: i64,
    ) -> Result<HttpResponse, ServiceFault> {
        let doc = parse_body(body)?;
        let name = doc.get_str("name")?.to_string();
        let forced = doc.get_bool("forced")?;
        let mut store = self.store.write().expect("store lock");
        let mut parents = BTreeSet::new();
        for p in doc.get_array("parents")? {
            parents.insert(resolve_group(store.registry(), p.str_value()?)?);
        }
        let id = store.mutate(|r| r.create_group(&caller.subject, &parents, &name, forced, now))?;
        let fqan = store
            .registry()
            .group_fqan(id)
            .expect("fresh group renders");
        Ok(HttpResponse::ok_doc(
            &Value::map()
                .field_u64("id", id.0)
                .field_str("fqan", fqan.render())
                .build(),
        ))
    }

    fn add_user(
        &self,
        caller: &Caller,
        body: &[u8],
        now: i64,
    ) -> Result<HttpResponse, ServiceFault> {
        let doc = parse_body(body)?;
        let user = parse_subject(doc.get_str("user")?)?;
        let mut store = self.store.write().expect("store lock");
        let scope = resolve_group(store.registry(), doc.get_str("group")?)?;
        store.mutate(|r| {
            r.grant(
                &caller.subject,
                Grant {
                    user,
                    scope,
                    kind: GrantKind::Membership,
                    schedule: TimeSchedule::Always,
                },
                now,
            )
        })?;
        Ok(ok_response())
    }

    fn grant(&self, caller: &Caller, body: &[u8], now: i64) -> Result<HttpResponse, ServiceFault> {
        let doc = parse_body(body)?;
        let user = parse_subject(doc.get_str("user")?)?;
        let kind = GrantKind::from_doc(doc.get_map("kind")?)?;
        let schedule = TimeSchedule::from_doc(doc.get_map("schedule")?)?;
        let mut store = self.store.write().expect("store lock");
        let scope = resolve_group(store.registry(), doc.get_str("scope")?)?;
        store.mutate(|r| {
            r.grant(
                &caller.subject,
                Grant {
                    user,
                    scope,
                    kind,
                    schedule,
                },
                now,
            )
        })?;
        Ok(ok_response())
    }

    fn revoke_grant(
        &self,
        caller: &Caller,
        body: &[u8],
        now: i64,
    ) -> Result<HttpResponse, ServiceFault> {
        let doc = parse_body(body)?;
        let user = parse_subject(doc.get_str("user")?)?;
        let kind = GrantKind::from_doc(doc.get_map("kind")?)?;
        let mut store = self.store.write().expect("store lock");
        let scope = resolve_group(store.registry(), doc.get_str("scope")?)?;
        store.mutate(|r| r.revoke_grant(&caller.subject, &user, scope, &kind, now))?;
        Ok(ok_response())
    }

    fn delegate(
        &self,
        caller: &Caller,
        body: &[u8],
        now: i64,
    ) -> Result<HttpResponse, ServiceFault> {
        let doc = parse_body(body)?;
        let admin = parse_subject(doc.get_str("admin")?)?;
        let mut store = self.store.write().expect("store lock");
        let scope = resolve_group(store.registry(), doc.get_str("scope")?)?;
        store.mutate(|r| r.delegate(&caller.subject, admin, scope, now))?;
        Ok(ok_response())
    }

    fn list_users(&self, caller: &Caller) -> Result<HttpResponse, ServiceFault> {
        let store = self.store.read().expect("store lock");
        let registry = store.registry();
        if !registry.authorize_admin(&caller.subject, registry.root()) {
            return Err(ServiceFault::NotAuthorized);
        }
        Ok(HttpResponse::ok_doc(
            &Value::map()
                .field(
                    "users",
                    Value::Array(
                        registry
                            .users()
                            .iter()
                            .map(|s| Value::str(s.render()))
                            .collect(),
                    ),
                )
                .build(),
        ))
    }

    fn history(
        &self,
        caller: &Caller,
        request: &HttpRequest,
    ) -> Result<HttpResponse, ServiceFault> {
        let since: u64 = request
            .query_param("since")
            .map(|s| s.parse())
            .transpose()
            .map_err(|_| ServiceFault::BadRequest("bad `since` parameter".into()))?
            .unwrap_or(0);
        let store = self.store.read().expect("store lock");
        let registry = store.registry();
        if !registry.authorize_admin(&caller.subject, registry.root()) {
            return Err(ServiceFault::NotAuthorized);
        }
        Ok(HttpResponse::ok_doc(
            &Value::map()
                .field_bool("chain_ok", registry.verify_audit_chain())
                .field(
                    "records",
                    Value::Array(
                        registry
                            .audit()
                            .since(since)
                            .iter()
                            .map(|r| r.to_doc())
                            .collect(),
                    ),
                )
                .build(),
        ))
    }

    fn submit_request(
        &self,
        caller: &Caller,
        body: &[u8],
        now: i64,
    ) -> Result<HttpResponse, ServiceFault> {
        let doc = parse_body(body)?;
        let mut store = self.store.write().expect("store lock");
        let mut scopes = Vec::new();
        for s in doc.get_array("scopes")? {
            scopes.push(resolve_group(store.registry(), s.str_value()?)?);
        }
        let id = store.mutate(|r| r.submit_request(&caller.subject, scopes, now))?;
        Ok(HttpResponse::ok_doc(
            &Value::map().field_u64("id", id).build(),
        ))
    }

    fn list_requests(&self, caller: &Caller) -> Result<HttpResponse, ServiceFault> {
        let store = self.store.read().expect("store lock");
        let registry = store.registry();
        if !registry.authorize_admin(&caller.subject, registry.root()) {
            return Err(ServiceFault::NotAuthorized);
        }
        let requests = registry
            .requests()
            .map(|r| {
                Value::map()
                    .field_u64("id", r.id)
                    .field_str("candidate", r.candidate.render())
                    .field(
                        "scopes",
                        Value::Array(
                            r.requested_scopes
                                .iter()
                                .filter_map(|s| registry.group_fqan(*s))
                                .map(|f| Value::str(f.render()))
                                .collect(),
                        ),
                    )
                    .field_str(
                        "state",
                        match r.state {
                            RequestState::Pending => "pending",
                            RequestState::Approved => "approved",
                            RequestState::Rejected => "rejected",
                        },
                    )
                    .build()
            })
            .collect();
        Ok(HttpResponse::ok_doc(
            &Value::map()
                .field("requests", Value::Array(requests))
                .build(),
        ))
    }

    fn decide_request(
        &self,
        caller: &Caller,
        body: &[u8],
        now: i64,
    ) -> Result<HttpResponse, ServiceFault> {
        let doc = parse_body(body)?;
        let id = doc.get_u64("id")?;
        let approve = doc.get_bool("approve")?;
        let mut store = self.store.write().expect("store lock");
        let decided = store.mutate(|r| r.decide_request(&caller.subject, id, approve, now))?;
        Ok(HttpResponse::ok_doc(
            &Value::map()
                .field_str(
                    "state",
                    match decided.state {
                        RequestState::Approved => "approved",
                        RequestState::Rejected => "rejected",
                        RequestState::Pending => "pending",
                    },
                )
                .build(),
        ))
    }

    fn userlist(&self, request: &HttpRequest, now: i64) -> Result<HttpResponse, ServiceFault> {
        let fqan_text = request
            .query_param("fqan")
            .ok_or_else(|| ServiceFault::BadRequest("missing `fqan` parameter".into()))?;
        let fqan = Fqan::parse(&fqan_text)
            .map_err(|e| ServiceFault::BadRequest(format!("bad fqan: {e}")))?;
        let store = self.store.read().expect("store lock");
        let subjects = store.registry().userlist(&fqan, now);
        Ok(HttpResponse::ok_doc(
            &Value::map()
                .field(
                    "subjects",
                    Value::Array(subjects.iter().map(|s| Value::str(s.render())).collect()),
                )
                .build(),
        ))
    }
}

/// Route one request across the attribute endpoint and the admin surfaces.
pub struct VoServiceRouter {
    pub authority: AttributeAuthority,
    pub admin: AdminService,
    pub store: Arc<RwLock<VoStore>>,
}

impl VoServiceRouter {
    pub fn handle(&self, request: &HttpRequest, now: i64) -> HttpResponse {
        if request.method == "POST" && request.path == "/attributes" {
            let doc = match Value::parse(&request.body) {
                Ok(doc) => doc,
                Err(e) => return HttpResponse::error(400, "bad_request", e.to_string()),
            };
            let attr_request = match crate::authority::AttributeRequest::from_doc(&doc) {
                Ok(r) => r,
                Err(e) => return HttpResponse::error(400, "bad_request", e.to_string()),
            };
            let store = self.store.read().expect("store lock");
            return match self
                .authority
                .handle_request(store.registry(), &attr_request, now)
            {
                Ok(assertion) => HttpResponse::ok_doc(&assertion.to_doc()),
                Err(e) => HttpResponse {
                    status: e.http_status(),
                    body: e.to_error_doc().to_bytes(),
                },
            };
        }
        self.admin.handle(request, now)
    }
}

#[derive(Debug, Error)]
enum ServiceFault {
    #[error("not authorized")]
    NotAuthorized,
    #[error("unknown entity")]
    UnknownEntity(String),
    #[error("{0}")]
    BadRequest(String),
    #[error("request already decided")]
    AlreadyDecided,
    #[error("storage failure: {0}")]
    Storage(String),
}

impl ServiceFault {
    fn into_response(self) -> HttpResponse {
        match self {
            ServiceFault::NotAuthorized => {
                HttpResponse::error(403, "not_authorized", self.to_string())
            }
            ServiceFault::UnknownEntity(detail) => {
                HttpResponse::error(404, "unknown_entity", detail)
            }
            ServiceFault::BadRequest(detail) => HttpResponse::error(400, "bad_request", detail),
            ServiceFault::AlreadyDecided => {
                HttpResponse::error(409, "already_decided", self.to_string())
            }
            ServiceFault::Storage(detail) => HttpResponse::error(500, "storage", detail),
        }
    }
}

impl From<DocError> for ServiceFault {
    fn from(e: DocError) -> Self {
        ServiceFault::BadRequest(e.to_string())
    }
}

impl From<StoreError> for ServiceFault {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::Registry(inner) => inner.into(),
            other => ServiceFault::Storage(other.to_string()),
        }
    }
}

impl From<RegistryError> for ServiceFault {
    fn from(e: RegistryError) -> Self {
        match e {
            RegistryError::NotAuthorized => ServiceFault::NotAuthorized,
            RegistryError::UnknownScope
            | RegistryError::UnknownRequest
            | RegistryError::NoSuchGrant => ServiceFault::UnknownEntity(e.to_string()),
            RegistryError::AlreadyDecided => ServiceFault::AlreadyDecided,
            other => ServiceFault::BadRequest(other.to_string()),
        }
    }
}

fn parse_body(body: &[u8]) -> Result<Value, ServiceFault> {
    Value::parse(body).map_err(|e| ServiceFault::BadRequest(e.to_string()))
}

fn ok_response() -> HttpResponse {
    HttpResponse::ok_doc(&Value::map().field_bool("ok", true).build())
}

fn parse_subject(text: &str) -> Result<SubjectName, ServiceFault> {
    SubjectName::parse(text).map_err(|e| ServiceFault::BadRequest(e.to_string()))
}

fn resolve_group(registry: &VoRegistry, path: &str) -> Result<GroupId, ServiceFault> {
    let fqan =
        Fqan::parse(path).map_err(|e| ServiceFault::BadRequest(format!("bad group path: {e}")))?;
    registry
        .resolve_group(&fqan)
        .ok_or_else(|| ServiceFault::UnknownEntity(format!("no group at {path}")))
}

/// Client-side helper: send one authenticated service call and decode the
/// response document.
#[derive(Debug, Error)]
pub enum AdminCallError {
    #[error(transparent)]
    Transport(#[from] crate::transport::TransportError),
    #[error("server refused: {code}: {detail}")]
    Refused { code: String, detail: String },
    #[error("malformed response: {0}")]
    Malformed(String),
}

#[allow(clippy::too_many_arguments)]
pub fn admin_call(
    transport: &dyn Transport,
    endpoint: &str,
    method: &str,
    path: &str,
    query: &str,
    body: Option<&Value>,
    chain: &CredentialChain,
    leaf_key: &KeyPair,
    now: i64,
) -> Result<Value, AdminCallError> {
    let body_bytes = body.map(Value::to_bytes).unwrap_or_default();
    let envelope = AuthEnvelope::build(chain, leaf_key, method, path, query, &body_bytes, now);
    let path_and_query = if query.is_empty() {
        path.to_string()
    } else {
        format!("{path}?{query}")
    };
    let reply = transport.request(
        endpoint,
        method,
        &path_and_query,
        &body_bytes,
        &[(AUTH_HEADER.to_string(), envelope.to_header_value())],
    )?;
    let doc = Value::parse(&reply.body).map_err(|e| AdminCallError::Malformed(e.to_string()))?;
    if reply.status != 200 {
        return Err(AdminCallError::Refused {
            code: doc.get_str("code").unwrap_or("unknown").to_string(),
            detail: doc.get_str("detail").unwrap_or("").to_string(),
        });
    }
    Ok(doc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::authority::ServerPolicy;
    use crate::testutil::*;
    use crate::transport::TcpTransport;

    struct Rig {
        world: World,
        _dir: tempfile::TempDir,
        server: crate::transport::HttpServer,
        endpoint: String,
    }

    /// Spin up a full VO service over real sockets with a fixed clock.
    fn rig() -> Rig {
        let mut world = World::new();
        let dir = tempfile::tempdir().unwrap();
        let owner = subject("vo owner");
        let store = Arc::new(RwLock::new(
            VoStore::create(dir.path(), "datagrid", owner.clone()).unwrap(),
        ));

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

        let router = Arc::new(VoServiceRouter {
            authority: AttributeAuthority::new(
                server_cred,
                server_key,
                ServerPolicy::new("datagrid", world.anchors()),
            ),
            admin: AdminService::new(Arc::clone(&store), world.anchors(), vec![], 300),
            store,
        });
        let now = world.now;
        let server = crate::transport::HttpServer::spawn(
            "127.0.0.1:0",
            Arc::new(move |req: &HttpRequest| router.handle(req, now)),
        )
        .unwrap();
        let endpoint = server.endpoint();
        Rig {
            world,
            _dir: dir,
            server,
            endpoint,
        }
    }

    fn call(
        rig: &Rig,
        user: &TestUser,
        method: &str,
        path: &str,
        query: &str,
        body: Option<&Value>,
    ) -> Result<Value, AdminCallError> {
        admin_call(
            &TcpTransport,
            &rig.endpoint,
            method,
            path,
            query,
            body,
            &user.chain,
            &user.key,
            rig.world.now,
        )
    }

    #[test]
    fn admin_flow_over_real_transport() {
        let mut rig = rig();
        let owner = rig.world.user("vo owner");
        let alice = rig.world.user("alice");

        // owner creates a group and adds alice
        let created = call(
            &rig,
            &owner,
            "POST",
            "/admin/create-group",
            "",
            Some(
                &Value::map()
                    .field_str("name", "wp6")
                    .field("parents", Value::Array(vec![Value::str("/datagrid")]))
                    .field_bool("forced", false)
                    .build(),
            ),
        )
        .unwrap();
        assert_eq!(created.get_str("fqan").unwrap(), "/datagrid/wp6");

        call(
            &rig,
            &owner,
            "POST",
            "/admin/add-user",
            "",
            Some(
                &Value::map()
                    .field_str("user", alice.credential.subject.render())
                    .field_str("group", "/datagrid/wp6")
                    .build(),
            ),
        )
        .unwrap();

        // alice sees her attributes
        let whoami = call(&rig, &alice, "GET", "/core/whoami", "", None).unwrap();
        let attrs: Vec<&str> = whoami
            .get_array("attributes")
            .unwrap()
            .iter()
            .map(|v| v.str_value().unwrap())
            .collect();
        assert_eq!(attrs, ["/datagrid", "/datagrid/wp6"]);

        // compatibility userlist sees her too
        let userlist = call(
            &rig,
            &alice,
            "GET",
            "/compat/userlist",
            &format!(
                "fqan={}",
                crate::transport::encode_query_component("/datagrid/wp6")
            ),
            None,
        )
        .unwrap();
        let subjects: Vec<&str> = userlist
            .get_array("subjects")
            .unwrap()
            .iter()
            .map(|v| v.str_value().unwrap())
            .collect();
        assert_eq!(subjects, [alice.credential.subject.render().as_str()]);

        // history replays the audit chain for the owner
        let history = call(&rig, &owner, "GET", "/history", "since=0", None).unwrap();
        assert!(history.get_bool("chain_ok").unwrap());
        assert_eq!(history.get_array("records").unwrap().len(), 2);

        // and the attribute endpoint issues from the same state
        let request = crate::authority::build_request(
            &alice.chain,
            &alice.key,
            "datagrid",
            None,
            3600,
            &rig.world.anchors(),
            &[],
            rig.world.now,
        )
        .unwrap();
        let reply = crate::transport::http_request(
            &rig.endpoint,
            "POST",
            "/attributes",
            &request.to_doc().to_bytes(),
            &[],
        )
        .unwrap();
        assert_eq!(reply.status, 200);
        let assertion =
            crate::assertion::AttributeAssertion::from_doc(&Value::parse(&reply.body).unwrap())
                .unwrap();
        assert_eq!(assertion.holder, alice.credential.subject);
        rig.server.shutdown();
    }

    #[test]
    fn non_admin_cannot_mutate() {
        let mut rig = rig();
        let mallory = rig.world.user("mallory");
        let err = call(
            &rig,
            &mallory,
            "POST",
            "/admin/create-group",
            "",
            Some(
                &Value::map()
                    .field_str("name", "rogue")
                    .field("parents", Value::Array(vec![Value::str("/datagrid")]))
                    .field_bool("forced", false)
                    .build(),
            ),
        )
        .unwrap_err();
        match err {
            AdminCallError::Refused { code, .. } => assert_eq!(code, "not_authorized"),
            other => panic!("expected refusal, got {other}"),
        }
    }

    #[test]
    fn request_lifecycle_over_service() {
        let mut rig = rig();
        let owner = rig.world.user("vo owner");
        let dave = rig.world.user("dave");

        let submitted = call(
            &rig,
            &dave,
            "POST",
            "/request/submit",
            "",
            Some(
                &Value::map()
                    .field("scopes", Value::Array(vec![Value::str("/datagrid")]))
                    .build(),
            ),
        )
        .unwrap();
        let id = submitted.get_u64("id").unwrap();

        // dave may not decide his own request
        let err = call(
            &rig,
            &dave,
            "POST",
            "/request/decide",
            "",
            Some(
                &Value::map()
                    .field_u64("id", id)
                    .field_bool("approve", true)
                    .build(),
            ),
        )
        .unwrap_err();
        assert!(matches!(err, AdminCallError::Refused { code, .. } if code == "not_authorized"));

        let decided = call(
            &rig,
            &owner,
            "POST",
            "/request/decide",
            "",
            Some(
                &Value::map()
                    .field_u64("id", id)
                    .field_bool("approve", true)
                    .build(),
            ),
        )
        .unwrap();
        assert_eq!(decided.get_str("state").unwrap(), "approved");

        // double decide
        let err = call(
            &rig,
            &owner,
            "POST",
            "/request/decide",
            "",
            Some(
                &Value::map()
                    .field_u64("id", id)
                    .field_bool("approve", false)
                    .build(),
            ),
        )
        .unwrap_err();
        assert!(matches!(err, AdminCallError::Refused { code, .. } if code == "already_decided"));
    }

    #[test]
    fn missing_envelope_and_replay_are_rejected() {
        let mut rig = rig();
        let owner = rig.world.user("vo owner");

        // no envelope at all
        let reply =
            crate::transport::http_request(&rig.endpoint, "GET", "/core/whoami", b"", &[]).unwrap();
        assert_eq!(reply.status, 401);

        // verbatim header replay
        let envelope = AuthEnvelope::build(
            &owner.chain,
            &owner.key,
            "GET",
            "/core/whoami",
            "",
            b"",
            rig.world.now,
        );
        let headers = vec![(AUTH_HEADER.to_string(), envelope.to_header_value())];
        let first =
            crate::transport::http_request(&rig.endpoint, "GET", "/core/whoami", b"", &headers)
                .unwrap();
        assert_eq!(first.status, 200);
        let second =
            crate::transport::http_request(&rig.endpoint, "GET", "/core/whoami", b"", &headers)
                .unwrap();
        assert_eq!(second.status, 401);
        let doc = Value::parse(&second.body).unwrap();
        assert_eq!(doc.get_str("code").unwrap(), "replay_detected");
    }

    #[test]
    fn envelope_does_not_authenticate_a_different_body() {
        let mut rig = rig();
        let owner = rig.world.user("vo owner");
        let real_body = Value::map()
            .field_str("user", "/O=test/CN=alice")
            .field_str("group", "/datagrid")
            .build()
            .to_bytes();
        let envelope = AuthEnvelope::build(
            &owner.chain,
            &owner.key,
            "POST",
            "/admin/add-user",
            "",
            &real_body,
            rig.world.now,
        );
        // swap in a different body under the same envelope
        let forged_body = Value::map()
            .field_str("user", "/O=test/CN=mallory")
            .field_str("group", "/datagrid")
            .build()
            .to_bytes();
        let reply = crate::transport::http_request(
            &rig.endpoint,
            "POST",
            "/admin/add-user",
            &forged_body,
            &[(AUTH_HEADER.to_string(), envelope.to_header_value())],
        )
        .unwrap();
        assert_eq!(reply.status, 401);
    }
}
