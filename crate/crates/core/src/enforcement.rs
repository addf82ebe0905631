//! Site-side authorization: an ordered plugin chain plus a coarse-grained
//! per-method service authorizer.
//!
//! Chain semantics are fail-closed AND: plugins run in policy order, the
//! first deny short-circuits, an empty chain denies, and a crashing plugin
//! counts as a deny. Plugins are in-process functions registered by name;
//! sites add their own through [`PluginRegistry::register`].
//!
//! The shipped plugins:
//!
//! - `blacklist` — denies listed subjects and FQAN patterns. Runs against
//!   *presented* attributes, so a site ban cannot be dodged by presenting a
//!   tampered assertion.
//! - `wallclock` — caps requested wall-clock time (inclusive bound) and can
//!   restrict submission to a time window.
//! - `voms` — verifies presented assertions (signature, window, holder
//!   binding) and applies an ordered permit/deny FQAN ACL to the verified
//!   attributes only.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;

use thiserror::Error;

use crate::assertion::{verify_assertion, AttributeAssertion};
use crate::canonical::{DocError, Value};
use crate::credential::CredentialChain;
use crate::crypto::PublicKey;
use crate::fqan::{Fqan, FqanPattern};
use crate::gridmap::GridMapfile;
use crate::schedule::TimeSchedule;
use crate::subject::SubjectName;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("unknown plugin `{0}` in site policy")]
    UnknownPlugin(String),
    #[error("plugin `{0}` listed twice")]
    DuplicatePlugin(String),
    #[error("malformed policy document: {0}")]
    Malformed(#[from] DocError),
}

/// A job submission as seen by the authorization chain.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JobSpec {
    pub executable: String,
    pub requested_wallclock_seconds: u64,
    pub queue: String,
    pub attributes: BTreeMap<String, String>,
}

impl JobSpec {
    pub fn to_doc(&self) -> Value {
        let mut attrs = Value::map();
        for (k, v) in &self.attributes {
            attrs = attrs.field_str(k.clone(), v.clone());
        }
        Value::map()
            .field_str("executable", &self.executable)
            .field_u64("wallclock", self.requested_wallclock_seconds)
            .field_str("queue", &self.queue)
            .field("attributes", attrs.build())
            .build()
    }

    pub fn from_doc(doc: &Value) -> Result<Self, DocError> {
        let wallclock = doc.get_u64("wallclock")?;
        if wallclock == 0 {
            return Err(DocError::OutOfRange {
                field: "wallclock".into(),
                detail: "must be positive".into(),
            });
        }
        let mut attributes = BTreeMap::new();
        for (k, v) in doc.get_map("attributes")?.as_map()? {
            attributes.insert(k.clone(), v.str_value()?.to_string());
        }
        Ok(JobSpec {
            executable: doc.get_str("executable")?.to_string(),
            requested_wallclock_seconds: wallclock,
            queue: doc.get_str("queue")?.to_string(),
            attributes,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AclEffect {
    Permit,
    Deny,
}

/// An ordered first-match-wins FQAN rule list; no match means deny.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FqanAcl {
    pub rules: Vec<(FqanPattern, AclEffect)>,
}

impl FqanAcl {
    /// Walk the rules in order; the first rule matched by *any* presented
    /// FQAN decides. Nothing matching means deny.
    pub fn decide(&self, fqans: &[Fqan]) -> (AclEffect, String) {
        for (pattern, effect) in &self.rules {
            if let Some(hit) = fqans.iter().find(|f| pattern.matches(f)) {
                let verb = match effect {
                    AclEffect::Permit => "permitted",
                    AclEffect::Deny => "denied",
                };
                return (
                    *effect,
                    format!("{} by rule `{}` via {}", verb, pattern.render(), hit),
                );
            }
        }
        (AclEffect::Deny, "no ACL rule matched".to_string())
    }

    pub fn from_doc(doc: &Value) -> Result<Self, DocError> {
        let bad = |detail: String| DocError::OutOfRange {
            field: "acl".into(),
            detail,
        };
        let mut rules = Vec::new();
        for rule in doc.get_array("rules")? {
            let pattern =
                FqanPattern::parse(rule.get_str("pattern")?).map_err(|e| bad(e.to_string()))?;
            let effect = match rule.get_str("effect")? {
                "permit" => AclEffect::Permit,
                "deny" => AclEffect::Deny,
                other => return Err(bad(format!("unknown effect `{other}`"))),
            };
            rules.push((pattern, effect));
        }
        Ok(FqanAcl { rules })
    }

    pub fn to_doc(&self) -> Value {
        Value::map()
            .field(
                "rules",
                Value::Array(
                    self.rules
                        .iter()
                        .map(|(p, e)| {
                            Value::map()
                                .field_str("pattern", p.render())
                                .field_str(
                                    "effect",
                                    match e {
                                        AclEffect::Permit => "permit",
                                        AclEffect::Deny => "deny",
                                    },
                                )
                                .build()
                        })
                        .collect(),
                ),
            )
            .build()
    }
}

/// Everything a plugin may look at.
pub struct PluginInput<'a> {
    pub chain: &'a CredentialChain,
    /// End-entity subject of the validated chain.
    pub subject: &'a SubjectName,
    /// Assertions as presented (verification is each plugin's business).
    pub assertions: &'a [AttributeAssertion],
    pub job: &'a JobSpec,
    pub trusted_servers: &'a BTreeMap<String, PublicKey>,
    pub now: i64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PluginVerdict {
    pub permit: bool,
    pub reason: String,
}

impl PluginVerdict {
    pub fn permit(reason: impl Into<String>) -> Self {
        PluginVerdict {
            permit: true,
            reason: reason.into(),
        }
    }

    pub fn deny(reason: impl Into<String>) -> Self {
        PluginVerdict {
            permit: false,
            reason: reason.into(),
        }
    }
}

/// A plugin returning `Err` (or panicking) is recorded as a fault and
/// treated as a deny.
#[derive(Debug, Error)]
#[error("plugin fault: {0}")]
pub struct PluginFault(pub String);

pub trait AuthzPlugin: Send + Sync {
    fn evaluate(
        &self,
        config: &Value,
        input: &PluginInput<'_>,
    ) -> Result<PluginVerdict, PluginFault>;
}

/// Named plugins available to site policies.
pub struct PluginRegistry {
    plugins: BTreeMap<String, Arc<dyn AuthzPlugin>>,
}

impl PluginRegistry {
    pub fn empty() -> Self {
        PluginRegistry {
            plugins: BTreeMap::new(),
        }
    }

    /// The registry with the shipped plugins.
    pub fn standard() -> Self {
        let mut registry = PluginRegistry::empty();
        registry.register("blacklist", Arc::new(BlacklistPlugin));
        registry.register("wallclock", Arc::new(WallclockPlugin));
        registry.register("voms", Arc::new(VomsPlugin));
        registry
    }

    /// Register a locally developed plugin under a name usable from policy
    /// files.
    pub fn register(&mut self, name: impl Into<String>, plugin: Arc<dyn AuthzPlugin>) {
        self.plugins.insert(name.into(), plugin);
    }

    pub fn contains(&self, name: &str) -> bool {
        self.plugins.contains_key(name)
    }

    fn get(&self, name: &str) -> Option<&Arc<dyn AuthzPlugin>> {
        self.plugins.get(name)
    }
}

/// One chain entry: a plugin name and its configuration document.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PluginSpec {
    pub name: String,
    pub config: Value,
}

/// The site authorization policy: an ordered plugin chain plus the attribute
/// server keys this site trusts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SitePolicy {
    pub plugins: Vec<PluginSpec>,
    pub trusted_servers: BTreeMap<String, PublicKey>,
}

impl SitePolicy {
    /// Load a policy, rejecting unknown or duplicated plugin names up front.
    pub fn from_doc(doc: &Value, registry: &PluginRegistry) -> Result<Self, PolicyError> {
        let mut plugins = Vec::new();
        for p in doc.get_array("plugins")? {
            let name = p.get_str("name")?.to_string();
            if !registry.contains(&name) {
                return Err(PolicyError::UnknownPlugin(name));
            }
            if plugins.iter().any(|spec: &PluginSpec| spec.name == name) {
                return Err(PolicyError::DuplicatePlugin(name));
            }
            plugins.push(PluginSpec {
                name,
                config: p.get_map("config")?.clone(),
            });
        }
        let mut trusted_servers = BTreeMap::new();
        for s in doc.get_array("trusted_servers")? {
            trusted_servers.insert(
                s.get_str("vo")?.to_string(),
                PublicKey::from_doc(s.get_map("public_key")?)?,
            );
        }
        Ok(SitePolicy {
            plugins,
            trusted_servers,
        })
    }

    pub fn to_doc(&self) -> Value {
        Value::map()
            .field_str("format", "site-policy")
            .field(
                "plugins",
                Value::Array(
                    self.plugins
                        .iter()
                        .map(|p| {
                            Value::map()
                                .field_str("name", &p.name)
                                .field("config", p.config.clone())
                                .build()
                        })
                        .collect(),
                ),
            )
            .field(
                "trusted_servers",
                Value::Array(
                    self.trusted_servers
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
}

/// One executed plugin in a [`Decision`] trace.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceEntry {
    pub plugin: String,
    pub permit: bool,
    pub reason: String,
}

/// The chain outcome: allowed iff every executed plugin permitted and the
/// chain was non-empty.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decision {
    pub allowed: bool,
    pub trace: Vec<TraceEntry>,
}

impl Decision {
    pub fn to_doc(&self) -> Value {
        Value::map()
            .field_bool("allowed", self.allowed)
            .field(
                "trace",
                Value::Array(
                    self.trace
                        .iter()
                        .map(|t| {
                            Value::map()
                                .field_str("plugin", &t.plugin)
                                .field_bool("permit", t.permit)
                                .field_str("reason", &t.reason)
                                .build()
                        })
                        .collect(),
                ),
            )
            .build()
    }
}

/// Run the plugin chain in order with short-circuit on the first deny.
///
/// An empty chain denies. A plugin fault (error or panic) denies and is
/// recorded in the trace like any other verdict.
pub fn lcas_evaluate(
    policy: &SitePolicy,
    registry: &PluginRegistry,
    input: &PluginInput<'_>,
) -> Decision {
    let mut trace = Vec::new();
    if policy.plugins.is_empty() {
        return Decision {
            allowed: false,
            trace,
        };
    }
    for spec in &policy.plugins {
        let verdict = match registry.get(&spec.name) {
            Some(plugin) => {
                match catch_unwind(AssertUnwindSafe(|| plugin.evaluate(&spec.config, input))) {
                    Ok(Ok(verdict)) => verdict,
                    Ok(Err(fault)) => PluginVerdict::deny(fault.to_string()),
                    Err(_) => PluginVerdict::deny("plugin fault: panicked"),
                }
            }
            // load-time validation makes this unreachable from policy files
            None => PluginVerdict::deny(format!("plugin `{}` not registered", spec.name)),
        };
        let permit = verdict.permit;
        trace.push(TraceEntry {
            plugin: spec.name.clone(),
            permit,
            reason: verdict.reason,
        });
        if !permit {
            return Decision {
                allowed: false,
                trace,
            };
        }
    }
    Decision {
        allowed: true,
        trace,
    }
}

/// Presented FQANs regardless of verification state.
fn presented_fqans(assertions: &[AttributeAssertion]) -> Vec<Fqan> {
    assertions
        .iter()
        .flat_map(|a| a.fqans.iter().cloned())
        .collect()
}

/// FQANs from assertions that verify against the site's trusted servers and
/// bind to the presented chain.
pub fn verified_fqans(
    assertions: &[AttributeAssertion],
    trusted_servers: &BTreeMap<String, PublicKey>,
    chain: &CredentialChain,
    now: i64,
) -> Vec<Fqan> {
    assertions
        .iter()
        .filter(|a| verify_assertion(a, trusted_servers, chain, now))
        .flat_map(|a| a.fqans.iter().cloned())
        .collect()
}

struct BlacklistPlugin;

impl AuthzPlugin for BlacklistPlugin {
    fn evaluate(
        &self,
        config: &Value,
        input: &PluginInput<'_>,
    ) -> Result<PluginVerdict, PluginFault> {
        let fault = |e: DocError| PluginFault(format!("blacklist config: {e}"));
        for banned in config.get_array("banned_subjects").map_err(fault)? {
            if banned.str_value().map_err(fault)? == input.subject.render() {
                return Ok(PluginVerdict::deny(format!(
                    "subject {} is banned",
                    input.subject
                )));
            }
        }
        let presented = presented_fqans(input.assertions);
        for pattern_text in config.get_array("banned_fqan_patterns").map_err(fault)? {
            let pattern = FqanPattern::parse(pattern_text.str_value().map_err(fault)?)
                .map_err(|e| PluginFault(format!("blacklist config: {e}")))?;
            if let Some(hit) = presented.iter().find(|f| pattern.matches(f)) {
                return Ok(PluginVerdict::deny(format!(
                    "presented attribute {hit} matches banned pattern {}",
                    pattern.render()
                )));
            }
        }
        Ok(PluginVerdict::permit("not blacklisted"))
    }
}

struct WallclockPlugin;

impl AuthzPlugin for WallclockPlugin {
    fn evaluate(
        &self,
        config: &Value,
        input: &PluginInput<'_>,
    ) -> Result<PluginVerdict, PluginFault> {
        let fault = |e: DocError| PluginFault(format!("wallclock config: {e}"));
        let max_seconds = config.get_u64("max_seconds").map_err(fault)?;
        if input.job.requested_wallclock_seconds > max_seconds {
            return Ok(PluginVerdict::deny(format!(
                "requested {}s exceeds limit {}s",
                input.job.requested_wallclock_seconds, max_seconds
            )));
        }
        if let Some(window_doc) = config.get_opt("allowed_window") {
            let window = TimeSchedule::from_doc(window_doc).map_err(fault)?;
            if !window.is_active_at(input.now) {
                return Ok(PluginVerdict::deny("submission outside the allowed window"));
            }
        }
        Ok(PluginVerdict::permit("within wall-clock limits"))
    }
}

struct VomsPlugin;

impl AuthzPlugin for VomsPlugin {
    fn evaluate(
        &self,
        config: &Value,
        input: &PluginInput<'_>,
    ) -> Result<PluginVerdict, PluginFault> {
        let fault = |e: DocError| PluginFault(format!("voms config: {e}"));
        let acl = FqanAcl::from_doc(config.get_map("acl").map_err(fault)?).map_err(fault)?;
        let require_assertion = config.get_bool("require_assertion").map_err(fault)?;

        let verified = verified_fqans(
            input.assertions,
            input.trusted_servers,
            input.chain,
            input.now,
        );
        if verified.is_empty() {
            return Ok(if require_assertion {
                PluginVerdict::deny("no verifiable attribute assertion presented")
            } else {
                PluginVerdict::permit("abstain: no attribute assertion required")
            });
        }
        let (effect, reason) = acl.decide(&verified);
        Ok(match effect {
            AclEffect::Permit => PluginVerdict::permit(reason),
            AclEffect::Deny => PluginVerdict::deny(reason),
        })
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ServiceAuthzError {
    #[error("method `{0}` is not covered by the service policy")]
    UnknownMethod(String),
}

/// Per-method role requirements with an optional grid-mapfile fallback.
#[derive(Debug, Clone)]
pub struct ServicePolicy {
    /// Method name to the FQANs that satisfy it (any one suffices).
    pub methods: BTreeMap<String, Vec<Fqan>>,
    /// Requirement applied to methods not listed, when present.
    pub default_requirement: Option<Vec<Fqan>>,
    pub gridmap_fallback: Option<GridMapfile>,
}

/// Coarse-grained service authorization: permit iff a verified FQAN meets
/// the method's requirement, falling back to grid-mapfile listing when no
/// attribute satisfies it.
pub fn service_authorize(
    policy: &ServicePolicy,
    trusted_servers: &BTreeMap<String, PublicKey>,
    chain: &CredentialChain,
    assertions: &[AttributeAssertion],
    method: &str,
    now: i64,
) -> Result<bool, ServiceAuthzError> {
    let requirement = policy
        .methods
        .get(method)
        .or(policy.default_requirement.as_ref())
        .ok_or_else(|| ServiceAuthzError::UnknownMethod(method.to_string()))?;

    let verified = verified_fqans(assertions, trusted_servers, chain, now);
    if requirement
        .iter()
        .any(|required| verified.contains(required))
    {
        return Ok(true);
    }
    if let (Some(gridmap), Some(end_entity)) = (&policy.gridmap_fallback, chain.end_entity()) {
        if gridmap.lookup(&end_entity.subject).is_some() {
            return Ok(true);
        }
    }
    Ok(false)
}
