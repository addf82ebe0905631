//! The gatekeeper pipeline: validate the presented chain, pick up embedded
//! attributes, authorize through the site plugin chain, map to a local
//! credential.
//!
//! Every stage failure short-circuits with the stage recorded in the trace;
//! later stages never observe the output of a failed earlier stage. When no
//! attribute assertions are available — an attribute-unaware configuration
//! or a plain proxy — the grid-mapfile handles both authorization and
//! mapping, which keeps plain proxies working against both configurations
//! identically.
//!
//! The gate only decides; job execution is the caller's business.

use std::path::PathBuf;

use thiserror::Error;

use crate::canonical::{DocError, Value};
use crate::credential::{validate_chain, IdentityCredential, RevocationList, ValidationReport};
use crate::enforcement::{lcas_evaluate, JobSpec, PluginInput, PluginRegistry, SitePolicy};
use crate::gridmap::{GridMapfile, MapTarget};
use crate::mapping::{lcmaps_map, LeaseLedger, LocalCredential, MappingPolicy, UidRule};
use crate::proxy::{extract_assertions, ProxyBundle};

#[derive(Debug, Error)]
pub enum GateError {
    #[error("malformed gate request: {0}")]
    MalformedRequest(String),
}

/// A job submission: the proxy bundle bytes plus the job description.
#[derive(Debug, Clone)]
pub struct GateRequest {
    pub proxy_bundle: Vec<u8>,
    pub job: JobSpec,
}

impl GateRequest {
    pub fn to_doc(&self) -> Value {
        Value::map()
            .field_str("kind", "gate-request")
            .field_bytes("proxy_bundle", &self.proxy_bundle)
            .field("job", self.job.to_doc())
            .build()
    }

    pub fn from_doc(doc: &Value) -> Result<Self, DocError> {
        if doc.get_str("kind")? != "gate-request" {
            return Err(DocError::OutOfRange {
                field: "kind".into(),
                detail: "expected gate-request".into(),
            });
        }
        Ok(GateRequest {
            proxy_bundle: doc.get_bytes("proxy_bundle")?,
            job: JobSpec::from_doc(doc.get_map("job")?)?,
        })
    }
}

/// One pipeline stage in the response trace.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageRecord {
    pub stage: String,
    pub ok: bool,
    pub detail: String,
}

#[derive(Debug)]
pub struct GateResponse {
    pub allowed: bool,
    pub local: Option<LocalCredential>,
    pub decision_trace: Vec<StageRecord>,
    pub validation_report: ValidationReport,
}

impl GateResponse {
    pub fn to_doc(&self) -> Value {
        Value::map()
            .field_bool("allowed", self.allowed)
            .field_opt("local", self.local.as_ref().map(LocalCredential::to_doc))
            .field(
                "decision_trace",
                Value::Array(
                    self.decision_trace
                        .iter()
                        .map(|s| {
                            Value::map()
                                .field_str("stage", &s.stage)
                                .field_bool("ok", s.ok)
                                .field_str("detail", &s.detail)
                                .build()
                        })
                        .collect(),
                ),
            )
            .field("validation_report", self.validation_report.to_doc())
            .build()
    }
}

/// Everything a gate deployment is configured with.
pub struct GateConfig {
    pub trust_anchors: Vec<IdentityCredential>,
    pub revocation_lists: Vec<RevocationList>,
    pub site_policy: SitePolicy,
    pub mapping_policy: MappingPolicy,
    pub leasedir: PathBuf,
    /// When false the gate ignores embedded attributes entirely.
    pub voms_aware: bool,
    pub gridmapfile: Option<GridMapfile>,
}

#[derive(Debug, Error)]
pub enum GateConfigError {
    #[error("gate config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Store(#[from] crate::store::StoreError),
}

impl GateConfig {
    /// Load a gate config document naming the sub-policy files. Relative
    /// paths resolve against the config file's directory.
    ///
    /// ```text
    /// {"format":"gate-config","trust_anchor_dir":...,"revocation_files":[...],
    ///  "site_policy":...,"mapping_policy":...,"leasedir":...,
    ///  "voms_aware":true,"gridmapfile":...}
    /// ```
    pub fn load(
        path: &std::path::Path,
        plugins: &PluginRegistry,
    ) -> Result<GateConfig, GateConfigError> {
        let invalid = |detail: String| GateConfigError::Invalid(detail);
        let doc = crate::store::load_doc(path)?;
        if doc.get_str("format").map_err(|e| invalid(e.to_string()))? != "gate-config" {
            return Err(invalid("expected a gate-config document".into()));
        }
        let base = path.parent().unwrap_or_else(|| std::path::Path::new("."));
        let resolve = |p: &str| -> PathBuf {
            let p = std::path::Path::new(p);
            if p.is_absolute() {
                p.to_path_buf()
            } else {
                base.join(p)
            }
        };

        let get = |field: &str| doc.get_str(field).map_err(|e| invalid(e.to_string()));
        let trust_anchors =
            crate::store::load_trust_anchor_dir(&resolve(get("trust_anchor_dir")?))?;
        let mut revocation_lists = Vec::new();
        if let Some(files) = doc.get_opt("revocation_files") {
            for f in files.as_array().map_err(|e| invalid(e.to_string()))? {
                revocation_lists.push(crate::store::load_revocation_list(&resolve(
                    f.str_value().map_err(|e| invalid(e.to_string()))?,
                ))?);
            }
        }
        let site_policy = SitePolicy::from_doc(
            &crate::store::load_doc(&resolve(get("site_policy")?))?,
            plugins,
        )
        .map_err(|e| invalid(e.to_string()))?;
        let mapping_policy =
            MappingPolicy::from_doc(&crate::store::load_doc(&resolve(get("mapping_policy")?))?)
                .map_err(|e| invalid(e.to_string()))?;
        let gridmapfile = match doc.get_opt("gridmapfile") {
            Some(v) => {
                let p = resolve(v.str_value().map_err(|e| invalid(e.to_string()))?);
                let bytes = std::fs::read(&p)
                    .map_err(|e| invalid(format!("reading {}: {e}", p.display())))?;
                Some(GridMapfile::parse(&bytes).map_err(|e| invalid(e.to_string()))?)
            }
            None => None,
        };
        Ok(GateConfig {
            trust_anchors,
            revocation_lists,
            site_policy,
            mapping_policy,
            leasedir: resolve(get("leasedir")?),
            voms_aware: doc
                .get_bool("voms_aware")
                .map_err(|e| invalid(e.to_string()))?,
            gridmapfile,
        })
    }
}

/// Run the full pipeline for one request.
pub fn gate_handle(
    cfg: &GateConfig,
    plugins: &PluginRegistry,
    request: &GateRequest,
    now: i64,
) -> Result<GateResponse, GateError> {
    let bundle = ProxyBundle::from_bytes(&request.proxy_bundle)
        .map_err(|e| GateError::MalformedRequest(e.to_string()))?;
    let chain = bundle.full_chain();
    let mut trace = Vec::new();

    // stage 1: chain validation; nothing else sees an unvalidated chain
    let validation_report = validate_chain(&chain, &cfg.trust_anchors, &cfg.revocation_lists, now);
    trace.push(StageRecord {
        stage: "validate".into(),
        ok: validation_report.accepted(),
        detail: validation_report.describe(),
    });
    if !validation_report.accepted() {
        return Ok(GateResponse {
            allowed: false,
            local: None,
            decision_trace: trace,
            validation_report,
        });
    }
    let subject = chain
        .end_entity()
        .expect("validated chain has an end entity")
        .subject
        .clone();

    // stage 2: attribute extraction (attribute-aware deployments only)
    let assertions = if cfg.voms_aware {
        match extract_assertions(&bundle.proxy) {
            Ok(assertions) => {
                trace.push(StageRecord {
                    stage: "extract".into(),
                    ok: true,
                    detail: format!("{} assertion(s)", assertions.len()),
                });
                assertions
            }
            Err(e) => {
                trace.push(StageRecord {
                    stage: "extract".into(),
                    ok: false,
                    detail: e.to_string(),
                });
                return Ok(GateResponse {
                    allowed: false,
                    local: None,
                    decision_trace: trace,
                    validation_report,
                });
            }
        }
    } else {
        Vec::new()
    };

    let ledger = match LeaseLedger::open(&cfg.leasedir) {
        Ok(l) => l,
        Err(e) => {
            trace.push(StageRecord {
                stage: "lcmaps".into(),
                ok: false,
                detail: e.to_string(),
            });
            return Ok(GateResponse {
                allowed: false,
                local: None,
                decision_trace: trace,
                validation_report,
            });
        }
    };

    if !assertions.is_empty() {
        // stage 3: the site authorization chain
        let input = PluginInput {
            chain: &chain,
            subject: &subject,
            assertions: &assertions,
            job: &request.job,
            trusted_servers: &cfg.site_policy.trusted_servers,
            now,
        };
        let decision = lcas_evaluate(&cfg.site_policy, plugins, &input);
        for entry in &decision.trace {
            trace.push(StageRecord {
                stage: format!("lcas:{}", entry.plugin),
                ok: entry.permit,
                detail: entry.reason.clone(),
            });
        }
        if !decision.allowed {
            if decision.trace.is_empty() {
                trace.push(StageRecord {
                    stage: "lcas".into(),
                    ok: false,
                    detail: "empty plugin chain denies".into(),
                });
            }
            return Ok(GateResponse {
                allowed: false,
                local: None,
                decision_trace: trace,
                validation_report,
            });
        }

        // stage 4: map to a local credential using the verified attributes
        let fqans = crate::enforcement::verified_fqans(
            &assertions,
            &cfg.site_policy.trusted_servers,
            &chain,
            now,
        );
        match lcmaps_map(&cfg.mapping_policy, &ledger, &subject, &fqans, now) {
            Ok(local) => {
                trace.push(StageRecord {
                    stage: "lcmaps".into(),
                    ok: true,
                    detail: format!("mapped to {}", local.account),
                });
                Ok(GateResponse {
                    allowed: true,
                    local: Some(local),
                    decision_trace: trace,
                    validation_report,
                })
            }
            Err(e) => {
                trace.push(StageRecord {
                    stage: "lcmaps".into(),
                    ok: false,
                    detail: e.to_string(),
                });
                Ok(GateResponse {
                    allowed: false,
                    local: None,
                    decision_trace: trace,
                    validation_report,
                })
            }
        }
    } else {
        // legacy path: grid-mapfile authorizes and maps
        let Some(gridmap) = &cfg.gridmapfile else {
            trace.push(StageRecord {
                stage: "gridmap".into(),
                ok: false,
                detail: "no attributes presented and no grid-mapfile configured".into(),
            });
            return Ok(GateResponse {
                allowed: false,
                local: None,
                decision_trace: trace,
                validation_report,
            });
        };
        let Some(target) = gridmap.lookup(&subject) else {
            trace.push(StageRecord {
                stage: "gridmap".into(),
                ok: false,
                detail: format!("subject {subject} not listed"),
            });
            return Ok(GateResponse {
                allowed: false,
                local: None,
                decision_trace: trace,
                validation_report,
            });
        };
        match legacy_map(cfg, &ledger, &subject, target, now) {
            Ok(local) => {
                trace.push(StageRecord {
                    stage: "gridmap".into(),
                    ok: true,
                    detail: format!("mapped to {}", local.account),
                });
                Ok(GateResponse {
                    allowed: true,
                    local: Some(local),
                    decision_trace: trace,
                    validation_report,
                })
            }
            Err(detail) => {
                trace.push(StageRecord {
                    stage: "gridmap".into(),
                    ok: false,
                    detail,
                });
                Ok(GateResponse {
                    allowed: false,
                    local: None,
                    decision_trace: trace,
                    validation_report,
                })
            }
        }
    }
}

/// Resolve a grid-mapfile target to a local credential: pool targets lease,
/// account targets look up uid/gid in the mapping policy (static rules
/// first, then pool account lists).
fn legacy_map(
    cfg: &GateConfig,
    ledger: &LeaseLedger,
    subject: &crate::subject::SubjectName,
    target: &MapTarget,
    now: i64,
) -> Result<LocalCredential, String> {
    match target {
        MapTarget::Pool(pool_name) => {
            let pool = cfg
                .mapping_policy
                .pool(pool_name)
                .ok_or_else(|| format!("grid-mapfile names unknown pool `{pool_name}`"))?;
            let (account, uid) = ledger
                .acquire(pool, subject, now)
                .map_err(|e| e.to_string())?;
            Ok(LocalCredential::new(
                account,
                uid,
                pool.default_gid,
                Default::default(),
            ))
        }
        MapTarget::Account(account) => {
            for rule in &cfg.mapping_policy.uid_rules {
                if let UidRule::Static {
                    account: a,
                    uid,
                    default_gid,
                    ..
                } = rule
                {
                    if a == account {
                        return Ok(LocalCredential::new(
                            account.clone(),
                            *uid,
                            *default_gid,
                            Default::default(),
                        ));
                    }
                }
            }
            for pool in &cfg.mapping_policy.pools {
                if let Some((_, uid)) = pool.accounts.iter().find(|(a, _)| a == account) {
                    return Ok(LocalCredential::new(
                        account.clone(),
                        *uid,
                        pool.default_gid,
                        Default::default(),
                    ));
                }
            }
            Err(format!("no uid known for grid-mapfile account `{account}`"))
        }
    }
}
