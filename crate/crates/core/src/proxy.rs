//! Proxy tooling: collect assertions, embed them in a fresh proxy under a
//! non-critical extension, bundle everything into one file, and inspect it.
//!
//! The extension label is fixed (`voms-pseudo-certs`) and always
//! non-critical, so validators that know nothing about attributes accept
//! the proxy unchanged. Optional user-supplied authentication bytes ride
//! along opaquely; they are never parsed or validated here.

use std::path::Path;

use thiserror::Error;

use crate::assertion::AttributeAssertion;
use crate::canonical::{DocError, Value};
use crate::client::{fetch_attributes, ClientTrust, FetchError, ServerSpec};
use crate::credential::{
    create_proxy, CredentialChain, CredentialError, Extension, ProxyCredential,
};
use crate::crypto::{CryptoError, KeyPair, PublicKey};
use crate::transport::Transport;

/// Label of the proxy extension carrying attribute assertions.
pub const VOMS_EXTENSION_LABEL: &str = "voms-pseudo-certs";

#[derive(Debug, Error)]
pub enum ProxyToolError {
    #[error(transparent)]
    Fetch(#[from] FetchError),
    #[error(transparent)]
    Credential(#[from] CredentialError),
    #[error(transparent)]
    Key(#[from] CryptoError),
    #[error("malformed attribute payload: {0}")]
    MalformedPayload(String),
    #[error("cannot parse proxy bundle: {0}")]
    ParseError(String),
    #[error("proxy file io: {0}")]
    Io(#[from] std::io::Error),
}

/// The decoded content of the attribute extension.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VomsExtensionPayload {
    pub assertions: Vec<AttributeAssertion>,
    /// Opaque extra authentication material `(label, bytes)`.
    pub user_supplied: Option<(String, Vec<u8>)>,
}

impl VomsExtensionPayload {
    pub fn to_bytes(&self) -> Vec<u8> {
        Value::map()
            .field(
                "assertions",
                Value::Array(
                    self.assertions
                        .iter()
                        .map(AttributeAssertion::to_doc)
                        .collect(),
                ),
            )
            .field_opt(
                "user_supplied",
                self.user_supplied.as_ref().map(|(label, data)| {
                    Value::map()
                        .field_str("label", label)
                        .field_bytes("data", data)
                        .build()
                }),
            )
            .build()
            .to_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, DocError> {
        let doc = Value::parse(bytes)?;
        let mut assertions = Vec::new();
        for a in doc.get_array("assertions")? {
            assertions.push(AttributeAssertion::from_doc(a)?);
        }
        let user_supplied = match doc.get_opt("user_supplied") {
            Some(u) => Some((u.get_str("label")?.to_string(), u.get_bytes("data")?)),
            None => None,
        };
        Ok(VomsExtensionPayload {
            assertions,
            user_supplied,
        })
    }
}

/// Decode the assertions embedded in a proxy.
///
/// A proxy without the extension yields an empty list; a present but
/// undecodable payload is an error. Chain validity is not consulted.
pub fn extract_assertions(
    proxy: &ProxyCredential,
) -> Result<Vec<AttributeAssertion>, ProxyToolError> {
    match proxy.extension(VOMS_EXTENSION_LABEL) {
        Some(ext) => VomsExtensionPayload::from_bytes(&ext.payload)
            .map(|p| p.assertions)
            .map_err(|e| ProxyToolError::MalformedPayload(e.to_string())),
        None => Ok(Vec::new()),
    }
}

/// One file holding a proxy, its private key, and the issuing chain
/// (leaf first), which is everything a gatekeeper hand-off needs.
#[derive(Debug)]
pub struct ProxyBundle {
    pub proxy: ProxyCredential,
    pub key: KeyPair,
    pub chain: CredentialChain,
}

impl ProxyBundle {
    /// The proxy prepended to its issuing chain.
    pub fn full_chain(&self) -> CredentialChain {
        self.chain.extended_with(self.proxy.clone())
    }

    pub fn to_doc(&self) -> Value {
        Value::map()
            .field_str("format", "proxy-bundle")
            .field("proxy", self.proxy.to_doc())
            .field("key", self.key.to_doc())
            .field("chain", self.chain.to_doc())
            .build()
    }

    pub fn from_doc(doc: &Value) -> Result<Self, ProxyToolError> {
        let parse_err = |e: String| ProxyToolError::ParseError(e);
        if doc
            .get_str("format")
            .map_err(|e| parse_err(e.to_string()))?
            != "proxy-bundle"
        {
            return Err(parse_err("expected a proxy-bundle document".into()));
        }
        Ok(ProxyBundle {
            proxy: ProxyCredential::from_doc(
                doc.get("proxy").map_err(|e| parse_err(e.to_string()))?,
            )
            .map_err(|e| parse_err(e.to_string()))?,
            key: KeyPair::from_doc(doc.get("key").map_err(|e| parse_err(e.to_string()))?)?,
            chain: CredentialChain::from_doc(
                doc.get("chain").map_err(|e| parse_err(e.to_string()))?,
            )
            .map_err(|e| parse_err(e.to_string()))?,
        })
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ProxyToolError> {
        let doc = Value::parse(bytes).map_err(|e| ProxyToolError::ParseError(e.to_string()))?;
        Self::from_doc(&doc)
    }

    /// Write the bundle with owner-only permissions (it contains a key).
    pub fn save(&self, path: &Path) -> Result<(), ProxyToolError> {
        std::fs::write(path, self.to_doc().to_bytes())?;
        #[cfg(unix)]
        {
            use std::os::unix::fs::PermissionsExt;
            std::fs::set_permissions(path, std::fs::Permissions::from_mode(0o600))?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ProxyToolError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// Fetch assertions from every listed server, then derive a proxy carrying
/// them. Nothing is produced unless every server succeeded.
#[allow(clippy::too_many_arguments)]
pub fn build_proxy_bundle(
    chain: &CredentialChain,
    leaf_key: &mut KeyPair,
    servers: &[ServerSpec],
    lifetime_secs: Option<u64>,
    user_supplied: Option<(String, Vec<u8>)>,
    trust: &ClientTrust,
    transport: &dyn Transport,
    now: i64,
) -> Result<(ProxyBundle, bool), ProxyToolError> {
    let assertions = fetch_attributes(
        servers,
        chain,
        leaf_key,
        lifetime_secs.unwrap_or(crate::credential::DEFAULT_PROXY_LIFETIME_SECS),
        trust,
        transport,
        now,
    )?;
    let payload = VomsExtensionPayload {
        assertions,
        user_supplied,
    };
    let created = create_proxy(
        chain,
        leaf_key,
        lifetime_secs,
        vec![Extension {
            label: VOMS_EXTENSION_LABEL.to_string(),
            critical: false,
            payload: payload.to_bytes(),
        }],
        &trust.trust_anchors,
        &trust.revocation_lists,
        now,
    )?;
    let bundle = ProxyBundle {
        proxy: created.credential,
        key: created.key,
        chain: chain.clone(),
    };
    Ok((bundle, created.clamped))
}

/// Signature state of an embedded assertion as shown by the inspector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SignatureStatus {
    Verified,
    Invalid,
    NotChecked,
}

impl SignatureStatus {
    fn name(self) -> &'static str {
        match self {
            SignatureStatus::Verified => "verified",
            SignatureStatus::Invalid => "invalid",
            SignatureStatus::NotChecked => "not checked",
        }
    }
}

#[derive(Debug)]
pub struct AssertionInfo {
    pub vo: String,
    pub fqans: Vec<String>,
    pub within_window: bool,
    pub signature: SignatureStatus,
}

/// What `proxy-info` prints.
#[derive(Debug)]
pub struct ProxyReport {
    pub subject: String,
    pub issuer: String,
    pub remaining_seconds: i64,
    pub assertions: Vec<AssertionInfo>,
    pub has_extension: bool,
    pub user_supplied_label: Option<String>,
}

/// Inspect a bundle. Assertion signatures are checked only when a trusted
/// server key map is supplied; assertion windows are independent of the
/// proxy's own window.
pub fn proxy_info(
    bundle: &ProxyBundle,
    trusted_servers: Option<&std::collections::BTreeMap<String, PublicKey>>,
    now: i64,
) -> Result<ProxyReport, ProxyToolError> {
    let proxy = &bundle.proxy;
    let has_extension = proxy.extension(VOMS_EXTENSION_LABEL).is_some();
    let payload = match proxy.extension(VOMS_EXTENSION_LABEL) {
        Some(ext) => Some(
            VomsExtensionPayload::from_bytes(&ext.payload)
                .map_err(|e| ProxyToolError::MalformedPayload(e.to_string()))?,
        ),
        None => None,
    };

    let full_chain = bundle.full_chain();
    let mut assertions = Vec::new();
    if let Some(payload) = &payload {
        for assertion in &payload.assertions {
            let signature = match trusted_servers {
                Some(servers) => {
                    if crate::assertion::verify_assertion(assertion, servers, &full_chain, now) {
                        SignatureStatus::Verified
                    } else {
                        SignatureStatus::Invalid
                    }
                }
                None => SignatureStatus::NotChecked,
            };
            assertions.push(AssertionInfo {
                vo: assertion.vo.clone(),
                fqans: assertion.fqans.iter().map(|f| f.render()).collect(),
                within_window: assertion.not_before <= now && now < assertion.not_after,
                signature,
            });
        }
    }

    Ok(ProxyReport {
        subject: proxy.subject.render(),
        issuer: proxy.issuer.render(),
        remaining_seconds: (proxy.not_after - now).max(0),
        assertions,
        has_extension,
        user_supplied_label: payload.and_then(|p| p.user_supplied.map(|(label, _)| label)),
    })
}

impl ProxyReport {
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("subject   : {}\n", self.subject));
        out.push_str(&format!("issuer    : {}\n", self.issuer));
        out.push_str(&format!("timeleft  : {}s\n", self.remaining_seconds));
        if !self.has_extension {
            out.push_str("attributes: no VO attributes\n");
            return out;
        }
        for info in &self.assertions {
            out.push_str(&format!(
                "=== VO {} ({}, signature {}) ===\n",
                info.vo,
                if info.within_window {
                    "valid"
                } else {
                    "expired"
                },
                info.signature.name()
            ));
            for fqan in &info.fqans {
                out.push_str(&format!("attribute : {fqan}\n"));
            }
        }
        if let Some(label) = &self.user_supplied_label {
            out.push_str(&format!("extra auth: {label}\n"));
        }
        out
    }
}
