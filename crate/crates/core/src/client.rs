//! Attribute-fetching client: one signed request per VO server, each reply
//! verified before the next server is contacted.
//!
//! The fetch is fail-fast: any transport fault, server-side rejection, or
//! verification failure aborts the whole run with the offending endpoint
//! named, so callers never assemble a proxy from partial results.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::assertion::{verify_assertion, AttributeAssertion};
use crate::authority::{build_request, BuildRequestError};
use crate::canonical::Value;
use crate::credential::{CredentialChain, IdentityCredential, RevocationList};
use crate::crypto::{KeyPair, PublicKey};
use crate::fqan::Fqan;
use crate::transport::{Transport, TransportError};

/// One attribute server to contact: where, which VO, and optionally which
/// subset of attributes to ask for.
#[derive(Debug, Clone)]
pub struct ServerSpec {
    pub endpoint: String,
    pub vo: String,
    pub subset: Option<Vec<Fqan>>,
}

#[derive(Debug, Error)]
pub enum FetchError {
    #[error("own chain is invalid: {0}")]
    InvalidChain(String),
    #[error("server list is empty")]
    NoServers,
    #[error("{endpoint}: transport failure: {source}")]
    Transport {
        endpoint: String,
        #[source]
        source: TransportError,
    },
    #[error("{endpoint}: server refused: {code}: {detail}")]
    Refused {
        endpoint: String,
        code: String,
        detail: String,
    },
    #[error("{endpoint}: malformed response: {detail}")]
    MalformedResponse { endpoint: String, detail: String },
    #[error("{endpoint}: returned assertion failed verification")]
    VerificationFailed { endpoint: String },
}

impl From<BuildRequestError> for FetchError {
    fn from(e: BuildRequestError) -> Self {
        match e {
            BuildRequestError::InvalidChain(d) => FetchError::InvalidChain(d),
        }
    }
}

/// Trust material the client needs: local anchors to validate its own chain
/// and registered server keys to verify what comes back.
#[derive(Debug, Default)]
pub struct ClientTrust {
    pub trust_anchors: Vec<IdentityCredential>,
    pub revocation_lists: Vec<RevocationList>,
    pub trusted_servers: BTreeMap<String, PublicKey>,
}

/// Fetch one verified assertion per server, in request order.
pub fn fetch_attributes(
    servers: &[ServerSpec],
    chain: &CredentialChain,
    leaf_key: &KeyPair,
    lifetime_seconds: u64,
    trust: &ClientTrust,
    transport: &dyn Transport,
    now: i64,
) -> Result<Vec<AttributeAssertion>, FetchError> {
    if servers.is_empty() {
        return Err(FetchError::NoServers);
    }
    let mut assertions = Vec::with_capacity(servers.len());
    for server in servers {
        let request = build_request(
            chain,
            leaf_key,
            server.vo.clone(),
            server.subset.clone(),
            lifetime_seconds,
            &trust.trust_anchors,
            &trust.revocation_lists,
            now,
        )?;
        let reply = transport
            .request(
                &server.endpoint,
                "POST",
                "/attributes",
                &request.to_doc().to_bytes(),
                &[],
            )
            .map_err(|source| FetchError::Transport {
                endpoint: server.endpoint.clone(),
                source,
            })?;
        let malformed = |detail: String| FetchError::MalformedResponse {
            endpoint: server.endpoint.clone(),
            detail,
        };
        let doc = Value::parse(&reply.body).map_err(|e| malformed(e.to_string()))?;
        if reply.status != 200 {
            return Err(FetchError::Refused {
                endpoint: server.endpoint.clone(),
                code: doc.get_str("code").unwrap_or("unknown").to_string(),
                detail: doc.get_str("detail").unwrap_or("").to_string(),
            });
        }
        let assertion = AttributeAssertion::from_doc(&doc).map_err(|e| malformed(e.to_string()))?;
        // the holder checks what it received before using it
        if !verify_assertion(&assertion, &trust.trusted_servers, chain, now)
            || assertion.vo != server.vo
        {
            return Err(FetchError::VerificationFailed {
                endpoint: server.endpoint.clone(),
            });
        }
        assertions.push(assertion);
    }
    Ok(assertions)
}
