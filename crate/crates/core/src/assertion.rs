//! Signed attribute assertions.
//!
//! An assertion binds a holder (by subject name and identity-credential
//! serial) to a list of FQANs for a validity window, under the issuing
//! server's signature. Holders embed assertions in their proxies; relying
//! parties verify them against out-of-band registered server keys.

use crate::canonical::{DocError, Value};
use crate::credential::CredentialChain;
use crate::crypto::PublicKey;
use crate::fqan::Fqan;
use crate::subject::SubjectName;
use std::collections::BTreeMap;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttributeAssertion {
    pub holder: SubjectName,
    pub holder_serial: u64,
    pub issuer: SubjectName,
    pub vo: String,
    pub fqans: Vec<Fqan>,
    pub not_before: i64,
    pub not_after: i64,
    pub issued_at: i64,
    pub serial: u64,
    pub signature: Vec<u8>,
}

impl AttributeAssertion {
    pub fn signing_base(&self) -> Vec<u8> {
        self.body_doc().to_bytes()
    }

    fn body_doc(&self) -> Value {
        Value::map()
            .field_str("kind", "attribute-assertion")
            .field_str("holder", self.holder.render())
            .field_u64("holder_serial", self.holder_serial)
            .field_str("issuer", self.issuer.render())
            .field_str("vo", &self.vo)
            .field(
                "fqans",
                Value::Array(self.fqans.iter().map(|f| Value::str(f.render())).collect()),
            )
            .field_int("not_before", self.not_before)
            .field_int("not_after", self.not_after)
            .field_int("issued_at", self.issued_at)
            .field_u64("serial", self.serial)
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
        if doc.get_str("kind")? != "attribute-assertion" {
            return Err(bad("kind", "expected attribute-assertion".into()));
        }
        let mut fqans = Vec::new();
        for f in doc.get_array("fqans")? {
            fqans.push(Fqan::parse(f.str_value()?).map_err(|e| bad("fqans", e.to_string()))?);
        }
        if fqans.is_empty() {
            return Err(bad(
                "fqans",
                "an assertion must carry at least one FQAN".into(),
            ));
        }
        Ok(AttributeAssertion {
            holder: SubjectName::parse(doc.get_str("holder")?)
                .map_err(|e| bad("holder", e.to_string()))?,
            holder_serial: doc.get_u64("holder_serial")?,
            issuer: SubjectName::parse(doc.get_str("issuer")?)
                .map_err(|e| bad("issuer", e.to_string()))?,
            vo: doc.get_str("vo")?.to_string(),
            fqans,
            not_before: doc.get_int("not_before")?,
            not_after: doc.get_int("not_after")?,
            issued_at: doc.get_int("issued_at")?,
            serial: doc.get_u64("serial")?,
            signature: doc.get_bytes("signature")?,
        })
    }
}

/// Verify an assertion as a relying party.
///
/// True iff the signature verifies under the key registered for the
/// assertion's VO, `now` lies within `[not_before, not_after)`, and the
/// assertion's holder matches the end entity of `holder_chain` by subject
/// and credential serial. An assertion presented with someone else's chain
/// never verifies.
pub fn verify_assertion(
    assertion: &AttributeAssertion,
    trusted_servers: &BTreeMap<String, PublicKey>,
    holder_chain: &CredentialChain,
    now: i64,
) -> bool {
    let Some(server_key) = trusted_servers.get(&assertion.vo) else {
        return false;
    };
    if !server_key.verify(&assertion.signing_base(), &assertion.signature) {
        return false;
    }
    if !(assertion.not_before <= now && now < assertion.not_after) {
        return false;
    }
    let Some(end_entity) = holder_chain.end_entity() else {
        return false;
    };
    assertion.holder == end_entity.subject && assertion.holder_serial == end_entity.serial
}
