//! Fully qualified attribute names.
//!
//! An FQAN names a group path within a VO, optionally qualified by a role or
//! a capability:
//!
//! ```text
//! /<vo>(/<segment>)*(/Role=<role>)?(/Capability=<capability>)?
//! ```
//!
//! Group segments and roles are limited to `[A-Za-z0-9._-]+`. Capabilities
//! are free-form site-interpreted strings, capped at 255 bytes and barred
//! from containing `/` so the grammar stays unambiguous.

use std::fmt;

use thiserror::Error;

const ROLE_PREFIX: &str = "Role=";
const CAPABILITY_PREFIX: &str = "Capability=";
pub const MAX_CAPABILITY_BYTES: usize = 255;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FqanError {
    #[error("segment `{0}` must match [A-Za-z0-9._-]+")]
    BadSegment(String),
    #[error("role `{0}` must match [A-Za-z0-9._-]+")]
    BadRole(String),
    #[error("capability must be 1..=255 bytes and must not contain `/`")]
    BadCapability,
    #[error("cannot parse FQAN `{0}`")]
    Unparseable(String),
}

pub fn is_valid_segment(s: &str) -> bool {
    !s.is_empty()
        && s.bytes()
            .all(|b| b.is_ascii_alphanumeric() || matches!(b, b'.' | b'_' | b'-'))
}

fn is_valid_capability(s: &str) -> bool {
    !s.is_empty() && s.len() <= MAX_CAPABILITY_BYTES && !s.contains('/')
}

/// A parsed FQAN. An empty `groups` list names the VO root itself.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Fqan {
    vo: String,
    groups: Vec<String>,
    role: Option<String>,
    capability: Option<String>,
}

impl Fqan {
    pub fn new(
        vo: impl Into<String>,
        groups: Vec<String>,
        role: Option<String>,
        capability: Option<String>,
    ) -> Result<Self, FqanError> {
        let vo = vo.into();
        if !is_valid_segment(&vo) {
            return Err(FqanError::BadSegment(vo));
        }
        for g in &groups {
            if !is_valid_segment(g) {
                return Err(FqanError::BadSegment(g.clone()));
            }
        }
        if let Some(r) = &role {
            if !is_valid_segment(r) {
                return Err(FqanError::BadRole(r.clone()));
            }
        }
        if let Some(c) = &capability {
            if !is_valid_capability(c) {
                return Err(FqanError::BadCapability);
            }
        }
        Ok(Fqan {
            vo,
            groups,
            role,
            capability,
        })
    }

    /// Group-path FQAN without role or capability.
    pub fn group(vo: impl Into<String>, groups: Vec<String>) -> Result<Self, FqanError> {
        Fqan::new(vo, groups, None, None)
    }

    pub fn vo(&self) -> &str {
        &self.vo
    }

    pub fn groups(&self) -> &[String] {
        &self.groups
    }

    pub fn role(&self) -> Option<&str> {
        self.role.as_deref()
    }

    pub fn capability(&self) -> Option<&str> {
        self.capability.as_deref()
    }

    /// The same FQAN with role/capability stripped.
    pub fn scope(&self) -> Fqan {
        Fqan {
            vo: self.vo.clone(),
            groups: self.groups.clone(),
            role: None,
            capability: None,
        }
    }

    pub fn with_role(&self, role: impl Into<String>) -> Result<Fqan, FqanError> {
        Fqan::new(
            self.vo.clone(),
            self.groups.clone(),
            Some(role.into()),
            None,
        )
    }

    pub fn with_capability(&self, capability: impl Into<String>) -> Result<Fqan, FqanError> {
        Fqan::new(
            self.vo.clone(),
            self.groups.clone(),
            None,
            Some(capability.into()),
        )
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push('/');
        out.push_str(&self.vo);
        for g in &self.groups {
            out.push('/');
            out.push_str(g);
        }
        if let Some(r) = &self.role {
            out.push('/');
            out.push_str(ROLE_PREFIX);
            out.push_str(r);
        }
        if let Some(c) = &self.capability {
            out.push('/');
            out.push_str(CAPABILITY_PREFIX);
            out.push_str(c);
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, FqanError> {
        let unparseable = || FqanError::Unparseable(text.to_string());
        let rest = text.strip_prefix('/').ok_or_else(unparseable)?;
        if rest.is_empty() {
            return Err(unparseable());
        }

        // A capability is free-form, so it must be split off before any
        // slash-wise tokenizing.
        let (rest, capability) = match rest.split_once(&format!("/{CAPABILITY_PREFIX}")) {
            Some((head, cap)) => (head, Some(cap.to_string())),
            None => (rest, None),
        };

        let mut parts = rest.split('/');
        let vo = parts.next().ok_or_else(unparseable)?.to_string();
        let mut groups = Vec::new();
        let mut role = None;
        for part in parts {
            if let Some(r) = part.strip_prefix(ROLE_PREFIX) {
                if role.is_some() {
                    return Err(unparseable());
                }
                role = Some(r.to_string());
            } else if role.is_some() {
                // groups cannot follow a role
                return Err(unparseable());
            } else {
                groups.push(part.to_string());
            }
        }
        Fqan::new(vo, groups, role, capability).map_err(|_| unparseable())
    }
}

impl fmt::Display for Fqan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

impl PartialOrd for Fqan {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Fqan {
    /// FQANs order by their rendered string, the order used for issued
    /// attribute lists.
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.render().cmp(&other.render())
    }
}

/// An FQAN matching pattern: either a literal FQAN string or a prefix pattern
/// with a trailing `/*`.
///
/// `"/dg/sub/*"` matches `/dg/sub` itself and anything extending it, role and
/// capability forms included. First-match-wins rule lists are built from
/// these; anything unmatched is denied by the caller.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FqanPattern {
    prefix: String,
    subtree: bool,
}

impl FqanPattern {
    pub fn parse(text: &str) -> Result<Self, FqanError> {
        let unparseable = || FqanError::Unparseable(text.to_string());
        if let Some(prefix) = text.strip_suffix("/*") {
            if prefix.is_empty() || !prefix.starts_with('/') {
                return Err(unparseable());
            }
            Ok(FqanPattern {
                prefix: prefix.to_string(),
                subtree: true,
            })
        } else {
            // a literal pattern must itself be a well-formed FQAN
            Fqan::parse(text)?;
            Ok(FqanPattern {
                prefix: text.to_string(),
                subtree: false,
            })
        }
    }

    pub fn matches(&self, fqan: &Fqan) -> bool {
        self.matches_rendered(&fqan.render())
    }

    pub fn matches_rendered(&self, rendered: &str) -> bool {
        if self.subtree {
            rendered == self.prefix
                || (rendered.starts_with(&self.prefix)
                    && rendered.as_bytes().get(self.prefix.len()) == Some(&b'/'))
        } else {
            rendered == self.prefix
        }
    }

    pub fn render(&self) -> String {
        if self.subtree {
            format!("{}/*", self.prefix)
        } else {
            self.prefix.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn renders_grammar() {
        let f = Fqan::new(
            "datagrid",
            vec!["wp6".into()],
            Some("admin".into()),
            Some("run anywhere".into()),
        )
        .unwrap();
        assert_eq!(
            f.render(),
            "/datagrid/wp6/Role=admin/Capability=run anywhere"
        );
        let root = Fqan::group("datagrid", vec![]).unwrap();
        assert_eq!(root.render(), "/datagrid");
    }

    #[test]
    fn parse_inverts_render() {
        for text in [
            "/datagrid",
            "/datagrid/wp6",
            "/datagrid/wp6/admin",
            "/datagrid/Role=admin",
            "/datagrid/wp6/Role=shift-leader",
            "/datagrid/Capability=special processing",
            "/datagrid/wp6/Role=admin/Capability=x=y",
        ] {
            let f = Fqan::parse(text).unwrap();
            assert_eq!(f.render(), text);
        }
    }

    #[test]
    fn rejects_malformed() {
        assert!(Fqan::parse("datagrid").is_err());
        assert!(Fqan::parse("/").is_err());
        assert!(Fqan::parse("/dg/bad seg").is_err());
        assert!(Fqan::parse("/dg/Role=a/Role=b").is_err());
        assert!(Fqan::parse("/dg/Role=a/group").is_err());
        assert!(Fqan::new("dg", vec![], None, Some("a/b".into())).is_err());
        assert!(Fqan::new("dg", vec![], None, Some("x".repeat(256))).is_err());
    }

    #[test]
    fn capability_may_hold_free_text() {
        let f = Fqan::parse("/dg/Capability=queue short, io-heavy").unwrap();
        assert_eq!(f.capability(), Some("queue short, io-heavy"));
    }

    #[test]
    fn ordering_follows_rendered_string() {
        let mut v = [
            Fqan::parse("/dg/wp6").unwrap(),
            Fqan::parse("/dg").unwrap(),
            Fqan::parse("/dg/wp6/Role=admin").unwrap(),
        ];
        v.sort();
        let rendered: Vec<String> = v.iter().map(Fqan::render).collect();
        assert_eq!(rendered, ["/dg", "/dg/wp6", "/dg/wp6/Role=admin"]);
    }

    #[test]
    fn subtree_pattern_matches_scope_and_descendants() {
        let p = FqanPattern::parse("/datagrid/evil/*").unwrap();
        assert!(p.matches(&Fqan::parse("/datagrid/evil/x").unwrap()));
        assert!(p.matches(&Fqan::parse("/datagrid/evil").unwrap()));
        assert!(p.matches(&Fqan::parse("/datagrid/evil/Role=admin").unwrap()));
        assert!(!p.matches(&Fqan::parse("/datagrid/evildoer").unwrap()));
        assert!(!p.matches(&Fqan::parse("/datagrid").unwrap()));
    }

    #[test]
    fn literal_pattern_is_exact() {
        let p = FqanPattern::parse("/dg/wp6").unwrap();
        assert!(p.matches(&Fqan::parse("/dg/wp6").unwrap()));
        assert!(!p.matches(&Fqan::parse("/dg/wp6/sub").unwrap()));
        assert!(FqanPattern::parse("/*").is_err());
        assert!(FqanPattern::parse("dg/*").is_err());
    }

    prop_compose! {
        fn arb_segment()(s in "[A-Za-z0-9._-]{1,8}") -> String { s }
    }

    proptest! {
        #[test]
        fn roundtrip(
            vo in arb_segment(),
            groups in prop::collection::vec(arb_segment(), 0..4),
            role in prop::option::of(arb_segment()),
            capability in prop::option::of("[A-Za-z0-9 ._=,-]{1,20}"),
        ) {
            let f = Fqan::new(vo, groups, role, capability).unwrap();
            prop_assert_eq!(Fqan::parse(&f.render()).unwrap(), f);
        }
    }
}
