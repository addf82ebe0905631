//! Distinguished subject names.
//!
//! A [`SubjectName`] is an ordered list of `(attribute, value)` components
//! rendered as `/ATTR=value/ATTR=value...`, the textual identity form used
//! everywhere a user, authority, or service is named.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SubjectError {
    #[error("subject must have at least one component")]
    Empty,
    #[error("component {0}: attribute must be non-empty and free of `/`, `=`, `\"`")]
    BadAttribute(usize),
    #[error("component {0}: value must be non-empty and free of `/`, `\"`")]
    BadValue(usize),
    #[error("cannot parse subject `{0}`")]
    Unparseable(String),
}

/// An ordered distinguished name such as `/C=IT/O=INFN/CN=Mario Rossi`.
///
/// Attributes may not contain `/`, `=`, or `"`; values may not contain `/` or
/// `"`. Those restrictions make rendering injective, so `parse(render(s))`
/// reproduces `s` exactly.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SubjectName {
    components: Vec<(String, String)>,
}

impl SubjectName {
    pub fn new(components: Vec<(String, String)>) -> Result<Self, SubjectError> {
        if components.is_empty() {
            return Err(SubjectError::Empty);
        }
        for (i, (attr, value)) in components.iter().enumerate() {
            if attr.is_empty() || attr.contains(['/', '=', '"']) {
                return Err(SubjectError::BadAttribute(i));
            }
            if value.is_empty() || value.contains(['/', '"']) {
                return Err(SubjectError::BadValue(i));
            }
        }
        Ok(SubjectName { components })
    }

    /// Convenience constructor from `(attr, value)` pairs.
    pub fn from_pairs<'a>(
        pairs: impl IntoIterator<Item = (&'a str, &'a str)>,
    ) -> Result<Self, SubjectError> {
        Self::new(
            pairs
                .into_iter()
                .map(|(a, v)| (a.to_string(), v.to_string()))
                .collect(),
        )
    }

    pub fn components(&self) -> &[(String, String)] {
        &self.components
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (attr, value) in &self.components {
            out.push('/');
            out.push_str(attr);
            out.push('=');
            out.push_str(value);
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, SubjectError> {
        let unparseable = || SubjectError::Unparseable(text.to_string());
        let rest = text.strip_prefix('/').ok_or_else(unparseable)?;
        if rest.is_empty() {
            return Err(unparseable());
        }
        let mut components = Vec::new();
        for part in rest.split('/') {
            let (attr, value) = part.split_once('=').ok_or_else(unparseable)?;
            components.push((attr.to_string(), value.to_string()));
        }
        Self::new(components).map_err(|_| unparseable())
    }

    /// The subject of a proxy derived from this name: one appended
    /// `CN=proxy` component.
    pub fn with_proxy_component(&self) -> SubjectName {
        let mut components = self.components.clone();
        components.push(("CN".to_string(), "proxy".to_string()));
        SubjectName { components }
    }

    /// True when `self` is `base` plus exactly one trailing `CN=proxy`.
    pub fn extends_as_proxy(&self, base: &SubjectName) -> bool {
        self.components.len() == base.components.len() + 1
            && self.components[..base.components.len()] == base.components[..]
            && self
                .components
                .last()
                .map(|(a, v)| (a.as_str(), v.as_str()))
                == Some(("CN", "proxy"))
    }
}

impl fmt::Display for SubjectName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn renders_slash_separated() {
        let s =
            SubjectName::from_pairs([("C", "IT"), ("O", "INFN"), ("CN", "Mario Rossi")]).unwrap();
        assert_eq!(s.render(), "/C=IT/O=INFN/CN=Mario Rossi");
    }

    #[test]
    fn parse_inverts_render() {
        let s = SubjectName::parse("/C=IT/O=INFN/CN=Mario Rossi").unwrap();
        assert_eq!(s.components().len(), 3);
        assert_eq!(SubjectName::parse(&s.render()).unwrap(), s);
    }

    #[test]
    fn value_may_contain_equals() {
        let s = SubjectName::from_pairs([("CN", "a=b")]).unwrap();
        assert_eq!(SubjectName::parse(&s.render()).unwrap(), s);
    }

    #[test]
    fn rejects_malformed() {
        assert!(SubjectName::new(vec![]).is_err());
        assert!(SubjectName::from_pairs([("", "x")]).is_err());
        assert!(SubjectName::from_pairs([("CN", "")]).is_err());
        assert!(SubjectName::from_pairs([("CN", "a/b")]).is_err());
        assert!(SubjectName::parse("no-leading-slash").is_err());
        assert!(SubjectName::parse("/CN").is_err());
        assert!(SubjectName::parse("/").is_err());
    }

    #[test]
    fn proxy_extension_rule() {
        let user = SubjectName::parse("/O=dg/CN=alice").unwrap();
        let proxy = user.with_proxy_component();
        assert_eq!(proxy.render(), "/O=dg/CN=alice/CN=proxy");
        assert!(proxy.extends_as_proxy(&user));
        assert!(!user.extends_as_proxy(&proxy));
        let second = proxy.with_proxy_component();
        assert!(second.extends_as_proxy(&proxy));
        assert!(!second.extends_as_proxy(&user));
    }

    prop_compose! {
        fn arb_component()(attr in "[A-Za-z][A-Za-z0-9.]{0,5}", value in "[A-Za-z0-9 ._=-]{1,12}") -> (String, String) {
            (attr, value)
        }
    }

    proptest! {
        #[test]
        fn roundtrip(components in prop::collection::vec(arb_component(), 1..6)) {
            let s = SubjectName::new(components).unwrap();
            prop_assert_eq!(SubjectName::parse(&s.render()).unwrap(), s);
        }
    }
}
