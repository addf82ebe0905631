//! Legacy grid-mapfile support: the flat subject-to-account file format and
//! the generator that builds one by querying attribute servers.
//!
//! Line grammar, pinned bit-exactly for compatibility tests:
//!
//! ```text
//! "<subject>" <target>
//! ```
//!
//! one entry per line, LF endings, trailing newline, entries sorted by
//! rendered subject. A target starting with `.` names a pool; anything else
//! is a literal local account.

use std::fmt;

use thiserror::Error;

use crate::fqan::Fqan;
use crate::subject::SubjectName;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GridmapError {
    #[error("duplicate subject `{0}`")]
    DuplicateSubject(String),
    #[error("line {0}: {1}")]
    MalformedLine(usize, String),
    #[error("config line {0}: {1}")]
    MalformedConfig(usize, String),
    #[error("endpoint `{endpoint}` unreachable: {detail}")]
    EndpointUnreachable { endpoint: String, detail: String },
}

/// Where a mapped subject lands: a named account or a pool reference.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MapTarget {
    Account(String),
    Pool(String),
}

impl MapTarget {
    pub fn parse(text: &str) -> Option<MapTarget> {
        if text.is_empty() || text.contains(char::is_whitespace) {
            return None;
        }
        match text.strip_prefix('.') {
            Some(pool) if !pool.is_empty() => Some(MapTarget::Pool(pool.to_string())),
            Some(_) => None,
            None => Some(MapTarget::Account(text.to_string())),
        }
    }
}

impl fmt::Display for MapTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MapTarget::Account(a) => f.write_str(a),
            MapTarget::Pool(p) => write!(f, ".{p}"),
        }
    }
}

/// A parsed grid-mapfile: unique subjects, sorted by rendered name.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridMapfile {
    entries: Vec<(SubjectName, MapTarget)>,
}

impl GridMapfile {
    /// Build from entries; sorts by rendered subject and rejects duplicates.
    pub fn new(mut entries: Vec<(SubjectName, MapTarget)>) -> Result<Self, GridmapError> {
        entries.sort_by_key(|(s, _)| s.render());
        for pair in entries.windows(2) {
            if pair[0].0 == pair[1].0 {
                return Err(GridmapError::DuplicateSubject(pair[0].0.render()));
            }
        }
        Ok(GridMapfile { entries })
    }

    pub fn entries(&self) -> &[(SubjectName, MapTarget)] {
        &self.entries
    }

    pub fn lookup(&self, subject: &SubjectName) -> Option<&MapTarget> {
        self.entries
            .iter()
            .find(|(s, _)| s == subject)
            .map(|(_, t)| t)
    }

    pub fn emit(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for (subject, target) in &self.entries {
            out.extend_from_slice(format!("\"{}\" {}\n", subject.render(), target).as_bytes());
        }
        out
    }

    pub fn parse(bytes: &[u8]) -> Result<Self, GridmapError> {
        let text = std::str::from_utf8(bytes)
            .map_err(|_| GridmapError::MalformedLine(0, "not UTF-8".into()))?;
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let lineno = i + 1;
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |detail: &str| GridmapError::MalformedLine(lineno, detail.to_string());
            let rest = line
                .strip_prefix('"')
                .ok_or_else(|| bad("expected quoted subject"))?;
            let (subject_text, rest) = rest
                .split_once('"')
                .ok_or_else(|| bad("unterminated subject quote"))?;
            let target_text = rest
                .strip_prefix(' ')
                .ok_or_else(|| bad("expected ` ` before target"))?;
            let subject = SubjectName::parse(subject_text).map_err(|e| bad(&e.to_string()))?;
            let target = MapTarget::parse(target_text).ok_or_else(|| bad("bad target"))?;
            entries.push((subject, target));
        }
        GridMapfile::new(entries)
    }
}

/// One directive of a generator config file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Directive {
    /// Pull the member list for an FQAN from an attribute server and map
    /// every member to `target`.
    Group {
        endpoint: String,
        fqan: Fqan,
        target: MapTarget,
    },
    /// Add one locally decided entry.
    Auth {
        subject: SubjectName,
        target: MapTarget,
    },
    /// Keep this subject out of the output no matter what.
    Deny { subject: SubjectName },
}

/// A generator config: plain text, one directive per line, `#` comments.
///
/// ```text
/// group dg.example:15000 /datagrid .dteam
/// auth "/C=IT/O=INFN/CN=Local Operator" oper
/// deny "/C=XX/O=Evil/CN=Unwanted"
/// ```
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MkgridmapConfig {
    pub directives: Vec<Directive>,
}

impl MkgridmapConfig {
    pub fn parse(text: &str) -> Result<Self, GridmapError> {
        let mut directives = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let lineno = i + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |detail: String| GridmapError::MalformedConfig(lineno, detail);
            let (verb, rest) = line
                .split_once(char::is_whitespace)
                .ok_or_else(|| bad("missing arguments".into()))?;
            let rest = rest.trim();
            match verb {
                "group" => {
                    let mut parts = rest.split_whitespace();
                    let endpoint = parts.next().ok_or_else(|| bad("missing endpoint".into()))?;
                    let vo_or_fqan = parts
                        .next()
                        .ok_or_else(|| bad("missing vo or FQAN".into()))?;
                    let target_text = parts.next().ok_or_else(|| bad("missing target".into()))?;
                    if parts.next().is_some() {
                        return Err(bad("trailing tokens".into()));
                    }
                    let fqan = if vo_or_fqan.starts_with('/') {
                        Fqan::parse(vo_or_fqan).map_err(|e| bad(e.to_string()))?
                    } else {
                        Fqan::group(vo_or_fqan, vec![]).map_err(|e| bad(e.to_string()))?
                    };
                    let target =
                        MapTarget::parse(target_text).ok_or_else(|| bad("bad target".into()))?;
                    directives.push(Directive::Group {
                        endpoint: endpoint.to_string(),
                        fqan,
                        target,
                    });
                }
                "auth" => {
                    let (subject, rest) = parse_quoted_subject(rest).map_err(&bad)?;
                    let target =
                        MapTarget::parse(rest.trim()).ok_or_else(|| bad("bad target".into()))?;
                    directives.push(Directive::Auth { subject, target });
                }
                "deny" => {
                    let (subject, rest) = parse_quoted_subject(rest).map_err(&bad)?;
                    if !rest.trim().is_empty() {
                        return Err(bad("trailing tokens".into()));
                    }
                    directives.push(Directive::Deny { subject });
                }
                other => return Err(bad(format!("unknown directive `{other}`"))),
            }
        }
        Ok(MkgridmapConfig { directives })
    }
}

fn parse_quoted_subject(text: &str) -> Result<(SubjectName, &str), String> {
    let rest = text.strip_prefix('"').ok_or("expected quoted subject")?;
    let (subject_text, rest) = rest.split_once('"').ok_or("unterminated subject quote")?;
    let subject = SubjectName::parse(subject_text).map_err(|e| e.to_string())?;
    Ok((subject, rest))
}

/// Resolves a `group` directive's endpoint and FQAN to the subjects holding
/// it (usually via the compatibility endpoint of the VO server).
pub type UserlistFetcher<'a> = dyn Fn(&str, &Fqan) -> Result<Vec<SubjectName>, String> + 'a;

/// Generate grid-mapfile bytes from a config.
///
/// Duplicate subjects resolve to the first directive that produced them; a
/// subject named by any `deny` directive never appears.
pub fn mkgridmap_generate(
    config: &MkgridmapConfig,
    fetch_userlist: &UserlistFetcher<'_>,
) -> Result<Vec<u8>, GridmapError> {
    let denied: Vec<&SubjectName> = config
        .directives
        .iter()
        .filter_map(|d| match d {
            Directive::Deny { subject } => Some(subject),
            _ => None,
        })
        .collect();

    let mut entries: Vec<(SubjectName, MapTarget)> = Vec::new();
    let mut push = |subject: SubjectName, target: MapTarget| {
        if denied.contains(&&subject) {
            return;
        }
        if entries.iter().any(|(s, _)| *s == subject) {
            return; // first directive wins
        }
        entries.push((subject, target));
    };

    for directive in &config.directives {
        match directive {
            Directive::Group {
                endpoint,
                fqan,
                target,
            } => {
                let members = fetch_userlist(endpoint, fqan).map_err(|detail| {
                    GridmapError::EndpointUnreachable {
                        endpoint: endpoint.clone(),
                        detail,
                    }
                })?;
                for member in members {
                    push(member, target.clone());
                }
            }
            Directive::Auth { subject, target } => push(subject.clone(), target.clone()),
            Directive::Deny { .. } => {}
        }
    }

    Ok(GridMapfile::new(entries)?.emit())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn subj(cn: &str) -> SubjectName {
        SubjectName::from_pairs([("C", "IT"), ("O", "INFN"), ("CN", cn)]).unwrap()
    }

    fn fixed_fetcher(
        members: Vec<SubjectName>,
    ) -> impl Fn(&str, &Fqan) -> Result<Vec<SubjectName>, String> {
        move |endpoint, _fqan| {
            if endpoint == "down:1" {
                Err("connection refused".into())
            } else {
                Ok(members.clone())
            }
        }
    }

    #[test]
    fn emit_is_sorted_with_lf_and_trailing_newline() {
        let gm = GridMapfile::new(vec![
            (subj("Zoe"), MapTarget::Pool("dteam".into())),
            (subj("Anna"), MapTarget::Account("anna".into())),
        ])
        .unwrap();
        let text = String::from_utf8(gm.emit()).unwrap();
        assert_eq!(
            text,
            "\"/C=IT/O=INFN/CN=Anna\" anna\n\"/C=IT/O=INFN/CN=Zoe\" .dteam\n"
        );
    }

    #[test]
    fn parse_inverts_emit() {
        let gm = GridMapfile::new(vec![
            (subj("Mario Rossi"), MapTarget::Pool("dteam".into())),
            (subj("Anna"), MapTarget::Account("anna".into())),
        ])
        .unwrap();
        assert_eq!(GridMapfile::parse(&gm.emit()).unwrap(), gm);
    }

    #[test]
    fn parse_skips_comments_and_blank_lines() {
        let text = b"# site additions\n\n\"/C=IT/O=INFN/CN=Anna\" anna\n";
        let gm = GridMapfile::parse(text).unwrap();
        assert_eq!(gm.entries().len(), 1);
        assert!(GridMapfile::parse(b"\"/C=IT/CN=x\" two words\n").is_err());
        assert!(GridMapfile::parse(b"/C=IT/CN=x anna\n").is_err());
    }

    #[test]
    fn duplicate_subjects_rejected() {
        let err = GridMapfile::new(vec![
            (subj("A"), MapTarget::Account("a".into())),
            (subj("A"), MapTarget::Account("b".into())),
        ])
        .unwrap_err();
        assert!(matches!(err, GridmapError::DuplicateSubject(_)));
    }

    #[test]
    fn config_parses_all_directives() {
        let cfg = MkgridmapConfig::parse(
            "# pull the whole VO\n\
             group dg.example:15000 datagrid .dteam\n\
             group dg.example:15000 /datagrid/wp6 wp6acct\n\
             auth \"/C=IT/O=INFN/CN=Local Operator\" oper\n\
             deny \"/C=IT/O=INFN/CN=Unwanted\"\n",
        )
        .unwrap();
        assert_eq!(cfg.directives.len(), 4);
        assert!(matches!(
            &cfg.directives[0],
            Directive::Group { fqan, target: MapTarget::Pool(p), .. }
                if fqan.render() == "/datagrid" && p == "dteam"
        ));
    }

    #[test]
    fn malformed_config_lines_are_located() {
        let err = MkgridmapConfig::parse("group only-two-args\n").unwrap_err();
        assert!(matches!(err, GridmapError::MalformedConfig(1, _)));
        let err = MkgridmapConfig::parse("\n\nfrobnicate x\n").unwrap_err();
        assert!(matches!(err, GridmapError::MalformedConfig(3, _)));
    }

    #[test]
    fn generate_sorts_members_and_applies_deny_and_auth() {
        let cfg = MkgridmapConfig::parse(
            "group dg:1 datagrid .dteam\n\
             auth \"/C=IT/O=INFN/CN=Local Operator\" oper\n\
             deny \"/C=IT/O=INFN/CN=Zoe\"\n",
        )
        .unwrap();
        let fetcher = fixed_fetcher(vec![subj("Zoe"), subj("Anna"), subj("Mario Rossi")]);
        let bytes = mkgridmap_generate(&cfg, &fetcher).unwrap();
        let text = String::from_utf8(bytes).unwrap();
        assert_eq!(
            text,
            "\"/C=IT/O=INFN/CN=Anna\" .dteam\n\
             \"/C=IT/O=INFN/CN=Local Operator\" oper\n\
             \"/C=IT/O=INFN/CN=Mario Rossi\" .dteam\n"
        );
    }

    #[test]
    fn deny_wins_regardless_of_position() {
        let cfg = MkgridmapConfig::parse(
            "deny \"/C=IT/O=INFN/CN=Anna\"\n\
             group dg:1 datagrid .dteam\n",
        )
        .unwrap();
        let fetcher = fixed_fetcher(vec![subj("Anna"), subj("Mario Rossi")]);
        let text = String::from_utf8(mkgridmap_generate(&cfg, &fetcher).unwrap()).unwrap();
        assert!(!text.contains("Anna"));
        assert!(text.contains("Mario Rossi"));
    }

    #[test]
    fn first_directive_wins_on_duplicates() {
        let cfg = MkgridmapConfig::parse(
            "auth \"/C=IT/O=INFN/CN=Anna\" special\n\
             group dg:1 datagrid .dteam\n",
        )
        .unwrap();
        let fetcher = fixed_fetcher(vec![subj("Anna")]);
        let text = String::from_utf8(mkgridmap_generate(&cfg, &fetcher).unwrap()).unwrap();
        assert_eq!(text, "\"/C=IT/O=INFN/CN=Anna\" special\n");
    }

    #[test]
    fn unreachable_endpoint_names_it() {
        let cfg = MkgridmapConfig::parse("group down:1 datagrid .dteam\n").unwrap();
        let fetcher = fixed_fetcher(vec![]);
        let err = mkgridmap_generate(&cfg, &fetcher).unwrap_err();
        assert!(
            matches!(err, GridmapError::EndpointUnreachable { endpoint, .. } if endpoint == "down:1")
        );
    }

    #[test]
    fn generation_is_byte_deterministic() {
        let cfg = MkgridmapConfig::parse("group dg:1 datagrid .dteam\n").unwrap();
        let fetcher = fixed_fetcher(vec![subj("B"), subj("A")]);
        assert_eq!(
            mkgridmap_generate(&cfg, &fetcher).unwrap(),
            mkgridmap_generate(&cfg, &fetcher).unwrap()
        );
    }
}
