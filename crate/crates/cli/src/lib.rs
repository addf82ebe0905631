//! Shared plumbing for the command-line tools.
//!
//! Exit code convention across all tools: 0 success, 1 authorization or
//! validation failure, 2 transport or parse failure.

use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{anyhow, bail, Context, Result};
use vogrid_core::client::ClientTrust;
use vogrid_core::fqan::Fqan;
use vogrid_core::schedule::{TimeSchedule, Weekday};
use vogrid_core::store;
use vogrid_core::Value;

pub const EXIT_OK: i32 = 0;
pub const EXIT_DENIED: i32 = 1;
pub const EXIT_TRANSPORT: i32 = 2;

/// Current UNIX time, overridable for reproducible runs.
pub fn now_or(fixed: Option<i64>) -> i64 {
    fixed.unwrap_or_else(|| {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .expect("system clock before epoch")
            .as_secs() as i64
    })
}

pub fn print_doc(doc: &Value) {
    println!("{doc}");
}

/// Assemble the client-side trust material from CLI flags.
pub fn load_client_trust(
    trust_dir: Option<&Path>,
    revocation_files: &[std::path::PathBuf],
    trusted_servers: Option<&Path>,
) -> Result<ClientTrust> {
    let mut trust = ClientTrust::default();
    if let Some(dir) = trust_dir {
        trust.trust_anchors = store::load_trust_anchor_dir(dir)
            .with_context(|| format!("loading trust anchors from {}", dir.display()))?;
    }
    for path in revocation_files {
        trust.revocation_lists.push(
            store::load_revocation_list(path)
                .with_context(|| format!("loading revocation list {}", path.display()))?,
        );
    }
    if let Some(path) = trusted_servers {
        trust.trusted_servers = store::load_trusted_servers(path)
            .with_context(|| format!("loading trusted servers from {}", path.display()))?;
    }
    Ok(trust)
}

/// Parse a compact schedule argument:
///
/// - `always`
/// - `window:<start>:<end>` (UNIX seconds, half-open)
/// - `weekly:<Day,Day,...>:<start_minute>:<end_minute>`
pub fn parse_schedule_arg(text: &str) -> Result<TimeSchedule> {
    let mut parts = text.split(':');
    match parts.next() {
        Some("always") => Ok(TimeSchedule::Always),
        Some("window") => {
            let start: i64 = parts
                .next()
                .ok_or_else(|| anyhow!("window needs a start"))?
                .parse()?;
            let end: i64 = parts
                .next()
                .ok_or_else(|| anyhow!("window needs an end"))?
                .parse()?;
            Ok(TimeSchedule::window(start, end)?)
        }
        Some("weekly") => {
            let days_text = parts.next().ok_or_else(|| anyhow!("weekly needs days"))?;
            let start: u32 = parts
                .next()
                .ok_or_else(|| anyhow!("weekly needs a start minute"))?
                .parse()?;
            let end: u32 = parts
                .next()
                .ok_or_else(|| anyhow!("weekly needs an end minute"))?
                .parse()?;
            let mut days = Vec::new();
            for day in days_text.split(',') {
                days.push(Weekday::parse(day).map_err(|e| anyhow!("{e}"))?);
            }
            Ok(TimeSchedule::weekly(days, start, end)?)
        }
        _ => bail!("unknown schedule `{text}` (use always | window:S:E | weekly:Days:S:E)"),
    }
}

/// Parse a `VO[:FQAN]` argument as used by `--voms`.
pub fn parse_voms_arg(text: &str) -> Result<(String, Option<Fqan>)> {
    match text.split_once(':') {
        Some((vo, fqan_text)) => {
            let fqan =
                Fqan::parse(fqan_text).map_err(|e| anyhow!("bad FQAN in --voms {text}: {e}"))?;
            if fqan.vo() != vo {
                bail!("--voms {text}: FQAN belongs to VO `{}`", fqan.vo());
            }
            Ok((vo.to_string(), Some(fqan)))
        }
        None => Ok((text.to_string(), None)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_args() {
        assert_eq!(parse_schedule_arg("always").unwrap(), TimeSchedule::Always);
        assert_eq!(
            parse_schedule_arg("window:100:200").unwrap(),
            TimeSchedule::window(100, 200).unwrap()
        );
        assert_eq!(
            parse_schedule_arg("weekly:Mon,Fri:540:1020").unwrap(),
            TimeSchedule::weekly([Weekday::Mon, Weekday::Fri], 540, 1020).unwrap()
        );
        assert!(parse_schedule_arg("fortnightly").is_err());
        assert!(parse_schedule_arg("window:200:100").is_err());
    }

    #[test]
    fn voms_args() {
        assert_eq!(
            parse_voms_arg("datagrid").unwrap(),
            ("datagrid".into(), None)
        );
        let (vo, fqan) = parse_voms_arg("datagrid:/datagrid/wp6").unwrap();
        assert_eq!(vo, "datagrid");
        assert_eq!(fqan.unwrap().render(), "/datagrid/wp6");
        assert!(parse_voms_arg("datagrid:/othervo/wp6").is_err());
    }
}
