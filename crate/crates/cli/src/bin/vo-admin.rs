//! Administration client for a running VO server.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, Result};
use clap::{Parser, Subcommand};
use vogrid_cli::{now_or, parse_schedule_arg, print_doc, EXIT_DENIED, EXIT_OK, EXIT_TRANSPORT};
use vogrid_core::admin::{admin_call, AdminCallError};
use vogrid_core::crypto::KeyPair;
use vogrid_core::registry::GrantKind;
use vogrid_core::store;
use vogrid_core::transport::{encode_query_component, TcpTransport};
use vogrid_core::Value;

#[derive(Parser)]
#[command(name = "vo-admin", about = "administer a VO server")]
struct Cli {
    /// VO server endpoint, `host:port`
    #[arg(long)]
    server: String,
    /// Chain file authenticating the caller
    #[arg(long)]
    chain: PathBuf,
    /// Private key of the chain leaf
    #[arg(long)]
    key: PathBuf,
    /// Fixed evaluation time (UNIX seconds) instead of the system clock
    #[arg(long)]
    now: Option<i64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Show the caller's subject and effective attributes
    Whoami,
    /// Create a group under one or more parents
    CreateGroup {
        /// Group path, e.g. /datagrid/wp6 (last segment is the new name)
        path: String,
        /// Additional parent group paths (diamond shapes)
        #[arg(long = "also-under")]
        also_under: Vec<String>,
        /// Mark the group as forced (always included in issued attributes)
        #[arg(long)]
        forced: bool,
    },
    /// Add a user as a member of a group (always-active membership)
    AddUser { subject: String, group: String },
    /// Grant membership, a role, or a capability with a schedule
    Grant {
        subject: String,
        scope: String,
        /// membership | role:<name> | capability:<text>
        #[arg(long, default_value = "membership")]
        kind: String,
        /// always | window:S:E | weekly:Days:S:E
        #[arg(long, default_value = "always")]
        schedule: String,
    },
    /// Remove a grant
    RevokeGrant {
        subject: String,
        scope: String,
        #[arg(long, default_value = "membership")]
        kind: String,
    },
    /// Delegate administration of a group subtree
    Delegate { admin: String, scope: String },
    /// List every subject holding a grant
    ListUsers,
    /// Show audit history from a sequence number
    ShowHistory {
        #[arg(long, default_value_t = 0)]
        since: u64,
    },
    /// Submit a membership request for the caller
    Request { scopes: Vec<String> },
    /// Decide a pending membership request
    Decide {
        id: u64,
        #[arg(long)]
        approve: bool,
    },
    /// Subjects currently holding an FQAN (compatibility surface)
    Userlist { fqan: String },
}

fn parse_kind(text: &str) -> Result<GrantKind> {
    match text.split_once(':') {
        None if text == "membership" => Ok(GrantKind::Membership),
        Some(("role", name)) => Ok(GrantKind::Role(name.to_string())),
        Some(("capability", value)) => Ok(GrantKind::Capability(value.to_string())),
        _ => Err(anyhow!(
            "bad --kind `{text}` (membership | role:<name> | capability:<text>)"
        )),
    }
}

/// Split `/vo/a/b` into (parent `/vo/a`, name `b`).
fn split_group_path(path: &str) -> Result<(String, String)> {
    let (parent, name) = path
        .rsplit_once('/')
        .ok_or_else(|| anyhow!("group path must contain `/`"))?;
    if parent.is_empty() {
        return Err(anyhow!("cannot create the VO root"));
    }
    Ok((parent.to_string(), name.to_string()))
}

fn run(cli: &Cli) -> Result<Value, AdminCallError> {
    let now = now_or(cli.now);
    let chain =
        store::load_chain(&cli.chain).map_err(|e| AdminCallError::Malformed(e.to_string()))?;
    let key = KeyPair::load(&cli.key).map_err(|e| AdminCallError::Malformed(e.to_string()))?;
    let call = |method: &str, path: &str, query: &str, body: Option<&Value>| {
        admin_call(
            &TcpTransport,
            &cli.server,
            method,
            path,
            query,
            body,
            &chain,
            &key,
            now,
        )
    };
    let bad = |e: anyhow::Error| AdminCallError::Malformed(format!("{e:#}"));

    match &cli.command {
        Command::Whoami => call("GET", "/core/whoami", "", None),
        Command::CreateGroup {
            path,
            also_under,
            forced,
        } => {
            let (parent, name) = split_group_path(path).map_err(bad)?;
            let mut parents = vec![Value::str(parent)];
            parents.extend(also_under.iter().map(Value::str));
            call(
                "POST",
                "/admin/create-group",
                "",
                Some(
                    &Value::map()
                        .field_str("name", name)
                        .field("parents", Value::Array(parents))
                        .field_bool("forced", *forced)
                        .build(),
                ),
            )
        }
        Command::AddUser { subject, group } => call(
            "POST",
            "/admin/add-user",
            "",
            Some(
                &Value::map()
                    .field_str("user", subject)
                    .field_str("group", group)
                    .build(),
            ),
        ),
        Command::Grant {
            subject,
            scope,
            kind,
            schedule,
        } => {
            let kind = parse_kind(kind).map_err(bad)?;
            let schedule = parse_schedule_arg(schedule).map_err(bad)?;
            call(
                "POST",
                "/admin/grant",
                "",
                Some(
                    &Value::map()
                        .field_str("user", subject)
                        .field_str("scope", scope)
                        .field("kind", kind.to_doc())
                        .field("schedule", schedule.to_doc())
                        .build(),
                ),
            )
        }
        Command::RevokeGrant {
            subject,
            scope,
            kind,
        } => {
            let kind = parse_kind(kind).map_err(bad)?;
            call(
                "POST",
                "/admin/revoke-grant",
                "",
                Some(
                    &Value::map()
                        .field_str("user", subject)
                        .field_str("scope", scope)
                        .field("kind", kind.to_doc())
                        .build(),
                ),
            )
        }
        Command::Delegate { admin, scope } => call(
            "POST",
            "/admin/delegate",
            "",
            Some(
                &Value::map()
                    .field_str("admin", admin)
                    .field_str("scope", scope)
                    .build(),
            ),
        ),
        Command::ListUsers => call("GET", "/admin/list-users", "", None),
        Command::ShowHistory { since } => call("GET", "/history", &format!("since={since}"), None),
        Command::Request { scopes } => call(
            "POST",
            "/request/submit",
            "",
            Some(
                &Value::map()
                    .field(
                        "scopes",
                        Value::Array(scopes.iter().map(Value::str).collect()),
                    )
                    .build(),
            ),
        ),
        Command::Decide { id, approve } => call(
            "POST",
            "/request/decide",
            "",
            Some(
                &Value::map()
                    .field_u64("id", *id)
                    .field_bool("approve", *approve)
                    .build(),
            ),
        ),
        Command::Userlist { fqan } => call(
            "GET",
            "/compat/userlist",
            &format!("fqan={}", encode_query_component(fqan)),
            None,
        ),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(doc) => {
            print_doc(&doc);
            ExitCode::from(EXIT_OK as u8)
        }
        Err(e @ AdminCallError::Refused { .. }) => {
            eprintln!("vo-admin: {e}");
            ExitCode::from(EXIT_DENIED as u8)
        }
        Err(e) => {
            eprintln!("vo-admin: {e}");
            ExitCode::from(EXIT_TRANSPORT as u8)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn group_path_split() {
        assert_eq!(
            split_group_path("/datagrid/wp6").unwrap(),
            ("/datagrid".to_string(), "wp6".to_string())
        );
        assert!(split_group_path("datagrid").is_err());
        assert!(split_group_path("/datagrid").is_err());
    }

    #[test]
    fn kind_parse() {
        assert_eq!(parse_kind("membership").unwrap(), GrantKind::Membership);
        assert_eq!(
            parse_kind("role:admin").unwrap(),
            GrantKind::Role("admin".into())
        );
        assert_eq!(
            parse_kind("capability:fast lane").unwrap(),
            GrantKind::Capability("fast lane".into())
        );
        assert!(parse_kind("superpower").is_err());
    }
}
