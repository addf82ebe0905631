//! Create a proxy carrying attribute assertions fetched from one or more VO
//! servers.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::Parser;
use vogrid_cli::{load_client_trust, now_or, parse_voms_arg, EXIT_DENIED, EXIT_OK, EXIT_TRANSPORT};
use vogrid_core::client::{FetchError, ServerSpec};
use vogrid_core::crypto::KeyPair;
use vogrid_core::fqan::Fqan;
use vogrid_core::proxy::{build_proxy_bundle, ProxyToolError};
use vogrid_core::store;
use vogrid_core::transport::TcpTransport;

#[derive(Parser)]
#[command(name = "proxy-init", about = "create a proxy with VO attributes")]
struct Cli {
    /// Attribute server endpoint(s), `host:port`; one per --voms, or a
    /// single one shared by all
    #[arg(long = "server", required = true)]
    servers: Vec<String>,
    /// VO to contact, optionally with one requested FQAN: `VO[:FQAN]`
    #[arg(long = "voms", required = true)]
    voms: Vec<String>,
    /// Proxy and assertion lifetime in seconds (default twelve hours)
    #[arg(long)]
    lifetime: Option<u64>,
    /// Request only these FQANs (repeatable); grouped by their VO
    #[arg(long = "subset")]
    subsets: Vec<String>,
    /// Embed the file's bytes as opaque extra authentication info
    #[arg(long = "include-auth")]
    include_auth: Option<PathBuf>,
    /// Chain file (leaf first) for the issuing credential
    #[arg(long)]
    chain: PathBuf,
    /// Private key file of the chain leaf
    #[arg(long)]
    key: PathBuf,
    /// Where to write the proxy bundle
    #[arg(long)]
    out: PathBuf,
    /// Directory of trust-anchor credential files
    #[arg(long = "trust-dir")]
    trust_dir: Option<PathBuf>,
    /// Revocation list file(s)
    #[arg(long = "revocations")]
    revocations: Vec<PathBuf>,
    /// Registered attribute-server keys for verifying responses
    #[arg(long = "trusted-servers")]
    trusted_servers: Option<PathBuf>,
    /// Fixed evaluation time (UNIX seconds) instead of the system clock
    #[arg(long)]
    now: Option<i64>,
}

fn build_server_specs(cli: &Cli) -> Result<Vec<ServerSpec>> {
    if cli.servers.len() != cli.voms.len() && cli.servers.len() != 1 {
        bail!("--server must appear once per --voms (or exactly once in total)");
    }
    let mut extra_subsets: Vec<Fqan> = Vec::new();
    for text in &cli.subsets {
        extra_subsets.push(Fqan::parse(text).map_err(|e| anyhow::anyhow!("bad --subset: {e}"))?);
    }
    let mut specs = Vec::new();
    for (i, voms) in cli.voms.iter().enumerate() {
        let (vo, inline_fqan) = parse_voms_arg(voms)?;
        let endpoint = if cli.servers.len() == 1 {
            cli.servers[0].clone()
        } else {
            cli.servers[i].clone()
        };
        let mut subset: Vec<Fqan> = extra_subsets
            .iter()
            .filter(|f| f.vo() == vo)
            .cloned()
            .collect();
        if let Some(f) = inline_fqan {
            subset.push(f);
        }
        subset.sort();
        subset.dedup();
        specs.push(ServerSpec {
            endpoint,
            vo,
            subset: if subset.is_empty() {
                None
            } else {
                Some(subset)
            },
        });
    }
    Ok(specs)
}

fn run(cli: &Cli) -> Result<(), ProxyToolError> {
    let now = now_or(cli.now);
    let trust = load_client_trust(
        cli.trust_dir.as_deref(),
        &cli.revocations,
        cli.trusted_servers.as_deref(),
    )
    .map_err(|e| ProxyToolError::ParseError(format!("{e:#}")))?;
    let chain =
        store::load_chain(&cli.chain).map_err(|e| ProxyToolError::ParseError(e.to_string()))?;
    let mut key = KeyPair::load(&cli.key).map_err(|e| ProxyToolError::ParseError(e.to_string()))?;
    let servers =
        build_server_specs(cli).map_err(|e| ProxyToolError::ParseError(format!("{e:#}")))?;
    let user_supplied = match &cli.include_auth {
        Some(path) => {
            let bytes = std::fs::read(path)
                .with_context(|| format!("reading {}", path.display()))
                .map_err(|e| ProxyToolError::ParseError(format!("{e:#}")))?;
            Some((
                path.file_name()
                    .unwrap_or_default()
                    .to_string_lossy()
                    .into_owned(),
                bytes,
            ))
        }
        None => None,
    };

    let (bundle, clamped) = build_proxy_bundle(
        &chain,
        &mut key,
        &servers,
        cli.lifetime,
        user_supplied,
        &trust,
        &TcpTransport,
        now,
    )?;
    if clamped {
        eprintln!(
            "warning: requested lifetime exceeds issuer validity; proxy clamped to issuer expiry"
        );
    }
    key.save(&cli.key)?; // persist the proxy serial counter
    bundle.save(&cli.out)?;
    eprintln!(
        "proxy for {} written to {} (valid {}s)",
        bundle.proxy.subject,
        cli.out.display(),
        bundle.proxy.not_after - now
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::from(EXIT_OK as u8),
        Err(e) => {
            eprintln!("proxy-init: {e}");
            let code = match &e {
                ProxyToolError::Fetch(FetchError::Refused { .. })
                | ProxyToolError::Fetch(FetchError::InvalidChain(_))
                | ProxyToolError::Fetch(FetchError::VerificationFailed { .. })
                | ProxyToolError::Credential(_) => EXIT_DENIED,
                _ => EXIT_TRANSPORT,
            };
            ExitCode::from(code as u8)
        }
    }
}
