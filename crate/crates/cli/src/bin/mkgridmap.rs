//! Generate a grid-mapfile by querying VO servers' compatibility endpoints.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::Parser;
use vogrid_cli::{now_or, EXIT_OK, EXIT_TRANSPORT};
use vogrid_core::admin::admin_call;
use vogrid_core::crypto::KeyPair;
use vogrid_core::gridmap::{mkgridmap_generate, MkgridmapConfig};
use vogrid_core::store;
use vogrid_core::subject::SubjectName;
use vogrid_core::transport::{encode_query_component, TcpTransport};

#[derive(Parser)]
#[command(name = "mkgridmap", about = "generate a grid-mapfile from VO servers")]
struct Cli {
    /// Generator config: `group`, `auth`, and `deny` directives
    #[arg(long)]
    config: PathBuf,
    /// Output grid-mapfile (written atomically)
    #[arg(long)]
    out: PathBuf,
    /// Chain file authenticating this site to the VO servers
    #[arg(long)]
    chain: PathBuf,
    /// Private key of the chain leaf
    #[arg(long)]
    key: PathBuf,
    /// Fixed evaluation time (UNIX seconds) instead of the system clock
    #[arg(long)]
    now: Option<i64>,
}

fn run(cli: &Cli) -> Result<()> {
    let now = now_or(cli.now);
    let text = std::fs::read_to_string(&cli.config)
        .with_context(|| format!("reading {}", cli.config.display()))?;
    let config = MkgridmapConfig::parse(&text)?;
    let chain = store::load_chain(&cli.chain)?;
    let key = KeyPair::load(&cli.key)?;

    let fetcher = |endpoint: &str, fqan: &vogrid_core::Fqan| {
        let doc = admin_call(
            &TcpTransport,
            endpoint,
            "GET",
            "/compat/userlist",
            &format!("fqan={}", encode_query_component(&fqan.render())),
            None,
            &chain,
            &key,
            now,
        )
        .map_err(|e| e.to_string())?;
        let mut subjects = Vec::new();
        for s in doc.get_array("subjects").map_err(|e| e.to_string())? {
            subjects.push(
                SubjectName::parse(s.str_value().map_err(|e| e.to_string())?)
                    .map_err(|e| e.to_string())?,
            );
        }
        Ok(subjects)
    };

    let bytes = mkgridmap_generate(&config, &fetcher)?;
    store::write_atomic(&cli.out, &bytes)?;
    eprintln!(
        "grid-mapfile with {} line(s) written to {}",
        bytes.iter().filter(|b| **b == b'\n').count(),
        cli.out.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    match run(&Cli::parse()) {
        Ok(()) => ExitCode::from(EXIT_OK as u8),
        Err(e) => {
            eprintln!("mkgridmap: {e:#}");
            ExitCode::from(EXIT_TRANSPORT as u8)
        }
    }
}
