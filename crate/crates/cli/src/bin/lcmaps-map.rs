//! Map a proxy's identity and presented attributes to a local uid/gid,
//! printing the local credential document.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::Parser;
use vogrid_cli::{now_or, print_doc, EXIT_DENIED, EXIT_OK, EXIT_TRANSPORT};
use vogrid_core::mapping::{lcmaps_map, LeaseLedger, MappingError, MappingPolicy};
use vogrid_core::proxy::{extract_assertions, ProxyBundle};
use vogrid_core::store;

#[derive(Parser)]
#[command(
    name = "lcmaps-map",
    about = "map a grid identity to local credentials"
)]
struct Cli {
    /// Mapping policy document
    #[arg(long)]
    policy: PathBuf,
    /// Lease directory for pool accounts
    #[arg(long)]
    leasedir: PathBuf,
    /// Proxy bundle presented by the user
    #[arg(long)]
    proxy: PathBuf,
    /// Fixed evaluation time (UNIX seconds) instead of the system clock
    #[arg(long)]
    now: Option<i64>,
}

fn run(cli: &Cli) -> Result<Result<(), MappingError>> {
    let now = now_or(cli.now);
    let policy = MappingPolicy::from_doc(&store::load_doc(&cli.policy).context("loading policy")?)?;
    let ledger = LeaseLedger::open(&cli.leasedir)?;
    let bundle = ProxyBundle::load(&cli.proxy).context("loading proxy bundle")?;
    let chain = bundle.full_chain();
    let subject = chain
        .end_entity()
        .context("proxy bundle has no end-entity credential")?
        .subject
        .clone();
    let fqans: Vec<_> = extract_assertions(&bundle.proxy)?
        .iter()
        .flat_map(|a| a.fqans.clone())
        .collect();
    match lcmaps_map(&policy, &ledger, &subject, &fqans, now) {
        Ok(local) => {
            print_doc(&local.to_doc());
            Ok(Ok(()))
        }
        Err(e @ (MappingError::NoMappingRule | MappingError::PoolExhausted(_))) => Ok(Err(e)),
        Err(e) => Err(e.into()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(Ok(())) => ExitCode::from(EXIT_OK as u8),
        Ok(Err(denied)) => {
            eprintln!("lcmaps-map: {denied}");
            ExitCode::from(EXIT_DENIED as u8)
        }
        Err(e) => {
            eprintln!("lcmaps-map: {e:#}");
            ExitCode::from(EXIT_TRANSPORT as u8)
        }
    }
}
