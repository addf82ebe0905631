//! Inspect a proxy bundle: subject, lifetime, embedded attributes.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use vogrid_cli::{now_or, EXIT_OK, EXIT_TRANSPORT};
use vogrid_core::proxy::{proxy_info, ProxyBundle, ProxyToolError};
use vogrid_core::store;

#[derive(Parser)]
#[command(name = "proxy-info", about = "inspect a proxy bundle")]
struct Cli {
    /// The proxy bundle file
    #[arg(long)]
    file: PathBuf,
    /// Registered attribute-server keys; enables signature checking
    #[arg(long = "trusted-servers")]
    trusted_servers: Option<PathBuf>,
    /// Fixed evaluation time (UNIX seconds) instead of the system clock
    #[arg(long)]
    now: Option<i64>,
}

fn run(cli: &Cli) -> Result<(), ProxyToolError> {
    let now = now_or(cli.now);
    let bundle = ProxyBundle::load(&cli.file)?;
    let trusted = match &cli.trusted_servers {
        Some(path) => Some(
            store::load_trusted_servers(path)
                .map_err(|e| ProxyToolError::ParseError(e.to_string()))?,
        ),
        None => None,
    };
    let report = proxy_info(&bundle, trusted.as_ref(), now)?;
    print!("{}", report.render_text());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::from(EXIT_OK as u8),
        Err(e) => {
            eprintln!("proxy-info: {e}");
            ExitCode::from(EXIT_TRANSPORT as u8)
        }
    }
}
