//! Evaluate the site authorization chain against a proxy and a job
//! description, printing the decision document.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::Parser;
use vogrid_cli::{now_or, print_doc, EXIT_DENIED, EXIT_OK, EXIT_TRANSPORT};
use vogrid_core::enforcement::{lcas_evaluate, JobSpec, PluginInput, PluginRegistry, SitePolicy};
use vogrid_core::proxy::{extract_assertions, ProxyBundle};
use vogrid_core::store;

#[derive(Parser)]
#[command(name = "lcas-eval", about = "run the site authorization plugin chain")]
struct Cli {
    /// Site policy document (plugin chain + trusted server keys)
    #[arg(long)]
    policy: PathBuf,
    /// Proxy bundle presented by the user
    #[arg(long)]
    proxy: PathBuf,
    /// Job description document
    #[arg(long)]
    job: PathBuf,
    /// Fixed evaluation time (UNIX seconds) instead of the system clock
    #[arg(long)]
    now: Option<i64>,
}

fn run(cli: &Cli) -> Result<bool> {
    let now = now_or(cli.now);
    let registry = PluginRegistry::standard();
    let policy = SitePolicy::from_doc(
        &store::load_doc(&cli.policy).context("loading site policy")?,
        &registry,
    )?;
    let bundle = ProxyBundle::load(&cli.proxy).context("loading proxy bundle")?;
    let job = JobSpec::from_doc(&store::load_doc(&cli.job).context("loading job")?)?;

    let chain = bundle.full_chain();
    let subject = chain
        .end_entity()
        .context("proxy bundle has no end-entity credential")?
        .subject
        .clone();
    let assertions = extract_assertions(&bundle.proxy)?;
    let decision = lcas_evaluate(
        &policy,
        &registry,
        &PluginInput {
            chain: &chain,
            subject: &subject,
            assertions: &assertions,
            job: &job,
            trusted_servers: &policy.trusted_servers,
            now,
        },
    );
    print_doc(&decision.to_doc());
    Ok(decision.allowed)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::from(EXIT_OK as u8),
        Ok(false) => ExitCode::from(EXIT_DENIED as u8),
        Err(e) => {
            eprintln!("lcas-eval: {e:#}");
            ExitCode::from(EXIT_TRANSPORT as u8)
        }
    }
}
