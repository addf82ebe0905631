//! The gatekeeper: validate, authorize, and map a job submission. Runs as a
//! one-shot CLI or as a `/submit` service.

use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{Context, Result};
use clap::Parser;
use vogrid_cli::{now_or, print_doc, EXIT_DENIED, EXIT_OK, EXIT_TRANSPORT};
use vogrid_core::enforcement::{JobSpec, PluginRegistry};
use vogrid_core::gate::{gate_handle, GateConfig, GateRequest};
use vogrid_core::store;
use vogrid_core::transport::{HttpRequest, HttpResponse, HttpServer};
use vogrid_core::Value;

#[derive(Parser)]
#[command(name = "gate", about = "the gatekeeper authorization pipeline")]
struct Cli {
    /// Gate config document naming all sub-policy files
    #[arg(long)]
    config: PathBuf,
    /// Proxy bundle (one-shot mode)
    #[arg(long, required_unless_present = "serve")]
    proxy: Option<PathBuf>,
    /// Job description document (one-shot mode)
    #[arg(long, required_unless_present = "serve")]
    job: Option<PathBuf>,
    /// Serve `/submit` on this address instead of running one-shot
    #[arg(long)]
    serve: Option<String>,
    /// Fixed evaluation time (UNIX seconds) instead of the system clock
    #[arg(long)]
    now: Option<i64>,
}

fn run_once(cli: &Cli, cfg: &GateConfig, plugins: &PluginRegistry) -> Result<bool> {
    let now = now_or(cli.now);
    let proxy_bundle = std::fs::read(cli.proxy.as_ref().expect("clap enforces --proxy"))
        .context("reading proxy bundle")?;
    let job = JobSpec::from_doc(
        &store::load_doc(cli.job.as_ref().expect("clap enforces --job")).context("loading job")?,
    )?;
    let response = gate_handle(cfg, plugins, &GateRequest { proxy_bundle, job }, now)?;
    print_doc(&response.to_doc());
    Ok(response.allowed)
}

fn serve(
    addr: &str,
    cfg: GateConfig,
    plugins: PluginRegistry,
    fixed_now: Option<i64>,
) -> Result<()> {
    let cfg = Arc::new(cfg);
    let plugins = Arc::new(plugins);
    let handler = Arc::new(move |req: &HttpRequest| -> HttpResponse {
        if req.method != "POST" || req.path != "/submit" {
            return HttpResponse::not_found();
        }
        let now = now_or(fixed_now);
        let doc = match Value::parse(&req.body) {
            Ok(doc) => doc,
            Err(e) => return HttpResponse::error(400, "bad_request", e.to_string()),
        };
        let request = match GateRequest::from_doc(&doc) {
            Ok(r) => r,
            Err(e) => return HttpResponse::error(400, "bad_request", e.to_string()),
        };
        match gate_handle(&cfg, &plugins, &request, now) {
            Ok(response) => HttpResponse::ok_doc(&response.to_doc()),
            Err(e) => HttpResponse::error(400, "malformed_request", e.to_string()),
        }
    });
    let server = HttpServer::spawn(addr, handler).context("binding gate service")?;
    // the endpoint line doubles as the readiness signal for scripts
    println!("gate service listening on {}", server.endpoint());
    loop {
        std::thread::park();
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let plugins = PluginRegistry::standard();
    let cfg = match GateConfig::load(&cli.config, &plugins) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("gate: {e}");
            return ExitCode::from(EXIT_TRANSPORT as u8);
        }
    };
    if let Some(addr) = cli.serve.clone() {
        return match serve(&addr, cfg, plugins, cli.now) {
            Ok(()) => ExitCode::from(EXIT_OK as u8),
            Err(e) => {
                eprintln!("gate: {e:#}");
                ExitCode::from(EXIT_TRANSPORT as u8)
            }
        };
    }
    match run_once(&cli, &cfg, &plugins) {
        Ok(true) => ExitCode::from(EXIT_OK as u8),
        Ok(false) => ExitCode::from(EXIT_DENIED as u8),
        Err(e) => {
            eprintln!("gate: {e:#}");
            ExitCode::from(EXIT_TRANSPORT as u8)
        }
    }
}
