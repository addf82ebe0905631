//! The VO server: attribute issuance at `/attributes` plus the
//! administration, history, request, and compatibility surfaces, all backed
//! by one persistent registry store.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::{Arc, RwLock};

use anyhow::{anyhow, Context, Result};
use clap::Parser;
use vogrid_cli::now_or;
use vogrid_core::admin::{AdminService, VoServiceRouter};
use vogrid_core::authority::{
    AttributeAuthority, ServerPolicy, DEFAULT_CLOCK_SKEW_SECS, DEFAULT_MAX_ASSERTION_LIFETIME_SECS,
};
use vogrid_core::crypto::KeyPair;
use vogrid_core::store::{self, VoStore};
use vogrid_core::subject::SubjectName;
use vogrid_core::transport::{HttpRequest, HttpServer};

#[derive(Parser)]
#[command(name = "vo-server", about = "VO attribute and administration server")]
struct Cli {
    /// Server config document
    #[arg(long)]
    config: PathBuf,
    /// Fixed evaluation time (UNIX seconds) instead of the system clock
    #[arg(long)]
    now: Option<i64>,
}

fn resolve(base: &Path, p: &str) -> PathBuf {
    let p = Path::new(p);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn run(cli: &Cli) -> Result<()> {
    let doc = store::load_doc(&cli.config)?;
    if doc.get_str("format")? != "server-config" {
        return Err(anyhow!("expected a server-config document"));
    }
    let base = cli
        .config
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .to_path_buf();

    let vo = doc.get_str("vo")?.to_string();
    let owner =
        SubjectName::parse(doc.get_str("owner")?).map_err(|e| anyhow!("bad owner subject: {e}"))?;
    let data_dir = resolve(&base, doc.get_str("data_dir")?);
    let listen = doc.get_str("listen")?.to_string();

    let credential = store::load_identity(&resolve(&base, doc.get_str("credential")?))?;
    let key_path = resolve(&base, doc.get_str("key")?);
    let mut key = KeyPair::load(&key_path)?;
    // skip a block of serials so assertion serials stay monotone across
    // restarts without per-issuance key writes
    key.reserve_serials(1000);
    key.save(&key_path)?;

    let trust_anchors =
        store::load_trust_anchor_dir(&resolve(&base, doc.get_str("trust_anchor_dir")?))?;
    let mut revocation_lists = Vec::new();
    if let Some(files) = doc.get_opt("revocation_files") {
        for f in files.as_array()? {
            revocation_lists.push(store::load_revocation_list(&resolve(
                &base,
                f.str_value()?,
            ))?);
        }
    }

    let mut policy = ServerPolicy::new(vo.clone(), trust_anchors.clone());
    policy.revocation_lists = revocation_lists.clone();
    policy.max_assertion_lifetime = match doc.get_opt("max_assertion_lifetime") {
        Some(_) => doc.get_u64("max_assertion_lifetime")?,
        None => DEFAULT_MAX_ASSERTION_LIFETIME_SECS,
    };
    let clock_skew = match doc.get_opt("clock_skew") {
        Some(_) => doc.get_u64("clock_skew")?,
        None => DEFAULT_CLOCK_SKEW_SECS,
    };
    policy.clock_skew = clock_skew;

    let store = match VoStore::open(&data_dir, &vo) {
        Ok(store) => store,
        Err(_) => VoStore::create(&data_dir, &vo, owner.clone())
            .with_context(|| format!("creating VO store under {}", data_dir.display()))?,
    };
    let store = Arc::new(RwLock::new(store));

    let router = Arc::new(VoServiceRouter {
        authority: AttributeAuthority::new(credential, key, policy),
        admin: AdminService::new(
            Arc::clone(&store),
            trust_anchors,
            revocation_lists,
            clock_skew,
        ),
        store,
    });
    let fixed_now = cli.now;
    let server = HttpServer::spawn(
        &listen,
        Arc::new(move |req: &HttpRequest| router.handle(req, now_or(fixed_now))),
    )
    .with_context(|| format!("binding {listen}"))?;
    // the endpoint line doubles as the readiness signal for scripts
    println!("vo-server for {vo} listening on {}", server.endpoint());
    loop {
        std::thread::park();
    }
}

fn main() -> ExitCode {
    match run(&Cli::parse()) {
        Ok(()) => ExitCode::from(0),
        Err(e) => {
            eprintln!("vo-server: {e:#}");
            ExitCode::from(2)
        }
    }
}
