//! Credential bootstrap tool: create authorities, issue user credentials,
//! publish revocation lists, inspect credential files.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use vogrid_cli::{now_or, print_doc};
use vogrid_core::credential::{
    create_authority, issue_identity, Credential, CredentialChain, RevocationList,
};
use vogrid_core::crypto::KeyPair;
use vogrid_core::store;
use vogrid_core::subject::SubjectName;

#[derive(Parser)]
#[command(name = "vo-creds", about = "create and inspect credentials")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Fixed evaluation time (UNIX seconds) instead of the system clock
    #[arg(long, global = true)]
    now: Option<i64>,
}

#[derive(Subcommand)]
enum Command {
    /// Create a self-signed authority (a trust anchor)
    InitCa {
        #[arg(long)]
        subject: String,
        /// Validity in days
        #[arg(long, default_value_t = 3650)]
        days: u32,
        #[arg(long)]
        out_cred: PathBuf,
        #[arg(long)]
        out_key: PathBuf,
    },
    /// Issue an identity credential under an authority
    Issue {
        #[arg(long)]
        ca_cred: PathBuf,
        #[arg(long)]
        ca_key: PathBuf,
        #[arg(long)]
        subject: String,
        #[arg(long, default_value_t = 365)]
        days: u32,
        /// Mark the new credential as an authority
        #[arg(long)]
        authority: bool,
        #[arg(long)]
        out_cred: PathBuf,
        #[arg(long)]
        out_key: PathBuf,
        /// Also write a leaf-first chain file (credential + issuer)
        #[arg(long)]
        out_chain: Option<PathBuf>,
    },
    /// Publish a revocation list for the given serials
    Revoke {
        #[arg(long)]
        ca_cred: PathBuf,
        #[arg(long)]
        ca_key: PathBuf,
        #[arg(long, required = true)]
        serial: Vec<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print a credential or chain file
    Show {
        #[arg(long)]
        file: PathBuf,
    },
}

fn run(cli: Cli) -> Result<()> {
    let now = now_or(cli.now);
    match cli.command {
        Command::InitCa {
            subject,
            days,
            out_cred,
            out_key,
        } => {
            let subject = SubjectName::parse(&subject).context("bad --subject")?;
            let mut key = KeyPair::generate()?;
            let credential = create_authority(
                subject,
                &mut key,
                now - 3600,
                now + i64::from(days) * 86_400,
            )?;
            key.save(&out_key)?;
            store::save_doc(&out_cred, &credential.to_doc())?;
            eprintln!("authority {} written", credential.subject);
            Ok(())
        }
        Command::Issue {
            ca_cred,
            ca_key,
            subject,
            days,
            authority,
            out_cred,
            out_key,
            out_chain,
        } => {
            let issuer = store::load_identity(&ca_cred)?;
            let mut issuer_key = KeyPair::load(&ca_key)?;
            let subject = SubjectName::parse(&subject).context("bad --subject")?;
            let key = KeyPair::generate()?;
            let credential = issue_identity(
                &issuer,
                &mut issuer_key,
                subject,
                key.public().clone(),
                now - 3600,
                now + i64::from(days) * 86_400,
                authority,
            )?;
            issuer_key.save(&ca_key)?; // persist the serial counter
            key.save(&out_key)?;
            store::save_doc(&out_cred, &credential.to_doc())?;
            if let Some(path) = out_chain {
                let chain = CredentialChain::new(vec![
                    Credential::Identity(credential.clone()),
                    Credential::Identity(issuer),
                ]);
                store::save_chain(&path, &chain)?;
            }
            eprintln!(
                "issued {} (serial {})",
                credential.subject, credential.serial
            );
            Ok(())
        }
        Command::Revoke {
            ca_cred,
            ca_key,
            serial,
            out,
        } => {
            let issuer = store::load_identity(&ca_cred)?;
            let key = KeyPair::load(&ca_key)?;
            let list = RevocationList::build(&issuer, &key, serial, now);
            store::save_doc(&out, &list.to_doc())?;
            eprintln!(
                "revocation list with {} serial(s) written",
                list.revoked_serials.len()
            );
            Ok(())
        }
        Command::Show { file } => {
            print_doc(&store::load_doc(&file)?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::from(0),
        Err(e) => {
            eprintln!("vo-creds: {e:#}");
            ExitCode::from(2)
        }
    }
}
