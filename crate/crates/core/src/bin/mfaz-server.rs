//! Authorization server over the framed TCP protocol.

use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::Parser;
use mfaz::config::Config;
use mfaz::policy::RuleSet;
use mfaz::wire::WireServer;
use mfaz::AuthzServer;

#[derive(Parser)]
#[command(name = "mfaz-server", about = "Multi-factor authorization server")]
struct Args {
    /// TOML configuration file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Rule file (one `subject;ops;resource` per line), overrides server.rules.
    #[arg(long)]
    rules: Option<PathBuf>,
}

fn run(args: Args) -> mfaz::Result<()> {
    let mut cfg = match &args.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    cfg.apply_env()?;
    if args.rules.is_some() {
        cfg.server.rules = args.rules;
    }
    let server = Arc::new(AuthzServer::new(cfg.server_config(), cfg.open_ledger()?)?);
    if let Some(path) = &cfg.server.rules {
        let text = std::fs::read_to_string(path)?;
        let stored = server.install_rules(&RuleSet::parse_text(&text)?)?;
        log::info!("installed {} rules (version {})", stored.rules.len(), stored.version);
    }
    let listener = WireServer::bind((cfg.server.listen.as_str(), cfg.server.port), server)?;
    log::info!("listening on {}", listener.local_addr()?);
    listener.run()
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Args::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("mfaz-server: {e}");
            ExitCode::FAILURE
        }
    }
}
