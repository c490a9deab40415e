//! Command-line client. The vault file holds GAs; `<vault>.profile.json`
//! holds the user's attributes, key and current session id.

use std::fs;
use std::io::Write;
use std::os::unix::fs::OpenOptionsExt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mfaz::server::SID_LEN;
use mfaz::wire::WireClient;
use mfaz::{AuthKey, ClientAgent, Error, GaVault, Operation, Resource, ResourceClass, Sid, UserAttr};
use serde::{Deserialize, Serialize};

#[derive(Parser)]
#[command(name = "mfaz-client", about = "Multi-factor authorization client")]
struct Args {
    #[arg(long, env = "MFAZ_SERVER", default_value = "127.0.0.1:7878", global = true)]
    server: String,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a key, enroll, and store the bootstrap GAs.
    Enroll {
        #[arg(long)]
        vault: PathBuf,
        #[arg(long)]
        user: String,
        #[arg(long)]
        role: Option<String>,
    },
    /// Log in with the stored key and remember the session id.
    Session {
        #[arg(long)]
        vault: PathBuf,
    },
    /// Request access with q GAs from the vault.
    Request {
        #[arg(long)]
        vault: PathBuf,
        #[arg(long)]
        op: Operation,
        #[arg(long)]
        resource: String,
        #[arg(long, default_value = "public")]
        class: ResourceClass,
        #[arg(long, default_value_t = 1)]
        q: usize,
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Serialize, Deserialize)]
struct Profile {
    user_id: String,
    key_id: String,
    key_hex: String,
    role: Option<String>,
    sid: Option<String>,
}

impl Profile {
    fn path(vault: &Path) -> PathBuf {
        let mut p = vault.as_os_str().to_owned();
        p.push(".profile.json");
        PathBuf::from(p)
    }

    fn load(vault: &Path) -> mfaz::Result<Self> {
        let path = Self::path(vault);
        let text = fs::read_to_string(&path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    fn save(&self, vault: &Path) -> mfaz::Result<()> {
        let path = Self::path(vault);
        let tmp = path.with_extension("json.tmp");
        let mut f = fs::OpenOptions::new()
            .write(true)
            .create(true)
            .truncate(true)
            .mode(0o600)
            .open(&tmp)?;
        f.write_all(serde_json::to_string_pretty(self).expect("profile serializes").as_bytes())?;
        f.sync_all()?;
        fs::rename(&tmp, &path)?;
        Ok(())
    }

    fn key(&self) -> mfaz::Result<AuthKey> {
        let bytes = hex::decode(&self.key_hex)
            .map_err(|_| Error::Config("profile key is not hex".into()))?;
        AuthKey::from_slice(self.key_id.clone(), &bytes)
    }

    fn user(&self) -> mfaz::Result<UserAttr> {
        UserAttr::new(self.user_id.clone(), self.key_id.clone(), self.role.clone())
    }

    fn sid(&self) -> mfaz::Result<Sid> {
        let raw = self
            .sid
            .as_deref()
            .ok_or_else(|| Error::Config("no session; run `mfaz-client session` first".into()))?;
        let bytes: [u8; SID_LEN] = hex::decode(raw)
            .ok()
            .and_then(|b| b.try_into().ok())
            .ok_or_else(|| Error::Config("profile sid is malformed".into()))?;
        Ok(Sid(bytes))
    }
}

fn run(args: Args) -> mfaz::Result<bool> {
    let client = WireClient::connect(&args.server)?;
    match args.cmd {
        Cmd::Enroll { vault, user, role } => {
            if Profile::path(&vault).exists() {
                return Err(Error::AlreadyEnrolled(user));
            }
            let key = AuthKey::generate(format!("{user}-key"))?;
            let attr = UserAttr::new(user.clone(), key.key_id.clone(), role.clone())?;
            let gas = client.enroll(&attr, &key)?;
            let profile = Profile {
                user_id: user,
                key_id: key.key_id.clone(),
                key_hex: hex::encode(key.key_bytes),
                role,
                sid: None,
            };
            profile.save(&vault)?;
            let mut v = GaVault::open(&vault, &profile.user_id)?;
            v.store(gas)?;
            println!("enrolled {} with {} GAs", profile.user_id, v.len());
        }
        Cmd::Session { vault } => {
            let mut profile = Profile::load(&vault)?;
            let session = client.open_session(&profile.user_id, &profile.key()?)?;
            profile.sid = Some(session.sid.to_string());
            profile.save(&vault)?;
            println!("session {} expires at {}", session.sid, session.expires_at.0);
        }
        Cmd::Request {
            vault,
            op,
            resource,
            class,
            q,
            seed,
        } => {
            let profile = Profile::load(&vault)?;
            let v = GaVault::open(&vault, &profile.user_id)?;
            let mut agent = ClientAgent::new(profile.user()?, v, profile.sid()?, seed);
            let d = agent.request_access(&client, op, &Resource::new(resource, class)?, q)?;
            println!(
                "{} {} vault={}",
                d.verdict.as_str(),
                d.reason.as_str(),
                agent.vault.len()
            );
            return Ok(d.is_granted());
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::init();
    match run(Args::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("mfaz-client: {e}");
            ExitCode::from(2)
        }
    }
}
