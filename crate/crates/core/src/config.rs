//! Server configuration file (TOML).
//!
//! ```toml
//! [server]
//! listen = "127.0.0.1"
//! port = 7878
//! rules = "rules.txt"
//!
//! [bf]
//! capacity = 1000
//! fpr = 0.01
//!
//! [session]
//! ttl_secs = 900
//!
//! [enroll]
//! bootstrap_count = 3
//!
//! [sga]
//! max = 3
//!
//! [ledger]
//! backend = "file"        # or "memory"
//! path = "mfaz-ledger.bin"
//! visibility_delay_ms = 0
//! ```
//!
//! `MFAZ_PORT` in the environment overrides `server.port`.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::ledger::Ledger;
use crate::server::ServerConfig;

pub const PORT_ENV: &str = "MFAZ_PORT";

#[derive(Debug, Clone, Default, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub server: ServerSection,
    pub bf: BfSection,
    pub session: SessionSection,
    pub enroll: EnrollSection,
    pub sga: SgaSection,
    pub ledger: LedgerSection,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ServerSection {
    pub listen: String,
    pub port: u16,
    pub rules: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct BfSection {
    pub capacity: u64,
    pub fpr: f64,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct SessionSection {
    pub ttl_secs: u64,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct EnrollSection {
    pub bootstrap_count: u32,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct SgaSection {
    pub max: usize,
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum LedgerBackend {
    Memory,
    File,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct LedgerSection {
    pub backend: LedgerBackend,
    pub path: Option<PathBuf>,
    pub visibility_delay_ms: u64,
}

impl Default for ServerSection {
    fn default() -> Self {
        Self {
            listen: "127.0.0.1".into(),
            port: 7878,
            rules: None,
        }
    }
}

impl Default for BfSection {
    fn default() -> Self {
        Self {
            capacity: crate::bloom::DEFAULT_CAPACITY,
            fpr: crate::bloom::DEFAULT_FPR,
        }
    }
}

impl Default for SessionSection {
    fn default() -> Self {
        Self { ttl_secs: 900 }
    }
}

impl Default for EnrollSection {
    fn default() -> Self {
        Self { bootstrap_count: 3 }
    }
}

impl Default for SgaSection {
    fn default() -> Self {
        Self { max: 3 }
    }
}

impl Default for LedgerSection {
    fn default() -> Self {
        Self {
            backend: LedgerBackend::Memory,
            path: None,
            visibility_delay_ms: 0,
        }
    }
}

impl Config {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads the file; relative `rules` and `ledger.path` resolve against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(p) = cfg.server.rules.as_mut() {
            resolve(p);
        }
        if let Some(p) = cfg.ledger.path.as_mut() {
            resolve(p);
        }
        Ok(cfg)
    }

    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(port) = std::env::var(PORT_ENV) {
            self.server.port = port
                .parse()
                .map_err(|_| Error::Config(format!("{PORT_ENV}={port:?} is not a port")))?;
        }
        Ok(())
    }

    pub fn server_config(&self) -> ServerConfig {
        ServerConfig {
            bf_capacity: self.bf.capacity,
            bf_fpr: self.bf.fpr,
            session_ttl: Duration::from_secs(self.session.ttl_secs),
            bootstrap_count: self.enroll.bootstrap_count,
            sga_max: self.sga.max,
            ..ServerConfig::default()
        }
    }

    pub fn open_ledger(&self) -> Result<Arc<Ledger>> {
        let ledger = match self.ledger.backend {
            LedgerBackend::Memory => Ledger::in_memory(),
            LedgerBackend::File => {
                let path = self.ledger.path.as_ref().ok_or_else(|| {
                    Error::Config("ledger.backend = \"file\" requires ledger.path".into())
                })?;
                Ledger::open(path)?
            }
        };
        Ok(Arc::new(ledger.with_visibility_delay(Duration::from_millis(
            self.ledger.visibility_delay_ms,
        ))))
    }
}
