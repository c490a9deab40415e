//! Protocol values and the two digest derivations.
//!
//! A granted access (GA) binds who did what to which resource and when. A
//! verification point (VP) binds a GA to the user's long-term key, so only the
//! key holder's server can recompute it from a presented GA.

use std::fmt;
use std::str::FromStr;

use sha2::{Digest as _, Sha256};

use crate::encoding::Encoder;
use crate::error::{Error, Result};

pub const DIGEST_LEN: usize = 32;
pub const KEY_LEN: usize = 32;
pub const MAX_ATTR_LEN: usize = 256;

pub type Digest = [u8; DIGEST_LEN];

pub fn sha256(data: &[u8]) -> Digest {
    Sha256::digest(data).into()
}

/// A user's long-term authentication key.
#[derive(Clone, PartialEq, Eq)]
pub struct AuthKey {
    pub key_id: String,
    pub key_bytes: [u8; KEY_LEN],
}

impl AuthKey {
    pub fn new(key_id: impl Into<String>, key_bytes: [u8; KEY_LEN]) -> Result<Self> {
        let key_id = key_id.into();
        check_attr("key_id", &key_id)?;
        Ok(Self { key_id, key_bytes })
    }

    pub fn from_slice(key_id: impl Into<String>, key_bytes: &[u8]) -> Result<Self> {
        let bytes: [u8; KEY_LEN] = key_bytes.try_into().map_err(|_| {
            Error::InvalidInput(format!("key must be {KEY_LEN} bytes, got {}", key_bytes.len()))
        })?;
        Self::new(key_id, bytes)
    }

    pub fn generate(key_id: impl Into<String>) -> Result<Self> {
        Self::new(key_id, rand::random())
    }
}

impl fmt::Debug for AuthKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AuthKey")
            .field("key_id", &self.key_id)
            .field("key_bytes", &"<redacted>")
            .finish()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Operation {
    Read,
    Write,
    Execute,
}

impl Operation {
    pub const ALL: [Operation; 3] = [Operation::Read, Operation::Write, Operation::Execute];

    pub fn to_byte(self) -> u8 {
        match self {
            Operation::Read => 0x01,
            Operation::Write => 0x02,
            Operation::Execute => 0x03,
        }
    }

    pub fn from_byte(b: u8) -> Result<Self> {
        match b {
            0x01 => Ok(Operation::Read),
            0x02 => Ok(Operation::Write),
            0x03 => Ok(Operation::Execute),
            _ => Err(Error::InvalidInput(format!("unknown operation byte {b:#04x}"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Operation::Read => "read",
            Operation::Write => "write",
            Operation::Execute => "execute",
        }
    }
}

impl FromStr for Operation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "read" => Ok(Operation::Read),
            "write" => Ok(Operation::Write),
            "execute" => Ok(Operation::Execute),
            other => Err(Error::InvalidInput(format!("unknown operation {other:?}"))),
        }
    }
}

impl fmt::Display for Operation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ResourceClass {
    Private,
    Public,
}

impl ResourceClass {
    pub fn to_byte(self) -> u8 {
        match self {
            ResourceClass::Private => 0x01,
            ResourceClass::Public => 0x02,
        }
    }

    pub fn from_byte(b: u8) -> Result<Self> {
        match b {
            0x01 => Ok(ResourceClass::Private),
            0x02 => Ok(ResourceClass::Public),
            _ => Err(Error::InvalidInput(format!("unknown resource class byte {b:#04x}"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ResourceClass::Private => "private",
            ResourceClass::Public => "public",
        }
    }
}

impl FromStr for ResourceClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "private" => Ok(ResourceClass::Private),
            "public" => Ok(ResourceClass::Public),
            other => Err(Error::InvalidInput(format!("unknown resource class {other:?}"))),
        }
    }
}

impl fmt::Display for ResourceClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Resource {
    pub resource_id: String,
    pub class: ResourceClass,
}

impl Resource {
    pub fn new(resource_id: impl Into<String>, class: ResourceClass) -> Result<Self> {
        let resource_id = resource_id.into();
        check_attr("resource_id", &resource_id)?;
        Ok(Self { resource_id, class })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct UserAttr {
    pub user_id: String,
    pub key_id: String,
    pub role: Option<String>,
}

impl UserAttr {
    pub fn new(
        user_id: impl Into<String>,
        key_id: impl Into<String>,
        role: Option<String>,
    ) -> Result<Self> {
        let user_id = user_id.into();
        let key_id = key_id.into();
        check_attr("user_id", &user_id)?;
        check_attr("key_id", &key_id)?;
        if let Some(r) = &role {
            check_attr("role", r)?;
        }
        Ok(Self {
            user_id,
            key_id,
            role,
        })
    }
}

fn check_attr(name: &str, value: &str) -> Result<()> {
    if value.is_empty() {
        return Err(Error::InvalidInput(format!("{name} must not be empty")));
    }
    if value.len() > MAX_ATTR_LEN {
        return Err(Error::InvalidInput(format!(
            "{name} exceeds {MAX_ATTR_LEN} bytes"
        )));
    }
    Ok(())
}

/// Milliseconds since the Unix epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Timestamp(pub u64);

impl Timestamp {
    pub fn now() -> Self {
        let d = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .unwrap_or_default();
        Timestamp(d.as_millis() as u64)
    }

    pub fn millis(self) -> u64 {
        self.0
    }

    pub fn to_be_bytes(self) -> [u8; 8] {
        self.0.to_be_bytes()
    }
}

/// Client-held second-factor token.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct GrantedAccess {
    pub digest: Digest,
    pub issued_at: Timestamp,
}

impl fmt::Debug for GrantedAccess {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "GA({}@{})", &hex::encode(self.digest)[..12], self.issued_at.0)
    }
}

/// Server-side verifiable form of a granted access.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct VerificationPoint {
    pub digest: Digest,
}

impl fmt::Debug for VerificationPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "VP({})", &hex::encode(self.digest)[..12])
    }
}

/// Derives the granted access for one (user, operation, resource, time).
///
/// The key bytes never enter here; only `key_id` does.
pub fn gen_ga(u: &UserAttr, op: Operation, r: &Resource, ts: Timestamp) -> GrantedAccess {
    let encoded = Encoder::new()
        .field(0x01, u.user_id.as_bytes())
        .field(0x02, u.key_id.as_bytes())
        .field(0x03, &[op.to_byte()])
        .field(0x04, r.resource_id.as_bytes())
        .field(0x05, &[r.class.to_byte()])
        .field(0x06, &ts.to_be_bytes())
        .finish();
    GrantedAccess {
        digest: sha256(&encoded),
        issued_at: ts,
    }
}

/// Binds a GA digest to the user's key: `SHA-256(enc[(1, ga), (2, key)])`.
pub fn gen_vp(ga: &Digest, key: &AuthKey) -> VerificationPoint {
    let encoded = Encoder::new()
        .field(0x01, ga)
        .field(0x02, &key.key_bytes)
        .finish();
    VerificationPoint {
        digest: sha256(&encoded),
    }
}
