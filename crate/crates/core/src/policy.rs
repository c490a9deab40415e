//! First authorization factor: attribute-based allow rules with default deny.
//!
//! Text form, one rule per line, `#` starts a comment:
//!
//! ```text
//! # subject ; operations ; resource
//! *;read;public
//! alice;read,write;door-7
//! admin;read,write,execute;*
//! ```
//!
//! A subject matches a user id or role, a resource matches a resource id or
//! class name (`public`/`private`), and `*` matches anything.

use std::collections::BTreeSet;
use std::fmt;

use crate::crypto::{Operation, Resource, UserAttr};
use crate::encoding::{Encoder, Fields};
use crate::error::{Error, Result};
use crate::ledger::{EventLedger, LedgerEvent, AR_TOPIC};

pub const WILDCARD: &str = "*";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AccessRule {
    pub subject: String,
    pub operations: BTreeSet<Operation>,
    pub resource: String,
}

impl AccessRule {
    pub fn new(
        subject: impl Into<String>,
        operations: impl IntoIterator<Item = Operation>,
        resource: impl Into<String>,
    ) -> Result<Self> {
        let rule = Self {
            subject: subject.into(),
            operations: operations.into_iter().collect(),
            resource: resource.into(),
        };
        rule.validate()?;
        Ok(rule)
    }

    fn validate(&self) -> Result<()> {
        if self.subject.is_empty() || self.resource.is_empty() {
            return Err(Error::InvalidInput("rule patterns must not be empty".into()));
        }
        if self.subject.contains([';', '\n']) || self.resource.contains([';', '\n']) {
            return Err(Error::InvalidInput("rule patterns must not contain ';'".into()));
        }
        if self.operations.is_empty() {
            return Err(Error::InvalidInput("rule needs at least one operation".into()));
        }
        Ok(())
    }

    pub fn parse_line(line: &str) -> Result<Self> {
        let parts: Vec<&str> = line.split(';').map(str::trim).collect();
        let [subject, ops, resource] = parts[..] else {
            return Err(Error::InvalidInput(format!(
                "rule {line:?} must have the form subject;ops;resource"
            )));
        };
        let operations = ops
            .split(',')
            .map(str::parse::<Operation>)
            .collect::<Result<BTreeSet<_>>>()?;
        Self::new(subject, operations, resource)
    }

    fn subject_matches(&self, u: &UserAttr) -> bool {
        self.subject == WILDCARD
            || self.subject == u.user_id
            || u.role.as_deref() == Some(self.subject.as_str())
    }

    fn resource_matches(&self, r: &Resource) -> bool {
        self.resource == WILDCARD
            || self.resource == r.resource_id
            || self.resource.eq_ignore_ascii_case(r.class.as_str())
    }

    pub fn matches(&self, u: &UserAttr, op: Operation, r: &Resource) -> bool {
        self.operations.contains(&op) && self.subject_matches(u) && self.resource_matches(r)
    }

    fn encode(&self) -> Vec<u8> {
        let ops: Vec<u8> = self.operations.iter().map(|o| o.to_byte()).collect();
        Encoder::new()
            .field(0x01, self.subject.as_bytes())
            .field(0x02, &ops)
            .field(0x03, self.resource.as_bytes())
            .finish()
    }

    fn decode(data: &[u8]) -> Result<Self> {
        let f = Fields::parse(data)?;
        let operations = f
            .bytes(0x02)?
            .iter()
            .map(|&b| Operation::from_byte(b))
            .collect::<Result<BTreeSet<_>>>()?;
        let rule = Self {
            subject: f.string(0x01)?,
            operations,
            resource: f.string(0x03)?,
        };
        rule.validate()
            .map_err(|e| Error::RejectFormat(format!("stored rule invalid: {e}")))?;
        Ok(rule)
    }
}

impl fmt::Display for AccessRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let ops: Vec<&str> = self.operations.iter().map(|o| o.as_str()).collect();
        write!(f, "{};{};{}", self.subject, ops.join(","), self.resource)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RuleDecision {
    Satisfied,
    NotSatisfied,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RuleSet {
    pub rules: Vec<AccessRule>,
    pub version: u64,
}

impl RuleSet {
    pub fn new(rules: Vec<AccessRule>) -> Self {
        Self { rules, version: 0 }
    }

    pub fn parse_text(text: &str) -> Result<Self> {
        let rules = text
            .lines()
            .enumerate()
            .filter_map(|(n, line)| {
                let line = line.split('#').next().unwrap_or("").trim();
                (!line.is_empty()).then(|| {
                    AccessRule::parse_line(line).map_err(|e| match e {
                        Error::InvalidInput(msg) => {
                            Error::InvalidInput(format!("line {}: {msg}", n + 1))
                        }
                        other => other,
                    })
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::new(rules))
    }

    pub fn to_text(&self) -> String {
        self.rules.iter().map(|r| format!("{r}\n")).collect()
    }

    /// SatAR: satisfied iff at least one allow rule matches.
    pub fn sat_ar(&self, u: &UserAttr, op: Operation, r: &Resource) -> RuleDecision {
        if self.rules.iter().any(|rule| rule.matches(u, op, r)) {
            RuleDecision::Satisfied
        } else {
            RuleDecision::NotSatisfied
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut blob = Vec::new();
        for rule in &self.rules {
            let enc = rule.encode();
            blob.extend_from_slice(&(enc.len() as u32).to_be_bytes());
            blob.extend_from_slice(&enc);
        }
        Encoder::new()
            .field(0x01, &self.version.to_be_bytes())
            .field(0x02, &blob)
            .finish()
    }

    pub fn decode(data: &[u8]) -> Result<Self> {
        let f = Fields::parse(data)?;
        let version = f.u64(0x01)?;
        let mut blob = f.bytes(0x02)?;
        let mut rules = Vec::new();
        while !blob.is_empty() {
            if blob.len() < 4 {
                return Err(Error::RejectFormat("truncated rule length".into()));
            }
            let len = u32::from_be_bytes(blob[..4].try_into().unwrap()) as usize;
            let body = blob
                .get(4..4 + len)
                .ok_or_else(|| Error::RejectFormat("truncated rule".into()))?;
            rules.push(AccessRule::decode(body)?);
            blob = &blob[4 + len..];
        }
        Ok(Self { rules, version })
    }
}

/// Stores `ruleset` under `AR_UPDATE` with a version one above both its own
/// and the latest stored version. Returns the event and the stored copy.
pub fn ruleset_store(
    ruleset: &RuleSet,
    ledger: &dyn EventLedger,
) -> Result<(LedgerEvent, RuleSet)> {
    let (head, latest) = ledger.snapshot(AR_TOPIC)?;
    let prev_version = match latest {
        Some(ev) => RuleSet::decode(&ev.payload)?.version,
        None => 0,
    };
    let stored = RuleSet {
        rules: ruleset.rules.clone(),
        version: ruleset.version.max(prev_version) + 1,
    };
    let event = ledger.append(AR_TOPIC, &stored.encode(), head)?;
    Ok((event, stored))
}

pub fn ruleset_latest(ledger: &dyn EventLedger) -> Result<Option<(u64, RuleSet)>> {
    ledger
        .latest(AR_TOPIC)?
        .map(|ev| RuleSet::decode(&ev.payload).map(|rs| (ev.seq, rs)))
        .transpose()
}
