//! Multi-factor authorization: attribute rules plus a history factor.
//!
//! Every grant leaves the client a granted-access digest (GA) and the server
//! a keyed verification point (VP) in a Bloom filter kept on an append-only
//! ledger. A request must satisfy the rules and present GAs whose VPs are in
//! the filter, so a stolen session id alone is not enough.

pub mod bloom;
pub mod client;
pub mod config;
pub mod crypto;
pub mod encoding;
pub mod error;
pub mod harness;
pub mod ledger;
pub mod policy;
pub mod server;
pub mod wire;

pub use bloom::{BloomFilter, BloomParams, InsertStatus, Membership};
pub use client::{AuthzEndpoint, ClientAgent, GaVault};
pub use crypto::{
    gen_ga, gen_vp, AuthKey, Digest, GrantedAccess, Operation, Resource, ResourceClass, Timestamp,
    UserAttr, VerificationPoint,
};
pub use error::{Error, Result};
pub use ledger::{ChainStatus, EventLedger, Ledger, LedgerEvent};
pub use policy::{AccessRule, RuleDecision, RuleSet};
pub use server::{AccessDecision, AccessRequest, AuthzServer, Reason, ServerConfig, SessionId, Sid, Verdict};
