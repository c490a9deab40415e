//! Checks shared by the integration tests and the acceptance target.
#![allow(dead_code)]

use std::collections::HashSet;
use std::sync::Arc;

use mfaz::client::AuthzEndpoint;
use mfaz::ledger::BF_TOPIC;
use mfaz::server::key_proof_for;
use mfaz::{
    gen_ga, AccessRequest, AuthKey, AuthzServer, ChainStatus, ClientAgent, Digest, EventLedger,
    GaVault, GrantedAccess, Ledger, Operation, Reason, Resource, ResourceClass, RuleSet,
    ServerConfig, Sid, UserAttr, Verdict,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

pub struct Enrolled {
    pub user: UserAttr,
    pub key: AuthKey,
    pub gas: Vec<GrantedAccess>,
    pub sid: Sid,
}

pub fn enroll_and_login(server: &AuthzServer, name: &str, role: Option<&str>) -> Enrolled {
    let key = AuthKey::new(format!("{name}-key"), mfaz::crypto::sha256(name.as_bytes())).unwrap();
    let user = UserAttr::new(name, key.key_id.clone(), role.map(str::to_owned)).unwrap();
    let (_, gas) = server.enroll(user.clone(), key.clone(), None).unwrap();
    let nonce = server.issue_challenge(name).unwrap();
    let sid = server.open_session(name, &key_proof_for(&key, &nonce)).unwrap().sid;
    Enrolled { user, key, gas, sid }
}

pub fn server_with_rules(rules: &str) -> AuthzServer {
    let server = AuthzServer::new(ServerConfig::default(), Arc::new(Ledger::in_memory())).unwrap();
    server.install_rules(&RuleSet::parse_text(rules).unwrap()).unwrap();
    server
}

pub const TOY_RULES: &str = "staff;read,write;private\n*;read;public\n";

/// The toy rule table written out by hand, independent of the rule matcher.
fn toy_allowed(user: &str, op: Operation, resource: &str) -> bool {
    match (user, resource) {
        ("alice", "lab") => matches!(op, Operation::Read | Operation::Write),
        (_, "lobby") => op == Operation::Read,
        _ => false,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SgaKind {
    One,
    Max,
    Forged,
    Empty,
    Mixed,
    Oversize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SessionKind {
    Own,
    Random,
    OtherUsers,
}

pub struct OracleReport {
    pub configurations: usize,
    pub mismatches: Vec<String>,
}

/// Enumerates users × operations × resources × SGA shapes × session states.
/// Each configuration runs on a fresh server and is compared to the
/// predicate session_ok ∧ rule ∧ 1 ≤ |sga| ≤ max ∧ every GA was issued.
pub fn toy_universe_oracle() -> OracleReport {
    let users = ["alice", "bob"];
    let resources = [("lab", ResourceClass::Private), ("lobby", ResourceClass::Public)];
    let sgas = [
        SgaKind::One,
        SgaKind::Max,
        SgaKind::Forged,
        SgaKind::Empty,
        SgaKind::Mixed,
        SgaKind::Oversize,
    ];
    let sessions = [SessionKind::Own, SessionKind::Random, SessionKind::OtherUsers];
    let mut rng = ChaCha20Rng::seed_from_u64(96);
    let mut report = OracleReport {
        configurations: 0,
        mismatches: Vec::new(),
    };
    for actor in users {
        for op in Operation::ALL {
            for (rid, class) in resources {
                for sga_kind in sgas {
                    for session in sessions {
                        report.configurations += 1;
                        let server = server_with_rules(TOY_RULES);
                        let alice = enroll_and_login(&server, "alice", Some("staff"));
                        let bob = enroll_and_login(&server, "bob", None);
                        let (me, other) = if actor == "alice" { (&alice, &bob) } else { (&bob, &alice) };
                        let issued: HashSet<Digest> =
                            alice.gas.iter().chain(&bob.gas).map(|g| g.digest).collect();
                        let max = server.config().sga_max;
                        let forged: Digest = rng.random();
                        let sga: Vec<Digest> = match sga_kind {
                            SgaKind::One => vec![me.gas[0].digest],
                            SgaKind::Max => me.gas.iter().take(max).map(|g| g.digest).collect(),
                            SgaKind::Forged => vec![forged],
                            SgaKind::Empty => vec![],
                            SgaKind::Mixed => vec![me.gas[1].digest, forged],
                            SgaKind::Oversize => {
                                let mut v: Vec<Digest> = me.gas.iter().map(|g| g.digest).collect();
                                v.resize(max + 1, me.gas[0].digest);
                                v
                            }
                        };
                        let sid = match session {
                            SessionKind::Own => me.sid,
                            SessionKind::Random => Sid(rng.random()),
                            SessionKind::OtherUsers => other.sid,
                        };
                        let resource = Resource::new(rid, class).unwrap();

                        let session_ok = session == SessionKind::Own;
                        let rule_ok = toy_allowed(actor, op, rid);
                        let vp_ok = !sga.is_empty()
                            && sga.len() <= max
                            && sga.iter().all(|d| issued.contains(d));
                        let want = if !session_ok {
                            (Verdict::Denied, Reason::SessionInvalid)
                        } else if !rule_ok {
                            (Verdict::Denied, Reason::ArFail)
                        } else if !vp_ok {
                            (Verdict::Denied, Reason::VpFail)
                        } else {
                            (Verdict::Granted, Reason::Ok)
                        };

                        let req = AccessRequest {
                            user: me.user.clone(),
                            sid,
                            op,
                            resource: resource.clone(),
                            sga,
                        };
                        let got = match server.authorize(&req) {
                            Ok(d) => (d.verdict, d.reason),
                            Err(e) => {
                                report.mismatches.push(format!("{actor} {op} {rid} {sga_kind:?} {session:?}: error {e}"));
                                continue;
                            }
                        };
                        if got != want {
                            report.mismatches.push(format!(
                                "{actor} {op} {rid} {sga_kind:?} {session:?}: want {want:?} got {got:?}"
                            ));
                        }
                    }
                }
            }
        }
    }
    report
}

pub struct LivenessReport {
    pub grants: usize,
    pub min_vault: usize,
    pub failures: Vec<String>,
}

/// A client makes `rounds` sequential q=1 requests. Each request after the
/// first presents exactly the GA the client derived from the previous grant.
pub fn liveness(endpoint: &dyn AuthzEndpoint, server: &AuthzServer, rounds: usize) -> LivenessReport {
    let me = enroll_and_login(server, "liv", None);
    let mut vault = GaVault::in_memory("liv");
    vault.store(me.gas.clone()).unwrap();
    let resource = Resource::new("lobby", ResourceClass::Public).unwrap();
    let mut report = LivenessReport {
        grants: 0,
        min_vault: vault.len(),
        failures: Vec::new(),
    };
    let mut next = vault.entries()[0];
    for round in 0..rounds {
        let req = AccessRequest {
            user: me.user.clone(),
            sid: me.sid,
            op: Operation::Read,
            resource: resource.clone(),
            sga: vec![next.digest],
        };
        let d = match endpoint.authorize(&req) {
            Ok(d) => d,
            Err(e) => {
                report.failures.push(format!("round {round}: {e}"));
                break;
            }
        };
        let Some(ts) = d.new_ga_ts.filter(|_| d.is_granted()) else {
            report.failures.push(format!("round {round}: {} {}", d.verdict.as_str(), d.reason.as_str()));
            break;
        };
        report.grants += 1;
        vault.consume(std::slice::from_ref(&next)).unwrap();
        next = gen_ga(&me.user, Operation::Read, &resource, ts);
        vault.store([next]).unwrap();
        report.min_vault = report.min_vault.min(vault.len());
    }
    report
}

/// The same loop through [`ClientAgent`], which picks its SGA at random.
pub fn agent_liveness(endpoint: &dyn AuthzEndpoint, server: &AuthzServer, rounds: usize, q: usize) -> (usize, usize) {
    let me = enroll_and_login(server, "agent", None);
    let mut vault = GaVault::in_memory("agent");
    vault.store(me.gas).unwrap();
    let mut agent = ClientAgent::new(me.user, vault, me.sid, Some(5));
    let resource = Resource::new("lobby", ResourceClass::Public).unwrap();
    let mut granted = 0;
    let mut min_vault = usize::MAX;
    for _ in 0..rounds {
        if agent.request_access(endpoint, Operation::Read, &resource, q).unwrap().is_granted() {
            granted += 1;
        }
        min_vault = min_vault.min(agent.vault.len());
    }
    (granted, min_vault)
}

/// Writes a file-backed ledger with a few dozen events, then flips one byte
/// at a random position per trial and asks the ledger to verify.
pub fn corruption_trials(dir: &std::path::Path, trials: usize, seed: u64) -> (usize, Vec<String>) {
    let path = dir.join("chain.bin");
    {
        let ledger = Arc::new(Ledger::open(&path).unwrap());
        let server = AuthzServer::new(ServerConfig::default(), ledger.clone()).unwrap();
        server.install_rules(&RuleSet::parse_text(TOY_RULES).unwrap()).unwrap();
        for i in 0..8 {
            enroll_and_login(&server, &format!("user{i}"), None);
        }
        assert_eq!(ledger.verify().unwrap(), ChainStatus::Ok);
        assert!(ledger.count_topic(BF_TOPIC) >= 8);
    }
    let pristine = std::fs::read(&path).unwrap();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut detected = 0;
    let mut missed = Vec::new();
    let copy = dir.join("tampered.bin");
    for _ in 0..trials {
        let mut bytes = pristine.clone();
        let at = rng.random_range(0..bytes.len());
        let mask = rng.random_range(1..=255u8);
        bytes[at] ^= mask;
        std::fs::write(&copy, &bytes).unwrap();
        let status = Ledger::open(&copy).and_then(|l| l.verify());
        match status {
            Ok(ChainStatus::Corrupt(_)) | Err(_) => detected += 1,
            Ok(ChainStatus::Ok) => missed.push(format!("offset {at} mask {mask:#04x}")),
        }
    }
    (detected, missed)
}
