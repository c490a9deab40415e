//! Scripted attack and legitimacy scenarios run against an in-process server.
//!
//! The suite format is documented at the top of `scenarios/default.suite`.
//! Every hijack variant starts from the state after the session id has been
//! obtained; how it was obtained only changes the script's narrative.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::client::{AuthzEndpoint, ClientAgent, GaVault};
use crate::crypto::{AuthKey, Digest, Operation, Resource, ResourceClass, UserAttr};
use crate::error::{Error, Result};
use crate::ledger::Ledger;
use crate::policy::{AccessRule, RuleSet};
use crate::server::{key_proof_for, AccessRequest, AuthzServer, Reason, ServerConfig, Sid, Verdict};

pub const DEFAULT_SUITE: &str = include_str!("../../scenarios/default.suite");
pub const ATTACKER: &str = "attacker";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SgaMode {
    Valid,
    NoRule,
    Forged,
    Empty,
    Mixed,
}

impl SgaMode {
    fn parse(s: &str) -> Result<Self> {
        match s {
            "valid" | "valid_sga" => Ok(SgaMode::Valid),
            "no_rule" => Ok(SgaMode::NoRule),
            "forged" | "forged_sga" => Ok(SgaMode::Forged),
            "empty" | "empty_sga" => Ok(SgaMode::Empty),
            "mixed" | "mixed_sga" => Ok(SgaMode::Mixed),
            other => Err(Error::InvalidInput(format!("unknown sga mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Action {
    Rule(AccessRule),
    Enroll { user: String, role: Option<String> },
    OpenSession { user: String },
    StealSid { victim: String },
    GuessSid { victim: String },
    RevokeVictim { victim: String },
    Request {
        actor: String,
        op: Operation,
        resource: Resource,
        mode: SgaMode,
        q: usize,
        repeat: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Scenario {
    pub name: String,
    pub script: Vec<Action>,
    /// One entry per `Request` action, in order.
    pub expected: Vec<(Verdict, Reason)>,
}

pub fn parse_suite(text: &str) -> Result<Vec<Scenario>> {
    let mut suite = Vec::new();
    let mut current: Option<Scenario> = None;
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let at = |msg: String| Error::InvalidInput(format!("suite line {}: {msg}", n + 1));
        let (head, rest) = line.split_once(char::is_whitespace).unwrap_or((line, ""));
        let rest = rest.trim();
        match (head, current.as_mut()) {
            ("scenario", None) => {
                if rest.is_empty() {
                    return Err(at("scenario needs a name".into()));
                }
                current = Some(Scenario {
                    name: rest.to_owned(),
                    script: Vec::new(),
                    expected: Vec::new(),
                });
            }
            ("scenario", Some(_)) => return Err(at("nested scenario".into())),
            ("end", Some(_)) => suite.push(current.take().unwrap()),
            (_, None) => return Err(at(format!("{head:?} outside a scenario"))),
            (_, Some(sc)) => {
                let (action, expect) = parse_action(head, rest).map_err(|e| at(e.to_string()))?;
                sc.script.push(action);
                if let Some(e) = expect {
                    sc.expected.push(e);
                }
            }
        }
    }
    if let Some(sc) = current {
        return Err(Error::InvalidInput(format!("scenario {:?} has no end", sc.name)));
    }
    Ok(suite)
}

fn one_arg(rest: &str) -> Result<String> {
    let mut it = rest.split_whitespace();
    match (it.next(), it.next()) {
        (Some(a), None) => Ok(a.to_owned()),
        _ => Err(Error::InvalidInput(format!("expected one argument, got {rest:?}"))),
    }
}

fn parse_action(head: &str, rest: &str) -> Result<(Action, Option<(Verdict, Reason)>)> {
    let action = match head {
        "rule" => Action::Rule(AccessRule::parse_line(rest)?),
        "enroll" => {
            let mut it = rest.split_whitespace();
            let user = it
                .next()
                .ok_or_else(|| Error::InvalidInput("enroll needs a user".into()))?
                .to_owned();
            let mut role = None;
            for opt in it {
                match opt.split_once('=') {
                    Some(("role", r)) => role = Some(r.to_owned()),
                    _ => return Err(Error::InvalidInput(format!("unknown enroll option {opt:?}"))),
                }
            }
            Action::Enroll { user, role }
        }
        "session" => Action::OpenSession { user: one_arg(rest)? },
        "steal_sid" => Action::StealSid { victim: one_arg(rest)? },
        "guess_sid" => Action::GuessSid { victim: one_arg(rest)? },
        "revoke_victim" => Action::RevokeVictim { victim: one_arg(rest)? },
        "request" => return parse_request(rest).map(|(a, e)| (a, Some(e))),
        other => return Err(Error::InvalidInput(format!("unknown statement {other:?}"))),
    };
    Ok((action, None))
}

fn parse_request(rest: &str) -> Result<(Action, (Verdict, Reason))> {
    let tokens: Vec<&str> = rest.split_whitespace().collect();
    let [actor, op, rid, class, mode, tail @ ..] = tokens.as_slice() else {
        return Err(Error::InvalidInput("request needs actor, op, resource, class, sga".into()));
    };
    let mut q = 1;
    let mut repeat = 1;
    let mut expect = None;
    let mut i = 0;
    while i < tail.len() {
        match tail[i] {
            "expect" => {
                let (v, r) = tail
                    .get(i + 1)
                    .zip(tail.get(i + 2))
                    .ok_or_else(|| Error::InvalidInput("expect needs VERDICT REASON".into()))?;
                expect = Some((v.parse::<Verdict>()?, r.parse::<Reason>()?));
                i += 3;
            }
            opt => {
                let parsed = match opt.split_once('=') {
                    Some(("q", v)) => v.parse().map(|v| q = v),
                    Some(("repeat", v)) => v.parse().map(|v| repeat = v),
                    _ => return Err(Error::InvalidInput(format!("unknown request option {opt:?}"))),
                };
                parsed.map_err(|_| Error::InvalidInput(format!("bad number in {opt:?}")))?;
                i += 1;
            }
        }
    }
    let expect = expect.ok_or_else(|| Error::InvalidInput("request without expect".into()))?;
    if repeat == 0 {
        return Err(Error::InvalidInput("repeat must be at least 1".into()));
    }
    Ok((
        Action::Request {
            actor: (*actor).to_owned(),
            op: op.parse()?,
            resource: Resource::new(*rid, class.parse::<ResourceClass>()?)?,
            mode: SgaMode::parse(mode)?,
            q,
            repeat,
        },
        expect,
    ))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RequestRecord {
    pub actor: String,
    pub expected: (Verdict, Reason),
    pub actual: (Verdict, Reason),
}

#[derive(Debug, Clone, Default)]
pub struct ScenarioOutcome {
    pub name: String,
    pub passed: bool,
    pub records: Vec<RequestRecord>,
    pub false_grants: usize,
    pub false_denies: usize,
    /// Set when the scenario aborted before completing its script.
    pub setup_error: Option<String>,
}

#[derive(Debug, Clone, Default)]
pub struct SuiteReport {
    pub outcomes: Vec<ScenarioOutcome>,
    pub false_grant_count: usize,
    pub false_deny_count: usize,
}

impl SuiteReport {
    pub fn all_passed(&self) -> bool {
        self.outcomes.iter().all(|o| o.passed)
    }
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for o in &self.outcomes {
            write!(
                f,
                "{:<32} {}  requests={} false_grants={} false_denies={}",
                o.name,
                if o.passed { "PASS" } else { "FAIL" },
                o.records.len(),
                o.false_grants,
                o.false_denies
            )?;
            if let Some(e) = &o.setup_error {
                write!(f, "  setup_error={e:?}")?;
            }
            writeln!(f)?;
            for r in o.records.iter().filter(|r| r.expected != r.actual) {
                writeln!(
                    f,
                    "    {} expected {} {} got {} {}",
                    r.actor,
                    r.expected.0.as_str(),
                    r.expected.1.as_str(),
                    r.actual.0.as_str(),
                    r.actual.1.as_str()
                )?;
            }
        }
        writeln!(
            f,
            "scenarios={} passed={} false_grant_count={} false_deny_count={}",
            self.outcomes.len(),
            self.outcomes.iter().filter(|o| o.passed).count(),
            self.false_grant_count,
            self.false_deny_count
        )
    }
}

struct World {
    server: Arc<AuthzServer>,
    rules: RuleSet,
    keys: HashMap<String, AuthKey>,
    clients: HashMap<String, ClientAgent>,
    /// Attacker's claimed identity and held sid.
    attacker: Option<(String, Sid)>,
    rng: ChaCha20Rng,
}

impl World {
    fn new(seed: u64) -> Result<Self> {
        let server = AuthzServer::new(ServerConfig::default(), Arc::new(Ledger::in_memory()))?;
        Ok(Self {
            server: Arc::new(server),
            rules: RuleSet::default(),
            keys: HashMap::new(),
            clients: HashMap::new(),
            attacker: None,
            rng: ChaCha20Rng::seed_from_u64(seed),
        })
    }

    fn client(&mut self, user: &str) -> Result<&mut ClientAgent> {
        self.clients
            .get_mut(user)
            .ok_or_else(|| Error::UnknownUser(user.to_owned()))
    }

    fn login(&mut self, user: &str) -> Result<Sid> {
        let key = self
            .keys
            .get(user)
            .ok_or_else(|| Error::UnknownUser(user.to_owned()))?;
        let nonce = self.server.issue_challenge(user)?;
        Ok(self.server.open_session(user, &key_proof_for(key, &nonce))?.sid)
    }

    fn forged(&mut self, n: usize) -> Vec<Digest> {
        (0..n).map(|_| self.rng.random()).collect()
    }

    fn apply(&mut self, action: &Action) -> Result<()> {
        match action {
            Action::Rule(rule) => {
                self.rules.rules.push(rule.clone());
                self.rules = self.server.install_rules(&self.rules)?;
            }
            Action::Enroll { user, role } => {
                let key = AuthKey::new(format!("{user}-key"), self.rng.random())?;
                let attr = UserAttr::new(user.clone(), key.key_id.clone(), role.clone())?;
                let (_, gas) = self.server.enroll(attr.clone(), key.clone(), None)?;
                let mut vault = GaVault::in_memory(user.clone());
                vault.store(gas)?;
                let seed = self.rng.random();
                self.keys.insert(user.clone(), key);
                self.clients
                    .insert(user.clone(), ClientAgent::new(attr, vault, Sid([0; 16]), Some(seed)));
            }
            Action::OpenSession { user } => {
                let sid = self.login(user)?;
                self.client(user)?.sid = sid;
            }
            Action::StealSid { victim } => {
                let sid = self.client(victim)?.sid;
                self.attacker = Some((victim.clone(), sid));
            }
            Action::GuessSid { victim } => {
                self.client(victim)?;
                self.attacker = Some((victim.clone(), Sid(self.rng.random())));
            }
            Action::RevokeVictim { victim } => {
                let held = self.attacker.as_ref().map(|(_, sid)| *sid);
                let record = self
                    .server
                    .user_record(victim)
                    .ok_or_else(|| Error::UnknownUser(victim.clone()))?;
                for sid in record.active_sessions.iter().filter(|s| Some(**s) != held) {
                    self.server.revoke_session(sid)?;
                }
            }
            Action::Request { .. } => unreachable!("requests are handled by run_request"),
        }
        Ok(())
    }

    fn run_request(
        &mut self,
        actor: &str,
        op: Operation,
        resource: &Resource,
        mode: SgaMode,
        q: usize,
    ) -> Result<(Verdict, Reason)> {
        let endpoint: Arc<AuthzServer> = self.server.clone();
        if actor == ATTACKER {
            let (victim, sid) = self
                .attacker
                .clone()
                .ok_or_else(|| Error::InvalidInput("attacker holds no sid".into()))?;
            let user = self.client(&victim)?.user.clone();
            let sga = match mode {
                SgaMode::Forged => self.forged(q),
                SgaMode::Empty => Vec::new(),
                other => {
                    return Err(Error::InvalidInput(format!(
                        "attacker has no vault for {other:?} requests"
                    )))
                }
            };
            let d = endpoint.authorize(&AccessRequest {
                user,
                sid,
                op,
                resource: resource.clone(),
                sga,
            })?;
            return Ok((d.verdict, d.reason));
        }
        let forged = self.forged(q);
        let client = self.client(actor)?;
        let d = match mode {
            SgaMode::Valid | SgaMode::NoRule => {
                client.request_access(endpoint.as_ref(), op, resource, q)?
            }
            SgaMode::Forged | SgaMode::Empty | SgaMode::Mixed => {
                let sga = match mode {
                    SgaMode::Forged => forged,
                    SgaMode::Empty => Vec::new(),
                    _ => {
                        let genuine = client.vault.select_sga_seeded(1, None)?[0].digest;
                        vec![genuine, forged[0]]
                    }
                };
                endpoint.authorize(&AccessRequest {
                    user: client.user.clone(),
                    sid: client.sid,
                    op,
                    resource: resource.clone(),
                    sga,
                })?
            }
        };
        Ok((d.verdict, d.reason))
    }
}

pub fn run_scenario(scenario: &Scenario, seed: u64) -> ScenarioOutcome {
    let mut outcome = ScenarioOutcome {
        name: scenario.name.clone(),
        ..Default::default()
    };
    let requests = scenario
        .script
        .iter()
        .filter(|a| matches!(a, Action::Request { .. }))
        .count();
    if requests != scenario.expected.len() {
        outcome.setup_error = Some(format!(
            "{requests} requests but {} expectations",
            scenario.expected.len()
        ));
        return outcome;
    }
    let result = (|| -> Result<()> {
        let mut world = World::new(seed)?;
        let mut expected = scenario.expected.iter();
        for action in &scenario.script {
            let Action::Request {
                actor,
                op,
                resource,
                mode,
                q,
                repeat,
            } = action
            else {
                world.apply(action)?;
                continue;
            };
            let want = *expected.next().unwrap();
            for _ in 0..*repeat {
                let got = world.run_request(actor, *op, resource, *mode, *q)?;
                if want.0 == Verdict::Denied && got.0 == Verdict::Granted {
                    outcome.false_grants += 1;
                }
                if want.0 == Verdict::Granted && got.0 == Verdict::Denied {
                    outcome.false_denies += 1;
                }
                outcome.records.push(RequestRecord {
                    actor: actor.clone(),
                    expected: want,
                    actual: got,
                });
            }
        }
        Ok(())
    })();
    if let Err(e) = result {
        outcome.setup_error = Some(e.to_string());
    }
    outcome.passed =
        outcome.setup_error.is_none() && outcome.records.iter().all(|r| r.expected == r.actual);
    outcome
}

/// Runs each scenario on a fresh server and in-memory ledger.
pub fn run_scenarios(suite: &[Scenario], seed: u64) -> SuiteReport {
    let outcomes: Vec<ScenarioOutcome> = suite
        .iter()
        .enumerate()
        .map(|(i, sc)| run_scenario(sc, seed.wrapping_add(i as u64)))
        .collect();
    SuiteReport {
        false_grant_count: outcomes.iter().map(|o| o.false_grants).sum(),
        false_deny_count: outcomes.iter().map(|o| o.false_denies).sum(),
        outcomes,
    }
}
