//! Server side of the scheme: enrollment, sessions, and the two-factor
//! authorization decision.
//!
//! A request is granted only if its session is live, an allow rule matches,
//! and every presented GA maps (under the user's key) to a VP present in the
//! latest filter on the ledger. Each grant issues a fresh GA/VP pair; the VP
//! goes into the filter and the grant timestamp goes back to the client so it
//! can derive the identical GA.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::Duration;

use rand::Rng;

use crate::bloom::{BloomFilter, BloomParams};
use crate::crypto::{
    gen_ga, gen_vp, sha256, AuthKey, Digest, GrantedAccess, Operation, Resource, ResourceClass,
    Timestamp, UserAttr, VerificationPoint,
};
use crate::error::{Error, Result};
use crate::ledger::{EventLedger, LedgerEvent, BF_TOPIC};
use crate::policy::{ruleset_store, RuleDecision, RuleSet};

pub const BOOTSTRAP_RESOURCE: &str = "__bootstrap__";
pub const SID_LEN: usize = 16;
pub const NONCE_LEN: usize = 32;
const CHALLENGE_TTL_MS: u64 = 60_000;
const MAX_OUTSTANDING_CHALLENGES: usize = 8;

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub bf_capacity: u64,
    pub bf_fpr: f64,
    pub session_ttl: Duration,
    pub bootstrap_count: u32,
    pub sga_max: usize,
    /// Re-fetch/re-insert attempts after a ledger conflict.
    pub conflict_retries: u32,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            bf_capacity: crate::bloom::DEFAULT_CAPACITY,
            bf_fpr: crate::bloom::DEFAULT_FPR,
            session_ttl: Duration::from_secs(900),
            bootstrap_count: 3,
            sga_max: 3,
            conflict_retries: 3,
        }
    }
}

pub trait Clock: Send + Sync {
    fn now(&self) -> Timestamp;
}

#[derive(Debug, Default)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> Timestamp {
        Timestamp::now()
    }
}

/// Clock that only moves when told to.
#[derive(Debug, Default)]
pub struct ManualClock(AtomicU64);

impl ManualClock {
    pub fn new(start: Timestamp) -> Self {
        Self(AtomicU64::new(start.0))
    }

    pub fn advance(&self, by: Duration) {
        self.0.fetch_add(by.as_millis() as u64, Ordering::SeqCst);
    }
}

impl Clock for ManualClock {
    fn now(&self) -> Timestamp {
        Timestamp(self.0.load(Ordering::SeqCst))
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Sid(pub [u8; SID_LEN]);

impl Sid {
    pub fn random() -> Self {
        Sid(rand::rng().random())
    }
}

impl fmt::Debug for Sid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Sid({})", hex::encode(self.0))
    }
}

impl fmt::Display for Sid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex::encode(self.0))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionId {
    pub sid: Sid,
    pub user_id: String,
    pub expires_at: Timestamp,
}

#[derive(Debug, Clone)]
pub struct UserRecord {
    pub user: UserAttr,
    pub key: AuthKey,
    pub enrolled_at: Timestamp,
    pub active_sessions: HashSet<Sid>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AccessRequest {
    pub user: UserAttr,
    pub sid: Sid,
    pub op: Operation,
    pub resource: Resource,
    pub sga: Vec<Digest>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Verdict {
    Granted,
    Denied,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Reason {
    Ok,
    ArFail,
    VpFail,
    SessionInvalid,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Granted => "GRANTED",
            Verdict::Denied => "DENIED",
        }
    }
}

impl Reason {
    pub fn as_str(self) -> &'static str {
        match self {
            Reason::Ok => "OK",
            Reason::ArFail => "AR_FAIL",
            Reason::VpFail => "VP_FAIL",
            Reason::SessionInvalid => "SESSION_INVALID",
        }
    }
}

impl std::str::FromStr for Verdict {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "GRANTED" => Ok(Verdict::Granted),
            "DENIED" => Ok(Verdict::Denied),
            _ => Err(Error::InvalidInput(format!("unknown verdict {s:?}"))),
        }
    }
}

impl std::str::FromStr for Reason {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "OK" => Ok(Reason::Ok),
            "AR_FAIL" => Ok(Reason::ArFail),
            "VP_FAIL" => Ok(Reason::VpFail),
            "SESSION_INVALID" => Ok(Reason::SessionInvalid),
            _ => Err(Error::InvalidInput(format!("unknown reason {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AccessDecision {
    pub verdict: Verdict,
    pub reason: Reason,
    /// Timestamp of the freshly issued GA; present iff granted.
    pub new_ga_ts: Option<Timestamp>,
}

impl AccessDecision {
    pub fn granted(ts: Timestamp) -> Self {
        Self {
            verdict: Verdict::Granted,
            reason: Reason::Ok,
            new_ga_ts: Some(ts),
        }
    }

    pub fn denied(reason: Reason) -> Self {
        debug_assert_ne!(reason, Reason::Ok);
        Self {
            verdict: Verdict::Denied,
            reason,
            new_ga_ts: None,
        }
    }

    pub fn is_granted(&self) -> bool {
        self.verdict == Verdict::Granted
    }
}

struct StoredUser {
    user: UserAttr,
    key: AuthKey,
    enrolled_at: Timestamp,
}

struct Challenge {
    nonce: [u8; NONCE_LEN],
    expires_at: Timestamp,
}

/// Timing of one grant's issuance, used by the benchmark harness.
#[derive(Debug, Clone, Copy, Default)]
pub struct IssueTiming {
    pub compute: Duration,
    pub insert: Duration,
    pub store: Duration,
}

pub struct AuthzServer {
    config: ServerConfig,
    ledger: Arc<dyn EventLedger>,
    clock: Arc<dyn Clock>,
    users: RwLock<HashMap<String, StoredUser>>,
    sessions: Mutex<HashMap<Sid, SessionId>>,
    challenges: Mutex<HashMap<String, Vec<Challenge>>>,
    last_issued: Mutex<u64>,
    enroll_lock: Mutex<()>,
    bf_writer: Mutex<()>,
    rules_cache: Mutex<Option<(u64, Arc<RuleSet>)>>,
}

impl fmt::Debug for AuthzServer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AuthzServer")
            .field("config", &self.config)
            .finish_non_exhaustive()
    }
}

fn lock<T>(m: &Mutex<T>) -> std::sync::MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

fn unavailable(e: Error) -> Error {
    match e {
        Error::LedgerUnavailable(_) => e,
        other => Error::LedgerUnavailable(other.to_string()),
    }
}

impl AuthzServer {
    pub fn new(config: ServerConfig, ledger: Arc<dyn EventLedger>) -> Result<Self> {
        Self::with_clock(config, ledger, Arc::new(SystemClock))
    }

    pub fn with_clock(
        config: ServerConfig,
        ledger: Arc<dyn EventLedger>,
        clock: Arc<dyn Clock>,
    ) -> Result<Self> {
        BloomParams::new(config.bf_capacity, config.bf_fpr)?;
        if config.bootstrap_count == 0 {
            return Err(Error::Config("enroll.bootstrap_count must be at least 1".into()));
        }
        if config.sga_max == 0 {
            return Err(Error::Config("sga.max must be at least 1".into()));
        }
        Ok(Self {
            config,
            ledger,
            clock,
            users: RwLock::new(HashMap::new()),
            sessions: Mutex::new(HashMap::new()),
            challenges: Mutex::new(HashMap::new()),
            last_issued: Mutex::new(0),
            enroll_lock: Mutex::new(()),
            bf_writer: Mutex::new(()),
            rules_cache: Mutex::new(None),
        })
    }

    pub fn config(&self) -> &ServerConfig {
        &self.config
    }

    pub fn ledger(&self) -> &Arc<dyn EventLedger> {
        &self.ledger
    }

    pub fn now(&self) -> Timestamp {
        self.clock.now()
    }

    /// Reserves `count` consecutive, strictly increasing issuance timestamps.
    /// Two grants never share a timestamp, so their GAs never collide.
    fn reserve_timestamps(&self, count: u64) -> Timestamp {
        let mut last = lock(&self.last_issued);
        let base = self.clock.now().0.max(*last + 1);
        *last = base + count - 1;
        Timestamp(base)
    }

    /// Stores a rule set on the ledger, retrying on conflict.
    pub fn install_rules(&self, rules: &RuleSet) -> Result<RuleSet> {
        let mut attempt = 0;
        loop {
            match ruleset_store(rules, self.ledger.as_ref()) {
                Ok((_, stored)) => return Ok(stored),
                Err(Error::Conflict { .. }) if attempt < self.config.conflict_retries => {
                    attempt += 1
                }
                Err(Error::Conflict { .. }) => {
                    return Err(Error::LedgerUnavailable("rule store conflicts persisted".into()))
                }
                Err(e) => return Err(e),
            }
        }
    }

    fn current_rules(&self) -> Result<Arc<RuleSet>> {
        let latest = self.ledger.latest(crate::ledger::AR_TOPIC).map_err(unavailable)?;
        let Some(event) = latest else {
            return Ok(Arc::new(RuleSet::default()));
        };
        let mut cache = lock(&self.rules_cache);
        if let Some((seq, rules)) = cache.as_ref() {
            if *seq == event.seq {
                return Ok(rules.clone());
            }
        }
        let rules = Arc::new(RuleSet::decode(&event.payload).map_err(unavailable)?);
        *cache = Some((event.seq, rules.clone()));
        Ok(rules)
    }

    /// Latest filter visible on the ledger, if any VP was ever stored.
    pub fn fetch_filter(&self) -> Result<Option<BloomFilter>> {
        let latest = self.ledger.latest(BF_TOPIC).map_err(unavailable)?;
        latest
            .map(|ev| BloomFilter::deserialize(&ev.payload).map_err(unavailable))
            .transpose()
    }

    /// Inserts `vps` into the newest filter and appends it, re-fetching on
    /// conflict. Mutations from this server are serialized locally; the
    /// compare-and-append guards against other writers sharing the ledger.
    pub fn store_vps(&self, vps: &[VerificationPoint]) -> Result<LedgerEvent> {
        self.store_vps_timed(vps).map(|(ev, _)| ev)
    }

    fn store_vps_timed(&self, vps: &[VerificationPoint]) -> Result<(LedgerEvent, IssueTiming)> {
        let _writer = lock(&self.bf_writer);
        let mut timing = IssueTiming::default();
        for _ in 0..=self.config.conflict_retries {
            let (head, latest) = self.ledger.snapshot(BF_TOPIC).map_err(unavailable)?;
            let mut bf = match latest {
                Some(ev) => BloomFilter::deserialize(&ev.payload).map_err(unavailable)?,
                None => BloomFilter::new(self.config.bf_capacity, self.config.bf_fpr)?,
            };
            let t0 = std::time::Instant::now();
            for vp in vps {
                bf.insert(vp)?;
            }
            let t1 = std::time::Instant::now();
            timing.insert = t1 - t0;
            match self.ledger.append(BF_TOPIC, &bf.serialize(), head) {
                Ok(ev) => {
                    timing.store = t1.elapsed();
                    return Ok((ev, timing));
                }
                Err(Error::Conflict { expected, actual }) => {
                    log::debug!("filter append conflict (expected {expected}, head {actual}), retrying");
                }
                Err(e) => return Err(unavailable(e)),
            }
        }
        Err(Error::LedgerUnavailable(format!(
            "filter append still conflicting after {} retries",
            self.config.conflict_retries
        )))
    }

    /// Registers a user and issues `bootstrap_count` dummy GAs (default from
    /// config) whose VPs are stored before this returns.
    pub fn enroll(
        &self,
        user: UserAttr,
        key: AuthKey,
        bootstrap_count: Option<u32>,
    ) -> Result<(UserRecord, Vec<GrantedAccess>)> {
        if user.key_id != key.key_id {
            return Err(Error::InvalidInput(format!(
                "user key_id {:?} does not match key {:?}",
                user.key_id, key.key_id
            )));
        }
        let count = bootstrap_count.unwrap_or(self.config.bootstrap_count);
        if count == 0 {
            return Err(Error::InvalidInput("bootstrap count must be at least 1".into()));
        }
        let _enrolling = lock(&self.enroll_lock);
        {
            let users = self.users.read().unwrap_or_else(|e| e.into_inner());
            if users.contains_key(&user.user_id) {
                return Err(Error::AlreadyEnrolled(user.user_id));
            }
            if users.values().any(|u| u.key.key_id == key.key_id) {
                return Err(Error::InvalidInput(format!(
                    "key_id {:?} already in use",
                    key.key_id
                )));
            }
        }
        let enrolled_at = self.reserve_timestamps(count as u64);
        let resource = Resource::new(BOOTSTRAP_RESOURCE, ResourceClass::Public)?;
        let gas: Vec<GrantedAccess> = (0..count as u64)
            .map(|j| gen_ga(&user, Operation::Read, &resource, Timestamp(enrolled_at.0 + j)))
            .collect();
        let vps: Vec<VerificationPoint> = gas.iter().map(|ga| gen_vp(&ga.digest, &key)).collect();
        self.store_vps(&vps)?;

        let record = UserRecord {
            user: user.clone(),
            key: key.clone(),
            enrolled_at,
            active_sessions: HashSet::new(),
        };
        self.users
            .write()
            .unwrap_or_else(|e| e.into_inner())
            .insert(
                user.user_id.clone(),
                StoredUser {
                    user,
                    key,
                    enrolled_at,
                },
            );
        Ok((record, gas))
    }

    pub fn user_record(&self, user_id: &str) -> Option<UserRecord> {
        let users = self.users.read().unwrap_or_else(|e| e.into_inner());
        let stored = users.get(user_id)?;
        let now = self.clock.now();
        let active_sessions = lock(&self.sessions)
            .values()
            .filter(|s| s.user_id == user_id && s.expires_at > now)
            .map(|s| s.sid)
            .collect();
        Some(UserRecord {
            user: stored.user.clone(),
            key: stored.key.clone(),
            enrolled_at: stored.enrolled_at,
            active_sessions,
        })
    }

    /// Issues a single-use nonce for [`AuthzServer::open_session`].
    pub fn issue_challenge(&self, user_id: &str) -> Result<[u8; NONCE_LEN]> {
        if !self
            .users
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .contains_key(user_id)
        {
            return Err(Error::UnknownUser(user_id.to_owned()));
        }
        let nonce: [u8; NONCE_LEN] = rand::rng().random();
        let now = self.clock.now();
        let mut challenges = lock(&self.challenges);
        let pending = challenges.entry(user_id.to_owned()).or_default();
        pending.retain(|c| c.expires_at > now);
        if pending.len() >= MAX_OUTSTANDING_CHALLENGES {
            pending.remove(0);
        }
        pending.push(Challenge {
            nonce,
            expires_at: Timestamp(now.0 + CHALLENGE_TTL_MS),
        });
        Ok(nonce)
    }

    /// Opens a session for a user proving key possession with
    /// `SHA-256(key_bytes ‖ nonce)` over an outstanding challenge.
    pub fn open_session(&self, user_id: &str, key_proof: &[u8]) -> Result<SessionId> {
        let key = {
            let users = self.users.read().unwrap_or_else(|e| e.into_inner());
            users
                .get(user_id)
                .map(|u| u.key.clone())
                .ok_or_else(|| Error::UnknownUser(user_id.to_owned()))?
        };
        let now = self.clock.now();
        {
            let mut challenges = lock(&self.challenges);
            let pending = challenges.entry(user_id.to_owned()).or_default();
            pending.retain(|c| c.expires_at > now);
            let hit = pending
                .iter()
                .position(|c| constant_time_eq(&key_proof_for(&key, &c.nonce), key_proof))
                .ok_or(Error::AuthFail)?;
            pending.remove(hit);
        }
        let session = SessionId {
            sid: Sid::random(),
            user_id: user_id.to_owned(),
            expires_at: Timestamp(now.0 + self.config.session_ttl.as_millis() as u64),
        };
        let mut sessions = lock(&self.sessions);
        sessions.retain(|_, s| s.expires_at > now);
        sessions.insert(session.sid, session.clone());
        Ok(session)
    }

    pub fn revoke_session(&self, sid: &Sid) -> Result<()> {
        lock(&self.sessions)
            .remove(sid)
            .map(|_| ())
            .ok_or(Error::SessionNotFound)
    }

    fn session_valid(&self, sid: &Sid, user_id: &str) -> bool {
        let now = self.clock.now();
        lock(&self.sessions)
            .get(sid)
            .is_some_and(|s| s.user_id == user_id && s.expires_at > now)
    }

    /// Decision only, without issuing a new GA. Shared by [`Self::authorize`]
    /// and the benchmark harness.
    pub fn evaluate(&self, req: &AccessRequest) -> Result<(AccessDecision, Option<AuthKey>)> {
        if !self.session_valid(&req.sid, &req.user.user_id) {
            return Ok((AccessDecision::denied(Reason::SessionInvalid), None));
        }
        let (user, key) = {
            let users = self.users.read().unwrap_or_else(|e| e.into_inner());
            match users.get(&req.user.user_id) {
                Some(u) => (u.user.clone(), u.key.clone()),
                None => return Ok((AccessDecision::denied(Reason::SessionInvalid), None)),
            }
        };
        // Rules are evaluated on the enrolled attributes; a request claiming
        // different ones does not satisfy them.
        if user != req.user
            || self.current_rules()?.sat_ar(&user, req.op, &req.resource)
                != RuleDecision::Satisfied
        {
            return Ok((AccessDecision::denied(Reason::ArFail), None));
        }
        if req.sga.is_empty() || req.sga.len() > self.config.sga_max {
            return Ok((AccessDecision::denied(Reason::VpFail), None));
        }
        let Some(bf) = self.fetch_filter()? else {
            return Ok((AccessDecision::denied(Reason::VpFail), None));
        };
        if !req
            .sga
            .iter()
            .all(|ga| bf.check(&gen_vp(ga, &key)).is_present())
        {
            return Ok((AccessDecision::denied(Reason::VpFail), None));
        }
        Ok((AccessDecision::granted(Timestamp(0)), Some(key)))
    }

    /// Full decision pipeline. On grant, issues and stores the next VP before
    /// returning. Ledger failures surface as errors and never as grants.
    pub fn authorize(&self, req: &AccessRequest) -> Result<AccessDecision> {
        let decision = match self.evaluate(req)? {
            (d, Some(key)) if d.is_granted() => {
                let ts = self.issue_next(&req.user, req.op, &req.resource, &key)?.0;
                AccessDecision::granted(ts)
            }
            (d, _) => d,
        };
        log::info!(
            target: "mfaz::decision",
            "{}",
            serde_json::json!({
                "ts": self.clock.now().0,
                "user": req.user.user_id,
                "op": req.op.as_str(),
                "resource": req.resource.resource_id,
                "verdict": decision.verdict.as_str(),
                "reason": decision.reason.as_str(),
            })
        );
        Ok(decision)
    }

    /// Issues the post-grant GA/VP: returns the grant timestamp and phase timings.
    pub fn issue_next(
        &self,
        user: &UserAttr,
        op: Operation,
        resource: &Resource,
        key: &AuthKey,
    ) -> Result<(Timestamp, IssueTiming)> {
        let t0 = std::time::Instant::now();
        let ts = self.reserve_timestamps(1);
        let ga = gen_ga(user, op, resource, ts);
        let vp = gen_vp(&ga.digest, key);
        let compute = t0.elapsed();
        let (_, mut timing) = self.store_vps_timed(&[vp])?;
        timing.compute = compute;
        Ok((ts, timing))
    }
}

pub fn key_proof_for(key: &AuthKey, nonce: &[u8]) -> Digest {
    let mut buf = Vec::with_capacity(key.key_bytes.len() + nonce.len());
    buf.extend_from_slice(&key.key_bytes);
    buf.extend_from_slice(nonce);
    sha256(&buf)
}

fn constant_time_eq(a: &[u8], b: &[u8]) -> bool {
    a.len() == b.len() && a.iter().zip(b).fold(0u8, |acc, (x, y)| acc | (x ^ y)) == 0
}
