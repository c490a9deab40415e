//! Append-only, hash-chained event log that stands in for the smart-contract
//! layer. Filter snapshots and rule sets are stored as topic-tagged events and
//! read back by "latest event on topic".
//!
//! Every event commits to its sequence number, topic, payload, append time and
//! the previous event's hash. The file backend stores one record per event:
//! `u32 BE record length ‖ canonical fields (1 seq, 2 topic, 3 payload,
//! 4 prev_hash, 5 event_hash, 6 appended_at)`.

use std::fs::{File, OpenOptions};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use crate::crypto::{sha256, Digest, Timestamp};
use crate::encoding::{canonical_decode, Encoder};
use crate::error::{Error, Result};

pub const BF_TOPIC: &str = "BF_UPDATE";
pub const AR_TOPIC: &str = "AR_UPDATE";
pub const GENESIS_HASH: Digest = [0u8; 32];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LedgerEvent {
    pub seq: u64,
    pub topic: String,
    pub payload: Vec<u8>,
    pub prev_hash: Digest,
    pub event_hash: Digest,
    pub appended_at: Timestamp,
}

impl LedgerEvent {
    fn compute_hash(
        seq: u64,
        topic: &str,
        payload: &[u8],
        prev_hash: &Digest,
        appended_at: Timestamp,
    ) -> Digest {
        sha256(
            &Encoder::new()
                .field(0x01, &seq.to_be_bytes())
                .field(0x02, topic.as_bytes())
                .field(0x03, payload)
                .field(0x04, prev_hash)
                .field(0x06, &appended_at.to_be_bytes())
                .finish(),
        )
    }

    pub fn recompute_hash(&self) -> Digest {
        Self::compute_hash(
            self.seq,
            &self.topic,
            &self.payload,
            &self.prev_hash,
            self.appended_at,
        )
    }

    /// File record: length prefix followed by the canonical field list.
    pub fn to_record(&self) -> Vec<u8> {
        let body = Encoder::new()
            .field(0x01, &self.seq.to_be_bytes())
            .field(0x02, self.topic.as_bytes())
            .field(0x03, &self.payload)
            .field(0x04, &self.prev_hash)
            .field(0x05, &self.event_hash)
            .field(0x06, &self.appended_at.to_be_bytes())
            .finish();
        let mut out = Vec::with_capacity(4 + body.len());
        out.extend_from_slice(&(body.len() as u32).to_be_bytes());
        out.extend_from_slice(&body);
        out
    }

    fn from_record_body(body: &[u8]) -> Result<Self> {
        let fields = canonical_decode(body)?;
        let tags: Vec<u8> = fields.iter().map(|(t, _)| *t).collect();
        if tags != [1, 2, 3, 4, 5, 6] {
            return Err(Error::RejectFormat(format!("unexpected record tags {tags:?}")));
        }
        let fixed = |i: usize, n: usize| -> Result<&[u8]> {
            let p = fields[i].1;
            if p.len() == n {
                Ok(p)
            } else {
                Err(Error::RejectFormat(format!("field {} has length {}", i + 1, p.len())))
            }
        };
        Ok(Self {
            seq: u64::from_be_bytes(fixed(0, 8)?.try_into().unwrap()),
            topic: String::from_utf8(fields[1].1.to_vec())
                .map_err(|_| Error::RejectFormat("topic is not UTF-8".into()))?,
            payload: fields[2].1.to_vec(),
            prev_hash: fixed(3, 32)?.try_into().unwrap(),
            event_hash: fixed(4, 32)?.try_into().unwrap(),
            appended_at: Timestamp(u64::from_be_bytes(fixed(5, 8)?.try_into().unwrap())),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChainStatus {
    Ok,
    /// Sequence position of the first event whose linkage or hash fails.
    Corrupt(u64),
}

/// Storage contract the authorization server depends on.
pub trait EventLedger: Send + Sync {
    /// Compare-and-append: succeeds only if `expected_prev_seq` is the current head.
    fn append(&self, topic: &str, payload: &[u8], expected_prev_seq: u64) -> Result<LedgerEvent>;

    /// Highest-seq visible event on `topic`.
    fn latest(&self, topic: &str) -> Result<Option<LedgerEvent>>;

    /// Current head seq and the newest event on `topic`, read atomically and
    /// ignoring any visibility delay. Used by read-modify-write cycles.
    fn snapshot(&self, topic: &str) -> Result<(u64, Option<LedgerEvent>)>;

    fn head_seq(&self) -> Result<u64> {
        self.snapshot("").map(|(head, _)| head)
    }

    fn verify(&self) -> Result<ChainStatus>;
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Backend {
    InMemory,
    File(PathBuf),
}

struct State {
    events: Vec<LedgerEvent>,
    visible_at: Vec<Instant>,
    file: Option<File>,
    /// Set when the file had an unreadable tail at open time.
    damaged_at: Option<u64>,
}

pub struct Ledger {
    backend: Backend,
    visibility_delay: Duration,
    state: Mutex<State>,
    conflicts: AtomicU64,
}

impl std::fmt::Debug for Ledger {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Ledger")
            .field("backend", &self.backend)
            .field("len", &self.len())
            .finish()
    }
}

impl Ledger {
    pub fn in_memory() -> Self {
        Self {
            backend: Backend::InMemory,
            visibility_delay: Duration::ZERO,
            state: Mutex::new(State {
                events: Vec::new(),
                visible_at: Vec::new(),
                file: None,
                damaged_at: None,
            }),
            conflicts: AtomicU64::new(0),
        }
    }

    /// Opens (or creates) a file-backed ledger and loads its events. Records
    /// after the first unparsable one are not loaded; [`EventLedger::verify`]
    /// reports the damage and appends are refused.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let mut file = OpenOptions::new()
            .read(true)
            .append(true)
            .create(true)
            .open(&path)?;
        let mut raw = Vec::new();
        file.read_to_end(&mut raw)?;
        let (events, damaged_at) = parse_records(&raw);
        let now = Instant::now();
        Ok(Self {
            backend: Backend::File(path),
            visibility_delay: Duration::ZERO,
            state: Mutex::new(State {
                visible_at: vec![now; events.len()],
                events,
                file: Some(file),
                damaged_at,
            }),
            conflicts: AtomicU64::new(0),
        })
    }

    /// Delay between append and visibility through [`EventLedger::latest`],
    /// emulating block confirmation latency.
    pub fn with_visibility_delay(mut self, delay: Duration) -> Self {
        self.visibility_delay = delay;
        self
    }

    pub fn backend(&self) -> &Backend {
        &self.backend
    }

    pub fn len(&self) -> usize {
        self.lock().events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn events(&self) -> Vec<LedgerEvent> {
        self.lock().events.clone()
    }

    /// Appends rejected because the caller's expected head was stale.
    pub fn conflicts(&self) -> u64 {
        self.conflicts.load(Ordering::Relaxed)
    }

    pub fn count_topic(&self, topic: &str) -> usize {
        self.lock().events.iter().filter(|e| e.topic == topic).count()
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, State> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }
}

impl EventLedger for Ledger {
    fn append(&self, topic: &str, payload: &[u8], expected_prev_seq: u64) -> Result<LedgerEvent> {
        if payload.is_empty() {
            return Err(Error::RejectPayload);
        }
        let mut st = self.lock();
        if let Some(seq) = st.damaged_at {
            return Err(Error::LedgerUnavailable(format!(
                "ledger file is damaged at record {seq}"
            )));
        }
        let head = st.events.last().map_or(0, |e| e.seq);
        if expected_prev_seq != head {
            self.conflicts.fetch_add(1, Ordering::Relaxed);
            return Err(Error::Conflict {
                expected: expected_prev_seq,
                actual: head,
            });
        }
        let prev_hash = st.events.last().map_or(GENESIS_HASH, |e| e.event_hash);
        let seq = head + 1;
        let appended_at = Timestamp::now();
        let event = LedgerEvent {
            event_hash: LedgerEvent::compute_hash(seq, topic, payload, &prev_hash, appended_at),
            seq,
            topic: topic.to_owned(),
            payload: payload.to_vec(),
            prev_hash,
            appended_at,
        };
        if let Some(file) = st.file.as_mut() {
            file.write_all(&event.to_record())?;
            file.sync_data()?;
        }
        st.visible_at.push(Instant::now() + self.visibility_delay);
        st.events.push(event.clone());
        Ok(event)
    }

    fn latest(&self, topic: &str) -> Result<Option<LedgerEvent>> {
        let st = self.lock();
        let now = Instant::now();
        Ok(st
            .events
            .iter()
            .zip(&st.visible_at)
            .rev()
            .find(|(e, at)| e.topic == topic && **at <= now)
            .map(|(e, _)| e.clone()))
    }

    fn snapshot(&self, topic: &str) -> Result<(u64, Option<LedgerEvent>)> {
        let st = self.lock();
        let head = st.events.last().map_or(0, |e| e.seq);
        let latest = st.events.iter().rev().find(|e| e.topic == topic).cloned();
        Ok((head, latest))
    }

    /// In-memory: checks the loaded chain. File: re-reads the file so that
    /// on-disk tampering after open is detected.
    fn verify(&self) -> Result<ChainStatus> {
        match &self.backend {
            Backend::InMemory => Ok(verify_chain(&self.lock().events)),
            Backend::File(path) => {
                let _guard = self.lock();
                let raw = std::fs::read(path)?;
                let (events, damaged_at) = parse_records(&raw);
                match verify_chain(&events) {
                    ChainStatus::Ok => Ok(damaged_at.map_or(ChainStatus::Ok, ChainStatus::Corrupt)),
                    corrupt => Ok(corrupt),
                }
            }
        }
    }
}

/// Parses consecutive records. Returns the events read before the first
/// malformed record and that record's sequence position, if any.
fn parse_records(mut raw: &[u8]) -> (Vec<LedgerEvent>, Option<u64>) {
    let mut events = Vec::new();
    while !raw.is_empty() {
        let position = events.len() as u64 + 1;
        if raw.len() < 4 {
            return (events, Some(position));
        }
        let len = u32::from_be_bytes(raw[..4].try_into().unwrap()) as usize;
        let Some(body) = raw.get(4..4 + len) else {
            return (events, Some(position));
        };
        match LedgerEvent::from_record_body(body) {
            Ok(ev) => events.push(ev),
            Err(_) => return (events, Some(position)),
        }
        raw = &raw[4 + len..];
    }
    (events, None)
}

/// Walks the chain from genesis; reports the first position whose seq,
/// prev-hash linkage or own hash is wrong.
pub fn verify_chain(events: &[LedgerEvent]) -> ChainStatus {
    let mut prev = GENESIS_HASH;
    for (i, ev) in events.iter().enumerate() {
        let position = i as u64 + 1;
        if ev.seq != position || ev.prev_hash != prev || ev.recompute_hash() != ev.event_hash {
            return ChainStatus::Corrupt(position);
        }
        prev = ev.event_hash;
    }
    ChainStatus::Ok
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::{Arc, Barrier};

    #[test]
    fn genesis_append() {
        let l = Ledger::in_memory();
        let ev = l.append(BF_TOPIC, b"a", 0).unwrap();
        assert_eq!(ev.seq, 1);
        assert_eq!(ev.prev_hash, GENESIS_HASH);
    }

    #[test]
    fn sequential_appends_chain() {
        let l = Ledger::in_memory();
        let a = l.append(BF_TOPIC, b"a", 0).unwrap();
        let b = l.append(BF_TOPIC, b"b", 1).unwrap();
        assert_eq!(b.seq, 2);
        assert_eq!(b.prev_hash, a.event_hash);
        assert_eq!(l.verify().unwrap(), ChainStatus::Ok);
    }

    #[test]
    fn stale_token_conflicts() {
        let l = Ledger::in_memory();
        l.append(BF_TOPIC, b"a", 0).unwrap();
        assert!(matches!(
            l.append(BF_TOPIC, b"b", 0),
            Err(Error::Conflict { expected: 0, actual: 1 })
        ));
        assert!(matches!(l.append(BF_TOPIC, b"", 1), Err(Error::RejectPayload)));
    }

    #[test]
    fn latest_per_topic() {
        let l = Ledger::in_memory();
        assert!(l.latest(BF_TOPIC).unwrap().is_none());
        l.append(BF_TOPIC, b"A", 0).unwrap();
        l.append(BF_TOPIC, b"B", 1).unwrap();
        assert_eq!(l.latest(BF_TOPIC).unwrap().unwrap().payload, b"B");
    }

    #[test]
    fn interleaved_topics() {
        let l = Ledger::in_memory();
        let mut last = [None, None];
        for i in 0..50u64 {
            let t = (i * 7 % 3 == 0) as usize;
            let topic = [BF_TOPIC, AR_TOPIC][t];
            let payload = format!("{topic}-{i}").into_bytes();
            l.append(topic, &payload, i).unwrap();
            last[t] = Some(payload);
        }
        assert_eq!(Some(l.latest(BF_TOPIC).unwrap().unwrap().payload), last[0]);
        assert_eq!(Some(l.latest(AR_TOPIC).unwrap().unwrap().payload), last[1]);
    }

    #[test]
    fn racing_writers_one_wins() {
        let l = Arc::new(Ledger::in_memory());
        for round in 0..100u64 {
            let barrier = Arc::new(Barrier::new(2));
            let handles: Vec<_> = (0..2)
                .map(|w| {
                    let (l, barrier) = (l.clone(), barrier.clone());
                    std::thread::spawn(move || {
                        barrier.wait();
                        l.append(BF_TOPIC, &[w as u8 + 1], round)
                    })
                })
                .collect();
            let results: Vec<_> = handles.into_iter().map(|h| h.join().unwrap()).collect();
            assert_eq!(results.iter().filter(|r| r.is_ok()).count(), 1);
            assert!(results
                .iter()
                .any(|r| matches!(r, Err(Error::Conflict { .. }))));
        }
        assert_eq!(l.len(), 100);
        assert_eq!(l.verify().unwrap(), ChainStatus::Ok);
    }

    #[test]
    fn visibility_delay_hides_fresh_events() {
        let l = Ledger::in_memory().with_visibility_delay(Duration::from_millis(50));
        l.append(BF_TOPIC, b"x", 0).unwrap();
        assert!(l.latest(BF_TOPIC).unwrap().is_none());
        assert_eq!(l.snapshot(BF_TOPIC).unwrap().0, 1);
        std::thread::sleep(Duration::from_millis(60));
        assert!(l.latest(BF_TOPIC).unwrap().is_some());
    }

    fn ten_event_file() -> (tempfile::TempDir, PathBuf, Vec<LedgerEvent>) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ledger.bin");
        let l = Ledger::open(&path).unwrap();
        let events = (0..10u64)
            .map(|i| l.append(BF_TOPIC, format!("payload-{i}").as_bytes(), i).unwrap())
            .collect();
        (dir, path, events)
    }

    fn record_offset(events: &[LedgerEvent], seq: u64) -> usize {
        events[..(seq - 1) as usize]
            .iter()
            .map(|e| e.to_record().len())
            .sum()
    }

    #[test]
    fn file_reopen_preserves_chain() {
        let (_dir, path, events) = ten_event_file();
        let l = Ledger::open(&path).unwrap();
        assert_eq!(l.events(), events);
        assert_eq!(l.verify().unwrap(), ChainStatus::Ok);
        l.append(AR_TOPIC, b"more", 10).unwrap();
        assert_eq!(Ledger::open(&path).unwrap().len(), 11);
    }

    #[test]
    fn payload_flip_detected() {
        let (_dir, path, events) = ten_event_file();
        let l = Ledger::open(&path).unwrap();
        let mut raw = std::fs::read(&path).unwrap();
        // record prefix 4 + seq field 13 + topic header 5 + topic + payload header 5
        let at = record_offset(&events, 5) + 4 + 13 + 5 + BF_TOPIC.len() + 5;
        raw[at] ^= 0x01;
        std::fs::write(&path, &raw).unwrap();
        assert_eq!(l.verify().unwrap(), ChainStatus::Corrupt(5));
    }

    #[test]
    fn prev_hash_flip_detected() {
        let (_dir, path, events) = ten_event_file();
        let mut raw = std::fs::read(&path).unwrap();
        let ev = &events[6];
        let at = record_offset(&events, 7) + 4 + 13 + 5 + ev.topic.len() + 5 + ev.payload.len() + 5;
        raw[at] ^= 0x80;
        std::fs::write(&path, &raw).unwrap();
        let reopened = Ledger::open(&path).unwrap();
        assert_eq!(reopened.verify().unwrap(), ChainStatus::Corrupt(7));
    }

    #[test]
    fn truncated_tail_refuses_append() {
        let (_dir, path, _) = ten_event_file();
        let raw = std::fs::read(&path).unwrap();
        std::fs::write(&path, &raw[..raw.len() - 3]).unwrap();
        let l = Ledger::open(&path).unwrap();
        assert_eq!(l.len(), 9);
        assert_eq!(l.verify().unwrap(), ChainStatus::Corrupt(10));
        assert!(matches!(
            l.append(BF_TOPIC, b"x", 9),
            Err(Error::LedgerUnavailable(_))
        ));
    }
}
