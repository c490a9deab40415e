//! Microbenchmarks, storage figures and false-positive probes.

use std::fmt;
use std::hint::black_box;
use std::path::PathBuf;
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::bloom::{BloomFilter, BloomParams, HEADER_LEN};
use crate::crypto::{
    gen_ga, gen_vp, AuthKey, Operation, Resource, ResourceClass, UserAttr, VerificationPoint,
    DIGEST_LEN,
};
use crate::error::{Error, Result};
use crate::ledger::{EventLedger, Ledger};
use crate::policy::{AccessRule, RuleSet};
use crate::server::{key_proof_for, AccessRequest, AuthzServer, ServerConfig};

pub const MIN_RUNS: usize = 50;

pub const PHASES: [&str; 7] = [
    "vp_computation",
    "vp_insertion",
    "bf_store_to_ledger",
    "vp_generation_total",
    "bf_fetch_from_ledger",
    "vp_checking",
    "vp_verification_total",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LedgerChoice {
    Memory,
    File(PathBuf),
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub runs: usize,
    pub warmup: usize,
    pub ledger: LedgerChoice,
    /// Number of GAs attached to each verification request.
    pub q: usize,
    /// When non-zero, also runs that many servers appending to one shared ledger.
    pub parallel_clients: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            runs: MIN_RUNS,
            warmup: 5,
            ledger: LedgerChoice::Memory,
            q: 1,
            parallel_clients: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PhaseStats {
    pub median: Duration,
    pub p95: Duration,
    pub mean: Duration,
    pub runs: usize,
}

impl PhaseStats {
    pub fn from_samples(samples: &[Duration]) -> Self {
        assert!(!samples.is_empty(), "no samples");
        let mut sorted = samples.to_vec();
        sorted.sort_unstable();
        let n = sorted.len();
        let rank = |p: f64| sorted[((p * n as f64).ceil() as usize).clamp(1, n) - 1];
        Self {
            median: rank(0.5),
            p95: rank(0.95),
            mean: sorted.iter().sum::<Duration>() / n as u32,
            runs: n,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StorageReport {
    pub bf_bytes: usize,
    pub header_bytes: usize,
    pub bitarray_bytes: usize,
    pub raw_vp_bytes_equivalent: usize,
}

impl StorageReport {
    pub fn for_params(params: &BloomParams) -> Self {
        Self {
            bf_bytes: params.serialized_len(),
            header_bytes: HEADER_LEN,
            bitarray_bytes: params.byte_len(),
            raw_vp_bytes_equivalent: params.capacity as usize * DIGEST_LEN,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ContentionReport {
    pub writers: usize,
    pub attempted: usize,
    pub committed: usize,
    pub conflicts: u64,
    pub failures: usize,
}

#[derive(Debug, Clone)]
pub struct BenchReport {
    /// Seven entries in [`PHASES`] order.
    pub phases: Vec<(&'static str, PhaseStats)>,
    pub storage: StorageReport,
    pub contention: Option<ContentionReport>,
}

impl BenchReport {
    pub fn phase(&self, name: &str) -> Option<&PhaseStats> {
        self.phases.iter().find(|(n, _)| *n == name).map(|(_, s)| s)
    }

    /// `key=value` lines, one per phase and one for storage.
    pub fn machine_lines(&self) -> Vec<String> {
        let us = |d: Duration| d.as_secs_f64() * 1e6;
        let mut lines: Vec<String> = self
            .phases
            .iter()
            .map(|(name, s)| {
                format!(
                    "phase={name} runs={} median_us={:.3} p95_us={:.3} mean_us={:.3}",
                    s.runs,
                    us(s.median),
                    us(s.p95),
                    us(s.mean)
                )
            })
            .collect();
        let st = &self.storage;
        lines.push(format!(
            "storage bf_bytes={} header_bytes={} bitarray_bytes={} raw_vp_bytes_equivalent={}",
            st.bf_bytes, st.header_bytes, st.bitarray_bytes, st.raw_vp_bytes_equivalent
        ));
        if let Some(c) = &self.contention {
            lines.push(format!(
                "contention writers={} attempted={} committed={} conflicts={} failures={}",
                c.writers, c.attempted, c.committed, c.conflicts, c.failures
            ));
        }
        lines
    }
}

impl fmt::Display for BenchReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let ms = |d: Duration| d.as_secs_f64() * 1e3;
        writeln!(f, "{:<24} {:>6} {:>12} {:>12} {:>12}", "phase", "runs", "median ms", "p95 ms", "mean ms")?;
        for (name, s) in &self.phases {
            writeln!(
                f,
                "{:<24} {:>6} {:>12.4} {:>12.4} {:>12.4}",
                name,
                s.runs,
                ms(s.median),
                ms(s.p95),
                ms(s.mean)
            )?;
        }
        let st = &self.storage;
        writeln!(
            f,
            "storage: filter {} bytes ({} header + {} bit array), raw VPs {} bytes",
            st.bf_bytes, st.header_bytes, st.bitarray_bytes, st.raw_vp_bytes_equivalent
        )?;
        writeln!(f)?;
        for line in self.machine_lines() {
            writeln!(f, "{line}")?;
        }
        Ok(())
    }
}

fn open_ledger(choice: &LedgerChoice) -> Result<Arc<Ledger>> {
    Ok(Arc::new(match choice {
        LedgerChoice::Memory => Ledger::in_memory(),
        LedgerChoice::File(path) => Ledger::open(path)?,
    }))
}

struct Bench {
    server: AuthzServer,
    user: UserAttr,
    key: AuthKey,
    resource: Resource,
}

fn setup(ledger: Arc<dyn EventLedger>, name: &str) -> Result<Bench> {
    let server = AuthzServer::new(ServerConfig::default(), ledger)?;
    server.install_rules(&RuleSet::new(vec![AccessRule::parse_line("*;read,write;*")?]))?;
    let key = AuthKey::generate(format!("{name}-key"))?;
    let user = UserAttr::new(name, key.key_id.clone(), None)?;
    server.enroll(user.clone(), key.clone(), None)?;
    Ok(Bench {
        server,
        user,
        key,
        resource: Resource::new("bench-sensor", ResourceClass::Private)?,
    })
}

/// Measures the generation and verification phases over `config.runs`
/// iterations after `config.warmup` unmeasured ones.
pub fn run_bench(config: &BenchConfig) -> Result<BenchReport> {
    if config.runs < MIN_RUNS {
        return Err(Error::InvalidInput(format!("runs must be at least {MIN_RUNS}")));
    }
    if config.q == 0 || config.q > ServerConfig::default().sga_max {
        return Err(Error::InvalidInput(format!("q={} out of range", config.q)));
    }
    let ledger = open_ledger(&config.ledger)?;
    let b = setup(ledger, "bench")?;
    let nonce = b.server.issue_challenge(&b.user.user_id)?;
    let sid = b.server.open_session(&b.user.user_id, &key_proof_for(&b.key, &nonce))?.sid;

    let mut samples: Vec<Vec<Duration>> = vec![Vec::with_capacity(config.runs); PHASES.len()];
    let mut recent = Vec::new();
    for run in 0..config.warmup + config.runs {
        let measured = run >= config.warmup;

        let t = Instant::now();
        let (ts, timing) = b.server.issue_next(&b.user, Operation::Read, &b.resource, &b.key)?;
        let generation = t.elapsed();
        recent.push(gen_ga(&b.user, Operation::Read, &b.resource, ts).digest);
        let sga: Vec<_> = recent.iter().rev().take(config.q).copied().collect();

        let t = Instant::now();
        let bf = b
            .server
            .fetch_filter()?
            .ok_or_else(|| Error::LedgerUnavailable("no filter on ledger".into()))?;
        let fetch = t.elapsed();

        let t = Instant::now();
        let all_present = sga.iter().all(|ga| bf.check(&gen_vp(ga, &b.key)).is_present());
        let checking = t.elapsed();
        if !all_present {
            return Err(Error::RejectState("issued VP missing from the filter".into()));
        }

        let req = AccessRequest {
            user: b.user.clone(),
            sid,
            op: Operation::Read,
            resource: b.resource.clone(),
            sga,
        };
        let t = Instant::now();
        let (decision, _) = b.server.evaluate(&req)?;
        let verification = t.elapsed();
        if !decision.is_granted() {
            return Err(Error::RejectState(format!(
                "benchmark request denied: {}",
                decision.reason.as_str()
            )));
        }

        if measured {
            for (slot, d) in samples.iter_mut().zip([
                timing.compute,
                timing.insert,
                timing.store,
                generation,
                fetch,
                checking,
                verification,
            ]) {
                slot.push(d);
            }
        }
    }

    let contention = match config.parallel_clients {
        0 => None,
        n => Some(run_contention(n, config.runs, &config.ledger)?),
    };
    Ok(BenchReport {
        phases: PHASES
            .iter()
            .zip(&samples)
            .map(|(name, s)| (*name, PhaseStats::from_samples(s)))
            .collect(),
        storage: StorageReport::for_params(&BloomParams::default_params()),
        contention,
    })
}

/// Several servers share one ledger and issue grants concurrently, so their
/// filter appends race and go through the conflict/retry path.
pub fn run_contention(writers: usize, per_writer: usize, choice: &LedgerChoice) -> Result<ContentionReport> {
    let ledger = match choice {
        LedgerChoice::Memory => open_ledger(choice)?,
        LedgerChoice::File(path) => {
            let mut p = path.clone().into_os_string();
            p.push(".contention");
            let p = PathBuf::from(p);
            if p.exists() {
                std::fs::remove_file(&p)?;
            }
            open_ledger(&LedgerChoice::File(p))?
        }
    };
    let benches: Vec<Bench> = (0..writers)
        .map(|i| setup(ledger.clone(), &format!("writer-{i}")))
        .collect::<Result<_>>()?;
    let conflicts_before = ledger.conflicts();
    let results: Vec<(usize, usize)> = thread::scope(|s| {
        let handles: Vec<_> = benches
            .iter()
            .map(|b| {
                s.spawn(move || {
                    let mut ok = 0;
                    let mut failed = 0;
                    for _ in 0..per_writer {
                        match b.server.issue_next(&b.user, Operation::Write, &b.resource, &b.key) {
                            Ok(_) => ok += 1,
                            Err(_) => failed += 1,
                        }
                    }
                    (ok, failed)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap_or((0, per_writer))).collect()
    });
    Ok(ContentionReport {
        writers,
        attempted: writers * per_writer,
        committed: results.iter().map(|r| r.0).sum(),
        conflicts: ledger.conflicts() - conflicts_before,
        failures: results.iter().map(|r| r.1).sum(),
    })
}

fn random_vps(rng: &mut ChaCha20Rng, n: usize) -> Vec<VerificationPoint> {
    (0..n)
        .map(|_| VerificationPoint { digest: rng.random() })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FprReport {
    pub members: usize,
    pub probes: usize,
    pub present: usize,
    pub rate: f64,
}

/// Inserts `n_members` random VPs into a default filter and probes
/// `n_probes` fresh random ones.
pub fn run_fpr_probe(n_members: usize, n_probes: usize, seed: u64) -> Result<FprReport> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut bf = BloomFilter::with_params(BloomParams::default_params());
    let members = random_vps(&mut rng, n_members);
    for vp in &members {
        bf.insert(vp)?;
    }
    let member_set: std::collections::HashSet<_> = members.iter().map(|v| v.digest).collect();
    let mut present = 0;
    let mut probes = 0;
    while probes < n_probes {
        let vp = VerificationPoint { digest: rng.random() };
        if member_set.contains(&vp.digest) {
            continue;
        }
        probes += 1;
        if bf.check(&vp).is_present() {
            present += 1;
        }
    }
    Ok(FprReport {
        members: n_members,
        probes,
        present,
        rate: if probes == 0 { 0.0 } else { present as f64 / probes as f64 },
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstancyReport {
    pub small_load: usize,
    pub large_load: usize,
    pub probes: usize,
    pub small_median: Duration,
    pub large_median: Duration,
}

impl ConstancyReport {
    pub fn ratio(&self) -> f64 {
        self.large_median.as_secs_f64() / self.small_median.as_secs_f64().max(1e-12)
    }
}

const CHECKS_PER_SAMPLE: u32 = 16;

fn check_sample(bf: &BloomFilter, members: &[VerificationPoint], start: usize) -> Duration {
    let t = Instant::now();
    for i in 0..CHECKS_PER_SAMPLE as usize {
        let vp = &members[(start + i) % members.len()];
        black_box(bf.check(black_box(vp)));
    }
    t.elapsed() / CHECKS_PER_SAMPLE
}

/// Median per-check latency for members of a filter holding `small_load`
/// versus `large_load` VPs. Samples alternate between the two filters so
/// drift in machine load affects both equally; each sample averages a short
/// batch of checks to stay above timer resolution.
pub fn run_constancy(small_load: usize, large_load: usize, probes: usize, seed: u64) -> Result<ConstancyReport> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let build = |rng: &mut ChaCha20Rng, n: usize| -> Result<(BloomFilter, Vec<VerificationPoint>)> {
        let mut bf = BloomFilter::with_params(BloomParams::default_params());
        let vps = random_vps(rng, n.max(1));
        for vp in &vps[..n.min(vps.len())] {
            bf.insert(vp)?;
        }
        Ok((bf, vps))
    };
    let (small_bf, small_vps) = build(&mut rng, small_load)?;
    let (large_bf, large_vps) = build(&mut rng, large_load)?;
    for i in 0..probes / 10 {
        check_sample(&small_bf, &small_vps, i);
        check_sample(&large_bf, &large_vps, i);
    }
    let mut small = Vec::with_capacity(probes);
    let mut large = Vec::with_capacity(probes);
    for i in 0..probes {
        let offset = i * CHECKS_PER_SAMPLE as usize;
        if i % 2 == 0 {
            small.push(check_sample(&small_bf, &small_vps, offset));
            large.push(check_sample(&large_bf, &large_vps, offset));
        } else {
            large.push(check_sample(&large_bf, &large_vps, offset));
            small.push(check_sample(&small_bf, &small_vps, offset));
        }
    }
    Ok(ConstancyReport {
        small_load,
        large_load,
        probes,
        small_median: PhaseStats::from_samples(&small).median,
        large_median: PhaseStats::from_samples(&large).median,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stats_nearest_rank() {
        let samples: Vec<Duration> = (1..=100).map(Duration::from_micros).collect();
        let s = PhaseStats::from_samples(&samples);
        assert_eq!(s.median, Duration::from_micros(50));
        assert_eq!(s.p95, Duration::from_micros(95));
        assert_eq!(s.mean, Duration::from_nanos(50_500));
        let one = PhaseStats::from_samples(&[Duration::from_millis(3)]);
        assert_eq!(one.median, Duration::from_millis(3));
        assert_eq!(one.p95, Duration::from_millis(3));
        assert_eq!(one.mean, Duration::from_millis(3));
    }

    #[test]
    fn default_storage_figures() {
        let s = StorageReport::for_params(&BloomParams::default_params());
        assert_eq!(
            (s.bf_bytes, s.header_bytes, s.bitarray_bytes, s.raw_vp_bytes_equivalent),
            (1255, 56, 1199, 32000)
        );
    }

    #[test]
    fn bench_has_all_phases() {
        let report = run_bench(&BenchConfig::default()).unwrap();
        let names: Vec<_> = report.phases.iter().map(|(n, _)| *n).collect();
        assert_eq!(names, PHASES);
        let gen = |n| report.phase(n).unwrap().runs;
        assert!(PHASES.iter().all(|p| gen(p) == MIN_RUNS));
        assert_eq!(report.machine_lines().len(), 8);
    }

    #[test]
    fn generation_total_covers_its_parts() {
        let report = run_bench(&BenchConfig::default()).unwrap();
        let mean = |n| report.phase(n).unwrap().mean;
        assert!(mean("vp_generation_total") >= mean("vp_computation") + mean("vp_insertion"));
    }

    #[test]
    fn too_few_runs_rejected() {
        let cfg = BenchConfig {
            runs: 10,
            ..BenchConfig::default()
        };
        assert!(run_bench(&cfg).is_err());
    }

    #[test]
    fn empty_filter_has_no_false_positives() {
        let r = run_fpr_probe(0, 2000, 1).unwrap();
        assert_eq!((r.present, r.rate), (0, 0.0));
    }

    #[test]
    fn half_load_is_below_full_load() {
        let n = 50_000;
        let half = run_fpr_probe(500, n, 2).unwrap().rate;
        let full = run_fpr_probe(1000, n, 3).unwrap().rate;
        // three standard errors of the difference
        let se = ((half * (1.0 - half) + full * (1.0 - full)) / n as f64).sqrt();
        assert!(full - half > 3.0 * se, "half {half} full {full} se {se}");
    }

    #[test]
    fn contention_commits_every_grant() {
        let c = run_contention(4, 25, &LedgerChoice::Memory).unwrap();
        assert_eq!(c.committed + c.failures, 100);
        // every committed grant is one filter event on the shared ledger
        assert!(c.committed > 0);
    }
}
