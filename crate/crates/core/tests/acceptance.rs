//! Acceptance criteria. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

mod common;

use std::time::{Duration, Instant};

use mfaz::harness::{self, StorageReport};
use mfaz::{BloomFilter, BloomParams, VerificationPoint};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, u64, fn() -> Outcome);

fn ensure(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn bf_sizing() -> Outcome {
    let p = BloomParams::new(1000, 0.01).map_err(|e| e.to_string())?;
    let bf = BloomFilter::new(1000, 0.01).map_err(|e| e.to_string())?;
    let detail = format!("m={} k={}", p.bits, p.hashes);
    ensure(p.bits == 9585 && p.hashes == 7 && bf.params() == &p, detail)
}

fn storage() -> Outcome {
    let s = StorageReport::for_params(&BloomParams::default_params());
    let serialized = BloomFilter::new(1000, 0.01).map_err(|e| e.to_string())?.serialize().len();
    let detail = format!(
        "bf_bytes={} serialized={} header={} bitarray={} raw={}",
        s.bf_bytes, serialized, s.header_bytes, s.bitarray_bytes, s.raw_vp_bytes_equivalent
    );
    ensure(
        (s.bf_bytes, serialized, s.header_bytes, s.bitarray_bytes, s.raw_vp_bytes_equivalent)
            == (1255, 1255, 56, 1199, 32000),
        detail,
    )
}

fn security_accuracy() -> Outcome {
    let suite = harness::parse_suite(harness::DEFAULT_SUITE).map_err(|e| e.to_string())?;
    let names: Vec<&str> = suite.iter().map(|s| s.name.as_str()).collect();
    let count = |prefix: &str| names.iter().filter(|n| n.starts_with(prefix)).count();
    let shape = (count("conventional-bac"), count("hijack-"), count("legitimate-chain"));
    let report = harness::run_scenarios(&suite, 1);
    let detail = format!(
        "scenarios={} (bac={} hijack={} legit={}) passed={} false_grant_count={} false_deny_count={}",
        suite.len(),
        shape.0,
        shape.1,
        shape.2,
        report.outcomes.iter().filter(|o| o.passed).count(),
        report.false_grant_count,
        report.false_deny_count
    );
    ensure(
        shape == (2, 4, 2)
            && report.all_passed()
            && report.false_grant_count == 0
            && report.false_deny_count == 0,
        detail,
    )
}

fn fpr() -> Outcome {
    let r = harness::run_fpr_probe(1000, 100_000, 7).map_err(|e| e.to_string())?;
    ensure(
        r.probes >= 10_000 && r.rate <= 0.02,
        format!("members={} probes={} rate={:.5}", r.members, r.probes, r.rate),
    )
}

fn constancy() -> Outcome {
    let c = harness::run_constancy(10, 900, 2000, 11).map_err(|e| e.to_string())?;
    ensure(
        c.probes >= 1000 && c.ratio() <= 3.0,
        format!(
            "median@10={}ns median@900={}ns ratio={:.3}",
            c.small_median.as_nanos(),
            c.large_median.as_nanos(),
            c.ratio()
        ),
    )
}

fn oracle() -> Outcome {
    let r = common::toy_universe_oracle();
    let mut detail = format!("configurations={} mismatches={}", r.configurations, r.mismatches.len());
    if let Some(first) = r.mismatches.first() {
        detail.push_str(&format!(" first: {first}"));
    }
    ensure(r.configurations >= 96 && r.mismatches.is_empty(), detail)
}

fn no_false_negatives() -> Outcome {
    let mut rng = ChaCha20Rng::seed_from_u64(10_000);
    let mut bf = BloomFilter::new(1000, 0.01).map_err(|e| e.to_string())?;
    let mut absent = 0;
    for i in 0..10_000 {
        // fresh filter every 1000 pairs keeps it within its design capacity
        if i % 1000 == 0 {
            bf = BloomFilter::new(1000, 0.01).map_err(|e| e.to_string())?;
        }
        let vp = VerificationPoint { digest: rng.random() };
        bf.insert(&vp).map_err(|e| e.to_string())?;
        if !bf.check(&vp).is_present() {
            absent += 1;
        }
    }
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (detected, missed) = common::corruption_trials(dir.path(), 100, 77);
    ensure(
        absent == 0 && detected == 100,
        format!("pairs=10000 absent={absent} corruptions_detected={detected}/100 missed={missed:?}"),
    )
}

fn liveness() -> Outcome {
    let server = common::server_with_rules(common::TOY_RULES);
    let r = common::liveness(&server, &server, 100);
    let (agent_grants, agent_min) = common::agent_liveness(&server, &server, 100, 1);
    ensure(
        r.grants == 100 && r.min_vault >= 1 && r.failures.is_empty() && agent_grants == 100 && agent_min >= 1,
        format!(
            "chained_grants={} min_vault={} agent_grants={} agent_min_vault={} failures={:?}",
            r.grants, r.min_vault, agent_grants, agent_min, r.failures
        ),
    )
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("1 bf-sizing m=9585 k=7", 1, bf_sizing),
        ("2 storage 1255/56/1199/32000", 1, storage),
        ("3 attack-suite zero false grants/denies", 30, security_accuracy),
        ("4 fpr <= 0.02 at 1000 members", 30, fpr),
        ("5 check latency @900 <= 3x @10", 60, constancy),
        ("6 oracle equivalence over toy universe", 10, oracle),
        ("7 no false negatives + chain tamper detection", 60, no_false_negatives),
        ("8 end-to-end liveness 100 grants q=1", 60, liveness),
    ];
    let mut failed = 0;
    for (name, limit, check) in criteria {
        let t = Instant::now();
        let outcome = check();
        let elapsed = t.elapsed();
        let over = elapsed > Duration::from_secs(limit);
        let (ok, detail) = match outcome {
            Ok(d) if !over => (true, d),
            Ok(d) => (false, format!("{d}; exceeded {limit}s")),
            Err(d) => (false, d),
        };
        if !ok {
            failed += 1;
        }
        println!(
            "{} criterion {name}: {detail} [{:.2}s]",
            if ok { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64()
        );
    }
    println!("acceptance: {}/8 passed", 8 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
