//! Attack scenarios, microbenchmarks and false-positive probes.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mfaz::harness::{self, BenchConfig, LedgerChoice};

#[derive(Parser)]
#[command(name = "mfaz-bench", about = "MFAz attack suite and benchmarks")]
struct Args {
    /// Also write the report to this file.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the attack/legitimacy scenario suite.
    Scenarios {
        /// Suite file; the built-in suite when omitted.
        #[arg(long)]
        suite: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Time VP generation and verification phases.
    Bench {
        #[arg(long, default_value_t = harness::perf::MIN_RUNS)]
        runs: usize,
        #[arg(long, default_value_t = 1)]
        q: usize,
        /// Use a file-backed ledger at this path.
        #[arg(long)]
        ledger_file: Option<PathBuf>,
        /// Servers appending concurrently to one ledger (0 disables).
        #[arg(long, default_value_t = 0)]
        parallel: usize,
    },
    /// Measure the false-positive rate and check-latency constancy.
    Fpr {
        #[arg(long, default_value_t = 1000)]
        members: usize,
        #[arg(long, default_value_t = 10_000)]
        probes: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

fn run(args: Args) -> mfaz::Result<(String, bool)> {
    Ok(match args.cmd {
        Cmd::Scenarios { suite, seed } => {
            let text = match suite {
                Some(path) => std::fs::read_to_string(path)?,
                None => harness::DEFAULT_SUITE.to_owned(),
            };
            let report = harness::run_scenarios(&harness::parse_suite(&text)?, seed);
            (report.to_string(), report.all_passed())
        }
        Cmd::Bench {
            runs,
            q,
            ledger_file,
            parallel,
        } => {
            let cfg = BenchConfig {
                runs,
                q,
                ledger: ledger_file.map_or(LedgerChoice::Memory, LedgerChoice::File),
                parallel_clients: parallel,
                ..BenchConfig::default()
            };
            (harness::run_bench(&cfg)?.to_string(), true)
        }
        Cmd::Fpr {
            members,
            probes,
            seed,
        } => {
            let f = harness::run_fpr_probe(members, probes, seed)?;
            let c = harness::run_constancy(10, 900, 1000, seed)?;
            (
                format!(
                    "fpr members={} probes={} present={} rate={:.5}\n\
                     check_constancy small_load={} large_load={} probes={} \
                     small_median_ns={} large_median_ns={} ratio={:.3}\n",
                    f.members,
                    f.probes,
                    f.present,
                    f.rate,
                    c.small_load,
                    c.large_load,
                    c.probes,
                    c.small_median.as_nanos(),
                    c.large_median.as_nanos(),
                    c.ratio()
                ),
                true,
            )
        }
    })
}

fn main() -> ExitCode {
    env_logger::init();
    let args = Args::parse();
    let out = args.out.clone();
    match run(args) {
        Ok((report, ok)) => {
            print!("{report}");
            if let Some(path) = out {
                if let Err(e) = std::fs::write(&path, &report) {
                    eprintln!("mfaz-bench: cannot write {}: {e}", path.display());
                    return ExitCode::FAILURE;
                }
            }
            if ok {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("mfaz-bench: {e}");
            ExitCode::FAILURE
        }
    }
}
