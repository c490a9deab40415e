//! Attack scenarios, benchmarks and probes.

pub mod perf;
pub mod scenario;

pub use perf::{
    run_bench, run_constancy, run_contention, run_fpr_probe, BenchConfig, BenchReport,
    ConstancyReport, ContentionReport, FprReport, LedgerChoice, PhaseStats, StorageReport, PHASES,
};
pub use scenario::{parse_suite, run_scenario, run_scenarios, Scenario, SuiteReport, DEFAULT_SUITE};
