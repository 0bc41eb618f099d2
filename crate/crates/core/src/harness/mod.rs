//! Instance generation, cross-algorithm benchmarks, strategy sweeps and
//! CSV/JSON emission.

pub mod bench;
pub mod generator;
pub mod report;
pub mod sweep;

pub use bench::{run_algorithm, run_benchmark, Algorithm, BenchRow, BenchSettings, BenchmarkReport, EstimateChoice};
pub use generator::{generate_instance, random_suite, GenMode, GenSpec};
pub use report::{write_benchmark_csv, write_stack_csv, write_sweep_csv, write_json};
pub use sweep::{profit_sweep, true_profit, OpponentProfile, SweepCurve, SweepRow, SweepSpec};

/// Worker count from `ZC_THREADS`, if set to a positive integer.
pub fn env_threads() -> Option<usize> {
    std::env::var("ZC_THREADS").ok()?.trim().parse().ok().filter(|&n| n > 0)
}
