//! Experiment orchestration: dataset ingestion, policy/hyperparameter
//! sweeps with per-instance scoring, and the analysis reports (optimal
//! temperature histogram, teacher-forced entropy density). All outputs are
//! plot-ready CSV/JSON with deterministic bytes for a given seed.

mod dataset;
mod reports;
mod sweep;

pub use dataset::{load_dataset, parse_dataset, DatasetError, DatasetRecord, Task};
pub use reports::{
    entropy_density_report, fixed_width_histogram, optimal_temperature_histogram,
    EntropyDensityReport, HistogramBin, OptimalTemperatureReport,
};
pub use sweep::{
    best_eda_table, run_sweep, run_sweep_prepared, BestRow, HarnessError, InstanceScore,
    PolicyGrid, SweepConfig, SweepFailure, SweepMetadata, SweepOutput, TradeoffPoint,
};

/// Lowercase hex SHA-256, used to fingerprint model and dataset files in
/// sweep metadata.
pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}
