//! Byte-for-byte comparisons against the frozen first verified run of the
//! bundled mini sweep and analysis reports (spot-audited in `bundled.rs`
//! before freezing).

use std::path::{Path, PathBuf};

use edt::harness::{
    best_eda_table, entropy_density_report, load_dataset, optimal_temperature_histogram, run_sweep,
    SweepConfig, Task,
};

fn asset(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../assets")
        .join(name)
}

fn golden(name: &str) -> String {
    let path = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/golden")
        .join(name);
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("missing golden {name}: {e}"))
}

fn mini_config() -> SweepConfig {
    let mut config =
        SweepConfig::from_json_path(&asset("sweep_mini.json")).expect("bundled mini config");
    config.model = asset("mini.nglm");
    config.dataset = asset("mini20.jsonl");
    config
}

#[test]
fn mini_sweep_outputs_match_golden_bytes() {
    let output = run_sweep(&mini_config(), 1).unwrap();
    assert_eq!(output.sweep_csv(), golden("mini_sweep/sweep.csv"));
    assert_eq!(output.instances_csv(), golden("mini_sweep/instances.csv"));
    assert_eq!(output.metadata_json(), golden("mini_sweep/metadata.json"));
}

#[test]
fn best_table_matches_independent_recomputation_from_golden_csv() {
    let output = run_sweep(&mini_config(), 1).unwrap();
    let table = best_eda_table(&output.points);
    assert_eq!(table.len(), 1);

    // Recompute the minima from the frozen CSV with plain string parsing.
    let csv = golden("mini_sweep/sweep.csv");
    let mut best_eda = f64::INFINITY;
    let mut best_range = f64::INFINITY;
    for line in csv.lines().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields[0], "fixed");
        if let Ok(v) = fields[7].parse::<f64>() {
            best_eda = best_eda.min(v);
        }
        if let Ok(v) = fields[8].parse::<f64>() {
            best_range = best_range.min(v);
        }
    }
    assert_eq!(table[0].best_eda.unwrap().0, best_eda);
    assert_eq!(table[0].best_eda_range.unwrap().0, best_range);
}

#[test]
fn optimal_temperature_histogram_matches_golden_bytes() {
    let config = mini_config();
    let model = edt::ngram::NGramModel::load_from_path(&config.model).unwrap();
    let records = load_dataset(&config.dataset, Task::Freeform).unwrap();
    let report = optimal_temperature_histogram(&model, &records, &config, 1).unwrap();
    assert_eq!(
        report.histogram_csv(),
        golden("mini_sweep/optimal_temperature.csv")
    );
}

#[test]
fn entropy_density_matches_golden_bytes() {
    let model = edt::ngram::NGramModel::load_from_path(&asset("mini.nglm")).unwrap();
    let records = load_dataset(&asset("mini20.jsonl"), Task::Freeform).unwrap();
    let report = entropy_density_report(&model, &records, 20).unwrap();

    let dir = tempfile::tempdir().unwrap();
    report.write_to_dir(dir.path()).unwrap();
    for name in [
        "entropy_first_token_raw.csv",
        "entropy_all_tokens_raw.csv",
        "entropy_first_token_hist.csv",
        "entropy_all_tokens_hist.csv",
    ] {
        let written = std::fs::read_to_string(dir.path().join(name)).unwrap();
        assert_eq!(
            written,
            golden(&format!("entropy/{name}")),
            "{name} drifted"
        );
    }
}
