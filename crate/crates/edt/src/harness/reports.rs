//! Analysis reports: per-instance optimal-temperature histogram over a
//! fixed-T grid, and teacher-forced entropy density samples.

use std::path::Path;

use crate::decode::teacher_force_entropies;
use crate::harness::dataset::DatasetRecord;
use crate::harness::sweep::{evaluate_matrix, HarnessError, SweepConfig, SweepFailure};
use crate::ngram::NGramModel;
use crate::sampling::PolicyKind;

/// One histogram bin; `low == high` marks a discrete bin (a single grid
/// temperature).
#[derive(Debug, Clone, PartialEq)]
pub struct HistogramBin {
    pub low: f64,
    pub high: f64,
    pub count: usize,
}

fn bins_csv(bins: &[HistogramBin]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["bin_low", "bin_high", "count"])
        .expect("csv into memory");
    for b in bins {
        w.write_record([b.low.to_string(), b.high.to_string(), b.count.to_string()])
            .expect("csv into memory");
    }
    String::from_utf8(w.into_inner().expect("csv into memory")).expect("csv is utf-8")
}

fn raw_csv(values: &[f64]) -> String {
    let mut out = String::from("value\n");
    for v in values {
        out.push_str(&v.to_string());
        out.push('\n');
    }
    out
}

/// Fixed-width histogram over `[low, high]`: right-open bins except the last,
/// which is closed so the upper bound lands inside. Out-of-range values clamp
/// to the edge bins.
pub fn fixed_width_histogram(
    values: &[f64],
    low: f64,
    high: f64,
    bins: usize,
) -> Vec<HistogramBin> {
    assert!(bins >= 1, "at least one bin");
    assert!(high > low, "bin range must be non-empty");
    let width = (high - low) / bins as f64;
    let mut out: Vec<HistogramBin> = (0..bins)
        .map(|i| HistogramBin {
            low: low + i as f64 * width,
            high: if i + 1 == bins {
                high
            } else {
                low + (i + 1) as f64 * width
            },
            count: 0,
        })
        .collect();
    for &v in values {
        let idx = if v <= low {
            0
        } else {
            (((v - low) / width) as usize).min(bins - 1)
        };
        out[idx].count += 1;
    }
    out
}

/// Per-instance winner of a fixed-temperature grid: the grid temperature
/// with the highest mean quality, ties resolved toward the lowest
/// temperature.
#[derive(Debug, Clone)]
pub struct OptimalTemperatureReport {
    /// One bin per grid temperature (ascending), `low == high == T`.
    pub bins: Vec<HistogramBin>,
    /// (instance id, winning temperature), in dataset order; failed
    /// instances are absent.
    pub per_instance_best: Vec<(String, f64)>,
    pub failures: Vec<SweepFailure>,
}

impl OptimalTemperatureReport {
    pub fn histogram_csv(&self) -> String {
        bins_csv(&self.bins)
    }

    pub fn write_to_dir(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("optimal_temperature.csv"), self.histogram_csv())
    }
}

/// Evaluates a fixed-T grid per instance and histograms where the quality
/// optimum lands. The config's policies must all be `fixed` blocks.
pub fn optimal_temperature_histogram(
    model: &NGramModel,
    records: &[DatasetRecord],
    config: &SweepConfig,
    jobs: usize,
) -> Result<OptimalTemperatureReport, HarnessError> {
    let grid = config.grid()?;
    if grid.iter().any(|p| p.kind != PolicyKind::Fixed) {
        return Err(HarnessError::InvalidConfig(
            "optimal-temperature analysis needs an all-fixed temperature grid".to_owned(),
        ));
    }
    let mut temperatures: Vec<f64> = grid.iter().map(|p| p.t0).collect();
    let matrix = evaluate_matrix(model, records, &grid, config, jobs)?;

    // Bin per unique temperature, ascending.
    temperatures.sort_by(f64::total_cmp);
    temperatures.dedup();
    let mut bins: Vec<HistogramBin> = temperatures
        .iter()
        .map(|&t| HistogramBin {
            low: t,
            high: t,
            count: 0,
        })
        .collect();

    let mut per_instance_best = Vec::new();
    let mut failures = Vec::new();
    for (i, record) in records.iter().enumerate() {
        let mut failed = false;
        let mut best: Option<(f64, f64)> = None; // (temperature, quality)
        for (g, policy) in grid.iter().enumerate() {
            match &matrix[g][i] {
                Ok(outcome) => {
                    let candidate = (policy.t0, outcome.quality);
                    best = Some(match best {
                        None => candidate,
                        Some(current) => {
                            // Strictly better quality wins; ties keep the
                            // lower temperature.
                            if candidate.1 > current.1
                                || (candidate.1 == current.1 && candidate.0 < current.0)
                            {
                                candidate
                            } else {
                                current
                            }
                        }
                    });
                }
                Err(error) => {
                    failed = true;
                    failures.push(SweepFailure {
                        grid_index: g,
                        instance_id: record.id.clone(),
                        error: error.clone(),
                    });
                }
            }
        }
        if failed {
            continue;
        }
        let (t, _) = best.expect("non-empty grid");
        let bin = bins
            .iter_mut()
            .find(|b| b.low == t)
            .expect("winning temperature is a grid temperature");
        bin.count += 1;
        per_instance_best.push((record.id.clone(), t));
    }

    Ok(OptimalTemperatureReport {
        bins,
        per_instance_best,
        failures,
    })
}

/// Teacher-forced entropy samples: one value per reference position, plus
/// the first-position subset, with fixed-width density bins over
/// `[0, ln V]`.
#[derive(Debug, Clone)]
pub struct EntropyDensityReport {
    /// Entropy of the first reference position, one per instance.
    pub first_token: Vec<f64>,
    /// Entropy of every reference position, instance-major.
    pub all_tokens: Vec<f64>,
    pub first_hist: Vec<HistogramBin>,
    pub all_hist: Vec<HistogramBin>,
}

impl EntropyDensityReport {
    pub fn write_to_dir(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(
            dir.join("entropy_first_token_raw.csv"),
            raw_csv(&self.first_token),
        )?;
        std::fs::write(
            dir.join("entropy_all_tokens_raw.csv"),
            raw_csv(&self.all_tokens),
        )?;
        std::fs::write(
            dir.join("entropy_first_token_hist.csv"),
            bins_csv(&self.first_hist),
        )?;
        std::fs::write(
            dir.join("entropy_all_tokens_hist.csv"),
            bins_csv(&self.all_hist),
        )?;
        Ok(())
    }
}

/// Teacher-forces every record's reference through the model and collects
/// the per-position base-distribution entropies.
pub fn entropy_density_report(
    model: &NGramModel,
    records: &[DatasetRecord],
    bins: usize,
) -> Result<EntropyDensityReport, HarnessError> {
    let mut first_token = Vec::with_capacity(records.len());
    let mut all_tokens = Vec::new();
    for record in records {
        let prompt = model.encode(&record.input);
        let reference = model.encode(&record.reference);
        let entropies = teacher_force_entropies(model, &prompt, &reference)
            .map_err(|e| HarnessError::InvalidConfig(format!("record {}: {e}", record.id)))?;
        first_token.push(entropies[0]);
        all_tokens.extend(entropies);
    }
    let max_entropy = (model.vocab().len() as f64).ln();
    let first_hist = fixed_width_histogram(&first_token, 0.0, max_entropy, bins);
    let all_hist = fixed_width_histogram(&all_tokens, 0.0, max_entropy, bins);
    Ok(EntropyDensityReport {
        first_token,
        all_tokens,
        first_hist,
        all_hist,
    })
}
