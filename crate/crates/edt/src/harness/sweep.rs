//! Policy sweeps: expand hyperparameter grids, decode and score every
//! (grid point, instance) pair, and aggregate quality/diversity trade-off
//! tables with per-sweep EDA normalization.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decode::{decode_k, derive_seed, DecodeRequest};
use crate::harness::dataset::{parse_dataset, DatasetError, DatasetRecord, Task};
use crate::harness::sha256_hex;
use crate::metrics::{
    eda, eda_range, normalize_tokens, rouge_l_f1, self_bleu, sentence_bleu, MetricsError,
    SweepNormalizers,
};
use crate::ngram::{LoadError, NGramModel, EOS};
use crate::sampling::{PolicyKind, SamplingError, TemperaturePolicy};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid sweep config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] LoadError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Policy(#[from] SamplingError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("thread pool: {0}")]
    ThreadPool(String),
}

/// Grid block for one policy kind. `fixed` expands over `t0` alone,
/// the confidence schedules over `t0 x theta`, and `kld` over `t0 x sigma`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolicyGrid {
    pub kind: PolicyKind,
    pub t0: Vec<f64>,
    #[serde(default)]
    pub theta: Vec<f64>,
    #[serde(default)]
    pub sigma: Vec<f64>,
}

fn default_k_samples() -> usize {
    5
}

fn default_top_p() -> f64 {
    crate::sampling::DEFAULT_TOP_P
}

fn default_n_base() -> f64 {
    crate::sampling::DEFAULT_N_BASE
}

/// Sweep description, loadable from JSON. Paths are resolved relative to the
/// process working directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepConfig {
    pub model: PathBuf,
    pub dataset: PathBuf,
    pub task: Task,
    pub seed: u64,
    #[serde(default = "default_k_samples")]
    pub k_samples: usize,
    pub max_new_tokens: usize,
    #[serde(default = "default_top_p")]
    pub top_p: f64,
    #[serde(default = "default_n_base")]
    pub n_base: f64,
    pub policies: Vec<PolicyGrid>,
}

impl SweepConfig {
    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        serde_json::from_str(text).map_err(|e| HarnessError::InvalidConfig(e.to_string()))
    }

    pub fn from_json_path(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    /// Expands the policy blocks into the flat list of grid points, in block
    /// order, `t0`-major within a block.
    pub fn grid(&self) -> Result<Vec<TemperaturePolicy>, HarnessError> {
        let mut points = Vec::new();
        for block in &self.policies {
            if block.t0.is_empty() {
                return Err(HarnessError::InvalidConfig(format!(
                    "policy block '{}' has an empty t0 grid",
                    block.kind
                )));
            }
            match block.kind {
                PolicyKind::Fixed => {
                    for &t0 in &block.t0 {
                        points.push(self.finish(TemperaturePolicy::fixed(t0)));
                    }
                }
                PolicyKind::Edt | PolicyKind::InstanceEdt | PolicyKind::Udt => {
                    if block.theta.is_empty() {
                        return Err(HarnessError::InvalidConfig(format!(
                            "policy block '{}' needs a theta grid",
                            block.kind
                        )));
                    }
                    for &t0 in &block.t0 {
                        for &theta in &block.theta {
                            let p = match block.kind {
                                PolicyKind::Edt => TemperaturePolicy::edt(t0, theta),
                                PolicyKind::InstanceEdt => {
                                    TemperaturePolicy::instance_edt(t0, theta)
                                }
                                _ => TemperaturePolicy::udt(t0, theta),
                            };
                            points.push(self.finish(p));
                        }
                    }
                }
                PolicyKind::Kld => {
                    if block.sigma.is_empty() {
                        return Err(HarnessError::InvalidConfig(format!(
                            "policy block '{}' needs a sigma grid",
                            block.kind
                        )));
                    }
                    for &t0 in &block.t0 {
                        for &sigma in &block.sigma {
                            points.push(self.finish(TemperaturePolicy::kld(t0, sigma)));
                        }
                    }
                }
            }
        }
        if points.is_empty() {
            return Err(HarnessError::InvalidConfig(
                "sweep grid is empty".to_owned(),
            ));
        }
        for p in &points {
            p.validate()?;
        }
        Ok(points)
    }

    fn finish(&self, policy: TemperaturePolicy) -> TemperaturePolicy {
        policy.with_top_p(self.top_p).with_n_base(self.n_base)
    }

    fn validate(&self) -> Result<(), HarnessError> {
        if self.k_samples < 2 {
            return Err(HarnessError::InvalidConfig(format!(
                "k_samples must be >= 2 so self-BLEU is defined, got {}",
                self.k_samples
            )));
        }
        if self.max_new_tokens == 0 {
            return Err(HarnessError::InvalidConfig(
                "max_new_tokens must be >= 1".to_owned(),
            ));
        }
        Ok(())
    }
}

/// One aggregated sweep row: a grid point with its mean quality, mean
/// Self-BLEU, and composite scores.
#[derive(Debug, Clone)]
pub struct TradeoffPoint {
    pub policy: TemperaturePolicy,
    pub mean_quality: f64,
    pub mean_self_bleu: f64,
    pub eda: Option<f64>,
    pub eda_range: Option<f64>,
    pub n_instances: usize,
}

/// One (instance, grid point) score row.
#[derive(Debug, Clone)]
pub struct InstanceScore {
    pub instance_id: String,
    pub policy: TemperaturePolicy,
    pub quality: f64,
    pub self_bleu: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepFailure {
    pub grid_index: usize,
    pub instance_id: String,
    pub error: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepMetadata {
    pub seed: u64,
    pub normalizers: Option<SweepNormalizers>,
    pub model_hash: String,
    pub dataset_hash: String,
    pub tool_version: String,
    pub failures: usize,
}

#[derive(Debug, Clone)]
pub struct SweepOutput {
    pub points: Vec<TradeoffPoint>,
    pub instances: Vec<InstanceScore>,
    pub normalizers: Option<SweepNormalizers>,
    pub metadata: SweepMetadata,
    pub failures: Vec<SweepFailure>,
}

/// Task-dependent quality score in [0, 100]: smoothed BLEU for translation,
/// ROUGE-L F1 x 100 otherwise.
pub(crate) fn quality_score(task: Task, sample: &[String], reference: &[String]) -> f64 {
    match task {
        Task::Translation => {
            let refs: [&[String]; 1] = [reference];
            sentence_bleu(sample, &refs).expect("one reference is always present")
        }
        _ => 100.0 * rouge_l_f1(sample, reference),
    }
}

pub(crate) struct InstanceOutcome {
    pub quality: f64,
    pub self_bleu: f64,
}

/// Decodes and scores one (grid point, instance) pair. The per-instance seed
/// depends only on the sweep seed and the instance index, so every grid
/// point sees the same random streams.
pub(crate) fn evaluate_instance(
    model: &NGramModel,
    record: &DatasetRecord,
    policy: TemperaturePolicy,
    seed: u64,
    instance_index: usize,
    k_samples: usize,
    max_new_tokens: usize,
) -> Result<InstanceOutcome, String> {
    let request = DecodeRequest {
        prompt: model.encode(&record.input),
        policy,
        max_new_tokens,
        eos_token: EOS,
        seed: derive_seed(seed, instance_index as u64),
    };
    let results = decode_k(model, &request, k_samples).map_err(|e| e.to_string())?;
    let reference = normalize_tokens(&record.reference);
    let samples: Vec<Vec<String>> = results
        .iter()
        .map(|r| normalize_tokens(&model.decode_text(&r.tokens)))
        .collect();

    let quality = samples
        .iter()
        .map(|s| quality_score(record.task, s, &reference))
        .sum::<f64>()
        / samples.len() as f64;
    let diversity = self_bleu(&samples).map_err(|e| e.to_string())?;
    Ok(InstanceOutcome {
        quality,
        self_bleu: diversity,
    })
}

/// Evaluates every (grid point, instance) pair, optionally across a thread
/// pool. The output is indexed `[grid][instance]` regardless of completion
/// order.
pub(crate) fn evaluate_matrix(
    model: &NGramModel,
    records: &[DatasetRecord],
    grid: &[TemperaturePolicy],
    config: &SweepConfig,
    jobs: usize,
) -> Result<Vec<Vec<Result<InstanceOutcome, String>>>, HarnessError> {
    let tasks: Vec<(usize, usize)> = (0..grid.len())
        .flat_map(|g| (0..records.len()).map(move |i| (g, i)))
        .collect();

    let evaluate = |&(g, i): &(usize, usize)| {
        evaluate_instance(
            model,
            &records[i],
            grid[g],
            config.seed,
            i,
            config.k_samples,
            config.max_new_tokens,
        )
    };

    let flat: Vec<Result<InstanceOutcome, String>> = if jobs <= 1 {
        tasks.iter().map(evaluate).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| HarnessError::ThreadPool(e.to_string()))?;
        pool.install(|| tasks.par_iter().map(evaluate).collect())
    };

    let mut matrix: Vec<Vec<Result<InstanceOutcome, String>>> = Vec::with_capacity(grid.len());
    let mut it = flat.into_iter();
    for _ in 0..grid.len() {
        matrix.push(it.by_ref().take(records.len()).collect());
    }
    Ok(matrix)
}

/// Runs a sweep against an already loaded model and dataset. `model_hash`
/// and `dataset_hash` are recorded verbatim in the metadata.
pub fn run_sweep_prepared(
    model: &NGramModel,
    records: &[DatasetRecord],
    config: &SweepConfig,
    jobs: usize,
    model_hash: String,
    dataset_hash: String,
) -> Result<SweepOutput, HarnessError> {
    config.validate()?;
    let grid = config.grid()?;
    let matrix = evaluate_matrix(model, records, &grid, config, jobs)?;

    let mut points = Vec::with_capacity(grid.len());
    let mut instances = Vec::new();
    let mut failures = Vec::new();
    for (g, policy) in grid.iter().enumerate() {
        let mut quality_sum = 0.0;
        let mut diversity_sum = 0.0;
        let mut n = 0usize;
        for (i, outcome) in matrix[g].iter().enumerate() {
            match outcome {
                Ok(outcome) => {
                    instances.push(InstanceScore {
                        instance_id: records[i].id.clone(),
                        policy: *policy,
                        quality: outcome.quality,
                        self_bleu: outcome.self_bleu,
                    });
                    quality_sum += outcome.quality;
                    diversity_sum += outcome.self_bleu;
                    n += 1;
                }
                Err(error) => failures.push(SweepFailure {
                    grid_index: g,
                    instance_id: records[i].id.clone(),
                    error: error.clone(),
                }),
            }
        }
        let (mean_quality, mean_self_bleu) = if n > 0 {
            (quality_sum / n as f64, diversity_sum / n as f64)
        } else {
            (f64::NAN, f64::NAN)
        };
        points.push(TradeoffPoint {
            policy: *policy,
            mean_quality,
            mean_self_bleu,
            eda: None,
            eda_range: None,
            n_instances: n,
        });
    }

    let normalizers = compute_normalizers(&points);
    if let Some(norms) = &normalizers {
        for point in &mut points {
            if point.n_instances == 0 {
                continue;
            }
            point.eda = eda(point.mean_quality, point.mean_self_bleu, norms).ok();
            point.eda_range = eda_range(point.mean_quality, point.mean_self_bleu, norms).ok();
        }
    }

    let metadata = SweepMetadata {
        seed: config.seed,
        normalizers,
        model_hash,
        dataset_hash,
        tool_version: env!("CARGO_PKG_VERSION").to_owned(),
        failures: failures.len(),
    };

    Ok(SweepOutput {
        points,
        instances,
        normalizers,
        metadata,
        failures,
    })
}

/// Loads the model and dataset named by the config and runs the sweep.
pub fn run_sweep(config: &SweepConfig, jobs: usize) -> Result<SweepOutput, HarnessError> {
    let model_bytes = std::fs::read(&config.model).map_err(|source| HarnessError::Io {
        path: config.model.display().to_string(),
        source,
    })?;
    let model = NGramModel::load(&model_bytes).map_err(LoadError::from)?;
    let dataset_text =
        std::fs::read_to_string(&config.dataset).map_err(|source| HarnessError::Io {
            path: config.dataset.display().to_string(),
            source,
        })?;
    let records = parse_dataset(&dataset_text, config.task)?;
    run_sweep_prepared(
        &model,
        &records,
        config,
        jobs,
        sha256_hex(&model_bytes),
        sha256_hex(dataset_text.as_bytes()),
    )
}

/// Per-sweep min/max of the point means; `None` until at least one grid
/// point scored successfully.
fn compute_normalizers(points: &[TradeoffPoint]) -> Option<SweepNormalizers> {
    let scored: Vec<&TradeoffPoint> = points.iter().filter(|p| p.n_instances > 0).collect();
    if scored.is_empty() {
        return None;
    }
    let mut norms = SweepNormalizers {
        q_max: f64::NEG_INFINITY,
        q_min: f64::INFINITY,
        d_max: f64::NEG_INFINITY,
        d_min: f64::INFINITY,
    };
    for p in scored {
        norms.q_max = norms.q_max.max(p.mean_quality);
        norms.q_min = norms.q_min.min(p.mean_quality);
        norms.d_max = norms.d_max.max(p.mean_self_bleu);
        norms.d_min = norms.d_min.min(p.mean_self_bleu);
    }
    Some(norms)
}

/// Best (lowest) EDA and EDA_range per policy kind. The two minima may come
/// from different grid points.
#[derive(Debug, Clone)]
pub struct BestRow {
    pub kind: PolicyKind,
    pub best_eda: Option<(f64, TemperaturePolicy)>,
    pub best_eda_range: Option<(f64, TemperaturePolicy)>,
}

pub fn best_eda_table(points: &[TradeoffPoint]) -> Vec<BestRow> {
    let mut rows: Vec<BestRow> = Vec::new();
    for point in points {
        let kind = point.policy.kind;
        let row = match rows.iter_mut().find(|r| r.kind == kind) {
            Some(row) => row,
            None => {
                rows.push(BestRow {
                    kind,
                    best_eda: None,
                    best_eda_range: None,
                });
                rows.last_mut().unwrap()
            }
        };
        if let Some(e) = point.eda {
            if row.best_eda.is_none_or(|(best, _)| e < best) {
                row.best_eda = Some((e, point.policy));
            }
        }
        if let Some(e) = point.eda_range {
            if row.best_eda_range.is_none_or(|(best, _)| e < best) {
                row.best_eda_range = Some((e, point.policy));
            }
        }
    }
    rows
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn fmt_mean(v: f64, n_instances: usize) -> String {
    if n_instances == 0 {
        String::new()
    } else {
        v.to_string()
    }
}

impl SweepOutput {
    /// Trade-off table CSV, one row per grid point. Column order is part of
    /// the output contract.
    pub fn sweep_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "policy_kind",
            "t0",
            "theta",
            "sigma",
            "top_p",
            "mean_quality",
            "mean_self_bleu",
            "eda",
            "eda_range",
            "n_instances",
        ])
        .expect("csv into memory");
        for p in &self.points {
            w.write_record([
                p.policy.kind.to_string(),
                p.policy.t0.to_string(),
                p.policy.theta.to_string(),
                p.policy.sigma.to_string(),
                p.policy.top_p.to_string(),
                fmt_mean(p.mean_quality, p.n_instances),
                fmt_mean(p.mean_self_bleu, p.n_instances),
                fmt_opt(p.eda),
                fmt_opt(p.eda_range),
                p.n_instances.to_string(),
            ])
            .expect("csv into memory");
        }
        String::from_utf8(w.into_inner().expect("csv into memory")).expect("csv is utf-8")
    }

    /// Per-instance score CSV, ordered by (grid point, instance).
    pub fn instances_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "instance_id",
            "policy_kind",
            "t0",
            "theta",
            "sigma",
            "quality",
            "self_bleu",
        ])
        .expect("csv into memory");
        for r in &self.instances {
            w.write_record([
                r.instance_id.clone(),
                r.policy.kind.to_string(),
                r.policy.t0.to_string(),
                r.policy.theta.to_string(),
                r.policy.sigma.to_string(),
                r.quality.to_string(),
                r.self_bleu.to_string(),
            ])
            .expect("csv into memory");
        }
        String::from_utf8(w.into_inner().expect("csv into memory")).expect("csv is utf-8")
    }

    pub fn metadata_json(&self) -> String {
        let mut json = serde_json::to_string_pretty(&self.metadata).expect("metadata serializes");
        json.push('\n');
        json
    }

    /// Writes `sweep.csv`, `instances.csv` and `metadata.json` into `dir`.
    pub fn write_to_dir(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("sweep.csv"), self.sweep_csv())?;
        std::fs::write(dir.join("instances.csv"), self.instances_csv())?;
        std::fs::write(dir.join("metadata.json"), self.metadata_json())?;
        Ok(())
    }
}
