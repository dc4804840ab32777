//! `edt` command line: train the bundled n-gram model, decode under a
//! temperature policy, run sweeps, and emit analysis reports.
//!
//! All randomness flows from the explicit `--seed` values; the tool never
//! touches wall-clock time or OS entropy, so identical invocations produce
//! identical bytes.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use edt::harness::{
    best_eda_table, entropy_density_report, load_dataset, optimal_temperature_histogram, run_sweep,
    BestRow, SweepConfig, Task,
};
use edt::ngram::{NGramModel, TokenMode, EOS};
use edt::sampling::{PolicyKind, TemperaturePolicy};
use edt::{decode_k, DecodeRequest};

#[derive(Parser)]
#[command(
    name = "edt",
    version,
    about = "Entropy-guided dynamic temperature sampling toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train an n-gram language model from a line-per-record text corpus
    Train(TrainArgs),
    /// Generate from a trained model under a temperature policy
    Decode(DecodeArgs),
    /// Run a policy/hyperparameter sweep and write the trade-off tables
    Sweep(SweepArgs),
    /// Emit analysis reports
    #[command(subcommand)]
    Analyze(AnalyzeCommand),
}

#[derive(Args)]
struct TrainArgs {
    /// Corpus file; every non-empty line is one training record
    #[arg(long)]
    corpus: PathBuf,
    /// N-gram order, in [1, 6]
    #[arg(long, default_value_t = 3)]
    order: usize,
    /// Add-alpha smoothing strength
    #[arg(long, default_value_t = 1e-4)]
    alpha: f64,
    /// Tokenization: word or char
    #[arg(long, default_value = "word")]
    mode: TokenMode,
    /// Output model path
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DecodeArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    prompt: String,
    /// fixed | edt | instance-edt | udt | kld
    #[arg(long)]
    policy: PolicyKind,
    #[arg(long, default_value_t = 0.9)]
    t0: f64,
    #[arg(long, default_value_t = 0.0)]
    theta: f64,
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    #[arg(long, default_value_t = 0.8)]
    n_base: f64,
    #[arg(long, default_value_t = 0.95)]
    top_p: f64,
    /// Number of samples to generate
    #[arg(long, default_value_t = 1)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 32)]
    max_new_tokens: usize,
    /// Print the per-step (token, entropy, temperature) table
    #[arg(long)]
    trace: bool,
}

#[derive(Args)]
struct SweepArgs {
    /// Sweep config JSON; flags below override its fields
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    /// Worker threads for instance evaluation
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    task: Option<Task>,
    #[arg(long)]
    k_samples: Option<usize>,
    #[arg(long)]
    max_new_tokens: Option<usize>,
    #[arg(long)]
    top_p: Option<f64>,
}

#[derive(Subcommand)]
enum AnalyzeCommand {
    /// Histogram of the per-instance quality-optimal temperature over a
    /// fixed-T grid
    OptimalTemp(SweepArgs),
    /// Teacher-forced entropy samples and density bins
    EntropyDensity(EntropyDensityArgs),
}

#[derive(Args)]
struct EntropyDensityArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, default_value = "freeform")]
    task: Task,
    /// Number of fixed-width density bins
    #[arg(long, default_value_t = 40)]
    bins: usize,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

/// Die quietly when stdout closes early (`edt decode ... | head`), like any
/// other Unix tool.
#[cfg(unix)]
fn reset_sigpipe() {
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
}

#[cfg(not(unix))]
fn reset_sigpipe() {}

fn main() -> ExitCode {
    reset_sigpipe();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Decode(args) => cmd_decode(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Analyze(AnalyzeCommand::OptimalTemp(args)) => cmd_optimal_temp(args),
        Command::Analyze(AnalyzeCommand::EntropyDensity(args)) => cmd_entropy_density(args),
    };
    match result {
        Ok(code) => code,
        Err(message) => {
            eprintln!("error: {message}");
            ExitCode::FAILURE
        }
    }
}

fn cmd_train(args: TrainArgs) -> Result<ExitCode, String> {
    let text = std::fs::read_to_string(&args.corpus)
        .map_err(|e| format!("failed to read {}: {e}", args.corpus.display()))?;
    let records: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    let model = NGramModel::train(&records, args.order, args.alpha, args.mode)
        .map_err(|e| e.to_string())?;
    let bytes = model.save();
    std::fs::write(&args.out, &bytes)
        .map_err(|e| format!("failed to write {}: {e}", args.out.display()))?;
    println!(
        "trained order-{} {} model: vocabulary {}, {} bytes -> {}",
        model.order(),
        model.mode(),
        model.vocab().len(),
        bytes.len(),
        args.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn build_policy(args: &DecodeArgs) -> TemperaturePolicy {
    let base = match args.policy {
        PolicyKind::Fixed => TemperaturePolicy::fixed(args.t0),
        PolicyKind::Edt => TemperaturePolicy::edt(args.t0, args.theta),
        PolicyKind::InstanceEdt => TemperaturePolicy::instance_edt(args.t0, args.theta),
        PolicyKind::Udt => TemperaturePolicy::udt(args.t0, args.theta),
        PolicyKind::Kld => TemperaturePolicy::kld(args.t0, args.sigma),
    };
    base.with_top_p(args.top_p).with_n_base(args.n_base)
}

fn cmd_decode(args: DecodeArgs) -> Result<ExitCode, String> {
    let model = NGramModel::load_from_path(&args.model).map_err(|e| e.to_string())?;
    let policy = build_policy(&args);
    policy.validate().map_err(|e| e.to_string())?;
    let request = DecodeRequest {
        prompt: model.encode(&args.prompt),
        policy,
        max_new_tokens: args.max_new_tokens,
        eos_token: EOS,
        seed: args.seed,
    };
    let results = decode_k(&model, &request, args.k).map_err(|e| e.to_string())?;
    for (i, result) in results.iter().enumerate() {
        println!("[{}] {}", i + 1, model.decode_text(&result.tokens));
        if args.trace {
            println!("    step  token            entropy     temperature");
            for (s, step) in result.steps.iter().enumerate() {
                let token = model
                    .vocab()
                    .token(step.chosen_token)
                    .unwrap_or("<unk>")
                    .to_owned();
                println!(
                    "    {s:<5} {token:<16} {:<11.6} {:.6}",
                    step.entropy_nats, step.temperature
                );
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn load_config(args: &SweepArgs) -> Result<SweepConfig, String> {
    let mut config = SweepConfig::from_json_path(&args.config).map_err(|e| e.to_string())?;
    // Flags override config-file values.
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(model) = &args.model {
        config.model = model.clone();
    }
    if let Some(dataset) = &args.dataset {
        config.dataset = dataset.clone();
    }
    if let Some(task) = args.task {
        config.task = task;
    }
    if let Some(k) = args.k_samples {
        config.k_samples = k;
    }
    if let Some(m) = args.max_new_tokens {
        config.max_new_tokens = m;
    }
    if let Some(p) = args.top_p {
        config.top_p = p;
    }
    Ok(config)
}

fn print_best_table(rows: &[BestRow]) {
    println!(
        "{:<14} {:<28} {:<28}",
        "method", "best_eda", "best_eda_range"
    );
    for row in rows {
        let eda = row
            .best_eda
            .map(|(v, p)| format!("{v:.4} @ {}", p.describe()))
            .unwrap_or_else(|| "-".to_owned());
        let range = row
            .best_eda_range
            .map(|(v, p)| format!("{v:.4} @ {}", p.describe()))
            .unwrap_or_else(|| "-".to_owned());
        println!("{:<14} {eda:<28} {range:<28}", row.kind.to_string());
    }
}

fn cmd_sweep(args: SweepArgs) -> Result<ExitCode, String> {
    let config = load_config(&args)?;
    let output = run_sweep(&config, args.jobs.max(1)).map_err(|e| e.to_string())?;
    output
        .write_to_dir(&args.out_dir)
        .map_err(|e| format!("failed to write outputs to {}: {e}", args.out_dir.display()))?;
    if output.points.iter().any(|p| p.eda_range.is_none()) {
        eprintln!("warning: eda_range omitted for some rows (degenerate normalization range)");
    }
    print_best_table(&best_eda_table(&output.points));
    println!(
        "wrote sweep.csv, instances.csv, metadata.json to {}",
        args.out_dir.display()
    );
    if output.failures.is_empty() {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!(
            "{} of {} evaluations failed; see metadata",
            output.failures.len(),
            output.failures.len() + output.instances.len()
        );
        Ok(ExitCode::FAILURE)
    }
}

fn read_model_and_dataset(
    model_path: &Path,
    dataset_path: &Path,
    task: Task,
) -> Result<(NGramModel, Vec<edt::harness::DatasetRecord>), String> {
    let model = NGramModel::load_from_path(model_path).map_err(|e| e.to_string())?;
    let records = load_dataset(dataset_path, task).map_err(|e| e.to_string())?;
    Ok((model, records))
}

fn cmd_optimal_temp(args: SweepArgs) -> Result<ExitCode, String> {
    let config = load_config(&args)?;
    let (model, records) = read_model_and_dataset(&config.model, &config.dataset, config.task)?;
    let report = optimal_temperature_histogram(&model, &records, &config, args.jobs.max(1))
        .map_err(|e| e.to_string())?;
    report
        .write_to_dir(&args.out_dir)
        .map_err(|e| format!("failed to write outputs to {}: {e}", args.out_dir.display()))?;
    println!(
        "wrote optimal_temperature.csv to {} ({} instances binned)",
        args.out_dir.display(),
        report.per_instance_best.len()
    );
    if report.failures.is_empty() {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("{} evaluations failed", report.failures.len());
        Ok(ExitCode::FAILURE)
    }
}

fn cmd_entropy_density(args: EntropyDensityArgs) -> Result<ExitCode, String> {
    let (model, records) = read_model_and_dataset(&args.model, &args.dataset, args.task)?;
    let report = entropy_density_report(&model, &records, args.bins).map_err(|e| e.to_string())?;
    report
        .write_to_dir(&args.out_dir)
        .map_err(|e| format!("failed to write outputs to {}: {e}", args.out_dir.display()))?;
    println!(
        "wrote entropy density outputs to {} ({} first-token samples, {} total)",
        args.out_dir.display(),
        report.first_token.len(),
        report.all_tokens.len()
    );
    Ok(ExitCode::SUCCESS)
}
