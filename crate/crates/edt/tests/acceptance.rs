//! Acceptance suite: one test per release criterion, each printing a
//! `criterion N PASS` line (run with `--nocapture` to see them).
//!
//! The suite leans on the bundled assets (corpus, model, datasets) so every
//! run is hermetic and byte-reproducible.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use edt::decode::{decode, DecodeRequest};
use edt::harness::{
    entropy_density_report, load_dataset, optimal_temperature_histogram, run_sweep, SweepConfig,
    Task,
};
use edt::metrics::{eda, eda_range, rouge_l_f1, self_bleu, sentence_bleu, SweepNormalizers};
use edt::ngram::{NGramModel, EOS};
use edt::sampling::{
    edt_temperature, kld_temperature, sample_token, softmax_with_temperature, top_p_filter,
    udt_temperature, CategoricalDistribution, LogitVector, TemperaturePolicy, MIN_TEMPERATURE,
};

fn asset(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../assets")
        .join(name)
}

fn bundled_model() -> NGramModel {
    NGramModel::load_from_path(&asset("mini.nglm")).expect("bundled model loads")
}

fn tradeoff_config() -> SweepConfig {
    let mut config =
        SweepConfig::from_json_path(&asset("sweep_tradeoff.json")).expect("bundled sweep config");
    // The bundled config uses repo-root-relative paths; pin them here.
    config.model = asset("mini.nglm");
    config.dataset = asset("mini100.jsonl");
    config
}

/// Independent schedule evaluation: same definition, different arithmetic
/// route (exp/ln instead of powf), clamp rule mirrored.
fn oracle_confidence(signal: f64, t0: f64, theta: f64, n_base: f64) -> f64 {
    if theta == 0.0 {
        return t0;
    }
    if signal == 0.0 {
        return 0.0;
    }
    let t = t0 * ((theta / signal) * n_base.ln()).exp();
    t.max(MIN_TEMPERATURE)
}

fn oracle_kld(kl: f64, t0: f64, sigma: f64) -> f64 {
    t0 * ((kl / sigma) * 0.5f64.ln()).exp()
}

fn relative_error(got: f64, want: f64) -> f64 {
    if want == 0.0 {
        got.abs()
    } else {
        (got - want).abs() / want.abs()
    }
}

#[test]
fn criterion_1_schedule_correctness() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xC1);
    for _ in 0..1000 {
        let t0 = rng.random_range(0.05..2.0);
        let n_base = rng.random_range(0.3..0.95);

        let theta = rng.random_range(0.01..5.0);
        let entropy = rng.random_range(1e-3..20.0);
        let edt_policy = TemperaturePolicy::edt(t0, theta).with_n_base(n_base);
        let got = edt_temperature(entropy, &edt_policy).unwrap();
        let want = oracle_confidence(entropy, t0, theta, n_base);
        assert!(
            relative_error(got, want) < 1e-10,
            "edt({entropy}, t0={t0}, theta={theta}, n={n_base}): {got} vs {want}"
        );

        let top1 = rng.random_range(0.0..1.0);
        let udt_policy = TemperaturePolicy::udt(t0, theta).with_n_base(n_base);
        let got = udt_temperature(top1, &udt_policy).unwrap();
        let want = oracle_confidence((1.0 - top1).sqrt(), t0, theta, n_base);
        assert!(
            relative_error(got, want) < 1e-10,
            "udt({top1}, t0={t0}, theta={theta}, n={n_base}): {got} vs {want}"
        );

        let sigma = rng.random_range(0.05..1e3);
        let kl = rng.random_range(0.0..100.0);
        let kld_policy = TemperaturePolicy::kld(t0, sigma);
        let got = kld_temperature(kl, &kld_policy).unwrap();
        let want = oracle_kld(kl, t0, sigma);
        assert!(
            relative_error(got, want) < 1e-10,
            "kld({kl}, t0={t0}, sigma={sigma}): {got} vs {want}"
        );

        // Half-life identity: KL == sigma gives exactly T0/2.
        let half = kld_temperature(sigma, &kld_policy).unwrap();
        assert!(
            (half - t0 / 2.0).abs() < 1e-12,
            "half-life at sigma={sigma}: {half} vs {}",
            t0 / 2.0
        );
    }
    let elapsed = start.elapsed();
    assert!(elapsed < Duration::from_secs(1), "took {elapsed:?}");
    println!(
        "criterion 1 PASS: schedules match the independent evaluation on 1000 tuples \
         within 1e-10 (half-life exact to 1e-12) in {elapsed:?}"
    );
}

#[test]
fn criterion_2_monotonicity_suite() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xC2);
    let mut checked = 0usize;
    for _ in 0..10_000 {
        // Ranges keep the schedule comfortably above the clamp so strict
        // comparisons are meaningful.
        let t0 = rng.random_range(0.2..1.5);
        let n_base = rng.random_range(0.5..0.95);
        let theta = rng.random_range(0.01..1.5);
        let entropy = rng.random_range(0.2..10.0);

        let policy = TemperaturePolicy::edt(t0, theta).with_n_base(n_base);
        let t_base = edt_temperature(entropy, &policy).unwrap();

        let delta_theta = rng.random_range(1e-3..1.0);
        let sharper = TemperaturePolicy::edt(t0, theta + delta_theta).with_n_base(n_base);
        let t_sharper = edt_temperature(entropy, &sharper).unwrap();
        assert!(
            t_sharper < t_base,
            "T must strictly decrease in theta: {t_base} -> {t_sharper}"
        );

        let delta_h = rng.random_range(1e-3..5.0);
        let t_higher_h = edt_temperature(entropy + delta_h, &policy).unwrap();
        assert!(
            t_higher_h > t_base,
            "T must strictly increase in entropy: {t_base} -> {t_higher_h}"
        );
        checked += 1;
    }
    assert_eq!(checked, 10_000);
    let elapsed = start.elapsed();
    assert!(elapsed < Duration::from_secs(1), "took {elapsed:?}");
    println!(
        "criterion 2 PASS: zero monotonicity violations over 10000 random pairs in {elapsed:?}"
    );
}

fn assert_frequencies(dist: &CategoricalDistribution, targets: &[f64], seed: u64, label: &str) {
    let n = 100_000usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counts = vec![0usize; targets.len()];
    for _ in 0..n {
        counts[sample_token(dist, &mut rng).unwrap() as usize] += 1;
    }
    for (i, &target) in targets.iter().enumerate() {
        let freq = counts[i] as f64 / n as f64;
        assert!(
            (freq - target).abs() < 0.01,
            "{label} token {i}: freq {freq} vs target {target}"
        );
    }
}

#[test]
fn criterion_3_sampling_oracle() {
    let start = Instant::now();

    let plain = CategoricalDistribution::new(vec![0.7, 0.2, 0.1]).unwrap();
    assert_frequencies(&plain, &[0.7, 0.2, 0.1], 0xC3, "plain");

    // Temperature-scaled: softmax(ln w / t) at t = 0.5 squares the weights.
    let weights = [0.5f64, 0.3, 0.2];
    let logits = LogitVector::new(weights.iter().map(|w| w.ln()).collect()).unwrap();
    let scaled = softmax_with_temperature(&logits, 0.5).unwrap();
    let squared_mass: f64 = weights.iter().map(|w| w * w).sum();
    let scaled_targets: Vec<f64> = weights.iter().map(|w| w * w / squared_mass).collect();
    for (got, want) in scaled.probs().iter().zip(&scaled_targets) {
        assert!((got - want).abs() < 1e-12);
    }
    assert_frequencies(&scaled, &scaled_targets, 0xC3 + 1, "temperature-scaled");

    // Top-p filtered: p = 0.7 keeps the first two tokens, renormalized.
    let base = CategoricalDistribution::new(vec![0.5, 0.3, 0.2]).unwrap();
    let filtered = top_p_filter(&base, 0.7).unwrap();
    let filtered_targets = [0.625, 0.375, 0.0];
    for (got, want) in filtered.probs().iter().zip(&filtered_targets) {
        assert!((got - want).abs() < 1e-12);
    }
    assert_frequencies(&filtered, &filtered_targets, 0xC3 + 2, "top-p-filtered");

    let elapsed = start.elapsed();
    assert!(elapsed < Duration::from_secs(5), "took {elapsed:?}");
    println!(
        "criterion 3 PASS: 3x100000 seeded draws within +/-0.01 of analytic targets in {elapsed:?}"
    );
}

#[test]
fn criterion_4_policy_equivalence_on_bundled_prompts() {
    let start = Instant::now();
    let model = bundled_model();
    let records = load_dataset(&asset("mini100.jsonl"), Task::Freeform).expect("bundled dataset");
    assert!(records.len() >= 50);

    let t0 = 0.8;
    for (i, record) in records.iter().take(50).enumerate() {
        let prompt = model.encode(&record.input);
        let seed = 7_000 + i as u64;
        let request = |policy: TemperaturePolicy| DecodeRequest {
            prompt: prompt.clone(),
            policy,
            max_new_tokens: 24,
            eos_token: EOS,
            seed,
        };
        let fixed = decode(&model, &request(TemperaturePolicy::fixed(t0))).unwrap();
        let edt0 = decode(&model, &request(TemperaturePolicy::edt(t0, 0.0))).unwrap();
        let udt0 = decode(&model, &request(TemperaturePolicy::udt(t0, 0.0))).unwrap();
        let kld_inf = decode(&model, &request(TemperaturePolicy::kld(t0, 1e12))).unwrap();

        assert_eq!(
            fixed.tokens, edt0.tokens,
            "EDT(theta=0) diverged on {}",
            record.id
        );
        assert_eq!(
            fixed.tokens, udt0.tokens,
            "UDT(theta=0) diverged on {}",
            record.id
        );
        assert_eq!(
            fixed.tokens, kld_inf.tokens,
            "KLD(sigma=1e12) diverged on {}",
            record.id
        );
    }
    let elapsed = start.elapsed();
    assert!(elapsed < Duration::from_secs(10), "took {elapsed:?}");
    println!(
        "criterion 4 PASS: EDT(0)/UDT(0)/KLD(1e12) token-identical to Fixed on 50 prompts \
         in {elapsed:?}"
    );
}

/// Brute-force LCS by recursion with memoization; independent of the DP in
/// the metrics module.
fn lcs_brute(a: &[u32], b: &[u32]) -> usize {
    fn go(
        a: &[u32],
        b: &[u32],
        i: usize,
        j: usize,
        memo: &mut HashMap<(usize, usize), usize>,
    ) -> usize {
        if i == a.len() || j == b.len() {
            return 0;
        }
        if let Some(&v) = memo.get(&(i, j)) {
            return v;
        }
        let v = if a[i] == b[j] {
            1 + go(a, b, i + 1, j + 1, memo)
        } else {
            go(a, b, i + 1, j, memo).max(go(a, b, i, j + 1, memo))
        };
        memo.insert((i, j), v);
        v
    }
    go(a, b, 0, 0, &mut HashMap::new())
}

#[test]
fn criterion_5_metric_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC5);

    // ROUGE-L against the brute-force LCS on 500 random pairs, exact.
    for _ in 0..500 {
        let len_a = rng.random_range(0..20);
        let len_b = rng.random_range(0..20);
        let a: Vec<u32> = (0..len_a).map(|_| rng.random_range(0..6)).collect();
        let b: Vec<u32> = (0..len_b).map(|_| rng.random_range(0..6)).collect();
        let got = rouge_l_f1(&a, &b);
        let lcs = lcs_brute(&a, &b);
        let want = if a.is_empty() || b.is_empty() || lcs == 0 {
            0.0
        } else {
            let p = lcs as f64 / a.len() as f64;
            let r = lcs as f64 / b.len() as f64;
            2.0 * p * r / (p + r)
        };
        assert_eq!(got, want, "rouge mismatch on {a:?} vs {b:?}");
    }

    // Hand-counted BLEU fixture to 1e-9.
    let hyp: Vec<&str> = "the quick brown fox jumps over the lazy dog today"
        .split(' ')
        .collect();
    let reference: Vec<&str> = "the quick brown fox leaps over the lazy dog now"
        .split(' ')
        .collect();
    let refs: [&[&str]; 1] = [&reference];
    let bleu = sentence_bleu(&hyp, &refs).unwrap();
    assert!(
        (bleu - 52.53819788848317).abs() < 1e-9,
        "bleu fixture: {bleu}"
    );

    // Self-BLEU permutation invariance on 100 random triples, exact.
    for _ in 0..100 {
        let mut triple: Vec<Vec<u32>> = (0..3)
            .map(|_| {
                let len = rng.random_range(1..12);
                (0..len).map(|_| rng.random_range(0..5)).collect()
            })
            .collect();
        let base = self_bleu(&triple).unwrap();
        triple.rotate_left(1);
        assert_eq!(base, self_bleu(&triple).unwrap());
        triple.swap(0, 2);
        assert_eq!(base, self_bleu(&triple).unwrap());
    }

    // EDA / EDA_range against direct formula evaluation to 1e-9.
    for _ in 0..200 {
        let q_max = rng.random_range(1.0..100.0);
        let q_min = rng.random_range(0.0..q_max - 0.5);
        let d_max = rng.random_range(1.0..100.0);
        let d_min = rng.random_range(0.0..d_max - 0.5);
        let norms = SweepNormalizers {
            q_max,
            q_min,
            d_max,
            d_min,
        };
        let q = rng.random_range(q_min..q_max);
        let d = rng.random_range(d_min..d_max);

        let omega = q_max / d_max;
        let eda_direct =
            100.0 * (((q_max - q) / q_max).powi(2) + (omega * d / d_max).powi(2)).sqrt();
        assert!((eda(q, d, &norms).unwrap() - eda_direct).abs() < 1e-9);

        let range_direct = 100.0
            * (((q_max - q) / (q_max - q_min)).powi(2) + ((d_min - d) / (d_max - d_min)).powi(2))
                .sqrt();
        assert!((eda_range(q, d, &norms).unwrap() - range_direct).abs() < 1e-9);
    }

    println!(
        "criterion 5 PASS: rouge==bruteforce on 500 pairs, bleu fixture to 1e-9, \
         self-bleu permutation-exact on 100 triples, eda/eda_range to 1e-9"
    );
}

/// Spearman rank correlation with average ranks for ties.
fn spearman(x: &[f64], y: &[f64]) -> f64 {
    fn ranks(values: &[f64]) -> Vec<f64> {
        let mut order: Vec<usize> = (0..values.len()).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        let mut out = vec![0.0; values.len()];
        let mut i = 0;
        while i < order.len() {
            let mut j = i;
            while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for &k in &order[i..=j] {
                out[k] = avg;
            }
            i = j + 1;
        }
        out
    }
    let rx = ranks(x);
    let ry = ranks(y);
    let mx = rx.iter().sum::<f64>() / rx.len() as f64;
    let my = ry.iter().sum::<f64>() / ry.len() as f64;
    let mut num = 0.0;
    let mut dx = 0.0;
    let mut dy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        num += (a - mx) * (b - my);
        dx += (a - mx) * (a - mx);
        dy += (b - my) * (b - my);
    }
    num / (dx * dy).sqrt()
}

#[test]
fn criterion_6_tradeoff_reproduction() {
    let start = Instant::now();
    let config = tradeoff_config();
    assert_eq!(config.k_samples, 5);
    let output = run_sweep(&config, 1).expect("sweep runs");
    let elapsed = start.elapsed();

    assert_eq!(output.points.len(), 10);
    assert!(output.failures.is_empty());
    assert!(output.points.iter().all(|p| p.n_instances == 100));

    let temperatures: Vec<f64> = output.points.iter().map(|p| p.policy.t0).collect();
    let diversity: Vec<f64> = output.points.iter().map(|p| p.mean_self_bleu).collect();
    let rho = spearman(&temperatures, &diversity);
    assert!(
        rho <= -0.9,
        "Spearman(T, self-BLEU) must be <= -0.9, got {rho} (diversity: {diversity:?})"
    );
    assert!(
        elapsed < Duration::from_secs(300),
        "single-threaded sweep took {elapsed:?}"
    );
    println!(
        "criterion 6 PASS: mean self-BLEU falls with T (Spearman {rho:.4}) over the \
         10-point grid, 100 instances, k=5, in {elapsed:?}"
    );
}

#[test]
fn criterion_7_determinism_and_jobs_invariance() {
    let config = tradeoff_config();
    let first = run_sweep(&config, 1).expect("sweep runs");
    let second = run_sweep(&config, 1).expect("sweep runs");
    let parallel = run_sweep(&config, 4).expect("sweep runs");

    assert_eq!(first.sweep_csv(), second.sweep_csv());
    assert_eq!(first.instances_csv(), second.instances_csv());
    assert_eq!(first.metadata_json(), second.metadata_json());

    assert_eq!(first.sweep_csv(), parallel.sweep_csv());
    assert_eq!(first.instances_csv(), parallel.instances_csv());
    assert_eq!(first.metadata_json(), parallel.metadata_json());
    println!(
        "criterion 7 PASS: repeated runs and --jobs 4 vs --jobs 1 produce byte-identical outputs"
    );
}

#[test]
fn criterion_8_analysis_report_arity() {
    let model = bundled_model();
    let records = load_dataset(&asset("mini100.jsonl"), Task::Freeform).expect("bundled dataset");

    let report = entropy_density_report(&model, &records, 40).expect("entropy report");
    assert_eq!(report.first_token.len(), records.len());
    let total_reference_tokens: usize = records
        .iter()
        .map(|r| model.encode(&r.reference).len())
        .sum();
    assert_eq!(report.all_tokens.len(), total_reference_tokens);
    let first_binned: usize = report.first_hist.iter().map(|b| b.count).sum();
    let all_binned: usize = report.all_hist.iter().map(|b| b.count).sum();
    assert_eq!(first_binned, records.len());
    assert_eq!(all_binned, total_reference_tokens);

    let mut config =
        SweepConfig::from_json_path(&asset("sweep_mini.json")).expect("bundled mini config");
    config.model = asset("mini.nglm");
    config.dataset = asset("mini20.jsonl");
    let mini_records = load_dataset(&asset("mini20.jsonl"), Task::Freeform).unwrap();
    let histogram =
        optimal_temperature_histogram(&model, &mini_records, &config, 1).expect("histogram");
    let binned: usize = histogram.bins.iter().map(|b| b.count).sum();
    assert_eq!(binned, mini_records.len());

    println!(
        "criterion 8 PASS: entropy sample sets have exact arity ({} first / {} total) and \
         histogram bins sum to the instance count",
        records.len(),
        total_reference_tokens
    );
}
