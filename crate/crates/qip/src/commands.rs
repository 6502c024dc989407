//! Subcommand implementations. Each command reads a validated [`RunConfig`],
//! writes its outputs under `cfg.out` and returns what it wrote.

use std::path::{Path, PathBuf};

use qip_core::encode::{encode, EncodingKind, EncodingSpec};
use qip_core::gap::gap_pair;
use qip_core::observe::ObservableSpec;
use qip_core::qsim::PauliAxis;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::config::RunConfig;
use crate::data::{features_csv, save_features, FeatureTable};
use crate::error::Result;
use crate::experiment::{
    evaluate_model, history_csv, loss_config, model_spec, prepare_data, quantum_features, run_point, train_model,
    ModelReport, RunResult,
};
use crate::fsutil::write_atomic;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IdenticalPair {
    pub overlap: f64,
    pub q_dot: f64,
    /// Real part of the witness trace; equals the qubit count.
    pub witness_trace: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prop1Entry {
    pub encoder: String,
    pub observable: String,
    pub n_qubits: usize,
    pub pairs: usize,
    /// Fraction of pairs with `| |<psi1|psi2>| - q1 . q2 | > 1e-3`.
    pub gap_fraction: f64,
    pub mean_abs_gap: f64,
    pub max_residual: f64,
    pub identical: IdenticalPair,
}

pub const GAP_TOLERANCE: f64 = 1e-3;

fn prop1_input_dim(kind: EncodingKind, n: usize) -> usize {
    match kind {
        EncodingKind::Amplitude => 1 << n,
        EncodingKind::Phase | EncodingKind::U3 => n,
    }
}

/// Gap statistics over random encoded input pairs for one combination.
pub fn prop1_entry(kind: EncodingKind, axis: PauliAxis, n: usize, pairs: usize, seed: u64) -> Result<Prop1Entry> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = prop1_input_dim(kind, n);
    let spec = EncodingSpec::build(kind, d, n, &mut rng)?;
    let obs = ObservableSpec::single(axis);
    let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> { (0..d).map(|_| StandardNormal.sample(rng)).collect() };
    let (mut gapped, mut gap_sum, mut max_residual) = (0usize, 0.0, 0.0f64);
    for _ in 0..pairs {
        let a = encode(&draw(&mut rng), &spec)?;
        let b = encode(&draw(&mut rng), &spec)?;
        let r = gap_pair(&a, &b, &obs)?;
        if r.abs_gap > GAP_TOLERANCE {
            gapped += 1;
        }
        gap_sum += r.abs_gap;
        max_residual = max_residual.max(r.witness_residual());
    }
    let s = encode(&draw(&mut rng), &spec)?;
    let same = gap_pair(&s, &s, &obs)?;
    max_residual = max_residual.max(same.witness_residual());
    let denom = pairs.max(1) as f64;
    Ok(Prop1Entry {
        encoder: kind.to_string(),
        observable: obs.to_string(),
        n_qubits: n,
        pairs,
        gap_fraction: gapped as f64 / denom,
        mean_abs_gap: gap_sum / denom,
        max_residual,
        identical: IdenticalPair { overlap: same.state_overlap.norm(), q_dot: same.q_dot, witness_trace: same.witness_trace.re },
    })
}

pub fn cmd_prop1(cfg: &RunConfig) -> Result<Vec<Prop1Entry>> {
    let p = &cfg.prop1;
    let mut out = Vec::new();
    for (ei, &kind) in p.encoders.iter().enumerate() {
        for (oi, &axis) in p.observables.iter().enumerate() {
            for &n in &p.qubits {
                let seed = cfg.seeds[0] ^ ((ei as u64) << 40) ^ ((oi as u64) << 32) ^ n as u64;
                out.push(prop1_entry(kind, axis, n, p.pairs, seed)?);
            }
        }
    }
    write_json(&cfg.out.join("prop1.json"), &out)?;
    Ok(out)
}

/// Directory holding the checkpoint and history of one training run.
pub fn run_dir(out: &Path, seed: u64, lambda: f64) -> PathBuf {
    out.join(format!("seed-{seed}")).join(format!("lambda-{lambda}"))
}

/// The loss factors trained per seed: the baseline and the configured one.
pub fn train_lambdas(cfg: &RunConfig) -> Vec<f64> {
    let l = cfg.train.loss.lambda;
    if l == 0.0 {
        vec![0.0]
    } else {
        vec![0.0, l]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutput {
    pub seed: u64,
    pub lambda: f64,
    pub checkpoint: PathBuf,
    pub history: PathBuf,
}

pub fn cmd_train(cfg: &RunConfig) -> Result<Vec<TrainOutput>> {
    let mut out = Vec::new();
    for &seed in &cfg.seeds {
        let (train, _) = prepare_data(cfg, seed)?;
        for lambda in train_lambdas(cfg) {
            let (state, history) = train_model(cfg, &train, lambda, seed)?;
            let dir = run_dir(&cfg.out, seed, lambda);
            let checkpoint = dir.join("checkpoint.qip");
            let hist = dir.join("history.csv");
            save_checkpoint(&checkpoint, &state)?;
            write_atomic(&hist, history_csv(&history).as_bytes())?;
            out.push(TrainOutput { seed, lambda, checkpoint, history: hist });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunMetrics {
    pub seed: u64,
    /// `None` when the model came from a checkpoint.
    pub lambda: Option<f64>,
    #[serde(flatten)]
    pub report: ModelReport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeanMetrics {
    pub lambda: f64,
    pub classical_f_pairwise: f64,
    pub classical_f_bcubed: f64,
    pub quantum_f_pairwise: f64,
    pub quantum_f_bcubed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterMetrics {
    pub runs: Vec<RunMetrics>,
    pub means: Vec<MeanMetrics>,
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n.max(1) as f64
}

fn means_by_lambda(runs: &[(f64, &ModelReport)]) -> Vec<MeanMetrics> {
    let mut lambdas: Vec<f64> = runs.iter().map(|r| r.0).collect();
    lambdas.sort_by(f64::total_cmp);
    lambdas.dedup();
    lambdas
        .into_iter()
        .map(|lambda| {
            let sel: Vec<&ModelReport> = runs.iter().filter(|r| r.0 == lambda).map(|r| r.1).collect();
            MeanMetrics {
                lambda,
                classical_f_pairwise: mean(sel.iter().map(|r| r.classical.scores.f_pairwise)),
                classical_f_bcubed: mean(sel.iter().map(|r| r.classical.scores.f_bcubed)),
                quantum_f_pairwise: mean(sel.iter().map(|r| r.primary_quantum().f_pairwise)),
                quantum_f_bcubed: mean(sel.iter().map(|r| r.primary_quantum().f_bcubed)),
            }
        })
        .collect()
}

/// Clusters the held-out split. With a checkpoint, evaluates that model on
/// the first seed's data; otherwise trains and evaluates the baseline and the
/// configured loss factor for every seed.
pub fn cmd_cluster(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<ClusterMetrics> {
    let runs = match checkpoint {
        Some(path) => {
            let seed = cfg.seeds[0];
            let (train, test) = prepare_data(cfg, seed)?;
            let (header, state) = load_checkpoint(path, loss_config(cfg, cfg.train.loss.lambda))?;
            header.check(&model_spec(cfg, &train))?;
            vec![RunMetrics { seed, lambda: None, report: evaluate_model(cfg, &state, &train, &test, seed)? }]
        }
        None => {
            let mut runs = Vec::new();
            for &seed in &cfg.seeds {
                let data = prepare_data(cfg, seed)?;
                for lambda in train_lambdas(cfg) {
                    let r = run_point(cfg, &data, lambda, seed)?;
                    runs.push(RunMetrics { seed, lambda: Some(lambda), report: r.report });
                }
            }
            runs
        }
    };
    let keyed: Vec<(f64, &ModelReport)> =
        runs.iter().filter_map(|r| r.lambda.map(|l| (l, &r.report))).collect();
    let means = means_by_lambda(&keyed);
    let metrics = ClusterMetrics { runs, means };
    write_json(&cfg.out.join("metrics.json"), &metrics)?;
    Ok(metrics)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub lambda: f64,
    /// `None` for the mean row of a loss factor.
    pub seed: Option<u64>,
    pub classical_f_pairwise: f64,
    pub classical_f_bcubed: f64,
    pub quantum_f_pairwise: f64,
    pub quantum_f_bcubed: f64,
}

pub const SWEEP_HEADER: &str =
    "lambda,seed,classical_f_pairwise,classical_f_bcubed,quantum_f_pairwise,quantum_f_bcubed";

/// Rows sorted by loss factor then seed, each factor followed by its mean row.
pub fn sweep_rows(results: &[RunResult]) -> Vec<SweepRow> {
    let mut rows: Vec<SweepRow> = results
        .iter()
        .map(|r| SweepRow {
            lambda: r.lambda,
            seed: Some(r.seed),
            classical_f_pairwise: r.report.classical.scores.f_pairwise,
            classical_f_bcubed: r.report.classical.scores.f_bcubed,
            quantum_f_pairwise: r.report.primary_quantum().f_pairwise,
            quantum_f_bcubed: r.report.primary_quantum().f_bcubed,
        })
        .collect();
    let keyed: Vec<(f64, &ModelReport)> = results.iter().map(|r| (r.lambda, &r.report)).collect();
    rows.extend(means_by_lambda(&keyed).into_iter().map(|m| SweepRow {
        lambda: m.lambda,
        seed: None,
        classical_f_pairwise: m.classical_f_pairwise,
        classical_f_bcubed: m.classical_f_bcubed,
        quantum_f_pairwise: m.quantum_f_pairwise,
        quantum_f_bcubed: m.quantum_f_bcubed,
    }));
    rows.sort_by(|a, b| a.lambda.total_cmp(&b.lambda).then(a.seed.unwrap_or(u64::MAX).cmp(&b.seed.unwrap_or(u64::MAX))));
    rows
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = format!("{SWEEP_HEADER}\n");
    for r in rows {
        let seed = r.seed.map_or_else(|| "mean".to_string(), |s| s.to_string());
        out.push_str(&format!(
            "{},{seed},{:?},{:?},{:?},{:?}\n",
            r.lambda, r.classical_f_pairwise, r.classical_f_bcubed, r.quantum_f_pairwise, r.quantum_f_bcubed
        ));
    }
    out
}

pub fn cmd_sweep_lambda(cfg: &RunConfig) -> Result<Vec<SweepRow>> {
    let mut results = Vec::new();
    for &seed in &cfg.seeds {
        let data = prepare_data(cfg, seed)?;
        for &lambda in &cfg.lambdas {
            results.push(run_point(cfg, &data, lambda, seed)?);
        }
    }
    let rows = sweep_rows(&results);
    write_atomic(&cfg.out.join("sweep.csv"), sweep_csv(&rows).as_bytes())?;
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExportOutput {
    pub csv: PathBuf,
    pub classical: PathBuf,
    pub quantum: PathBuf,
}

/// Classical and quantum features of both splits for the first seed, from a
/// checkpoint or a freshly trained model at the configured loss factor.
pub fn cmd_export_features(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<ExportOutput> {
    let seed = cfg.seeds[0];
    let (train, test) = prepare_data(cfg, seed)?;
    let state = match checkpoint {
        Some(path) => {
            let (header, state) = load_checkpoint(path, loss_config(cfg, cfg.train.loss.lambda))?;
            header.check(&model_spec(cfg, &train))?;
            state
        }
        None => train_model(cfg, &train, cfg.train.loss.lambda, seed)?.0,
    };
    let v_train = state.features(&train.inputs)?;
    let v_test = state.features(&test.inputs)?;
    let q_train = quantum_features(&state, &v_train, &state.obs)?;
    let q_test = quantum_features(&state, &v_test, &state.obs)?;
    let csv = features_csv(&[
        FeatureTable { split: "train", labels: &train.labels, blocks: vec![("v", &v_train), ("q", &q_train)] },
        FeatureTable { split: "test", labels: &test.labels, blocks: vec![("v", &v_test), ("q", &q_test)] },
    ]);
    let out = ExportOutput {
        csv: cfg.out.join("features.csv"),
        classical: cfg.out.join("features_v.qfv"),
        quantum: cfg.out.join("features_q.qfv"),
    };
    write_atomic(&out.csv, csv.as_bytes())?;
    save_features(&out.classical, &v_test, Some(&test.labels))?;
    save_features(&out.quantum, &q_test, Some(&test.labels))?;
    Ok(out)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

/// Applies command-line overrides; the result is validated again.
pub fn apply_overrides(mut cfg: RunConfig, seed: Option<u64>, out: Option<PathBuf>) -> Result<RunConfig> {
    if let Some(s) = seed {
        cfg.seeds = vec![s];
    }
    if let Some(o) = out {
        cfg.out = o;
    }
    cfg.validate()?;
    Ok(cfg)
}
