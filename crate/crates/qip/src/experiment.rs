//! Train / cluster / evaluate pipeline shared by the CLI subcommands.

use qip_core::cluster::{
    assemble_clusters, bcubed_f, knn_clusters, pairwise_f, refine, train_refiner, BCubedScore, ClusterProposal,
    PairwiseScore, RefinerModel,
};
use qip_core::observe::{quantum_map_rows, ObservableSpec};
use qip_core::train::{fit, ModelSpec, StepRecord, TrainConfig, TrainState};
use qip_core::Matrix;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{DataSource, FeatureSpace, RunConfig};
use crate::data::{generate_blobs, load_idx, split, Dataset};
use crate::error::{QipError, Result};

pub fn prepare_data(cfg: &RunConfig, seed: u64) -> Result<(Dataset, Dataset)> {
    let full = match &cfg.data.source {
        DataSource::Synthetic(spec) => generate_blobs(&crate::data::SyntheticSpec { seed, ..spec.clone() })?,
        DataSource::Idx { images, labels } => load_idx(images, labels)?,
    };
    split(&full, cfg.data.split, cfg.data.train_fraction, seed)
}

pub fn model_spec(cfg: &RunConfig, train: &Dataset) -> ModelSpec {
    ModelSpec {
        input_dim: train.inputs.cols(),
        hidden: cfg.model.hidden.clone(),
        feature_dim: cfg.model.feature_dim,
        n_classes: train.n_classes(),
        encoder: cfg.model.encoder,
        n_qubits: cfg.model.n_qubits,
        observable: cfg.model.observable.clone(),
    }
}

pub fn loss_config(cfg: &RunConfig, lambda: f64) -> TrainConfig {
    TrainConfig { lambda, ..cfg.train.loss.clone() }
}

/// Fresh model trained on `train` with the given loss factor.
pub fn train_model(cfg: &RunConfig, train: &Dataset, lambda: f64, seed: u64) -> Result<(TrainState, Vec<StepRecord>)> {
    let mut state = TrainState::new(&model_spec(cfg, train), loss_config(cfg, lambda), seed)?;
    let history = fit(&mut state, &train.inputs, &train.labels, cfg.train.epochs, cfg.train.batch_size)?;
    Ok((state, history))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Scores {
    pub f_pairwise: f64,
    pub pairwise_precision: f64,
    pub pairwise_recall: f64,
    pub fowlkes_mallows: f64,
    pub degenerate: bool,
    pub f_bcubed: f64,
    pub bcubed_precision: f64,
    pub bcubed_recall: f64,
    pub n_clusters: usize,
}

impl Scores {
    pub fn new(pw: PairwiseScore, b: BCubedScore, labels: &[usize]) -> Self {
        Self {
            f_pairwise: pw.f_score,
            pairwise_precision: pw.precision,
            pairwise_recall: pw.recall,
            fowlkes_mallows: pw.fowlkes_mallows,
            degenerate: pw.degenerate,
            f_bcubed: b.f_score,
            bcubed_precision: b.precision,
            bcubed_recall: b.recall,
            n_clusters: labels.iter().max().map_or(0, |m| m + 1),
        }
    }

    pub fn evaluate(pred: &[usize], truth: &[usize]) -> Result<Self> {
        Ok(Self::new(pairwise_f(pred, truth)?, bcubed_f(pred, truth)?, pred))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpaceReport {
    /// Final pipeline: refined assembly when the refiner is enabled.
    pub scores: Scores,
    /// Assembly that keeps every proposed link.
    pub unrefined: Scores,
    pub refiner_loss: Option<Vec<f64>>,
}

/// Features of one space for both splits, plus the refiner token source.
pub struct SpaceInputs<'a> {
    pub train: &'a Matrix,
    pub test: &'a Matrix,
    pub refiner_train: &'a Matrix,
    pub refiner_test: &'a Matrix,
}

/// Assembly with every proposed member linked to its center.
pub fn assemble_unrefined(n: usize, props: &[ClusterProposal]) -> Result<Vec<usize>> {
    let ones: Vec<Vec<f64>> = props.iter().map(|p| vec![1.0; p.members.len()]).collect();
    Ok(assemble_clusters(n, props, &ones, 1.0)?)
}

/// Same members, token features taken from another representation.
fn with_tokens(props: &[ClusterProposal], tokens: &Matrix) -> Vec<ClusterProposal> {
    props
        .iter()
        .map(|p| ClusterProposal {
            center: p.center,
            members: p.members.clone(),
            features: tokens.select_rows(&p.members),
        })
        .collect()
}

pub fn cluster_space(
    cfg: &RunConfig,
    inputs: SpaceInputs<'_>,
    train_labels: &[usize],
    test_labels: &[usize],
    seed: u64,
) -> Result<SpaceReport> {
    let c = &cfg.cluster;
    let k = c.k.min(inputs.test.rows());
    let test_props = knn_clusters(inputs.test, k)?;
    let unrefined_labels = assemble_unrefined(test_labels.len(), &test_props)?;
    let unrefined = Scores::evaluate(&unrefined_labels, test_labels)?;
    if !c.use_refiner {
        return Ok(SpaceReport { scores: unrefined, unrefined, refiner_loss: None });
    }
    let train_props = knn_clusters(inputs.train, c.k.min(inputs.train.rows()))?;
    let train_props = with_tokens(&train_props, inputs.refiner_train);
    let test_props = with_tokens(&test_props, inputs.refiner_test);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x00c0_ffee);
    let mut model = RefinerModel::random(inputs.refiner_train.cols(), &c.refiner, &mut rng)?;
    let rcfg = qip_core::cluster::RefinerTrainConfig { seed, ..c.refiner_train.clone() };
    let loss = train_refiner(&mut model, &train_props, train_labels, &rcfg)?;
    let probs = test_props.iter().map(|p| refine(p, &model)).collect::<qip_core::Result<Vec<_>>>()?;
    let labels = assemble_clusters(test_labels.len(), &test_props, &probs, c.threshold)?;
    Ok(SpaceReport { scores: Scores::evaluate(&labels, test_labels)?, unrefined, refiner_loss: Some(loss) })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuantumSpaceReport {
    pub observable: String,
    #[serde(flatten)]
    pub report: SpaceReport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelReport {
    pub classical: SpaceReport,
    pub quantum: Vec<QuantumSpaceReport>,
}

impl ModelReport {
    /// Quantum-space report for the training observable (the first entry).
    pub fn primary_quantum(&self) -> &Scores {
        &self.quantum[0].report.scores
    }
}

/// Quantum features of `v` measured with `obs` through the state's encoder.
pub fn quantum_features(state: &TrainState, v: &Matrix, obs: &ObservableSpec) -> Result<Matrix> {
    Ok(quantum_map_rows(v, &state.enc, obs)?)
}

pub fn evaluate_model(
    cfg: &RunConfig,
    state: &TrainState,
    train: &Dataset,
    test: &Dataset,
    seed: u64,
) -> Result<ModelReport> {
    let v_train = state.features(&train.inputs)?;
    let v_test = state.features(&test.inputs)?;
    let classical = cluster_space(
        cfg,
        SpaceInputs { train: &v_train, test: &v_test, refiner_train: &v_train, refiner_test: &v_test },
        &train.labels,
        &test.labels,
        seed,
    )?;
    let mut observables = cfg.cluster_observables();
    if let Some(pos) = observables.iter().position(|o| *o == state.obs) {
        observables.swap(0, pos);
    }
    let mut quantum = Vec::with_capacity(observables.len());
    for obs in &observables {
        let q_train = quantum_features(state, &v_train, obs)?;
        let q_test = quantum_features(state, &v_test, obs)?;
        let (rt, re) = match cfg.cluster.refiner_input {
            FeatureSpace::Quantum => (&q_train, &q_test),
            FeatureSpace::Classical => (&v_train, &v_test),
        };
        let report = cluster_space(
            cfg,
            SpaceInputs { train: &q_train, test: &q_test, refiner_train: rt, refiner_test: re },
            &train.labels,
            &test.labels,
            seed,
        )?;
        quantum.push(QuantumSpaceReport { observable: obs.to_string(), report });
    }
    Ok(ModelReport { classical, quantum })
}

/// One trained model and its evaluation.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub seed: u64,
    pub lambda: f64,
    pub state: TrainState,
    pub history: Vec<StepRecord>,
    pub report: ModelReport,
}

pub fn run_point(cfg: &RunConfig, data: &(Dataset, Dataset), lambda: f64, seed: u64) -> Result<RunResult> {
    let (train, test) = data;
    let (state, history) = train_model(cfg, train, lambda, seed)?;
    let report = evaluate_model(cfg, &state, train, test, seed)?;
    Ok(RunResult { seed, lambda, state, history, report })
}

pub fn history_csv(history: &[StepRecord]) -> String {
    let mut out = String::from("step,lr,L,K,L_QIP\n");
    for r in history {
        out.push_str(&format!("{},{:?},{:?},{:?},{:?}\n", r.step, r.lr, r.loss.ce, r.loss.gap, r.loss.total));
    }
    out
}

/// Proposals with a known fraction of wrong members: each sample's proposal
/// holds `k - 1` members, `round(noise * (k - 1))` of them drawn from other
/// classes and the rest from the center's own class, in shuffled order.
pub fn injected_proposals(
    features: &Matrix,
    labels: &[usize],
    k: usize,
    noise: f64,
    seed: u64,
) -> Result<Vec<ClusterProposal>> {
    if k < 2 || !(0.0..=1.0).contains(&noise) {
        return Err(QipError::Mismatch(format!("injected proposals need k >= 2 and noise in [0, 1], got {k}, {noise}")));
    }
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
    for (i, &c) in labels.iter().enumerate() {
        by_class[c].push(i);
    }
    let n_bad = (noise * (k - 1) as f64).round() as usize;
    let n_good = k - 1 - n_bad;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(labels.len());
    for (center, &c) in labels.iter().enumerate() {
        let same: Vec<usize> = by_class[c].iter().copied().filter(|&j| j != center).collect();
        let other: Vec<usize> = (0..labels.len()).filter(|&j| labels[j] != c).collect();
        if same.len() < n_good || other.len() < n_bad {
            return Err(QipError::Mismatch(format!("class {c} too small for {n_good} clean and {n_bad} injected members")));
        }
        let mut rest: Vec<usize> = same.choose_multiple(&mut rng, n_good).copied().collect();
        rest.extend(other.choose_multiple(&mut rng, n_bad).copied());
        rest.shuffle(&mut rng);
        let mut members = vec![center];
        members.extend(rest);
        out.push(ClusterProposal { center, features: features.select_rows(&members), members });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RefinerBenefit {
    pub refined: Scores,
    pub unrefined: Scores,
}

/// Refiner trained on injected-noise proposals of the training split and
/// scored on injected-noise proposals of the test split.
pub fn refiner_benefit(
    cfg: &RunConfig,
    train: &Dataset,
    test: &Dataset,
    k: usize,
    noise: f64,
    seed: u64,
) -> Result<RefinerBenefit> {
    let c = &cfg.cluster;
    let train_props = injected_proposals(&train.inputs, &train.labels, k, noise, seed ^ 0x7261_696e)?;
    let test_props = injected_proposals(&test.inputs, &test.labels, k, noise, seed ^ 0x7465_7374)?;
    let unrefined = Scores::evaluate(&assemble_unrefined(test.len(), &test_props)?, &test.labels)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x00c0_ffee);
    let mut model = RefinerModel::random(train.inputs.cols(), &c.refiner, &mut rng)?;
    let rcfg = qip_core::cluster::RefinerTrainConfig { seed, ..c.refiner_train.clone() };
    train_refiner(&mut model, &train_props, &train.labels, &rcfg)?;
    let probs = test_props.iter().map(|p| refine(p, &model)).collect::<qip_core::Result<Vec<_>>>()?;
    let labels = assemble_clusters(test.len(), &test_props, &probs, c.threshold)?;
    Ok(RefinerBenefit { refined: Scores::evaluate(&labels, &test.labels)?, unrefined })
}
