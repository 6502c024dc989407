//! Run configuration: flat `section.key = value` lines, `#` comments.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use qip_core::cluster::{RefinerConfig, RefinerTrainConfig};
use qip_core::encode::EncodingKind;
use qip_core::observe::ObservableSpec;
use qip_core::qsim::PauliAxis;
use qip_core::train::TrainConfig;

use crate::data::{SplitMode, SyntheticSpec};
use crate::error::{QipError, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    /// Seeded blobs; the seed comes from the run seed.
    Synthetic(SyntheticSpec),
    Idx { images: PathBuf, labels: PathBuf },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub source: DataSource,
    pub split: SplitMode,
    pub train_fraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
    pub feature_dim: usize,
    pub encoder: EncodingKind,
    pub n_qubits: usize,
    pub observable: ObservableSpec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSettings {
    pub loss: TrainConfig,
    pub epochs: usize,
    pub batch_size: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureSpace {
    Classical,
    Quantum,
}

impl FromStr for FeatureSpace {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "classical" | "v" => Ok(Self::Classical),
            "quantum" | "q" => Ok(Self::Quantum),
            _ => Err(format!("unknown feature space `{s}` (classical|quantum)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterSettings {
    pub k: usize,
    /// Keep-probability threshold for linking a member to its center.
    pub threshold: f64,
    pub use_refiner: bool,
    /// Token source for the refiner of the quantum-space pipeline.
    pub refiner_input: FeatureSpace,
    pub refiner: RefinerConfig,
    pub refiner_train: RefinerTrainConfig,
    /// Extra observables to measure for quantum-space clustering; empty means
    /// the training observable only.
    pub observables: Vec<ObservableSpec>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prop1Settings {
    pub pairs: usize,
    pub qubits: Vec<usize>,
    pub encoders: Vec<EncodingKind>,
    pub observables: Vec<PauliAxis>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainSettings,
    pub cluster: ClusterSettings,
    pub prop1: Prop1Settings,
    pub lambdas: Vec<f64>,
    pub seeds: Vec<u64>,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: DataConfig {
                source: DataSource::Synthetic(SyntheticSpec::default()),
                split: SplitMode::Stratified,
                train_fraction: 0.7,
            },
            model: ModelConfig {
                hidden: vec![32, 32],
                feature_dim: 16,
                encoder: EncodingKind::Amplitude,
                n_qubits: 4,
                observable: ObservableSpec::single(PauliAxis::Z),
            },
            train: TrainSettings {
                loss: TrainConfig::default(),
                epochs: 20,
                batch_size: 64,
            },
            cluster: ClusterSettings {
                k: 5,
                threshold: 0.5,
                use_refiner: true,
                refiner_input: FeatureSpace::Quantum,
                refiner: RefinerConfig::default(),
                refiner_train: RefinerTrainConfig { epochs: 4, ..RefinerTrainConfig::default() },
                observables: Vec::new(),
            },
            prop1: Prop1Settings {
                pairs: 1000,
                qubits: vec![2, 3, 4, 5, 6],
                encoders: vec![EncodingKind::Amplitude, EncodingKind::Phase, EncodingKind::U3],
                observables: PauliAxis::ALL.to_vec(),
            },
            lambdas: vec![0.0, 0.1, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0],
            seeds: vec![1, 2, 3, 4, 5],
            out: PathBuf::from("out"),
        }
    }
}

fn parse<T: FromStr>(line: usize, key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value.parse::<T>().map_err(|e| QipError::config(line, format!("{key}: {e}")))
}

fn list<T: FromStr>(line: usize, key: &str, value: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    let items: Vec<&str> = value.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
    if items.is_empty() {
        return Err(QipError::config(line, format!("{key}: empty list")));
    }
    items.into_iter().map(|s| parse(line, key, s)).collect()
}

fn axis(line: usize, key: &str, s: &str) -> Result<PauliAxis> {
    let mut chars = s.chars();
    match (chars.next().and_then(PauliAxis::from_char), chars.next()) {
        (Some(a), None) => Ok(a),
        _ => Err(QipError::config(line, format!("{key}: `{s}` is not one of X, Y, Z"))),
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut synth = SyntheticSpec::default();
        let mut images: Option<PathBuf> = None;
        let mut labels: Option<PathBuf> = None;
        let mut source = "synthetic".to_string();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| QipError::config(line, format!("expected `section.key = value`, got `{content}`")))?;
            let (key, v) = (key.trim(), value.trim());
            if v.is_empty() {
                return Err(QipError::config(line, format!("{key}: missing value")));
            }
            match key {
                "data.source" => source = v.to_string(),
                "data.classes" => synth.n_classes = parse(line, key, v)?,
                "data.samples_per_class" => synth.samples_per_class = parse(line, key, v)?,
                "data.input_dim" => synth.input_dim = parse(line, key, v)?,
                "data.center_scale" => synth.center_scale = parse(line, key, v)?,
                "data.noise_sigma" => synth.noise_sigma = parse(line, key, v)?,
                "data.images" => images = Some(PathBuf::from(v)),
                "data.labels" => labels = Some(PathBuf::from(v)),
                "data.split" => cfg.data.split = parse(line, key, v)?,
                "data.train_fraction" => cfg.data.train_fraction = parse(line, key, v)?,

                "model.hidden" => {
                    cfg.model.hidden = if v == "none" { Vec::new() } else { list(line, key, v)? }
                }
                "model.feature_dim" => cfg.model.feature_dim = parse(line, key, v)?,
                "model.encoder" => cfg.model.encoder = parse(line, key, v)?,
                "model.qubits" => cfg.model.n_qubits = parse(line, key, v)?,
                "model.observable" => cfg.model.observable = parse(line, key, v)?,

                "train.lambda" => cfg.train.loss.lambda = parse(line, key, v)?,
                "train.scale" => cfg.train.loss.scale = parse(line, key, v)?,
                "train.normalize_quantum" => cfg.train.loss.normalize_quantum = parse(line, key, v)?,
                "train.detach_targets" => cfg.train.loss.detach_targets = parse(line, key, v)?,
                "train.lr" => cfg.train.loss.base_lr = parse(line, key, v)?,
                "train.weight_decay" => cfg.train.loss.adam.weight_decay = parse(line, key, v)?,
                "train.beta1" => cfg.train.loss.adam.beta1 = parse(line, key, v)?,
                "train.beta2" => cfg.train.loss.adam.beta2 = parse(line, key, v)?,
                "train.eps" => cfg.train.loss.adam.eps = parse(line, key, v)?,
                "train.epochs" => cfg.train.epochs = parse(line, key, v)?,
                "train.batch_size" => cfg.train.batch_size = parse(line, key, v)?,

                "cluster.k" => cfg.cluster.k = parse(line, key, v)?,
                "cluster.threshold" => cfg.cluster.threshold = parse(line, key, v)?,
                "cluster.refiner" => cfg.cluster.use_refiner = parse(line, key, v)?,
                "cluster.refiner_input" => cfg.cluster.refiner_input = parse(line, key, v)?,
                "cluster.refiner_hidden" => cfg.cluster.refiner.hidden = parse(line, key, v)?,
                "cluster.refiner_qubits" => cfg.cluster.refiner.n_qubits = parse(line, key, v)?,
                "cluster.refiner_observable" => cfg.cluster.refiner.observable = parse(line, key, v)?,
                "cluster.refiner_epochs" => cfg.cluster.refiner_train.epochs = parse(line, key, v)?,
                "cluster.refiner_batch_size" => cfg.cluster.refiner_train.batch_size = parse(line, key, v)?,
                "cluster.refiner_lr" => cfg.cluster.refiner_train.base_lr = parse(line, key, v)?,
                "cluster.refiner_balance" => cfg.cluster.refiner_train.balance_classes = parse(line, key, v)?,
                "cluster.observables" => cfg.cluster.observables = list(line, key, v)?,

                "prop1.pairs" => cfg.prop1.pairs = parse(line, key, v)?,
                "prop1.qubits" => cfg.prop1.qubits = list(line, key, v)?,
                "prop1.encoders" => cfg.prop1.encoders = list(line, key, v)?,
                "prop1.observables" => {
                    cfg.prop1.observables = v
                        .split(',')
                        .map(|s| axis(line, key, s.trim()))
                        .collect::<Result<Vec<_>>>()?
                }

                "sweep.lambdas" => cfg.lambdas = list(line, key, v)?,
                "run.seeds" => cfg.seeds = list(line, key, v)?,
                "run.out" => cfg.out = PathBuf::from(v),
                _ => return Err(QipError::config(line, format!("unknown key `{key}`"))),
            }
        }
        cfg.data.source = match source.as_str() {
            "synthetic" => DataSource::Synthetic(synth),
            "idx" => match (images, labels) {
                (Some(images), Some(labels)) => DataSource::Idx { images, labels },
                _ => return Err(QipError::config(0, "data.source = idx needs data.images and data.labels")),
            },
            other => return Err(QipError::config(0, format!("unknown data.source `{other}`"))),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| QipError::config(0, format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Semantic checks that do not depend on the data.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(QipError::config(0, msg));
        self.train.loss.validate().map_err(|e| QipError::config(0, e.to_string()))?;
        if let DataSource::Synthetic(s) = &self.data.source {
            s.validate().map_err(|e| QipError::config(0, e.to_string()))?;
        }
        if !(self.data.train_fraction > 0.0 && self.data.train_fraction < 1.0) {
            return bad("data.train_fraction must lie in (0, 1)".into());
        }
        if self.model.feature_dim == 0 || self.model.hidden.contains(&0) {
            return bad("model dims must be positive".into());
        }
        if self.model.encoder != EncodingKind::Amplitude
            && !(1..=qip_core::qsim::MAX_QUBITS).contains(&self.model.n_qubits)
        {
            return bad(format!("model.qubits must lie in 1..={}", qip_core::qsim::MAX_QUBITS));
        }
        if self.train.epochs == 0 || self.train.batch_size == 0 {
            return bad("train.epochs and train.batch_size must be positive".into());
        }
        if self.cluster.k < 2 {
            return bad("cluster.k must be at least 2".into());
        }
        if !(0.0..=1.0).contains(&self.cluster.threshold) {
            return bad("cluster.threshold must lie in [0, 1]".into());
        }
        if self.cluster.refiner.hidden == 0 || self.cluster.refiner.n_qubits == 0 {
            return bad("refiner dims must be positive".into());
        }
        if self.cluster.refiner_train.batch_size == 0 {
            return bad("cluster.refiner_batch_size must be positive".into());
        }
        if self.lambdas.iter().any(|l| !(*l >= 0.0) || !l.is_finite()) {
            return bad("sweep.lambdas must be finite and non-negative".into());
        }
        if self.seeds.is_empty() {
            return bad("run.seeds must not be empty".into());
        }
        if self.prop1.qubits.iter().any(|&n| n == 0 || n > 10) {
            return bad("prop1.qubits must lie in 1..=10".into());
        }
        Ok(())
    }

    /// Observables used for quantum-space clustering.
    pub fn cluster_observables(&self) -> Vec<ObservableSpec> {
        if self.cluster.observables.is_empty() {
            vec![self.model.observable.clone()]
        } else {
            self.cluster.observables.clone()
        }
    }
}
