//! Feature extractor, classifier head and the QIP training loop.
//!
//! One step of [`qip_step`]:
//!
//! ```text
//! v_i = M(x_i) / |M(x_i)|            q_i = Q(v_i)      S_j = Q(W_j)
//! w_i = softmax(s W^T v_i)           u_i = softmax(s S^T q_i)
//! L   = mean_i -log w_i[y_i]         K   = mean_i KL(w_i || u_i)
//! L_QIP = L + lambda K
//! ```
//!
//! Gradients flow through `v`, `q` and `S` by hand-written reverse
//! accumulation, and all parameters move with AdamW under a cosine schedule.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::encode::{EncodingKind, EncodingSpec};
use crate::error::{argument, check_dim, config, Error, Result};
use crate::gap::{kl_unchecked, KL_EPS, QUANTUM_NORM_FLOOR};
use crate::matrix::{dot, log_softmax, normalize_backward, normalize_into, softmax, Matrix};
use crate::observe::{quantum_map, quantum_map_vjp, ObservableSpec};

/// Norm floor for feature rows and classifier columns.
pub const FEATURE_NORM_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `out x in`
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

/// Multilayer perceptron with rectified hidden layers and an L2-normalized
/// output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Layer>,
}

struct MlpCache {
    /// Layer inputs; `acts[0]` is the batch itself.
    acts: Vec<Matrix>,
    /// Pre-activations per layer.
    pre: Vec<Matrix>,
}

impl Mlp {
    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(config("MLP needs at least one layer"));
        }
        for (i, l) in layers.iter().enumerate() {
            check_dim(l.weights.rows(), l.bias.len())?;
            if i > 0 {
                check_dim(layers[i - 1].weights.rows(), l.weights.cols())?;
            }
        }
        Ok(Self { layers })
    }

    /// He-uniform weights and zero biases. `dims` is `[d_in, hidden.., d]`.
    pub fn random<R: Rng + ?Sized>(dims: &[usize], rng: &mut R) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(config("MLP dims need an input and an output, all positive"));
        }
        let layers = dims
            .windows(2)
            .map(|w| {
                let bound = libm::sqrt(6.0 / w[0] as f64);
                let data = (0..w[0] * w[1]).map(|_| rng.random_range(-bound..bound)).collect();
                Layer {
                    weights: Matrix::from_vec(w[1], w[0], data).expect("sized above"),
                    bias: vec![0.0; w[1]],
                }
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.layers[0].weights.cols()];
        d.extend(self.layers.iter().map(|l| l.weights.rows()));
        d
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weights.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").weights.rows()
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.as_slice().len() + l.bias.len()).sum()
    }

    fn forward_cache(&self, x: &Matrix) -> MlpCache {
        let mut acts = vec![x.clone()];
        let mut pre = Vec::with_capacity(self.layers.len());
        for (li, layer) in self.layers.iter().enumerate() {
            let input = acts.last().expect("non-empty");
            let mut z = Matrix::zeros(input.rows(), layer.weights.rows());
            for r in 0..input.rows() {
                let a = input.row(r);
                for o in 0..layer.weights.rows() {
                    z[(r, o)] = dot(layer.weights.row(o), a) + layer.bias[o];
                }
            }
            if li + 1 < self.layers.len() {
                let mut a = z.clone();
                a.as_mut_slice().iter_mut().for_each(|v| *v = v.max(0.0));
                pre.push(z);
                acts.push(a);
            } else {
                pre.push(z);
            }
        }
        MlpCache { acts, pre }
    }

    /// Raw (unnormalized) outputs.
    pub fn forward_raw(&self, x: &Matrix) -> Result<Matrix> {
        check_dim(self.input_dim(), x.cols())?;
        Ok(self.forward_cache(x).pre.pop().expect("non-empty"))
    }

    /// Accumulates parameter gradients into `grad` (flat layout) given the
    /// gradient with respect to the raw output.
    fn backward(&self, cache: &MlpCache, d_out: Matrix, grad: &mut [f64]) {
        let offsets = self.offsets();
        let mut dz = d_out;
        for li in (0..self.layers.len()).rev() {
            let layer = &self.layers[li];
            let input = &cache.acts[li];
            let (wo, bo) = offsets[li];
            let (rows_out, cols_in) = (layer.weights.rows(), layer.weights.cols());
            for r in 0..input.rows() {
                let a = input.row(r);
                let g = dz.row(r);
                for o in 0..rows_out {
                    let go = g[o];
                    if go == 0.0 {
                        continue;
                    }
                    grad[bo + o] += go;
                    let wrow = &mut grad[wo + o * cols_in..wo + (o + 1) * cols_in];
                    for (wg, ai) in wrow.iter_mut().zip(a) {
                        *wg += go * ai;
                    }
                }
            }
            if li == 0 {
                break;
            }
            let mut da = Matrix::zeros(input.rows(), cols_in);
            for r in 0..input.rows() {
                let g = dz.row(r);
                let out = da.row_mut(r);
                for o in 0..rows_out {
                    let go = g[o];
                    if go == 0.0 {
                        continue;
                    }
                    for (d, w) in out.iter_mut().zip(layer.weights.row(o)) {
                        *d += go * w;
                    }
                }
            }
            let prev_pre = &cache.pre[li - 1];
            for (d, z) in da.as_mut_slice().iter_mut().zip(prev_pre.as_slice()) {
                if *z <= 0.0 {
                    *d = 0.0;
                }
            }
            dz = da;
        }
    }

    /// `(weight offset, bias offset)` per layer in the flat layout.
    fn offsets(&self) -> Vec<(usize, usize)> {
        let mut off = 0;
        self.layers
            .iter()
            .map(|l| {
                let w = off;
                let b = w + l.weights.as_slice().len();
                off = b + l.bias.len();
                (w, b)
            })
            .collect()
    }
}

/// Row-wise MLP followed by L2 normalization.
pub fn forward_features(mlp: &Mlp, x_batch: &Matrix) -> Result<Matrix> {
    let raw = mlp.forward_raw(x_batch)?;
    if !raw.is_finite() {
        return Err(Error::TrainingFault {
            step: 0,
            param: "features".to_string(),
            reason: "non-finite activations".to_string(),
        });
    }
    Ok(normalize_rows(&raw).0)
}

fn normalize_rows(raw: &Matrix) -> (Matrix, Vec<f64>) {
    let mut out = Matrix::zeros(raw.rows(), raw.cols());
    let norms = (0..raw.rows())
        .map(|r| normalize_into(raw.row(r), out.row_mut(r), FEATURE_NORM_FLOOR))
        .collect();
    (out, norms)
}

/// Classifier weights `W` (`d x C`); columns are L2-normalized before use and
/// the bias is fixed at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierHead {
    w: Matrix,
}

impl ClassifierHead {
    pub fn new(w: Matrix) -> Self {
        let mut h = Self { w };
        h.renormalize();
        h
    }

    pub fn random<R: Rng + ?Sized>(d: usize, n_classes: usize, rng: &mut R) -> Self {
        let data = (0..d * n_classes)
            .map(|_| crate::qsim::gaussian_pair(rng).0)
            .collect();
        Self::new(Matrix::from_vec(d, n_classes, data).expect("sized above"))
    }

    pub fn weights(&self) -> &Matrix {
        &self.w
    }

    pub fn n_classes(&self) -> usize {
        self.w.cols()
    }

    pub fn dim(&self) -> usize {
        self.w.rows()
    }

    /// Column-normalized copy and the column norms.
    pub fn normalized(&self) -> (Matrix, Vec<f64>) {
        let (t, norms) = normalize_rows(&self.w.transpose());
        (t.transpose(), norms)
    }

    pub fn renormalize(&mut self) {
        self.w = self.normalized().0;
    }
}

/// Mean negative log-softmax of the true class.
pub fn ce_loss(logits_scaled: &Matrix, labels: &[usize]) -> Result<f64> {
    check_dim(logits_scaled.rows(), labels.len())?;
    if labels.is_empty() {
        return Err(argument("empty batch"));
    }
    let c = logits_scaled.cols();
    let mut total = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        if y >= c {
            return Err(argument(format!("label {y} out of range for {c} classes")));
        }
        total -= log_softmax(logits_scaled.row(i))[y];
    }
    Ok(total / labels.len() as f64)
}

/// `base_lr * (1 + cos(pi * step / total)) / 2`.
pub fn lr_schedule(step: u64, total_steps: u64, base_lr: f64) -> Result<f64> {
    if step > total_steps {
        return Err(argument(format!("step {step} beyond schedule length {total_steps}")));
    }
    if total_steps == 0 {
        return Ok(base_lr);
    }
    Ok(base_lr * 0.5 * (1.0 + libm::cos(PI * step as f64 / total_steps as f64)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
        }
    }
}

/// One AdamW update. `t` is the 1-based step used for bias correction.
pub fn optimizer_update(
    params: &mut [f64],
    grads: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    t: u64,
    lr: f64,
    hp: &AdamW,
) -> Result<()> {
    check_dim(params.len(), grads.len())?;
    check_dim(params.len(), m.len())?;
    check_dim(params.len(), v.len())?;
    if t == 0 {
        return Err(argument("AdamW step counter starts at 1"));
    }
    let bc1 = 1.0 - libm::pow(hp.beta1, t as f64);
    let bc2 = 1.0 - libm::pow(hp.beta2, t as f64);
    for i in 0..params.len() {
        let g = grads[i];
        m[i] = hp.beta1 * m[i] + (1.0 - hp.beta1) * g;
        v[i] = hp.beta2 * v[i] + (1.0 - hp.beta2) * g * g;
        let mh = m[i] / bc1;
        let vh = v[i] / bc2;
        params[i] *= 1.0 - lr * hp.weight_decay;
        params[i] -= lr * mh / (libm::sqrt(vh) + hp.eps);
    }
    Ok(())
}

/// Loss hyperparameters and optimizer settings.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// QIP loss factor.
    pub lambda: f64,
    /// Logit scale shared by the classical and quantum logits.
    pub scale: f64,
    /// L2-normalize `q_i` and `S_j` before the quantum logits.
    pub normalize_quantum: bool,
    /// Treat the classical distribution as a constant target in the KL term.
    pub detach_targets: bool,
    pub base_lr: f64,
    pub adam: AdamW,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 0.5,
            scale: 16.0,
            normalize_quantum: true,
            detach_targets: false,
            base_lr: 1e-3,
            adam: AdamW::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(config("lambda must be finite and non-negative"));
        }
        if !(self.scale > 0.0) || !self.scale.is_finite() {
            return Err(config("logit scale must be positive"));
        }
        if !(self.base_lr >= 0.0) {
            return Err(config("learning rate must be non-negative"));
        }
        Ok(())
    }
}

/// Architecture of a fresh training state.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub feature_dim: usize,
    pub n_classes: usize,
    pub encoder: EncodingKind,
    /// Register size for phase/U3; amplitude derives it from `feature_dim`.
    pub n_qubits: usize,
    pub observable: ObservableSpec,
}

impl ModelSpec {
    pub fn layer_dims(&self) -> Vec<usize> {
        let mut d = vec![self.input_dim];
        d.extend_from_slice(&self.hidden);
        d.push(self.feature_dim);
        d
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub mlp: Mlp,
    pub head: ClassifierHead,
    pub enc: EncodingSpec,
    pub obs: ObservableSpec,
    pub config: TrainConfig,
    /// First moments, flat parameter layout.
    pub moment1: Vec<f64>,
    /// Second moments, flat parameter layout.
    pub moment2: Vec<f64>,
    pub step: u64,
    pub total_steps: u64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossReport {
    /// Cross-entropy `L`.
    pub ce: f64,
    /// Information gap `K`.
    pub gap: f64,
    /// `L + lambda K`.
    pub total: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: u64,
    pub lr: f64,
    pub loss: LossReport,
}

impl TrainState {
    pub fn new(spec: &ModelSpec, config: TrainConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        if spec.n_classes < 1 {
            return Err(self::config("need at least one class"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mlp = Mlp::random(&spec.layer_dims(), &mut rng)?;
        let head = ClassifierHead::random(spec.feature_dim, spec.n_classes, &mut rng);
        let enc = EncodingSpec::build(spec.encoder, spec.feature_dim, spec.n_qubits, &mut rng)?;
        Self::from_parts(mlp, head, enc, spec.observable.clone(), config, seed)
    }

    pub fn from_parts(
        mlp: Mlp,
        head: ClassifierHead,
        enc: EncodingSpec,
        obs: ObservableSpec,
        config: TrainConfig,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        check_dim(mlp.output_dim(), head.dim())?;
        check_dim(head.dim(), enc.input_dim())?;
        let n = mlp.n_params() + head.weights().as_slice().len() + enc.n_params();
        Ok(Self {
            mlp,
            head,
            enc,
            obs,
            config,
            moment1: vec![0.0; n],
            moment2: vec![0.0; n],
            step: 0,
            total_steps: 0,
            seed,
        })
    }

    pub fn n_params(&self) -> usize {
        self.moment1.len()
    }

    /// All trainable parameters: MLP layers (weights row-major, then bias),
    /// classifier `W` row-major, encoder parameters.
    pub fn params_flat(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.n_params());
        for l in self.mlp.layers() {
            p.extend_from_slice(l.weights.as_slice());
            p.extend_from_slice(&l.bias);
        }
        p.extend_from_slice(self.head.weights().as_slice());
        p.extend_from_slice(self.enc.pqc_params());
        p
    }

    /// Inverse of [`TrainState::params_flat`]. Classifier columns are used
    /// as given, without renormalization.
    pub fn set_params_flat(&mut self, p: &[f64]) -> Result<()> {
        check_dim(self.n_params(), p.len())?;
        let mut off = 0;
        for l in self.mlp.layers.iter_mut() {
            let nw = l.weights.as_slice().len();
            l.weights.as_mut_slice().copy_from_slice(&p[off..off + nw]);
            off += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&p[off..off + nb]);
            off += nb;
        }
        let nh = self.head.w.as_slice().len();
        self.head.w.as_mut_slice().copy_from_slice(&p[off..off + nh]);
        off += nh;
        self.enc.pqc_params_mut().copy_from_slice(&p[off..]);
        Ok(())
    }

    /// Human-readable name of a flat parameter index.
    pub fn param_name(&self, idx: usize) -> String {
        let mut off = 0;
        for (li, l) in self.mlp.layers().iter().enumerate() {
            let nw = l.weights.as_slice().len();
            if idx < off + nw {
                return format!("mlp.{li}.weight[{}]", idx - off);
            }
            off += nw;
            if idx < off + l.bias.len() {
                return format!("mlp.{li}.bias[{}]", idx - off);
            }
            off += l.bias.len();
        }
        let nh = self.head.weights().as_slice().len();
        if idx < off + nh {
            return format!("head.W[{}]", idx - off);
        }
        off += nh;
        format!("encoder.pqc[{}]", idx - off)
    }

    /// Normalized features `v` for a batch.
    pub fn features(&self, x: &Matrix) -> Result<Matrix> {
        forward_features(&self.mlp, x).map_err(|e| self.fault_from(e))
    }

    /// Quantum features `q` of normalized features.
    pub fn quantum_features(&self, v: &Matrix) -> Result<Matrix> {
        crate::observe::quantum_map_rows(v, &self.enc, &self.obs)
    }

    /// Argmax class of `W^T v`.
    pub fn predict(&self, x: &Matrix) -> Result<Vec<usize>> {
        let v = self.features(x)?;
        let (w, _) = self.head.normalized();
        Ok((0..v.rows())
            .map(|i| {
                let mut best = (0, f64::NEG_INFINITY);
                for j in 0..w.cols() {
                    let s = dot(&w.column(j), v.row(i));
                    if s > best.1 {
                        best = (j, s);
                    }
                }
                best.0
            })
            .collect())
    }

    fn fault_from(&self, e: Error) -> Error {
        match e {
            Error::TrainingFault { param, reason, .. } => Error::TrainingFault {
                step: self.step,
                param,
                reason,
            },
            other => other,
        }
    }
}

/// Losses only, no gradient.
pub fn qip_loss(state: &TrainState, x: &Matrix, labels: &[usize]) -> Result<LossReport> {
    Ok(forward_backward(state, x, labels, false)?.0)
}

/// Losses and the gradient of `L_QIP` in the flat parameter layout.
pub fn qip_loss_and_grad(state: &TrainState, x: &Matrix, labels: &[usize]) -> Result<(LossReport, Vec<f64>)> {
    let (r, g) = forward_backward(state, x, labels, true)?;
    Ok((r, g.expect("requested")))
}

fn forward_backward(
    state: &TrainState,
    x: &Matrix,
    labels: &[usize],
    want_grad: bool,
) -> Result<(LossReport, Option<Vec<f64>>)> {
    let n = labels.len();
    if n == 0 {
        return Err(argument("empty batch"));
    }
    check_dim(n, x.rows())?;
    check_dim(state.mlp.input_dim(), x.cols())?;
    let cfg = &state.config;
    let s = cfg.scale;
    let n_classes = state.head.n_classes();
    let d = state.head.dim();

    let cache = state.mlp.forward_cache(x);
    let raw = cache.pre.last().expect("non-empty");
    if !raw.is_finite() {
        return Err(Error::TrainingFault {
            step: state.step,
            param: "features".to_string(),
            reason: "non-finite activations".to_string(),
        });
    }
    let (v, v_norms) = normalize_rows(raw);
    let (w_hat, w_norms) = state.head.normalized();
    let w_cols: Vec<Vec<f64>> = (0..n_classes).map(|j| w_hat.column(j)).collect();

    let mut logits = Matrix::zeros(n, n_classes);
    for i in 0..n {
        for j in 0..n_classes {
            logits[(i, j)] = s * dot(&w_cols[j], v.row(i));
        }
    }
    let ce = ce_loss(&logits, labels)?;
    let probs: Vec<Vec<f64>> = (0..n).map(|i| softmax(logits.row(i))).collect();

    let use_gap = cfg.lambda > 0.0;
    let mut gap = 0.0;
    // quantum side, only when it contributes
    let mut q_hat = Vec::new();
    let mut q_norms = Vec::new();
    let mut s_hat = Vec::new();
    let mut s_norms = Vec::new();
    let mut u_soft = Vec::new();
    if use_gap {
        let prep = |raw: Vec<f64>| -> (Vec<f64>, f64) {
            if cfg.normalize_quantum {
                let mut out = vec![0.0; raw.len()];
                let nrm = normalize_into(&raw, &mut out, QUANTUM_NORM_FLOOR);
                (out, nrm)
            } else {
                (raw, 1.0)
            }
        };
        for col in &w_cols {
            let (sh, nrm) = prep(quantum_map(col, &state.enc, &state.obs)?.into_vec());
            s_hat.push(sh);
            s_norms.push(nrm);
        }
        for i in 0..n {
            let (qh, nrm) = prep(quantum_map(v.row(i), &state.enc, &state.obs)?.into_vec());
            let y: Vec<f64> = s_hat.iter().map(|sj| s * dot(sj, &qh)).collect();
            let u = softmax(&y);
            gap += kl_unchecked(&probs[i], &u);
            u_soft.push(u);
            q_hat.push(qh);
            q_norms.push(nrm);
        }
        gap /= n as f64;
    }
    let total = ce + cfg.lambda * gap;
    let report = LossReport { ce, gap, total };
    if !total.is_finite() {
        return Err(Error::TrainingFault {
            step: state.step,
            param: "loss".to_string(),
            reason: format!("non-finite loss {total}"),
        });
    }
    if !want_grad {
        return Ok((report, None));
    }

    let inv_n = 1.0 / n as f64;
    let mut grad = vec![0.0; state.n_params()];
    let head_off = state.mlp.n_params();
    let pqc_off = head_off + d * n_classes;

    // dL/dz and, for the KL term, dK/dz and dK/dy
    let mut dz = Matrix::zeros(n, n_classes);
    let mut dy = Matrix::zeros(n, n_classes);
    for i in 0..n {
        let w = &probs[i];
        for j in 0..n_classes {
            dz[(i, j)] = (w[j] - if j == labels[i] { 1.0 } else { 0.0 }) * inv_n;
        }
        if use_gap {
            // exact gradient of the floored KL: entries of u below KL_EPS are
            // constants in the value, so they pass no gradient to y
            let u = &u_soft[i];
            let live: f64 = (0..n_classes).filter(|&j| u[j] > KL_EPS).map(|j| w[j]).sum();
            for j in 0..n_classes {
                let own = if u[j] > KL_EPS { w[j] } else { 0.0 };
                dy[(i, j)] = cfg.lambda * inv_n * (u[j] * live - own);
            }
            if !cfg.detach_targets {
                let lw = log_softmax(logits.row(i));
                let g: Vec<f64> = (0..n_classes)
                    .map(|j| if w[j] > 0.0 { lw[j] - libm::log(u[j].max(KL_EPS)) } else { 0.0 })
                    .collect();
                let mean = dot(w, &g);
                for j in 0..n_classes {
                    dz[(i, j)] += cfg.lambda * inv_n * w[j] * (g[j] - mean);
                }
            }
        }
    }

    let mut dv = Matrix::zeros(n, d);
    let mut dw_hat: Vec<Vec<f64>> = vec![vec![0.0; d]; n_classes];
    for i in 0..n {
        for j in 0..n_classes {
            let g = s * dz[(i, j)];
            if g == 0.0 {
                continue;
            }
            for k in 0..d {
                dv[(i, k)] += g * w_cols[j][k];
                dw_hat[j][k] += g * v[(i, k)];
            }
        }
    }

    if use_gap {
        let m = q_hat.first().map_or(0, |q| q.len());
        let mut ds_hat = vec![vec![0.0; m]; n_classes];
        let undo = |hat: &[f64], nrm: f64, g: Vec<f64>| -> Vec<f64> {
            if cfg.normalize_quantum {
                normalize_backward(hat, nrm, nrm <= QUANTUM_NORM_FLOOR, &g)
            } else {
                g
            }
        };
        for i in 0..n {
            let mut dq_hat = vec![0.0; m];
            for j in 0..n_classes {
                let g = s * dy[(i, j)];
                for k in 0..m {
                    dq_hat[k] += g * s_hat[j][k];
                    ds_hat[j][k] += g * q_hat[i][k];
                }
            }
            let dq = undo(&q_hat[i], q_norms[i], dq_hat);
            let mg = quantum_map_vjp(v.row(i), &state.enc, &state.obs, &dq)?;
            for (a, b) in dv.row_mut(i).iter_mut().zip(&mg.input) {
                *a += b;
            }
            for (a, b) in grad[pqc_off..].iter_mut().zip(&mg.params) {
                *a += b;
            }
        }
        for j in 0..n_classes {
            let ds = undo(&s_hat[j], s_norms[j], core::mem::take(&mut ds_hat[j]));
            let mg = quantum_map_vjp(&w_cols[j], &state.enc, &state.obs, &ds)?;
            for (a, b) in dw_hat[j].iter_mut().zip(&mg.input) {
                *a += b;
            }
            for (a, b) in grad[pqc_off..].iter_mut().zip(&mg.params) {
                *a += b;
            }
        }
    }

    // back through the normalizations
    let mut dh = Matrix::zeros(n, d);
    for i in 0..n {
        let g = normalize_backward(v.row(i), v_norms[i], v_norms[i] <= FEATURE_NORM_FLOOR, dv.row(i));
        dh.row_mut(i).copy_from_slice(&g);
    }
    for j in 0..n_classes {
        let g = normalize_backward(&w_cols[j], w_norms[j], w_norms[j] <= FEATURE_NORM_FLOOR, &dw_hat[j]);
        for k in 0..d {
            grad[head_off + k * n_classes + j] = g[k];
        }
    }
    state.mlp.backward(&cache, dh, &mut grad);

    if let Some(bad) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::TrainingFault {
            step: state.step,
            param: state.param_name(bad),
            reason: "non-finite gradient".to_string(),
        });
    }
    Ok((report, Some(grad)))
}

/// One optimization step on a batch. The returned report holds the losses
/// evaluated before the update.
pub fn qip_step(state: &mut TrainState, x: &Matrix, labels: &[usize]) -> Result<StepRecord> {
    let (report, grad) = qip_loss_and_grad(state, x, labels)?;
    let lr = lr_schedule(state.step, state.total_steps.max(state.step), state.config.base_lr)?;
    let mut params = state.params_flat();
    optimizer_update(
        &mut params,
        &grad,
        &mut state.moment1,
        &mut state.moment2,
        state.step + 1,
        lr,
        &state.config.adam,
    )?;
    state.set_params_flat(&params)?;
    state.head.renormalize();
    let record = StepRecord {
        step: state.step,
        lr,
        loss: report,
    };
    state.step += 1;
    Ok(record)
}

/// Number of minibatches per epoch (the last one may be short).
pub fn batches_per_epoch(n: usize, batch_size: usize) -> usize {
    n.div_ceil(batch_size)
}

/// Runs `epochs` passes over the data with a fresh cosine schedule spanning
/// exactly this call. Shuffling is seeded by the state's seed and step, so a
/// run is reproducible from `(seed, data, config)`.
pub fn fit(
    state: &mut TrainState,
    x: &Matrix,
    labels: &[usize],
    epochs: usize,
    batch_size: usize,
) -> Result<Vec<StepRecord>> {
    check_dim(x.rows(), labels.len())?;
    if epochs == 0 {
        return Ok(Vec::new());
    }
    if labels.is_empty() {
        return Err(argument("dataset is empty"));
    }
    if batch_size == 0 {
        return Err(config("batch size must be positive"));
    }
    let nb = batches_per_epoch(labels.len(), batch_size);
    state.total_steps = state.step + (epochs * nb) as u64;
    let mut history = Vec::with_capacity(epochs * nb);
    let mut order: Vec<usize> = (0..labels.len()).collect();
    for _ in 0..epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(state.seed ^ state.step.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch_size) {
            let xb = x.select_rows(chunk);
            let yb: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            history.push(qip_step(state, &xb, &yb)?);
        }
    }
    Ok(history)
}
