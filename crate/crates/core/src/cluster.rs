//! k-NN cluster proposals, a one-block quantum-attention refiner, cluster
//! assembly and the pairwise / BCubed F-scores.
//!
//! The refiner sees each proposal as a sequence of member tokens. A token is
//! the member's cosine similarity to the center followed by the elementwise
//! product of the two unit features, standardized with statistics fitted on
//! the training proposals. Tokens are projected to `h`
//! dims and each of Query, Key and Value is the measured output of a U3
//! circuit fed with the projected token. The attention output is mapped back
//! to `h` dims and added to the projected token; a logistic head on that sum
//! scores whether the member shares the center's class.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::encode::EncodingSpec;
use crate::error::{argument, check_dim, config, Error, Result};
use crate::matrix::{dot, normalize_into, softmax, Matrix};
use crate::observe::{quantum_map, quantum_map_vjp, ObservableSpec};
use crate::train::{lr_schedule, optimizer_update, AdamW};

const NORM_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterProposal {
    pub center: usize,
    /// Nearest first; the center itself leads.
    pub members: Vec<usize>,
    /// `k x m` features of `members`, in the same order.
    pub features: Matrix,
}

fn unit_rows(features: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(features.rows(), features.cols());
    for r in 0..features.rows() {
        normalize_into(features.row(r), out.row_mut(r), NORM_FLOOR);
    }
    out
}

/// Exact cosine k-NN, one proposal per sample. Ties go to the lower index.
pub fn knn_clusters(features: &Matrix, k: usize) -> Result<Vec<ClusterProposal>> {
    let n = features.rows();
    if k < 2 || k > n {
        return Err(argument(format!("k = {k} must lie in 2..={n}")));
    }
    if !features.is_finite() {
        return Err(argument("features contain non-finite values"));
    }
    let unit = unit_rows(features);
    let mut sims = vec![0.0; n];
    let mut order: Vec<usize> = Vec::with_capacity(n);
    (0..n)
        .map(|i| {
            let fi = unit.row(i);
            for (j, s) in sims.iter_mut().enumerate() {
                *s = dot(fi, unit.row(j));
            }
            order.clear();
            order.extend((0..n).filter(|&j| j != i));
            let cmp = |a: &usize, b: &usize| sims[*b].total_cmp(&sims[*a]).then(a.cmp(b));
            if k - 1 < order.len() {
                order.select_nth_unstable_by(k - 2, cmp);
                order.truncate(k - 1);
            }
            order.sort_unstable_by(cmp);
            let mut members = Vec::with_capacity(k);
            members.push(i);
            members.extend_from_slice(&order);
            let features = features.select_rows(&members);
            Ok(ClusterProposal {
                center: i,
                members,
                features,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefinerConfig {
    pub hidden: usize,
    pub n_qubits: usize,
    pub observable: ObservableSpec,
}

impl Default for RefinerConfig {
    fn default() -> Self {
        Self {
            hidden: 8,
            n_qubits: 3,
            observable: ObservableSpec::single(crate::qsim::PauliAxis::Z),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefinerModel {
    /// Per-coordinate token offset, `m + 1` values.
    pub token_shift: Vec<f64>,
    /// Per-coordinate token scale, `m + 1` values.
    pub token_scale: Vec<f64>,
    /// `h x (m + 1)`
    pub proj: Matrix,
    pub proj_bias: Vec<f64>,
    /// Query, key and value circuits over the `h`-dim projected token.
    pub heads: [EncodingSpec; 3],
    pub observable: ObservableSpec,
    /// `h x r` map from the attended values back to the token width.
    pub attn_out: Matrix,
    pub out_weights: Vec<f64>,
    pub out_bias: f64,
}

struct TokenPass {
    tokens: Matrix,
    embedded: Matrix,
    /// query, key, value outputs, each `k x r`
    qkv: [Matrix; 3],
    attn: Matrix,
    /// attended values, `k x r`
    mixed: Matrix,
    /// residual stream, `k x h`
    out: Matrix,
    probs: Vec<f64>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + libm::exp(-x))
}

impl RefinerModel {
    pub fn random<R: Rng + ?Sized>(input_dim: usize, cfg: &RefinerConfig, rng: &mut R) -> Result<Self> {
        if input_dim == 0 || cfg.hidden == 0 {
            return Err(config("refiner dims must be positive"));
        }
        let width = input_dim + 1;
        let bound = libm::sqrt(6.0 / width as f64);
        let proj = Matrix::from_vec(
            cfg.hidden,
            width,
            (0..cfg.hidden * width).map(|_| rng.random_range(-bound..bound)).collect(),
        )?;
        let heads = [
            EncodingSpec::u3_random(cfg.hidden, cfg.n_qubits, rng)?,
            EncodingSpec::u3_random(cfg.hidden, cfg.n_qubits, rng)?,
            EncodingSpec::u3_random(cfg.hidden, cfg.n_qubits, rng)?,
        ];
        let r = cfg.observable.output_len(cfg.n_qubits);
        let ob = 1.0 / libm::sqrt(r as f64);
        let attn_out = Matrix::from_vec(
            cfg.hidden,
            r,
            (0..cfg.hidden * r).map(|_| rng.random_range(-ob..ob)).collect(),
        )?;
        let hb = 1.0 / libm::sqrt(cfg.hidden as f64);
        Ok(Self {
            token_shift: vec![0.0; width],
            token_scale: vec![1.0; width],
            proj,
            proj_bias: vec![0.0; cfg.hidden],
            heads,
            observable: cfg.observable.clone(),
            attn_out,
            out_weights: (0..cfg.hidden).map(|_| rng.random_range(-hb..hb)).collect(),
            out_bias: 0.0,
        })
    }

    /// Feature width `m` of the proposals this model accepts.
    pub fn input_dim(&self) -> usize {
        self.proj.cols() - 1
    }

    fn raw_tokens(&self, features: &Matrix) -> Result<Matrix> {
        check_dim(self.input_dim(), features.cols())?;
        let unit = unit_rows(features);
        let m = unit.cols();
        let mut t = Matrix::zeros(unit.rows(), m + 1);
        for j in 0..unit.rows() {
            let mut cos = 0.0;
            for c in 0..m {
                let x = unit[(j, c)] * unit[(0, c)];
                t[(j, c + 1)] = x;
                cos += x;
            }
            t[(j, 0)] = cos;
        }
        Ok(t)
    }

    /// Fits the token standardization to the non-center members of
    /// `proposals`. Constant coordinates keep unit scale.
    pub fn fit_token_normalizer(&mut self, proposals: &[ClusterProposal]) -> Result<()> {
        let w = self.proj.cols();
        let (mut sum, mut sq, mut n) = (vec![0.0; w], vec![0.0; w], 0usize);
        for p in proposals {
            let t = self.raw_tokens(&p.features)?;
            for j in 1..t.rows() {
                for c in 0..w {
                    sum[c] += t[(j, c)];
                    sq[c] += t[(j, c)] * t[(j, c)];
                }
                n += 1;
            }
        }
        if n == 0 {
            return Ok(());
        }
        for c in 0..w {
            let mean = sum[c] / n as f64;
            let var = (sq[c] / n as f64 - mean * mean).max(0.0);
            let sd = libm::sqrt(var);
            self.token_shift[c] = mean;
            self.token_scale[c] = if sd > 1e-9 { 1.0 / sd } else { 1.0 };
        }
        Ok(())
    }

    fn head_width(&self) -> usize {
        self.observable.output_len(self.heads[0].n_qubits())
    }

    pub fn n_params(&self) -> usize {
        self.proj.as_slice().len()
            + self.proj_bias.len()
            + self.heads.iter().map(|h| h.n_params()).sum::<usize>()
            + self.attn_out.as_slice().len()
            + self.out_weights.len()
            + 1
    }

    /// Projection (row-major), projection bias, query/key/value circuit
    /// parameters, attention output map (row-major), output weights, output
    /// bias.
    pub fn params_flat(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.n_params());
        p.extend_from_slice(self.proj.as_slice());
        p.extend_from_slice(&self.proj_bias);
        for h in &self.heads {
            p.extend_from_slice(h.pqc_params());
        }
        p.extend_from_slice(self.attn_out.as_slice());
        p.extend_from_slice(&self.out_weights);
        p.push(self.out_bias);
        p
    }

    pub fn set_params_flat(&mut self, p: &[f64]) -> Result<()> {
        check_dim(self.n_params(), p.len())?;
        let mut off = 0;
        let mut take = |dst: &mut [f64]| {
            dst.copy_from_slice(&p[off..off + dst.len()]);
            off += dst.len();
        };
        take(self.proj.as_mut_slice());
        take(&mut self.proj_bias);
        for h in self.heads.iter_mut() {
            take(h.pqc_params_mut());
        }
        take(self.attn_out.as_mut_slice());
        take(&mut self.out_weights);
        self.out_bias = p[p.len() - 1];
        Ok(())
    }

    fn tokens(&self, features: &Matrix) -> Result<Matrix> {
        let mut t = self.raw_tokens(features)?;
        for j in 0..t.rows() {
            for (c, x) in t.row_mut(j).iter_mut().enumerate() {
                *x = (*x - self.token_shift[c]) * self.token_scale[c];
            }
        }
        Ok(t)
    }

    fn forward(&self, features: &Matrix) -> Result<TokenPass> {
        let tokens = self.tokens(features)?;
        let k = tokens.rows();
        let h = self.proj.rows();
        let r = self.head_width();
        let mut embedded = Matrix::zeros(k, h);
        for j in 0..k {
            for o in 0..h {
                embedded[(j, o)] = dot(self.proj.row(o), tokens.row(j)) + self.proj_bias[o];
            }
        }
        let mut qkv = [Matrix::zeros(k, r), Matrix::zeros(k, r), Matrix::zeros(k, r)];
        for (head, out) in self.heads.iter().zip(qkv.iter_mut()) {
            for j in 0..k {
                let q = quantum_map(embedded.row(j), head, &self.observable)?;
                out.row_mut(j).copy_from_slice(q.values());
            }
        }
        let inv_sqrt = 1.0 / libm::sqrt(r as f64);
        let mut attn = Matrix::zeros(k, k);
        let mut mixed = Matrix::zeros(k, r);
        for j in 0..k {
            let scores: Vec<f64> = (0..k).map(|l| dot(qkv[0].row(j), qkv[1].row(l)) * inv_sqrt).collect();
            let a = softmax(&scores);
            for l in 0..k {
                attn[(j, l)] = a[l];
                for c in 0..r {
                    mixed[(j, c)] += a[l] * qkv[2][(l, c)];
                }
            }
        }
        let mut out = embedded.clone();
        for j in 0..k {
            for o in 0..h {
                out[(j, o)] += dot(self.attn_out.row(o), mixed.row(j));
            }
        }
        let probs = (0..k)
            .map(|j| sigmoid(dot(&self.out_weights, out.row(j)) + self.out_bias))
            .collect();
        Ok(TokenPass {
            tokens,
            embedded,
            qkv,
            attn,
            mixed,
            out,
            probs,
        })
    }

    /// Accumulates into `grad` the gradient of `sum_j dlogit[j] * logit_j`.
    fn backward(&self, pass: &TokenPass, dlogit: &[f64], grad: &mut [f64]) -> Result<()> {
        let k = pass.tokens.rows();
        let h = self.proj.rows();
        let m = self.proj.cols();
        let r = self.head_width();
        let inv_sqrt = 1.0 / libm::sqrt(r as f64);
        let n_proj = h * m;
        let mut head_off = [0usize; 3];
        let mut off = n_proj + h;
        for (i, hd) in self.heads.iter().enumerate() {
            head_off[i] = off;
            off += hd.n_params();
        }
        let ao_off = off;
        let out_off = ao_off + h * r;

        let mut de = Matrix::zeros(k, h);
        let mut dqkv = [Matrix::zeros(k, r), Matrix::zeros(k, r), Matrix::zeros(k, r)];
        for j in 0..k {
            let g = dlogit[j];
            if g == 0.0 {
                continue;
            }
            for o in 0..h {
                grad[out_off + o] += g * pass.out[(j, o)];
            }
            grad[out_off + h] += g;
            let d_out: Vec<f64> = self.out_weights.iter().map(|w| g * w).collect();
            // residual
            for (d, x) in de.row_mut(j).iter_mut().zip(&d_out) {
                *d += x;
            }
            let mut d_mixed = vec![0.0; r];
            for o in 0..h {
                for c in 0..r {
                    grad[ao_off + o * r + c] += d_out[o] * pass.mixed[(j, c)];
                    d_mixed[c] += d_out[o] * self.attn_out[(o, c)];
                }
            }
            let da: Vec<f64> = (0..k).map(|l| dot(&d_mixed, pass.qkv[2].row(l))).collect();
            for l in 0..k {
                let a = pass.attn[(j, l)];
                for c in 0..r {
                    dqkv[2][(l, c)] += a * d_mixed[c];
                }
            }
            let mean: f64 = (0..k).map(|l| pass.attn[(j, l)] * da[l]).sum();
            for l in 0..k {
                let ds = pass.attn[(j, l)] * (da[l] - mean) * inv_sqrt;
                for c in 0..r {
                    dqkv[0][(j, c)] += ds * pass.qkv[1][(l, c)];
                    dqkv[1][(l, c)] += ds * pass.qkv[0][(j, c)];
                }
            }
        }

        for (hi, head) in self.heads.iter().enumerate() {
            for j in 0..k {
                let g = dqkv[hi].row(j);
                if g.iter().all(|x| *x == 0.0) {
                    continue;
                }
                let mg = quantum_map_vjp(pass.embedded.row(j), head, &self.observable, g)?;
                for (a, b) in de.row_mut(j).iter_mut().zip(&mg.input) {
                    *a += b;
                }
                for (a, b) in grad[head_off[hi]..].iter_mut().zip(&mg.params) {
                    *a += b;
                }
            }
        }
        for j in 0..k {
            for o in 0..h {
                let g = de[(j, o)];
                grad[n_proj + o] += g;
                for c in 0..m {
                    grad[o * m + c] += g * pass.tokens[(j, c)];
                }
            }
        }
        Ok(())
    }
}

/// Probability that each member shares the center's class.
pub fn refine(proposal: &ClusterProposal, model: &RefinerModel) -> Result<Vec<f64>> {
    Ok(model.forward(&proposal.features)?.probs)
}

/// Per-target weights of the refiner's binary cross-entropy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetWeights {
    /// Members sharing the center's class.
    pub keep: f64,
    /// Members from another class.
    pub drop: f64,
}

impl Default for TargetWeights {
    fn default() -> Self {
        Self { keep: 1.0, drop: 1.0 }
    }
}

impl TargetWeights {
    /// Inverse-frequency weights so both targets carry equal total weight.
    /// Falls back to unit weights when one target never occurs.
    pub fn balanced(proposals: &[ClusterProposal], labels: &[usize]) -> Self {
        let (mut keep, mut drop) = (0usize, 0usize);
        for p in proposals {
            let c = labels.get(p.center);
            for m in &p.members[1..] {
                if labels.get(*m) == c {
                    keep += 1;
                } else {
                    drop += 1;
                }
            }
        }
        if keep == 0 || drop == 0 {
            return Self::default();
        }
        let total = (keep + drop) as f64;
        Self {
            keep: total / (2.0 * keep as f64),
            drop: total / (2.0 * drop as f64),
        }
    }
}

/// Mean weighted binary cross-entropy over non-center members.
pub fn refiner_loss(
    model: &RefinerModel,
    proposals: &[ClusterProposal],
    labels: &[usize],
    weights: TargetWeights,
) -> Result<f64> {
    Ok(refiner_loss_and_grad(model, proposals, labels, weights, false)?.0)
}

/// Loss and gradient in the flat layout of [`RefinerModel::params_flat`].
pub fn refiner_loss_and_grad(
    model: &RefinerModel,
    proposals: &[ClusterProposal],
    labels: &[usize],
    weights: TargetWeights,
    want_grad: bool,
) -> Result<(f64, Vec<f64>)> {
    let count: usize = proposals.iter().map(|p| p.members.len().saturating_sub(1)).sum();
    let mut grad = vec![0.0; if want_grad { model.n_params() } else { 0 }];
    if count == 0 {
        return Ok((0.0, grad));
    }
    let inv = 1.0 / count as f64;
    let mut loss = 0.0;
    for p in proposals {
        let pass = model.forward(&p.features)?;
        let center_label = *labels
            .get(p.center)
            .ok_or_else(|| argument(format!("no label for sample {}", p.center)))?;
        let mut dlogit = vec![0.0; p.members.len()];
        for (j, &member) in p.members.iter().enumerate().skip(1) {
            let prob = pass.probs[j];
            if labels.get(member) == Some(&center_label) {
                loss -= inv * weights.keep * libm::log(prob.max(1e-300));
                dlogit[j] = inv * weights.keep * (prob - 1.0);
            } else {
                loss -= inv * weights.drop * libm::log((1.0 - prob).max(1e-300));
                dlogit[j] = inv * weights.drop * prob;
            }
        }
        if want_grad {
            model.backward(&pass, &dlogit, &mut grad)?;
        }
    }
    Ok((loss, grad))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefinerTrainConfig {
    pub epochs: usize,
    /// Proposals per optimizer step.
    pub batch_size: usize,
    pub base_lr: f64,
    pub adam: AdamW,
    /// Weight the two targets by inverse frequency.
    pub balance_classes: bool,
    pub seed: u64,
}

impl Default for RefinerTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 32,
            base_lr: 5e-2,
            adam: AdamW::default(),
            balance_classes: true,
            seed: 0,
        }
    }
}

/// Fits the token standardization, then trains the refiner with binary
/// cross-entropy against "member label equals center label", optionally
/// class-balanced. Returns the mean loss per epoch.
pub fn train_refiner(
    model: &mut RefinerModel,
    proposals: &[ClusterProposal],
    labels: &[usize],
    cfg: &RefinerTrainConfig,
) -> Result<Vec<f64>> {
    if cfg.epochs == 0 {
        return Ok(Vec::new());
    }
    if proposals.is_empty() {
        return Err(argument("no proposals to train on"));
    }
    if cfg.batch_size == 0 {
        return Err(config("batch size must be positive"));
    }
    let nb = proposals.len().div_ceil(cfg.batch_size);
    let total = (cfg.epochs * nb) as u64;
    let mut m1 = vec![0.0; model.n_params()];
    let mut m2 = vec![0.0; model.n_params()];
    model.fit_token_normalizer(proposals)?;
    let weights = if cfg.balance_classes {
        TargetWeights::balanced(proposals, labels)
    } else {
        TargetWeights::default()
    };
    let mut order: Vec<usize> = (0..proposals.len()).collect();
    let mut step = 0u64;
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<ClusterProposal> = chunk.iter().map(|&i| proposals[i].clone()).collect();
            let (loss, grad) = refiner_loss_and_grad(model, &batch, labels, weights, true)?;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::TrainingFault {
                    step,
                    param: "refiner".into(),
                    reason: format!("non-finite loss or gradient ({loss})"),
                });
            }
            epoch_loss += loss * chunk.len() as f64;
            let lr = lr_schedule(step, total, cfg.base_lr)?;
            let mut params = model.params_flat();
            optimizer_update(&mut params, &grad, &mut m1, &mut m2, step + 1, lr, &cfg.adam)?;
            model.set_params_flat(&params)?;
            step += 1;
        }
        history.push(epoch_loss / proposals.len() as f64);
    }
    Ok(history)
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

/// Links each center to the members whose keep probability reaches
/// `threshold`; connected components become clusters. Cluster ids are
/// assigned in order of each component's lowest sample index.
pub fn assemble_clusters(
    n_samples: usize,
    proposals: &[ClusterProposal],
    keep_probs: &[Vec<f64>],
    threshold: f64,
) -> Result<Vec<usize>> {
    check_dim(proposals.len(), keep_probs.len())?;
    let mut uf = UnionFind::new(n_samples);
    for (p, probs) in proposals.iter().zip(keep_probs) {
        check_dim(p.members.len(), probs.len())?;
        for (&member, &prob) in p.members.iter().zip(probs).skip(1) {
            if member >= n_samples || p.center >= n_samples {
                return Err(argument(format!("sample index out of range for {n_samples} samples")));
            }
            if prob >= threshold {
                uf.union(p.center, member);
            }
        }
    }
    let mut ids = BTreeMap::new();
    Ok((0..n_samples)
        .map(|i| {
            let root = uf.find(i);
            let next = ids.len();
            *ids.entry(root).or_insert(next)
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairwiseScore {
    pub precision: f64,
    pub recall: f64,
    /// Harmonic mean of pair precision and recall.
    pub f_score: f64,
    /// Geometric mean (Fowlkes-Mallows index).
    pub fowlkes_mallows: f64,
    /// Set when there are no same-cluster pairs on either side; the scores
    /// involving the empty side are then reported as 0.
    pub degenerate: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BCubedScore {
    pub precision: f64,
    pub recall: f64,
    pub f_score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusteringResult {
    pub labels: Vec<usize>,
    pub pairwise: PairwiseScore,
    pub bcubed: BCubedScore,
}

struct Contingency {
    joint: BTreeMap<(usize, usize), u64>,
    pred: BTreeMap<usize, u64>,
    truth: BTreeMap<usize, u64>,
}

fn contingency(pred: &[usize], truth: &[usize]) -> Contingency {
    let mut c = Contingency {
        joint: BTreeMap::new(),
        pred: BTreeMap::new(),
        truth: BTreeMap::new(),
    };
    for (&p, &t) in pred.iter().zip(truth) {
        *c.joint.entry((p, t)).or_default() += 1;
        *c.pred.entry(p).or_default() += 1;
        *c.truth.entry(t).or_default() += 1;
    }
    c
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

fn pairs(n: u64) -> u64 {
    n * n.saturating_sub(1) / 2
}

/// Pair-counting precision, recall and F over all unordered sample pairs.
pub fn pairwise_f(pred: &[usize], truth: &[usize]) -> Result<PairwiseScore> {
    check_dim(truth.len(), pred.len())?;
    if pred.len() < 2 {
        return Err(argument("pairwise F needs at least two samples"));
    }
    let c = contingency(pred, truth);
    let both: u64 = c.joint.values().map(|&n| pairs(n)).sum();
    let same_pred: u64 = c.pred.values().map(|&n| pairs(n)).sum();
    let same_true: u64 = c.truth.values().map(|&n| pairs(n)).sum();
    let ratio = |a: u64, b: u64| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let precision = ratio(both, same_pred);
    let recall = ratio(both, same_true);
    Ok(PairwiseScore {
        precision,
        recall,
        f_score: harmonic(precision, recall),
        fowlkes_mallows: libm::sqrt(precision * recall),
        degenerate: same_pred == 0 || same_true == 0,
    })
}

/// BCubed precision, recall and F averaged over items.
pub fn bcubed_f(pred: &[usize], truth: &[usize]) -> Result<BCubedScore> {
    check_dim(truth.len(), pred.len())?;
    if pred.is_empty() {
        return Err(argument("BCubed needs at least one sample"));
    }
    let c = contingency(pred, truth);
    let mut precision = 0.0;
    let mut recall = 0.0;
    for (&(p, t), &n) in &c.joint {
        let n = n as f64;
        precision += n * n / c.pred[&p] as f64;
        recall += n * n / c.truth[&t] as f64;
    }
    let total = pred.len() as f64;
    precision /= total;
    recall /= total;
    Ok(BCubedScore {
        precision,
        recall,
        f_score: harmonic(precision, recall),
    })
}

pub fn evaluate(pred: Vec<usize>, truth: &[usize]) -> Result<ClusteringResult> {
    let pairwise = pairwise_f(&pred, truth)?;
    let bcubed = bcubed_f(&pred, truth)?;
    Ok(ClusteringResult {
        labels: pred,
        pairwise,
        bcubed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_rows_tie_break_by_index() {
        let f = Matrix::from_rows(&[[1.0, 2.0], [1.0, 2.0], [1.0, 2.0]], 2).unwrap();
        let p = knn_clusters(&f, 3).unwrap();
        assert_eq!(p[0].members, [0, 1, 2]);
        assert_eq!(p[1].members, [1, 0, 2]);
        assert_eq!(p[2].members, [2, 0, 1]);
    }

    #[test]
    fn one_hot_rows_pick_lowest_other_index() {
        let f = Matrix::identity(4);
        let p = knn_clusters(&f, 2).unwrap();
        assert_eq!(p[0].members, [0, 1]);
        assert_eq!(p[1].members, [1, 0]);
        assert_eq!(p[3].members, [3, 0]);
        assert!(knn_clusters(&f, 1).is_err());
        assert!(knn_clusters(&f, 5).is_err());
    }

    #[test]
    fn worked_metric_example() {
        let pred = [0, 0, 0, 1];
        let truth = [0, 0, 1, 1];
        let pw = pairwise_f(&pred, &truth).unwrap();
        assert!((pw.precision - 1.0 / 3.0).abs() < 1e-15);
        assert!((pw.recall - 0.5).abs() < 1e-15);
        assert!((pw.f_score - 0.4).abs() < 1e-15);
        let b = bcubed_f(&pred, &truth).unwrap();
        assert!((b.precision - 2.0 / 3.0).abs() < 1e-15);
        assert!((b.recall - 0.75).abs() < 1e-15);
        assert!((b.f_score - 12.0 / 17.0).abs() < 1e-15);
    }

    #[test]
    fn perfect_and_singleton_clusterings() {
        let truth = [3, 3, 1, 1, 1, 7];
        assert_eq!(pairwise_f(&truth, &truth).unwrap().f_score, 1.0);
        assert_eq!(bcubed_f(&truth, &truth).unwrap().f_score, 1.0);
        let singles: Vec<usize> = (0..6).collect();
        let b = bcubed_f(&singles, &truth).unwrap();
        assert_eq!(b.precision, 1.0);
        let expected = (2.0 * 0.5 + 3.0 / 3.0 + 1.0) / 6.0;
        assert!((b.recall - expected).abs() < 1e-15);
        let pw = pairwise_f(&singles, &truth).unwrap();
        assert!(pw.degenerate);
        assert_eq!(pw.f_score, 0.0);
    }

    #[test]
    fn assembly_extremes() {
        let f = Matrix::from_rows(&[[1.0, 0.1], [1.0, 0.2], [1.0, 0.3]], 2).unwrap();
        let p = knn_clusters(&f, 3).unwrap();
        let ones: Vec<Vec<f64>> = p.iter().map(|q| vec![1.0; q.members.len()]).collect();
        assert_eq!(assemble_clusters(3, &p, &ones, 0.5).unwrap(), [0, 0, 0]);
        let zeros: Vec<Vec<f64>> = p.iter().map(|q| vec![0.0; q.members.len()]).collect();
        assert_eq!(assemble_clusters(3, &p, &zeros, 0.5).unwrap(), [0, 1, 2]);
    }

    #[test]
    fn singleton_proposal_refines_to_one_probability() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let model = RefinerModel::random(3, &RefinerConfig::default(), &mut rng).unwrap();
        let p = ClusterProposal {
            center: 0,
            members: vec![0],
            features: Matrix::from_vec(1, 3, vec![0.2, 0.5, -0.1]).unwrap(),
        };
        let probs = refine(&p, &model).unwrap();
        assert_eq!(probs.len(), 1);
        assert!((0.0..=1.0).contains(&probs[0]));
    }

    #[test]
    fn zero_epochs_leave_refiner_untouched() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut model = RefinerModel::random(2, &RefinerConfig::default(), &mut rng).unwrap();
        let before = model.clone();
        let cfg = RefinerTrainConfig {
            epochs: 0,
            ..RefinerTrainConfig::default()
        };
        assert!(train_refiner(&mut model, &[], &[], &cfg).unwrap().is_empty());
        assert_eq!(model, before);
    }
}
