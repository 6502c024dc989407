//! Quantum information gap measures.
//!
//! For two states and a single-pass observable, the measured dot product is
//! `q1 . q2 = <psi1| A |psi2>` with `A = sum_i O_i |psi1><psi2| O_i`. Because
//! every `O_i` squares to the identity, `tr(A) = n <psi2|psi1>`, which has
//! modulus below `n` whenever the states differ, so `A` is never the identity
//! and the dot product cannot reproduce the state overlap in general.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::encode::EncodingSpec;
use crate::error::{argument, check_dim, Result};
use crate::matrix::{dot, normalize_into, softmax, Matrix};
use crate::observe::{measure, quantum_map, ObservableSpec};
use crate::qsim::{kernel, StateVector, C64};

/// Largest register for which `A` is built densely.
pub const DENSE_WITNESS_MAX_QUBITS: usize = 6;

/// Floor applied to the second KL argument before the logarithm.
pub const KL_EPS: f64 = 1e-12;

/// Norm floor used when normalizing quantum features and centers.
pub const QUANTUM_NORM_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GapReport {
    /// `<psi1|psi2>`
    pub state_overlap: C64,
    /// `q1 . q2`
    pub q_dot: f64,
    /// `| |<psi1|psi2>| - q1 . q2 |`
    pub abs_gap: f64,
    /// `tr(A)`, computed from the operator itself.
    pub witness_trace: C64,
    /// `n <psi2|psi1>`
    pub predicted_trace: C64,
}

impl GapReport {
    pub fn witness_residual(&self) -> f64 {
        (self.witness_trace - self.predicted_trace).norm()
    }
}

fn single_axis(obs: &ObservableSpec) -> Result<crate::qsim::PauliAxis> {
    match obs.passes() {
        [axis] => Ok(*axis),
        _ => Err(argument(format!("gap analysis needs a single-pass observable, got `{obs}`"))),
    }
}

/// Dense `A = sum_i O_i |psi1><psi2| O_i`, row-major `2^n x 2^n`.
pub fn witness_matrix(psi1: &StateVector, psi2: &StateVector, obs: &ObservableSpec) -> Result<Vec<C64>> {
    let axis = single_axis(obs)?;
    check_dim(psi1.amplitudes().len(), psi2.amplitudes().len())?;
    let n = psi1.n_qubits();
    if n > DENSE_WITNESS_MAX_QUBITS {
        return Err(argument(format!(
            "dense witness limited to {DENSE_WITNESS_MAX_QUBITS} qubits"
        )));
    }
    let dim = 1 << n;
    let mut a = vec![C64::new(0.0, 0.0); dim * dim];
    for q in 0..n {
        let mut o1 = psi1.amplitudes().to_vec();
        let mut o2 = psi2.amplitudes().to_vec();
        kernel::apply_pauli(&mut o1, n, q, axis);
        kernel::apply_pauli(&mut o2, n, q, axis);
        // O|psi1> (O|psi2>)^dagger, using O = O^dagger.
        for r in 0..dim {
            for c in 0..dim {
                a[r * dim + c] += o1[r] * o2[c].conj();
            }
        }
    }
    Ok(a)
}

pub fn gap_pair(psi1: &StateVector, psi2: &StateVector, obs: &ObservableSpec) -> Result<GapReport> {
    let axis = single_axis(obs)?;
    let state_overlap = psi1.inner(psi2)?;
    let n = psi1.n_qubits();
    let q1 = measure(psi1, obs);
    let q2 = measure(psi2, obs);
    let q_dot = dot(q1.values(), q2.values());

    let witness_trace = if n <= DENSE_WITNESS_MAX_QUBITS {
        let a = witness_matrix(psi1, psi2, obs)?;
        let dim = 1 << n;
        (0..dim).map(|i| a[i * dim + i]).sum()
    } else {
        // tr(O|psi1><psi2|O) = <O psi2 | O psi1>
        (0..n)
            .map(|q| {
                let mut o1 = psi1.amplitudes().to_vec();
                let mut o2 = psi2.amplitudes().to_vec();
                kernel::apply_pauli(&mut o1, n, q, axis);
                kernel::apply_pauli(&mut o2, n, q, axis);
                kernel::inner(&o2, &o1)
            })
            .sum()
    };
    let predicted_trace = state_overlap.conj() * n as f64;
    Ok(GapReport {
        state_overlap,
        q_dot,
        abs_gap: (state_overlap.norm() - q_dot).abs(),
        witness_trace,
        predicted_trace,
    })
}

fn check_distribution(p: &[f64], which: &str) -> Result<()> {
    if p.iter().any(|x| !(*x >= 0.0)) {
        return Err(argument(format!("{which} has negative or NaN entries")));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > 1e-8 {
        return Err(argument(format!("{which} sums to {s}, not 1")));
    }
    Ok(())
}

/// `KL(p || q) = sum_j p_j log(p_j / max(q_j, eps))`, with `0 log 0 = 0`.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    check_dim(p.len(), q.len())?;
    check_distribution(p, "first distribution")?;
    check_distribution(q, "second distribution")?;
    Ok(kl_unchecked(p, q))
}

pub(crate) fn kl_unchecked(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(pj, _)| **pj > 0.0)
        .map(|(pj, qj)| pj * (libm::log(*pj) - libm::log(qj.max(KL_EPS))))
        .sum()
}

fn check_unit(v: &[f64], what: &str) -> Result<()> {
    let n = crate::matrix::norm(v);
    if (n - 1.0).abs() > 1e-8 {
        return Err(argument(format!("{what} has norm {n}, expected 1")));
    }
    Ok(())
}

/// Quantum features of every row, optionally L2-normalized.
pub(crate) fn quantum_rows(
    rows: &Matrix,
    enc: &EncodingSpec,
    obs: &ObservableSpec,
    normalize: bool,
) -> Result<Matrix> {
    let mut out = crate::observe::quantum_map_rows(rows, enc, obs)?;
    if normalize {
        for r in 0..out.rows() {
            let raw = out.row(r).to_vec();
            normalize_into(&raw, out.row_mut(r), QUANTUM_NORM_FLOOR);
        }
    }
    Ok(out)
}

/// `K = 1/N sum_i KL(softmax(s W^T v_i) || softmax(s S^T q_i))` where
/// `S_j = Q(W_j)` and `q_i = Q(v_i)`.
pub fn information_gap(
    w: &Matrix,
    v_batch: &Matrix,
    enc: &EncodingSpec,
    obs: &ObservableSpec,
    normalize_quantum: bool,
    scale: f64,
) -> Result<f64> {
    check_dim(w.rows(), v_batch.cols())?;
    if v_batch.rows() == 0 {
        return Err(argument("empty batch"));
    }
    for j in 0..w.cols() {
        check_unit(&w.column(j), "classifier column")?;
    }
    for i in 0..v_batch.rows() {
        check_unit(v_batch.row(i), "feature row")?;
    }
    let centers = quantum_rows(&w.transpose(), enc, obs, normalize_quantum)?;
    let mut total = 0.0;
    for i in 0..v_batch.rows() {
        let v = v_batch.row(i);
        let q = quantum_map(v, enc, obs)?.into_vec();
        let q = if normalize_quantum {
            let mut out = vec![0.0; q.len()];
            normalize_into(&q, &mut out, QUANTUM_NORM_FLOOR);
            out
        } else {
            q
        };
        let z: Vec<f64> = (0..w.cols()).map(|j| scale * dot(&w.column(j), v)).collect();
        let y: Vec<f64> = (0..centers.rows()).map(|j| scale * dot(centers.row(j), &q)).collect();
        total += kl_unchecked(&softmax(&z), &softmax(&y));
    }
    Ok(total / v_batch.rows() as f64)
}
