//! Per-qubit Pauli measurement and the full feature map `v -> q`.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::encode::{amplitude_state, check_feature, run_ops, AngleSource, EncodingKind, EncodingSpec, Op};
use crate::error::{config, Error, Result};
use crate::matrix::Matrix;
use crate::qsim::{kernel, rotation_unchecked, PauliAxis, StateVector, C64};

/// Ordered measurement passes; each pass measures one Pauli axis on every
/// qubit. `"XZ"` is a full X pass followed by a full Z pass.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ObservableSpec {
    passes: Vec<PauliAxis>,
}

impl ObservableSpec {
    pub fn new(passes: Vec<PauliAxis>) -> Result<Self> {
        if passes.is_empty() {
            return Err(config("observable needs at least one pass"));
        }
        Ok(Self { passes })
    }

    pub fn single(axis: PauliAxis) -> Self {
        Self { passes: vec![axis] }
    }

    #[inline]
    pub fn passes(&self) -> &[PauliAxis] {
        &self.passes
    }

    /// Output length for an `n`-qubit register.
    #[inline]
    pub fn output_len(&self, n_qubits: usize) -> usize {
        self.passes.len() * n_qubits
    }
}

impl FromStr for ObservableSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let passes = s
            .chars()
            .map(|c| PauliAxis::from_char(c).ok_or_else(|| config(format!("invalid observable `{s}`"))))
            .collect::<Result<Vec<_>>>()?;
        Self::new(passes)
    }
}

impl fmt::Display for ObservableSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s: String = self.passes.iter().map(|p| p.as_char()).collect();
        f.write_str(&s)
    }
}

/// Measured expectations, pass-major: all qubits of pass 0, then pass 1, ...
#[derive(Debug, Clone, PartialEq)]
pub struct QuantumFeature(pub Vec<f64>);

impl QuantumFeature {
    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

pub fn measure(state: &StateVector, obs: &ObservableSpec) -> QuantumFeature {
    let n = state.n_qubits();
    let mut out = Vec::with_capacity(obs.output_len(n));
    for &axis in &obs.passes {
        for q in 0..n {
            out.push(kernel::expectation(state.amplitudes(), n, q, axis).clamp(-1.0, 1.0));
        }
    }
    QuantumFeature(out)
}

/// `q = Q(v, E, O)`.
pub fn quantum_map(v: &[f64], enc: &EncodingSpec, obs: &ObservableSpec) -> Result<QuantumFeature> {
    let state = crate::encode::encode(v, enc)?;
    Ok(measure(&state, obs))
}

/// Applies `quantum_map` to every row.
pub fn quantum_map_rows(rows: &Matrix, enc: &EncodingSpec, obs: &ObservableSpec) -> Result<Matrix> {
    let m = obs.output_len(enc.n_qubits());
    let mut out = Matrix::zeros(rows.rows(), m);
    for r in 0..rows.rows() {
        let q = quantum_map(rows.row(r), enc, obs)?;
        out.row_mut(r).copy_from_slice(q.values());
    }
    Ok(out)
}

/// Gradient of `g . Q(v)` with respect to the feature and the encoder
/// parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct MapGradient {
    pub input: Vec<f64>,
    pub params: Vec<f64>,
}

/// `phi = sum_k g_k O_k |psi>`.
fn weighted_observable(state: &[C64], n: usize, obs: &ObservableSpec, g: &[f64]) -> Vec<C64> {
    let mut phi = vec![C64::new(0.0, 0.0); state.len()];
    let mut scratch = vec![C64::new(0.0, 0.0); state.len()];
    for (p, &axis) in obs.passes.iter().enumerate() {
        for q in 0..n {
            let w = g[p * n + q];
            if w == 0.0 {
                continue;
            }
            scratch.copy_from_slice(state);
            kernel::apply_pauli(&mut scratch, n, q, axis);
            for (a, b) in phi.iter_mut().zip(&scratch) {
                *a += b * w;
            }
        }
    }
    phi
}

/// Vector-Jacobian product `g^T dq/d(v, theta)` by reverse accumulation
/// through the circuit.
pub fn quantum_map_vjp(v: &[f64], enc: &EncodingSpec, obs: &ObservableSpec, g: &[f64]) -> Result<MapGradient> {
    check_feature(v, enc)?;
    let n = enc.n_qubits();
    crate::error::check_dim(obs.output_len(n), g.len())?;
    let mut grad_v = vec![0.0; v.len()];
    let mut grad_p = vec![0.0; enc.n_params()];

    match enc.kind() {
        EncodingKind::Amplitude => {
            let (state, norm) = amplitude_state(v, n)?;
            let phi = weighted_observable(state.amplitudes(), n, obs, g);
            // f = a^T Re(H) a for real a, so df/da = 2 Re(H a).
            let ga: Vec<f64> = phi[..v.len()].iter().map(|c| 2.0 * c.re).collect();
            let a: Vec<f64> = state.amplitudes()[..v.len()].iter().map(|c| c.re).collect();
            let proj = crate::matrix::dot(&a, &ga);
            for i in 0..v.len() {
                grad_v[i] = (ga[i] - a[i] * proj) / norm;
            }
        }
        EncodingKind::Phase | EncodingKind::U3 => {
            let ops = enc.circuit();
            let mut psi = run_ops(enc, &ops, v).into_amplitudes();
            let mut phi = weighted_observable(&psi, n, obs, g);
            let mut scratch = vec![C64::new(0.0, 0.0); psi.len()];
            for op in ops.iter().rev() {
                match *op {
                    Op::Rot { qubit, axis, angle } => {
                        // dR/dtheta = -i/2 P R  =>  df/dtheta = Im <phi| P |psi>
                        scratch.copy_from_slice(&psi);
                        kernel::apply_pauli(&mut scratch, n, qubit, axis);
                        let d = kernel::inner(&phi, &scratch).im;
                        match angle {
                            AngleSource::Data(i) => grad_v[i] += d,
                            AngleSource::Param(i) => grad_p[i] += d,
                        }
                        let inv = rotation_unchecked(axis, -enc.angle(angle, v));
                        kernel::apply_1q(&mut psi, n, qubit, &inv);
                        kernel::apply_1q(&mut phi, n, qubit, &inv);
                    }
                    Op::Cnot { control, target } => {
                        kernel::apply_cnot(&mut psi, n, control, target);
                        kernel::apply_cnot(&mut phi, n, control, target);
                    }
                }
            }
        }
    }
    Ok(MapGradient {
        input: grad_v,
        params: grad_p,
    })
}

/// Full Jacobian of the feature map.
#[derive(Debug, Clone, PartialEq)]
pub struct MapJacobian {
    /// `m x d`
    pub input: Matrix,
    /// `m x n_params`; zero columns unless the encoder is trainable.
    pub params: Matrix,
}

/// Exact Jacobian, one adjoint pass per output.
pub fn quantum_map_jacobian(v: &[f64], enc: &EncodingSpec, obs: &ObservableSpec) -> Result<MapJacobian> {
    let m = obs.output_len(enc.n_qubits());
    let mut input = Matrix::zeros(m, v.len());
    let mut params = Matrix::zeros(m, enc.n_params());
    let mut g = vec![0.0; m];
    for k in 0..m {
        g.iter_mut().for_each(|x| *x = 0.0);
        g[k] = 1.0;
        let grad = quantum_map_vjp(v, enc, obs, &g)?;
        input.row_mut(k).copy_from_slice(&grad.input);
        params.row_mut(k).copy_from_slice(&grad.params);
    }
    Ok(MapJacobian { input, params })
}
