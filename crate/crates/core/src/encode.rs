//! Classical-to-quantum encoders.
//!
//! * Amplitude: the L2-normalized feature, zero-padded to `2^n`, becomes the
//!   amplitude vector.
//! * Phase: starting from `|0...0>`, layer `l` applies `R_Y(v[l*n + j])` to
//!   qubit `j` (angle 0 past the end of `v`), with a CNOT ring
//!   `j -> (j+1) mod n` between consecutive layers.
//! * U3: the phase circuit with a trainable `R_Z R_Y R_X` block on every qubit
//!   closing each layer.

use alloc::boxed::Box;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;
use core::fmt;
use core::str::FromStr;

use rand::Rng;

use crate::error::{check_dim, config, Error, Result};
use crate::matrix::Matrix;
use crate::qsim::{kernel, rotation_unchecked, PauliAxis, StateVector, C64, MAX_QUBITS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EncodingKind {
    Amplitude,
    Phase,
    U3,
}

impl fmt::Display for EncodingKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EncodingKind::Amplitude => "amplitude",
            EncodingKind::Phase => "phase",
            EncodingKind::U3 => "u3",
        })
    }
}

impl FromStr for EncodingKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "amplitude" | "a" => Ok(EncodingKind::Amplitude),
            "phase" | "angle" | "p" => Ok(EncodingKind::Phase),
            "u3" => Ok(EncodingKind::U3),
            other => Err(config(format!("unknown encoder `{other}`"))),
        }
    }
}

/// Where a rotation takes its angle from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AngleSource {
    Data(usize),
    Param(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Op {
    Rot {
        qubit: usize,
        axis: PauliAxis,
        angle: AngleSource,
    },
    Cnot {
        control: usize,
        target: usize,
    },
}

/// Choice and parameters of the encoding function.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodingSpec {
    kind: EncodingKind,
    input_dim: usize,
    n_qubits: usize,
    layers: usize,
    /// `layers x n_qubits x 3` angles `(x, y, z)`, row-major. Empty unless U3.
    pqc_params: Vec<f64>,
}

fn ceil_log2(d: usize) -> usize {
    (usize::BITS - (d - 1).leading_zeros()) as usize
}

impl EncodingSpec {
    /// Amplitude encoding of a `d`-vector on `ceil(log2 d)` qubits (at least one).
    pub fn amplitude(d: usize) -> Result<Self> {
        if d == 0 {
            return Err(config("feature dimension must be positive"));
        }
        let n = ceil_log2(d).max(1);
        if n > MAX_QUBITS {
            return Err(config(format!("amplitude encoding of d={d} needs {n} qubits")));
        }
        Ok(Self {
            kind: EncodingKind::Amplitude,
            input_dim: d,
            n_qubits: n,
            layers: 1,
            pqc_params: Vec::new(),
        })
    }

    pub fn phase(d: usize, n_qubits: usize) -> Result<Self> {
        if d == 0 {
            return Err(config("feature dimension must be positive"));
        }
        if n_qubits == 0 || n_qubits > MAX_QUBITS {
            return Err(config(format!("qubit count {n_qubits} outside 1..={MAX_QUBITS}")));
        }
        Ok(Self {
            kind: EncodingKind::Phase,
            input_dim: d,
            n_qubits,
            layers: d.div_ceil(n_qubits),
            pqc_params: Vec::new(),
        })
    }

    pub fn u3(d: usize, n_qubits: usize, pqc_params: Vec<f64>) -> Result<Self> {
        let mut spec = Self::phase(d, n_qubits)?;
        spec.kind = EncodingKind::U3;
        let expected = spec.layers * n_qubits * 3;
        if pqc_params.len() != expected {
            return Err(config(format!(
                "U3 parameters must be shaped {} x {n_qubits} x 3, got {} values",
                spec.layers,
                pqc_params.len()
            )));
        }
        if pqc_params.iter().any(|p| !p.is_finite()) {
            return Err(config("U3 parameters must be finite"));
        }
        spec.pqc_params = pqc_params;
        Ok(spec)
    }

    /// U3 encoder with parameters drawn uniformly from `[-pi/8, pi/8]`.
    pub fn u3_random<R: Rng + ?Sized>(d: usize, n_qubits: usize, rng: &mut R) -> Result<Self> {
        let layers = Self::phase(d, n_qubits)?.layers;
        let params = (0..layers * n_qubits * 3)
            .map(|_| rng.random_range(-PI / 8.0..=PI / 8.0))
            .collect();
        Self::u3(d, n_qubits, params)
    }

    /// Builds an encoder of the given kind. `n_qubits` is ignored for
    /// amplitude encoding, whose register size follows from `d`.
    pub fn build<R: Rng + ?Sized>(kind: EncodingKind, d: usize, n_qubits: usize, rng: &mut R) -> Result<Self> {
        match kind {
            EncodingKind::Amplitude => Self::amplitude(d),
            EncodingKind::Phase => Self::phase(d, n_qubits),
            EncodingKind::U3 => Self::u3_random(d, n_qubits, rng),
        }
    }

    #[inline]
    pub fn kind(&self) -> EncodingKind {
        self.kind
    }

    #[inline]
    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    #[inline]
    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    #[inline]
    pub fn layers(&self) -> usize {
        self.layers
    }

    #[inline]
    pub fn pqc_params(&self) -> &[f64] {
        &self.pqc_params
    }

    pub fn pqc_params_mut(&mut self) -> &mut [f64] {
        &mut self.pqc_params
    }

    pub fn n_params(&self) -> usize {
        self.pqc_params.len()
    }

    /// Gate list for the phase and U3 circuits. Rotations whose data index
    /// falls past the end of the feature are the identity and are omitted.
    /// Empty for amplitude encoding.
    pub fn circuit(&self) -> Vec<Op> {
        let n = self.n_qubits;
        let mut ops = Vec::new();
        if self.kind == EncodingKind::Amplitude {
            return ops;
        }
        for layer in 0..self.layers {
            for j in 0..n {
                let idx = layer * n + j;
                if idx < self.input_dim {
                    ops.push(Op::Rot {
                        qubit: j,
                        axis: PauliAxis::Y,
                        angle: AngleSource::Data(idx),
                    });
                }
            }
            if layer + 1 < self.layers && n > 1 {
                for j in 0..n {
                    ops.push(Op::Cnot {
                        control: j,
                        target: (j + 1) % n,
                    });
                }
            }
            if self.kind == EncodingKind::U3 {
                for j in 0..n {
                    let base = (layer * n + j) * 3;
                    for (k, axis) in [PauliAxis::X, PauliAxis::Y, PauliAxis::Z].into_iter().enumerate() {
                        ops.push(Op::Rot {
                            qubit: j,
                            axis,
                            angle: AngleSource::Param(base + k),
                        });
                    }
                }
            }
        }
        ops
    }

    #[inline]
    pub(crate) fn angle(&self, src: AngleSource, v: &[f64]) -> f64 {
        match src {
            AngleSource::Data(i) => v[i],
            AngleSource::Param(i) => self.pqc_params[i],
        }
    }
}

pub(crate) fn check_feature(v: &[f64], spec: &EncodingSpec) -> Result<()> {
    if v.len() != spec.input_dim {
        return Err(config(format!(
            "feature has {} entries but the encoder expects {}",
            v.len(),
            spec.input_dim
        )));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::Encoding("feature contains non-finite values".into()));
    }
    Ok(())
}

/// Amplitude-encodes `v`, returning the state and the norm of `v`.
pub(crate) fn amplitude_state(v: &[f64], n: usize) -> Result<(StateVector, f64)> {
    let norm = crate::matrix::norm(v);
    if norm == 0.0 {
        return Err(Error::Encoding("cannot amplitude-encode the zero vector".into()));
    }
    let mut amps = vec![C64::new(0.0, 0.0); 1 << n];
    for (a, x) in amps.iter_mut().zip(v) {
        *a = C64::new(x / norm, 0.0);
    }
    Ok((StateVector::from_raw(n, amps), norm))
}

pub(crate) fn run_ops(spec: &EncodingSpec, ops: &[Op], v: &[f64]) -> StateVector {
    let n = spec.n_qubits;
    let mut amps = vec![C64::new(0.0, 0.0); 1 << n];
    amps[0] = C64::new(1.0, 0.0);
    for op in ops {
        match *op {
            Op::Rot { qubit, axis, angle } => {
                let g = rotation_unchecked(axis, spec.angle(angle, v));
                kernel::apply_1q(&mut amps, n, qubit, &g);
            }
            Op::Cnot { control, target } => kernel::apply_cnot(&mut amps, n, control, target),
        }
    }
    StateVector::from_raw(n, amps)
}

/// `|psi> = E(v)`.
pub fn encode(v: &[f64], spec: &EncodingSpec) -> Result<StateVector> {
    check_feature(v, spec)?;
    match spec.kind {
        EncodingKind::Amplitude => amplitude_state(v, spec.n_qubits).map(|(s, _)| s),
        EncodingKind::Phase | EncodingKind::U3 => Ok(run_ops(spec, &spec.circuit(), v)),
    }
}

/// Encodes each row of `rows`, in order.
pub fn encode_batch(rows: &Matrix, spec: &EncodingSpec) -> Result<Vec<StateVector>> {
    if rows.rows() > 0 {
        check_dim(spec.input_dim, rows.cols())?;
    }
    (0..rows.rows())
        .map(|r| {
            encode(rows.row(r), spec).map_err(|e| Error::Row {
                row: r,
                source: Box::new(e),
            })
        })
        .collect()
}
