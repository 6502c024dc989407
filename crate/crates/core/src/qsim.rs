//! Dense statevector simulator.
//!
//! Basis index `i` is the ket `|i>` in big-endian qubit order: qubit 0 is the
//! most significant bit. Gates are applied in place by stride iteration; no
//! `2^n x 2^n` operator is ever built here.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex;
use rand::Rng;

use crate::error::{argument, check_dim, config, Result};

pub type C64 = Complex<f64>;

/// Largest register the simulator accepts.
pub const MAX_QUBITS: usize = 14;

const NORM_TOL: f64 = 1e-10;

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);
const I: C64 = C64::new(0.0, 1.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PauliAxis {
    X,
    Y,
    Z,
}

impl PauliAxis {
    pub const ALL: [PauliAxis; 3] = [PauliAxis::X, PauliAxis::Y, PauliAxis::Z];

    pub fn from_char(c: char) -> Option<Self> {
        match c {
            'X' | 'x' => Some(PauliAxis::X),
            'Y' | 'y' => Some(PauliAxis::Y),
            'Z' | 'z' => Some(PauliAxis::Z),
            _ => None,
        }
    }

    pub fn as_char(self) -> char {
        match self {
            PauliAxis::X => 'X',
            PauliAxis::Y => 'Y',
            PauliAxis::Z => 'Z',
        }
    }
}

/// A single-qubit unitary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gate2x2 {
    m: [[C64; 2]; 2],
}

impl Gate2x2 {
    /// Checks `U U^dagger = I` elementwise within `1e-10`.
    pub fn new(m: [[C64; 2]; 2]) -> Result<Self> {
        let g = Self { m };
        let p = g.matmul(&g.dagger());
        for r in 0..2 {
            for c in 0..2 {
                let target = if r == c { ONE } else { ZERO };
                if (p.m[r][c] - target).norm() > NORM_TOL {
                    return Err(argument("gate is not unitary"));
                }
            }
        }
        Ok(g)
    }

    pub const fn identity() -> Self {
        Self {
            m: [[ONE, ZERO], [ZERO, ONE]],
        }
    }

    #[inline]
    pub fn entries(&self) -> &[[C64; 2]; 2] {
        &self.m
    }

    pub fn dagger(&self) -> Self {
        let m = &self.m;
        Self {
            m: [[m[0][0].conj(), m[1][0].conj()], [m[0][1].conj(), m[1][1].conj()]],
        }
    }

    /// `self * rhs`.
    pub fn matmul(&self, rhs: &Self) -> Self {
        let (a, b) = (&self.m, &rhs.m);
        let mut m = [[ZERO; 2]; 2];
        for (r, row) in m.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = a[r][0] * b[0][c] + a[r][1] * b[1][c];
            }
        }
        Self { m }
    }
}

pub fn pauli_matrix(axis: PauliAxis) -> Gate2x2 {
    let m = match axis {
        PauliAxis::X => [[ZERO, ONE], [ONE, ZERO]],
        PauliAxis::Y => [[ZERO, -I], [I, ZERO]],
        PauliAxis::Z => [[ONE, ZERO], [ZERO, -ONE]],
    };
    Gate2x2 { m }
}

/// `R_P(theta) = cos(theta/2) I - i sin(theta/2) P`.
pub fn rotation_gate(axis: PauliAxis, theta: f64) -> Result<Gate2x2> {
    if !theta.is_finite() {
        return Err(argument(format!("rotation angle {theta} is not finite")));
    }
    Ok(rotation_unchecked(axis, theta))
}

pub(crate) fn rotation_unchecked(axis: PauliAxis, theta: f64) -> Gate2x2 {
    let c = libm::cos(theta / 2.0);
    let s = libm::sin(theta / 2.0);
    let m = match axis {
        PauliAxis::X => [[C64::new(c, 0.0), C64::new(0.0, -s)], [C64::new(0.0, -s), C64::new(c, 0.0)]],
        PauliAxis::Y => [[C64::new(c, 0.0), C64::new(-s, 0.0)], [C64::new(s, 0.0), C64::new(c, 0.0)]],
        PauliAxis::Z => [[C64::new(c, -s), ZERO], [ZERO, C64::new(c, s)]],
    };
    Gate2x2 { m }
}

/// Pure `n`-qubit state with `2^n` complex amplitudes.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    n_qubits: usize,
    amps: Vec<C64>,
}

fn check_qubits(n: usize) -> Result<()> {
    if n == 0 || n > MAX_QUBITS {
        return Err(config(format!("qubit count {n} outside 1..={MAX_QUBITS}")));
    }
    Ok(())
}

impl StateVector {
    /// `|0...0>` on `n` qubits.
    pub fn zero(n: usize) -> Result<Self> {
        check_qubits(n)?;
        let mut amps = vec![ZERO; 1 << n];
        amps[0] = ONE;
        Ok(Self { n_qubits: n, amps })
    }

    /// Wraps amplitudes, checking the length is a power of two and the norm
    /// is one within `1e-10`.
    pub fn from_amplitudes(amps: Vec<C64>) -> Result<Self> {
        let len = amps.len();
        if len < 2 || !len.is_power_of_two() {
            return Err(argument(format!("amplitude count {len} is not 2^n with n >= 1")));
        }
        let n = len.trailing_zeros() as usize;
        check_qubits(n)?;
        let s = Self { n_qubits: n, amps };
        let norm = s.norm();
        if (norm - 1.0).abs() > NORM_TOL {
            return Err(argument(format!("state norm {norm} is not 1")));
        }
        Ok(s)
    }

    pub(crate) fn from_raw(n_qubits: usize, amps: Vec<C64>) -> Self {
        debug_assert_eq!(amps.len(), 1 << n_qubits);
        Self { n_qubits, amps }
    }

    #[inline]
    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    #[inline]
    pub fn amplitudes(&self) -> &[C64] {
        &self.amps
    }

    pub fn into_amplitudes(self) -> Vec<C64> {
        self.amps
    }

    pub fn norm(&self) -> f64 {
        libm::sqrt(self.amps.iter().map(|a| a.norm_sqr()).sum::<f64>())
    }

    fn check_qubit(&self, q: usize) -> Result<()> {
        if q >= self.n_qubits {
            return Err(argument(format!("qubit {q} out of range for {} qubits", self.n_qubits)));
        }
        Ok(())
    }

    pub fn apply_gate(&mut self, qubit: usize, gate: &Gate2x2) -> Result<()> {
        self.check_qubit(qubit)?;
        kernel::apply_1q(&mut self.amps, self.n_qubits, qubit, gate);
        Ok(())
    }

    pub fn apply_cnot(&mut self, control: usize, target: usize) -> Result<()> {
        self.check_qubit(control)?;
        self.check_qubit(target)?;
        if control == target {
            return Err(argument("CNOT control and target must differ"));
        }
        kernel::apply_cnot(&mut self.amps, self.n_qubits, control, target);
        Ok(())
    }

    /// `<self|other>`.
    pub fn inner(&self, other: &StateVector) -> Result<C64> {
        check_dim(self.amps.len(), other.amps.len())?;
        Ok(kernel::inner(&self.amps, &other.amps))
    }

    /// `<psi| O_q |psi>` for a single-qubit Pauli, clamped into `[-1, 1]`.
    pub fn expectation(&self, qubit: usize, axis: PauliAxis) -> Result<f64> {
        self.check_qubit(qubit)?;
        Ok(kernel::expectation(&self.amps, self.n_qubits, qubit, axis).clamp(-1.0, 1.0))
    }

    /// Multiplies every amplitude by `phase`.
    pub fn scale(&mut self, phase: C64) {
        for a in self.amps.iter_mut() {
            *a *= phase;
        }
    }
}

pub fn zero_state(n: usize) -> Result<StateVector> {
    StateVector::zero(n)
}

pub fn apply_gate(state: &StateVector, qubit: usize, gate: &Gate2x2) -> Result<StateVector> {
    let mut out = state.clone();
    out.apply_gate(qubit, gate)?;
    Ok(out)
}

pub fn apply_cnot(state: &StateVector, control: usize, target: usize) -> Result<StateVector> {
    let mut out = state.clone();
    out.apply_cnot(control, target)?;
    Ok(out)
}

pub fn inner_product(a: &StateVector, b: &StateVector) -> Result<C64> {
    a.inner(b)
}

pub fn expectation(state: &StateVector, qubit: usize, axis: PauliAxis) -> Result<f64> {
    state.expectation(qubit, axis)
}

/// Haar-random pure state from normalized complex Gaussian amplitudes.
pub fn random_state<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<StateVector> {
    check_qubits(n)?;
    let mut amps: Vec<C64> = (0..1usize << n)
        .map(|_| {
            let (a, b) = gaussian_pair(rng);
            C64::new(a, b)
        })
        .collect();
    let norm = libm::sqrt(amps.iter().map(|a| a.norm_sqr()).sum::<f64>());
    for a in amps.iter_mut() {
        *a /= norm;
    }
    Ok(StateVector::from_raw(n, amps))
}

/// Two independent standard normals (Box-Muller).
pub fn gaussian_pair<R: Rng + ?Sized>(rng: &mut R) -> (f64, f64) {
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random::<f64>();
    let r = libm::sqrt(-2.0 * libm::log(u1));
    let t = 2.0 * core::f64::consts::PI * u2;
    (r * libm::cos(t), r * libm::sin(t))
}

/// Raw stride kernels over amplitude slices. These skip validation and are
/// shared with the adjoint differentiation pass.
pub(crate) mod kernel {
    use super::*;

    #[inline]
    fn stride(n: usize, q: usize) -> usize {
        1 << (n - 1 - q)
    }

    pub fn apply_1q(amps: &mut [C64], n: usize, q: usize, g: &Gate2x2) {
        let s = stride(n, q);
        let [[a, b], [c, d]] = g.m;
        let mut base = 0;
        while base < amps.len() {
            for i in base..base + s {
                let x0 = amps[i];
                let x1 = amps[i + s];
                amps[i] = a * x0 + b * x1;
                amps[i + s] = c * x0 + d * x1;
            }
            base += 2 * s;
        }
    }

    pub fn apply_cnot(amps: &mut [C64], n: usize, control: usize, target: usize) {
        let cm = stride(n, control);
        let tm = stride(n, target);
        for i in 0..amps.len() {
            if i & cm != 0 && i & tm == 0 {
                amps.swap(i, i | tm);
            }
        }
    }

    /// Applies the Pauli `axis` on qubit `q`.
    pub fn apply_pauli(amps: &mut [C64], n: usize, q: usize, axis: PauliAxis) {
        let s = stride(n, q);
        let mut base = 0;
        while base < amps.len() {
            for i in base..base + s {
                let x0 = amps[i];
                let x1 = amps[i + s];
                match axis {
                    PauliAxis::X => {
                        amps[i] = x1;
                        amps[i + s] = x0;
                    }
                    PauliAxis::Y => {
                        amps[i] = -I * x1;
                        amps[i + s] = I * x0;
                    }
                    PauliAxis::Z => {
                        amps[i + s] = -x1;
                    }
                }
            }
            base += 2 * s;
        }
    }

    pub fn inner(a: &[C64], b: &[C64]) -> C64 {
        a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
    }

    /// Real expectation `<psi| P_q |psi>` without clamping.
    pub fn expectation(amps: &[C64], n: usize, q: usize, axis: PauliAxis) -> f64 {
        let s = stride(n, q);
        let mut acc = 0.0;
        let mut base = 0;
        while base < amps.len() {
            for i in base..base + s {
                let (x0, x1) = (amps[i], amps[i + s]);
                acc += match axis {
                    PauliAxis::Z => x0.norm_sqr() - x1.norm_sqr(),
                    PauliAxis::X => 2.0 * (x0.conj() * x1).re,
                    PauliAxis::Y => 2.0 * (x0.conj() * x1).im,
                };
            }
            base += 2 * s;
        }
        acc
    }
}
