//! Dense reference implementations used as test oracles. Nothing here calls
//! the stride kernels or the adjoint pass of the library.
#![allow(dead_code)]

use num_complex::Complex;
use qip_core::encode::{EncodingKind, EncodingSpec};
use qip_core::qsim::PauliAxis;
use rand::Rng;

pub type C = Complex<f64>;

#[derive(Clone, Debug)]
pub struct Dense {
    pub dim: usize,
    pub m: Vec<C>,
}

impl Dense {
    pub fn identity(dim: usize) -> Self {
        let mut m = vec![C::new(0.0, 0.0); dim * dim];
        for i in 0..dim {
            m[i * dim + i] = C::new(1.0, 0.0);
        }
        Self { dim, m }
    }

    pub fn from2(e: [[C; 2]; 2]) -> Self {
        Self {
            dim: 2,
            m: vec![e[0][0], e[0][1], e[1][0], e[1][1]],
        }
    }

    pub fn kron(&self, o: &Dense) -> Dense {
        let dim = self.dim * o.dim;
        let mut m = vec![C::new(0.0, 0.0); dim * dim];
        for a in 0..self.dim {
            for b in 0..self.dim {
                for c in 0..o.dim {
                    for d in 0..o.dim {
                        m[(a * o.dim + c) * dim + b * o.dim + d] = self.m[a * self.dim + b] * o.m[c * o.dim + d];
                    }
                }
            }
        }
        Dense { dim, m }
    }

    pub fn mul(&self, o: &Dense) -> Dense {
        let n = self.dim;
        let mut m = vec![C::new(0.0, 0.0); n * n];
        for i in 0..n {
            for k in 0..n {
                let a = self.m[i * n + k];
                for j in 0..n {
                    m[i * n + j] += a * o.m[k * n + j];
                }
            }
        }
        Dense { dim: n, m }
    }

    pub fn apply(&self, v: &[C]) -> Vec<C> {
        (0..self.dim)
            .map(|i| (0..self.dim).map(|j| self.m[i * self.dim + j] * v[j]).sum())
            .collect()
    }
}

pub fn pauli(axis: PauliAxis) -> Dense {
    let (o, z, i) = (C::new(1.0, 0.0), C::new(0.0, 0.0), C::new(0.0, 1.0));
    Dense::from2(match axis {
        PauliAxis::X => [[z, o], [o, z]],
        PauliAxis::Y => [[z, -i], [i, z]],
        PauliAxis::Z => [[o, z], [z, -o]],
    })
}

/// `exp(-i theta P / 2)` by power series.
pub fn rotation_series(axis: PauliAxis, theta: f64) -> Dense {
    let p = pauli(axis);
    let mut gen = p.clone();
    for v in gen.m.iter_mut() {
        *v *= C::new(0.0, -theta / 2.0);
    }
    let mut term = Dense::identity(2);
    let mut sum = Dense::identity(2);
    for k in 1..40 {
        term = term.mul(&gen);
        for v in term.m.iter_mut() {
            *v /= k as f64;
        }
        for (s, t) in sum.m.iter_mut().zip(&term.m) {
            *s += t;
        }
    }
    sum
}

/// `I^{q} (x) U (x) I^{n-q-1}`, qubit 0 leftmost.
pub fn embed(u: &Dense, n: usize, q: usize) -> Dense {
    let mut out = Dense::identity(1);
    for k in 0..n {
        out = out.kron(if k == q { u } else { &IDENTITY2 });
    }
    out
}

static IDENTITY2: std::sync::LazyLock<Dense> = std::sync::LazyLock::new(|| Dense::identity(2));

pub fn cnot_dense(n: usize, control: usize, target: usize) -> Dense {
    let dim = 1 << n;
    let mut m = vec![C::new(0.0, 0.0); dim * dim];
    for col in 0..dim {
        let bit = |i: usize, q: usize| (i >> (n - 1 - q)) & 1;
        let row = if bit(col, control) == 1 { col ^ (1 << (n - 1 - target)) } else { col };
        m[row * dim + col] = C::new(1.0, 0.0);
    }
    Dense { dim, m }
}

pub fn expectation_dense(psi: &[C], n: usize, q: usize, axis: PauliAxis) -> f64 {
    let o = embed(&pauli(axis), n, q);
    let ov = o.apply(psi);
    psi.iter().zip(&ov).map(|(a, b)| a.conj() * b).sum::<C>().re
}

/// Replays the documented encoder construction with dense matrices.
pub fn encode_dense(v: &[f64], spec: &EncodingSpec) -> Vec<C> {
    let n = spec.n_qubits();
    let dim = 1 << n;
    match spec.kind() {
        EncodingKind::Amplitude => {
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            let mut a = vec![C::new(0.0, 0.0); dim];
            for (i, x) in v.iter().enumerate() {
                a[i] = C::new(x / norm, 0.0);
            }
            a
        }
        kind => {
            let mut psi = vec![C::new(0.0, 0.0); dim];
            psi[0] = C::new(1.0, 0.0);
            let layers = v.len().div_ceil(n);
            for l in 0..layers {
                for j in 0..n {
                    let angle = v.get(l * n + j).copied().unwrap_or(0.0);
                    psi = embed(&rotation_series(PauliAxis::Y, angle), n, j).apply(&psi);
                }
                if l + 1 < layers && n > 1 {
                    for j in 0..n {
                        psi = cnot_dense(n, j, (j + 1) % n).apply(&psi);
                    }
                }
                if kind == EncodingKind::U3 {
                    for j in 0..n {
                        let t = &spec.pqc_params()[(l * n + j) * 3..(l * n + j) * 3 + 3];
                        let u = rotation_series(PauliAxis::Z, t[2])
                            .mul(&rotation_series(PauliAxis::Y, t[1]))
                            .mul(&rotation_series(PauliAxis::X, t[0]));
                        psi = embed(&u, n, j).apply(&psi);
                    }
                }
            }
            psi
        }
    }
}

pub fn quantum_map_dense(v: &[f64], spec: &EncodingSpec, passes: &[PauliAxis]) -> Vec<f64> {
    let psi = encode_dense(v, spec);
    let n = spec.n_qubits();
    passes
        .iter()
        .flat_map(|&a| (0..n).map(move |q| (a, q)))
        .map(|(a, q)| expectation_dense(&psi, n, q, a))
        .collect()
}

pub fn random_unit_vec<R: Rng>(d: usize, rng: &mut R) -> Vec<f64> {
    let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

pub fn random_state_amps<R: Rng>(n: usize, rng: &mut R) -> Vec<C> {
    let v: Vec<C> = (0..1 << n)
        .map(|_| C::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
        .collect();
    let norm = v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
    v.into_iter().map(|c| c / norm).collect()
}

pub fn random_unitary<R: Rng>(rng: &mut R) -> [[C; 2]; 2] {
    // U = e^{i a} Rz(b) Ry(c) Rz(d)
    let a: f64 = rng.random_range(0.0..6.28);
    let r = rotation_series(PauliAxis::Z, rng.random_range(0.0..6.28))
        .mul(&rotation_series(PauliAxis::Y, rng.random_range(0.0..6.28)))
        .mul(&rotation_series(PauliAxis::Z, rng.random_range(0.0..6.28)));
    let ph = C::from_polar(1.0, a);
    [[r.m[0] * ph, r.m[1] * ph], [r.m[2] * ph, r.m[3] * ph]]
}

pub fn central_difference<F: FnMut(&[f64]) -> f64>(x: &[f64], i: usize, h: f64, mut f: F) -> f64 {
    let mut xp = x.to_vec();
    let mut xm = x.to_vec();
    xp[i] += h;
    xm[i] -= h;
    (f(&xp) - f(&xm)) / (2.0 * h)
}

/// Relative error with an absolute floor so exact zeros compare sanely.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-5)
}
