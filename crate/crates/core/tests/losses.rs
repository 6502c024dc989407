mod common;

use common::*;
use qip_core::encode::{EncodingKind, EncodingSpec};
use qip_core::gap::{gap_pair, information_gap, kl_divergence};
use qip_core::observe::ObservableSpec;
use qip_core::qsim::{random_state, PauliAxis, StateVector, C64};
use qip_core::train::*;
use qip_core::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Neumaier-compensated sum.
fn compensated_sum(xs: impl IntoIterator<Item = f64>) -> f64 {
    let (mut s, mut c) = (0.0f64, 0.0f64);
    for x in xs {
        let t = s + x;
        if s.abs() >= x.abs() {
            c += (s - t) + x;
        } else {
            c += (x - t) + s;
        }
        s = t;
    }
    s + c
}

fn random_dist(c: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let raw: Vec<f64> = (0..c).map(|_| rng.random_range(0.0..1.0f64).powi(3)).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / s).collect()
}

fn dense_trace_a(psi1: &[C], psi2: &[C], n: usize, axis: PauliAxis) -> C {
    let dim = 1 << n;
    let mut outer = Dense { dim, m: vec![C::new(0.0, 0.0); dim * dim] };
    for r in 0..dim {
        for c in 0..dim {
            outer.m[r * dim + c] = psi1[r] * psi2[c].conj();
        }
    }
    let mut a = Dense { dim, m: vec![C::new(0.0, 0.0); dim * dim] };
    for q in 0..n {
        let o = embed(&pauli(axis), n, q);
        let term = o.mul(&outer).mul(&o);
        for (x, y) in a.m.iter_mut().zip(&term.m) {
            *x += y;
        }
    }
    (0..dim).map(|i| a.m[i * dim + i]).sum()
}

#[test]
fn proposition_suite() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for n in 2..=6 {
        for axis in PauliAxis::ALL {
            let obs = ObservableSpec::single(axis);
            let mut gapped = 0;
            for _ in 0..1000 {
                let a = random_state(n, &mut rng).unwrap();
                let b = random_state(n, &mut rng).unwrap();
                let r = gap_pair(&a, &b, &obs).unwrap();
                assert!(r.witness_residual() < 1e-8);
                if r.abs_gap > 1e-3 {
                    gapped += 1;
                }
                if r.state_overlap.norm() < 1.0 - 1e-9 {
                    assert!(r.witness_trace.norm() < n as f64 - 1e-6);
                }
            }
            assert!(gapped >= 990, "n={n} {axis:?}: {gapped}/1000");
        }
    }
}

#[test]
fn witness_trace_matches_dense_operator() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for n in 1..=4 {
        for axis in PauliAxis::ALL {
            for _ in 0..10 {
                let a = random_state_amps(n, &mut rng);
                let b = random_state_amps(n, &mut rng);
                let sa = StateVector::from_amplitudes(a.clone()).unwrap();
                let sb = StateVector::from_amplitudes(b.clone()).unwrap();
                let r = gap_pair(&sa, &sb, &ObservableSpec::single(axis)).unwrap();
                let want = dense_trace_a(&a, &b, n, axis);
                assert!((r.witness_trace - want).norm() < 1e-10);
                assert!((r.predicted_trace - want).norm() < 1e-10);
            }
        }
    }
}

#[test]
fn gap_ignores_global_phase() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let obs = ObservableSpec::single(PauliAxis::X);
    for _ in 0..50 {
        let a = random_state(3, &mut rng).unwrap();
        let b = random_state(3, &mut rng).unwrap();
        let mut b2 = b.clone();
        b2.scale(C64::from_polar(1.0, rng.random_range(0.0..6.0)));
        let r1 = gap_pair(&a, &b, &obs).unwrap();
        let r2 = gap_pair(&a, &b2, &obs).unwrap();
        assert!((r1.q_dot - r2.q_dot).abs() < 1e-12);
        assert!((r1.state_overlap.norm() - r2.state_overlap.norm()).abs() < 1e-12);
    }
    let s = random_state(2, &mut rng).unwrap();
    assert!(gap_pair(&s, &s, &"XZ".parse().unwrap()).is_err());
}

#[test]
fn kl_matches_compensated_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    assert!((kl_divergence(&[1.0, 0.0], &[0.5, 0.5]).unwrap() - 2f64.ln()).abs() < 1e-15);
    for _ in 0..500 {
        let c = rng.random_range(2..40);
        let p = random_dist(c, &mut rng);
        let q = random_dist(c, &mut rng);
        let want = compensated_sum(p.iter().zip(&q).filter(|(a, _)| **a > 0.0).map(|(a, b)| a * (a.ln() - b.max(1e-12).ln())));
        let got = kl_divergence(&p, &q).unwrap();
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        assert!(got >= -1e-12);
        // entries below the floor contribute at most eps / e
        assert!(kl_divergence(&p, &p).unwrap().abs() < 1e-12);
    }
    assert!(kl_divergence(&[0.5, 0.6], &[0.5, 0.5]).is_err());
    assert!(kl_divergence(&[1.0], &[0.5, 0.5]).is_err());
}

fn softmax_plain(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

fn unit(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

#[test]
fn information_gap_matches_straight_line_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (d, c, n) = (4, 3, 8);
    let enc = EncodingSpec::amplitude(d).unwrap();
    let z = [PauliAxis::Z];
    let obs = ObservableSpec::single(PauliAxis::Z);
    for normalize in [true, false] {
        let cols: Vec<Vec<f64>> = (0..c).map(|_| random_unit_vec(d, &mut rng)).collect();
        let mut w = Matrix::zeros(d, c);
        for (j, col) in cols.iter().enumerate() {
            w.set_column(j, col);
        }
        let vs: Vec<Vec<f64>> = (0..n).map(|_| random_unit_vec(d, &mut rng)).collect();
        let v = Matrix::from_rows(&vs, d).unwrap();
        let s = 16.0;
        let prep = |q: Vec<f64>| if normalize { unit(q) } else { q };
        let centers: Vec<Vec<f64>> = cols.iter().map(|col| prep(quantum_map_dense(col, &enc, &z))).collect();
        let mut total = 0.0;
        for vi in &vs {
            let q = prep(quantum_map_dense(vi, &enc, &z));
            let wl: Vec<f64> = cols.iter().map(|col| s * col.iter().zip(vi).map(|(a, b)| a * b).sum::<f64>()).collect();
            let ql: Vec<f64> = centers.iter().map(|sc| s * sc.iter().zip(&q).map(|(a, b)| a * b).sum::<f64>()).collect();
            let (pw, pu) = (softmax_plain(&wl), softmax_plain(&ql));
            total += pw.iter().zip(&pu).map(|(a, b)| if *a > 0.0 { a * (a.ln() - b.max(1e-12).ln()) } else { 0.0 }).sum::<f64>();
        }
        let want = total / n as f64;
        let got = information_gap(&w, &v, &enc, &obs, normalize, s).unwrap();
        assert!((got - want).abs() < 1e-10, "{got} vs {want}");
    }
    // N = 1, C = 1
    let w = Matrix::from_vec(4, 1, random_unit_vec(4, &mut rng)).unwrap();
    let v = Matrix::from_vec(1, 4, random_unit_vec(4, &mut rng)).unwrap();
    assert_eq!(information_gap(&w, &v, &enc, &obs, true, 16.0).unwrap(), 0.0);
}

#[test]
fn ce_matches_compensated_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..100 {
        let (n, c) = (rng.random_range(1..20), rng.random_range(2..12));
        let data: Vec<f64> = (0..n * c).map(|_| rng.random_range(-20.0..20.0)).collect();
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
        let logits = Matrix::from_vec(n, c, data.clone()).unwrap();
        let want = compensated_sum((0..n).map(|i| {
            let row = &data[i * c..(i + 1) * c];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + compensated_sum(row.iter().map(|x| (x - m).exp())).ln();
            lse - row[labels[i]]
        })) / n as f64;
        assert!((ce_loss(&logits, &labels).unwrap() - want).abs() < 1e-12);
    }
}

#[test]
fn mlp_matches_loop_nest() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let dims = [5, 7, 6, 4];
    let mut mlp = Mlp::random(&dims, &mut rng).unwrap();
    let layers: Vec<Layer> = mlp
        .layers()
        .iter()
        .map(|l| Layer {
            weights: l.weights.clone(),
            bias: (0..l.bias.len()).map(|_| rng.random_range(-0.5..0.5)).collect(),
        })
        .collect();
    mlp = Mlp::from_layers(layers).unwrap();
    let x = Matrix::from_vec(9, 5, (0..45).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();
    let out = forward_features(&mlp, &x).unwrap();
    for r in 0..9 {
        let mut a: Vec<f64> = x.row(r).to_vec();
        for (li, l) in mlp.layers().iter().enumerate() {
            let mut next = Vec::new();
            for o in 0..l.weights.rows() {
                let mut z = l.bias[o];
                for i in 0..a.len() {
                    z += l.weights[(o, i)] * a[i];
                }
                next.push(if li + 1 < mlp.layers().len() { z.max(0.0) } else { z });
            }
            a = next;
        }
        let a = unit(a);
        for (g, w) in out.row(r).iter().zip(&a) {
            assert!((g - w).abs() < 1e-10);
        }
        let norm = out.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-10);
    }
}

#[test]
fn adamw_matches_scalar_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let hp = AdamW::default();
    let mut p: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
    let (mut m, mut v) = (vec![0.0; 6], vec![0.0; 6]);
    let mut reference = p.clone();
    let (mut rm, mut rv) = (vec![0.0; 6], vec![0.0; 6]);
    for t in 1..=50u64 {
        let g: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let lr = 0.01;
        optimizer_update(&mut p, &g, &mut m, &mut v, t, lr, &hp).unwrap();
        for i in 0..6 {
            rm[i] = 0.9 * rm[i] + 0.1 * g[i];
            rv[i] = 0.999 * rv[i] + 0.001 * g[i] * g[i];
            let mhat = rm[i] / (1.0 - 0.9f64.powi(t as i32));
            let vhat = rv[i] / (1.0 - 0.999f64.powi(t as i32));
            reference[i] = reference[i] - lr * 1e-4 * reference[i] - lr * mhat / (vhat.sqrt() + 1e-8);
        }
        for i in 0..6 {
            assert!((p[i] - reference[i]).abs() < 1e-12);
        }
    }
}

#[test]
fn adamw_constant_gradient_moves_by_lr() {
    let hp = AdamW { weight_decay: 0.0, ..AdamW::default() };
    let g = [3.0, -0.02, 1e-3];
    let mut p = [0.0; 3];
    let (mut m, mut v) = ([0.0; 3], [0.0; 3]);
    let mut prev = p;
    for t in 1..=1000 {
        prev = p;
        optimizer_update(&mut p, &g, &mut m, &mut v, t, 1e-3, &hp).unwrap();
    }
    for i in 0..3 {
        let step = p[i] - prev[i];
        assert!((step + 1e-3 * g[i].signum()).abs() < 1e-5, "{step}");
    }
}

fn blobs(seed: u64, per_class: usize) -> (Matrix, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers = [[2.0, 1.0, -1.0, 0.5], [-2.0, -1.0, 1.0, -0.5]];
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (c, center) in centers.iter().enumerate() {
        for _ in 0..per_class {
            rows.push(center.iter().map(|x| x + rng.random_range(-0.3..0.3)).collect::<Vec<f64>>());
            labels.push(c);
        }
    }
    (Matrix::from_rows(&rows, 4).unwrap(), labels)
}

fn tiny_spec(encoder: EncodingKind, obs: &str) -> ModelSpec {
    ModelSpec {
        input_dim: 4,
        hidden: vec![8],
        feature_dim: 4,
        n_classes: 2,
        encoder,
        n_qubits: 2,
        observable: obs.parse().unwrap(),
    }
}

#[test]
fn separable_blobs_reach_full_accuracy() {
    let (x, y) = blobs(9, 40);
    // direct linear classifier: the center difference separates every sample
    let w = [4.0, 2.0, -2.0, 1.0];
    for (i, &label) in y.iter().enumerate() {
        let s: f64 = x.row(i).iter().zip(&w).map(|(a, b)| a * b).sum();
        assert_eq!(label == 0, s > 0.0);
    }
    let cfg = TrainConfig { lambda: 0.0, base_lr: 1e-2, ..TrainConfig::default() };
    let mut state = TrainState::new(&tiny_spec(EncodingKind::Amplitude, "Z"), cfg, 3).unwrap();
    let hist = fit(&mut state, &x, &y, 20, 16).unwrap();
    assert!(hist.iter().all(|r| r.loss.gap == 0.0 && r.loss.total == r.loss.ce));
    assert_eq!(state.predict(&x).unwrap(), y);
}

#[test]
fn fit_is_deterministic_and_keeps_contracts() {
    let (x, y) = blobs(10, 24);
    for (enc, obs) in [(EncodingKind::Amplitude, "Z"), (EncodingKind::U3, "XZ")] {
        let run = || {
            let mut s = TrainState::new(&tiny_spec(enc, obs), TrainConfig { base_lr: 1e-2, ..TrainConfig::default() }, 42).unwrap();
            let mut hist = Vec::new();
            for _ in 0..3 {
                hist.extend(fit(&mut s, &x, &y, 1, 10).unwrap());
                let (w, _) = s.head.normalized();
                for j in 0..w.cols() {
                    let col = s.head.weights().column(j);
                    let n = col.iter().map(|v| v * v).sum::<f64>().sqrt();
                    assert!((n - 1.0).abs() < 1e-10);
                }
                let v = s.features(&x).unwrap();
                for r in 0..v.rows() {
                    let n = v.row(r).iter().map(|a| a * a).sum::<f64>().sqrt();
                    assert!((n - 1.0).abs() < 1e-10);
                }
            }
            (s, hist)
        };
        let (a, ha) = run();
        let (b, hb) = run();
        assert_eq!(a, b);
        assert_eq!(ha, hb);
        for r in &ha {
            assert!(r.loss.gap >= -1e-12);
            assert_eq!(r.loss.total, r.loss.ce + 0.5 * r.loss.gap);
        }
    }
    let mut s = TrainState::new(&tiny_spec(EncodingKind::Phase, "Z"), TrainConfig::default(), 1).unwrap();
    let before = s.clone();
    assert!(fit(&mut s, &x, &y, 0, 8).unwrap().is_empty());
    assert_eq!(s, before);
}
