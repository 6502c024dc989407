mod common;

use common::*;
use qip_core::cluster::*;
use qip_core::observe::ObservableSpec;
use qip_core::qsim::PauliAxis;
use qip_core::Matrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    d / (na * nb)
}

#[test]
fn knn_matches_full_sort() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for trial in 0..5 {
        let f = random_matrix(50, 6, &mut rng);
        let props = knn_clusters(&f, 5).unwrap();
        assert_eq!(props.len(), 50);
        for (i, p) in props.iter().enumerate() {
            let mut all: Vec<(f64, usize)> = (0..50).filter(|&j| j != i).map(|j| (cosine(f.row(i), f.row(j)), j)).collect();
            all.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
            let mut want = vec![i];
            want.extend(all.iter().take(4).map(|x| x.1));
            assert_eq!(p.members, want, "trial {trial} row {i}");
            assert_eq!(p.center, i);
            assert_eq!(p.features, f.select_rows(&want));
            let sims: Vec<f64> = p.members[1..].iter().map(|&j| cosine(f.row(i), f.row(j))).collect();
            assert!(sims.windows(2).all(|w| w[0] >= w[1] - 1e-15));
        }
    }
}

/// Straight-line recomputation of the refiner forward pass with dense
/// circuits.
fn refine_oracle(model: &RefinerModel, f: &Matrix) -> Vec<f64> {
    let k = f.rows();
    let passes = model.observable.passes().to_vec();
    let unit: Vec<Vec<f64>> = (0..k)
        .map(|j| {
            let n = f.row(j).iter().map(|x| x * x).sum::<f64>().sqrt();
            f.row(j).iter().map(|x| x / n).collect()
        })
        .collect();
    let mut heads = vec![Vec::new(), Vec::new(), Vec::new()];
    let mut embedded = Vec::new();
    for j in 0..k {
        let prod: Vec<f64> = unit[j].iter().zip(&unit[0]).map(|(a, b)| a * b).collect();
        let mut token = vec![prod.iter().sum::<f64>()];
        token.extend(prod);
        for (c, t) in token.iter_mut().enumerate() {
            *t = (*t - model.token_shift[c]) * model.token_scale[c];
        }
        let mut e = vec![0.0; model.proj.rows()];
        for (o, eo) in e.iter_mut().enumerate() {
            *eo = model.proj_bias[o];
            for c in 0..token.len() {
                *eo += model.proj[(o, c)] * token[c];
            }
        }
        for (h, out) in heads.iter_mut().enumerate() {
            out.push(quantum_map_dense(&e, &model.heads[h], &passes));
        }
        embedded.push(e);
    }
    let r = heads[0][0].len() as f64;
    (0..k)
        .map(|j| {
            let s: Vec<f64> = (0..k)
                .map(|l| heads[0][j].iter().zip(&heads[1][l]).map(|(a, b)| a * b).sum::<f64>() / r.sqrt())
                .collect();
            let mx = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = s.iter().map(|x| (x - mx).exp()).sum();
            let mut mixed = vec![0.0; heads[2][j].len()];
            for l in 0..k {
                let a = (s[l] - mx).exp() / z;
                for c in 0..mixed.len() {
                    mixed[c] += a * heads[2][l][c];
                }
            }
            let mut logit = model.out_bias;
            for o in 0..model.proj.rows() {
                let mut x = embedded[j][o];
                for c in 0..mixed.len() {
                    x += model.attn_out[(o, c)] * mixed[c];
                }
                logit += model.out_weights[o] * x;
            }
            1.0 / (1.0 + (-logit).exp())
        })
        .collect()
}

fn proposal(features: Matrix) -> ClusterProposal {
    ClusterProposal {
        center: 0,
        members: (0..features.rows()).collect(),
        features,
    }
}

#[test]
fn refine_matches_dense_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for obs in ["Z", "XZ"] {
        let cfg = RefinerConfig {
            hidden: 8,
            n_qubits: 3,
            observable: obs.parse().unwrap(),
        };
        for _ in 0..5 {
            let mut model = RefinerModel::random(5, &cfg, &mut rng).unwrap();
            model.out_bias = rng.random_range(-1.0..1.0);
            model.token_shift = (0..6).map(|_| rng.random_range(-0.5..0.5)).collect();
            model.token_scale = (0..6).map(|_| rng.random_range(0.5..2.0)).collect();
            let p = proposal(random_matrix(4, 5, &mut rng));
            let got = refine(&p, &model).unwrap();
            let want = refine_oracle(&model, &p.features);
            for (a, b) in got.iter().zip(&want) {
                assert!((a - b).abs() < 1e-10, "{a} vs {b}");
                assert!((0.0..=1.0).contains(a));
            }
        }
    }
}

#[test]
fn refine_symmetries() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let model = RefinerModel::random(4, &RefinerConfig::default(), &mut rng).unwrap();
    let f = random_matrix(6, 4, &mut rng);

    let mut dup = f.clone();
    let row2 = f.row(2).to_vec();
    dup.row_mut(4).copy_from_slice(&row2);
    let out = refine(&proposal(dup), &model).unwrap();
    assert_eq!(out[2], out[4]);

    let base = refine(&proposal(f.clone()), &model).unwrap();
    let mut perm: Vec<usize> = (1..6).collect();
    perm.shuffle(&mut rng);
    let mut order = vec![0];
    order.extend(&perm);
    let permuted = refine(&proposal(f.select_rows(&order)), &model).unwrap();
    for (pos, &src) in order.iter().enumerate() {
        assert!((permuted[pos] - base[src]).abs() < 1e-12);
    }
}

#[test]
fn refiner_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let cfg = RefinerConfig {
        hidden: 4,
        n_qubits: 2,
        observable: ObservableSpec::new(vec![PauliAxis::X, PauliAxis::Z]).unwrap(),
    };
    let mut model = RefinerModel::random(3, &cfg, &mut rng).unwrap();
    let labels = [0, 0, 1, 1, 0];
    let props = vec![
        ClusterProposal {
            center: 0,
            members: vec![0, 1, 2],
            features: random_matrix(3, 3, &mut rng),
        },
        ClusterProposal {
            center: 3,
            members: vec![3, 4, 2, 0],
            features: random_matrix(4, 3, &mut rng),
        },
    ];
    let weights = TargetWeights { keep: 0.7, drop: 1.8 };
    let (_, grad) = refiner_loss_and_grad(&model, &props, &labels, weights, true).unwrap();
    let p0 = model.params_flat();
    assert_eq!(grad.len(), p0.len());
    for i in 0..p0.len() {
        let fd = central_difference(&p0, i, 1e-5, |p| {
            model.set_params_flat(p).unwrap();
            refiner_loss(&model, &props, &labels, weights).unwrap()
        });
        assert!(rel_err(grad[i], fd) < 1e-4, "param {i}: {} vs {fd}", grad[i]);
    }
}

#[test]
fn clean_proposals_learn_high_keep_probability() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let n = 60;
    let labels = vec![0usize; n];
    let f = random_matrix(n, 4, &mut rng);
    let props = knn_clusters(&f, 5).unwrap();
    let mut model = RefinerModel::random(4, &RefinerConfig::default(), &mut rng).unwrap();
    let cfg = RefinerTrainConfig {
        epochs: 15,
        batch_size: 10,
        base_lr: 0.05,
        ..RefinerTrainConfig::default()
    };
    let hist = train_refiner(&mut model, &props, &labels, &cfg).unwrap();
    assert!(hist.last().unwrap() < &hist[0]);
    let mut total = 0.0;
    let mut count = 0.0;
    for p in &props {
        for prob in &refine(p, &model).unwrap()[1..] {
            total += prob;
            count += 1.0;
        }
    }
    assert!(total / count > 0.9, "mean keep probability {}", total / count);
}

fn relabel_canonical(x: &[usize]) -> Vec<usize> {
    let mut seen = std::collections::HashMap::new();
    x.iter()
        .map(|v| {
            let next = seen.len();
            *seen.entry(*v).or_insert(next)
        })
        .collect()
}

#[test]
fn assembly_matches_union_find_oracle() {
    // edges kept: 0-1, 1-2 (via center 2), 4-5; 3 isolated
    let props = vec![
        ClusterProposal { center: 0, members: vec![0, 1, 3], features: Matrix::zeros(3, 1) },
        ClusterProposal { center: 2, members: vec![2, 1, 5], features: Matrix::zeros(3, 1) },
        ClusterProposal { center: 5, members: vec![5, 4, 3], features: Matrix::zeros(3, 1) },
    ];
    let probs = vec![vec![1.0, 0.9, 0.2], vec![1.0, 0.5, 0.49], vec![1.0, 0.7, 0.1]];
    let got = assemble_clusters(6, &props, &probs, 0.5).unwrap();
    assert_eq!(got, [0, 0, 0, 1, 2, 2]);

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..50 {
        let n = 30;
        let f = random_matrix(n, 3, &mut rng);
        let props = knn_clusters(&f, 4).unwrap();
        let probs: Vec<Vec<f64>> = props.iter().map(|p| p.members.iter().map(|_| rng.random_range(0.0..1.0)).collect()).collect();
        let got = assemble_clusters(n, &props, &probs, 0.8).unwrap();
        // oracle: flood fill over an explicit adjacency matrix
        let mut adj = vec![vec![false; n]; n];
        for (p, pr) in props.iter().zip(&probs) {
            for (m, q) in p.members.iter().zip(pr).skip(1) {
                if *q >= 0.8 {
                    adj[p.center][*m] = true;
                    adj[*m][p.center] = true;
                }
            }
        }
        let mut comp = vec![usize::MAX; n];
        let mut next = 0;
        for s in 0..n {
            if comp[s] != usize::MAX {
                continue;
            }
            let mut stack = vec![s];
            comp[s] = next;
            while let Some(u) = stack.pop() {
                for v in 0..n {
                    if adj[u][v] && comp[v] == usize::MAX {
                        comp[v] = next;
                        stack.push(v);
                    }
                }
            }
            next += 1;
        }
        assert_eq!(got, comp);
    }
}

fn pairwise_oracle(pred: &[usize], truth: &[usize]) -> (u64, u64, u64) {
    let (mut both, mut sp, mut st) = (0, 0, 0);
    for i in 0..pred.len() {
        for j in i + 1..pred.len() {
            let p = pred[i] == pred[j];
            let t = truth[i] == truth[j];
            sp += p as u64;
            st += t as u64;
            both += (p && t) as u64;
        }
    }
    (both, sp, st)
}

fn bcubed_oracle(pred: &[usize], truth: &[usize]) -> (f64, f64) {
    let n = pred.len();
    let (mut p, mut r) = (0.0, 0.0);
    for i in 0..n {
        let same_pred = (0..n).filter(|&j| pred[j] == pred[i]).count() as f64;
        let same_true = (0..n).filter(|&j| truth[j] == truth[i]).count() as f64;
        let both = (0..n).filter(|&j| pred[j] == pred[i] && truth[j] == truth[i]).count() as f64;
        p += both / same_pred;
        r += both / same_true;
    }
    (p / n as f64, r / n as f64)
}

#[test]
fn metrics_match_enumeration_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..200 {
        let n = rng.random_range(2..=300);
        let kp = rng.random_range(1..=n.min(20));
        let kt = rng.random_range(1..=n.min(20));
        let pred: Vec<usize> = (0..n).map(|_| rng.random_range(0..kp)).collect();
        let truth: Vec<usize> = (0..n).map(|_| rng.random_range(0..kt)).collect();
        let pw = pairwise_f(&pred, &truth).unwrap();
        let (both, sp, st) = pairwise_oracle(&pred, &truth);
        let p = if sp == 0 { 0.0 } else { both as f64 / sp as f64 };
        let r = if st == 0 { 0.0 } else { both as f64 / st as f64 };
        assert_eq!(pw.precision, p);
        assert_eq!(pw.recall, r);
        assert_eq!(pw.degenerate, sp == 0 || st == 0);
        let f = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
        assert_eq!(pw.f_score, f);
        let b = bcubed_f(&pred, &truth).unwrap();
        let (bp, br) = bcubed_oracle(&pred, &truth);
        assert!((b.precision - bp).abs() < 1e-12 && (b.recall - br).abs() < 1e-12);
        for x in [pw.precision, pw.recall, pw.f_score, pw.fowlkes_mallows, b.precision, b.recall, b.f_score] {
            assert!((0.0..=1.0).contains(&x));
        }
    }
}

#[test]
fn metrics_ignore_relabeling() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..50 {
        let n = 80;
        let pred: Vec<usize> = (0..n).map(|_| rng.random_range(0..7)).collect();
        let truth: Vec<usize> = (0..n).map(|_| rng.random_range(0..5)).collect();
        let mut ids: Vec<usize> = (0..7).map(|x| x * 13 + 100).collect();
        ids.shuffle(&mut rng);
        let renamed: Vec<usize> = pred.iter().map(|&c| ids[c]).collect();
        assert_eq!(relabel_canonical(&pred), relabel_canonical(&renamed));
        assert_eq!(pairwise_f(&pred, &truth).unwrap(), pairwise_f(&renamed, &truth).unwrap());
        assert_eq!(pairwise_f(&truth, &pred).unwrap().f_score, pairwise_f(&truth, &renamed).unwrap().f_score);
        let a = bcubed_f(&pred, &truth).unwrap();
        let b = bcubed_f(&renamed, &truth).unwrap();
        assert!((a.f_score - b.f_score).abs() < 1e-15);
    }
}
