//! The network against a direct, unoptimized transcription of the layer
//! rule (explicit concatenation, means recomputed by scanning every node),
//! plus permutation symmetries and finite-difference gradients.

use hyperlabel::hlmnet::{forward, init_params, ModelParams};
use hyperlabel::oracle::exact_hstar;
use hyperlabel::trainer::loss_and_grads;
use hyperlabel::LabelMatrix;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn matvec(w: &[f64], rows: usize, x: &[f64]) -> Vec<f64> {
    let cols = x.len();
    (0..rows).map(|r| (0..cols).map(|c| w[r * cols + c] * x[c]).sum()).collect()
}

fn mean_of(vs: &[&Vec<f64>]) -> Vec<f64> {
    let d = vs[0].len();
    (0..d).map(|t| vs.iter().map(|v| v[t]).sum::<f64>() / vs.len() as f64).collect()
}

/// `None` for rows without votes.
fn reference_forward(p: &ModelParams<f64>, x: &LabelMatrix) -> Vec<Option<f64>> {
    let d = p.dim;
    let mut nodes = Vec::new();
    for i in 0..x.n() {
        for j in 0..x.m() {
            let v = x.get(i, j);
            if v != 0 {
                nodes.push((i, j, v));
            }
        }
    }
    let mut h: Vec<Vec<f64>> =
        nodes.iter().map(|&(_, _, v)| p.embedding.row(if v == 1 { 0 } else { 1 }).to_vec()).collect();
    for layer in &p.layers {
        let mut next = Vec::with_capacity(h.len());
        for (a, &(i, j, _)) in nodes.iter().enumerate() {
            let col: Vec<&Vec<f64>> = nodes.iter().zip(&h).filter(|(n, _)| n.1 == j).map(|(_, v)| v).collect();
            let row: Vec<&Vec<f64>> = nodes.iter().zip(&h).filter(|(n, _)| n.0 == i).map(|(_, v)| v).collect();
            let all: Vec<&Vec<f64>> = h.iter().collect();
            let mut cat = matvec(layer.w_col.data(), d, &mean_of(&col));
            cat.extend(matvec(layer.w_row.data(), d, &mean_of(&row)));
            cat.extend(matvec(layer.w_global.data(), d, &mean_of(&all)));
            cat.extend(matvec(layer.w_self.data(), d, &h[a]));
            let z = matvec(layer.f_weight.data(), d, &cat);
            next.push(z.iter().zip(layer.f_bias.data()).map(|(z, b)| (z + b).max(0.0)).collect());
        }
        h = next;
    }
    (0..x.n())
        .map(|i| {
            let row: Vec<&Vec<f64>> = nodes.iter().zip(&h).filter(|(n, _)| n.0 == i).map(|(_, v)| v).collect();
            if row.is_empty() {
                return None;
            }
            let mut v = mean_of(&row);
            for (k, lin) in p.head.iter().enumerate() {
                let out = lin.weight.rows();
                v = matvec(lin.weight.data(), out, &v).iter().zip(lin.bias.data()).map(|(a, b)| a + b).collect();
                if k < 2 {
                    v.iter_mut().for_each(|a| *a = a.max(0.0));
                }
            }
            Some(1.0 / (1.0 + (-v[0]).exp()))
        })
        .collect()
}

fn random_matrix(rng: &mut ChaCha8Rng, n: usize, m: usize) -> LabelMatrix {
    LabelMatrix::binary(n, m, (0..n * m).map(|_| rng.gen_range(-1i8..=1)).collect()).unwrap()
}

#[test]
fn forward_matches_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for trial in 0..30 {
        let (n, m) = (rng.gen_range(1..=9), rng.gen_range(1..=7));
        let x = random_matrix(&mut rng, n, m);
        let params = init_params::<f64>(rng.gen_range(1..=3), rng.gen_range(1..=6), trial).unwrap();
        let Ok(fast) = forward(&params, &x) else {
            assert_eq!(x.count_nonzero(), 0);
            continue;
        };
        for (i, (f, r)) in fast.0.iter().zip(reference_forward(&params, &x)).enumerate() {
            let r = r.unwrap_or(0.5);
            assert!((f - r).abs() < 1e-12, "trial {trial} row {i}: {f} vs {r}");
        }
    }
}

#[test]
fn finite_difference_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let h = 1e-6;
    for trial in 0..6 {
        let (n, m) = (rng.gen_range(2..=6), rng.gen_range(2..=6));
        let x = random_matrix(&mut rng, n, m);
        if x.count_nonzero() == 0 {
            continue;
        }
        let targets: Vec<(usize, f64)> = (0..n).map(|i| (i, rng.gen_range(0..=1) as f64)).collect();
        let params = init_params::<f64>(2, 3, 100 + trial).unwrap();
        let (_, grads) = loss_and_grads(&params, &x, &targets).unwrap();
        for (t, g) in grads.iter().enumerate() {
            for k in 0..g.len() {
                let shifted = |delta: f64| {
                    let mut p = params.clone();
                    p.tensors_mut()[t].data_mut()[k] += delta;
                    loss_and_grads(&p, &x, &targets).unwrap().0
                };
                let fd = (shifted(h) - shifted(-h)) / (2.0 * h);
                let a = g.data()[k];
                // central differences at h = 1e-6 carry ~1e-10 of rounding
                // noise, so tiny gradients are compared on a 1e-5 floor
                let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-5);
                assert!(rel < 1e-4, "trial {trial} tensor {t} entry {k}: {a} vs {fd}");
            }
        }
    }
}

fn arb_case() -> impl Strategy<Value = (u64, usize, usize)> {
    (any::<u64>(), 1usize..=10, 1usize..=7)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn permutation_symmetries((seed, n, m) in arb_case()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_matrix(&mut rng, n, m);
        prop_assume!(x.count_nonzero() > 0);
        let params = init_params::<f64>(2, 4, seed).unwrap();
        let mut rows: Vec<usize> = (0..n).collect();
        let mut cols: Vec<usize> = (0..m).collect();
        rows.shuffle(&mut rng);
        cols.shuffle(&mut rng);
        let base = forward(&params, &x).unwrap();
        let by_cols = forward(&params, &x.permute_cols(&cols)).unwrap();
        let by_rows = forward(&params, &x.permute_rows(&rows)).unwrap();
        for i in 0..n {
            prop_assert!((base.0[i] - by_cols.0[i]).abs() < 1e-12);
            prop_assert!((base.0[rows[i]] - by_rows.0[i]).abs() < 1e-12);
        }
        if let Ok(h) = exact_hstar(&x) {
            let hc = exact_hstar(&x.permute_cols(&cols)).unwrap();
            let hr = exact_hstar(&x.permute_rows(&rows)).unwrap();
            prop_assert_eq!(&h.estimate, &hc.estimate);
            for i in 0..n {
                prop_assert_eq!(h.estimate[rows[i]], hr.estimate[i]);
            }
        }
    }
}
