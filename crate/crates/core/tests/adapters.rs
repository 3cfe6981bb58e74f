use hyperlabel::adapters::{finetune, multiclass_infer, restricted_loss, FinetuneConfig, LabeledSubset};
use hyperlabel::datagen::{gen_condind_dataset, CondIndConfig};
use hyperlabel::hlmnet::{forward, init_params, params_to_json};
use hyperlabel::{LabelMatrix, LabelMode, ModelParams};
use rand::seq::{index::sample, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn dataset(seed: u64, n: usize) -> (LabelMatrix, Vec<i8>) {
    let cfg = CondIndConfig { n_range: (n, n), m_range: (5, 8), ..CondIndConfig::default() };
    let ds = gen_condind_dataset(1, &cfg, seed).unwrap().remove(0);
    (ds.x, ds.y.as_slice().to_vec())
}

fn reveal(y: &[i8], count: usize, seed: u64) -> Vec<(usize, i8)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = sample(&mut rng, y.len(), count).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| (i, y[i])).collect()
}

#[test]
fn small_steps_do_not_increase_the_restricted_loss() {
    for seed in 0..5 {
        let (x, y) = dataset(seed, 60);
        let params: ModelParams = init_params(2, 8, seed).unwrap();
        let subset = LabeledSubset::new(&reveal(&y, 20, seed), x.n()).unwrap();
        let before = restricted_loss(&params, &x, &subset).unwrap();
        let cfg = FinetuneConfig { lr: Some(1e-5), epochs: Some(1) };
        let after = restricted_loss(&finetune(&params, &x, &subset, cfg).unwrap(), &x, &subset).unwrap();
        assert!(after <= before, "seed {seed}: {after} > {before}");
    }
}

#[test]
fn finetune_is_deterministic_and_leaves_input_alone() {
    let (x, y) = dataset(3, 80);
    let params: ModelParams = init_params(2, 8, 1).unwrap();
    let snapshot = params.clone();
    let subset = LabeledSubset::new(&reveal(&y, 30, 1), x.n()).unwrap();
    let a = finetune(&params, &x, &subset, FinetuneConfig::default()).unwrap();
    let b = finetune(&params, &x, &subset, FinetuneConfig::default()).unwrap();
    assert_eq!(params, snapshot);
    assert_eq!(params_to_json(&a).unwrap(), params_to_json(&b).unwrap());
    assert_ne!(a, params);
}

#[test]
fn labels_outside_the_subset_are_never_read() {
    let (x, y) = dataset(4, 50);
    let params: ModelParams = init_params(2, 8, 2).unwrap();
    let revealed = reveal(&y, 15, 2);
    let mut flipped = y.clone();
    for (i, v) in flipped.iter_mut().enumerate() {
        if !revealed.iter().any(|&(r, _)| r == i) {
            *v = -*v;
        }
    }
    let subset_of = |labels: &[i8]| {
        let pairs: Vec<(usize, i8)> = revealed.iter().map(|&(i, _)| (i, labels[i])).collect();
        LabeledSubset::new(&pairs, x.n()).unwrap()
    };
    let a = finetune(&params, &x, &subset_of(&y), FinetuneConfig::default()).unwrap();
    let b = finetune(&params, &x, &subset_of(&flipped), FinetuneConfig::default()).unwrap();
    assert_eq!(params_to_json(&a).unwrap(), params_to_json(&b).unwrap());
}

#[test]
fn out_of_range_subset_is_rejected() {
    let (x, _) = dataset(5, 30);
    let params: ModelParams = init_params(1, 4, 0).unwrap();
    let subset = LabeledSubset::new(&[(40, 1)], 50).unwrap();
    assert!(finetune(&params, &x, &subset, FinetuneConfig::default()).is_err());
}

fn random_multiclass(rng: &mut ChaCha8Rng, n: usize, m: usize, classes: u8) -> LabelMatrix {
    let entries = (0..n * m).map(|_| rng.gen_range(0..=classes as i8)).collect();
    LabelMatrix::new(n, m, LabelMode::Multiclass(classes), entries).unwrap()
}

#[test]
fn two_classes_reduce_to_the_binary_model() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let params: ModelParams = init_params(3, 8, 4).unwrap();
    for _ in 0..10 {
        let x = random_multiclass(&mut rng, 25, 6, 2);
        if x.count_nonzero() == 0 {
            continue;
        }
        // class 1 -> +1, class 2 -> -1; the class-2 task is its negation
        let recoded: Vec<i8> = x.entries().iter().map(|&v| match v { 1 => 1, 2 => -1, _ => 0 }).collect();
        let binary = LabelMatrix::binary(x.n(), x.m(), recoded).unwrap();
        let p1 = forward(&params, &binary).unwrap().0;
        let p2 = forward(&params, &binary.negated()).unwrap().0;
        let soft = multiclass_infer(&params, &x).unwrap();
        for i in 0..x.n() {
            assert!((soft[i][0] - p1[i] / (p1[i] + p2[i])).abs() < 1e-12);
            assert!((soft[i][0] + soft[i][1] - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn multiclass_symmetries() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let params: ModelParams = init_params(2, 6, 5).unwrap();
    for classes in [3u8, 4, 6] {
        let x = random_multiclass(&mut rng, 30, 7, classes);
        let base = multiclass_infer(&params, &x).unwrap();
        for row in &base {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        // relabel classes with a permutation: columns move accordingly
        let mut perm: Vec<i8> = (1..=classes as i8).collect();
        perm.shuffle(&mut rng);
        let relabeled: Vec<i8> = x.entries().iter().map(|&v| if v == 0 { 0 } else { perm[v as usize - 1] }).collect();
        let xr = LabelMatrix::new(x.n(), x.m(), x.mode(), relabeled).unwrap();
        let moved = multiclass_infer(&params, &xr).unwrap();
        for i in 0..x.n() {
            for c in 0..classes as usize {
                assert!((base[i][c] - moved[i][perm[c] as usize - 1]).abs() < 1e-12);
            }
        }
        let mut cols: Vec<usize> = (0..x.m()).collect();
        cols.shuffle(&mut rng);
        let by_cols = multiclass_infer(&params, &x.permute_cols(&cols)).unwrap();
        let mut rows: Vec<usize> = (0..x.n()).collect();
        rows.shuffle(&mut rng);
        let by_rows = multiclass_infer(&params, &x.permute_rows(&rows)).unwrap();
        for i in 0..x.n() {
            for c in 0..classes as usize {
                assert!((base[i][c] - by_cols[i][c]).abs() < 1e-8);
                assert!((base[rows[i]][c] - by_rows[i][c]).abs() < 1e-8);
            }
        }
    }
}
