mod oracles;

use fedsim_core::nn::loss::{self, moon_contrastive_grad};
use fedsim_core::nn::{cross_entropy_loss, forward, kd_loss, supcon_loss, ArchSpec, DenseArray, Layer, ModelState};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_unit_rows(rng: &mut ChaCha8Rng, n: usize, d: usize) -> DenseArray {
    let mut data = Vec::with_capacity(n * d);
    for _ in 0..n {
        let row: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let nrm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        data.extend(row.iter().map(|v| v / nrm));
    }
    DenseArray::new(vec![n, d], data).unwrap()
}

#[test]
fn forward_matches_scalar_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let (channels, len) = (3, 11);
    let arch = ArchSpec {
        layers: vec![
            Layer::Conv1d {
                in_channels: channels,
                out_channels: 4,
                kernel: 3,
                stride: 1,
            },
            Layer::Relu,
            Layer::MaxPool1d { kernel: 2 },
            Layer::Flatten,
            Layer::Dense { in_dim: 16, out_dim: 6 },
        ],
        encoder_output_dim: 6,
        projection_dim: 3,
        num_classes: 4,
    };
    let model = ModelState::init(&arch, &mut rng);
    let n = 5 * channels * len;
    let batch = DenseArray::new(vec![5, channels, len], (0..n).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();
    let out = forward(&arch, &model, &batch).unwrap();
    let expected = oracles::conv_dense_logits(&model, &oracles::to_nested3(&batch));
    for (i, row) in expected.iter().enumerate() {
        for (a, e) in out.logits.row(i).iter().zip(row) {
            assert!((a - e).abs() < 1e-10, "row {i}: {a} vs {e}");
        }
    }
    for i in 0..5 {
        let nrm: f64 = out.projections.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((nrm - 1.0).abs() < 1e-12);
    }
}

#[test]
fn supcon_fixed_four_rows_matches_double_loop() {
    let z = DenseArray::new(
        vec![4, 2],
        vec![1.0, 0.0, 0.6, 0.8, 0.0, 1.0, -0.8, 0.6],
    )
    .unwrap();
    let labels = [0, 0, 1, 1];
    let got = supcon_loss(&z, &labels, 0.07).unwrap();
    let expected = oracles::supcon_double_loop(&oracles::to_nested2(&z), &labels, 0.07);
    assert!((got - expected).abs() < 1e-9, "{got} vs {expected}");
}

#[test]
fn supcon_random_batches_match_double_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..100 {
        let n = rng.random_range(2..=16);
        let d = rng.random_range(2..=8);
        let z = random_unit_rows(&mut rng, n, d);
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
        let tau = rng.random_range(0.05..1.0);
        let got = supcon_loss(&z, &labels, tau).unwrap();
        let expected = oracles::supcon_double_loop(&oracles::to_nested2(&z), &labels, tau);
        assert!((got - expected).abs() < 1e-9, "{got} vs {expected}");
        assert!(got >= 0.0);
    }
}

#[test]
fn kd_matches_scalar_oracle() {
    let t = DenseArray::new(vec![1, 2], vec![2.0, 0.0]).unwrap();
    let s = DenseArray::new(vec![1, 2], vec![0.0, 0.0]).unwrap();
    let got = kd_loss(&t, &s, 1.0).unwrap();
    let expected = oracles::kd_scalar(&[vec![2.0, 0.0]], &[vec![0.0, 0.0]], 1.0);
    assert!((got - expected).abs() < 1e-9);
    // closed form: p = sigmoid(2); KL(p || 1/2) = p ln 2p + (1-p) ln 2(1-p)
    let p = 1.0 / (1.0 + (-2f64).exp());
    let closed = p * (2.0 * p).ln() + (1.0 - p) * (2.0 * (1.0 - p)).ln();
    assert!((got - closed).abs() < 1e-12);

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let (n, c) = (rng.random_range(1..6), rng.random_range(2..6));
        let gen = |rng: &mut ChaCha8Rng| DenseArray::new(vec![n, c], (0..n * c).map(|_| rng.random_range(-3.0..3.0)).collect()).unwrap();
        let (t, s) = (gen(&mut rng), gen(&mut rng));
        let tau = rng.random_range(0.5..4.0);
        let got = kd_loss(&t, &s, tau).unwrap();
        let expected = oracles::kd_scalar(&oracles::to_nested2(&t), &oracles::to_nested2(&s), tau);
        assert!((got - expected).abs() < 1e-9);
    }
}

#[test]
fn moon_matches_scalar_oracle() {
    let z = DenseArray::new(vec![2, 3], vec![1.0, 0.5, -0.2, 0.3, 0.3, 0.9]).unwrap();
    let g = DenseArray::new(vec![2, 3], vec![0.9, 0.4, 0.0, -0.1, 0.5, 0.7]).unwrap();
    let p = DenseArray::new(vec![2, 3], vec![-0.2, 1.0, 0.3, 0.8, -0.6, 0.1]).unwrap();
    let (got, _) = moon_contrastive_grad(&z, &g, &p, 0.5).unwrap();
    let expected = oracles::moon_scalar(
        &oracles::to_nested2(&z),
        &oracles::to_nested2(&g),
        &oracles::to_nested2(&p),
        0.5,
    );
    assert!((got - expected).abs() < 1e-12);
}

#[test]
fn entropy_matches_scalar_oracle() {
    let logits = DenseArray::new(vec![2, 3], vec![0.0, 1.0, -1.0, 2.0, 2.0, 0.5]).unwrap();
    let probs = loss::softmax(&logits).unwrap();
    let got = loss::mean_prediction_entropy(&logits).unwrap();
    let expected = oracles::mean_entropy_scalar(&oracles::to_nested2(&probs));
    assert!((got - expected).abs() < 1e-12);
}

proptest! {
    #[test]
    fn supcon_is_permutation_invariant(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(2..10usize);
        let z = random_unit_rows(&mut rng, n, 4);
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let zp = DenseArray::new(vec![n, 4], perm.iter().flat_map(|&i| z.row(i).to_vec()).collect()).unwrap();
        let lp: Vec<usize> = perm.iter().map(|&i| labels[i]).collect();
        let a = supcon_loss(&z, &labels, 0.2).unwrap();
        let b = supcon_loss(&zp, &lp, 0.2).unwrap();
        prop_assert!((a - b).abs() < 1e-10);
    }

    #[test]
    fn kd_self_is_zero(vals in proptest::collection::vec(-20.0..20.0f64, 2..12), tau in 0.05..10.0f64) {
        let c = vals.len();
        let a = DenseArray::new(vec![1, c], vals).unwrap();
        prop_assert!(kd_loss(&a, &a, tau).unwrap().abs() <= 1e-12);
    }

    #[test]
    fn ce_shift_invariant(vals in proptest::collection::vec(-10.0..10.0f64, 2..8), shift in -50.0..50.0f64, label in 0usize..2) {
        let c = vals.len();
        let a = DenseArray::new(vec![1, c], vals.clone()).unwrap();
        let b = DenseArray::new(vec![1, c], vals.iter().map(|v| v + shift).collect()).unwrap();
        let la = cross_entropy_loss(&a, &[label]).unwrap();
        let lb = cross_entropy_loss(&b, &[label]).unwrap();
        prop_assert!((la - lb).abs() < 1e-9);
        prop_assert!(la >= 0.0);
    }

    #[test]
    fn loss_values_are_deterministic(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = random_unit_rows(&mut rng, 6, 3);
        let labels = [0, 1, 0, 1, 2, 2];
        let a = supcon_loss(&z, &labels, 0.07).unwrap();
        let b = supcon_loss(&z, &labels, 0.07).unwrap();
        prop_assert_eq!(a.to_bits(), b.to_bits());
    }
}
