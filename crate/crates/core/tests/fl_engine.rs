use fedsim_core::data::augment::{dropout_rows, sample_retain_set};
use fedsim_core::data::{generate_population, stack_samples, ClientProfile, Population, PopulationConfig};
use fedsim_core::fl::{
    aggregate_fedavg, client_update, entropy_quality_weight, run_federation, FlConfig, RoundContext, Strategy, Weighting,
};
use fedsim_core::nn::network::{CeTerm, KdTerm, ProximalTerm, SupConTerm};
use fedsim_core::nn::{backward, forward, ArchSpec, DenseArray, Layer, LossSpec, ModelState};
use fedsim_core::rng::{stream, tag};
use rand::seq::SliceRandom;

fn small_population(p_inc: f64, seed: u64) -> Population {
    generate_population(&PopulationConfig {
        num_clients: 5,
        samples_per_client: [6, 10],
        test_samples_per_client: 2,
        incomplete_ratio: p_inc,
        seed,
        ..Default::default()
    })
    .unwrap()
}

fn arch_for(pop: &Population) -> ArchSpec {
    ArchSpec::default_cnn(pop.layout.total_channels(), pop.window_len, pop.num_classes).unwrap()
}

fn quick(strategy: Strategy) -> FlConfig {
    FlConfig {
        rounds: 3,
        local_epochs: 1,
        selection_fraction: 0.6,
        strategy,
        optimizer: fedsim_core::nn::OptimizerConfig {
            batch_size: 4,
            ..Default::default()
        },
        seed: 7,
        ..Default::default()
    }
}

fn states(reports: &[fedsim_core::fl::RoundReport]) -> Vec<ModelState> {
    reports.iter().map(|r| r.global_state.clone()).collect()
}

#[test]
fn single_client_single_round_fedavg_is_local_model() {
    let mut pop = small_population(0.0, 1);
    pop.clients.truncate(1);
    let arch = arch_for(&pop);
    let cfg = FlConfig {
        rounds: 1,
        selection_fraction: 1.0,
        ..quick(Strategy::FedAvg)
    };
    let reports = run_federation(&pop, &cfg, &arch).unwrap();
    let w0 = ModelState::init(&arch, &mut stream(cfg.seed, &[tag::INIT]));
    let ctx = RoundContext {
        arch: &arch,
        layout: &pop.layout,
        cfg: &cfg,
        global: &w0,
        round: 1,
    };
    let local = client_update(&ctx, &pop.clients[0], None).unwrap();
    assert_eq!(reports[0].global_state.flatten(), local.params.flatten());
    assert_eq!(reports[0].weights, vec![1.0]);
}

#[test]
fn flism_reduces_to_fedavg_bitwise() {
    let pop = small_population(0.6, 2);
    let arch = arch_for(&pop);
    let fedavg = run_federation(&pop, &FlConfig { rounds: 5, ..quick(Strategy::FedAvg) }, &arch).unwrap();
    let reduced = FlConfig {
        rounds: 5,
        ..quick(Strategy::Flism).flism_variant(false, false, false)
    };
    assert_eq!(reduced.gamma, 0.0);
    assert_eq!(reduced.weighting(), Weighting::SampleCount);
    let flism = run_federation(&pop, &reduced, &arch).unwrap();
    assert_eq!(states(&fedavg), states(&flism));
    assert_eq!(
        fedavg.iter().map(|r| r.selected.clone()).collect::<Vec<_>>(),
        flism.iter().map(|r| r.selected.clone()).collect::<Vec<_>>()
    );
}

#[test]
fn identical_clients_give_identical_first_round() {
    // One sample per client: every local model and entropy is identical.
    let mut pop = small_population(0.0, 3);
    let template = pop.clients[0].dataset[0].clone();
    for c in &mut pop.clients {
        c.dataset = vec![template.clone()];
    }
    let arch = arch_for(&pop);
    let base = FlConfig {
        rounds: 1,
        selection_fraction: 1.0,
        gamma: 0.0,
        mirl: false,
        ..quick(Strategy::Flism)
    };
    let flism = run_federation(&pop, &base, &arch).unwrap();
    let fedavg = run_federation(&pop, &base.with_strategy(Strategy::FedAvg), &arch).unwrap();
    assert_eq!(flism[0].global_state, fedavg[0].global_state);
    let ent = &flism[0].entropies;
    assert!(ent.iter().all(|e| e.is_some() && *e == ent[0]));
}

#[test]
fn weights_normalized_every_round() {
    let pop = small_population(0.6, 4);
    let arch = arch_for(&pop);
    for s in Strategy::ALL {
        let reports = run_federation(&pop, &quick(s), &arch).unwrap();
        assert_eq!(reports.len(), 3);
        for r in &reports {
            let sum: f64 = r.weights.iter().sum();
            assert!((sum - 1.0).abs() < 1e-9, "{s}: {sum}");
            assert!(r.weights.iter().all(|&w| w > 0.0));
            assert_eq!(r.selected.len(), 3);
            assert!(r.selected.windows(2).all(|w| w[0] < w[1]));
            assert!(r.comm_seconds > 0.0);
            assert!((0.0..=1.0).contains(&r.eval.macro_f1));
        }
    }
}

#[test]
fn runs_are_deterministic() {
    let pop = small_population(0.4, 5);
    let arch = arch_for(&pop);
    for s in [Strategy::Flism, Strategy::Moon] {
        let a = run_federation(&pop, &quick(s), &arch).unwrap();
        let b = run_federation(&pop, &quick(s), &arch).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn proximal_and_moon_with_zero_mu_match_fedavg() {
    let pop = small_population(0.4, 6);
    let arch = arch_for(&pop);
    let fedavg = run_federation(&pop, &quick(Strategy::FedAvg), &arch).unwrap();
    let prox = run_federation(
        &pop,
        &FlConfig {
            mu_prox: 0.0,
            ..quick(Strategy::FedProx)
        },
        &arch,
    )
    .unwrap();
    let moon = run_federation(
        &pop,
        &FlConfig {
            mu_moon: 0.0,
            moon_optimizer: None,
            ..quick(Strategy::Moon)
        },
        &arch,
    )
    .unwrap();
    assert_eq!(states(&fedavg), states(&prox));
    assert_eq!(states(&fedavg), states(&moon));
}

fn one_batch_setup(strategy: Strategy) -> (Population, ArchSpec, FlConfig, ModelState) {
    let pop = small_population(0.0, 8);
    let arch = arch_for(&pop);
    let cfg = FlConfig {
        local_epochs: 1,
        gamma: 0.7,
        optimizer: fedsim_core::nn::OptimizerConfig {
            batch_size: 64,
            ..Default::default()
        },
        ..quick(strategy)
    };
    let w0 = ModelState::init(&arch, &mut stream(99, &[tag::INIT]));
    (pop, arch, cfg, w0)
}

#[test]
fn first_batch_kd_and_proximal_are_zero_and_moon_is_ln2() {
    for s in [Strategy::Flism, Strategy::FedProx, Strategy::Moon] {
        let (pop, arch, cfg, w0) = one_batch_setup(s);
        let ctx = RoundContext {
            arch: &arch,
            layout: &pop.layout,
            cfg: &cfg,
            global: &w0,
            round: 1,
        };
        let before = w0.clone();
        let r = client_update(&ctx, &pop.clients[0], None).unwrap();
        let l = r.local_losses[0];
        assert_eq!(l.kd, 0.0);
        assert_eq!(l.proximal, 0.0);
        if s == Strategy::Moon {
            assert!((l.moon - std::f64::consts::LN_2).abs() < 1e-12, "{}", l.moon);
        }
        // the incoming global model is never modified
        assert_eq!(w0, before);
    }
}

/// One epoch, one batch: the update equals `-lr·(Σ term gradients + wd·w)`
/// with each term's gradient computed on its own.
#[test]
fn single_step_matches_manual_composition() {
    let (pop, arch, cfg, w0) = one_batch_setup(Strategy::Flism);
    let client: &ClientProfile = &pop.clients[0];
    let ctx = RoundContext {
        arch: &arch,
        layout: &pop.layout,
        cfg: &cfg,
        global: &w0,
        round: 1,
    };
    let result = client_update(&ctx, client, None).unwrap();

    let k = client.client_id as u64;
    let mut order: Vec<usize> = (0..client.num_samples()).collect();
    order.shuffle(&mut stream(cfg.seed, &[tag::SHUFFLE, 1, k]));
    let (x, y) = stack_samples(order.iter().map(|&i| &client.dataset[i])).unwrap();
    let mut aug_rng = stream(cfg.seed, &[tag::AUGMENT, 1, k]);
    let retain = sample_retain_set(&client.available_modalities, &mut aug_rng).unwrap();
    let sets: Vec<&[usize]> = vec![&retain; x.rows()];
    let x_aug = dropout_rows(&x, &pop.layout, &sets, cfg.augment.noise_mu, cfg.augment.noise_sigma, &mut aug_rng).unwrap();
    let input = DenseArray::concat_rows(&x, &x_aug).unwrap();
    let labels: Vec<usize> = y.iter().chain(&y).copied().collect();
    let b = x.rows();
    let teacher = forward(&arch, &w0, &x).unwrap().logits;

    let specs = [
        LossSpec {
            ce: Some(CeTerm { weight: 1.0, rows: b }),
            ..Default::default()
        },
        LossSpec {
            supcon: Some(SupConTerm {
                weight: 1.0,
                temperature: cfg.tau_sc,
            }),
            ..Default::default()
        },
        LossSpec {
            kd: Some(KdTerm {
                weight: cfg.gamma,
                temperature: cfg.tau_kd,
                form: cfg.kd_form,
                teacher_logits: &teacher,
            }),
            ..Default::default()
        },
    ];
    let w = w0.flatten();
    let mut g = vec![0.0; w.len()];
    for spec in &specs {
        let (_, grad) = backward(&arch, &w0, &input, &labels, spec).unwrap();
        for (a, v) in g.iter_mut().zip(grad.flatten()) {
            *a += v;
        }
    }
    let (lr, wd) = (cfg.optimizer.learning_rate, cfg.optimizer.weight_decay);
    let got = result.params.flatten();
    let mut worst = 0.0f64;
    for i in 0..w.len() {
        let expected_delta = -lr * (g[i] + wd * w[i]);
        worst = worst.max(((got[i] - w[i]) - expected_delta).abs());
    }
    assert!(worst < 1e-10, "max |Δ| = {worst:e}");
}

#[test]
fn entropy_weight_examples() {
    // Zero model: uniform predictions over 3 classes.
    let arch = ArchSpec {
        layers: vec![Layer::Dense { in_dim: 3, out_dim: 3 }],
        encoder_output_dim: 3,
        projection_dim: 2,
        num_classes: 3,
    };
    let inputs = DenseArray::new(vec![2, 3], vec![0.3, -1.0, 2.0, 0.0, 0.5, 0.1]).unwrap();
    let (r, h) = entropy_quality_weight(&arch, &ModelState::zeros(&arch), &inputs, 1e-3).unwrap();
    assert!((h - 3f64.ln()).abs() < 1e-12);
    assert!((r - 0.9102).abs() < 1e-4);

    // Classifier bias far apart: confident predictions clamp to the floor.
    let mut confident = ModelState::zeros(&arch);
    confident.classifier.bias = DenseArray::new(vec![3], vec![200.0, 0.0, 0.0]).unwrap();
    let (r, _) = entropy_quality_weight(&arch, &confident, &inputs, 1e-3).unwrap();
    assert_eq!(r, 1000.0);

    // Identity encoder and classifier: logits equal the inputs.
    let mut ident = ModelState::zeros(&arch);
    let eye = DenseArray::new(vec![3, 3], vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
    ident.encoder[0].weight = eye.clone();
    ident.classifier.weight = eye;
    let hand = |row: &[f64]| {
        let z: f64 = row.iter().map(|v| v.exp()).sum();
        -row.iter().map(|v| (v.exp() / z) * (v.exp() / z).ln()).sum::<f64>()
    };
    let expected = (hand(&[0.3, -1.0, 2.0]) + hand(&[0.0, 0.5, 0.1])) / 2.0;
    let (_, h) = entropy_quality_weight(&arch, &ident, &inputs, 1e-3).unwrap();
    assert!((h - expected).abs() < 1e-12);
}

#[test]
fn lower_entropy_gets_larger_weight() {
    let pop = small_population(0.0, 9);
    let arch = arch_for(&pop);
    let cfg = quick(Strategy::Flism);
    let w0 = ModelState::init(&arch, &mut stream(1, &[tag::INIT]));
    let ctx = RoundContext {
        arch: &arch,
        layout: &pop.layout,
        cfg: &cfg,
        global: &w0,
        round: 1,
    };
    let mut a = client_update(&ctx, &pop.clients[0], None).unwrap();
    let mut b = a.clone();
    b.client_id += 100;
    a.quality_weight = 1.0 / 0.4;
    b.quality_weight = 1.0 / 0.9;
    let (_, w) = fedsim_core::fl::aggregate_quality_weighted(&[a.clone(), b.clone()]).unwrap();
    assert!(w[0] > w[1]);
    let (_, w) = aggregate_fedavg(&[a, b]).unwrap();
    assert_eq!(w, vec![0.5, 0.5]);
}

#[test]
fn proximal_single_step_closed_form() {
    let arch = ArchSpec {
        layers: vec![Layer::Dense { in_dim: 1, out_dim: 1 }],
        encoder_output_dim: 1,
        projection_dim: 1,
        num_classes: 2,
    };
    let n = ModelState::zeros(&arch).num_params();
    let w: Vec<f64> = (0..n).map(|i| 0.5 + i as f64).collect();
    let a: Vec<f64> = (0..n).map(|i| -0.25 * i as f64).collect();
    let model = ModelState::unflatten(&arch, &w, 0).unwrap();
    let anchor = ModelState::unflatten(&arch, &a, 0).unwrap();
    let mu = 0.3;
    let spec = LossSpec {
        proximal: Some(ProximalTerm { mu, anchor: &anchor }),
        ..Default::default()
    };
    let x = DenseArray::new(vec![1, 1], vec![1.0]).unwrap();
    let (loss, grad) = backward(&arch, &model, &x, &[0], &spec).unwrap();
    let sq: f64 = w.iter().zip(&a).map(|(p, q)| (p - q) * (p - q)).sum();
    assert!((loss.proximal - 0.5 * mu * sq).abs() < 1e-12);
    assert!((loss.total - 0.5 * mu * sq).abs() < 1e-12);
    for ((g, p), q) in grad.flatten().iter().zip(&w).zip(&a) {
        assert!((g - mu * (p - q)).abs() < 1e-12);
    }
    // one SGD step, lr 0.1, no decay
    let cfg = fedsim_core::nn::OptimizerConfig {
        learning_rate: 0.1,
        weight_decay: 0.0,
        batch_size: 1,
    };
    let next = fedsim_core::nn::sgd_step(&model, &grad, &cfg).unwrap().flatten();
    for ((v, p), q) in next.iter().zip(&w).zip(&a) {
        assert!((v - (p - 0.1 * mu * (p - q))).abs() < 1e-12);
    }
}

#[test]
fn rejects_bad_inputs() {
    let pop = small_population(0.0, 10);
    let arch = ArchSpec::default_cnn(pop.layout.total_channels() + 1, pop.window_len, pop.num_classes).unwrap();
    assert!(run_federation(&pop, &quick(Strategy::FedAvg), &arch).is_err());
    let mut empty = small_population(0.0, 10);
    empty.clients.clear();
    assert!(run_federation(&empty, &quick(Strategy::FedAvg), &arch_for(&pop)).is_err());
    let bad = FlConfig {
        local_epochs: 0,
        ..quick(Strategy::FedAvg)
    };
    assert!(run_federation(&pop, &bad, &arch_for(&pop)).is_err());
}

#[test]
fn hundred_clients_twenty_rounds_finishes() {
    let pop = generate_population(&PopulationConfig {
        num_clients: 100,
        incomplete_ratio: 0.4,
        seed: 11,
        ..Default::default()
    })
    .unwrap();
    let arch = arch_for(&pop);
    let cfg = FlConfig {
        rounds: 20,
        local_epochs: 1,
        selection_fraction: 0.1,
        ..Default::default()
    };
    let t0 = std::time::Instant::now();
    let reports = run_federation(&pop, &cfg, &arch).unwrap();
    assert_eq!(reports.len(), 20);
    assert!(reports.iter().all(|r| r.selected.len() == 10));
    assert!(t0.elapsed().as_secs() < 300);
}
