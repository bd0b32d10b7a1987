//! Finite-difference gradient checks over randomized small networks.

use fedsim_core::nn::network::{CeTerm, KdTerm, MoonTerm, ProximalTerm, SupConTerm};
use fedsim_core::nn::{backward, forward, ArchSpec, DenseArray, KdForm, Layer, LossSpec, ModelState};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{central_difference, max_relative_error};

pub const FD_STEP: f64 = 1e-5;
pub const REL_TOL: f64 = 1e-4;
/// Absolute floor in the relative-error denominator.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    CrossEntropy,
    SupCon,
    Distillation,
    DistillationLiteral,
    Proximal,
    Moon,
    Composite,
}

pub const ALL_LOSSES: [LossKind; 7] = [
    LossKind::CrossEntropy,
    LossKind::SupCon,
    LossKind::Distillation,
    LossKind::DistillationLiteral,
    LossKind::Proximal,
    LossKind::Moon,
    LossKind::Composite,
];

/// Every layer type: strided and unstrided conv, ReLU, pooling, flatten, dense.
pub fn all_layer_arch(channels: usize, len: usize, classes: usize) -> ArchSpec {
    let c1 = 3;
    let l1 = len - 3 + 1;
    let l2 = l1 / 2;
    let c2 = 4;
    let l3 = (l2 - 3) / 2 + 1;
    ArchSpec {
        layers: vec![
            Layer::Conv1d {
                in_channels: channels,
                out_channels: c1,
                kernel: 3,
                stride: 1,
            },
            Layer::Relu,
            Layer::MaxPool1d { kernel: 2 },
            Layer::Conv1d {
                in_channels: c1,
                out_channels: c2,
                kernel: 3,
                stride: 2,
            },
            Layer::Relu,
            Layer::Flatten,
            Layer::Dense {
                in_dim: c2 * l3,
                out_dim: 5,
            },
        ],
        encoder_output_dim: 5,
        projection_dim: 4,
        num_classes: classes,
    }
}

fn random_array(rng: &mut ChaCha8Rng, shape: Vec<usize>, scale: f64) -> DenseArray {
    let n = shape.iter().product();
    DenseArray::new(shape, (0..n).map(|_| rng.random_range(-scale..scale)).collect()).unwrap()
}

#[derive(Debug, Clone, Copy)]
pub struct CheckOutcome {
    pub kind: LossKind,
    pub seed: u64,
    pub max_rel_err: f64,
    pub entries: usize,
}

/// Runs one randomized instance for `kind`.
pub fn check_instance(kind: LossKind, seed: u64) -> CheckOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let channels = rng.random_range(1..=3);
    let len = rng.random_range(12..=16);
    let classes = rng.random_range(2..=3);
    let arch = all_layer_arch(channels, len, classes);
    let model = ModelState::init(&arch, &mut rng);
    let b = 3;
    // SupCon-style batches carry an original and an augmented half.
    let rows = 2 * b;
    let batch = random_array(&mut rng, vec![rows, channels, len], 1.0);
    let mut labels: Vec<usize> = (0..b).map(|_| rng.random_range(0..classes)).collect();
    labels.extend_from_within(..);

    let teacher = random_array(&mut rng, vec![b, classes], 2.0);
    let anchor = ModelState::init(&arch, &mut rng);
    let prev_model = ModelState::init(&arch, &mut rng);
    let glob_model = ModelState::init(&arch, &mut rng);
    let z_glob = forward(&arch, &glob_model, &batch.slice_rows(0, b)).unwrap().embeddings;
    let z_prev = forward(&arch, &prev_model, &batch.slice_rows(0, b)).unwrap().embeddings;
    let tau_sc = rng.random_range(0.1..1.0);
    let tau_kd = rng.random_range(0.5..4.0);
    let mu = rng.random_range(0.01..1.0);

    let ce = Some(CeTerm { weight: 1.0, rows: b });
    let sc = Some(SupConTerm {
        weight: 1.0,
        temperature: tau_sc,
    });
    let kd = |form| {
        Some(KdTerm {
            weight: 1.0,
            temperature: tau_kd,
            form,
            teacher_logits: &teacher,
        })
    };
    let prox = Some(ProximalTerm { mu, anchor: &anchor });
    let moon = Some(MoonTerm {
        weight: 1.0,
        temperature: 0.5,
        global_embeddings: &z_glob,
        prev_embeddings: &z_prev,
    });
    let spec = match kind {
        LossKind::CrossEntropy => LossSpec { ce, ..Default::default() },
        LossKind::SupCon => LossSpec { supcon: sc, ..Default::default() },
        LossKind::Distillation => LossSpec {
            kd: kd(KdForm::Softened),
            ..Default::default()
        },
        LossKind::DistillationLiteral => LossSpec {
            kd: kd(KdForm::Literal),
            ..Default::default()
        },
        LossKind::Proximal => LossSpec {
            ce,
            proximal: prox,
            ..Default::default()
        },
        LossKind::Moon => LossSpec { moon, ..Default::default() },
        LossKind::Composite => LossSpec {
            ce: Some(CeTerm { weight: 1.0, rows }),
            supcon: sc,
            kd: Some(KdTerm {
                weight: 0.7,
                temperature: tau_kd,
                form: KdForm::Softened,
                teacher_logits: &teacher,
            }),
            proximal: prox,
            moon,
        },
    };

    let (_, grad) = backward(&arch, &model, &batch, &labels, &spec).unwrap();
    let analytic = grad.flatten();
    let flat = model.flatten();
    let numeric = central_difference(&flat, FD_STEP, |w| {
        let m = ModelState::unflatten(&arch, w, 0).unwrap();
        backward(&arch, &m, &batch, &labels, &spec).unwrap().0.total
    });
    CheckOutcome {
        kind,
        seed,
        max_rel_err: max_relative_error(&analytic, &numeric, REL_FLOOR),
        entries: analytic.len(),
    }
}

/// Runs `per_loss` seeds for every loss kind.
pub fn run_suite(per_loss: u64) -> Vec<CheckOutcome> {
    let mut out = Vec::new();
    for (k, kind) in ALL_LOSSES.iter().enumerate() {
        for s in 0..per_loss {
            out.push(check_instance(*kind, 1000 * k as u64 + s));
        }
    }
    out
}
