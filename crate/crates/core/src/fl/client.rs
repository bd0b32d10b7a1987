//! Local client updates for every strategy.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::config::{FlConfig, RetainPolicy, Strategy, Weighting};
use crate::data::augment::{dropout_rows, sample_retain_set};
use crate::data::{ClientProfile, ModalityLayout};
use crate::error::{Result, SimError};
use crate::nn::loss::{entropy_of, softmax_row};
use crate::nn::network::{CeTerm, KdTerm, MoonTerm, ProximalTerm, SupConTerm};
use crate::nn::{backward, forward, sgd_step_in_place, ArchSpec, DenseArray, LossBreakdown, LossSpec, ModelState};
use crate::rng::{stream, tag, SimRng};

const EVAL_CHUNK: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientUpdateResult {
    pub client_id: usize,
    pub params: ModelState,
    /// Unnormalized aggregation weight, finite and > 0.
    pub quality_weight: f64,
    /// Mean loss terms over each epoch's batches.
    pub local_losses: Vec<LossBreakdown>,
    pub samples_used: usize,
    /// Post-update mean prediction entropy on the client's training data, when computed.
    pub mean_entropy: Option<f64>,
}

/// Per-client data pre-stacked into one `[n, C, L]` array.
pub(crate) struct ClientData<'a> {
    pub profile: &'a ClientProfile,
    pub inputs: DenseArray,
    pub labels: Vec<usize>,
}

impl<'a> ClientData<'a> {
    pub fn new(profile: &'a ClientProfile) -> Result<Self> {
        if profile.dataset.is_empty() {
            return Err(SimError::Empty(format!("client {} has no samples", profile.client_id)));
        }
        let (inputs, labels) = crate::data::stack_samples(&profile.dataset)?;
        Ok(Self { profile, inputs, labels })
    }
}

pub(crate) fn gather_rows(a: &DenseArray, idx: &[usize]) -> DenseArray {
    let mut shape = a.shape().to_vec();
    shape[0] = idx.len();
    let mut data = Vec::with_capacity(idx.len() * a.row_len());
    for &i in idx {
        data.extend_from_slice(a.row(i));
    }
    DenseArray::from_parts(shape, data)
}

/// Logits of `model` on every row of `inputs`, evaluated in chunks.
pub fn predict_logits(arch: &ArchSpec, model: &ModelState, inputs: &DenseArray) -> Result<DenseArray> {
    let n = inputs.rows();
    let mut parts = Vec::new();
    let mut start = 0;
    while start < n {
        let end = (start + EVAL_CHUNK).min(n);
        parts.push(forward(arch, model, &inputs.slice_rows(start, end))?.logits);
        start = end;
    }
    let cols = parts.first().map_or(0, |p| p.row_len());
    let data: Vec<f64> = parts.into_iter().flat_map(DenseArray::into_data).collect();
    DenseArray::new(vec![n, cols], data)
}

/// Mean prediction entropy (natural log) of `model` over `inputs`.
pub fn dataset_mean_entropy(arch: &ArchSpec, model: &ModelState, inputs: &DenseArray) -> Result<f64> {
    let logits = predict_logits(arch, model, inputs)?;
    let n = logits.rows();
    let total: f64 = (0..n).map(|i| entropy_of(&softmax_row(logits.row(i)))).sum();
    Ok(total / n as f64)
}

/// `r = 1 / max(H, floor)` where `H` is the mean prediction entropy on `inputs`.
/// Returns `(r, H)`.
pub fn entropy_quality_weight(arch: &ArchSpec, model: &ModelState, inputs: &DenseArray, floor: f64) -> Result<(f64, f64)> {
    if inputs.rows() == 0 {
        return Err(SimError::Empty("entropy weight needs at least one sample".into()));
    }
    let h = dataset_mean_entropy(arch, model, inputs)?;
    Ok((quality_from_entropy(h, floor), h))
}

pub fn quality_from_entropy(mean_entropy: f64, floor: f64) -> f64 {
    1.0 / mean_entropy.max(floor)
}

struct Augmenter<'a> {
    layout: &'a ModalityLayout,
    present: &'a [usize],
    policy: RetainPolicy,
    mu: f64,
    sigma: f64,
    round_retain: Option<Vec<usize>>,
}

impl<'a> Augmenter<'a> {
    fn new(cfg: &FlConfig, layout: &'a ModalityLayout, present: &'a [usize], rng: &mut SimRng) -> Result<Self> {
        let mut aug = Self {
            layout,
            present,
            policy: cfg.augment.retain_policy,
            mu: cfg.augment.noise_mu,
            sigma: cfg.augment.noise_sigma,
            round_retain: None,
        };
        if aug.policy == RetainPolicy::PerRound {
            aug.round_retain = Some(aug.draw(rng)?);
        }
        Ok(aug)
    }

    /// A retain set, or every present modality when dropout is unavailable
    /// (single-modality clients get noise only).
    fn draw(&self, rng: &mut SimRng) -> Result<Vec<usize>> {
        if self.present.len() < 2 {
            return Ok(self.present.to_vec());
        }
        sample_retain_set(self.present, rng)
    }

    fn augment(&self, batch: &DenseArray, rng: &mut SimRng) -> Result<DenseArray> {
        let rows = batch.rows();
        let sets: Vec<Vec<usize>> = match (&self.round_retain, self.policy) {
            (Some(r), _) => vec![r.clone(); rows],
            (None, RetainPolicy::PerBatch) => vec![self.draw(rng)?; rows],
            _ => (0..rows).map(|_| self.draw(rng)).collect::<Result<_>>()?,
        };
        let refs: Vec<&[usize]> = sets.iter().map(Vec::as_slice).collect();
        dropout_rows(batch, self.layout, &refs, self.mu, self.sigma, rng)
    }
}

/// Inputs shared by every client in one round.
pub struct RoundContext<'a> {
    pub arch: &'a ArchSpec,
    pub layout: &'a ModalityLayout,
    pub cfg: &'a FlConfig,
    pub global: &'a ModelState,
    pub round: usize,
}

/// Runs `E` local epochs for one client under the configured strategy.
///
/// `prev_local` is the client's model from its last participation (MOON only);
/// on first participation the incoming global model stands in.
pub fn client_update(ctx: &RoundContext<'_>, client: &ClientProfile, prev_local: Option<&ModelState>) -> Result<ClientUpdateResult> {
    let data = ClientData::new(client)?;
    client_update_on(ctx, &data, prev_local)
}

pub(crate) fn client_update_on(ctx: &RoundContext<'_>, data: &ClientData<'_>, prev_local: Option<&ModelState>) -> Result<ClientUpdateResult> {
    let cfg = ctx.cfg;
    let (arch, global) = (ctx.arch, ctx.global);
    let k = data.profile.client_id as u64;
    let t = ctx.round as u64;
    let mut shuffle_rng = stream(cfg.seed, &[tag::SHUFFLE, t, k]);
    let mut aug_rng = stream(cfg.seed, &[tag::AUGMENT, t, k]);
    let opt = cfg.local_optimizer();
    let n = data.labels.len();

    let flism = cfg.strategy == Strategy::Flism;
    let use_mirl = flism && cfg.mirl;
    let use_kd = flism && cfg.gamma != 0.0;
    let augmenter = if use_mirl {
        Some(Augmenter::new(cfg, ctx.layout, &data.profile.available_modalities, &mut aug_rng)?)
    } else {
        None
    };
    let prev = prev_local.unwrap_or(global);

    let mut w = global.clone();
    let mut order: Vec<usize> = (0..n).collect();
    let mut local_losses = Vec::with_capacity(cfg.local_epochs);
    for _ in 0..cfg.local_epochs {
        order.shuffle(&mut shuffle_rng);
        let mut sum = LossBreakdown::default();
        let mut batches = 0usize;
        for idx in order.chunks(opt.batch_size) {
            let x = gather_rows(&data.inputs, idx);
            let y: Vec<usize> = idx.iter().map(|&i| data.labels[i]).collect();
            let b = idx.len();

            let teacher;
            let (g_emb, p_emb);
            let mut spec = LossSpec::cross_entropy(b);
            let (input, labels) = match &augmenter {
                Some(a) => {
                    let x_aug = a.augment(&x, &mut aug_rng)?;
                    let mut y2 = y.clone();
                    y2.extend_from_slice(&y);
                    spec.supcon = Some(SupConTerm {
                        weight: 1.0,
                        temperature: cfg.tau_sc,
                    });
                    if cfg.ce_on_expanded {
                        spec.ce = Some(CeTerm { weight: 1.0, rows: 2 * b });
                    }
                    (DenseArray::concat_rows(&x, &x_aug)?, y2)
                }
                None => (x.clone(), y),
            };
            if use_kd {
                teacher = forward(arch, global, &x)?.logits;
                spec.kd = Some(KdTerm {
                    weight: cfg.gamma,
                    temperature: cfg.tau_kd,
                    form: cfg.kd_form,
                    teacher_logits: &teacher,
                });
            }
            match cfg.strategy {
                Strategy::FedProx if cfg.mu_prox != 0.0 => {
                    spec.proximal = Some(ProximalTerm {
                        mu: cfg.mu_prox,
                        anchor: global,
                    });
                }
                Strategy::Moon if cfg.mu_moon != 0.0 => {
                    g_emb = forward(arch, global, &x)?.embeddings;
                    p_emb = forward(arch, prev, &x)?.embeddings;
                    spec.moon = Some(MoonTerm {
                        weight: cfg.mu_moon,
                        temperature: cfg.tau_moon,
                        global_embeddings: &g_emb,
                        prev_embeddings: &p_emb,
                    });
                }
                _ => {}
            }

            let (parts, grad) = backward(arch, &w, &input, &labels, &spec)?;
            sgd_step_in_place(&mut w, &grad, opt)?;
            for (acc, v) in [
                (&mut sum.ce, parts.ce),
                (&mut sum.supcon, parts.supcon),
                (&mut sum.kd, parts.kd),
                (&mut sum.proximal, parts.proximal),
                (&mut sum.moon, parts.moon),
                (&mut sum.total, parts.total),
            ] {
                *acc += v;
            }
            batches += 1;
        }
        let nb = batches as f64;
        local_losses.push(LossBreakdown {
            ce: sum.ce / nb,
            supcon: sum.supcon / nb,
            kd: sum.kd / nb,
            proximal: sum.proximal / nb,
            moon: sum.moon / nb,
            total: sum.total / nb,
        });
    }
    if !w.all_finite() {
        return Err(SimError::NonFinite(format!("client {k} parameters after local update")));
    }

    let weighting = cfg.weighting();
    let (quality_weight, mean_entropy) = match weighting {
        Weighting::SampleCount => (n as f64, None),
        Weighting::Entropy | Weighting::Hybrid => {
            let (r, h) = entropy_quality_weight(arch, &w, &data.inputs, cfg.entropy_floor)?;
            let r = if weighting == Weighting::Hybrid { r * n as f64 } else { r };
            (r, Some(h))
        }
    };
    if !(quality_weight.is_finite() && quality_weight > 0.0) {
        return Err(SimError::NonFinite(format!("client {k} quality weight {quality_weight}")));
    }
    Ok(ClientUpdateResult {
        client_id: data.profile.client_id,
        params: w,
        quality_weight,
        local_losses,
        samples_used: n,
        mean_entropy,
    })
}
