use std::collections::HashMap;

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::aggregate::{aggregate_fedavg, aggregate_quality_weighted};
use super::client::{client_update_on, predict_logits, ClientData, ClientUpdateResult, RoundContext};
use super::config::{FlConfig, Strategy};
use crate::cost::round_comm_seconds;
use crate::data::{stack_samples, Population};
use crate::diagnostics::{macro_f1, EvalResult};
use crate::error::{Result, SimError};
use crate::nn::{ArchSpec, ActShape, DenseArray, LossBreakdown, ModelState};
use crate::rng::{stream, tag};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    /// 1-based round index.
    pub round: usize,
    /// Selected client ids, ascending.
    pub selected: Vec<usize>,
    /// Normalized aggregation weights aligned with `selected`.
    pub weights: Vec<f64>,
    pub global_state: ModelState,
    pub eval: EvalResult,
    pub comm_seconds: f64,
    pub params_trained: u64,
    /// Mean over selected clients of their last-epoch losses.
    pub mean_losses: LossBreakdown,
    /// Per-client post-update entropies aligned with `selected`, when computed.
    pub entropies: Vec<Option<f64>>,
}

impl RoundReport {
    pub fn macro_f1(&self) -> f64 {
        self.eval.macro_f1
    }
}

/// Uniform selection without replacement of `count` of `k` clients, sorted.
pub fn select_clients(k: usize, count: usize, rng: &mut crate::rng::SimRng) -> Vec<usize> {
    let mut s = index::sample(rng, k, count.min(k)).into_vec();
    s.sort_unstable();
    s
}

/// Macro-F1 of `model` on stacked inputs.
pub fn evaluate(arch: &ArchSpec, model: &ModelState, inputs: &DenseArray, labels: &[usize]) -> Result<EvalResult> {
    let logits = predict_logits(arch, model, inputs)?;
    let preds: Vec<usize> = (0..logits.rows())
        .map(|i| {
            let row = logits.row(i);
            // first maximum wins ties
            (0..row.len()).fold(0, |best, j| if row[j] > row[best] { j } else { best })
        })
        .collect();
    macro_f1(&preds, labels, arch.num_classes)
}

/// Checks that `arch` accepts the population's input and label space.
pub fn check_arch(population: &Population, arch: &ArchSpec) -> Result<()> {
    arch.validate_for_input(ActShape::Seq {
        channels: population.layout.total_channels(),
        len: population.window_len,
    })?;
    if arch.num_classes != population.num_classes {
        return Err(SimError::dim("arch.num_classes", population.num_classes, arch.num_classes));
    }
    Ok(())
}

/// Runs `cfg.rounds` rounds of federated training and reports each one.
pub fn run_federation(population: &Population, cfg: &FlConfig, arch: &ArchSpec) -> Result<Vec<RoundReport>> {
    run_federation_from(population, cfg, arch, None)
}

/// As [`run_federation`], optionally starting from a given global model.
pub fn run_federation_from(
    population: &Population,
    cfg: &FlConfig,
    arch: &ArchSpec,
    initial: Option<ModelState>,
) -> Result<Vec<RoundReport>> {
    cfg.validate()?;
    if population.clients.is_empty() {
        return Err(SimError::Empty("population has no clients".into()));
    }
    population.validate()?;
    check_arch(population, arch)?;
    if population.test_set.is_empty() {
        return Err(SimError::Empty("population has no test samples".into()));
    }
    let mut global = match initial {
        Some(m) => {
            if !m.conforms_to(arch) {
                return Err(SimError::dim("initial model", "state matching arch", "mismatched tensors"));
            }
            m
        }
        None => ModelState::init(arch, &mut stream(cfg.seed, &[tag::INIT])),
    };
    let (test_x, test_y) = stack_samples(&population.test_set)?;
    let data: Vec<ClientData<'_>> = population.clients.iter().map(ClientData::new).collect::<Result<_>>()?;
    let k = population.num_clients();
    let per_round = cfg.clients_per_round(k);
    let mut select_rng = stream(cfg.seed, &[tag::SELECT]);
    let mut prev_local: HashMap<usize, ModelState> = HashMap::new();
    let bytes = (global.num_params() * cfg.bytes_per_param) as f64;

    let mut reports = Vec::with_capacity(cfg.rounds);
    for t in 1..=cfg.rounds {
        let selected = select_clients(k, per_round, &mut select_rng);
        let ctx = RoundContext {
            arch,
            layout: &population.layout,
            cfg,
            global: &global,
            round: t,
        };
        let updates: Vec<ClientUpdateResult> = selected
            .par_iter()
            .map(|&i| client_update_on(&ctx, &data[i], prev_local.get(&population.clients[i].client_id)))
            .collect::<Result<_>>()?;

        let (next, weights) = match cfg.strategy {
            Strategy::Flism => aggregate_quality_weighted(&updates)?,
            _ => aggregate_fedavg(&updates)?,
        };
        let mean_losses = mean_last_losses(&updates);
        let entropies = updates.iter().map(|u| u.mean_entropy).collect();
        if cfg.strategy == Strategy::Moon {
            for u in &updates {
                prev_local.insert(u.client_id, u.params.clone());
            }
        }
        let speeds: Vec<(f64, f64)> = selected
            .iter()
            .map(|&i| (population.clients[i].upload_bps, population.clients[i].download_bps))
            .collect();
        let comm_seconds = round_comm_seconds(bytes, &speeds)?;
        let mut next = next;
        next.version_tag = t;
        let eval = evaluate(arch, &next, &test_x, &test_y)?;
        global = next;
        reports.push(RoundReport {
            round: t,
            selected: selected.iter().map(|&i| population.clients[i].client_id).collect(),
            weights,
            global_state: global.clone(),
            eval,
            comm_seconds,
            params_trained: (global.num_params() * selected.len()) as u64,
            mean_losses,
            entropies,
        });
    }
    Ok(reports)
}

fn mean_last_losses(updates: &[ClientUpdateResult]) -> LossBreakdown {
    let mut m = LossBreakdown::default();
    let n = updates.len() as f64;
    for u in updates {
        if let Some(l) = u.local_losses.last() {
            m.ce += l.ce / n;
            m.supcon += l.supcon / n;
            m.kd += l.kd / n;
            m.proximal += l.proximal / n;
            m.moon += l.moon / n;
            m.total += l.total / n;
        }
    }
    m
}
