//! Early vs intermediate fusion vs deep-imputation cost scaling.

use std::io::Write;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use super::{count_macs, count_params, encoder_macs, encoder_params, layer_params, simulate_comm, with_input_channels};
use crate::data::SpeedConfig;
use crate::error::{Result, SimError};
use crate::nn::{ActShape, ArchSpec, Layer};
use crate::rng::{stream, tag};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fusion {
    Early,
    Intermediate,
    DeepImputation,
}

/// Attention-fusion head over per-modality embeddings: Q, K and V
/// projections of width `d`, then a classifier on the pooled token.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionHeadSpec {
    /// Per-modality projection width. `None` attends directly over encoder outputs.
    pub shared_dim: Option<usize>,
}

/// Cross-modality generator: Conv(c→h) ReLU Conv(h→c), both with kernel `k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImputerSpec {
    pub hidden_channels: usize,
    pub kernel: usize,
}

impl Default for ImputerSpec {
    fn default() -> Self {
        Self {
            hidden_channels: 16,
            kernel: 5,
        }
    }
}

impl ImputerSpec {
    fn layers(&self, channels: usize) -> Vec<Layer> {
        vec![
            Layer::Conv1d {
                in_channels: channels,
                out_channels: self.hidden_channels,
                kernel: self.kernel,
                stride: 1,
            },
            Layer::Relu,
            Layer::Conv1d {
                in_channels: self.hidden_channels,
                out_channels: channels,
                kernel: self.kernel,
                stride: 1,
            },
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionCostSpec {
    pub fusion: Fusion,
    pub num_modalities: usize,
    pub per_modality_channels: usize,
    pub window_len: usize,
    /// Single-modality encoder template; its first convolution's input
    /// channels are rewritten per fusion scheme.
    pub encoder: ArchSpec,
    pub fusion_head: FusionHeadSpec,
    pub imputer: ImputerSpec,
    pub bytes_per_param: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub params_per_client_round: f64,
    pub macs_per_sample: f64,
    pub models_trained_count: u64,
    pub bytes_per_round: f64,
    pub comm_seconds_total: f64,
}

impl CostReport {
    /// Fills in exchange time over the given per-round selections.
    pub fn with_comm(mut self, speeds: &[(f64, f64)], selections: &[Vec<usize>]) -> Result<Self> {
        self.comm_seconds_total = simulate_comm(self.bytes_per_round, speeds, selections)?;
        Ok(self)
    }
}

struct Parts {
    /// One modality branch (encoder plus optional projection).
    branch_params: u64,
    branch_macs: u64,
    d: usize,
}

impl FusionCostSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_modalities < 2 {
            return Err(SimError::config("cost.num_modalities", "must be >= 2"));
        }
        if self.per_modality_channels == 0 {
            return Err(SimError::config("cost.per_modality_channels", "must be >= 1"));
        }
        if self.bytes_per_param == 0 {
            return Err(SimError::config("cost.bytes_per_param", "must be >= 1"));
        }
        let unimodal = with_input_channels(&self.encoder, self.per_modality_channels)?;
        unimodal.validate_for_input(ActShape::Seq {
            channels: self.per_modality_channels,
            len: self.window_len,
        })?;
        Ok(())
    }

    fn branch(&self) -> Result<Parts> {
        let enc = with_input_channels(&self.encoder, self.per_modality_channels)?;
        let d_enc = enc.encoder_output_dim;
        let mut params = encoder_params(&enc);
        let mut macs = encoder_macs(&enc, self.window_len)?;
        let d = match self.fusion_head.shared_dim {
            Some(s) => {
                params += layer_params(&Layer::Dense { in_dim: d_enc, out_dim: s });
                macs += (d_enc * s) as u64;
                s
            }
            None => d_enc,
        };
        Ok(Parts {
            branch_params: params,
            branch_macs: macs,
            d,
        })
    }

    fn head_params(&self, d: usize) -> u64 {
        let qkv = 3 * layer_params(&Layer::Dense { in_dim: d, out_dim: d });
        qkv + layer_params(&Layer::Dense {
            in_dim: d,
            out_dim: self.encoder.num_classes,
        })
    }

    fn head_macs(&self, d: usize) -> u64 {
        let m = self.num_modalities as u64;
        let d = d as u64;
        // Q/K/V per token, scores, weighted sum, classifier
        3 * m * d * d + 2 * m * m * d + d * self.encoder.num_classes as u64
    }

    /// Intermediate-fusion parameter count: `M·branch + head`.
    pub fn intermediate_params(&self) -> Result<u64> {
        let p = self.branch()?;
        Ok(self.num_modalities as u64 * p.branch_params + self.head_params(p.d))
    }
}

/// Per-client, per-round cost of one fusion scheme.
///
/// Intermediate fusion counts `M` branches plus the fusion head as one
/// jointly trained model. Deep imputation counts the `M·(M−1)` pairwise
/// imputers in `models_trained_count`; its parameters and MACs also include
/// the early-fusion task model.
pub fn fusion_cost(spec: &FusionCostSpec) -> Result<CostReport> {
    spec.validate()?;
    let (m, c, len) = (spec.num_modalities, spec.per_modality_channels, spec.window_len);
    let early = with_input_channels(&spec.encoder, m * c)?;
    let (params, macs, models) = match spec.fusion {
        Fusion::Early => (count_params(&early), count_macs(&early, len)?, 1),
        Fusion::Intermediate => {
            let p = spec.branch()?;
            (
                spec.intermediate_params()?,
                m as u64 * p.branch_macs + spec.head_macs(p.d),
                1,
            )
        }
        Fusion::DeepImputation => {
            let pairs = (m * (m - 1)) as u64;
            let layers = spec.imputer.layers(c);
            let imp_params = super::sum_params(&layers);
            let imp_macs = super::sum_macs(&layers, ActShape::Seq { channels: c, len })?.0;
            (
                count_params(&early) + pairs * imp_params,
                count_macs(&early, len)? + pairs * imp_macs,
                pairs,
            )
        }
    };
    Ok(CostReport {
        params_per_client_round: params as f64,
        macs_per_sample: macs as f64,
        models_trained_count: models,
        bytes_per_round: (params * spec.bytes_per_param as u64) as f64,
        comm_seconds_total: 0.0,
    })
}

/// Stage one trains `M` unimodal encoder+classifier models for a fraction of
/// rounds; stage two trains the intermediate-fusion model. Costs are
/// round-averaged.
fn harmony_cost(spec: &FusionCostSpec, unimodal_fraction: f64) -> Result<CostReport> {
    let fused = fusion_cost(&FusionCostSpec {
        fusion: Fusion::Intermediate,
        ..spec.clone()
    })?;
    let enc = with_input_channels(&spec.encoder, spec.per_modality_channels)?;
    let m = spec.num_modalities as f64;
    let uni_params = (encoder_params(&enc) + layer_params(&enc.classifier_layer())) as f64;
    let uni_macs = (encoder_macs(&enc, spec.window_len)? + (enc.encoder_output_dim * enc.num_classes) as u64) as f64;
    let f = unimodal_fraction;
    let params = f * m * uni_params + (1.0 - f) * fused.params_per_client_round;
    Ok(CostReport {
        params_per_client_round: params,
        macs_per_sample: f * m * uni_macs + (1.0 - f) * fused.macs_per_sample,
        models_trained_count: spec.num_modalities as u64 + 1,
        bytes_per_round: params * spec.bytes_per_param as f64,
        comm_seconds_total: 0.0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepStrategy {
    Flism,
    Fedmm,
    Harmony,
    DeepImputation,
}

impl SweepStrategy {
    pub const ALL: [SweepStrategy; 4] = [
        SweepStrategy::Flism,
        SweepStrategy::Fedmm,
        SweepStrategy::Harmony,
        SweepStrategy::DeepImputation,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SweepStrategy::Flism => "flism",
            SweepStrategy::Fedmm => "fedmm",
            SweepStrategy::Harmony => "harmony",
            SweepStrategy::DeepImputation => "deep_imputation",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderTemplate {
    pub conv_channels: [usize; 2],
    pub kernel: usize,
    pub encoder_output_dim: usize,
    pub projection_dim: usize,
}

impl Default for EncoderTemplate {
    fn default() -> Self {
        Self {
            conv_channels: [32, 64],
            kernel: 8,
            encoder_output_dim: 128,
            projection_dim: 64,
        }
    }
}

impl EncoderTemplate {
    pub fn build(&self, channels: usize, window_len: usize, num_classes: usize) -> Result<ArchSpec> {
        ArchSpec::cnn(
            channels,
            window_len,
            num_classes,
            self.conv_channels,
            self.kernel,
            self.encoder_output_dim,
            self.projection_dim,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub m_values: Vec<usize>,
    pub per_modality_channels: usize,
    /// Two seconds at 500 Hz.
    pub window_len: usize,
    pub num_classes: usize,
    pub encoder: EncoderTemplate,
    pub fusion_head: FusionHeadSpec,
    pub imputer: ImputerSpec,
    pub harmony_unimodal_fraction: f64,
    pub bytes_per_param: usize,
    pub num_clients: usize,
    pub selection_fraction: f64,
    pub rounds: usize,
    pub speeds: SpeedConfig,
    pub seed: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            m_values: vec![5, 10, 15, 20, 25, 30],
            per_modality_channels: 3,
            window_len: 1000,
            num_classes: 4,
            encoder: EncoderTemplate::default(),
            fusion_head: FusionHeadSpec::default(),
            imputer: ImputerSpec::default(),
            harmony_unimodal_fraction: 0.5,
            bytes_per_param: 8,
            num_clients: 100,
            selection_fraction: 0.1,
            rounds: 20,
            speeds: SpeedConfig::default(),
            seed: 0,
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m_values.is_empty() {
            return Err(SimError::config("cost.m_values", "axis list must not be empty"));
        }
        if let Some(m) = self.m_values.iter().find(|&&m| !(2..=64).contains(&m)) {
            return Err(SimError::config("cost.m_values", format!("{m} outside [2, 64]")));
        }
        if !(0.0..=1.0).contains(&self.harmony_unimodal_fraction) {
            return Err(SimError::config("cost.harmony_unimodal_fraction", "must be in [0, 1]"));
        }
        if self.num_clients == 0 || self.rounds == 0 {
            return Err(SimError::config("cost.num_clients", "clients and rounds must be >= 1"));
        }
        if !(self.selection_fraction > 0.0 && self.selection_fraction <= 1.0) {
            return Err(SimError::config("cost.selection_fraction", "must be in (0, 1]"));
        }
        self.speeds.validate()?;
        Ok(())
    }

    pub fn spec(&self, fusion: Fusion, m: usize) -> Result<FusionCostSpec> {
        Ok(FusionCostSpec {
            fusion,
            num_modalities: m,
            per_modality_channels: self.per_modality_channels,
            window_len: self.window_len,
            encoder: self.encoder.build(self.per_modality_channels, self.window_len, self.num_classes)?,
            fusion_head: self.fusion_head,
            imputer: self.imputer,
            bytes_per_param: self.bytes_per_param,
        })
    }

    /// Link speeds and uniform per-round selections shared by every row.
    pub fn comm_setup(&self) -> (Vec<(f64, f64)>, Vec<Vec<usize>>) {
        let speeds = (0..self.num_clients).map(|k| self.speeds.sample(self.seed, k)).collect();
        let per_round = ((self.selection_fraction * self.num_clients as f64).round() as usize).clamp(1, self.num_clients);
        let mut rng = stream(self.seed, &[tag::SELECT]);
        let selections = (0..self.rounds)
            .map(|_| index::sample(&mut rng, self.num_clients, per_round).into_vec())
            .collect();
        (speeds, selections)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    #[serde(rename = "M")]
    pub m: usize,
    pub strategy: String,
    pub params: f64,
    pub macs: f64,
    pub models: u64,
    pub comm_seconds: f64,
}

/// Cost table over modality counts for every strategy.
pub fn scalability_sweep(cfg: &SweepConfig) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    let (speeds, selections) = cfg.comm_setup();
    let mut rows = Vec::new();
    for &m in &cfg.m_values {
        for s in SweepStrategy::ALL {
            let report = match s {
                SweepStrategy::Flism => fusion_cost(&cfg.spec(Fusion::Early, m)?)?,
                SweepStrategy::Fedmm => fusion_cost(&cfg.spec(Fusion::Intermediate, m)?)?,
                SweepStrategy::Harmony => harmony_cost(&cfg.spec(Fusion::Intermediate, m)?, cfg.harmony_unimodal_fraction)?,
                SweepStrategy::DeepImputation => fusion_cost(&cfg.spec(Fusion::DeepImputation, m)?)?,
            }
            .with_comm(&speeds, &selections)?;
            rows.push(SweepRow {
                m,
                strategy: s.name().to_string(),
                params: report.params_per_client_round,
                macs: report.macs_per_sample,
                models: report.models_trained_count,
                comm_seconds: report.comm_seconds_total,
            });
        }
    }
    Ok(rows)
}

pub fn write_sweep_csv<W: Write>(writer: W, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["M", "strategy", "params", "macs", "models", "comm_seconds"])?;
    for r in rows {
        w.write_record([
            r.m.to_string(),
            r.strategy.clone(),
            crate::data::csv_io::fmt_f64(r.params),
            crate::data::csv_io::fmt_f64(r.macs),
            r.models.to_string(),
            crate::data::csv_io::fmt_f64(r.comm_seconds),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_sweep_json<W: Write>(writer: W, rows: &[SweepRow]) -> Result<()> {
    serde_json::to_writer_pretty(writer, rows)?;
    Ok(())
}
