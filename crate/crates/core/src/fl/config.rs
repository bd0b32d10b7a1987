use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::nn::{KdForm, OptimizerConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Flism,
    FedAvg,
    FedProx,
    Moon,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [Strategy::Flism, Strategy::FedAvg, Strategy::FedProx, Strategy::Moon];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Flism => "flism",
            Strategy::FedAvg => "fedavg",
            Strategy::FedProx => "fedprox",
            Strategy::Moon => "moon",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name().eq_ignore_ascii_case(s))
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// How a client's aggregation weight is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    /// `1 / max(H, floor)`.
    Entropy,
    /// `n_k`.
    SampleCount,
    /// `n_k / max(H, floor)`.
    Hybrid,
}

/// When the retained modality subset is redrawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetainPolicy {
    /// Once per client update.
    #[default]
    PerRound,
    PerBatch,
    PerSample,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub noise_mu: f64,
    pub noise_sigma: f64,
    pub retain_policy: RetainPolicy,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            noise_mu: 0.0,
            noise_sigma: 0.1,
            retain_policy: RetainPolicy::PerRound,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlConfig {
    pub rounds: usize,
    pub local_epochs: usize,
    pub selection_fraction: f64,
    pub strategy: Strategy,
    /// FLISM: supervised contrastive term over original plus augmented views.
    pub mirl: bool,
    /// FLISM: aggregation weighting; `None` means entropy.
    pub weighting: Option<Weighting>,
    pub gamma: f64,
    pub tau_sc: f64,
    pub tau_kd: f64,
    pub kd_form: KdForm,
    /// Apply cross-entropy to the augmented rows too.
    pub ce_on_expanded: bool,
    pub augment: AugmentConfig,
    pub mu_prox: f64,
    pub mu_moon: f64,
    pub tau_moon: f64,
    pub optimizer: OptimizerConfig,
    /// Replaces `optimizer` for MOON clients.
    pub moon_optimizer: Option<OptimizerConfig>,
    pub entropy_floor: f64,
    pub bytes_per_param: usize,
    pub seed: u64,
}

impl Default for FlConfig {
    fn default() -> Self {
        Self {
            rounds: 30,
            local_epochs: 2,
            selection_fraction: 0.4,
            strategy: Strategy::Flism,
            mirl: true,
            weighting: None,
            gamma: 1.0,
            tau_sc: 0.07,
            tau_kd: 2.0,
            kd_form: KdForm::Softened,
            ce_on_expanded: false,
            augment: AugmentConfig::default(),
            mu_prox: 0.01,
            mu_moon: 1.0,
            tau_moon: 0.5,
            optimizer: OptimizerConfig::default(),
            moon_optimizer: Some(OptimizerConfig {
                learning_rate: 0.001,
                weight_decay: 0.001,
                batch_size: 64,
            }),
            entropy_floor: 1e-3,
            bytes_per_param: 8,
            seed: 0,
        }
    }
}

impl FlConfig {
    /// Ablation configurations, from plain FedAvg-equivalent to full FLISM.
    pub fn flism_variant(&self, mirl: bool, mqaa: bool, gakd: bool) -> Self {
        Self {
            strategy: Strategy::Flism,
            mirl,
            weighting: Some(if mqaa { Weighting::Entropy } else { Weighting::SampleCount }),
            gamma: if gakd { self.gamma } else { 0.0 },
            ..self.clone()
        }
    }

    pub fn with_strategy(&self, strategy: Strategy) -> Self {
        Self {
            strategy,
            ..self.clone()
        }
    }

    pub fn weighting(&self) -> Weighting {
        match self.strategy {
            Strategy::Flism => self.weighting.unwrap_or(Weighting::Entropy),
            _ => Weighting::SampleCount,
        }
    }

    pub fn local_optimizer(&self) -> &OptimizerConfig {
        match (self.strategy, &self.moon_optimizer) {
            (Strategy::Moon, Some(o)) => o,
            _ => &self.optimizer,
        }
    }

    /// Number of clients selected per round for a population of `k`.
    pub fn clients_per_round(&self, k: usize) -> usize {
        ((self.selection_fraction * k as f64).round() as usize).clamp(1, k.max(1))
    }

    pub fn validate(&self) -> Result<()> {
        let f = |name: &str| format!("fl.{name}");
        if self.rounds == 0 {
            return Err(SimError::config(f("rounds"), "must be >= 1"));
        }
        if self.local_epochs == 0 {
            return Err(SimError::config(f("local_epochs"), "must be >= 1"));
        }
        if !(self.selection_fraction > 0.0 && self.selection_fraction <= 1.0) {
            return Err(SimError::config(f("selection_fraction"), "must be in (0, 1]"));
        }
        let nonneg = [("gamma", self.gamma), ("mu_prox", self.mu_prox), ("mu_moon", self.mu_moon)];
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(SimError::config(f(name), "must be finite and >= 0"));
            }
        }
        let positive = [
            ("tau_sc", self.tau_sc),
            ("tau_kd", self.tau_kd),
            ("tau_moon", self.tau_moon),
            ("entropy_floor", self.entropy_floor),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(SimError::config(f(name), "must be finite and > 0"));
            }
        }
        if !(self.augment.noise_sigma >= 0.0 && self.augment.noise_sigma.is_finite() && self.augment.noise_mu.is_finite()) {
            return Err(SimError::config(f("augment.noise_sigma"), "noise parameters must be finite, sigma >= 0"));
        }
        if self.bytes_per_param == 0 {
            return Err(SimError::config(f("bytes_per_param"), "must be >= 1"));
        }
        self.optimizer.validate(&f("optimizer"))?;
        if let Some(o) = &self.moon_optimizer {
            o.validate(&f("moon_optimizer"))?;
        }
        Ok(())
    }
}
