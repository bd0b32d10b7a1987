//! Component-wise ablation of the contrastive term, entropy weighting and
//! distillation.

use serde::{Deserialize, Serialize};

use crate::data::Population;
use crate::error::Result;
use crate::fl::{run_federation, FlConfig, RoundReport};
use crate::nn::ArchSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationVariant {
    /// No contrastive term, sample-count weighting, no distillation.
    FedAvgEquivalent,
    Mirl,
    MirlMqaa,
    Full,
}

impl AblationVariant {
    pub const ALL: [AblationVariant; 4] = [
        AblationVariant::FedAvgEquivalent,
        AblationVariant::Mirl,
        AblationVariant::MirlMqaa,
        AblationVariant::Full,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AblationVariant::FedAvgEquivalent => "fedavg_equivalent",
            AblationVariant::Mirl => "+mirl",
            AblationVariant::MirlMqaa => "+mirl+mqaa",
            AblationVariant::Full => "full",
        }
    }

    pub fn config(self, base: &FlConfig) -> FlConfig {
        let (mirl, mqaa, gakd) = match self {
            AblationVariant::FedAvgEquivalent => (false, false, false),
            AblationVariant::Mirl => (true, false, false),
            AblationVariant::MirlMqaa => (true, true, false),
            AblationVariant::Full => (true, true, true),
        };
        base.flism_variant(mirl, mqaa, gakd)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: AblationVariant,
    pub macro_f1: f64,
    #[serde(skip)]
    pub reports: Vec<RoundReport>,
}

/// Runs the four variants on one population with identical seeds.
pub fn ablation_suite(population: &Population, base: &FlConfig, arch: &ArchSpec) -> Result<Vec<AblationRow>> {
    AblationVariant::ALL
        .iter()
        .map(|&v| {
            let reports = run_federation(population, &v.config(base), arch)?;
            Ok(AblationRow {
                variant: v,
                macro_f1: reports.last().map_or(0.0, RoundReport::macro_f1),
                reports,
            })
        })
        .collect()
}
