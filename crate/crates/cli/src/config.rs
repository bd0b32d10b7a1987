use std::collections::{BTreeSet, HashSet};
use std::path::{Path, PathBuf};

use fedsim_core::cost::{EncoderTemplate, SweepConfig};
use fedsim_core::data::PopulationConfig;
use fedsim_core::diagnostics::CurveConfig;
use fedsim_core::fl::{FlConfig, Strategy};
use fedsim_core::nn::ArchSpec;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

/// Values for the incomplete-ratio axis; the modality axis lives in
/// `cost.m_values`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepAxes {
    pub p_inc: Vec<f64>,
}

impl Default for SweepAxes {
    fn default() -> Self {
        Self {
            p_inc: vec![0.4, 0.6, 0.8],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub population: PopulationConfig,
    pub fl: FlConfig,
    pub arch: EncoderTemplate,
    pub cost: SweepConfig,
    pub diagnostics: CurveConfig,
    pub sweep: SweepAxes,
    /// Strategies run head to head on each seed's population.
    pub strategies: Vec<Strategy>,
    pub output_dir: PathBuf,
    pub seeds: Vec<u64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            population: PopulationConfig::default(),
            fl: FlConfig::default(),
            arch: EncoderTemplate::default(),
            cost: SweepConfig::default(),
            diagnostics: CurveConfig::default(),
            sweep: SweepAxes::default(),
            strategies: vec![Strategy::FedAvg, Strategy::Flism],
            output_dir: PathBuf::from("results"),
            seeds: vec![0, 1, 2, 3, 4],
        }
    }
}

impl ExperimentConfig {
    /// Parses JSON, reporting the failing field path with line and column.
    pub fn from_json_str(text: &str) -> CliResult<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            if path.is_empty() || path == "." {
                CliError::Config(inner.to_string())
            } else {
                CliError::Config(format!("{path}: {inner}"))
            }
        })
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json_str(&text)
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.seeds.is_empty() {
            return Err(CliError::field("seeds", "must not be empty"));
        }
        if self.seeds.iter().collect::<BTreeSet<_>>().len() != self.seeds.len() {
            return Err(CliError::field("seeds", "contains duplicates"));
        }
        if self.strategies.is_empty() {
            return Err(CliError::field("strategies", "must not be empty"));
        }
        if self.strategies.iter().collect::<HashSet<_>>().len() != self.strategies.len() {
            return Err(CliError::field("strategies", "contains duplicates"));
        }
        if self.output_dir.as_os_str().is_empty() {
            return Err(CliError::field("output_dir", "must not be empty"));
        }
        if let Some(p) = self.sweep.p_inc.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(CliError::field("sweep.p_inc", format!("{p} outside [0, 1]")));
        }
        self.population.validate()?;
        self.fl.validate()?;
        self.cost.validate()?;
        if self.diagnostics.subset_cap == 0 {
            return Err(CliError::field("diagnostics.subset_cap", "must be >= 1"));
        }
        self.build_arch()
            .map_err(|e| CliError::field("arch", e.to_string()))?;
        Ok(())
    }

    pub fn build_arch(&self) -> fedsim_core::Result<ArchSpec> {
        let layout = self.population.layout()?;
        self.arch
            .build(layout.total_channels(), self.population.window_len, self.population.num_classes)
    }

    /// Population, training and curve settings for one seed.
    pub fn for_seed(&self, seed: u64) -> (PopulationConfig, FlConfig, CurveConfig) {
        let pop = PopulationConfig {
            seed,
            ..self.population.clone()
        };
        let fl = FlConfig {
            seed,
            ..self.fl.clone()
        };
        let curve = CurveConfig {
            seed,
            ..self.diagnostics
        };
        (pop, fl, curve)
    }

    /// SHA-256 over the key-sorted JSON form, so re-serializing the config
    /// leaves the hash unchanged.
    pub fn hash(&self) -> String {
        let value = serde_json::to_value(self).expect("config serializes");
        let bytes = serde_json::to_vec(&value).expect("value serializes");
        hex::encode(Sha256::digest(bytes))
    }
}
