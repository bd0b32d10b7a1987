//! Synthetic multimodal time-series populations.
//!
//! Each class owns a sinusoidal prototype per modality (frequency and phase).
//! A sample is the prototype scaled by the modality's informativeness and a
//! per-client gain, plus AR(1) noise, so high-informativeness modalities carry
//! more label signal. Clients chosen as incomplete keep a uniformly random
//! non-empty proper subset of modalities and the remaining blocks are zeroed.
//!
//! Every random decision draws from its own seeded stream, so changing the
//! incomplete ratio only changes which blocks are zeroed: the clients that are
//! incomplete at a lower ratio stay incomplete, with the same retained subset,
//! at every higher ratio.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::augment::sample_proper_subset;
use super::types::{ClientProfile, ModalityLayout, ModalitySpec, MultimodalSample, Population};
use crate::error::{Result, SimError};
use crate::nn::DenseArray;
use crate::rng::{stream, tag, SimRng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SignalConfig {
    pub amplitude: f64,
    /// AR(1) coefficient of the additive noise.
    pub ar_coefficient: f64,
    /// Std of the per-sample phase jitter, in radians.
    pub phase_jitter: f64,
    /// Std of the log per-client, per-modality gain.
    pub client_gain_jitter: f64,
    /// Cycles per window are drawn uniformly from this range.
    pub frequency_range: [f64; 2],
}

impl Default for SignalConfig {
    fn default() -> Self {
        Self {
            amplitude: 2.0,
            ar_coefficient: 0.5,
            phase_jitter: 0.6,
            client_gain_jitter: 0.3,
            frequency_range: [1.0, 5.0],
        }
    }
}

/// Log-normal device link speeds in bits per second.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpeedConfig {
    pub upload_median_bps: f64,
    pub download_median_bps: f64,
    pub log_sigma: f64,
}

impl Default for SpeedConfig {
    fn default() -> Self {
        Self {
            upload_median_bps: 5e6,
            download_median_bps: 20e6,
            log_sigma: 0.5,
        }
    }
}

impl SpeedConfig {
    /// Upload and download speed for one client.
    pub fn sample(&self, seed: u64, client_id: usize) -> (f64, f64) {
        let mut rng = stream(seed, &[tag::SPEEDS, client_id as u64]);
        let up: f64 = rng.sample(StandardNormal);
        let down: f64 = rng.sample(StandardNormal);
        (
            self.upload_median_bps * (self.log_sigma * up).exp(),
            self.download_median_bps * (self.log_sigma * down).exp(),
        )
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.upload_median_bps > 0.0 && self.download_median_bps > 0.0) {
            return Err(SimError::config("population.speeds", "median speeds must be positive"));
        }
        if !(self.log_sigma >= 0.0) {
            return Err(SimError::config("population.speeds.log_sigma", "must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PopulationConfig {
    pub num_clients: usize,
    pub num_classes: usize,
    pub modalities: Vec<ModalitySpec>,
    pub window_len: usize,
    /// Inclusive range of training samples per client.
    pub samples_per_client: [usize; 2],
    /// Complete-modality held-out samples per client.
    pub test_samples_per_client: usize,
    pub incomplete_ratio: f64,
    /// Dirichlet concentration for per-client label proportions; `None` is uniform.
    pub label_skew: Option<f64>,
    pub signal: SignalConfig,
    pub speeds: SpeedConfig,
    pub seed: u64,
}

impl Default for PopulationConfig {
    fn default() -> Self {
        let informativeness = [1.0, 0.8, 0.6, 0.45, 0.3, 0.15];
        Self {
            num_clients: 20,
            num_classes: 4,
            modalities: informativeness
                .iter()
                .enumerate()
                .map(|(i, &inf)| ModalitySpec {
                    modality_id: i,
                    channels: 2,
                    informativeness: inf,
                    noise_std: 1.0,
                })
                .collect(),
            window_len: 32,
            samples_per_client: [24, 40],
            test_samples_per_client: 8,
            incomplete_ratio: 0.6,
            label_skew: Some(5.0),
            signal: SignalConfig::default(),
            speeds: SpeedConfig::default(),
            seed: 0,
        }
    }
}

impl PopulationConfig {
    pub fn validate(&self) -> Result<()> {
        let f = |name: &str| format!("population.{name}");
        if self.num_clients == 0 {
            return Err(SimError::config(f("num_clients"), "must be >= 1"));
        }
        if self.num_classes < 2 {
            return Err(SimError::config(f("num_classes"), "must be >= 2"));
        }
        if self.modalities.len() < 2 {
            return Err(SimError::config(f("modalities"), "need M >= 2 modalities"));
        }
        ModalityLayout::from_specs(&self.modalities)?;
        for (i, m) in self.modalities.iter().enumerate() {
            if !(0.0..=1.0).contains(&m.informativeness) {
                return Err(SimError::config(format!("population.modalities[{i}].informativeness"), "must be in [0, 1]"));
            }
            if !(m.noise_std >= 0.0 && m.noise_std.is_finite()) {
                return Err(SimError::config(format!("population.modalities[{i}].noise_std"), "must be >= 0"));
            }
        }
        if self.window_len == 0 {
            return Err(SimError::config(f("window_len"), "must be >= 1"));
        }
        let [lo, hi] = self.samples_per_client;
        if lo == 0 || lo > hi {
            return Err(SimError::config(f("samples_per_client"), "need 1 <= min <= max"));
        }
        if !(0.0..=1.0).contains(&self.incomplete_ratio) {
            return Err(SimError::config(f("incomplete_ratio"), "must be in [0, 1]"));
        }
        if let Some(a) = self.label_skew {
            if !(a > 0.0 && a.is_finite()) {
                return Err(SimError::config(f("label_skew"), "Dirichlet concentration must be > 0"));
            }
        }
        if !(-1.0 < self.signal.ar_coefficient && self.signal.ar_coefficient < 1.0) {
            return Err(SimError::config(f("signal.ar_coefficient"), "must be in (-1, 1)"));
        }
        let [flo, fhi] = self.signal.frequency_range;
        if !(flo > 0.0 && flo <= fhi) {
            return Err(SimError::config(f("signal.frequency_range"), "need 0 < min <= max"));
        }
        self.speeds.validate()
    }

    pub fn num_incomplete(&self) -> usize {
        (self.incomplete_ratio * self.num_clients as f64).round() as usize
    }

    pub fn layout(&self) -> Result<ModalityLayout> {
        ModalityLayout::from_specs(&self.modalities)
    }
}

struct Prototype {
    frequency: f64,
    phase: f64,
}

struct Generator<'a> {
    cfg: &'a PopulationConfig,
    layout: ModalityLayout,
    specs: Vec<ModalitySpec>,
    /// `[class][modality]`
    prototypes: Vec<Vec<Prototype>>,
}

impl Generator<'_> {
    fn sample(&self, rng: &mut SimRng, label: usize, gains: &[f64]) -> MultimodalSample {
        let len = self.cfg.window_len;
        let sig = &self.cfg.signal;
        let mut data = vec![0.0; self.layout.total_channels() * len];
        let innov = (1.0 - sig.ar_coefficient * sig.ar_coefficient).sqrt();
        for (m, spec) in self.specs.iter().enumerate() {
            let proto = &self.prototypes[label][m];
            let amp = sig.amplitude * spec.informativeness * gains[m];
            let jitter: f64 = rng.sample::<f64, _>(StandardNormal) * sig.phase_jitter;
            for (ci, ch) in self.layout.block(m).enumerate() {
                let row = &mut data[ch * len..(ch + 1) * len];
                let mut noise = rng.sample::<f64, _>(StandardNormal) * spec.noise_std;
                for (t, v) in row.iter_mut().enumerate() {
                    let angle = std::f64::consts::TAU * proto.frequency * t as f64 / len as f64
                        + proto.phase
                        + 0.7 * ci as f64
                        + jitter;
                    *v = amp * angle.sin() + noise;
                    noise = sig.ar_coefficient * noise + innov * spec.noise_std * rng.sample::<f64, _>(StandardNormal);
                }
            }
        }
        MultimodalSample {
            data: DenseArray::from_parts(vec![self.layout.total_channels(), len], data),
            label,
            present_mask: vec![true; self.layout.num_modalities()],
        }
    }
}

fn class_proportions(rng: &mut SimRng, classes: usize, skew: Option<f64>) -> Vec<f64> {
    match skew {
        None => vec![1.0 / classes as f64; classes],
        Some(alpha) => {
            let gamma = Gamma::new(alpha, 1.0).expect("validated concentration");
            let draws: Vec<f64> = (0..classes).map(|_| gamma.sample(rng).max(1e-12)).collect();
            let total: f64 = draws.iter().sum();
            draws.iter().map(|d| d / total).collect()
        }
    }
}

fn draw_label(rng: &mut SimRng, props: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (c, p) in props.iter().enumerate() {
        acc += p;
        if u < acc {
            return c;
        }
    }
    props.len() - 1
}

/// Generates the client population and the complete-modality test set.
pub fn generate_population(cfg: &PopulationConfig) -> Result<Population> {
    cfg.validate()?;
    let layout = cfg.layout()?;
    let mut specs = cfg.modalities.clone();
    specs.sort_by_key(|s| s.modality_id);
    let m = layout.num_modalities();
    let seed = cfg.seed;

    let mut proto_rng = stream(seed, &[tag::PROTOTYPES]);
    let [flo, fhi] = cfg.signal.frequency_range;
    let prototypes = (0..cfg.num_classes)
        .map(|_| {
            (0..m)
                .map(|_| Prototype {
                    frequency: if flo == fhi { flo } else { proto_rng.random_range(flo..fhi) },
                    phase: proto_rng.random_range(0.0..std::f64::consts::TAU),
                })
                .collect()
        })
        .collect();
    let gen = Generator {
        cfg,
        layout: layout.clone(),
        specs,
        prototypes,
    };

    let mut order: Vec<usize> = (0..cfg.num_clients).collect();
    order.shuffle(&mut stream(seed, &[tag::MISSING_ORDER]));
    let mut incomplete = vec![false; cfg.num_clients];
    for &k in order.iter().take(cfg.num_incomplete()) {
        incomplete[k] = true;
    }

    let all: Vec<usize> = (0..m).collect();
    let gain_noise = Normal::new(0.0, cfg.signal.client_gain_jitter.max(0.0)).expect("finite std");
    let mut clients = Vec::with_capacity(cfg.num_clients);
    let mut test_set = Vec::with_capacity(cfg.num_clients * cfg.test_samples_per_client);
    for k in 0..cfg.num_clients {
        let n_k = stream(seed, &[tag::SIZES, k as u64]).random_range(cfg.samples_per_client[0]..=cfg.samples_per_client[1]);
        let props = class_proportions(&mut stream(seed, &[tag::LABELS, k as u64]), cfg.num_classes, cfg.label_skew);
        let mut data_rng = stream(seed, &[tag::DATA, k as u64]);
        let gains: Vec<f64> = (0..m).map(|_| gain_noise.sample(&mut data_rng).exp()).collect();

        let retained = {
            let mut r = stream(seed, &[tag::MISSING_SUBSET, k as u64]);
            sample_proper_subset(&all, &mut r)?
        };
        let available = if incomplete[k] { retained } else { all.clone() };
        let keep: Vec<bool> = (0..m).map(|j| available.contains(&j)).collect();

        let mut dataset = Vec::with_capacity(n_k);
        for _ in 0..n_k {
            let label = draw_label(&mut data_rng, &props);
            dataset.push(gen.sample(&mut data_rng, label, &gains).mask_to(&layout, &keep));
        }
        for _ in 0..cfg.test_samples_per_client {
            let label = draw_label(&mut data_rng, &props);
            test_set.push(gen.sample(&mut data_rng, label, &gains));
        }
        let (upload_bps, download_bps) = cfg.speeds.sample(seed, k);
        clients.push(ClientProfile {
            client_id: k,
            dataset,
            available_modalities: available,
            upload_bps,
            download_bps,
        });
    }

    Ok(Population {
        layout,
        num_classes: cfg.num_classes,
        window_len: cfg.window_len,
        clients,
        test_set,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(p: f64, k: usize) -> PopulationConfig {
        PopulationConfig {
            num_clients: k,
            samples_per_client: [3, 5],
            test_samples_per_client: 2,
            incomplete_ratio: p,
            ..PopulationConfig::default()
        }
    }

    #[test]
    fn complete_when_ratio_zero() {
        let pop = generate_population(&small(0.0, 8)).unwrap();
        assert!(pop.clients.iter().all(|c| c.available_modalities.len() == 6));
        assert!(pop.clients.iter().flat_map(|c| &c.dataset).all(|s| s.present_mask.iter().all(|&p| p)));
    }

    #[test]
    fn all_incomplete_when_ratio_one() {
        let pop = generate_population(&small(1.0, 10)).unwrap();
        assert!(pop.clients.iter().all(|c| (1..=5).contains(&c.available_modalities.len())));
    }

    #[test]
    fn incomplete_count_is_rounded_ratio() {
        for (p, k, expected) in [(0.4, 20, 8), (0.6, 20, 12), (0.25, 10, 3), (0.8, 7, 6)] {
            let pop = generate_population(&small(p, k)).unwrap();
            assert_eq!(pop.incomplete_clients(), expected, "p={p} K={k}");
        }
    }

    #[test]
    fn deterministic() {
        let a = generate_population(&small(0.5, 6)).unwrap();
        let b = generate_population(&small(0.5, 6)).unwrap();
        assert_eq!(serde_json::to_vec(&a).unwrap(), serde_json::to_vec(&b).unwrap());
    }

    #[test]
    fn test_set_is_complete() {
        let pop = generate_population(&small(1.0, 5)).unwrap();
        assert_eq!(pop.test_set.len(), 10);
        assert!(pop.test_set.iter().all(|s| s.present_mask.iter().all(|&p| p)));
    }

    #[test]
    fn incompleteness_is_nested_across_ratios() {
        let lo = generate_population(&small(0.4, 10)).unwrap();
        let hi = generate_population(&small(0.8, 10)).unwrap();
        for (a, b) in lo.clients.iter().zip(&hi.clients) {
            if a.available_modalities.len() < 6 {
                assert_eq!(a.available_modalities, b.available_modalities);
                assert_eq!(a.dataset, b.dataset);
            }
        }
    }

    #[test]
    fn rejects_bad_config() {
        assert!(generate_population(&small(1.5, 4)).is_err());
        assert!(generate_population(&small(-0.1, 4)).is_err());
        let mut one = small(0.0, 4);
        one.modalities.truncate(1);
        assert!(generate_population(&one).is_err());
    }
}
