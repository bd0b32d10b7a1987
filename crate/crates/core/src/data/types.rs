use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::nn::DenseArray;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModalitySpec {
    pub modality_id: usize,
    pub channels: usize,
    /// Scales the class-signal amplitude, in `[0, 1]`.
    pub informativeness: f64,
    pub noise_std: f64,
}

/// Early-fusion channel layout: modality blocks concatenated in id order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModalityLayout {
    channels: Vec<usize>,
    offsets: Vec<usize>,
}

impl ModalityLayout {
    pub fn new(channels: Vec<usize>) -> Result<Self> {
        if channels.len() < 2 {
            return Err(SimError::config("modalities", format!("need at least 2 modalities, got {}", channels.len())));
        }
        if let Some(i) = channels.iter().position(|&c| c == 0) {
            return Err(SimError::config(format!("modalities[{i}].channels"), "must be positive"));
        }
        let mut offsets = Vec::with_capacity(channels.len());
        let mut acc = 0;
        for &c in &channels {
            offsets.push(acc);
            acc += c;
        }
        Ok(Self { channels, offsets })
    }

    /// Layout for specs sorted by id; ids must be exactly `0..M`.
    pub fn from_specs(specs: &[ModalitySpec]) -> Result<Self> {
        let mut sorted: Vec<&ModalitySpec> = specs.iter().collect();
        sorted.sort_by_key(|s| s.modality_id);
        for (i, s) in sorted.iter().enumerate() {
            if s.modality_id != i {
                return Err(SimError::config(
                    "modalities",
                    format!("modality ids must be 0..M without gaps, found {}", s.modality_id),
                ));
            }
        }
        Self::new(sorted.iter().map(|s| s.channels).collect())
    }

    pub fn num_modalities(&self) -> usize {
        self.channels.len()
    }

    pub fn total_channels(&self) -> usize {
        self.channels.iter().sum()
    }

    pub fn channels(&self, modality: usize) -> usize {
        self.channels[modality]
    }

    /// Channel index range of one modality block.
    pub fn block(&self, modality: usize) -> std::ops::Range<usize> {
        self.offsets[modality]..self.offsets[modality] + self.channels[modality]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultimodalSample {
    /// `[total_channels, window_len]`.
    pub data: DenseArray,
    pub label: usize,
    pub present_mask: Vec<bool>,
}

impl MultimodalSample {
    pub fn window_len(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn present_modalities(&self) -> Vec<usize> {
        self.present_mask
            .iter()
            .enumerate()
            .filter_map(|(i, &p)| p.then_some(i))
            .collect()
    }

    /// Zeroes the blocks of every modality not in `keep` and clears their mask bits.
    pub fn mask_to(&self, layout: &ModalityLayout, keep: &[bool]) -> MultimodalSample {
        let mut out = self.clone();
        let len = self.window_len();
        for m in 0..layout.num_modalities() {
            if !keep[m] {
                for ch in layout.block(m) {
                    out.data.data_mut()[ch * len..(ch + 1) * len].fill(0.0);
                }
                out.present_mask[m] = false;
            }
        }
        out
    }

    /// Checks that absent blocks are identically zero.
    pub fn is_zero_imputed(&self, layout: &ModalityLayout) -> bool {
        let len = self.window_len();
        (0..layout.num_modalities()).filter(|&m| !self.present_mask[m]).all(|m| {
            layout
                .block(m)
                .all(|ch| self.data.data()[ch * len..(ch + 1) * len].iter().all(|&v| v == 0.0))
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientProfile {
    pub client_id: usize,
    pub dataset: Vec<MultimodalSample>,
    /// Sorted modality ids available on this client.
    pub available_modalities: Vec<usize>,
    pub upload_bps: f64,
    pub download_bps: f64,
}

impl ClientProfile {
    pub fn num_samples(&self) -> usize {
        self.dataset.len()
    }

    pub fn validate(&self, num_modalities: usize) -> Result<()> {
        let field = |f: &str| format!("clients[{}].{f}", self.client_id);
        if self.dataset.is_empty() {
            return Err(SimError::config(field("dataset"), "client has no samples"));
        }
        let m_k = self.available_modalities.len();
        if m_k == 0 || m_k > num_modalities {
            return Err(SimError::config(field("available_modalities"), format!("size {m_k} outside 1..={num_modalities}")));
        }
        for s in &self.dataset {
            for (m, &p) in s.present_mask.iter().enumerate() {
                if p && !self.available_modalities.contains(&m) {
                    return Err(SimError::config(field("dataset"), format!("sample uses unavailable modality {m}")));
                }
            }
        }
        if !(self.upload_bps > 0.0 && self.download_bps > 0.0) {
            return Err(SimError::config(field("speeds"), "link speeds must be positive"));
        }
        Ok(())
    }
}

/// Training clients plus the held-out complete-modality test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Population {
    pub layout: ModalityLayout,
    pub num_classes: usize,
    pub window_len: usize,
    pub clients: Vec<ClientProfile>,
    pub test_set: Vec<MultimodalSample>,
}

impl Population {
    pub fn num_clients(&self) -> usize {
        self.clients.len()
    }

    pub fn num_modalities(&self) -> usize {
        self.layout.num_modalities()
    }

    pub fn incomplete_clients(&self) -> usize {
        let m = self.num_modalities();
        self.clients.iter().filter(|c| c.available_modalities.len() < m).count()
    }

    /// Builds a population from ingested clients, holding out the last
    /// `test_fraction` of each client's complete-modality samples as test data.
    /// Every client keeps at least one training sample.
    pub fn from_clients(
        layout: ModalityLayout,
        num_classes: usize,
        window_len: usize,
        mut clients: Vec<ClientProfile>,
        test_fraction: f64,
    ) -> Result<Self> {
        if !(0.0..1.0).contains(&test_fraction) {
            return Err(SimError::config("test_fraction", "must be in [0, 1)"));
        }
        let mut test_set = Vec::new();
        for c in &mut clients {
            let want = (test_fraction * c.dataset.len() as f64).round() as usize;
            let mut taken = 0;
            let mut i = c.dataset.len();
            while i > 0 && taken < want && c.dataset.len() > 1 {
                i -= 1;
                if c.dataset[i].present_mask.iter().all(|&p| p) {
                    test_set.push(c.dataset.remove(i));
                    taken += 1;
                }
            }
        }
        let pop = Self {
            layout,
            num_classes,
            window_len,
            clients,
            test_set,
        };
        pop.validate()?;
        Ok(pop)
    }

    pub fn validate(&self) -> Result<()> {
        if self.clients.is_empty() {
            return Err(SimError::Empty("population has no clients".into()));
        }
        let m = self.num_modalities();
        for c in &self.clients {
            c.validate(m)?;
            for s in &c.dataset {
                if s.label >= self.num_classes {
                    return Err(SimError::LabelOutOfRange {
                        label: s.label,
                        num_classes: self.num_classes,
                    });
                }
                if s.data.shape() != [self.layout.total_channels(), self.window_len] {
                    return Err(SimError::dim(
                        format!("client {} sample", c.client_id),
                        format!("[{}, {}]", self.layout.total_channels(), self.window_len),
                        format!("{:?}", s.data.shape()),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Stacks samples into a `[B, C, L]` batch plus labels.
pub fn stack_samples<'a>(samples: impl IntoIterator<Item = &'a MultimodalSample>) -> Result<(DenseArray, Vec<usize>)> {
    let (arrays, labels): (Vec<&DenseArray>, Vec<usize>) = samples.into_iter().map(|s| (&s.data, s.label)).unzip();
    Ok((DenseArray::stack(&arrays)?, labels))
}
