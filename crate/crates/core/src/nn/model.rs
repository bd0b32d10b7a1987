use rand::Rng;
use serde::{Deserialize, Serialize};

use super::arch::{ArchSpec, Layer};
use super::array::DenseArray;
use crate::error::{Result, SimError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub weight: DenseArray,
    pub bias: DenseArray,
}

impl LayerParams {
    fn zeros(layer: &Layer) -> Option<Self> {
        layer.param_shapes().map(|(w, b)| Self {
            weight: DenseArray::zeros(w),
            bias: DenseArray::zeros(b),
        })
    }

    /// Uniform in `±1/sqrt(fan_in)` for weights and biases.
    fn init<R: Rng + ?Sized>(layer: &Layer, rng: &mut R) -> Option<Self> {
        let mut p = Self::zeros(layer)?;
        let fan_in: usize = p.weight.shape()[1..].iter().product();
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        for v in p.weight.data_mut() {
            *v = rng.random_range(-bound..bound);
        }
        for v in p.bias.data_mut() {
            *v = rng.random_range(-bound..bound);
        }
        Some(p)
    }
}

/// Parameters of encoder, projection head and classifier.
///
/// `encoder` holds one entry per parameterized encoder layer, in layer order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    pub encoder: Vec<LayerParams>,
    pub projection: LayerParams,
    pub classifier: LayerParams,
    /// Round index at which this state was produced.
    pub version_tag: usize,
}

/// One gradient array per parameter array of a [`ModelState`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub encoder: Vec<LayerParams>,
    pub projection: LayerParams,
    pub classifier: LayerParams,
}

fn tensors_of<'a>(
    encoder: &'a [LayerParams],
    projection: &'a LayerParams,
    classifier: &'a LayerParams,
) -> impl Iterator<Item = &'a DenseArray> {
    encoder
        .iter()
        .chain(std::iter::once(projection))
        .chain(std::iter::once(classifier))
        .flat_map(|p| [&p.weight, &p.bias])
}

fn tensors_of_mut<'a>(
    encoder: &'a mut [LayerParams],
    projection: &'a mut LayerParams,
    classifier: &'a mut LayerParams,
) -> impl Iterator<Item = &'a mut DenseArray> {
    encoder
        .iter_mut()
        .chain(std::iter::once(projection))
        .chain(std::iter::once(classifier))
        .flat_map(|p| [&mut p.weight, &mut p.bias])
}

impl ModelState {
    pub fn zeros(arch: &ArchSpec) -> Self {
        Self {
            encoder: arch.layers.iter().filter_map(LayerParams::zeros).collect(),
            projection: LayerParams::zeros(&arch.projection_layer()).expect("dense head"),
            classifier: LayerParams::zeros(&arch.classifier_layer()).expect("dense head"),
            version_tag: 0,
        }
    }

    pub fn init<R: Rng + ?Sized>(arch: &ArchSpec, rng: &mut R) -> Self {
        Self {
            encoder: arch.layers.iter().filter_map(|l| LayerParams::init(l, rng)).collect(),
            projection: LayerParams::init(&arch.projection_layer(), rng).expect("dense head"),
            classifier: LayerParams::init(&arch.classifier_layer(), rng).expect("dense head"),
            version_tag: 0,
        }
    }

    pub fn tensors(&self) -> impl Iterator<Item = &DenseArray> {
        tensors_of(&self.encoder, &self.projection, &self.classifier)
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut DenseArray> {
        tensors_of_mut(&mut self.encoder, &mut self.projection, &mut self.classifier)
    }

    pub fn num_params(&self) -> usize {
        self.tensors().map(DenseArray::len).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for t in self.tensors() {
            out.extend_from_slice(t.data());
        }
        out
    }

    /// Rebuilds a state with `arch`'s layout from a flat vector.
    pub fn unflatten(arch: &ArchSpec, values: &[f64], version_tag: usize) -> Result<Self> {
        let mut state = Self::zeros(arch);
        state.version_tag = version_tag;
        state.load_flat(values)?;
        Ok(state)
    }

    /// Overwrites all parameters from a flat vector of matching length.
    pub fn load_flat(&mut self, values: &[f64]) -> Result<()> {
        let n = self.num_params();
        if values.len() != n {
            return Err(SimError::dim("unflatten", n, values.len()));
        }
        let mut offset = 0;
        for t in self.tensors_mut() {
            let len = t.len();
            t.data_mut().copy_from_slice(&values[offset..offset + len]);
            offset += len;
        }
        Ok(())
    }

    /// True when every tensor has the shape `arch` prescribes.
    pub fn conforms_to(&self, arch: &ArchSpec) -> bool {
        let reference = Self::zeros(arch);
        self.encoder.len() == reference.encoder.len()
            && self
                .tensors()
                .zip(reference.tensors())
                .all(|(a, b)| a.shape() == b.shape())
    }

    pub(crate) fn check_congruent(&self, other_shapes: impl Iterator<Item = Vec<usize>>, context: &str) -> Result<()> {
        let mine: Vec<Vec<usize>> = self.tensors().map(|t| t.shape().to_vec()).collect();
        let theirs: Vec<Vec<usize>> = other_shapes.collect();
        if mine != theirs {
            return Err(SimError::dim(context, format!("{mine:?}"), format!("{theirs:?}")));
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().all(DenseArray::all_finite)
    }
}

impl Gradient {
    pub fn zeros_like(model: &ModelState) -> Self {
        let z = |p: &LayerParams| LayerParams {
            weight: DenseArray::zeros(p.weight.shape().to_vec()),
            bias: DenseArray::zeros(p.bias.shape().to_vec()),
        };
        Self {
            encoder: model.encoder.iter().map(z).collect(),
            projection: z(&model.projection),
            classifier: z(&model.classifier),
        }
    }

    pub fn tensors(&self) -> impl Iterator<Item = &DenseArray> {
        tensors_of(&self.encoder, &self.projection, &self.classifier)
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut DenseArray> {
        tensors_of_mut(&mut self.encoder, &mut self.projection, &mut self.classifier)
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.tensors().flat_map(|t| t.data().iter().copied()).collect()
    }

    pub fn is_zero(&self) -> bool {
        self.tensors().all(|t| t.data().iter().all(|&v| v == 0.0))
    }
}
