//! Forward pass through encoder and heads, and reverse-mode backward pass for
//! a weighted combination of losses.

use super::arch::{ActShape, ArchSpec, Layer};
use super::array::DenseArray;
use super::layers::{self, ConvDims};
use super::loss::{self, KdForm};
use super::model::{Gradient, LayerParams, ModelState};
use crate::error::{Result, SimError};

/// Outputs of the encoder `h`, the normalized projection `g(h(x))`, and the classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    pub embeddings: DenseArray,
    pub projections: DenseArray,
    pub logits: DenseArray,
}

struct Cache {
    /// `acts[i]` is the input of encoder layer `i`; the last entry is the embedding.
    acts: Vec<Vec<f64>>,
    shapes: Vec<ActShape>,
    pool_idx: Vec<Option<Vec<usize>>>,
    proj_norms: Vec<f64>,
}

fn batch_shape(arch: &ArchSpec, model: &ModelState, batch: &DenseArray) -> Result<(usize, Vec<ActShape>)> {
    let (&b, rest) = batch
        .shape()
        .split_first()
        .ok_or_else(|| SimError::dim("batch", "[B, C, L]", "scalar"))?;
    let input = ActShape::from_dims(rest)?;
    let shapes = arch.validate_for_input(input)?;
    if !model.conforms_to(arch) {
        return Err(SimError::dim("model", "parameters matching arch", "non-conforming model"));
    }
    Ok((b, shapes))
}

fn forward_impl(arch: &ArchSpec, model: &ModelState, batch: &DenseArray, keep: bool) -> Result<(ForwardOutput, Option<Cache>)> {
    let (b, shapes) = batch_shape(arch, model, batch)?;
    let mut acts: Vec<Vec<f64>> = Vec::with_capacity(arch.layers.len() + 1);
    let mut pool_idx = Vec::with_capacity(arch.layers.len());
    let mut cur = batch.data().to_vec();
    let mut params = model.encoder.iter();

    for (li, layer) in arch.layers.iter().enumerate() {
        let (ins, outs) = (shapes[li], shapes[li + 1]);
        let next = match *layer {
            Layer::Conv1d {
                in_channels,
                out_channels,
                kernel,
                stride,
            } => {
                let p = params.next().expect("conforming model");
                let (ActShape::Seq { len: in_len, .. }, ActShape::Seq { len: out_len, .. }) = (ins, outs) else {
                    unreachable!("validated conv shapes")
                };
                let d = ConvDims {
                    batch: b,
                    in_ch: in_channels,
                    out_ch: out_channels,
                    kernel,
                    stride,
                    in_len,
                    out_len,
                };
                pool_idx.push(None);
                layers::conv1d_forward(&cur, p.weight.data(), p.bias.data(), d)
            }
            Layer::Relu => {
                pool_idx.push(None);
                layers::relu_forward(&cur)
            }
            Layer::MaxPool1d { kernel } => {
                let ActShape::Seq { channels, len } = ins else {
                    unreachable!("validated pool shapes")
                };
                let (y, idx) = layers::maxpool1d_forward(&cur, b * channels, len, kernel);
                pool_idx.push(keep.then_some(idx));
                y
            }
            Layer::Flatten => {
                pool_idx.push(None);
                cur.clone()
            }
            Layer::Dense { in_dim, out_dim } => {
                let p = params.next().expect("conforming model");
                pool_idx.push(None);
                layers::dense_forward(&cur, p.weight.data(), p.bias.data(), b, in_dim, out_dim)
            }
        };
        if keep {
            acts.push(std::mem::replace(&mut cur, next));
        } else {
            cur = next;
        }
    }

    let d_enc = arch.encoder_output_dim;
    let embeddings = DenseArray::from_parts(vec![b, d_enc], cur);
    embeddings.ensure_finite("encoder activations")?;
    let raw_proj = layers::dense_forward(
        embeddings.data(),
        model.projection.weight.data(),
        model.projection.bias.data(),
        b,
        d_enc,
        arch.projection_dim,
    );
    let (projections, proj_norms) = loss::l2_normalize_rows(&DenseArray::from_parts(vec![b, arch.projection_dim], raw_proj))?;
    let logits = DenseArray::from_parts(
        vec![b, arch.num_classes],
        layers::dense_forward(
            embeddings.data(),
            model.classifier.weight.data(),
            model.classifier.bias.data(),
            b,
            d_enc,
            arch.num_classes,
        ),
    );
    projections.ensure_finite("projection head")?;
    logits.ensure_finite("classifier logits")?;

    let cache = keep.then(|| {
        acts.push(embeddings.data().to_vec());
        Cache {
            acts,
            shapes,
            pool_idx,
            proj_norms,
        }
    });
    Ok((
        ForwardOutput {
            embeddings,
            projections,
            logits,
        },
        cache,
    ))
}

/// Runs the encoder and both heads on a `[B, C, L]` (or `[B, D]`) batch.
pub fn forward(arch: &ArchSpec, model: &ModelState, batch: &DenseArray) -> Result<ForwardOutput> {
    forward_impl(arch, model, batch, false).map(|(out, _)| out)
}

#[derive(Debug, Clone, Copy)]
pub struct CeTerm {
    pub weight: f64,
    /// Cross-entropy covers the leading `rows` rows of the batch.
    pub rows: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct SupConTerm {
    pub weight: f64,
    pub temperature: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct KdTerm<'a> {
    pub weight: f64,
    pub temperature: f64,
    pub form: KdForm,
    /// Constant teacher logits for the leading `teacher_logits.rows()` rows.
    pub teacher_logits: &'a DenseArray,
}

#[derive(Debug, Clone, Copy)]
pub struct ProximalTerm<'a> {
    /// Loss is `(mu/2)·‖w − anchor‖²`.
    pub mu: f64,
    pub anchor: &'a ModelState,
}

#[derive(Debug, Clone, Copy)]
pub struct MoonTerm<'a> {
    pub weight: f64,
    pub temperature: f64,
    /// Encoder embeddings of the global and previous local model for the leading rows.
    pub global_embeddings: &'a DenseArray,
    pub prev_embeddings: &'a DenseArray,
}

/// A weighted sum of loss terms. Absent or zero-weight terms contribute nothing.
#[derive(Debug, Clone, Copy, Default)]
pub struct LossSpec<'a> {
    pub ce: Option<CeTerm>,
    pub supcon: Option<SupConTerm>,
    pub kd: Option<KdTerm<'a>>,
    pub proximal: Option<ProximalTerm<'a>>,
    pub moon: Option<MoonTerm<'a>>,
}

impl LossSpec<'_> {
    pub fn cross_entropy(rows: usize) -> Self {
        Self {
            ce: Some(CeTerm { weight: 1.0, rows }),
            ..Self::default()
        }
    }
}

/// Each term before its weight (the proximal entry is already `(mu/2)·‖w − anchor‖²`)
/// plus the weighted total.
#[derive(Debug, Clone, Copy, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossBreakdown {
    pub ce: f64,
    pub supcon: f64,
    pub kd: f64,
    pub proximal: f64,
    pub moon: f64,
    pub total: f64,
}

fn add_rows(dst: &mut DenseArray, src: &DenseArray) {
    let n = src.len();
    for (d, s) in dst.data_mut()[..n].iter_mut().zip(src.data()) {
        *d += s;
    }
}

fn scale(a: &mut DenseArray, w: f64) {
    if w != 1.0 {
        for v in a.data_mut() {
            *v *= w;
        }
    }
}

fn head_backward(p: &LayerParams, x: &[f64], dy: &DenseArray, b: usize, in_dim: usize) -> (Vec<f64>, LayerParams) {
    let out_dim = dy.row_len();
    let (dx, dw, db) = layers::dense_backward(x, p.weight.data(), dy.data(), b, in_dim, out_dim);
    (
        dx,
        LayerParams {
            weight: DenseArray::from_parts(p.weight.shape().to_vec(), dw),
            bias: DenseArray::from_parts(p.bias.shape().to_vec(), db),
        },
    )
}

/// Computes the weighted loss and its gradient with respect to every parameter.
///
/// `labels` covers every row of `batch`.
pub fn backward(
    arch: &ArchSpec,
    model: &ModelState,
    batch: &DenseArray,
    labels: &[usize],
    spec: &LossSpec<'_>,
) -> Result<(LossBreakdown, Gradient)> {
    let (out, cache) = forward_impl(arch, model, batch, true)?;
    let cache = cache.expect("cache requested");
    let b = batch.rows();
    if labels.len() != b {
        return Err(SimError::dim("labels", b, labels.len()));
    }
    let (c, p, d_enc) = (arch.num_classes, arch.projection_dim, arch.encoder_output_dim);
    let mut parts = LossBreakdown::default();
    let mut d_logits = DenseArray::zeros(vec![b, c]);
    let mut d_proj = DenseArray::zeros(vec![b, p]);
    let mut d_emb = DenseArray::zeros(vec![b, d_enc]);
    let mut touched_logits = false;
    let mut touched_proj = false;

    if let Some(t) = spec.ce.filter(|t| t.weight != 0.0) {
        if t.rows == 0 || t.rows > b {
            return Err(SimError::dim("cross-entropy rows", format!("1..={b}"), t.rows));
        }
        let (l, mut g) = loss::cross_entropy_grad(&out.logits.slice_rows(0, t.rows), &labels[..t.rows])?;
        parts.ce = l;
        parts.total += t.weight * l;
        scale(&mut g, t.weight);
        add_rows(&mut d_logits, &g);
        touched_logits = true;
    }
    if let Some(t) = spec.supcon.filter(|t| t.weight != 0.0) {
        let (l, mut g) = loss::supcon_grad(&out.projections, labels, t.temperature)?;
        parts.supcon = l;
        parts.total += t.weight * l;
        scale(&mut g, t.weight);
        add_rows(&mut d_proj, &g);
        touched_proj = true;
    }
    if let Some(t) = spec.kd.filter(|t| t.weight != 0.0) {
        let rows = t.teacher_logits.rows();
        if rows > b {
            return Err(SimError::dim("kd teacher rows", format!("<= {b}"), rows));
        }
        let (l, mut g) = loss::kd_grad(t.teacher_logits, &out.logits.slice_rows(0, rows), t.temperature, t.form)?;
        parts.kd = l;
        parts.total += t.weight * l;
        scale(&mut g, t.weight);
        add_rows(&mut d_logits, &g);
        touched_logits = true;
    }
    if let Some(t) = spec.moon.filter(|t| t.weight != 0.0) {
        let rows = t.global_embeddings.rows();
        if rows > b {
            return Err(SimError::dim("moon reference rows", format!("<= {b}"), rows));
        }
        let (l, mut g) = loss::moon_contrastive_grad(
            &out.embeddings.slice_rows(0, rows),
            t.global_embeddings,
            t.prev_embeddings,
            t.temperature,
        )?;
        parts.moon = l;
        parts.total += t.weight * l;
        scale(&mut g, t.weight);
        add_rows(&mut d_emb, &g);
    }

    let emb = &cache.acts[cache.acts.len() - 1];
    let mut grad = Gradient::zeros_like(model);
    if touched_logits {
        let (dx, g) = head_backward(&model.classifier, emb, &d_logits, b, d_enc);
        grad.classifier = g;
        for (a, v) in d_emb.data_mut().iter_mut().zip(dx) {
            *a += v;
        }
    }
    if touched_proj {
        let d_raw = loss::l2_normalize_backward(&out.projections, &cache.proj_norms, &d_proj);
        let (dx, g) = head_backward(&model.projection, emb, &d_raw, b, d_enc);
        grad.projection = g;
        for (a, v) in d_emb.data_mut().iter_mut().zip(dx) {
            *a += v;
        }
    }

    if d_emb.data().iter().any(|&v| v != 0.0) {
        encoder_backward(arch, model, &cache, b, d_emb.into_data(), &mut grad);
    }

    if let Some(t) = spec.proximal.filter(|t| t.mu != 0.0) {
        model.check_congruent(t.anchor.tensors().map(|a| a.shape().to_vec()), "proximal anchor")?;
        let mut sq = 0.0;
        for ((g, w), a) in grad.tensors_mut().zip(model.tensors()).zip(t.anchor.tensors()) {
            for ((gi, wi), ai) in g.data_mut().iter_mut().zip(w.data()).zip(a.data()) {
                let diff = wi - ai;
                sq += diff * diff;
                *gi += t.mu * diff;
            }
        }
        parts.proximal = 0.5 * t.mu * sq;
        parts.total += parts.proximal;
    }

    if !parts.total.is_finite() {
        return Err(SimError::NonFinite("loss".into()));
    }
    Ok((parts, grad))
}

fn encoder_backward(arch: &ArchSpec, model: &ModelState, cache: &Cache, b: usize, mut g: Vec<f64>, grad: &mut Gradient) {
    let mut pidx = model.encoder.len();
    for (li, layer) in arch.layers.iter().enumerate().rev() {
        let (ins, outs) = (cache.shapes[li], cache.shapes[li + 1]);
        let x = &cache.acts[li];
        g = match *layer {
            Layer::Conv1d {
                in_channels,
                out_channels,
                kernel,
                stride,
            } => {
                pidx -= 1;
                let (ActShape::Seq { len: in_len, .. }, ActShape::Seq { len: out_len, .. }) = (ins, outs) else {
                    unreachable!("validated conv shapes")
                };
                let d = ConvDims {
                    batch: b,
                    in_ch: in_channels,
                    out_ch: out_channels,
                    kernel,
                    stride,
                    in_len,
                    out_len,
                };
                let (dx, dw, db) = layers::conv1d_backward(x, model.encoder[pidx].weight.data(), &g, d);
                grad.encoder[pidx].weight.data_mut().copy_from_slice(&dw);
                grad.encoder[pidx].bias.data_mut().copy_from_slice(&db);
                dx
            }
            Layer::Relu => layers::relu_backward(&cache.acts[li + 1], &g),
            Layer::MaxPool1d { .. } => {
                let idx = cache.pool_idx[li].as_ref().expect("pool indices cached");
                layers::maxpool1d_backward(idx, &g, x.len())
            }
            Layer::Flatten => g,
            Layer::Dense { in_dim, out_dim } => {
                pidx -= 1;
                let (dx, dw, db) = layers::dense_backward(x, model.encoder[pidx].weight.data(), &g, b, in_dim, out_dim);
                grad.encoder[pidx].weight.data_mut().copy_from_slice(&dw);
                grad.encoder[pidx].bias.data_mut().copy_from_slice(&db);
                dx
            }
        };
        if li == 0 {
            break;
        }
    }
}
