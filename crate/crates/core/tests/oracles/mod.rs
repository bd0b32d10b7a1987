//! Independent reference implementations used only by tests.
//!
//! Nothing here calls into the library's numeric kernels; each function is a
//! direct scalar transcription of the quantity it checks.

#![allow(dead_code)]

pub mod gradcheck;

use fedsim_core::nn::{ArchSpec, DenseArray, ModelState};

/// Straight-line forward pass for `Conv1d(s=1) -> ReLU -> MaxPool1d(2) -> Flatten -> Dense`
/// followed by the classifier head. Returns logits `[B][C]`.
pub fn conv_dense_logits(model: &ModelState, x: &[Vec<Vec<f64>>]) -> Vec<Vec<f64>> {
    let conv = &model.encoder[0];
    let dense = &model.encoder[1];
    let (out_ch, in_ch, k) = (conv.weight.shape()[0], conv.weight.shape()[1], conv.weight.shape()[2]);
    let wc = |o: usize, i: usize, t: usize| conv.weight.data()[o * in_ch * k + i * k + t];
    let d_in = dense.weight.shape()[1];
    let d_out = dense.weight.shape()[0];
    let n_cls = model.classifier.weight.shape()[0];

    let mut all = Vec::new();
    for sample in x {
        let len = sample[0].len();
        let conv_len = len - k + 1;
        let mut feat = Vec::new();
        for o in 0..out_ch {
            let mut acts = Vec::new();
            for t in 0..conv_len {
                let mut s = conv.bias.data()[o];
                for i in 0..in_ch {
                    for kk in 0..k {
                        s += wc(o, i, kk) * sample[i][t + kk];
                    }
                }
                acts.push(if s > 0.0 { s } else { 0.0 });
            }
            for t in 0..conv_len / 2 {
                feat.push(acts[2 * t].max(acts[2 * t + 1]));
            }
        }
        assert_eq!(feat.len(), d_in);
        let mut emb = vec![0.0; d_out];
        for (o, e) in emb.iter_mut().enumerate() {
            let mut s = dense.bias.data()[o];
            for (i, f) in feat.iter().enumerate() {
                s += dense.weight.data()[o * d_in + i] * f;
            }
            *e = s;
        }
        let mut logits = vec![0.0; n_cls];
        for (c, l) in logits.iter_mut().enumerate() {
            let mut s = model.classifier.bias.data()[c];
            for (i, e) in emb.iter().enumerate() {
                s += model.classifier.weight.data()[c * d_out + i] * e;
            }
            *l = s;
        }
        all.push(logits);
    }
    all
}

/// Supervised contrastive loss by explicit double loop, mean over anchors with
/// at least one positive. `z` rows are used as given.
pub fn supcon_double_loop(z: &[Vec<f64>], labels: &[usize], tau: f64) -> f64 {
    let n = z.len();
    let dotp = |a: &[f64], b: &[f64]| -> f64 { a.iter().zip(b).map(|(x, y)| x * y).sum() };
    let mut total = 0.0;
    let mut anchors = 0usize;
    for j in 0..n {
        let positives: Vec<usize> = (0..n).filter(|&p| p != j && labels[p] == labels[j]).collect();
        if positives.is_empty() {
            continue;
        }
        anchors += 1;
        let mut denom = 0.0;
        for q in 0..n {
            if q != j {
                denom += (dotp(&z[j], &z[q]) / tau).exp();
            }
        }
        let mut inner = 0.0;
        for &p in &positives {
            inner += ((dotp(&z[j], &z[p]) / tau).exp() / denom).ln();
        }
        total += -inner / positives.len() as f64;
    }
    if anchors == 0 {
        0.0
    } else {
        total / anchors as f64
    }
}

fn softmax_scalar(row: &[f64], tau: f64) -> Vec<f64> {
    let e: Vec<f64> = row.iter().map(|v| (v / tau).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// `(τ²/B) Σ_i Σ_c p_t log(p_t / p_s)` with `p = softmax(logits/τ)`.
pub fn kd_scalar(teacher: &[Vec<f64>], student: &[Vec<f64>], tau: f64) -> f64 {
    let mut total = 0.0;
    for (t, s) in teacher.iter().zip(student) {
        let pt = softmax_scalar(t, tau);
        let ps = softmax_scalar(s, tau);
        for (a, b) in pt.iter().zip(&ps) {
            total += a * (a / b).ln();
        }
    }
    tau * tau * total / teacher.len() as f64
}

/// Mean over rows of `-log(e^{cos(z,g)/τ} / (e^{cos(z,g)/τ} + e^{cos(z,p)/τ}))`.
pub fn moon_scalar(z: &[Vec<f64>], g: &[Vec<f64>], p: &[Vec<f64>], tau: f64) -> f64 {
    let cos = |a: &[f64], b: &[f64]| -> f64 {
        let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        d / (na * nb)
    };
    let mut total = 0.0;
    for i in 0..z.len() {
        let a = (cos(&z[i], &g[i]) / tau).exp();
        let b = (cos(&z[i], &p[i]) / tau).exp();
        total += -(a / (a + b)).ln();
    }
    total / z.len() as f64
}

/// Mean Shannon entropy (natural log) of probability rows.
pub fn mean_entropy_scalar(probs: &[Vec<f64>]) -> f64 {
    let mut total = 0.0;
    for row in probs {
        for &p in row {
            if p > 0.0 {
                total -= p * p.ln();
            }
        }
    }
    total / probs.len() as f64
}

/// Per-layer trainable parameter tally written out by hand for a conv/dense stack.
pub fn tally_params(arch: &ArchSpec) -> usize {
    use fedsim_core::nn::Layer;
    let mut total = 0;
    for layer in &arch.layers {
        match *layer {
            Layer::Conv1d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => total += out_channels * in_channels * kernel + out_channels,
            Layer::Dense { in_dim, out_dim } => total += out_dim * in_dim + out_dim,
            _ => {}
        }
    }
    total += arch.projection_dim * arch.encoder_output_dim + arch.projection_dim;
    total += arch.num_classes * arch.encoder_output_dim + arch.num_classes;
    total
}

/// Converts a `[B, C, L]` array into nested vectors.
pub fn to_nested3(a: &DenseArray) -> Vec<Vec<Vec<f64>>> {
    let s = a.shape();
    (0..s[0])
        .map(|b| {
            (0..s[1])
                .map(|c| (0..s[2]).map(|t| a.data()[(b * s[1] + c) * s[2] + t]).collect())
                .collect()
        })
        .collect()
}

pub fn to_nested2(a: &DenseArray) -> Vec<Vec<f64>> {
    (0..a.rows()).map(|i| a.row(i).to_vec()).collect()
}

/// Central finite-difference gradient of `f` at `x`.
pub fn central_difference(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Largest relative error between analytic and numeric gradients, using an
/// absolute floor so entries that are both ~0 compare on absolute scale.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}
