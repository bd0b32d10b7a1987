//! Behaviour of a trained model as modalities go missing.

use std::io::Write;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use super::metrics::macro_f1;
use crate::data::csv_io::fmt_f64;
use crate::data::{stack_samples, ModalityLayout, MultimodalSample};
use crate::error::{Result, SimError};
use crate::nn::loss::{entropy_of, softmax_row};
use crate::nn::{forward, ArchSpec, DenseArray, ModelState};
use crate::rng::{stream, tag};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceMetric {
    #[default]
    Euclidean,
    /// `1 − cos`.
    Cosine,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurveConfig {
    /// Subsets per missing count above which a uniform sample is used.
    pub subset_cap: usize,
    pub metric: DistanceMetric,
    pub seed: u64,
}

impl Default for CurveConfig {
    fn default() -> Self {
        Self {
            subset_cap: 256,
            metric: DistanceMetric::Euclidean,
            seed: 0,
        }
    }
}

/// Series indexed by the number of missing modalities `d = 0..M−1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticCurve {
    pub d: Vec<usize>,
    pub entropy: Vec<f64>,
    pub f1: Vec<f64>,
    pub embed_dist: Vec<f64>,
}

impl DiagnosticCurve {
    pub fn len(&self) -> usize {
        self.d.len()
    }

    pub fn is_empty(&self) -> bool {
        self.d.is_empty()
    }

    /// Pointwise mean over curves with identical `d`.
    pub fn mean(curves: &[DiagnosticCurve]) -> Result<DiagnosticCurve> {
        let first = curves.first().ok_or_else(|| SimError::Empty("no curves to average".into()))?;
        if curves.iter().any(|c| c.d != first.d) {
            return Err(SimError::dim("curve x axis", format!("{:?}", first.d), "mismatched"));
        }
        let n = curves.len() as f64;
        let avg = |f: fn(&DiagnosticCurve) -> &Vec<f64>| -> Vec<f64> {
            (0..first.len()).map(|i| curves.iter().map(|c| f(c)[i]).sum::<f64>() / n).collect()
        };
        Ok(DiagnosticCurve {
            d: first.d.clone(),
            entropy: avg(|c| &c.entropy),
            f1: avg(|c| &c.f1),
            embed_dist: avg(|c| &c.embed_dist),
        })
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["d", "entropy", "f1", "embed_dist"])?;
        for i in 0..self.len() {
            w.write_record([
                self.d[i].to_string(),
                fmt_f64(self.entropy[i]),
                fmt_f64(self.f1[i]),
                fmt_f64(self.embed_dist[i]),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Every `k`-subset of `0..m` in lexicographic order.
pub fn combinations(m: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(k);
    fn rec(start: usize, m: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..m {
            if m - i < k - cur.len() {
                break;
            }
            cur.push(i);
            rec(i + 1, m, k, cur, out);
            cur.pop();
        }
    }
    rec(0, m, k, &mut cur, &mut out);
    out
}

fn binomial(n: usize, k: usize) -> u128 {
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

/// Retained-modality subsets for `d` missing: all of them when there are at
/// most `cap`, otherwise `cap` distinct ones drawn uniformly.
pub fn retained_subsets(m: usize, d: usize, cap: usize, seed: u64) -> Vec<Vec<usize>> {
    let k = m - d;
    if binomial(m, k) <= cap as u128 {
        return combinations(m, k);
    }
    let mut rng = stream(seed, &[tag::SUBSETS, m as u64, d as u64]);
    let mut seen = std::collections::BTreeSet::new();
    while seen.len() < cap {
        let mut s = index::sample(&mut rng, m, k).into_vec();
        s.sort_unstable();
        seen.insert(s);
    }
    seen.into_iter().collect()
}

fn mask_batch(x: &DenseArray, layout: &ModalityLayout, keep: &[usize]) -> DenseArray {
    let mut out = x.clone();
    let len = x.shape()[2];
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        for m in (0..layout.num_modalities()).filter(|m| !keep.contains(m)) {
            let b = layout.block(m);
            row[b.start * len..b.end * len].fill(0.0);
        }
    }
    out
}

struct Eval {
    entropy: f64,
    f1: f64,
    projections: DenseArray,
}

fn eval_batch(arch: &ArchSpec, model: &ModelState, x: &DenseArray, labels: &[usize]) -> Result<Eval> {
    let out = forward(arch, model, x)?;
    let n = out.logits.rows();
    let mut h = 0.0;
    let mut preds = Vec::with_capacity(n);
    for i in 0..n {
        let row = out.logits.row(i);
        h += entropy_of(&softmax_row(row));
        preds.push((0..row.len()).fold(0, |best, j| if row[j] > row[best] { j } else { best }));
    }
    Ok(Eval {
        entropy: h / n as f64,
        f1: macro_f1(&preds, labels, arch.num_classes)?.macro_f1,
        projections: out.projections,
    })
}

fn distance(a: &[f64], b: &[f64], metric: DistanceMetric) -> f64 {
    match metric {
        DistanceMetric::Euclidean => a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt(),
        DistanceMetric::Cosine => 1.0 - crate::nn::loss::cosine_similarity(a, b),
    }
}

/// Entropy, macro-F1 and complete-vs-masked projection distance for every
/// number of missing modalities, averaged over retained subsets.
pub fn missing_modality_curve(
    arch: &ArchSpec,
    model: &ModelState,
    samples: &[MultimodalSample],
    layout: &ModalityLayout,
    cfg: &CurveConfig,
) -> Result<DiagnosticCurve> {
    if samples.is_empty() {
        return Err(SimError::Empty("diagnostic curve needs samples".into()));
    }
    if samples.iter().any(|s| s.present_mask.iter().any(|&p| !p)) {
        return Err(SimError::config("test_samples", "diagnostic curves need complete-modality samples"));
    }
    let (x, y) = stack_samples(samples)?;
    let base = eval_batch(arch, model, &x, &y)?;
    let m = layout.num_modalities();
    let mut curve = DiagnosticCurve {
        d: Vec::with_capacity(m),
        entropy: Vec::with_capacity(m),
        f1: Vec::with_capacity(m),
        embed_dist: Vec::with_capacity(m),
    };
    for d in 0..m {
        curve.d.push(d);
        if d == 0 {
            curve.entropy.push(base.entropy);
            curve.f1.push(base.f1);
            curve.embed_dist.push(0.0);
            continue;
        }
        let subsets = retained_subsets(m, d, cfg.subset_cap, cfg.seed);
        let (mut h, mut f, mut dist) = (0.0, 0.0, 0.0);
        for keep in &subsets {
            let e = eval_batch(arch, model, &mask_batch(&x, layout, keep), &y)?;
            h += e.entropy;
            f += e.f1;
            let n = x.rows();
            dist += (0..n)
                .map(|i| distance(base.projections.row(i), e.projections.row(i), cfg.metric))
                .sum::<f64>()
                / n as f64;
        }
        let s = subsets.len() as f64;
        curve.entropy.push(h / s);
        curve.f1.push(f / s);
        curve.embed_dist.push(dist / s);
    }
    Ok(curve)
}

/// Entropy and macro-F1 against the number of missing modalities.
pub fn entropy_vs_missing(
    arch: &ArchSpec,
    model: &ModelState,
    samples: &[MultimodalSample],
    layout: &ModalityLayout,
    cfg: &CurveConfig,
) -> Result<DiagnosticCurve> {
    missing_modality_curve(arch, model, samples, layout, cfg)
}

/// Curves for a model trained with the contrastive term and one without.
pub fn embedding_distance_curve(
    arch: &ArchSpec,
    with_mirl: &ModelState,
    without_mirl: &ModelState,
    samples: &[MultimodalSample],
    layout: &ModalityLayout,
    cfg: &CurveConfig,
) -> Result<(DiagnosticCurve, DiagnosticCurve)> {
    for (name, model) in [("with_mirl", with_mirl), ("without_mirl", without_mirl)] {
        if !model.conforms_to(arch) {
            return Err(SimError::dim(name, "state matching arch", "mismatched tensors"));
        }
    }
    Ok((
        missing_modality_curve(arch, with_mirl, samples, layout, cfg)?,
        missing_modality_curve(arch, without_mirl, samples, layout, cfg)?,
    ))
}
