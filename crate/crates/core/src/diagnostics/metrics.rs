use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub per_class_f1: Vec<f64>,
    pub macro_f1: f64,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<u64>>,
}

/// Macro-F1 over all `num_classes` classes. A class with `P + R = 0`,
/// including one absent from both vectors, scores 0.
pub fn macro_f1(predictions: &[usize], labels: &[usize], num_classes: usize) -> Result<EvalResult> {
    if predictions.len() != labels.len() {
        return Err(SimError::dim("predictions", labels.len(), predictions.len()));
    }
    if num_classes == 0 {
        return Err(SimError::config("num_classes", "must be >= 1"));
    }
    let mut confusion = vec![vec![0u64; num_classes]; num_classes];
    for (&p, &y) in predictions.iter().zip(labels) {
        for v in [p, y] {
            if v >= num_classes {
                return Err(SimError::LabelOutOfRange { label: v, num_classes });
            }
        }
        confusion[y][p] += 1;
    }
    let per_class_f1: Vec<f64> = (0..num_classes)
        .map(|c| {
            let tp = confusion[c][c] as f64;
            let predicted: u64 = (0..num_classes).map(|y| confusion[y][c]).sum();
            let actual: u64 = confusion[c].iter().sum();
            let precision = if predicted > 0 { tp / predicted as f64 } else { 0.0 };
            let recall = if actual > 0 { tp / actual as f64 } else { 0.0 };
            if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            }
        })
        .collect();
    let macro_f1 = per_class_f1.iter().sum::<f64>() / num_classes as f64;
    Ok(EvalResult {
        per_class_f1,
        macro_f1,
        confusion,
    })
}

/// Spearman rank correlation with average ranks for ties. Returns 0 when
/// either input is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len(), "spearman inputs differ in length");
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        0.0
    } else {
        sxy / (sxx * syy).sqrt()
    }
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = avg;
        }
        i = j + 1;
    }
    out
}
