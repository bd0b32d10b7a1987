//! Loss functions with their analytic gradients.
//!
//! Every `*_grad` function returns the scalar loss together with the gradient
//! with respect to its trainable input. Row-wise inputs are `[N, D]` arrays.

use serde::{Deserialize, Serialize};

use super::array::DenseArray;
use crate::error::{Result, SimError};

/// Which reading of the softened-KL term to use.
///
/// `Softened` is `KLD(softmax(t/τ) ‖ softmax(s/τ))`. `Literal` divides the
/// softmax outputs by τ, which reduces to `KLD(softmax(t) ‖ softmax(s)) / τ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KdForm {
    #[default]
    Softened,
    Literal,
}

fn check_2d(a: &DenseArray, context: &str) -> Result<(usize, usize)> {
    match a.shape() {
        [n, d] => Ok((*n, *d)),
        other => Err(SimError::dim(context, "[N, D]", format!("{other:?}"))),
    }
}

fn check_labels(labels: &[usize], rows: usize, num_classes: usize) -> Result<()> {
    if labels.len() != rows {
        return Err(SimError::dim("labels", rows, labels.len()));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
        return Err(SimError::LabelOutOfRange {
            label: bad,
            num_classes,
        });
    }
    Ok(())
}

/// Numerically stable `log(sum(exp(row)))`.
pub fn log_sum_exp(row: &[f64]) -> f64 {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

pub fn softmax_row(row: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(row);
    row.iter().map(|v| (v - lse).exp()).collect()
}

fn scaled_log_softmax(row: &[f64], inv_tau: f64) -> Vec<f64> {
    let scaled: Vec<f64> = row.iter().map(|v| v * inv_tau).collect();
    let lse = log_sum_exp(&scaled);
    scaled.iter().map(|v| v - lse).collect()
}

/// Row-wise softmax of an `[N, C]` logit array.
pub fn softmax(logits: &DenseArray) -> Result<DenseArray> {
    let (n, c) = check_2d(logits, "softmax")?;
    let mut data = Vec::with_capacity(n * c);
    for i in 0..n {
        data.extend(softmax_row(logits.row(i)));
    }
    Ok(DenseArray::from_parts(vec![n, c], data))
}

/// Shannon entropy (natural log) of one probability row; `0·log 0 = 0`.
pub fn entropy_of(probs: &[f64]) -> f64 {
    -probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * p.ln())
        .sum::<f64>()
}

/// Mean prediction entropy of softmax(logits) over rows.
pub fn mean_prediction_entropy(logits: &DenseArray) -> Result<f64> {
    let (n, _) = check_2d(logits, "mean_prediction_entropy")?;
    if n == 0 {
        return Err(SimError::Empty("entropy over zero rows".into()));
    }
    let total: f64 = (0..n).map(|i| entropy_of(&softmax_row(logits.row(i)))).sum();
    Ok(total / n as f64)
}

pub fn cross_entropy_loss(logits: &DenseArray, labels: &[usize]) -> Result<f64> {
    cross_entropy_grad(logits, labels).map(|(l, _)| l)
}

/// Mean over rows of `-log softmax(logits)[label]`.
pub fn cross_entropy_grad(logits: &DenseArray, labels: &[usize]) -> Result<(f64, DenseArray)> {
    let (n, c) = check_2d(logits, "cross_entropy")?;
    check_labels(labels, n, c)?;
    if n == 0 {
        return Err(SimError::Empty("cross-entropy over zero rows".into()));
    }
    let inv_n = 1.0 / n as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(n * c);
    for (i, &y) in labels.iter().enumerate() {
        let row = logits.row(i);
        let lse = log_sum_exp(row);
        loss += lse - row[y];
        for (j, &v) in row.iter().enumerate() {
            let p = (v - lse).exp();
            grad.push((p - if j == y { 1.0 } else { 0.0 }) * inv_n);
        }
    }
    Ok((loss * inv_n, DenseArray::from_parts(vec![n, c], grad)))
}

pub fn supcon_loss(projections: &DenseArray, labels: &[usize], temperature: f64) -> Result<f64> {
    supcon_grad(projections, labels, temperature).map(|(l, _)| l)
}

/// Supervised contrastive loss over all rows of the batch.
///
/// For anchor `j`, the candidate set is every other row and the positives are
/// the other rows sharing its label. Anchors without positives are skipped and
/// the result is the mean over the remaining anchors (0 when none remain).
pub fn supcon_grad(z: &DenseArray, labels: &[usize], temperature: f64) -> Result<(f64, DenseArray)> {
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(SimError::config("tau_sc", "temperature must be positive"));
    }
    let (n, d) = check_2d(z, "supcon")?;
    if labels.len() != n {
        return Err(SimError::dim("supcon labels", n, labels.len()));
    }
    let inv_tau = 1.0 / temperature;
    let mut grad = vec![0.0; n * d];

    let anchors: Vec<usize> = (0..n)
        .filter(|&j| (0..n).any(|p| p != j && labels[p] == labels[j]))
        .collect();
    if anchors.is_empty() {
        return Ok((0.0, DenseArray::from_parts(vec![n, d], grad)));
    }

    // Similarity matrix, computed once.
    let mut sim = vec![0.0; n * n];
    for j in 0..n {
        for q in j..n {
            let s = z.row(j).iter().zip(z.row(q)).map(|(a, b)| a * b).sum::<f64>() * inv_tau;
            sim[j * n + q] = s;
            sim[q * n + j] = s;
        }
    }

    let inv_a = 1.0 / anchors.len() as f64;
    let mut total = 0.0;
    let mut others = Vec::with_capacity(n.saturating_sub(1));
    for &j in &anchors {
        others.clear();
        others.extend((0..n).filter(|&q| q != j).map(|q| sim[j * n + q]));
        let lse = log_sum_exp(&others);
        let positives: Vec<usize> = (0..n).filter(|&p| p != j && labels[p] == labels[j]).collect();
        let inv_p = 1.0 / positives.len() as f64;
        let pos_mean: f64 = positives.iter().map(|&p| sim[j * n + p]).sum::<f64>() * inv_p;
        total += lse - pos_mean;

        for q in (0..n).filter(|&q| q != j) {
            let soft = (sim[j * n + q] - lse).exp();
            let target = if labels[q] == labels[j] { inv_p } else { 0.0 };
            let g = (soft - target) * inv_a * inv_tau;
            if g == 0.0 {
                continue;
            }
            // s_jq = z_j . z_q / tau
            for k in 0..d {
                grad[j * d + k] += g * z.data()[q * d + k];
                grad[q * d + k] += g * z.data()[j * d + k];
            }
        }
    }
    Ok((total * inv_a, DenseArray::from_parts(vec![n, d], grad)))
}

pub fn kd_loss(teacher: &DenseArray, student: &DenseArray, temperature: f64) -> Result<f64> {
    kd_grad(teacher, student, temperature, KdForm::Softened).map(|(l, _)| l)
}

/// `(τ²/B)·Σ KLD(teacher ‖ student)`; the teacher is constant.
pub fn kd_grad(teacher: &DenseArray, student: &DenseArray, temperature: f64, form: KdForm) -> Result<(f64, DenseArray)> {
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(SimError::config("tau_kd", "temperature must be positive"));
    }
    let (n, c) = check_2d(student, "kd student")?;
    if teacher.shape() != student.shape() {
        return Err(SimError::dim(
            "kd teacher/student",
            format!("{:?}", student.shape()),
            format!("{:?}", teacher.shape()),
        ));
    }
    if n == 0 {
        return Err(SimError::Empty("kd over zero rows".into()));
    }
    let tau = temperature;
    let inv_n = 1.0 / n as f64;
    // Softened: softmax(x/τ) with τ² prefactor. Literal: softmax(x), prefactor τ.
    let (inv_scale, prefactor) = match form {
        KdForm::Softened => (1.0 / tau, tau * tau),
        KdForm::Literal => (1.0, tau),
    };
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(n * c);
    for i in 0..n {
        let lt = scaled_log_softmax(teacher.row(i), inv_scale);
        let ls = scaled_log_softmax(student.row(i), inv_scale);
        let mut kld = 0.0;
        for (a, b) in lt.iter().zip(&ls) {
            let pt = a.exp();
            if pt > 0.0 {
                kld += pt * (a - b);
            }
        }
        loss += kld;
        for (a, b) in lt.iter().zip(&ls) {
            grad.push(prefactor * inv_scale * inv_n * (b.exp() - a.exp()));
        }
    }
    Ok((prefactor * inv_n * loss, DenseArray::from_parts(vec![n, c], grad)))
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Cosine similarity; 0 when either vector is zero.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb)
}

/// d cos(a, b) / d a
fn cosine_grad_a(a: &[f64], b: &[f64]) -> Vec<f64> {
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return vec![0.0; a.len()];
    }
    let cos = cosine_similarity(a, b);
    a.iter()
        .zip(b)
        .map(|(x, y)| y / (na * nb) - cos * x / (na * na))
        .collect()
}

/// Model-contrastive loss: pull `z` toward the global model's embedding and
/// away from the previous local model's embedding.
pub fn moon_contrastive_grad(
    z: &DenseArray,
    z_global: &DenseArray,
    z_prev: &DenseArray,
    temperature: f64,
) -> Result<(f64, DenseArray)> {
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(SimError::config("tau_moon", "temperature must be positive"));
    }
    let (n, d) = check_2d(z, "moon z")?;
    if z_global.shape() != z.shape() || z_prev.shape() != z.shape() {
        return Err(SimError::dim("moon embeddings", format!("{:?}", z.shape()), "mismatched reference embeddings"));
    }
    if n == 0 {
        return Err(SimError::Empty("moon loss over zero rows".into()));
    }
    let inv_n = 1.0 / n as f64;
    let inv_tau = 1.0 / temperature;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(n * d);
    for i in 0..n {
        let (zi, zg, zp) = (z.row(i), z_global.row(i), z_prev.row(i));
        let c_glob = cosine_similarity(zi, zg);
        let c_prev = cosine_similarity(zi, zp);
        // -log(e^{g/τ} / (e^{g/τ} + e^{p/τ})) = softplus((p - g)/τ)
        let x = (c_prev - c_glob) * inv_tau;
        loss += softplus(x);
        let s = sigmoid(x);
        let dg = cosine_grad_a(zi, zg);
        let dp = cosine_grad_a(zi, zp);
        grad.extend(dg.iter().zip(&dp).map(|(g, p)| inv_n * s * inv_tau * (p - g)));
    }
    Ok((loss * inv_n, DenseArray::from_parts(vec![n, d], grad)))
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// L2-normalizes each row; zero rows stay zero.
pub fn l2_normalize_rows(u: &DenseArray) -> Result<(DenseArray, Vec<f64>)> {
    let (n, d) = check_2d(u, "l2_normalize_rows")?;
    let mut out = Vec::with_capacity(n * d);
    let mut norms = Vec::with_capacity(n);
    for i in 0..n {
        let row = u.row(i);
        let nrm = norm(row);
        norms.push(nrm);
        if nrm == 0.0 {
            out.extend(std::iter::repeat_n(0.0, d));
        } else {
            out.extend(row.iter().map(|v| v / nrm));
        }
    }
    Ok((DenseArray::from_parts(vec![n, d], out), norms))
}

/// Backpropagates through [`l2_normalize_rows`]; zero rows receive zero gradient.
pub(crate) fn l2_normalize_backward(z: &DenseArray, norms: &[f64], dz: &DenseArray) -> DenseArray {
    let d = z.row_len();
    let mut du = Vec::with_capacity(z.len());
    for (i, &nrm) in norms.iter().enumerate() {
        let (zr, gr) = (z.row(i), dz.row(i));
        if nrm == 0.0 {
            du.extend(std::iter::repeat_n(0.0, d));
            continue;
        }
        let proj: f64 = zr.iter().zip(gr).map(|(a, b)| a * b).sum();
        du.extend(zr.iter().zip(gr).map(|(a, g)| (g - a * proj) / nrm));
    }
    DenseArray::from_parts(z.shape().to_vec(), du)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn arr(rows: usize, data: Vec<f64>) -> DenseArray {
        let cols = data.len() / rows;
        DenseArray::new(vec![rows, cols], data).unwrap()
    }

    #[test]
    fn ce_uniform_is_ln_c() {
        let l = cross_entropy_loss(&arr(1, vec![0.3; 4]), &[2]).unwrap();
        assert!((l - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn ce_confident_is_zero() {
        let l = cross_entropy_loss(&arr(1, vec![0.0, 1e6, 0.0]), &[1]).unwrap();
        assert!(l.abs() < 1e-12);
    }

    #[test]
    fn ce_two_class_softplus() {
        // -log sigmoid(2 - 1) = softplus(-1)
        let l = cross_entropy_loss(&arr(1, vec![1.0, 2.0]), &[1]).unwrap();
        let expected = (1.0 + (-1f64).exp()).ln();
        assert!((l - expected).abs() < 1e-12);
        assert!((l - 0.3133).abs() < 1e-4);
    }

    #[test]
    fn ce_label_out_of_range() {
        assert!(matches!(
            cross_entropy_loss(&arr(1, vec![0.0, 0.0]), &[2]),
            Err(SimError::LabelOutOfRange { .. })
        ));
    }

    #[test]
    fn supcon_single_positive_pair_is_zero() {
        let z = arr(2, vec![1.0, 0.0, 1.0, 0.0]);
        assert!(supcon_loss(&z, &[0, 0], 1.0).unwrap().abs() < 1e-15);
    }

    #[test]
    fn supcon_distinct_labels_is_zero() {
        let z = arr(3, vec![1.0, 0.0, 0.0, 1.0, 0.6, 0.8]);
        let (l, g) = supcon_grad(&z, &[0, 1, 2], 0.07).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn supcon_rejects_bad_temperature() {
        let z = arr(2, vec![1.0, 0.0, 1.0, 0.0]);
        assert!(supcon_loss(&z, &[0, 0], 0.0).is_err());
        assert!(supcon_loss(&z, &[0, 0], -1.0).is_err());
    }

    #[test]
    fn kd_identical_is_zero() {
        let a = arr(2, vec![1.0, -2.0, 0.5, 3.0, 0.0, 0.1]);
        assert!(kd_loss(&a, &a, 2.0).unwrap().abs() < 1e-12);
    }

    #[test]
    fn kd_uniform_is_zero() {
        let t = arr(1, vec![0.0, 0.0, 0.0]);
        let s = arr(1, vec![5.0, 5.0, 5.0]);
        assert!(kd_loss(&t, &s, 3.0).unwrap().abs() < 1e-12);
    }

    #[test]
    fn kd_shape_mismatch() {
        assert!(kd_loss(&arr(1, vec![0.0, 1.0]), &arr(1, vec![0.0, 1.0, 2.0]), 1.0).is_err());
    }

    #[test]
    fn kd_literal_is_scaled_plain_kl() {
        let t = arr(1, vec![2.0, 0.0]);
        let s = arr(1, vec![0.0, 0.0]);
        let tau = 2.0;
        let (lit, _) = kd_grad(&t, &s, tau, KdForm::Literal).unwrap();
        let (plain, _) = kd_grad(&t, &s, 1.0, KdForm::Softened).unwrap();
        assert!((lit - tau * plain).abs() < 1e-12);
    }

    #[test]
    fn moon_symmetric_case_is_ln2() {
        let z = arr(1, vec![1.0, 2.0]);
        let r = arr(1, vec![0.5, -1.0]);
        let (l, _) = moon_contrastive_grad(&z, &r, &r, 0.5).unwrap();
        assert!((l - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn entropy_uniform() {
        let l = arr(1, vec![0.0; 3]);
        assert!((mean_prediction_entropy(&l).unwrap() - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn normalize_zero_row() {
        let (z, norms) = l2_normalize_rows(&arr(2, vec![0.0, 0.0, 3.0, 4.0])).unwrap();
        assert_eq!(z.data(), &[0.0, 0.0, 0.6, 0.8]);
        assert_eq!(norms, vec![0.0, 5.0]);
    }
}
