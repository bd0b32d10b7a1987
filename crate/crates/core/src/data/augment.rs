//! Modality-dropout augmentation.

use rand::Rng;
use rand_distr::StandardNormal;

use super::types::ModalityLayout;
use crate::error::{Result, SimError};
use crate::nn::DenseArray;

/// Uniformly samples a non-empty proper subset of `available` (sorted output).
///
/// Fails with [`SimError::AugmentationUnavailable`] when fewer than two
/// modalities are available.
pub fn sample_proper_subset<R: Rng + ?Sized>(available: &[usize], rng: &mut R) -> Result<Vec<usize>> {
    let m = available.len();
    if m < 2 {
        return Err(SimError::AugmentationUnavailable { available: m });
    }
    // Rejection over fair coin flips is uniform over the 2^m - 2 admissible subsets.
    loop {
        let picks: Vec<bool> = (0..m).map(|_| rng.random::<bool>()).collect();
        let count = picks.iter().filter(|&&b| b).count();
        if count > 0 && count < m {
            let mut out: Vec<usize> = available.iter().zip(&picks).filter_map(|(&id, &p)| p.then_some(id)).collect();
            out.sort_unstable();
            return Ok(out);
        }
    }
}

/// Retain set for a client's modality dropout.
pub fn sample_retain_set<R: Rng + ?Sized>(available: &[usize], rng: &mut R) -> Result<Vec<usize>> {
    sample_proper_subset(available, rng)
}

fn batch_dims(batch: &DenseArray, layout: &ModalityLayout) -> Result<(usize, usize)> {
    match batch.shape() {
        [b, c, l] if *c == layout.total_channels() => Ok((*b, *l)),
        other => Err(SimError::dim(
            "augmentation batch",
            format!("[B, {}, L]", layout.total_channels()),
            format!("{other:?}"),
        )),
    }
}

fn validate_retain(present: &[usize], retain: &[usize]) -> Result<()> {
    if retain.is_empty() {
        return Err(SimError::config("retain", "retain set must be non-empty"));
    }
    if let Some(m) = retain.iter().find(|m| !present.contains(m)) {
        return Err(SimError::config("retain", format!("modality {m} is not present")));
    }
    let mut r = retain.to_vec();
    r.sort_unstable();
    r.dedup();
    if r.len() >= present.len() {
        return Err(SimError::config("retain", "retain set must be a proper subset of present modalities"));
    }
    Ok(())
}

/// Zeroes every modality block outside the row's retain set and adds
/// `N(mu, sigma²)` noise to the retained blocks. Returns a new batch.
pub fn dropout_rows<R: Rng + ?Sized>(
    batch: &DenseArray,
    layout: &ModalityLayout,
    retain_per_row: &[&[usize]],
    noise_mu: f64,
    noise_sigma: f64,
    rng: &mut R,
) -> Result<DenseArray> {
    let (b, len) = batch_dims(batch, layout)?;
    if retain_per_row.len() != b {
        return Err(SimError::dim("retain sets", b, retain_per_row.len()));
    }
    let mut out = batch.clone();
    for (i, retain) in retain_per_row.iter().enumerate() {
        let row = out.row_mut(i);
        for m in 0..layout.num_modalities() {
            let block = layout.block(m);
            let span = &mut row[block.start * len..block.end * len];
            if retain.contains(&m) {
                if noise_sigma != 0.0 || noise_mu != 0.0 {
                    for v in span.iter_mut() {
                        *v += noise_mu + noise_sigma * rng.sample::<f64, _>(StandardNormal);
                    }
                }
            } else {
                span.fill(0.0);
            }
        }
    }
    Ok(out)
}

/// Modality dropout with one retain set shared by every row.
///
/// `present` lists the client's available modalities; `retain` must be a
/// non-empty proper subset of it.
pub fn modality_dropout<R: Rng + ?Sized>(
    batch: &DenseArray,
    layout: &ModalityLayout,
    present: &[usize],
    retain: &[usize],
    noise_mu: f64,
    noise_sigma: f64,
    rng: &mut R,
) -> Result<DenseArray> {
    validate_retain(present, retain)?;
    let rows = vec![retain; batch.rows()];
    dropout_rows(batch, layout, &rows, noise_mu, noise_sigma, rng)
}

/// Noise-only augmentation for clients with a single modality.
pub fn noise_only<R: Rng + ?Sized>(
    batch: &DenseArray,
    layout: &ModalityLayout,
    present: &[usize],
    noise_mu: f64,
    noise_sigma: f64,
    rng: &mut R,
) -> Result<DenseArray> {
    let rows = vec![present; batch.rows()];
    dropout_rows(batch, layout, &rows, noise_mu, noise_sigma, rng)
}
