//! Server-side aggregation.

use super::client::ClientUpdateResult;
use crate::error::{Result, SimError};
use crate::nn::ModelState;

/// Convex combination of `states` with weights proportional to `raw`.
///
/// Inputs are reduced in ascending `client_ids` order so the result does not
/// depend on update order. When every raw weight is equal the result is the
/// plain elementwise mean. Returns the state and the normalized weights in
/// the caller's order.
pub fn weighted_average(client_ids: &[usize], states: &[&ModelState], raw: &[f64]) -> Result<(ModelState, Vec<f64>)> {
    let n = states.len();
    if n == 0 {
        return Err(SimError::Empty("aggregation needs at least one update".into()));
    }
    if raw.len() != n || client_ids.len() != n {
        return Err(SimError::dim("aggregation weights", n, raw.len().min(client_ids.len())));
    }
    if let Some(w) = raw.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
        return Err(SimError::NonFinite(format!("aggregation weight {w}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| client_ids[i]);
    let total: f64 = order.iter().map(|&i| raw[i]).sum();
    if !(total > 0.0 && total.is_finite()) {
        return Err(SimError::NonFinite(format!("aggregation weight total {total}")));
    }
    for s in &states[1..] {
        states[0].check_congruent(s.tensors().map(|t| t.shape().to_vec()), "aggregation")?;
    }
    let uniform = raw.iter().all(|&w| w == raw[0]);
    let weights: Vec<f64> = if uniform {
        vec![1.0 / n as f64; n]
    } else {
        raw.iter().map(|w| w / total).collect()
    };

    let mut out = states[order[0]].clone();
    let mut first = true;
    for &i in &order {
        for (dst, src) in out.tensors_mut().zip(states[i].tensors()) {
            let dst = dst.data_mut();
            if uniform {
                if first {
                    continue;
                }
                for (d, s) in dst.iter_mut().zip(src.data()) {
                    *d += s;
                }
            } else if first {
                for d in dst.iter_mut() {
                    *d *= weights[i];
                }
            } else {
                for (d, s) in dst.iter_mut().zip(src.data()) {
                    *d += weights[i] * s;
                }
            }
        }
        first = false;
    }
    if uniform && n > 1 {
        let nf = n as f64;
        for t in out.tensors_mut() {
            for d in t.data_mut() {
                *d /= nf;
            }
        }
    }
    Ok((out, weights))
}

fn ids_and_states(updates: &[ClientUpdateResult]) -> (Vec<usize>, Vec<&ModelState>) {
    updates.iter().map(|u| (u.client_id, &u.params)).unzip()
}

/// `W = Σ (r_k / Σ r) · w_k` using each update's quality weight.
pub fn aggregate_quality_weighted(updates: &[ClientUpdateResult]) -> Result<(ModelState, Vec<f64>)> {
    let (ids, states) = ids_and_states(updates);
    let raw: Vec<f64> = updates.iter().map(|u| u.quality_weight).collect();
    if let Some(w) = raw.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
        return Err(SimError::NonFinite(format!("quality weight {w}")));
    }
    weighted_average(&ids, &states, &raw)
}

/// `W = Σ (n_k / Σ n) · w_k`.
pub fn aggregate_fedavg(updates: &[ClientUpdateResult]) -> Result<(ModelState, Vec<f64>)> {
    let (ids, states) = ids_and_states(updates);
    let raw: Vec<f64> = updates.iter().map(|u| u.samples_used as f64).collect();
    weighted_average(&ids, &states, &raw)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{ArchSpec, Layer};

    fn arch() -> ArchSpec {
        ArchSpec {
            layers: vec![Layer::Dense { in_dim: 1, out_dim: 1 }],
            encoder_output_dim: 1,
            projection_dim: 1,
            num_classes: 2,
        }
    }

    fn scalar_state(v: f64) -> ModelState {
        let a = arch();
        let n = ModelState::zeros(&a).num_params();
        let mut flat = vec![0.0; n];
        flat[0] = v;
        ModelState::unflatten(&a, &flat, 0).unwrap()
    }

    fn update(id: usize, v: f64, n: usize, r: f64) -> ClientUpdateResult {
        ClientUpdateResult {
            client_id: id,
            params: scalar_state(v),
            quality_weight: r,
            local_losses: vec![],
            samples_used: n,
            mean_entropy: None,
        }
    }

    #[test]
    fn fedavg_weighted_by_samples() {
        let (w, weights) = aggregate_fedavg(&[update(0, 0.0, 1, 1.0), update(1, 4.0, 3, 1.0)]).unwrap();
        assert_eq!(w.flatten()[0], 3.0);
        assert_eq!(weights, vec![0.25, 0.75]);
    }

    #[test]
    fn entropy_weights_two_thirds_one_third() {
        let ups = [update(0, 1.0, 5, 1.0 / 0.5), update(1, 4.0, 5, 1.0 / 1.0)];
        let (w, weights) = aggregate_quality_weighted(&ups).unwrap();
        assert_eq!(weights, vec![2.0 / 3.0, 1.0 / 3.0]);
        assert!((w.flatten()[0] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn single_client_is_identity() {
        let u = update(3, 0.123456789, 2, 7.0);
        let (w, weights) = aggregate_quality_weighted(std::slice::from_ref(&u)).unwrap();
        assert_eq!(w, u.params);
        assert_eq!(weights, vec![1.0]);
    }

    #[test]
    fn permutation_invariant_bitwise() {
        let ups = vec![update(2, 0.1, 3, 0.7), update(0, 0.3, 5, 1.9), update(1, -0.2, 1, 0.4)];
        let (a, _) = aggregate_quality_weighted(&ups).unwrap();
        let rev: Vec<_> = ups.iter().rev().cloned().collect();
        let (b, _) = aggregate_quality_weighted(&rev).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_bad_weights() {
        assert!(aggregate_quality_weighted(&[update(0, 1.0, 1, f64::NAN)]).is_err());
        assert!(aggregate_quality_weighted(&[update(0, 1.0, 1, 0.0)]).is_err());
        assert!(aggregate_quality_weighted(&[]).is_err());
    }
}
