use super::RoundUpdate;
use crate::error::{Error, Result};
use crate::nn::ModelParams;

/// `n_k / sum_j n_j` for each count.
pub fn aggregation_coefficients(sample_counts: &[u64]) -> Vec<f64> {
    let total: u64 = sample_counts.iter().sum();
    sample_counts
        .iter()
        .map(|&n| n as f64 / total as f64)
        .collect()
}

/// Sample-count-weighted FedAvg.
///
/// Updates are folded in ascending `client_id` order as
/// `theta_0 + sum_k c_k (theta_k - theta_0)`, then clamped to the
/// componentwise hull of the inputs. One update, or identical updates,
/// come back bit-for-bit.
pub fn fedavg_aggregate(updates: &[RoundUpdate]) -> Result<ModelParams> {
    let first = updates
        .first()
        .ok_or_else(|| Error::Protocol("aggregation needs at least one update".into()))?;
    let mut sorted: Vec<&RoundUpdate> = updates.iter().collect();
    sorted.sort_by(|a, b| a.client_id.cmp(&b.client_id));
    for pair in sorted.windows(2) {
        if pair[0].client_id == pair[1].client_id {
            return Err(Error::Protocol(format!(
                "duplicate update from `{}`",
                pair[0].client_id
            )));
        }
    }
    for u in &sorted {
        if u.round != first.round {
            return Err(Error::Protocol(format!(
                "mixed rounds: `{}` sent round {}, expected {}",
                u.client_id, u.round, first.round
            )));
        }
        if !u.params.same_shape(&first.params) {
            return Err(Error::Protocol(format!(
                "`{}` sent parameters of a different shape",
                u.client_id
            )));
        }
        if u.sample_count == 0 {
            return Err(Error::Protocol(format!(
                "`{}` reported zero samples",
                u.client_id
            )));
        }
    }

    let coeffs =
        aggregation_coefficients(&sorted.iter().map(|u| u.sample_count).collect::<Vec<_>>());
    let base: Vec<f64> = sorted[0].params.values().collect();
    let mut acc = base.clone();
    let mut lo = base.clone();
    let mut hi = base.clone();
    for (u, &c) in sorted.iter().zip(&coeffs).skip(1) {
        for (i, t) in u.params.values().enumerate() {
            acc[i] += c * (t - base[i]);
            lo[i] = lo[i].min(t);
            hi[i] = hi[i].max(t);
        }
    }
    let mut out = sorted[0].params.clone();
    for (i, o) in out.values_mut().enumerate() {
        *o = acc[i].clamp(lo[i], hi[i]);
    }
    Ok(out)
}
