use crate::error::{Error, Result};

fn check_inputs(scores: &[f64], labels: &[u8]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::MetricUndefined("NaN score".into()));
    }
    Ok(())
}

/// Row indices sorted by score, ascending, with equal scores grouped.
fn tie_blocks(scores: &[f64], labels: &[u8]) -> Vec<(usize, usize)> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut blocks = Vec::new();
    let mut i = 0;
    while i < idx.len() {
        let s = scores[idx[i]];
        let (mut pos, mut neg) = (0, 0);
        while i < idx.len() && scores[idx[i]] == s {
            if labels[idx[i]] == 1 {
                pos += 1;
            } else {
                neg += 1;
            }
            i += 1;
        }
        blocks.push((pos, neg));
    }
    blocks
}

/// Area under the ROC curve as the Mann-Whitney statistic,
/// `(concordant + 0.5 * tied) / (P * N)`.
pub fn auroc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check_inputs(scores, labels)?;
    let p = labels.iter().filter(|&&y| y == 1).count();
    let n = labels.len() - p;
    if p == 0 || n == 0 {
        return Err(Error::MetricUndefined(format!(
            "AUROC needs both classes ({p} positives, {n} negatives)"
        )));
    }
    let mut neg_below = 0usize;
    let mut acc = 0.0;
    for (pos, neg) in tie_blocks(scores, labels) {
        acc += pos as f64 * (neg_below as f64 + 0.5 * neg as f64);
        neg_below += neg;
    }
    Ok(acc / (p as f64 * n as f64))
}

/// Average precision: `sum_i (R_i - R_{i-1}) P_i` over descending score
/// thresholds, each group of tied scores forming one threshold.
pub fn auprc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check_inputs(scores, labels)?;
    let total_pos = labels.iter().filter(|&&y| y == 1).count();
    if total_pos == 0 {
        return Err(Error::MetricUndefined(
            "AUPRC needs at least one positive".into(),
        ));
    }
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    for (pos, neg) in tie_blocks(scores, labels).into_iter().rev() {
        tp += pos;
        fp += neg;
        let recall = tp as f64 / total_pos as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Ok(ap)
}
