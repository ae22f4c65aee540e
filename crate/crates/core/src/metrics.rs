use crate::error::{MissError, Result};
use crate::model::CLIP;

/// Mann–Whitney AUC with average ranks for ties.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(MissError::UndefinedMetric(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(MissError::UndefinedMetric(format!(
            "AUC needs both classes, got {n_pos} positives and {n_neg} negatives"
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(MissError::UndefinedMetric("NaN score".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Ranks are 1-based; a tie group occupying positions i..j gets (i+1+j)/2.
    let mut pos_rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let rank = (i + 1 + j) as f64 / 2.0;
        pos_rank_sum += rank * order[i..j].iter().filter(|&&o| labels[o] == 1).count() as f64;
        i = j;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Ok((pos_rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Mean binary cross-entropy with predictions clipped like the training loss.
pub fn logloss(preds: &[f64], labels: &[u8]) -> Result<f64> {
    if preds.is_empty() || preds.len() != labels.len() {
        return Err(MissError::UndefinedMetric(format!(
            "logloss over {} predictions and {} labels",
            preds.len(),
            labels.len()
        )));
    }
    let sum: f64 = preds
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = p.clamp(CLIP, 1.0 - CLIP);
            let y = f64::from(y);
            y * p.ln() + (1.0 - y) * (1.0 - p).ln()
        })
        .sum();
    Ok(-(sum / preds.len() as f64))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalReport {
    pub auc: f64,
    pub logloss: f64,
    pub n_pos: usize,
    pub n_neg: usize,
}

pub fn evaluate_scores(scores: &[f64], labels: &[u8]) -> Result<EvalReport> {
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    Ok(EvalReport {
        auc: auc(scores, labels)?,
        logloss: logloss(scores, labels)?,
        n_pos,
        n_neg: labels.len() - n_pos,
    })
}

/// Sample mean and (n−1) standard deviation; std is 0 for a single value.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
