use miss_autodiff::{Graph, Var};

use crate::error::{MissError, Result};

/// Floor applied to each norm before dividing.
pub const COS_EPS: f64 = 1e-12;

/// InfoNCE over group-major view matrices.
///
/// `z1` and `z2` have `groups · n` rows; rows `p·n .. (p+1)·n` hold pair
/// index `p` for the `n` contributing samples. For every (sample, pair) the
/// loss is `−log(exp(s_ii/τ) / Σ_j exp(s_ij/τ))` with `s` the cosine
/// similarity between view 1 of sample i and view 2 of sample j; the result
/// is the mean over all rows.
pub fn infonce(g: &mut Graph, z1: Var, z2: Var, groups: usize, n: usize, tau: f64) -> Result<Var> {
    if n < 2 || groups == 0 {
        return Err(MissError::AugmentationInfeasible(format!(
            "InfoNCE needs at least two contributing samples, got {n}"
        )));
    }
    let a = g.row_normalize(z1, COS_EPS)?;
    let b = g.row_normalize(z2, COS_EPS)?;
    let diag: Vec<usize> = (0..n).map(|i| i * n + i).collect();
    let mut terms = Vec::with_capacity(groups);
    for p in 0..groups {
        let ap = g.slice_window(a, 0, p * n, n)?;
        let bp = g.slice_window(b, 0, p * n, n)?;
        let bt = g.transpose(bp)?;
        let s = g.matmul(ap, bt)?;
        let logits = g.scale(s, 1.0 / tau);
        let lse = g.logsumexp_rows(logits)?;
        let pos = g.gather(logits, diag.clone(), &[n])?;
        terms.push(g.sub(lse, pos)?);
    }
    let all = g.concat(&terms, 0)?;
    Ok(g.mean(all)?)
}

/// Cosine similarity of row i of `a` with row i of `b` (both n×d), each
/// norm floored at [`COS_EPS`].
pub fn row_cosines(a: &[f64], b: &[f64], d: usize) -> Vec<f64> {
    a.chunks(d)
        .zip(b.chunks(d))
        .map(|(x, y)| {
            let nx = x.iter().map(|v| v * v).sum::<f64>().sqrt().max(COS_EPS);
            let ny = y.iter().map(|v| v * v).sum::<f64>().sqrt().max(COS_EPS);
            x.iter().zip(y).map(|(p, q)| (p / nx) * (q / ny)).sum()
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimStats {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

/// Mean/min/max of pair similarities. Values are clamped into [−1, 1] to
/// absorb rounding. `None` when there are no pairs.
pub fn view_similarity_stats(sims: &[f64]) -> Option<SimStats> {
    if sims.is_empty() {
        return None;
    }
    let c: Vec<f64> = sims.iter().map(|s| s.clamp(-1.0, 1.0)).collect();
    Some(SimStats {
        mean: (c.iter().sum::<f64>() / c.len() as f64).clamp(-1.0, 1.0),
        min: c.iter().cloned().fold(f64::INFINITY, f64::min),
        max: c.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        count: c.len(),
    })
}
