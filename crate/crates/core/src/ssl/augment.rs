//! View sampling. Samplers only look at sequence geometry (L, seq_len, J),
//! so the same generator state always yields the same picks.

use std::ops::Range;

use rand::Rng;

use crate::error::{MissError, Result};

/// Two windows `l` and `l + h` of horizontal branch `m`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InterestPick {
    pub m: usize,
    pub l: usize,
    pub h: usize,
}

/// Rows `j` and `j2` of slice (m, n) at time position `l`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeaturePick {
    pub m: usize,
    pub n: usize,
    pub l: usize,
    pub j: usize,
    pub j2: usize,
}

/// Start positions of width-`m` windows lying entirely on real behaviors.
/// Behaviors occupy the last `seq_len` of `max_len` positions.
pub fn valid_windows(max_len: usize, seq_len: usize, m: usize) -> Range<usize> {
    if m == 0 || m > seq_len || seq_len > max_len {
        return 0..0;
    }
    (max_len - seq_len)..(max_len - m + 1)
}

/// Draws `pairs` interest-level picks: branch uniform over widths with at
/// least two valid windows, distance uniform on [1, min(H, valid − 1)],
/// anchor uniform over positions where both windows are valid.
pub fn aug_interest<R: Rng>(
    max_len: usize,
    seq_len: usize,
    widths: &[usize],
    max_distance: usize,
    pairs: usize,
    rng: &mut R,
) -> Result<Vec<InterestPick>> {
    let feasible: Vec<(usize, Range<usize>)> = widths
        .iter()
        .map(|&m| (m, valid_windows(max_len, seq_len, m)))
        .filter(|(_, r)| r.len() >= 2)
        .collect();
    if feasible.is_empty() || max_distance == 0 {
        return Err(MissError::AugmentationInfeasible(format!(
            "no kernel branch has two valid windows (seq_len {seq_len})"
        )));
    }
    Ok((0..pairs)
        .map(|_| {
            let (m, range) = &feasible[rng.gen_range(0..feasible.len())];
            let h = rng.gen_range(1..=max_distance.min(range.len() - 1));
            let l = rng.gen_range(range.start..range.end - h);
            InterestPick { m: *m, l, h }
        })
        .collect())
}

/// Draws `pairs` feature-level picks: slice (m, n) uniform over slices with
/// at least two rows and one valid time position, then a valid position and
/// two distinct rows.
pub fn aug_feature<R: Rng>(
    max_len: usize,
    seq_len: usize,
    num_fields: usize,
    widths: &[usize],
    heights: usize,
    pairs: usize,
    rng: &mut R,
) -> Result<Vec<FeaturePick>> {
    let mut feasible = Vec::new();
    for &m in widths {
        let range = valid_windows(max_len, seq_len, m);
        if range.is_empty() {
            continue;
        }
        for n in 1..=heights.min(num_fields) {
            if num_fields - n + 1 >= 2 {
                feasible.push((m, n, range.clone()));
            }
        }
    }
    if feasible.is_empty() {
        return Err(MissError::AugmentationInfeasible(format!(
            "no feature slice has two rows at a valid position (J {num_fields}, seq_len {seq_len})"
        )));
    }
    Ok((0..pairs)
        .map(|_| {
            let (m, n, range) = &feasible[rng.gen_range(0..feasible.len())];
            let rows = num_fields - n + 1;
            let l = rng.gen_range(range.clone());
            let j = rng.gen_range(0..rows);
            let mut j2 = rng.gen_range(0..rows - 1);
            if j2 >= j {
                j2 += 1;
            }
            FeaturePick { m: *m, n: *n, l, j, j2 }
        })
        .collect())
}
