//! Horizontal (time-axis) and vertical (field-axis) convolutions over the
//! behavior tensor C of shape [B, J, L, K].

use miss_autodiff::{Graph, Var};

use crate::embedding::BatchEmbeddings;
use crate::error::Result;
use crate::params::{uniform, ParamId, ParamStore};
use crate::rng;

pub const INIT_BOUND: f64 = 0.5;

/// One bias-free kernel per horizontal width m = 1..M and, per width, one
/// vertical kernel per height n = 1..N.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConvBank {
    /// `horizontal[m-1]` has m weights.
    pub horizontal: Vec<ParamId>,
    /// `vertical[m-1][n-1]` has n weights.
    pub vertical: Vec<Vec<ParamId>>,
}

impl ConvBank {
    pub fn init(store: &mut ParamStore, m: usize, n: usize, seed: u64) -> Self {
        let mut r = rng::stream(seed, rng::CONV);
        let mut horizontal = Vec::with_capacity(m);
        let mut vertical = Vec::with_capacity(m);
        for mi in 1..=m {
            horizontal.push(store.push(format!("conv.h{mi}"), uniform(&mut r, &[mi], INIT_BOUND), false));
            vertical.push(
                (1..=n)
                    .map(|ni| store.push(format!("conv.v{mi}.{ni}"), nonnegative(uniform(&mut r, &[ni], INIT_BOUND)), false))
                    .collect(),
            );
        }
        Self { horizontal, vertical }
    }

    pub fn m(&self) -> usize {
        self.horizontal.len()
    }

    pub fn n(&self) -> usize {
        self.vertical.first().map_or(0, Vec::len)
    }
}

/// Vertical kernels act on ReLU outputs, so an all-negative kernel would
/// start (and stay) dead; they are drawn from |uniform(−0.5, 0.5)|.
fn nonnegative(mut t: miss_autodiff::Tensor) -> miss_autodiff::Tensor {
    t.data_mut().iter_mut().for_each(|v| *v = v.abs());
    t
}

/// Σ_{m=1..M} m + M·Σ_{n=1..N} n.
pub fn conv_param_count(m: usize, n: usize) -> usize {
    m * (m + 1) / 2 + m * n * (n + 1) / 2
}

/// |T| = Σ_{m=1..M} (L−m+1), counting only widths that fit.
pub fn interest_count(l: usize, m: usize) -> usize {
    (1..=m.min(l)).map(|mi| l - mi + 1).sum()
}

/// Ω = Σ_{n=1..N} (J−n+1), counting only heights that fit.
pub fn feature_count(j: usize, n: usize) -> usize {
    (1..=n.min(j)).map(|ni| j - ni + 1).sum()
}

/// Stacks the masked field embeddings into C, shape [B, J, L, K].
pub fn behavior_tensor(g: &mut Graph, e: &BatchEmbeddings) -> Result<Var> {
    let parts = e
        .seq
        .iter()
        .map(|&f| g.reshape(f, &[e.batch, 1, e.max_len, e.dim]))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(g.concat(&parts, 1)?)
}

/// `ReLU(Σ_i window_i(x) · kernel[i])` along `axis`, valid padding, stride 1.
/// `None` when the kernel is longer than the axis.
fn conv_axis(g: &mut Graph, x: Var, kernel: Var, axis: usize) -> Result<Option<Var>> {
    let width = g.shape(kernel)[0];
    let extent = g.shape(x)[axis];
    if width > extent {
        return Ok(None);
    }
    let out = extent - width + 1;
    let mut acc = None;
    for i in 0..width {
        let w = g.slice_window(x, axis, i, out)?;
        let term = g.scale_by(w, kernel, i)?;
        acc = Some(match acc {
            None => term,
            Some(a) => g.add(a, term)?,
        });
    }
    Ok(acc.map(|a| g.relu(a)))
}

/// Multi-interest extraction: `G_m[b,j,l,k] = ReLU(Σ_i C[b,j,l+i,k]·g_m[i])`
/// for each requested width. Entry `m-1` is `None` for widths not requested
/// or longer than L.
pub fn mie_forward(g: &mut Graph, vars: &[Var], bank: &ConvBank, c: Var, widths: &[usize]) -> Result<Vec<Option<Var>>> {
    let l = g.shape(c)[2];
    let mut out = vec![None; bank.m()];
    for &m in widths {
        let r = conv_axis(g, c, vars[bank.horizontal[m - 1].0], 2)?;
        if r.is_none() {
            log::warn!("kernel width {m} exceeds sequence length {l}; branch emits no windows");
        }
        out[m - 1] = r;
    }
    Ok(out)
}

/// Fine-grained extraction: `Ĝ_{m,n}[b,j,l,k] = ReLU(Σ_i G_m[b,j+i,l,k]·ĝ_{m,n}[i])`.
/// Indexed `[m-1][n-1]`; `None` where G_m is absent or n > J.
pub fn mimfe_forward(g: &mut Graph, vars: &[Var], bank: &ConvBank, gm: &[Option<Var>]) -> Result<Vec<Vec<Option<Var>>>> {
    let mut out = Vec::with_capacity(gm.len());
    for (mi, gv) in gm.iter().enumerate() {
        let mut row = vec![None; bank.n()];
        if let Some(gv) = *gv {
            for (ni, slot) in row.iter_mut().enumerate() {
                *slot = conv_axis(g, gv, vars[bank.vertical[mi][ni].0], 1)?;
                if slot.is_none() {
                    log::warn!("kernel height {} exceeds field count {}; branch emits no rows", ni + 1, g.shape(gv)[1]);
                }
            }
        }
        out.push(row);
    }
    Ok(out)
}
