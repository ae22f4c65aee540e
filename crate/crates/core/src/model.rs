//! DIN-style backbone: local-activation-unit pooling, ReLU tower, sigmoid head.

use miss_autodiff::{Graph, Tensor, Var};

use crate::embedding::BatchEmbeddings;
use crate::error::{MissError, Result};
use crate::params::{glorot, ParamId, ParamStore};
use crate::rng;

/// Predictions are clipped into `[CLIP, 1 - CLIP]` before the logarithm.
pub const CLIP: f64 = 1e-12;

/// Affine layer `x·W + b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn apply(&self, g: &mut Graph, vars: &[Var], x: Var) -> Result<Var> {
        let y = g.matmul(x, vars[self.w.0])?;
        Ok(g.add_row(y, vars[self.b.0])?)
    }
}

/// Stack of linear layers, ReLU between them and none after the last.
pub fn init_mlp(
    store: &mut ParamStore,
    prefix: &str,
    input: usize,
    sizes: &[usize],
    r: &mut rand_chacha::ChaCha8Rng,
) -> Vec<Linear> {
    let mut fan_in = input;
    sizes
        .iter()
        .enumerate()
        .map(|(d, &out)| {
            let w = store.push(format!("{prefix}.w{d}"), glorot(r, fan_in, out), false);
            let b = store.push(format!("{prefix}.b{d}"), Tensor::zeros(&[out]), false);
            fan_in = out;
            Linear { w, b }
        })
        .collect()
}

pub fn apply_mlp(g: &mut Graph, vars: &[Var], layers: &[Linear], x: Var) -> Result<Var> {
    let mut h = x;
    for (i, layer) in layers.iter().enumerate() {
        h = layer.apply(g, vars, h)?;
        if i + 1 < layers.len() {
            h = g.relu(h);
        }
    }
    Ok(h)
}

pub fn mlp_param_count(input: usize, sizes: &[usize]) -> usize {
    let mut fan_in = input;
    sizes
        .iter()
        .map(|&out| {
            let n = fan_in * out + out;
            fan_in = out;
            n
        })
        .sum()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BaseModel {
    /// [v; e; v⊙e; v−e] → hidden → 1
    pub lau: Vec<Linear>,
    /// hidden layers followed by the 1-unit head
    pub tower: Vec<Linear>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BaseDims {
    pub num_cat: usize,
    pub num_fields: usize,
    pub dim: usize,
    pub lau_hidden: usize,
}

impl BaseDims {
    /// Width of a behavior or candidate vector, J·K.
    pub fn behavior_width(&self) -> usize {
        self.num_fields * self.dim
    }

    /// Width of the tower input X = [categorical; pooled; candidate].
    pub fn input_width(&self) -> usize {
        (self.num_cat + 2 * self.num_fields) * self.dim
    }
}

impl BaseModel {
    pub fn init(store: &mut ParamStore, dims: BaseDims, tower: &[usize], seed: u64) -> Result<Self> {
        if tower.last() != Some(&1) {
            return Err(MissError::Config(format!("tower must end in a 1-unit head, got {tower:?}")));
        }
        let jk = dims.behavior_width();
        let lau = init_mlp(store, "lau", 4 * jk, &[dims.lau_hidden, 1], &mut rng::stream(seed, rng::LAU));
        let tower = init_mlp(store, "mlp", dims.input_width(), tower, &mut rng::stream(seed, rng::MLP));
        Ok(Self { lau, tower })
    }

    /// Candidate-aware weighted sum of behaviors, shape [B, J·K]. Weights are
    /// raw LAU scores (no softmax); padded steps get weight 0.
    pub fn laup_pool(&self, g: &mut Graph, vars: &[Var], e: &BatchEmbeddings) -> Result<Var> {
        let (b, l) = (e.batch, e.max_len);
        let jk = e.seq.len() * e.dim;
        let v = g.concat(&e.seq, 1)?;
        let cand = g.concat(&e.cand, 1)?;
        let rows: Vec<usize> = (0..b).flat_map(|i| std::iter::repeat_n(i, l)).collect();
        let c = g.gather_rows(cand, &rows)?;
        let prod = g.mul(v, c)?;
        let diff = g.sub(v, c)?;
        let input = g.concat(&[v, c, prod, diff], 1)?;
        let w = apply_mlp(g, vars, &self.lau, input)?;
        let w = g.reshape(w, &[b * l])?;
        let mask = g.constant(Tensor::vector(e.mask.clone()));
        let w = g.mul(w, mask)?;
        let weighted = g.mul_col(v, w)?;
        let weighted = g.reshape(weighted, &[b, l, jk])?;
        Ok(g.sum_axis(weighted, 1)?)
    }

    /// Click probabilities, shape [B].
    pub fn predict(&self, g: &mut Graph, vars: &[Var], e: &BatchEmbeddings) -> Result<Var> {
        let pooled = self.laup_pool(g, vars, e)?;
        let mut parts = e.cat.clone();
        parts.push(pooled);
        parts.extend(e.cand.iter().copied());
        let x = g.concat(&parts, 1)?;
        let logit = apply_mlp(g, vars, &self.tower, x)?;
        let logit = g.reshape(logit, &[e.batch])?;
        Ok(g.sigmoid(logit))
    }
}

/// Batch logloss −mean[y·ln ŷ + (1−y)·ln(1−ŷ)] with ŷ clipped to [1e-12, 1−1e-12].
pub fn logloss_var(g: &mut Graph, pred: Var, labels: &[f64]) -> Result<Var> {
    let p = g.clamp(pred, CLIP, 1.0 - CLIP);
    let y = g.constant(Tensor::vector(labels.to_vec()));
    let not_y = g.constant(Tensor::vector(labels.iter().map(|v| 1.0 - v).collect()));
    let lp = g.log(p);
    let neg = g.scale(p, -1.0);
    let q = g.add_scalar(neg, 1.0);
    let lq = g.log(q);
    let a = g.mul(y, lp)?;
    let b = g.mul(not_y, lq)?;
    let s = g.add(a, b)?;
    let m = g.mean(s)?;
    Ok(g.scale(m, -1.0))
}
