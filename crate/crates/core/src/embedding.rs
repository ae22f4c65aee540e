use miss_autodiff::{Graph, Tensor, Var};

use crate::data::Sample;
use crate::error::{MissError, Result};
use crate::params::{uniform, ParamId, ParamStore};
use crate::rng;

pub const INIT_BOUND: f64 = 0.05;

/// Handles of the per-field embedding tables inside a [`ParamStore`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EmbeddingTables {
    pub cat: Vec<ParamId>,
    pub seq: Vec<ParamId>,
    pub dim: usize,
}

/// Adds one `size × dim` table per field, entries uniform in ±0.05 and row 0
/// (padding) zero.
pub fn init_tables(
    store: &mut ParamStore,
    cat: &[(String, usize)],
    seq: &[(String, usize)],
    dim: usize,
    seed: u64,
) -> Result<EmbeddingTables> {
    if dim == 0 {
        return Err(MissError::Config("embedding dimension must be >= 1".into()));
    }
    let mut r = rng::stream(seed, rng::EMBEDDINGS);
    let mut add = |prefix: &str, fields: &[(String, usize)]| -> Vec<ParamId> {
        fields
            .iter()
            .map(|(name, size)| store.push(format!("emb.{prefix}.{name}"), uniform(&mut r, &[*size, dim], INIT_BOUND), true))
            .collect()
    };
    let cat = add("cat", cat);
    let seq = add("seq", seq);
    Ok(EmbeddingTables { cat, seq, dim })
}

/// Embedded batch. Behavior rows are laid out sample-major then time:
/// row `b·L + t` holds time step `t` of sample `b`.
#[derive(Debug, Clone)]
pub struct BatchEmbeddings {
    pub batch: usize,
    pub max_len: usize,
    pub dim: usize,
    /// I tensors of shape [B, K].
    pub cat: Vec<Var>,
    /// J tensors of shape [B·L, K]; padded positions are exactly zero.
    pub seq: Vec<Var>,
    /// J tensors of shape [B, K], same field order as `seq`.
    pub cand: Vec<Var>,
    /// 1 for real behaviors, 0 for padding, length B·L.
    pub mask: Vec<f64>,
    pub seq_lens: Vec<usize>,
}

fn lookup(g: &mut Graph, store: &ParamStore, table: ParamId, var: Var, ids: &[usize]) -> Result<Var> {
    let size = g.shape(var)[0];
    if let Some(&id) = ids.iter().find(|&&id| id >= size) {
        return Err(MissError::IdOutOfRange {
            field: store.get(table).name.clone(),
            id,
            size,
        });
    }
    Ok(g.gather_rows(var, ids)?)
}

pub fn embed_batch(
    g: &mut Graph,
    store: &ParamStore,
    vars: &[Var],
    tables: &EmbeddingTables,
    samples: &[&Sample],
) -> Result<BatchEmbeddings> {
    let first = samples.first().ok_or_else(|| MissError::Config("empty batch".into()))?;
    let (b, l) = (samples.len(), first.max_len());
    for (i, s) in samples.iter().enumerate() {
        if s.categorical.len() != tables.cat.len() || s.sequences.len() != tables.seq.len() || s.candidate.len() != tables.seq.len() {
            return Err(MissError::Config(format!("sample {i} does not match the table layout")));
        }
        if s.seq_len == 0 {
            return Err(MissError::EmptySequence(i));
        }
        if s.max_len() != l {
            return Err(MissError::Config(format!("sample {i} has sequence length {}, expected {l}", s.max_len())));
        }
    }
    let mut mask = Vec::with_capacity(b * l);
    for s in samples {
        mask.extend((0..l).map(|t| if t >= l - s.seq_len { 1.0 } else { 0.0 }));
    }
    let mask_var = g.constant(Tensor::vector(mask.clone()));

    let mut cat = Vec::new();
    for (f, &table) in tables.cat.iter().enumerate() {
        let ids: Vec<usize> = samples.iter().map(|s| s.categorical[f]).collect();
        cat.push(lookup(g, store, table, vars[table.0], &ids)?);
    }
    let mut seq = Vec::new();
    let mut cand = Vec::new();
    for (f, &table) in tables.seq.iter().enumerate() {
        let ids: Vec<usize> = samples.iter().flat_map(|s| s.sequences[f].iter().copied()).collect();
        let rows = lookup(g, store, table, vars[table.0], &ids)?;
        seq.push(g.mul_col(rows, mask_var)?);
        let ids: Vec<usize> = samples.iter().map(|s| s.candidate[f]).collect();
        cand.push(lookup(g, store, table, vars[table.0], &ids)?);
    }
    Ok(BatchEmbeddings {
        batch: b,
        max_len: l,
        dim: tables.dim,
        cat,
        seq,
        cand,
        mask,
        seq_lens: samples.iter().map(|s| s.seq_len).collect(),
    })
}
