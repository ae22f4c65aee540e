//! The complete model: embeddings, base CTR model and, for MISS, the
//! extractors, view encoders and contrastive losses.

use std::collections::HashMap;

use miss_autodiff::{Graph, Var};
use rand::Rng;

use crate::config::{ExperimentConfig, ModelKind};
use crate::data::{Sample, Vocabulary};
use crate::embedding::{embed_batch, init_tables, BatchEmbeddings, EmbeddingTables};
use crate::error::{MissError, Result};
use crate::model::{apply_mlp, init_mlp, logloss_var, BaseDims, BaseModel, Linear};
use crate::params::ParamStore;
use crate::rng;
use crate::ssl::{
    aug_feature, aug_interest, behavior_tensor, infonce, mie_forward, mimfe_forward, row_cosines,
    view_similarity_stats, ConvBank, FeaturePick, InterestPick, SimStats,
};

#[derive(Debug, Clone, PartialEq)]
pub struct SslSpec {
    pub m: usize,
    pub n: usize,
    /// Horizontal widths that take part in sampling.
    pub widths: Vec<usize>,
    pub max_distance: usize,
    pub pairs_interest: usize,
    pub pairs_feature: usize,
    pub tau: f64,
    pub use_mimfe: bool,
    pub enc_i: Vec<usize>,
    pub enc_if: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    /// (name, vocabulary size) per categorical field.
    pub cat_fields: Vec<(String, usize)>,
    /// (name, vocabulary size) per behavior field.
    pub seq_fields: Vec<(String, usize)>,
    pub max_len: usize,
    pub dim: usize,
    pub lau_hidden: usize,
    pub tower: Vec<usize>,
    pub ssl: Option<SslSpec>,
}

impl ModelSpec {
    pub fn from_config(cfg: &ExperimentConfig, vocab: &Vocabulary) -> Self {
        let fields = |names: Vec<String>, sizes: Vec<usize>| names.into_iter().zip(sizes).collect();
        Self::with_fields(
            cfg,
            fields(vocab.categorical_names(), vocab.categorical_sizes()),
            fields(vocab.sequence_names(), vocab.sequence_sizes()),
        )
    }

    pub fn with_fields(cfg: &ExperimentConfig, cat_fields: Vec<(String, usize)>, seq_fields: Vec<(String, usize)>) -> Self {
        let ssl = (cfg.model == ModelKind::Miss).then(|| SslSpec {
            m: cfg.m,
            n: cfg.n,
            widths: cfg.active_widths(),
            max_distance: cfg.max_distance(),
            pairs_interest: cfg.pairs_interest(),
            pairs_feature: cfg.pairs_feature(),
            tau: cfg.tau,
            use_mimfe: cfg.use_mimfe,
            enc_i: cfg.enc_i.clone(),
            enc_if: cfg.enc_if.clone(),
        });
        Self {
            cat_fields,
            seq_fields,
            max_len: cfg.max_len,
            dim: cfg.dim,
            lau_hidden: cfg.lau_hidden,
            tower: cfg.mlp.clone(),
            ssl,
        }
    }

    pub fn base_dims(&self) -> BaseDims {
        BaseDims {
            num_cat: self.cat_fields.len(),
            num_fields: self.seq_fields.len(),
            dim: self.dim,
            lau_hidden: self.lau_hidden,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SslParts {
    pub conv: ConvBank,
    pub enc_i: Vec<Linear>,
    pub enc_if: Vec<Linear>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub spec: ModelSpec,
    pub store: ParamStore,
    pub tables: EmbeddingTables,
    pub base: BaseModel,
    pub ssl: Option<SslParts>,
}

/// What a training step optimises.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Objective {
    /// L_ll + α₁·L_ssl + α₂·L′_ssl
    Joint { alpha1: f64, alpha2: f64 },
    /// α₁·L_ssl + α₂·L′_ssl
    SslOnly { alpha1: f64, alpha2: f64 },
    /// L_ll
    CtrOnly,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepStats {
    /// Samples without two valid windows in any branch.
    pub infeasible_interest: usize,
    /// Samples without a feasible field-row pair.
    pub infeasible_feature: usize,
    /// Pair indices dropped because fewer than two samples contributed.
    pub skipped_interest: usize,
    pub skipped_feature: usize,
    /// Cosine similarity of the encoded interest-view pairs.
    pub sim: Option<SimStats>,
}

#[derive(Debug, Clone)]
pub struct ForwardOut {
    pub pred: Option<Var>,
    pub ll: Option<Var>,
    pub ssl_interest: Option<Var>,
    pub ssl_feature: Option<Var>,
    /// `None` when nothing contributes to the objective.
    pub total: Option<Var>,
    pub stats: StepStats,
}

impl Network {
    pub fn init(spec: ModelSpec, seed: u64) -> Result<Self> {
        let mut store = ParamStore::new();
        let tables = init_tables(&mut store, &spec.cat_fields, &spec.seq_fields, spec.dim, seed)?;
        let base = BaseModel::init(&mut store, spec.base_dims(), &spec.tower, seed)?;
        let ssl = match &spec.ssl {
            None => None,
            Some(s) => {
                if s.widths.iter().any(|&w| w == 0 || w > s.m) {
                    return Err(MissError::Config(format!("kernel widths {:?} outside 1..={}", s.widths, s.m)));
                }
                let conv = ConvBank::init(&mut store, s.m, s.n, seed);
                let jk = spec.seq_fields.len() * spec.dim;
                let enc_i = init_mlp(&mut store, "enc_i", jk, &s.enc_i, &mut rng::stream(seed, rng::ENC_INTEREST));
                let enc_if = init_mlp(&mut store, "enc_if", spec.dim, &s.enc_if, &mut rng::stream(seed, rng::ENC_FEATURE));
                Some(SslParts { conv, enc_i, enc_if })
            }
        };
        Ok(Self {
            spec,
            store,
            tables,
            base,
            ssl,
        })
    }

    /// Builds the step graph. `rng` drives view sampling and is only drawn
    /// from when a contrastive term is part of `objective`.
    pub fn forward<R: Rng>(
        &self,
        g: &mut Graph,
        vars: &[Var],
        samples: &[&Sample],
        objective: Objective,
        rng: &mut R,
    ) -> Result<ForwardOut> {
        let e = embed_batch(g, &self.store, vars, &self.tables, samples)?;
        let (pred, ll) = if matches!(objective, Objective::SslOnly { .. }) {
            (None, None)
        } else {
            let pred = self.base.predict(g, vars, &e)?;
            let labels: Vec<f64> = samples.iter().map(|s| f64::from(s.label)).collect();
            (Some(pred), Some(logloss_var(g, pred, &labels)?))
        };
        let mut stats = StepStats::default();
        let (mut ssl_i, mut ssl_f) = (None, None);
        let weights = match objective {
            Objective::Joint { alpha1, alpha2 } | Objective::SslOnly { alpha1, alpha2 } => Some((alpha1, alpha2)),
            Objective::CtrOnly => None,
        };
        if let (Some(parts), Some(spec), Some(_)) = (&self.ssl, &self.spec.ssl, weights) {
            (ssl_i, ssl_f) = self.contrastive(g, vars, parts, spec, &e, rng, &mut stats)?;
        }
        let mut terms = Vec::new();
        terms.extend(ll);
        if let Some((a1, a2)) = weights {
            if let Some(l) = ssl_i {
                terms.push(g.scale(l, a1));
            }
            if let Some(l) = ssl_f {
                terms.push(g.scale(l, a2));
            }
        }
        let mut total = None;
        for t in terms {
            total = Some(match total {
                None => t,
                Some(acc) => g.add(acc, t)?,
            });
        }
        Ok(ForwardOut {
            pred,
            ll,
            ssl_interest: ssl_i,
            ssl_feature: ssl_f,
            total,
            stats,
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn contrastive<R: Rng>(
        &self,
        g: &mut Graph,
        vars: &[Var],
        parts: &SslParts,
        spec: &SslSpec,
        e: &BatchEmbeddings,
        rng: &mut R,
        stats: &mut StepStats,
    ) -> Result<(Option<Var>, Option<Var>)> {
        let (l, k) = (e.max_len, e.dim);
        let j = e.seq.len();
        let c = behavior_tensor(g, e)?;
        let gm = mie_forward(g, vars, &parts.conv, c, &spec.widths)?;
        let widths: Vec<usize> = spec.widths.iter().copied().filter(|&m| gm[m - 1].is_some()).collect();

        let mut interest: Vec<(usize, Vec<InterestPick>)> = Vec::new();
        let mut feature: Vec<(usize, Vec<FeaturePick>)> = Vec::new();
        for (i, &s) in e.seq_lens.iter().enumerate() {
            match aug_interest(l, s, &widths, spec.max_distance, spec.pairs_interest, rng) {
                Ok(p) => interest.push((i, p)),
                Err(_) => stats.infeasible_interest += 1,
            }
            if spec.use_mimfe {
                match aug_feature(l, s, j, &widths, spec.n, spec.pairs_feature, rng) {
                    Ok(p) => feature.push((i, p)),
                    Err(_) => stats.infeasible_feature += 1,
                }
            }
        }

        let mut ssl_i = None;
        if interest.len() >= 2 {
            // G_m pooled into one flat vector; G_m[b, j, t, k] sits at
            // offset[m] + ((b·J + j)·(L−m+1) + t)·K + k.
            let (pool, offsets) = flat_pool(g, widths.iter().map(|&m| (m, gm[m - 1].expect("present"))))?;
            let (idx1, idx2) = interest_indices(&offsets, &interest, spec.pairs_interest, l, j, k);
            let rows = spec.pairs_interest * interest.len();
            let v1 = g.gather(pool, idx1, &[rows, j * k])?;
            let v2 = g.gather(pool, idx2, &[rows, j * k])?;
            let z1 = apply_mlp(g, vars, &parts.enc_i, v1)?;
            let z2 = apply_mlp(g, vars, &parts.enc_i, v2)?;
            let d = g.shape(z1)[1];
            stats.sim = view_similarity_stats(&row_cosines(g.value(z1).data(), g.value(z2).data(), d));
            ssl_i = Some(infonce(g, z1, z2, spec.pairs_interest, interest.len(), spec.tau)?);
        } else {
            stats.skipped_interest += spec.pairs_interest;
        }

        let mut ssl_f = None;
        if spec.use_mimfe {
            if feature.len() >= 2 {
                let fine = mimfe_forward(g, vars, &parts.conv, &gm)?;
                let mut slices = Vec::new();
                for &m in &widths {
                    for n in 1..=spec.n {
                        if let Some(v) = fine[m - 1][n - 1] {
                            slices.push(((m, n), v));
                        }
                    }
                }
                // Ĝ_{m,n}[b, r, t, k] at offset[(m,n)] + ((b·(J−n+1) + r)·(L−m+1) + t)·K + k.
                let (pool, offsets) = flat_pool(g, slices.into_iter())?;
                let (mut idx1, mut idx2) = (Vec::new(), Vec::new());
                for p in 0..spec.pairs_feature {
                    for (bi, picks) in &feature {
                        let pick = picks[p];
                        let (lm, rows) = (l - pick.m + 1, j - pick.n + 1);
                        let base = |r: usize| offsets[&(pick.m, pick.n)] + ((bi * rows + r) * lm + pick.l) * k;
                        idx1.extend((0..k).map(|kk| base(pick.j) + kk));
                        idx2.extend((0..k).map(|kk| base(pick.j2) + kk));
                    }
                }
                let rows = spec.pairs_feature * feature.len();
                let v1 = g.gather(pool, idx1, &[rows, k])?;
                let v2 = g.gather(pool, idx2, &[rows, k])?;
                let z1 = apply_mlp(g, vars, &parts.enc_if, v1)?;
                let z2 = apply_mlp(g, vars, &parts.enc_if, v2)?;
                ssl_f = Some(infonce(g, z1, z2, spec.pairs_feature, feature.len(), spec.tau)?);
            } else {
                stats.skipped_feature += spec.pairs_feature;
            }
        }
        Ok((ssl_i, ssl_f))
    }

    /// Click probabilities for `samples`; no contrastive path is built.
    pub fn predict(&self, samples: &[&Sample]) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let vars = self.store.bind(&mut g, false);
        let e = embed_batch(&mut g, &self.store, &vars, &self.tables, samples)?;
        let p = self.base.predict(&mut g, &vars, &e)?;
        Ok(g.value(p).data().to_vec())
    }

    /// Parameter counts per component, in display order, followed by the total.
    pub fn param_summary(&self) -> Vec<(&'static str, usize)> {
        let mut rows = vec![
            ("embeddings", self.store.count("emb.")),
            ("local activation unit", self.store.count("lau.")),
            ("ctr tower", self.store.count("mlp.")),
        ];
        if self.ssl.is_some() {
            rows.push(("conv bank", self.store.count("conv.")));
            rows.push(("interest encoder", self.store.count("enc_i.")));
            rows.push(("feature encoder", self.store.count("enc_if.")));
        }
        let total = rows.iter().map(|r| r.1).sum();
        rows.push(("total", total));
        rows
    }
}

/// Flat pool indices of both views, group-major: row `p·n + i` holds pair
/// `p` of the i-th contributing sample as J consecutive K-vectors.
fn interest_indices(
    offsets: &HashMap<usize, usize>,
    interest: &[(usize, Vec<InterestPick>)],
    pairs: usize,
    l: usize,
    j: usize,
    k: usize,
) -> (Vec<usize>, Vec<usize>) {
    let (mut idx1, mut idx2) = (Vec::new(), Vec::new());
    for p in 0..pairs {
        for (bi, picks) in interest {
            let pick = picks[p];
            let lm = l - pick.m + 1;
            for jj in 0..j {
                let base = |t: usize| offsets[&pick.m] + ((bi * j + jj) * lm + t) * k;
                idx1.extend((0..k).map(|kk| base(pick.l) + kk));
                idx2.extend((0..k).map(|kk| base(pick.l + pick.h) + kk));
            }
        }
    }
    (idx1, idx2)
}

fn flat_pool<K: std::hash::Hash + Eq>(
    g: &mut Graph,
    parts: impl Iterator<Item = (K, Var)>,
) -> Result<(Var, HashMap<K, usize>)> {
    let mut offsets = HashMap::new();
    let mut flat = Vec::new();
    let mut at = 0;
    for (key, v) in parts {
        offsets.insert(key, at);
        at += g.value(v).numel();
        flat.push(g.flatten(v));
    }
    Ok((g.concat(&flat, 0)?, offsets))
}
