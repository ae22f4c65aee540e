//! Experiment protocols: data preparation, single runs, hyperparameter sweeps
//! and the label-sparsity / label-noise robustness study.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::config::{ExperimentConfig, ModelKind};
use crate::data::{
    build_splits, downsample_train, filter_infrequent, flip_labels, ingest, synth_generate, DatasetSplit, InteractionLog,
    Schema, SplitStats, SynthSpec, Vocabulary,
};
use crate::error::{MissError, Result};
use crate::metrics::{mean_std, EvalReport};
use crate::network::{ModelSpec, Network};
use crate::train::{evaluate, train, TrainOutput};

#[derive(Debug, Clone)]
pub struct Prepared {
    pub split: DatasetSplit,
    pub vocab: Vocabulary,
    pub stats: SplitStats,
    pub records: usize,
}

pub fn synth_spec(cfg: &ExperimentConfig) -> SynthSpec {
    SynthSpec {
        users: cfg.synth_users,
        items: cfg.synth_items,
        interests: cfg.synth_interests,
        min_len: cfg.synth_min_len,
        max_len: cfg.synth_max_len,
    }
}

/// The raw log named by `cfg.dataset`: the synthetic corpus for `synth`,
/// otherwise a delimiter-separated file read with `cfg.schema`.
pub fn load_log(cfg: &ExperimentConfig) -> Result<InteractionLog> {
    if cfg.dataset == "synth" {
        synth_generate(synth_spec(cfg), cfg.data_seed)
    } else {
        let schema = Schema::new(cfg.schema.clone(), cfg.delimiter)?;
        Ok(ingest(Path::new(&cfg.dataset), &schema)?.0)
    }
}

/// Load, filter and split.
pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    let log = filter_infrequent(&load_log(cfg)?, cfg.min_count)?;
    let (split, vocab, stats) = build_splits(&log, cfg.max_len, cfg.data_seed)?;
    Ok(Prepared {
        split,
        vocab,
        stats,
        records: log.len(),
    })
}

/// Short dataset tag for file names.
pub fn dataset_tag(cfg: &ExperimentConfig) -> String {
    if cfg.dataset == "synth" {
        return "synth".to_string();
    }
    Path::new(&cfg.dataset)
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "data".to_string())
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub train: TrainOutput,
    pub test: EvalReport,
}

/// Initialise, train and evaluate one model on the test split.
pub fn run_once(cfg: &ExperimentConfig, split: &DatasetSplit, vocab: &Vocabulary) -> Result<RunResult> {
    let net = Network::init(ModelSpec::from_config(cfg, vocab), cfg.seed)?;
    let out = train(cfg, split, net)?;
    let test = evaluate(&out.network, &split.test, cfg.batch_size)?;
    Ok(RunResult { train: out, test })
}

pub fn seed_list(cfg: &ExperimentConfig) -> Vec<u64> {
    (0..cfg.seeds as u64).map(|i| cfg.seed + i).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    LossWeight,
    Temperature,
}

impl SweepAxis {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "loss_weight" => Ok(Self::LossWeight),
            "temperature" => Ok(Self::Temperature),
            other => Err(MissError::Config(format!("unknown sweep axis '{other}'"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::LossWeight => "loss_weight",
            Self::Temperature => "temperature",
        }
    }

    fn apply(self, cfg: &mut ExperimentConfig, v: f64) {
        match self {
            Self::LossWeight => {
                cfg.alpha1 = v;
                cfg.alpha2 = v;
            }
            Self::Temperature => cfg.tau = v,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub value: f64,
    pub auc: Vec<f64>,
    pub logloss: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub axis: SweepAxis,
    pub seeds: Vec<u64>,
    pub rows: Vec<SweepRow>,
}

/// One model per (grid value, seed), evaluated on test. Rows are sorted by value.
pub fn sweep(
    axis: SweepAxis,
    grid: &[f64],
    cfg: &ExperimentConfig,
    split: &DatasetSplit,
    vocab: &Vocabulary,
) -> Result<SweepReport> {
    if grid.is_empty() {
        return Err(MissError::Config("sweep grid is empty".into()));
    }
    let mut values = grid.to_vec();
    values.sort_by(f64::total_cmp);
    values.dedup();
    let seeds = seed_list(cfg);
    let cells: Vec<(f64, u64)> = values.iter().flat_map(|&v| seeds.iter().map(move |&s| (v, s))).collect();
    let results: Vec<EvalReport> = cells
        .par_iter()
        .map(|&(v, seed)| {
            let mut c = cfg.clone();
            axis.apply(&mut c, v);
            c.seed = seed;
            run_once(&c, split, vocab)
                .map(|r| r.test)
                .map_err(|e| e.context(format!("{} = {v}, seed {seed}", axis.name())))
        })
        .collect::<Result<_>>()?;
    let rows = values
        .iter()
        .enumerate()
        .map(|(i, &value)| {
            let cell = &results[i * seeds.len()..(i + 1) * seeds.len()];
            SweepRow {
                value,
                auc: cell.iter().map(|r| r.auc).collect(),
                logloss: cell.iter().map(|r| r.logloss).collect(),
            }
        })
        .collect();
    Ok(SweepReport { axis, seeds, rows })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StudyKind {
    Sparsity,
    Noise,
}

impl StudyKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "sparsity" => Ok(Self::Sparsity),
            "noise" => Ok(Self::Noise),
            other => Err(MissError::Config(format!("unknown robustness kind '{other}'"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Sparsity => "sparsity",
            Self::Noise => "noise",
        }
    }

    fn perturb(self, split: &DatasetSplit, rate: f64, seed: u64) -> Result<DatasetSplit> {
        match self {
            Self::Sparsity => downsample_train(split, rate, seed),
            Self::Noise => flip_labels(split, rate, seed),
        }
    }

    fn check(self, rate: f64) -> Result<()> {
        let ok = match self {
            Self::Sparsity => rate > 0.0 && rate <= 1.0,
            Self::Noise => (0.0..1.0).contains(&rate),
        };
        if ok {
            Ok(())
        } else {
            Err(MissError::Config(format!("{} rate {rate} out of range", self.name())))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobustnessRow {
    pub rate: f64,
    pub auc_base: Vec<f64>,
    pub auc_miss: Vec<f64>,
}

impl RobustnessRow {
    pub fn mean_base(&self) -> f64 {
        mean_std(&self.auc_base).0
    }

    pub fn mean_miss(&self) -> f64 {
        mean_std(&self.auc_miss).0
    }

    /// Relative improvement of the contrastive model over the base model.
    pub fn ri(&self) -> f64 {
        relative_improvement(self.mean_miss(), self.mean_base())
    }
}

pub fn relative_improvement(miss: f64, base: f64) -> f64 {
    (miss - base) / base
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobustnessReport {
    pub kind: StudyKind,
    pub seeds: Vec<u64>,
    pub rows: Vec<RobustnessRow>,
}

/// Per rate and seed: perturb the training split (seeded by the run seed),
/// then train and test the base model (`cfg` with model = din) and the
/// contrastive model (`cfg` with model = miss).
pub fn robustness_study(
    kind: StudyKind,
    rates: &[f64],
    cfg: &ExperimentConfig,
    split: &DatasetSplit,
    vocab: &Vocabulary,
) -> Result<RobustnessReport> {
    if rates.is_empty() {
        return Err(MissError::Config("no robustness rates given".into()));
    }
    for &r in rates {
        kind.check(r)?;
    }
    let seeds = seed_list(cfg);
    let cells: Vec<(usize, u64, ModelKind)> = (0..rates.len())
        .flat_map(|r| {
            seeds
                .iter()
                .flat_map(move |&s| [ModelKind::Din, ModelKind::Miss].map(|m| (r, s, m)))
        })
        .collect();
    let aucs: Vec<f64> = cells
        .par_iter()
        .map(|&(r, seed, model)| {
            let rate = rates[r];
            let perturbed = kind.perturb(split, rate, seed)?;
            let mut c = cfg.clone();
            c.seed = seed;
            c.model = model;
            run_once(&c, &perturbed, vocab)
                .map(|res| res.test.auc)
                .map_err(|e| e.context(format!("{} rate {rate}, seed {seed}", kind.name())))
        })
        .collect::<Result<_>>()?;
    let per_rate = seeds.len() * 2;
    let rows = rates
        .iter()
        .enumerate()
        .map(|(r, &rate)| {
            let cell = &aucs[r * per_rate..(r + 1) * per_rate];
            RobustnessRow {
                rate,
                auc_base: cell.iter().step_by(2).copied().collect(),
                auc_miss: cell.iter().skip(1).step_by(2).copied().collect(),
            }
        })
        .collect();
    Ok(RobustnessReport { kind, seeds, rows })
}

/// Resolves the `stamp` key: `now` becomes the current unix time.
pub fn resolve_stamp(stamp: &str) -> String {
    if stamp == "now" {
        std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map_or(0, |d| d.as_secs())
            .to_string()
    } else {
        stamp.to_string()
    }
}

/// `<out_dir>/<verb>_<axis>_<dataset>_<stamp>.tsv`
pub fn report_path(out_dir: &Path, verb: &str, axis: &str, dataset: &str, stamp: &str) -> PathBuf {
    out_dir.join(format!("{verb}_{axis}_{dataset}_{stamp}.tsv"))
}

fn fmt_list(xs: &[f64]) -> String {
    xs.iter().map(|x| format!("{x:.6}")).collect::<Vec<_>>().join(",")
}

pub fn sweep_table(r: &SweepReport) -> String {
    let mut out = format!("{}\tauc_mean\tauc_std\tlogloss_mean\tlogloss_std\tauc_per_seed\n", r.axis.name());
    for row in &r.rows {
        let (am, asd) = mean_std(&row.auc);
        let (lm, lsd) = mean_std(&row.logloss);
        let _ = writeln!(
            out,
            "{}\t{am:.6}\t{asd:.6}\t{lm:.6}\t{lsd:.6}\t{}",
            row.value,
            fmt_list(&row.auc)
        );
    }
    out
}

pub fn robustness_table(r: &RobustnessReport) -> String {
    let mut out = String::from("rate\tauc_base\tauc_miss\tri\tauc_base_per_seed\tauc_miss_per_seed\n");
    for row in &r.rows {
        let _ = writeln!(
            out,
            "{}\t{:.6}\t{:.6}\t{:.6}\t{}\t{}",
            row.rate,
            row.mean_base(),
            row.mean_miss(),
            row.ri(),
            fmt_list(&row.auc_base),
            fmt_list(&row.auc_miss)
        );
    }
    out
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x:.6}"))
}

/// Per-epoch history: epoch, phase, L_ll, L_ssl, L′_ssl, valid AUC, valid logloss.
pub fn history_table(t: &TrainOutput) -> String {
    let mut out = String::from("epoch\tphase\tll\tssl_interest\tssl_feature\tvalid_auc\tvalid_logloss\n");
    for h in &t.history {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{:.6}\t{:.6}",
            h.epoch,
            h.phase.name(),
            opt(h.ll),
            opt(h.ssl_interest),
            opt(h.ssl_feature),
            h.valid.auc,
            h.valid.logloss
        );
    }
    out
}

/// Per-step contrastive telemetry.
pub fn telemetry_table(t: &TrainOutput) -> String {
    let mut out = String::from(
        "step\ttotal\tll\tssl_interest\tssl_feature\tmean_similarity\tinfeasible_interest\tinfeasible_feature\tskipped_pairs\n",
    );
    for s in &t.steps {
        let _ = writeln!(
            out,
            "{}\t{:.6}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            s.step,
            s.total,
            opt(s.ll),
            opt(s.ssl_interest),
            opt(s.ssl_feature),
            opt(s.sim_mean),
            s.infeasible_interest,
            s.infeasible_feature,
            s.skipped_pairs
        );
    }
    out
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| MissError::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| MissError::io(path, e))
}
