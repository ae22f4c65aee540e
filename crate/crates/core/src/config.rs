//! Experiment configuration: a flat `key = value` text format.
//!
//! Every tunable lives in [`ExperimentConfig`]. Files may omit keys (defaults
//! apply); unknown keys are rejected. Command-line flags use the same keys in
//! kebab-case and take precedence over the file.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::error::{MissError, Result};

/// `(key, description)` for every configuration key, in file order.
pub const KEYS: &[(&str, &str)] = &[
    ("seed", "training seed: parameter init, batch shuffling, view sampling"),
    ("data_seed", "seed for synthetic corpus generation and negative sampling"),
    ("dim", "embedding dimension K"),
    ("batch_size", "training batch size (>= 2)"),
    ("mlp", "CTR tower layer sizes, comma separated, last must be 1"),
    ("lau_hidden", "hidden width of the local activation unit"),
    ("enc_i", "interest-view encoder layer sizes"),
    ("enc_if", "feature-view encoder layer sizes"),
    ("lr", "Adam learning rate"),
    ("alpha1", "weight of the interest-level contrastive loss"),
    ("alpha2", "weight of the feature-level contrastive loss"),
    ("tau", "InfoNCE temperature"),
    ("m", "number of horizontal kernel branches M (widths 1..M)"),
    ("n", "number of vertical kernel branches N (heights 1..N)"),
    ("h", "maximum interest distance H"),
    ("max_len", "behavior sequence cap L"),
    ("p", "interest view pairs per sample, 'auto' = M"),
    ("q", "feature view pairs per sample, 'auto' = M*N"),
    ("epochs", "epoch cap (per phase for pretrain)"),
    ("patience", "early-stopping patience in epochs"),
    ("strategy", "joint | pretrain"),
    ("model", "din (base model only) | miss (base model + contrastive losses)"),
    ("use_mimfe", "enable the feature-level extractor and loss"),
    ("union_kernels", "enable kernel widths > 1"),
    ("long_range", "allow interest distances > 1"),
    ("grid_mode", "restrict values to the fixed search grids"),
    ("dataset", "'synth' or path to a delimiter-separated interaction log"),
    ("schema", "column names of the log: user,item,attr...,timestamp"),
    ("delimiter", "log column delimiter: 'tab', 'comma', or a single character"),
    ("min_count", "minimum interactions per user and item"),
    ("synth_users", "synthetic corpus: number of users"),
    ("synth_items", "synthetic corpus: number of items"),
    ("synth_interests", "synthetic corpus: number of interest clusters"),
    ("synth_min_len", "synthetic corpus: minimum behaviors per user"),
    ("synth_max_len", "synthetic corpus: maximum behaviors per user"),
    ("out_dir", "artifact directory"),
    ("stamp", "tag embedded in report file names ('now' = unix time)"),
    ("axis", "sweep axis: loss_weight | temperature"),
    ("grid", "sweep values, comma separated"),
    ("seeds", "number of seeds per harness cell (seed, seed+1, ...)"),
    ("kind", "robustness study: sparsity | noise"),
    ("rates", "robustness rates, comma separated"),
    ("checkpoint", "parameter checkpoint path for eval"),
];

pub const GRID_LR: &[f64] = &[1e-1, 1e-2, 1e-3, 1e-4];
pub const GRID_ALPHA: &[f64] = &[0.05, 0.1, 0.5, 1.0, 5.0];
pub const GRID_TAU: &[f64] = &[0.05, 0.1, 0.5, 1.0, 5.0];
pub const GRID_M: &[usize] = &[1, 2, 3, 4];
pub const GRID_N: &[usize] = &[1, 2];
pub const GRID_H: &[usize] = &[1, 2, 3, 4];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    Joint,
    Pretrain,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Din,
    Miss,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub data_seed: u64,
    pub dim: usize,
    pub batch_size: usize,
    pub mlp: Vec<usize>,
    pub lau_hidden: usize,
    pub enc_i: Vec<usize>,
    pub enc_if: Vec<usize>,
    pub lr: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub tau: f64,
    pub m: usize,
    pub n: usize,
    pub h: usize,
    pub max_len: usize,
    pub p: Option<usize>,
    pub q: Option<usize>,
    pub epochs: usize,
    pub patience: usize,
    pub strategy: Strategy,
    pub model: ModelKind,
    pub use_mimfe: bool,
    pub union_kernels: bool,
    pub long_range: bool,
    pub grid_mode: bool,
    pub dataset: String,
    pub schema: Vec<String>,
    pub delimiter: char,
    pub min_count: usize,
    pub synth_users: usize,
    pub synth_items: usize,
    pub synth_interests: usize,
    pub synth_min_len: usize,
    pub synth_max_len: usize,
    pub out_dir: String,
    pub stamp: String,
    pub axis: String,
    pub grid: Vec<f64>,
    pub seeds: usize,
    pub kind: String,
    pub rates: Vec<f64>,
    pub checkpoint: String,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            data_seed: 7,
            dim: 10,
            batch_size: 128,
            mlp: vec![40, 40, 40, 1],
            lau_hidden: 16,
            enc_i: vec![20, 20],
            enc_if: vec![10, 10],
            lr: 1e-3,
            alpha1: 0.5,
            alpha2: 0.5,
            tau: 0.1,
            m: 3,
            n: 2,
            h: 3,
            max_len: 30,
            p: None,
            q: None,
            epochs: 10,
            patience: 3,
            strategy: Strategy::Joint,
            model: ModelKind::Miss,
            use_mimfe: true,
            union_kernels: true,
            long_range: true,
            grid_mode: false,
            dataset: "synth".to_string(),
            schema: vec![
                "user".to_string(),
                "item".to_string(),
                "cluster".to_string(),
                "timestamp".to_string(),
            ],
            delimiter: '\t',
            min_count: 5,
            synth_users: 2000,
            synth_items: 500,
            synth_interests: 5,
            synth_min_len: 8,
            synth_max_len: 24,
            out_dir: "out".to_string(),
            stamp: "now".to_string(),
            axis: "loss_weight".to_string(),
            grid: GRID_ALPHA.to_vec(),
            seeds: 1,
            kind: "sparsity".to_string(),
            rates: vec![1.0, 0.9, 0.8],
            checkpoint: String::new(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| MissError::Config(format!("invalid value '{value}' for key '{key}'")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        other => Err(MissError::Config(format!("invalid boolean '{other}' for key '{key}'"))),
    }
}

fn parse_auto(key: &str, value: &str) -> Result<Option<usize>> {
    if value.trim() == "auto" {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

fn delimiter_name(c: char) -> String {
    match c {
        '\t' => "tab".to_string(),
        ',' => "comma".to_string(),
        other => other.to_string(),
    }
}

pub fn is_key(key: &str) -> bool {
    KEYS.iter().any(|(k, _)| *k == key)
}

impl ExperimentConfig {
    /// Reads a config file on top of the defaults.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| MissError::ConfigFile {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::default();
        cfg.apply_text(&text)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                MissError::Config(format!("line {}: expected 'key = value'", lineno + 1))
            })?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "seed" => self.seed = parse(key, value)?,
            "data_seed" => self.data_seed = parse(key, value)?,
            "dim" => self.dim = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "mlp" => self.mlp = parse_list(key, value)?,
            "lau_hidden" => self.lau_hidden = parse(key, value)?,
            "enc_i" => self.enc_i = parse_list(key, value)?,
            "enc_if" => self.enc_if = parse_list(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "alpha1" => self.alpha1 = parse(key, value)?,
            "alpha2" => self.alpha2 = parse(key, value)?,
            "tau" => self.tau = parse(key, value)?,
            "m" => self.m = parse(key, value)?,
            "n" => self.n = parse(key, value)?,
            "h" => self.h = parse(key, value)?,
            "max_len" => self.max_len = parse(key, value)?,
            "p" => self.p = parse_auto(key, value)?,
            "q" => self.q = parse_auto(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "patience" => self.patience = parse(key, value)?,
            "strategy" => {
                self.strategy = match value {
                    "joint" => Strategy::Joint,
                    "pretrain" => Strategy::Pretrain,
                    _ => return Err(MissError::Config(format!("unknown strategy '{value}'"))),
                }
            }
            "model" => {
                self.model = match value {
                    "din" => ModelKind::Din,
                    "miss" => ModelKind::Miss,
                    _ => return Err(MissError::Config(format!("unknown model '{value}'"))),
                }
            }
            "use_mimfe" => self.use_mimfe = parse_bool(key, value)?,
            "union_kernels" => self.union_kernels = parse_bool(key, value)?,
            "long_range" => self.long_range = parse_bool(key, value)?,
            "grid_mode" => self.grid_mode = parse_bool(key, value)?,
            "dataset" => self.dataset = value.to_string(),
            "schema" => self.schema = parse_list(key, value)?,
            "delimiter" => {
                self.delimiter = match value {
                    "tab" | "\\t" => '\t',
                    "comma" => ',',
                    other => {
                        let mut chars = other.chars();
                        match (chars.next(), chars.next()) {
                            (Some(c), None) => c,
                            _ => return Err(MissError::Config(format!("invalid delimiter '{other}'"))),
                        }
                    }
                }
            }
            "min_count" => self.min_count = parse(key, value)?,
            "synth_users" => self.synth_users = parse(key, value)?,
            "synth_items" => self.synth_items = parse(key, value)?,
            "synth_interests" => self.synth_interests = parse(key, value)?,
            "synth_min_len" => self.synth_min_len = parse(key, value)?,
            "synth_max_len" => self.synth_max_len = parse(key, value)?,
            "out_dir" => self.out_dir = value.to_string(),
            "stamp" => self.stamp = value.to_string(),
            "axis" => self.axis = value.to_string(),
            "grid" => self.grid = parse_list(key, value)?,
            "seeds" => self.seeds = parse(key, value)?,
            "kind" => self.kind = value.to_string(),
            "rates" => self.rates = parse_list(key, value)?,
            "checkpoint" => self.checkpoint = value.to_string(),
            _ => return Err(MissError::Config(format!("unknown config key '{key}'"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let v = match key {
            "seed" => self.seed.to_string(),
            "data_seed" => self.data_seed.to_string(),
            "dim" => self.dim.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "mlp" => join(&self.mlp),
            "lau_hidden" => self.lau_hidden.to_string(),
            "enc_i" => join(&self.enc_i),
            "enc_if" => join(&self.enc_if),
            "lr" => self.lr.to_string(),
            "alpha1" => self.alpha1.to_string(),
            "alpha2" => self.alpha2.to_string(),
            "tau" => self.tau.to_string(),
            "m" => self.m.to_string(),
            "n" => self.n.to_string(),
            "h" => self.h.to_string(),
            "max_len" => self.max_len.to_string(),
            "p" => self.p.map_or("auto".to_string(), |v| v.to_string()),
            "q" => self.q.map_or("auto".to_string(), |v| v.to_string()),
            "epochs" => self.epochs.to_string(),
            "patience" => self.patience.to_string(),
            "strategy" => match self.strategy {
                Strategy::Joint => "joint".to_string(),
                Strategy::Pretrain => "pretrain".to_string(),
            },
            "model" => match self.model {
                ModelKind::Din => "din".to_string(),
                ModelKind::Miss => "miss".to_string(),
            },
            "use_mimfe" => self.use_mimfe.to_string(),
            "union_kernels" => self.union_kernels.to_string(),
            "long_range" => self.long_range.to_string(),
            "grid_mode" => self.grid_mode.to_string(),
            "dataset" => self.dataset.clone(),
            "schema" => self.schema.join(","),
            "delimiter" => delimiter_name(self.delimiter),
            "min_count" => self.min_count.to_string(),
            "synth_users" => self.synth_users.to_string(),
            "synth_items" => self.synth_items.to_string(),
            "synth_interests" => self.synth_interests.to_string(),
            "synth_min_len" => self.synth_min_len.to_string(),
            "synth_max_len" => self.synth_max_len.to_string(),
            "out_dir" => self.out_dir.clone(),
            "stamp" => self.stamp.clone(),
            "axis" => self.axis.clone(),
            "grid" => join(&self.grid),
            "seeds" => self.seeds.to_string(),
            "kind" => self.kind.clone(),
            "rates" => join(&self.rates),
            "checkpoint" => self.checkpoint.clone(),
            _ => return None,
        };
        Some(v)
    }

    /// Serialises every key; `apply_text` on the result reproduces `self`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (key, doc) in KEYS {
            let _ = writeln!(out, "# {doc}");
            let _ = writeln!(out, "{key} = {}", self.get(key).expect("known key"));
        }
        out
    }

    /// Interest pairs per sample.
    pub fn pairs_interest(&self) -> usize {
        self.p.unwrap_or(self.active_widths().len())
    }

    /// Feature pairs per sample.
    pub fn pairs_feature(&self) -> usize {
        self.q.unwrap_or(self.active_widths().len() * self.n)
    }

    /// Horizontal kernel widths that take part in view sampling.
    pub fn active_widths(&self) -> Vec<usize> {
        if self.union_kernels {
            (1..=self.m).collect()
        } else {
            vec![1]
        }
    }

    pub fn max_distance(&self) -> usize {
        if self.long_range {
            self.h
        } else {
            1
        }
    }

    pub fn ssl_enabled(&self) -> bool {
        self.model == ModelKind::Miss
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(MissError::Config(msg));
        if self.dim == 0 {
            return fail("dim must be >= 1".into());
        }
        if self.batch_size < 2 {
            return fail(format!("batch_size must be >= 2, got {}", self.batch_size));
        }
        if self.mlp.last() != Some(&1) || self.mlp.contains(&0) {
            return fail(format!("mlp must be positive sizes ending in 1, got {:?}", self.mlp));
        }
        if self.lau_hidden == 0 {
            return fail("lau_hidden must be >= 1".into());
        }
        if self.enc_i.is_empty() || self.enc_if.is_empty() || self.enc_i.contains(&0) || self.enc_if.contains(&0) {
            return fail("encoder sizes must be non-empty and positive".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return fail(format!("lr must be positive, got {}", self.lr));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return fail(format!("tau must be positive, got {}", self.tau));
        }
        if !(self.alpha1 >= 0.0 && self.alpha2 >= 0.0) {
            return fail("alpha1 and alpha2 must be >= 0".into());
        }
        if self.m == 0 || self.n == 0 || self.h == 0 {
            return fail("m, n and h must be >= 1".into());
        }
        if self.max_len == 0 {
            return fail("max_len must be >= 1".into());
        }
        if self.p == Some(0) || self.q == Some(0) {
            return fail("p and q must be >= 1".into());
        }
        if self.epochs == 0 || self.patience == 0 {
            return fail("epochs and patience must be >= 1".into());
        }
        if self.min_count == 0 {
            return fail("min_count must be >= 1".into());
        }
        if self.seeds == 0 {
            return fail("seeds must be >= 1".into());
        }
        if self.schema.len() < 3 {
            return fail("schema needs at least user,item,timestamp".into());
        }
        if self.grid_mode {
            self.validate_grid()?;
        }
        Ok(())
    }

    fn validate_grid(&self) -> Result<()> {
        let check_f = |name: &str, v: f64, grid: &[f64]| {
            if grid.contains(&v) {
                Ok(())
            } else {
                Err(MissError::Config(format!("{name}={v} not in grid {grid:?}")))
            }
        };
        let check_u = |name: &str, v: usize, grid: &[usize]| {
            if grid.contains(&v) {
                Ok(())
            } else {
                Err(MissError::Config(format!("{name}={v} not in grid {grid:?}")))
            }
        };
        check_f("lr", self.lr, GRID_LR)?;
        check_f("alpha1", self.alpha1, GRID_ALPHA)?;
        check_f("alpha2", self.alpha2, GRID_ALPHA)?;
        check_f("tau", self.tau, GRID_TAU)?;
        check_u("m", self.m, GRID_M)?;
        check_u("n", self.n, GRID_N)?;
        check_u("h", self.h, GRID_H)?;
        if self.alpha1 != self.alpha2 {
            return Err(MissError::Config("grid mode requires alpha1 == alpha2".into()));
        }
        if self.dim != 10 || self.batch_size != 128 {
            return Err(MissError::Config("grid mode fixes dim = 10 and batch_size = 128".into()));
        }
        if self.mlp != [40, 40, 40, 1] || self.enc_i != [20, 20] || self.enc_if != [10, 10] {
            return Err(MissError::Config(
                "grid mode fixes mlp = 40,40,40,1, enc_i = 20,20, enc_if = 10,10".into(),
            ));
        }
        Ok(())
    }
}
