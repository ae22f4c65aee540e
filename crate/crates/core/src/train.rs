//! Training loops: joint multi-task and SSL pre-training followed by CTR
//! fine-tuning, both with Adam and validation-AUC early stopping.

use miss_autodiff::Graph;
use rand::RngCore;
use rayon::prelude::*;

use crate::config::{ExperimentConfig, Strategy};
use crate::data::{make_batches, DatasetSplit, Sample};
use crate::error::{MissError, Result};
use crate::metrics::{evaluate_scores, EvalReport};
use crate::network::{Network, Objective};
use crate::optim::Adam;
use crate::params::ParamStore;
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub phase: Phase,
    /// Mean training terms over the epoch's steps; `None` when the term never
    /// appeared.
    pub ll: Option<f64>,
    pub ssl_interest: Option<f64>,
    pub ssl_feature: Option<f64>,
    pub valid: EvalReport,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Joint,
    Pretrain,
    Finetune,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Joint => "joint",
            Phase::Pretrain => "pretrain",
            Phase::Finetune => "finetune",
        }
    }
}

/// Per optimizer step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub total: f64,
    pub ll: Option<f64>,
    pub ssl_interest: Option<f64>,
    pub ssl_feature: Option<f64>,
    pub sim_mean: Option<f64>,
    pub infeasible_interest: usize,
    pub infeasible_feature: usize,
    pub skipped_pairs: usize,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    /// Parameters of the best validation epoch.
    pub network: Network,
    pub history: Vec<EpochRecord>,
    pub steps: Vec<StepRecord>,
    pub best_epoch: usize,
    pub best_valid_auc: f64,
}

/// Scores `samples` in order, batch by batch.
pub fn predict(net: &Network, samples: &[Sample], batch_size: usize) -> Result<Vec<f64>> {
    let batches = make_batches(samples.len(), batch_size, None)?;
    let scores: Vec<Vec<f64>> = batches
        .par_iter()
        .map(|b| {
            let refs: Vec<&Sample> = b.iter().map(|&i| &samples[i]).collect();
            net.predict(&refs)
        })
        .collect::<Result<_>>()?;
    Ok(scores.concat())
}

pub fn evaluate(net: &Network, samples: &[Sample], batch_size: usize) -> Result<EvalReport> {
    let scores = predict(net, samples, batch_size)?;
    let labels: Vec<u8> = samples.iter().map(|s| s.label).collect();
    evaluate_scores(&scores, &labels)
}

pub fn train(cfg: &ExperimentConfig, split: &DatasetSplit, net: Network) -> Result<TrainOutput> {
    match (cfg.strategy, net.ssl.is_some()) {
        (Strategy::Pretrain, true) => train_pretrain(cfg, split, net),
        (Strategy::Pretrain, false) => {
            log::warn!("pretrain strategy without contrastive losses; training the CTR loss only");
            train_joint(cfg, split, net)
        }
        (Strategy::Joint, _) => train_joint(cfg, split, net),
    }
}

pub fn train_joint(cfg: &ExperimentConfig, split: &DatasetSplit, net: Network) -> Result<TrainOutput> {
    let objective = Objective::Joint {
        alpha1: cfg.alpha1,
        alpha2: cfg.alpha2,
    };
    let mut run = Run::new(cfg, split, net)?;
    run.phase(objective, Phase::Joint, true)?;
    Ok(run.finish())
}

/// Phase 1 optimises the weighted contrastive losses for `epochs` epochs;
/// phase 2 restarts Adam and optimises the CTR loss with early stopping.
pub fn train_pretrain(cfg: &ExperimentConfig, split: &DatasetSplit, net: Network) -> Result<TrainOutput> {
    if net.ssl.is_none() {
        return Err(MissError::Config("pretrain strategy needs the contrastive model".into()));
    }
    let mut run = Run::new(cfg, split, net)?;
    run.phase(
        Objective::SslOnly {
            alpha1: cfg.alpha1,
            alpha2: cfg.alpha2,
        },
        Phase::Pretrain,
        false,
    )?;
    let restored = ParamStore::from_bytes(&run.net.store.to_bytes())?;
    debug_assert_eq!(restored, run.net.store);
    run.net.store = restored;
    run.best = None;
    run.phase(Objective::CtrOnly, Phase::Finetune, true)?;
    Ok(run.finish())
}

struct Run<'a> {
    cfg: &'a ExperimentConfig,
    split: &'a DatasetSplit,
    net: Network,
    shuffle: rand_chacha::ChaCha8Rng,
    views: rand_chacha::ChaCha8Rng,
    history: Vec<EpochRecord>,
    steps: Vec<StepRecord>,
    best: Option<(usize, f64, ParamStore)>,
}

#[derive(Default)]
struct Mean {
    sum: f64,
    n: usize,
}

impl Mean {
    fn add(&mut self, v: Option<f64>) {
        if let Some(v) = v {
            self.sum += v;
            self.n += 1;
        }
    }

    fn get(&self) -> Option<f64> {
        (self.n > 0).then(|| self.sum / self.n as f64)
    }
}

impl<'a> Run<'a> {
    fn new(cfg: &'a ExperimentConfig, split: &'a DatasetSplit, net: Network) -> Result<Self> {
        cfg.validate()?;
        if split.train.len() < cfg.batch_size {
            return Err(MissError::DegenerateDataset(format!(
                "{} training samples cannot fill one batch of {}",
                split.train.len(),
                cfg.batch_size
            )));
        }
        if split.valid.is_empty() {
            return Err(MissError::DegenerateDataset("empty validation split".into()));
        }
        Ok(Self {
            cfg,
            split,
            net,
            shuffle: rng::stream(cfg.seed, rng::SHUFFLE),
            views: rng::stream(cfg.seed, rng::VIEWS),
            history: Vec::new(),
            steps: Vec::new(),
            best: None,
        })
    }

    fn phase(&mut self, objective: Objective, phase: Phase, early_stop: bool) -> Result<()> {
        let mut adam = Adam::new(&self.net.store, self.cfg.lr);
        let mut stale = 0;
        for _ in 0..self.cfg.epochs {
            let order = make_batches(self.split.train.len(), self.cfg.batch_size, Some(self.shuffle.next_u64()))?;
            let (mut ll, mut si, mut sf) = (Mean::default(), Mean::default(), Mean::default());
            for batch in order {
                let samples: Vec<&Sample> = batch.iter().map(|&i| &self.split.train[i]).collect();
                if let Some(rec) = self.step(&samples, objective, &mut adam)? {
                    ll.add(rec.ll);
                    si.add(rec.ssl_interest);
                    sf.add(rec.ssl_feature);
                    self.steps.push(rec);
                }
            }
            let valid = evaluate(&self.net, &self.split.valid, self.cfg.batch_size)?;
            let epoch = self.history.len() + 1;
            log::info!(
                "epoch {epoch} [{}] ll {:?} ssl {:?}/{:?} valid auc {:.4}",
                phase.name(),
                ll.get(),
                si.get(),
                sf.get(),
                valid.auc
            );
            self.history.push(EpochRecord {
                epoch,
                phase,
                ll: ll.get(),
                ssl_interest: si.get(),
                ssl_feature: sf.get(),
                valid,
            });
            if !early_stop {
                continue;
            }
            if self.best.as_ref().is_none_or(|b| valid.auc > b.1) {
                self.best = Some((epoch, valid.auc, self.net.store.clone()));
                stale = 0;
            } else {
                stale += 1;
                if stale >= self.cfg.patience {
                    break;
                }
            }
        }
        Ok(())
    }

    fn step(&mut self, samples: &[&Sample], objective: Objective, adam: &mut Adam) -> Result<Option<StepRecord>> {
        let step = self.steps.len() + 1;
        let mut g = Graph::new();
        let vars = self.net.store.bind(&mut g, true);
        let out = self.net.forward(&mut g, &vars, samples, objective, &mut self.views)?;
        let Some(total) = out.total else {
            return Ok(None);
        };
        let value = |v: Option<miss_autodiff::Var>| v.map(|v| g.value(v).item());
        let rec = StepRecord {
            step,
            total: g.value(total).item(),
            ll: value(out.ll),
            ssl_interest: value(out.ssl_interest),
            ssl_feature: value(out.ssl_feature),
            sim_mean: out.stats.sim.map(|s| s.mean),
            infeasible_interest: out.stats.infeasible_interest,
            infeasible_feature: out.stats.infeasible_feature,
            skipped_pairs: out.stats.skipped_interest + out.stats.skipped_feature,
        };
        for (term, v) in [
            ("logloss", rec.ll),
            ("interest contrastive", rec.ssl_interest),
            ("feature contrastive", rec.ssl_feature),
            ("total", Some(rec.total)),
        ] {
            if v.is_some_and(|v| !v.is_finite()) {
                return Err(MissError::NonFinite { term, step });
            }
        }
        let grads = g.backward(total)?;
        let grads = self.net.store.collect_grads(&grads, &vars);
        adam.step(&mut self.net.store, &grads);
        Ok(Some(rec))
    }

    fn finish(mut self) -> TrainOutput {
        let (best_epoch, best_valid_auc) = match self.best.take() {
            Some((e, auc, store)) => {
                self.net.store = store;
                (e, auc)
            }
            None => (self.history.len(), self.history.last().map_or(f64::NAN, |h| h.valid.auc)),
        };
        TrainOutput {
            network: self.net,
            history: self.history,
            steps: self.steps,
            best_epoch,
            best_valid_auc,
        }
    }
}
