use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use miss_core::data::{save_snapshot, synth_generate};
use miss_core::gradcheck::tiny_gradcheck;
use miss_core::harness::{
    dataset_tag, history_table, prepare, report_path, resolve_stamp, robustness_study, robustness_table, run_once, sweep,
    sweep_table, synth_spec, telemetry_table, write_text, StudyKind, SweepAxis,
};
use miss_core::metrics::EvalReport;
use miss_core::params::ParamStore;
use miss_core::train::evaluate;
use miss_core::{ExperimentConfig, MissError, ModelSpec, Network, Result};

struct Outputs {
    dir: PathBuf,
    verb: &'static str,
    dataset: String,
    stamp: String,
}

impl Outputs {
    fn new(verb: &'static str, cfg: &mut ExperimentConfig) -> Result<Self> {
        cfg.stamp = resolve_stamp(&cfg.stamp);
        let out = Self {
            dir: PathBuf::from(&cfg.out_dir),
            verb,
            dataset: dataset_tag(cfg),
            stamp: cfg.stamp.clone(),
        };
        // the resolved configuration travels with every run's artifacts
        write_text(&out.path("config", "cfg"), &cfg.to_text())?;
        Ok(out)
    }

    fn path(&self, what: &str, ext: &str) -> PathBuf {
        let mut p = report_path(&self.dir, self.verb, what, &self.dataset, &self.stamp);
        p.set_extension(ext);
        p
    }

    fn write(&self, what: &str, ext: &str, text: &str) -> Result<PathBuf> {
        let p = self.path(what, ext);
        write_text(&p, text)?;
        Ok(p)
    }
}

pub fn run(verb: &str, mut cfg: ExperimentConfig) -> Result<()> {
    match verb {
        "synth" => synth(&mut cfg),
        "ingest" => ingest(&mut cfg),
        "train" => train(&mut cfg),
        "eval" => eval(&mut cfg),
        "sweep" => run_sweep(&mut cfg),
        "robustness" => robustness(&mut cfg),
        "gradcheck" => gradcheck(&mut cfg),
        other => Err(MissError::Config(format!("unknown verb '{other}'"))),
    }
}

fn synth(cfg: &mut ExperimentConfig) -> Result<()> {
    let out = Outputs::new("synth", cfg)?;
    let log = synth_generate(synth_spec(cfg), cfg.data_seed)?;
    let path = out.path("corpus", "tsv");
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| MissError::io(dir, e))?;
    }
    log.write(&path, cfg.delimiter)?;
    println!("{} interactions from {} users", log.len(), log.num_users());
    println!("corpus: {}", path.display());
    Ok(())
}

fn ingest(cfg: &mut ExperimentConfig) -> Result<()> {
    let out = Outputs::new("ingest", cfg)?;
    let data = prepare(cfg)?;
    let path = out.path("splits", "txt");
    save_snapshot(&path, &data.split, &data.vocab)?;
    println!("{} interactions after filtering (min_count {})", data.records, cfg.min_count);
    println!(
        "{} users kept, {} excluded with fewer than 4 behaviors",
        data.stats.users, data.stats.excluded_users
    );
    println!(
        "samples: train {}, valid {}, test {}",
        data.split.train.len(),
        data.split.valid.len(),
        data.split.test.len()
    );
    for (name, size) in data.vocab.sequence_names().iter().zip(data.vocab.sequence_sizes()) {
        println!("vocabulary {name}: {size}");
    }
    println!("snapshot: {}", path.display());
    Ok(())
}

pub fn model_summary(net: &Network) -> String {
    let mut s = String::from("parameters\n");
    for (name, count) in net.param_summary() {
        let _ = write!(s, "  {name:<22} {count:>9}");
        if let (true, Some(ssl)) = (name == "conv bank", &net.spec.ssl) {
            let (m, n) = (ssl.m, ssl.n);
            let _ = write!(s, "  (horizontal {} + vertical {})", m * (m + 1) / 2, m * n * (n + 1) / 2);
        }
        s.push('\n');
    }
    s
}

fn metrics_table(rows: &[(&str, EvalReport)]) -> String {
    let mut s = String::from("split\tauc\tlogloss\tn_pos\tn_neg\n");
    for (name, r) in rows {
        let _ = writeln!(s, "{name}\t{:.6}\t{:.6}\t{}\t{}", r.auc, r.logloss, r.n_pos, r.n_neg);
    }
    s
}

fn train(cfg: &mut ExperimentConfig) -> Result<()> {
    let out = Outputs::new("train", cfg)?;
    let data = prepare(cfg)?;
    let preview = Network::init(ModelSpec::from_config(cfg, &data.vocab), cfg.seed)?;
    print!("{}", model_summary(&preview));
    let res = run_once(cfg, &data.split, &data.vocab)?;
    let t = &res.train;
    out.write("history", "tsv", &history_table(t))?;
    out.write("telemetry", "tsv", &telemetry_table(t))?;
    let ckpt = out.path("params", "ckpt");
    t.network.store.save(&ckpt)?;
    let valid = evaluate(&t.network, &data.split.valid, cfg.batch_size)?;
    out.write("metrics", "tsv", &metrics_table(&[("valid", valid), ("test", res.test)]))?;
    println!("epochs run: {}, best epoch {}", t.history.len(), t.best_epoch);
    println!("valid auc {:.4} logloss {:.4}", valid.auc, valid.logloss);
    println!("test  auc {:.4} logloss {:.4}", res.test.auc, res.test.logloss);
    println!("checkpoint: {}", ckpt.display());
    Ok(())
}

fn eval(cfg: &mut ExperimentConfig) -> Result<()> {
    if cfg.checkpoint.is_empty() {
        return Err(MissError::Config("eval needs --checkpoint".into()));
    }
    let out = Outputs::new("eval", cfg)?;
    let data = prepare(cfg)?;
    let mut net = Network::init(ModelSpec::from_config(cfg, &data.vocab), cfg.seed)?;
    let loaded = ParamStore::load(Path::new(&cfg.checkpoint))?;
    let layout = |s: &ParamStore| s.iter().map(|p| (p.name.clone(), p.value.shape().to_vec())).collect::<Vec<_>>();
    if layout(&loaded) != layout(&net.store) {
        return Err(MissError::Config(format!(
            "checkpoint {} does not match the configured model",
            cfg.checkpoint
        )));
    }
    net.store = loaded;
    let valid = evaluate(&net, &data.split.valid, cfg.batch_size)?;
    let test = evaluate(&net, &data.split.test, cfg.batch_size)?;
    out.write("metrics", "tsv", &metrics_table(&[("valid", valid), ("test", test)]))?;
    println!("valid auc {:.4} logloss {:.4}", valid.auc, valid.logloss);
    println!("test  auc {:.4} logloss {:.4}", test.auc, test.logloss);
    Ok(())
}

fn run_sweep(cfg: &mut ExperimentConfig) -> Result<()> {
    let axis = SweepAxis::parse(&cfg.axis)?;
    let out = Outputs::new("sweep", cfg)?;
    let data = prepare(cfg)?;
    let report = sweep(axis, &cfg.grid, cfg, &data.split, &data.vocab)?;
    let table = sweep_table(&report);
    let path = out.write(axis.name(), "tsv", &table)?;
    print!("{table}");
    println!("report: {}", path.display());
    Ok(())
}

fn robustness(cfg: &mut ExperimentConfig) -> Result<()> {
    let kind = StudyKind::parse(&cfg.kind)?;
    let out = Outputs::new("robustness", cfg)?;
    let data = prepare(cfg)?;
    let report = robustness_study(kind, &cfg.rates, cfg, &data.split, &data.vocab)?;
    let table = robustness_table(&report);
    let path = out.write(kind.name(), "tsv", &table)?;
    print!("{table}");
    println!("report: {}", path.display());
    Ok(())
}

fn gradcheck(cfg: &mut ExperimentConfig) -> Result<()> {
    let out = Outputs::new("gradcheck", cfg)?;
    let r = tiny_gradcheck(cfg.seed)?;
    let text = format!(
        "components\trel_ok\tabs_ok\tfailures\tkinks\tmax_rel_error\tmax_abs_error\n{}\t{}\t{}\t{}\t{}\t{:e}\t{:e}\n",
        r.components,
        r.rel_ok,
        r.abs_ok,
        r.failures.len(),
        r.kinks(),
        r.max_rel_error,
        r.max_abs_error
    );
    out.write("report", "tsv", &text)?;
    println!(
        "checked {} gradient components: {} within relative 1e-4, {} within absolute 1e-6, {} failed",
        r.components,
        r.rel_ok,
        r.abs_ok,
        r.failures.len()
    );
    println!("max relative error: {:e}", r.max_rel_error);
    if r.passed() {
        Ok(())
    } else {
        let worst = &r.failures[0];
        Err(MissError::GradCheck(format!(
            "{} components disagree ({} at non-differentiable points); first: parameter {} index {} analytic {} numeric {}",
            r.failures.len(),
            r.kinks(),
            worst.input,
            worst.index,
            worst.analytic,
            worst.numeric
        )))
    }
}
