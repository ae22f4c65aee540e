//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any failed.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use miss_autodiff::{Graph, Tensor};
use miss_core::data::DatasetSplit;
use miss_core::data::Vocabulary;
use miss_core::gradcheck::tiny_gradcheck;
use miss_core::harness::{prepare, robustness_study, run_once, RunResult, StudyKind};
use miss_core::metrics::auc;
use miss_core::params::ParamStore;
use miss_core::ssl::{infonce, mie_forward, mimfe_forward, ConvBank};
use miss_core::{ExperimentConfig, ModelKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

#[cfg(all(target_os = "linux", target_env = "gnu"))]
fn tune_allocator() {
    // SAFETY: mallopt only adjusts glibc allocator thresholds.
    unsafe {
        libc::mallopt(libc::M_MMAP_THRESHOLD, 1 << 30);
        libc::mallopt(libc::M_TRIM_THRESHOLD, 1 << 30);
    }
}

#[cfg(not(all(target_os = "linux", target_env = "gnu")))]
fn tune_allocator() {}

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let r = tiny_gradcheck(1).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    ensure!(r.passed(), "{} of {} components failed", r.failures.len(), r.components);
    ensure!(secs < 60.0, "took {secs:.1} s");
    Ok(format!("{} components, max rel {:.2e}, {secs:.1} s", r.components, r.max_rel_error))
}

/// `relu(Σ_i x[.., p+i, ..]·w[i])` along `axis`, accumulated left to right.
fn naive_conv(x: &[f64], shape: [usize; 4], w: &[f64], axis: usize) -> (Vec<f64>, [usize; 4]) {
    let mut os = shape;
    os[axis] = shape[axis] - w.len() + 1;
    let at = |i: [usize; 4]| x[((i[0] * shape[1] + i[1]) * shape[2] + i[2]) * shape[3] + i[3]];
    let mut out = Vec::new();
    for b in 0..os[0] {
        for j in 0..os[1] {
            for l in 0..os[2] {
                for k in 0..os[3] {
                    let mut acc = 0.0;
                    for (t, &wt) in w.iter().enumerate() {
                        let mut idx = [b, j, l, k];
                        idx[axis] += t;
                        acc = if t == 0 { at(idx) * wt } else { acc + at(idx) * wt };
                    }
                    out.push(if acc > 0.0 { acc } else { 0.0 });
                }
            }
        }
    }
    (out, os)
}

struct FuzzCase {
    shape: [usize; 4],
    m: usize,
    n: usize,
    store: ParamStore,
    bank: ConvBank,
    c: Vec<f64>,
}

fn fuzz_grid() -> Vec<FuzzCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    (0..100)
        .map(|i| {
            let (m, n) = (rng.gen_range(1..=4), rng.gen_range(1..=2));
            let shape = [rng.gen_range(1..=3), rng.gen_range(n..=4), rng.gen_range(m..=12), rng.gen_range(1..=6)];
            let mut store = ParamStore::new();
            let bank = ConvBank::init(&mut store, m, n, i);
            for id in bank.horizontal.iter().chain(bank.vertical.iter().flatten()) {
                store.value_mut(*id).data_mut().iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
            }
            let c = (0..shape.iter().product()).map(|_| rng.gen_range(-2.0..2.0)).collect();
            FuzzCase { shape, m, n, store, bank, c }
        })
        .collect()
}

/// Runs both extractors on a fuzz case; returns the outputs as
/// (G_m values and shapes, Ĝ_{m,n} values and shapes).
#[allow(clippy::type_complexity)]
fn extract(case: &FuzzCase) -> (Vec<(Vec<f64>, Vec<usize>)>, Vec<Vec<(Vec<f64>, Vec<usize>)>>) {
    let mut g = Graph::new();
    let vars = case.store.bind(&mut g, false);
    let c = g.constant(Tensor::new(case.shape.to_vec(), case.c.clone()).unwrap());
    let widths: Vec<usize> = (1..=case.m).collect();
    let gm = mie_forward(&mut g, &vars, &case.bank, c, &widths).unwrap();
    let gf = mimfe_forward(&mut g, &vars, &case.bank, &gm).unwrap();
    let val = |g: &Graph, v| {
        let t: &Tensor = g.value(v);
        (t.data().to_vec(), t.shape().to_vec())
    };
    (
        gm.iter().map(|v| val(&g, v.unwrap())).collect(),
        gf.iter().map(|row| row.iter().map(|v| val(&g, v.unwrap())).collect()).collect(),
    )
}

fn extractor_oracle() -> Outcome {
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    let cases = fuzz_grid();
    for (ci, case) in cases.iter().enumerate() {
        let (gm, gf) = extract(case);
        for mi in 0..case.m {
            let w = case.store.get(case.bank.horizontal[mi]).value.data();
            let (want, ws) = naive_conv(&case.c, case.shape, w, 2);
            ensure!(gm[mi].1 == ws && bits(&gm[mi].0) == bits(&want), "case {ci}: G_{} differs", mi + 1);
            for ni in 0..case.n {
                let v = case.store.get(case.bank.vertical[mi][ni]).value.data();
                let (fw, fs) = naive_conv(&want, ws, v, 1);
                ensure!(gf[mi][ni].1 == fs && bits(&gf[mi][ni].0) == bits(&fw), "case {ci}: G_{},{} differs", mi + 1, ni + 1);
            }
        }
    }
    Ok(format!("{} instances bitwise equal", cases.len()))
}

fn count_laws() -> Outcome {
    let cases = fuzz_grid();
    for (ci, case) in cases.iter().enumerate() {
        let [_, j, l, _] = case.shape;
        let (gm, gf) = extract(case);
        let windows: usize = gm.iter().map(|(_, s)| s[2]).sum();
        let want_t: usize = (1..=case.m).map(|m| l - m + 1).sum();
        ensure!(windows == want_t, "case {ci}: |T| {windows} vs {want_t}");
        for row in &gf {
            let rows: usize = row.iter().map(|(_, s)| s[1]).sum();
            let want_o: usize = (1..=case.n).map(|n| j - n + 1).sum();
            ensure!(rows == want_o, "case {ci}: omega {rows} vs {want_o}");
        }
        let (m, n) = (case.m, case.n);
        let params: usize = case.store.iter().map(|p| p.value.numel()).sum();
        ensure!(params == m * (m + 1) / 2 + m * n * (n + 1) / 2, "case {ci}: bank size {params}");
    }
    Ok(format!("{} instances", cases.len()))
}

fn infonce_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst: f64 = 0.0;
    for case in 0..50 {
        let n = [2, 4, 8][case % 3];
        let tau = [0.05, 0.1, 1.0][(case / 3) % 3];
        let (groups, d) = (rng.gen_range(1..=3), rng.gen_range(2..=8));
        let rows = groups * n;
        let mut draw = || (0..rows * d).map(|_| rng.gen_range(-2.0..2.0)).collect::<Vec<f64>>();
        let (z1, z2) = (draw(), draw());
        let unit = |v: &[f64]| {
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.iter().map(|x| x / norm).collect::<Vec<_>>()
        };
        let mut total = 0.0;
        for p in 0..groups {
            for i in 0..n {
                let a = unit(&z1[(p * n + i) * d..][..d]);
                let logits: Vec<f64> = (0..n)
                    .map(|j| {
                        let b = unit(&z2[(p * n + j) * d..][..d]);
                        a.iter().zip(&b).map(|(x, y)| x * y).sum::<f64>() / tau
                    })
                    .collect();
                let denom: f64 = logits.iter().map(|s| s.exp()).sum();
                total -= (logits[i].exp() / denom).ln();
            }
        }
        let want = total / rows as f64;
        let mut g = Graph::new();
        let a = g.constant(Tensor::matrix(rows, d, z1).unwrap());
        let b = g.constant(Tensor::matrix(rows, d, z2).unwrap());
        let got = infonce(&mut g, a, b, groups, n, tau).map_err(|e| e.to_string())?;
        let err = (g.value(got).item() - want).abs();
        ensure!(err <= 1e-10, "batch {case} (|B| {n}, tau {tau}): error {err:e}");
        worst = worst.max(err);
    }
    Ok(format!("50 batches, max error {worst:.1e}"))
}

fn auc_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for case in 0..100 {
        let n = rng.gen_range(2..=200);
        let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0..25) as f64 / 24.0).collect();
        let mut labels: Vec<u8> = (0..n).map(|_| rng.gen_range(0..2)).collect();
        labels[0] = 0;
        labels[1] = 1;
        let (mut wins, mut pairs) = (0.0, 0.0);
        for i in 0..n {
            for j in 0..n {
                if labels[i] == 1 && labels[j] == 0 {
                    pairs += 1.0;
                    wins += if scores[i] > scores[j] { 1.0 } else if scores[i] == scores[j] { 0.5 } else { 0.0 };
                }
            }
        }
        let got = auc(&scores, &labels).map_err(|e| e.to_string())?;
        ensure!(got == wins / pairs, "instance {case}: {got} vs {}", wins / pairs);
    }
    Ok("100 instances exact".into())
}

struct Baseline {
    cfg: ExperimentConfig,
    split: DatasetSplit,
    vocab: Vocabulary,
    /// Seed-1 runs: (din, miss).
    first: Option<(RunResult, RunResult)>,
}

fn directional(base: &mut Baseline) -> Outcome {
    let start = Instant::now();
    let (mut din, mut miss) = (Vec::new(), Vec::new());
    for seed in 1..=5 {
        let mut c = base.cfg.clone();
        c.seed = seed;
        c.model = ModelKind::Din;
        let d = run_once(&c, &base.split, &base.vocab).map_err(|e| e.to_string())?;
        c.model = ModelKind::Miss;
        let m = run_once(&c, &base.split, &base.vocab).map_err(|e| e.to_string())?;
        din.push(d.test.auc);
        miss.push(m.test.auc);
        if seed == 1 {
            base.first = Some((d, m));
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (d, m) = (mean(&din), mean(&miss));
    let secs = start.elapsed().as_secs_f64();
    ensure!(m - d >= 0.01, "din {d:.4}, miss {m:.4}, gap {:.4}", m - d);
    ensure!(secs < 900.0, "took {secs:.0} s");
    Ok(format!("din {d:.4}, miss {m:.4}, gap {:.4}, {secs:.0} s", m - d))
}

fn alpha_zero(base: &Baseline) -> Outcome {
    let mut c = base.cfg.clone();
    c.alpha1 = 0.0;
    c.alpha2 = 0.0;
    c.epochs = 2;
    let miss = run_once(&c, &base.split, &base.vocab).map_err(|e| e.to_string())?.train;
    c.model = ModelKind::Din;
    let din = run_once(&c, &base.split, &base.vocab).map_err(|e| e.to_string())?.train;
    ensure!(miss.steps.len() == din.steps.len(), "step counts differ");
    for (a, b) in miss.steps.iter().zip(&din.steps) {
        ensure!(a.ll.map(f64::to_bits) == b.ll.map(f64::to_bits), "step {}: ll differs", a.step);
        ensure!(a.total.to_bits() == b.total.to_bits(), "step {}: total differs", a.step);
    }
    let mut shared = 0;
    for p in din.network.store.iter() {
        let id = miss.network.store.find(&p.name).ok_or(format!("{} missing", p.name))?;
        let q = &miss.network.store.get(id).value;
        ensure!(
            q.data().iter().zip(p.value.data()).all(|(x, y)| x.to_bits() == y.to_bits()),
            "{} differs",
            p.name
        );
        shared += 1;
    }
    Ok(format!("{} steps, {shared} shared tensors bit-identical", din.steps.len()))
}

fn cli_determinism() -> Outcome {
    let small = [
        "--synth-users", "150", "--synth-items", "60", "--batch-size", "32", "--epochs", "1", "--stamp", "fixed",
    ];
    let verbs: [&[&str]; 7] = [
        &["synth"],
        &["ingest"],
        &["train"],
        &["eval", "--checkpoint", "../ckpt"],
        &["sweep", "--axis", "temperature", "--grid", "0.1,1"],
        &["robustness", "--kind", "noise", "--rates", "0,0.2"],
        &["gradcheck"],
    ];
    let roots = [tempfile::tempdir().map_err(|e| e.to_string())?, tempfile::tempdir().map_err(|e| e.to_string())?];
    for root in &roots {
        let ck = Command::new(env!("CARGO_BIN_EXE_miss"))
            .current_dir(root.path())
            .args(["train", "--out-dir", "seed"])
            .args(small)
            .output()
            .map_err(|e| e.to_string())?;
        ensure!(ck.status.success(), "checkpoint run failed");
        std::fs::copy(root.path().join("seed/train_params_synth_fixed.ckpt"), root.path().join("ckpt"))
            .map_err(|e| e.to_string())?;
        for v in verbs {
            let work = root.path().join(v[0]);
            std::fs::create_dir_all(&work).map_err(|e| e.to_string())?;
            let o = Command::new(env!("CARGO_BIN_EXE_miss"))
                .current_dir(&work)
                .env_remove("MISS_OUT_DIR")
                .args(v)
                .args(["--out-dir", "out"])
                .args(small)
                .output()
                .map_err(|e| e.to_string())?;
            ensure!(o.status.success(), "{} failed: {}", v[0], String::from_utf8_lossy(&o.stderr));
        }
    }
    let mut files = 0;
    for v in verbs {
        let list = |r: &Path| -> Result<Vec<_>, String> {
            let mut names: Vec<_> = std::fs::read_dir(r.join(v[0]).join("out"))
                .map_err(|e| e.to_string())?
                .map(|e| e.unwrap().file_name())
                .collect();
            names.sort();
            Ok(names)
        };
        let names = list(roots[0].path())?;
        ensure!(names == list(roots[1].path())?, "{}: different artifact sets", v[0]);
        ensure!(!names.is_empty(), "{}: no artifacts", v[0]);
        for name in names {
            let read = |r: &Path| std::fs::read(r.join(v[0]).join("out").join(&name)).unwrap();
            ensure!(read(roots[0].path()) == read(roots[1].path()), "{}: {:?} differs", v[0], name);
            files += 1;
        }
    }
    Ok(format!("7 verbs, {files} artifacts byte-identical"))
}

fn robustness(base: &Baseline) -> Outcome {
    let (din, miss) = base.first.as_ref().ok_or("seed-1 reference runs unavailable")?;
    let mut worst: f64 = 0.0;
    for (kind, rates) in [(StudyKind::Sparsity, [1.0, 0.9, 0.8]), (StudyKind::Noise, [0.0, 0.1, 0.2])] {
        let r = robustness_study(kind, &rates, &base.cfg, &base.split, &base.vocab).map_err(|e| e.to_string())?;
        ensure!(r.rows.len() == 3, "{}: {} rows", kind.name(), r.rows.len());
        let first = &r.rows[0];
        let dd = (first.auc_base[0] - din.test.auc).abs();
        let dm = (first.auc_miss[0] - miss.test.auc).abs();
        ensure!(dd <= 1e-12 && dm <= 1e-12, "{}: unperturbed row off by {dd:e} / {dm:e}", kind.name());
        worst = worst.max(dd).max(dm);
        for row in &r.rows {
            let mb = row.auc_base.iter().sum::<f64>() / row.auc_base.len() as f64;
            let mm = row.auc_miss.iter().sum::<f64>() / row.auc_miss.len() as f64;
            ensure!(row.ri() == (mm - mb) / mb, "{} rate {}: RI does not recompute", kind.name(), row.rate);
        }
    }
    Ok(format!("6 rates, unperturbed rows within {worst:.0e}"))
}

fn telemetry(base: &Baseline) -> Outcome {
    let mut c = base.cfg.clone();
    c.epochs = 3;
    c.patience = 3;
    let out = run_once(&c, &base.split, &base.vocab).map_err(|e| e.to_string())?.train;
    ensure!(out.history.len() == 3, "{} epochs ran", out.history.len());
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for s in &out.steps {
        let v = s.sim_mean.ok_or(format!("step {} has no similarity", s.step))?;
        ensure!(v.is_finite() && (-1.0..=1.0).contains(&v), "step {}: {v}", s.step);
        lo = lo.min(v);
        hi = hi.max(v);
    }
    Ok(format!("{} steps, similarity in [{lo:.3}, {hi:.3}]", out.steps.len()))
}

fn report(name: &str, elapsed: Duration, outcome: std::thread::Result<Outcome>) -> bool {
    let outcome = outcome.unwrap_or_else(|p| {
        Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into()))
    });
    let secs = elapsed.as_secs_f64();
    match outcome {
        Ok(detail) => {
            println!("PASS  {name:<28} {detail} [{secs:.1} s]");
            true
        }
        Err(why) => {
            println!("FAIL  {name:<28} {why} [{secs:.1} s]");
            false
        }
    }
}

fn main() -> ExitCode {
    tune_allocator();
    if std::env::args().any(|a| a == "--list") {
        return ExitCode::SUCCESS;
    }
    let cfg = ExperimentConfig::default();
    let prepared = prepare(&cfg).expect("default synthetic corpus");
    let mut base = Baseline { cfg, split: prepared.split, vocab: prepared.vocab, first: None };

    let mut ok = true;
    let mut run = |name: &str, f: &mut dyn FnMut() -> Outcome| {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(&mut *f));
        ok &= report(name, start.elapsed(), outcome);
    };
    run("gradient correctness", &mut gradient_correctness);
    run("extractor oracle", &mut extractor_oracle);
    run("shape and count laws", &mut count_laws);
    run("infonce oracle", &mut infonce_oracle);
    run("auc oracle", &mut auc_oracle);
    run("directional synthetic gap", &mut || directional(&mut base));
    run("zero-weight equivalence", &mut || alpha_zero(&base));
    run("cli determinism", &mut cli_determinism);
    run("robustness harness", &mut || robustness(&base));
    run("similarity telemetry", &mut || telemetry(&base));
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
