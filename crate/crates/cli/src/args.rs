use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Arg, ArgMatches, Command};
use miss_core::config::KEYS;
use miss_core::{ExperimentConfig, MissError, Result};

pub const VERBS: &[(&str, &str)] = &[
    ("synth", "generate the synthetic planted-interest corpus"),
    ("ingest", "read, filter and split an interaction log; write a split snapshot"),
    ("train", "train a model and report validation and test metrics"),
    ("eval", "evaluate a saved checkpoint on the test split"),
    ("sweep", "loss-weight or temperature sweep over seeds"),
    ("robustness", "label sparsity or label noise study, base vs contrastive model"),
    ("gradcheck", "finite-difference check of the full objective on a tiny instance"),
];

pub fn flag_name(key: &str) -> String {
    key.replace('_', "-")
}

pub fn command() -> Command {
    let mut cmd = Command::new("miss")
        .about("Multi-interest self-supervised CTR experiments")
        .subcommand_required(true)
        .arg_required_else_help(true)
        .after_help(
            "Precedence: built-in defaults < MISS_OUT_DIR < --config file < flags.\n\
             Every flag sets the configuration key of the same name (dashes for underscores).",
        )
        .arg(
            Arg::new("config")
                .long("config")
                .value_name("PATH")
                .global(true)
                .help("key = value configuration file"),
        );
    for (key, doc) in KEYS {
        cmd = cmd.arg(
            Arg::new(*key)
                .long(&*Box::leak(flag_name(key).into_boxed_str()))
                .value_name("VALUE")
                .global(true)
                .help(*doc),
        );
    }
    for (verb, about) in VERBS {
        cmd = cmd.subcommand(Command::new(*verb).about(*about));
    }
    cmd
}

pub struct Invocation {
    pub verb: String,
    pub cfg: ExperimentConfig,
}

pub fn parse(args: Vec<OsString>) -> std::result::Result<ArgMatches, clap::Error> {
    command().try_get_matches_from(args)
}

/// Layers defaults, MISS_OUT_DIR, the config file and flags.
pub fn resolve(matches: &ArgMatches) -> Result<Invocation> {
    let (verb, sub) = matches
        .subcommand()
        .ok_or_else(|| MissError::Config("missing verb".into()))?;
    let mut cfg = ExperimentConfig::default();
    if let Ok(dir) = std::env::var("MISS_OUT_DIR") {
        if !dir.is_empty() {
            cfg.out_dir = dir;
        }
    }
    let get = |key: &str| sub.get_one::<String>(key).or_else(|| matches.get_one::<String>(key));
    if let Some(path) = get("config") {
        let text = std::fs::read_to_string(path).map_err(|source| MissError::ConfigFile {
            path: PathBuf::from(path),
            source,
        })?;
        cfg.apply_text(&text)
            .map_err(|e| e.context(format!("in config file {path}")))?;
    }
    for (key, _) in KEYS {
        if let Some(v) = get(key) {
            cfg.set(key, v)?;
        }
    }
    cfg.validate()?;
    Ok(Invocation {
        verb: verb.to_string(),
        cfg,
    })
}
