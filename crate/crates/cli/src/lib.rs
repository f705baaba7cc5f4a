//! Experiment driver for `tpn-core`: configuration, data loading and the
//! pipeline stages behind the `tpn` binary.

pub mod config;
pub mod data;
pub mod output;
pub mod stages;

use std::fmt;
use std::path::PathBuf;

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand};

use crate::config::Config;
use crate::output::OutputDir;

/// One pipeline verb.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stage {
    Gen,
    Preprocess,
    TrainSc,
    TrainPsd,
    TrainLocal,
    TrainTpn,
    Analyze,
    TpnResponses,
    Describe,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Gen => "gen",
            Stage::Preprocess => "preprocess",
            Stage::TrainSc => "train-sc",
            Stage::TrainPsd => "train-psd",
            Stage::TrainLocal => "train-local",
            Stage::TrainTpn => "train-tpn",
            Stage::Analyze => "analyze",
            Stage::TpnResponses => "tpn-responses",
            Stage::Describe => "describe",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Parser)]
#[command(name = "tpn", version, about = "Sparse coding, locally connected networks and temporal product networks")]
pub struct Cli {
    /// `key = value` config file for the stage.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out", value_name = "DIR")]
    pub out: PathBuf,
    /// Worker threads for parallel analysis (default: all cores).
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,
    /// Single-threaded, bit-reproducible run.
    #[arg(long, global = true)]
    pub deterministic: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate stimulus frames.
    Gen(StageArgs),
    /// Local mean removal and contrast normalization.
    Preprocess(StageArgs),
    /// Learn a patch dictionary by sparse coding.
    TrainSc(StageArgs),
    /// Learn a patch dictionary with a feed-forward encoder.
    TrainPsd(StageArgs),
    /// Train a locally connected network on shifting windows.
    TrainLocal(StageArgs),
    /// Train a temporal product network on a frame sequence.
    TrainTpn(StageArgs),
    /// Gabor fits, maps and response tables for a trained model.
    Analyze(ModelArgs),
    /// Moving-bump responses of a temporal product network.
    TpnResponses(ModelArgs),
    /// Print a summary of a model file.
    Describe(DescribeArgs),
}

#[derive(Debug, Args)]
pub struct StageArgs {
    /// Input frames: a frames container, a PGM file or a directory of PGMs.
    #[arg(long, value_name = "PATH")]
    pub input: Option<PathBuf>,
    /// Extra `key=value` assignments applied after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    pub model: PathBuf,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Args)]
pub struct DescribeArgs {
    pub model: PathBuf,
}

impl Command {
    pub fn stage(&self) -> Stage {
        match self {
            Command::Gen(_) => Stage::Gen,
            Command::Preprocess(_) => Stage::Preprocess,
            Command::TrainSc(_) => Stage::TrainSc,
            Command::TrainPsd(_) => Stage::TrainPsd,
            Command::TrainLocal(_) => Stage::TrainLocal,
            Command::TrainTpn(_) => Stage::TrainTpn,
            Command::Analyze(_) => Stage::Analyze,
            Command::TpnResponses(_) => Stage::TpnResponses,
            Command::Describe(_) => Stage::Describe,
        }
    }

    fn overrides(&self) -> &[String] {
        match self {
            Command::Gen(a)
            | Command::Preprocess(a)
            | Command::TrainSc(a)
            | Command::TrainPsd(a)
            | Command::TrainLocal(a)
            | Command::TrainTpn(a) => &a.set,
            Command::Analyze(a) | Command::TpnResponses(a) => &a.set,
            Command::Describe(_) => &[],
        }
    }
}

/// Defaults, then the config file, then `--set`, `--input` and `--seed`.
pub fn resolve_config(cli: &Cli) -> Result<Config> {
    let stage = cli.command.stage();
    let mut cfg = match &cli.config {
        Some(path) => Config::load(stage, path)?,
        None => Config::defaults(stage),
    };
    for kv in cli.command.overrides() {
        let (k, v) = kv.split_once('=').ok_or_else(|| anyhow!("--set expects KEY=VALUE, got `{kv}`"))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Command::Gen(a)
    | Command::Preprocess(a)
    | Command::TrainSc(a)
    | Command::TrainPsd(a)
    | Command::TrainLocal(a)
    | Command::TrainTpn(a) = &cli.command
    {
        if let Some(p) = &a.input {
            cfg.set("input", &p.to_string_lossy())?;
        }
    }
    if let Some(seed) = cli.seed {
        cfg.set("seed", &seed.to_string())?;
    }
    Ok(cfg)
}

/// What a successful run produced.
#[derive(Debug, Default)]
pub struct RunOutput {
    pub files: Vec<PathBuf>,
    /// Text for standard output.
    pub stdout: String,
}

/// Runs one stage. On failure nothing written by the run is left behind.
pub fn run(cli: &Cli) -> Result<RunOutput> {
    let cfg = resolve_config(cli)?;
    let threads = if cli.deterministic { 1 } else { cli.threads.unwrap_or(0) };
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().context("starting worker threads")?;
    pool.install(|| run_stage(cli, &cfg))
}

fn run_stage(cli: &Cli, cfg: &Config) -> Result<RunOutput> {
    if let Command::Describe(a) = &cli.command {
        return Ok(RunOutput { files: Vec::new(), stdout: stages::describe(&a.model)? });
    }
    let mut out = OutputDir::new(&cli.out);
    match &cli.command {
        Command::Gen(_) => stages::gen(cfg, &mut out)?,
        Command::Preprocess(_) => stages::preprocess_stage(cfg, &mut out)?,
        Command::TrainSc(_) => stages::train_patch(cfg, &mut out, false)?,
        Command::TrainPsd(_) => stages::train_patch(cfg, &mut out, true)?,
        Command::TrainLocal(_) => stages::train_local(cfg, &mut out)?,
        Command::TrainTpn(_) => stages::train_tpn(cfg, &mut out)?,
        Command::Analyze(a) => stages::analyze(cfg, &mut out, &a.model)?,
        Command::TpnResponses(a) => stages::tpn_responses(cfg, &mut out, &a.model)?,
        Command::Describe(_) => unreachable!("handled above"),
    }
    out.write_text("config.resolved", &cfg.render())?;
    let files = out.commit();
    let stdout = format!("{}: wrote {} files to {}\n", cfg.stage(), files.len(), cli.out.display());
    Ok(RunOutput { files, stdout })
}

/// Parses `args` (including the program name) and runs; returns the exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(r) => {
            print!("{}", r.stdout);
            0
        }
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("error: {msg}");
            1
        }
    }
}
