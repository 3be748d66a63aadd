use std::path::PathBuf;
use std::str::FromStr;

use bcie_core::belief::CouplingSign;
use bcie_core::config::KeyValues;
use bcie_core::critique::Mode;
use bcie_core::embed::Likelihood;
use clap::{Args, Parser, Subcommand};

use crate::error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "bcie", version, about = "Knowledge-graph critiquing recommender")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub params: Params,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a dataset directory from ratings + KG files or a synthetic spec.
    Prepare(PrepareArgs),
    /// Train embeddings and write the best checkpoint.
    Train,
    /// One-shot hit@k on the test likes, with a popularity row.
    Evaluate,
    /// Simulated critiquing sessions over the test likes.
    Simulate(SimulateArgs),
    /// Serve the session API (and a static UI bundle if given).
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct PrepareArgs {
    /// `key = value` synthetic spec; unspecified keys keep their defaults.
    #[arg(long, conflicts_with_all = ["ratings", "kg", "item_map"])]
    pub synthetic: Option<PathBuf>,
    /// `user \t item \t rating \t timestamp`
    #[arg(long, requires_all = ["kg", "item_map"])]
    pub ratings: Option<PathBuf>,
    /// `head \t relation \t tail` with string names.
    #[arg(long)]
    pub kg: Option<PathBuf>,
    /// `item_id \t entity_name`
    #[arg(long)]
    pub item_map: Option<PathBuf>,
    /// Ratings strictly above this count as likes.
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub min_facts: Option<usize>,
    #[arg(long)]
    pub valid_frac: Option<f64>,
    #[arg(long)]
    pub test_frac: Option<f64>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct SimulateArgs {
    /// Grid-search j0, j_m and alpha per strategy on the validation likes
    /// before simulating.
    #[arg(long)]
    pub tune: bool,
}

#[derive(Debug, Clone, Default, Args)]
pub struct ServeArgs {
    /// Directory with the UI bundle.
    #[arg(long = "static")]
    pub static_dir: Option<PathBuf>,
    /// Where closed sessions are written.
    #[arg(long)]
    pub traces: Option<PathBuf>,
    #[arg(long)]
    pub ttl_secs: Option<u64>,
}

/// Flags shared by all commands. Each may also be given in the `--config`
/// file under the same name (`jm` for `--jm`); flags win.
#[derive(Debug, Clone, Default, Args)]
pub struct Params {
    /// `key = value` file of defaults for the flags below.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Dataset directory.
    #[arg(long, global = true)]
    pub data: Option<PathBuf>,
    /// Output path: dataset dir (prepare), checkpoint (train), CSV
    /// (evaluate), report dir (simulate).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Model checkpoint; defaults to `<data>/model.bin`.
    #[arg(long, global = true)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub dim: Option<usize>,
    #[arg(long, global = true)]
    pub lr: Option<f64>,
    #[arg(long, global = true)]
    pub lambda: Option<f64>,
    #[arg(long, global = true)]
    pub epochs: Option<usize>,
    /// gaussian | logistic
    #[arg(long, global = true)]
    pub likelihood: Option<Likelihood>,
    #[arg(long, global = true)]
    pub alpha: Option<f64>,
    #[arg(long, global = true)]
    pub j0: Option<f64>,
    #[arg(long, global = true)]
    pub jm: Option<f64>,
    #[arg(long, global = true)]
    pub eps: Option<f64>,
    /// compat | literal
    #[arg(long, global = true)]
    pub sign: Option<CouplingSign>,
    /// bcie | mapped_items | direct | all
    #[arg(long, global = true)]
    pub strategy: Option<String>,
    /// diff | random
    #[arg(long, global = true)]
    pub mode: Option<Mode>,
    #[arg(long, global = true)]
    pub steps: Option<usize>,
    #[arg(long, global = true)]
    pub runs: Option<usize>,
    /// Cutoffs (evaluate, comma separated) or list length (simulate, serve).
    #[arg(long, global = true)]
    pub k: Option<String>,
    #[arg(long, global = true)]
    pub port: Option<u16>,
    /// Simulation threads; 0 uses all cores.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
}

/// Flag values layered over the config file.
pub struct Settings {
    file: KeyValues,
}

impl Settings {
    pub fn load(params: &Params) -> CliResult<Self> {
        let file = match &params.config {
            Some(p) => KeyValues::load(p).map_err(|e| CliError::usage(format!("config file: {e}")))?,
            None => KeyValues::default(),
        };
        Ok(Self { file })
    }

    /// `flag`, else the config entry `key`, else `None`.
    pub fn opt<T: FromStr>(&self, key: &str, flag: Option<T>) -> CliResult<Option<T>> {
        if flag.is_some() {
            return Ok(flag);
        }
        match self.file.get_str(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse()
                .map(Some)
                .map_err(|_| CliError::usage(format!("config key `{key}`: cannot parse `{raw}`"))),
        }
    }

    pub fn or<T: FromStr>(&self, key: &str, flag: Option<T>, default: T) -> CliResult<T> {
        Ok(self.opt(key, flag)?.unwrap_or(default))
    }

    pub fn require<T: FromStr>(&self, key: &str, flag: Option<T>) -> CliResult<T> {
        self.opt(key, flag)?
            .ok_or_else(|| CliError::usage(format!("--{} is required", key.replace('_', "-"))))
    }

    /// A comma-separated list of floats from the config file only.
    pub fn list(&self, key: &str) -> CliResult<Option<Vec<f64>>> {
        let Some(raw) = self.file.get_str(key) else { return Ok(None) };
        raw.split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map(Some)
            .map_err(|_| CliError::usage(format!("config key `{key}`: expected numbers, got `{raw}`")))
    }
}
