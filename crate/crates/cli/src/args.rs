use std::ffi::OsString;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use crate::plan::{self, ExperimentPlan, Format, Settings};

#[derive(Debug, Parser)]
#[command(name = "fedlab", version, about = "Federated optimization simulator", after_help = plan::key_help())]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// One run; writes metrics_<id>.csv and summary.json.
    Run(Common),
    /// Every run of a grid, in parallel up to --jobs.
    Sweep(Common),
    /// One-sample-swap stability sweep along an axis.
    Stability {
        #[command(flatten)]
        common: Common,
        /// n | m | sigma_g | K | T
        #[arg(long)]
        axis: String,
        /// Comma-separated ascending values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        #[arg(long, default_value_t = 20)]
        trials: usize,
    },
    /// Parse and validate the plan, print the resolved runs.
    Validate(Common),
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML config file with dotted or tabled keys.
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    #[arg(long, short, default_value = "out")]
    pub out: PathBuf,
    /// Output kinds for per-run artifacts.
    #[arg(long, value_delimiter = ',', default_value = "csv")]
    pub format: Vec<String>,
    #[arg(long, short, default_value_t = 1)]
    pub jobs: usize,
    /// Extra `key=value` settings.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

/// Pulls `--<config key> <value>` (or `--key=value`) pairs out of argv,
/// leaving the rest for clap.
pub fn split_overrides<I: IntoIterator<Item = OsString>>(argv: I) -> Result<(Vec<OsString>, Vec<(String, String)>)> {
    let mut rest = Vec::new();
    let mut overrides = Vec::new();
    let mut it = argv.into_iter().peekable();
    while let Some(arg) = it.next() {
        let Some(s) = arg.to_str() else {
            rest.push(arg);
            continue;
        };
        let Some(body) = s.strip_prefix("--") else {
            rest.push(arg);
            continue;
        };
        let (key, inline) = match body.split_once('=') {
            Some((k, v)) => (k, Some(v.to_string())),
            None => (body, None),
        };
        if !plan::is_config_key(key) || is_own_flag(key) {
            rest.push(arg);
            continue;
        }
        let value = match inline {
            Some(v) => v,
            None => it
                .next()
                .and_then(|v| v.into_string().ok())
                .with_context(|| format!("flag --{key} needs a value"))?,
        };
        overrides.push((key.to_string(), value));
    }
    Ok((rest, overrides))
}

fn is_own_flag(key: &str) -> bool {
    matches!(key, "config" | "out" | "format" | "jobs" | "set" | "axis" | "values" | "trials" | "help" | "version")
}

impl Common {
    /// Config file, then `--set`, then per-key flags; later sources win.
    pub fn plan(&self, flags: &[(String, String)]) -> Result<ExperimentPlan> {
        let mut settings = match &self.config {
            Some(p) => Settings::from_file(p)?,
            None => Settings::default(),
        };
        for kv in &self.set {
            let Some((k, v)) = kv.split_once('=') else {
                bail!("--set expects KEY=VALUE, got `{kv}`");
            };
            settings.set_from_str(k.trim(), v)?;
        }
        for (k, v) in flags {
            settings.set_from_str(k, v)?;
        }
        let formats = self.format.iter().map(|f| f.parse()).collect::<Result<Vec<Format>>>()?;
        ExperimentPlan::build(&settings, self.out.clone(), formats)
    }
}
