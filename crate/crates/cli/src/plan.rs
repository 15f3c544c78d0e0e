//! Flat dotted-key configuration and grid expansion.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use fedlab::rng::{derive_seed, Purpose};
use fedlab::{Algorithm, RunConfig64, TaskKind};
use serde_json::{Map, Number, Value};

/// Short names accepted in files and on the command line.
const ALIASES: &[(&str, &str)] = &[
    ("eta", "sched.eta_l"),
    ("eta_l", "sched.eta_l"),
    ("rho", "sched.rho"),
    ("K", "sched.local_iters"),
    ("local_iters", "sched.local_iters"),
    ("decay", "sched.round_decay"),
    ("round_decay", "sched.round_decay"),
    ("alpha", "algo.alpha"),
    ("gamma", "algo.gamma"),
    ("sam_radius", "algo.sam_radius"),
    ("ctrl_option", "algo.ctrl_option"),
    ("mom_beta", "algo.mom_beta"),
    ("ctrl_init", "algo.ctrl_init"),
    ("swa_tracker", "algo.swa_tracker"),
    ("task", "task.kind"),
    ("dim", "task.dim"),
    ("clients", "task.clients"),
    ("m", "task.clients"),
    ("samples", "task.samples"),
    ("n", "task.samples"),
    ("hetero_knob", "task.hetero_knob"),
    ("noise_sigma", "task.noise_sigma"),
    ("mu", "task.mu"),
    ("beta", "task.beta"),
    ("concentration", "task.concentration"),
    ("classes", "task.classes"),
    ("hidden", "task.hidden"),
    ("task_seed", "task.seed"),
    ("T", "rounds"),
    ("s", "participation"),
    ("B", "batch_size"),
    ("batch", "batch_size"),
];

/// Canonical keys with their default values.
pub fn defaults() -> BTreeMap<String, Value> {
    let v = serde_json::to_value(RunConfig64::default()).expect("default config serializes");
    let mut out = BTreeMap::new();
    flatten_json("", &v, &mut out);
    out
}

fn flatten_json(prefix: &str, v: &Value, out: &mut BTreeMap<String, Value>) {
    match v {
        Value::Object(map) => {
            for (k, child) in map {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten_json(&key, child, out);
            }
        }
        leaf => {
            out.insert(prefix.to_string(), leaf.clone());
        }
    }
}

/// Resolves an alias or canonical key; unknown keys are an error.
pub fn canonical_key(key: &str) -> Result<String> {
    if let Some((_, full)) = ALIASES.iter().find(|(a, _)| *a == key) {
        return Ok(full.to_string());
    }
    if defaults().contains_key(key) {
        return Ok(key.to_string());
    }
    bail!("unknown config key `{key}`")
}

/// Whether `key` names a config entry (used to pick override flags out of argv).
pub fn is_config_key(key: &str) -> bool {
    canonical_key(key).is_ok()
}

/// Every accepted key, canonical first then aliases.
pub fn key_help() -> String {
    let mut s = String::from("Config keys (also usable as --<key> <value> flags):\n");
    for (k, v) in defaults() {
        let aliases: Vec<&str> = ALIASES.iter().filter(|(_, f)| *f == k).map(|(a, _)| *a).collect();
        s.push_str(&format!("  {k:<22} default {v}"));
        if !aliases.is_empty() {
            s.push_str(&format!("  (alias {})", aliases.join(", ")));
        }
        s.push('\n');
    }
    s
}

/// Raw settings: canonical key to one or more candidate values.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Settings {
    pub entries: BTreeMap<String, Vec<toml::Value>>,
}

impl Settings {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let table: toml::Table = toml::from_str(text).context("malformed config file")?;
        let mut s = Settings::default();
        s.absorb_table("", &table)?;
        Ok(s)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_toml_str(&text).with_context(|| format!("in {}", path.display()))
    }

    fn absorb_table(&mut self, prefix: &str, table: &toml::Table) -> Result<()> {
        for (k, v) in table {
            let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
            match v {
                toml::Value::Table(t) => self.absorb_table(&key, t)?,
                other => self.set(&key, other.clone())?,
            }
        }
        Ok(())
    }

    /// Sets `key` to a TOML value; arrays become grid axes.
    pub fn set(&mut self, key: &str, value: toml::Value) -> Result<()> {
        let canon = canonical_key(key)?;
        let values = match value {
            toml::Value::Array(items) => {
                if items.is_empty() {
                    bail!("config key `{canon}`: empty list");
                }
                items
            }
            single => vec![single],
        };
        self.entries.insert(canon, values);
        Ok(())
    }

    /// Parses a command-line value: a TOML literal, a comma list, or a bare string.
    pub fn set_from_str(&mut self, key: &str, raw: &str) -> Result<()> {
        let value = parse_cli_value(raw);
        self.set(key, value)
    }

    /// Later settings win key by key.
    pub fn merge(&mut self, other: Settings) {
        self.entries.extend(other.entries);
    }
}

fn parse_cli_value(raw: &str) -> toml::Value {
    let literal = |s: &str| -> toml::Value {
        toml::from_str::<toml::Table>(&format!("v = {s}"))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(s.to_string()))
    };
    let raw = raw.trim();
    if !raw.starts_with('[') && raw.contains(',') {
        toml::Value::Array(raw.split(',').map(|p| literal(p.trim())).collect())
    } else {
        literal(raw)
    }
}

/// Converts a TOML value to the JSON type of the default at `key`.
fn coerce(key: &str, default: &Value, v: &toml::Value) -> Result<Value> {
    let err = || anyhow!("config key `{key}`: expected {} value, got `{v}`", kind_name(default));
    let out = match default {
        Value::Bool(_) => Value::Bool(v.as_bool().ok_or_else(err)?),
        Value::Number(n) if n.is_f64() => {
            let x = match v {
                toml::Value::Float(f) => *f,
                toml::Value::Integer(i) => *i as f64,
                _ => return Err(err()),
            };
            Value::Number(Number::from_f64(x).ok_or_else(|| anyhow!("config key `{key}`: value must be finite"))?)
        }
        Value::Number(_) => {
            let i = match v {
                toml::Value::Integer(i) if key == "algo.ctrl_option" => *i,
                toml::Value::String(s) if key == "algo.ctrl_option" => match s.as_str() {
                    "I" | "1" => 1,
                    "II" | "2" => 2,
                    _ => return Err(err()),
                },
                toml::Value::Integer(i) => *i,
                toml::Value::Float(f) if f.fract() == 0.0 => *f as i64,
                _ => return Err(err()),
            };
            if i < 0 {
                bail!("config key `{key}`: must be >= 0, got {i}");
            }
            Value::Number(i.into())
        }
        Value::String(_) => {
            let s = v.as_str().ok_or_else(err)?;
            check_enum(key, s)?;
            Value::String(s.to_string())
        }
        _ => return Err(err()),
    };
    Ok(out)
}

fn kind_name(v: &Value) -> &'static str {
    match v {
        Value::Bool(_) => "a boolean",
        Value::Number(n) if n.is_f64() => "a numeric",
        Value::Number(_) => "an integer",
        Value::String(_) => "a string",
        _ => "a scalar",
    }
}

fn check_enum(key: &str, s: &str) -> Result<()> {
    let res = match key {
        "algorithm" => s.parse::<Algorithm>().map(|_| ()).map_err(|e| e.to_string()),
        "task.kind" => s.parse::<TaskKind>().map(|_| ()).map_err(|e| e.to_string()),
        "algo.ctrl_init" if s == "zero" || s == "gradient" => Ok(()),
        "algo.ctrl_init" => Err(format!("unknown init `{s}` (expected zero|gradient)")),
        _ => Ok(()),
    };
    res.map_err(|e| anyhow!("config key `{key}`: {e}"))
}

fn unflatten(flat: &BTreeMap<String, Value>) -> Value {
    let mut root = Map::new();
    for (k, v) in flat {
        let mut node = &mut root;
        let parts: Vec<&str> = k.split('.').collect();
        for p in &parts[..parts.len() - 1] {
            node = node
                .entry(p.to_string())
                .or_insert_with(|| Value::Object(Map::new()))
                .as_object_mut()
                .expect("config nesting is consistent");
        }
        node.insert(parts[parts.len() - 1].to_string(), v.clone());
    }
    Value::Object(root)
}

/// Maps a validation parameter name back to the config key it came from.
fn key_for_param(name: &str) -> String {
    defaults()
        .into_keys()
        .find(|k| k == name || k.rsplit('.').next() == Some(name))
        .unwrap_or_else(|| name.to_string())
}

/// One expanded run.
#[derive(Debug, Clone, PartialEq)]
pub struct PlannedRun {
    pub id: String,
    pub config: RunConfig64,
    /// The grid coordinates that distinguish this run.
    pub point: BTreeMap<String, Value>,
}

/// Output file kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

impl std::str::FromStr for Format {
    type Err = anyhow::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => bail!("unknown format `{other}` (expected csv|json)"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentPlan {
    pub runs: Vec<PlannedRun>,
    pub out_dir: PathBuf,
    pub formats: Vec<Format>,
    /// Fully resolved base settings, defaults materialized.
    pub resolved: BTreeMap<String, Value>,
    /// List-valued keys and their values.
    pub grid: BTreeMap<String, Vec<Value>>,
}

impl ExperimentPlan {
    /// Expands settings into validated runs.
    ///
    /// List-valued keys expand as a Cartesian product (keys in sorted order,
    /// last key fastest). A single run keeps the configured seed; in a grid each
    /// run gets a seed derived from the base seed and its index, unless `seed`
    /// itself is a grid key.
    pub fn build(settings: &Settings, out_dir: PathBuf, formats: Vec<Format>) -> Result<Self> {
        let defaults = defaults();
        let mut resolved = defaults.clone();
        let mut grid: BTreeMap<String, Vec<Value>> = BTreeMap::new();
        for (key, values) in &settings.entries {
            let coerced = values
                .iter()
                .map(|v| coerce(key, &defaults[key], v))
                .collect::<Result<Vec<_>>>()?;
            if coerced.len() == 1 {
                resolved.insert(key.clone(), coerced[0].clone());
            } else {
                grid.insert(key.clone(), coerced);
            }
        }

        let mut points: Vec<BTreeMap<String, Value>> = vec![BTreeMap::new()];
        for (key, values) in &grid {
            points = points
                .into_iter()
                .flat_map(|p| {
                    values.iter().map(move |v| {
                        let mut q = p.clone();
                        q.insert(key.clone(), v.clone());
                        q
                    })
                })
                .collect();
        }

        let base_seed = resolved["seed"].as_u64().unwrap_or(0);
        let derive = points.len() > 1 && !grid.contains_key("seed");
        let width = points.len().saturating_sub(1).to_string().len().max(3);
        let mut runs = Vec::with_capacity(points.len());
        for (i, point) in points.into_iter().enumerate() {
            let mut flat = resolved.clone();
            flat.extend(point.clone());
            if derive {
                let seed = derive_seed(base_seed, &[Purpose::Plan as u64, i as u64]);
                flat.insert("seed".into(), Value::Number(seed.into()));
            }
            let config: RunConfig64 = serde_json::from_value(unflatten(&flat))
                .with_context(|| format!("run {i}: config does not deserialize"))?;
            config.validate().map_err(|e| match &e {
                fedlab::FedError::InvalidParameter { name, .. } => {
                    anyhow!("config key `{}`: {e}", key_for_param(name))
                }
                _ => anyhow!("run {i}: {e}"),
            })?;
            runs.push(PlannedRun { id: format!("r{i:0width$}"), config, point });
        }
        Ok(ExperimentPlan { runs, out_dir, formats, resolved, grid })
    }

    /// Self-describing plan summary for `summary.json`.
    pub fn config_json(&self) -> Value {
        serde_json::json!({
            "resolved": unflatten(&self.resolved),
            "grid": self.grid,
            "runs": self.runs.len(),
            "out_dir": self.out_dir.display().to_string(),
            "formats": self.formats.iter().map(|f| match f {
                Format::Csv => "csv",
                Format::Json => "json",
            }).collect::<Vec<_>>(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plan(text: &str) -> Result<ExperimentPlan> {
        ExperimentPlan::build(&Settings::from_toml_str(text)?, PathBuf::from("out"), vec![Format::Csv])
    }

    #[test]
    fn empty_config_is_one_default_run() {
        let p = plan("").unwrap();
        assert_eq!(p.runs.len(), 1);
        assert_eq!(p.runs[0].config, RunConfig64::default());
        assert!((p.runs[0].config.sched.rho - 0.1).abs() < 1e-15);
        assert!((p.runs[0].config.algo.alpha - 1.5).abs() < 1e-15);
        assert!((p.runs[0].config.algo.gamma - 0.2).abs() < 1e-15);
        assert!((p.runs[0].config.sched.round_decay - 0.998).abs() < 1e-15);
    }

    #[test]
    fn lists_expand_as_product_with_distinct_seeds() {
        let p = plan("eta_l = [0.01, 0.1]\nalgorithm = [\"fedavg\", \"fedmoswa\"]").unwrap();
        assert_eq!(p.runs.len(), 4);
        let mut seeds: Vec<u64> = p.runs.iter().map(|r| r.config.seed).collect();
        seeds.dedup();
        assert_eq!(seeds.len(), 4);
        let combos: Vec<(Algorithm, f64)> = p.runs.iter().map(|r| (r.config.algorithm, r.config.sched.eta_l)).collect();
        assert_eq!(
            combos,
            vec![
                (Algorithm::FedAvg, 0.01),
                (Algorithm::FedAvg, 0.1),
                (Algorithm::FedMoSwa, 0.01),
                (Algorithm::FedMoSwa, 0.1)
            ]
        );
    }

    #[test]
    fn out_of_range_rho_names_the_key() {
        let e = plan("rho = 1.5").unwrap_err().to_string();
        assert!(e.contains("sched.rho"), "{e}");
    }

    #[test]
    fn unknown_and_mistyped_keys_are_rejected() {
        let e = plan("[sched]\nrhoo = 0.2").unwrap_err();
        assert!(format!("{e:#}").contains("sched.rhoo"));
        let e = plan("rounds = \"many\"").unwrap_err().to_string();
        assert!(e.contains("rounds"), "{e}");
        let e = plan("algorithm = \"fedprox\"").unwrap_err().to_string();
        assert!(e.contains("algorithm"), "{e}");
        assert!(plan("rounds = [").is_err());
    }

    #[test]
    fn tables_and_aliases_agree() {
        let a = plan("[sched]\nrho = 0.3\n[task]\nclients = 6").unwrap();
        let b = plan("rho = 0.3\nm = 6").unwrap();
        assert_eq!(a.runs[0].config, b.runs[0].config);
        assert_eq!(a.runs[0].config.task.clients, 6);
    }

    #[test]
    fn cli_values_parse_lists_and_strings() {
        let mut s = Settings::default();
        s.set_from_str("algorithm", "fedavg,scaffold").unwrap();
        s.set_from_str("rounds", "7").unwrap();
        s.set_from_str("ctrl_option", "I").unwrap();
        s.set_from_str("eta", "[0.01, 0.02]").unwrap();
        let p = ExperimentPlan::build(&s, PathBuf::from("o"), vec![]).unwrap();
        assert_eq!(p.runs.len(), 4);
        assert!(p.runs.iter().all(|r| r.config.rounds == 7));
        assert_eq!(p.runs[0].config.algo.ctrl_option, fedlab::CtrlOption::I);
    }

    #[test]
    fn explicit_seed_grid_is_kept() {
        let p = plan("seed = [3, 9]").unwrap();
        let seeds: Vec<u64> = p.runs.iter().map(|r| r.config.seed).collect();
        assert_eq!(seeds, vec![3, 9]);
    }

    #[test]
    fn integer_literals_fill_float_keys() {
        let p = plan("alpha = 1").unwrap();
        assert_eq!(p.runs[0].config.algo.alpha, 1.0);
    }
}
