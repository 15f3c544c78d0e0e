use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;

use anyhow::{bail, Context, Result};
use fedlab::engine::RunReport;
use fedlab::{stability_sweep, RoundRecord, RunMetrics, Simulation, StabilityReport, SweepAxis};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::Value;

use crate::plan::{ExperimentPlan, Format, PlannedRun};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Completed,
    Aborted,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub id: String,
    pub seed: u64,
    pub status: RunStatus,
    /// Artifacts hold fewer rounds than configured.
    pub partial: bool,
    pub rounds_completed: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub final_metrics: Option<RoundRecord>,
    pub point: std::collections::BTreeMap<String, Value>,
    pub config: fedlab::RunConfig64,
    pub files: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stability: Option<StabilitySummary>,
}

#[derive(Debug, Clone, Serialize)]
pub struct StabilitySummary {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    pub trials: usize,
    pub loglog_slope: Option<f64>,
    pub sigma_g_slope: Option<f64>,
    pub points: Vec<fedlab::stability::StabilityPoint>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub command: String,
    pub config: Value,
    pub runs: Vec<RunSummary>,
}

impl Summary {
    pub fn all_completed(&self) -> bool {
        self.runs.iter().all(|r| r.status == RunStatus::Completed)
    }
}

/// Runs every configured round, keeping whatever was recorded before a failure.
fn simulate(run: &PlannedRun) -> (RunMetrics, Option<String>) {
    let mut records = Vec::with_capacity(run.config.rounds + 1);
    let outcome = (|| -> fedlab::Result<()> {
        let mut sim = Simulation::new(run.config.clone())?;
        records.push(sim.measure(None, 0.0)?);
        for _ in 0..run.config.rounds {
            records.push(sim.run_round()?);
        }
        Ok(())
    })();
    (RunMetrics { records }, outcome.err().map(|e| e.to_string()))
}

fn execute(plan: &ExperimentPlan, run: &PlannedRun) -> Result<RunSummary> {
    let (metrics, error) = simulate(run);
    let mut files = Vec::new();
    for fmt in &plan.formats {
        match fmt {
            Format::Csv => {
                let name = format!("metrics_{}.csv", run.id);
                let f = File::create(plan.out_dir.join(&name)).with_context(|| format!("creating {name}"))?;
                metrics.write_csv(BufWriter::new(f))?;
                files.push(name);
            }
            Format::Json => {
                let name = format!("run_{}.json", run.id);
                let report = RunReport { config: run.config.clone(), records: metrics.records.clone() };
                write_json(&plan.out_dir.join(&name), &report)?;
                files.push(name);
            }
        }
    }
    let rounds_completed = metrics.records.len().saturating_sub(1);
    Ok(RunSummary {
        id: run.id.clone(),
        seed: run.config.seed,
        status: if error.is_none() { RunStatus::Completed } else { RunStatus::Aborted },
        partial: error.is_some(),
        rounds_completed,
        error,
        final_metrics: metrics.last().cloned(),
        point: run.point.clone(),
        config: run.config.clone(),
        files,
        stability: None,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    serde_json::to_writer_pretty(BufWriter::new(f), value)?;
    Ok(())
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    if jobs == 0 {
        bail!("--jobs must be >= 1");
    }
    Ok(rayon::ThreadPoolBuilder::new().num_threads(jobs).build()?)
}

fn finish(plan: &ExperimentPlan, command: &str, runs: Vec<RunSummary>) -> Result<Summary> {
    let summary = Summary { command: command.into(), config: plan.config_json(), runs };
    write_json(&plan.out_dir.join("summary.json"), &summary)?;
    Ok(summary)
}

/// Single run; the plan must not expand to a grid.
pub fn cmd_run(plan: &ExperimentPlan) -> Result<Summary> {
    if plan.runs.len() != 1 {
        bail!("plan expands to {} runs; use `sweep` for grids", plan.runs.len());
    }
    fs::create_dir_all(&plan.out_dir)?;
    let run = execute(plan, &plan.runs[0])?;
    finish(plan, "run", vec![run])
}

/// Every run in the plan, up to `jobs` at a time. Output order follows the plan.
pub fn cmd_sweep(plan: &ExperimentPlan, jobs: usize) -> Result<Summary> {
    fs::create_dir_all(&plan.out_dir)?;
    let runs = pool(jobs)?.install(|| plan.runs.par_iter().map(|r| execute(plan, r)).collect::<Result<Vec<_>>>())?;
    finish(plan, "sweep", runs)
}

/// Stability sweep along `axis` for every run of the plan.
pub fn cmd_stability(
    plan: &ExperimentPlan,
    axis: SweepAxis,
    values: &[f64],
    trials: usize,
    jobs: usize,
) -> Result<Summary> {
    fs::create_dir_all(&plan.out_dir)?;
    let pool = pool(jobs)?;
    let mut runs = Vec::with_capacity(plan.runs.len());
    for run in &plan.runs {
        let outcome: fedlab::Result<StabilityReport> =
            pool.install(|| stability_sweep(&run.config, axis, values, trials));
        let mut files = Vec::new();
        let (status, error, stability) = match outcome {
            Ok(report) => {
                let name = format!("stability_{}.csv", run.id);
                let f = File::create(plan.out_dir.join(&name)).with_context(|| format!("creating {name}"))?;
                report.write_csv(BufWriter::new(f))?;
                files.push(name);
                let s = StabilitySummary {
                    axis,
                    values: values.to_vec(),
                    trials,
                    loglog_slope: report.loglog_slope,
                    sigma_g_slope: report.sigma_g_slope,
                    points: report.points,
                };
                (RunStatus::Completed, None, Some(s))
            }
            Err(e) => (RunStatus::Aborted, Some(e.to_string()), None),
        };
        runs.push(RunSummary {
            id: run.id.clone(),
            seed: run.config.seed,
            status,
            partial: error.is_some(),
            rounds_completed: if error.is_none() { run.config.rounds } else { 0 },
            error,
            final_metrics: None,
            point: run.point.clone(),
            config: run.config.clone(),
            files,
            stability,
        });
    }
    finish(plan, "stability", runs)
}

/// Human-readable table of a summary.
pub fn render_table(summary: &Summary) -> String {
    let mut s = format!("{:<6} {:>20} {:>10} {:>7} {:>14} {:>14}\n", "id", "seed", "status", "rounds", "train_loss", "slope");
    for r in &summary.runs {
        let loss = r.final_metrics.as_ref().map_or("-".into(), |m| format!("{:.6e}", m.train_loss));
        let slope = r
            .stability
            .as_ref()
            .and_then(|st| st.loglog_slope)
            .map_or("-".into(), |x| format!("{x:.4}"));
        let status = match r.status {
            RunStatus::Completed => "ok",
            RunStatus::Aborted => "ABORTED",
        };
        s.push_str(&format!(
            "{:<6} {:>20} {:>10} {:>7} {:>14} {:>14}\n",
            r.id, r.seed, status, r.rounds_completed, loss, slope
        ));
        if let Some(e) = &r.error {
            s.push_str(&format!("       error: {e}\n"));
        }
    }
    s
}
