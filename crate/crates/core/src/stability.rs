//! Uniform-stability probe.
//!
//! A twin run trains on a dataset `S` and on a neighbour `S'` that differs in
//! one sample, with every random draw (client sampling, minibatch indices)
//! shared. The distance between the two final models, and the loss gap on a
//! held-out pool, estimate how sensitive the algorithm is to a single sample.

use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::algorithms::Algorithm;
use crate::engine::{RunConfig, Simulation};
use crate::error::{FedError, Result};
use crate::numkit::{dist, l2_norm, ParamVec};
use crate::rng::{self, Purpose};
use crate::scalar::Scalar;
use crate::tasks::{measure_sigma_g, Sample, TaskKind, TaskModel, TaskSpec};

/// Size of the held-out pool used for loss gaps.
pub const HELDOUT_POOL: usize = 1000;

pub const STABILITY_HEADER: &str = "axis,value,trial,gap_param,gap_loss,theory_bound";

#[derive(Debug, Clone, PartialEq)]
pub struct TwinOutcome<S> {
    /// `||theta_t - theta'_t||` for `t = 0..T`.
    pub gaps: Vec<f64>,
    pub theta: ParamVec<S>,
    pub theta_twin: ParamVec<S>,
    /// Whether the perturbed sample entered any minibatch of the first run.
    pub drawn: bool,
}

impl<S> TwinOutcome<S> {
    pub fn final_gap(&self) -> f64 {
        *self.gaps.last().expect("gap series holds t = 0")
    }
}

/// Twin run on `task` and `twin`, which must differ only in sample `id` of
/// `client`.
pub fn twin_run_on<S: Scalar>(
    cfg: &RunConfig<S>,
    task: TaskSpec<S>,
    twin: TaskSpec<S>,
    client: usize,
    id: u64,
) -> Result<TwinOutcome<S>> {
    let pos = task.sample_index(client, id)?;
    let mut a = Simulation::with_task(cfg.clone(), task)?;
    let mut b = Simulation::with_task(cfg.clone(), twin)?;
    a.keep_updates = true;
    let mut gaps = Vec::with_capacity(cfg.rounds + 1);
    gaps.push(dist(&a.server.theta, &b.server.theta)?.as_f64());
    let mut drawn = false;
    for _ in 0..cfg.rounds {
        a.run_round()?;
        b.run_round()?;
        drawn |= a
            .last_updates
            .iter()
            .filter(|u| u.client == client)
            .any(|u| u.local.batches.iter().any(|batch| batch.contains(&pos)));
        gaps.push(dist(&a.server.theta, &b.server.theta)?.as_f64());
    }
    Ok(TwinOutcome {
        gaps,
        theta: a.server.theta,
        theta_twin: b.server.theta,
        drawn,
    })
}

/// Twin run where sample `id` of `client` is redrawn from the generator with
/// `perturb_seed`.
pub fn twin_run<S: Scalar>(
    cfg: &RunConfig<S>,
    client: usize,
    id: u64,
    perturb_seed: u64,
) -> Result<TwinOutcome<S>> {
    cfg.validate()?;
    let task = cfg.task.build::<S>()?;
    let twin = task.perturb_one_sample(client, id, perturb_seed)?;
    twin_run_on(cfg, task, twin, client, id)
}

/// Positions drawn into any minibatch, per client, over a whole run.
pub fn drawn_positions<S: Scalar>(cfg: &RunConfig<S>) -> Result<Vec<Vec<bool>>> {
    let mut sim = Simulation::new(cfg.clone())?;
    sim.keep_updates = true;
    let mut seen: Vec<Vec<bool>> = sim.task.shards.iter().map(|s| vec![false; s.len()]).collect();
    for _ in 0..cfg.rounds {
        sim.run_round()?;
        for u in &sim.last_updates {
            for batch in &u.local.batches {
                for &p in batch {
                    seen[u.client][p] = true;
                }
            }
        }
    }
    Ok(seen)
}

/// Mean `|l(z; theta) - l(z; theta')|` over a held-out pool.
pub fn loss_gap<S: Scalar>(
    task: &TaskSpec<S>,
    pool: &[(usize, Sample<S>)],
    theta: &ParamVec<S>,
    theta_twin: &ParamVec<S>,
) -> Result<f64> {
    if pool.is_empty() {
        return Err(FedError::Empty("held-out pool"));
    }
    let total: f64 = pool
        .iter()
        .map(|(c, z)| {
            (task.sample_loss(*c, theta, z) - task.sample_loss(*c, theta_twin, z))
                .abs()
                .as_f64()
        })
        .sum();
    Ok(total / pool.len() as f64)
}

/// Lipschitz constant of the per-sample loss over the pool, valid on the
/// ball of radius `radius` around `theta0`. `None` for the MLP.
pub fn pool_lipschitz<S: Scalar>(
    task: &TaskSpec<S>,
    pool: &[(usize, Sample<S>)],
    theta0: &ParamVec<S>,
    radius: f64,
) -> Option<f64> {
    match &task.model {
        TaskModel::Quadratic { .. } => {
            // ||A (theta - x)|| <= beta (||theta - theta0|| + ||theta0 - x||)
            let beta = task.beta?;
            let reach = pool
                .iter()
                .map(|(_, z)| {
                    z.x.iter()
                        .zip(theta0.iter())
                        .map(|(&x, &t)| (t - x).as_f64().powi(2))
                        .sum::<f64>()
                        .sqrt()
                })
                .fold(0.0, f64::max);
            Some(beta * (radius + reach))
        }
        // |sigmoid - y| <= 1 times ||(x, 1)||
        TaskModel::Logreg { .. } => Some(
            pool.iter()
                .map(|(_, z)| (1.0 + z.x.iter().map(|v| v.as_f64().powi(2)).sum::<f64>()).sqrt())
                .fold(0.0, f64::max),
        ),
        TaskModel::Mlp { .. } => None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    StronglyConvex,
    Nonconvex,
}

impl std::str::FromStr for Regime {
    type Err = FedError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "strongly_convex" => Ok(Regime::StronglyConvex),
            "nonconvex" => Ok(Regime::Nonconvex),
            other => Err(FedError::invalid("regime", format!("unknown regime `{other}`"))),
        }
    }
}

/// Constants entering the generalization bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundParams {
    /// Lipschitz constant of the loss.
    pub l: f64,
    /// Smoothness.
    pub beta: f64,
    /// Strong convexity (strongly convex regime only).
    pub mu: f64,
    /// Stochastic gradient noise.
    pub sigma: f64,
    /// Heterogeneity.
    pub sigma_g: f64,
    pub m: usize,
    pub n: usize,
    pub k: usize,
    pub t: usize,
}

/// `1 + (2 + 1/(K T))^(K-1) / T`
pub fn c_tilde(k: usize, t: usize) -> f64 {
    let (k, t) = (k as f64, t as f64);
    1.0 + (2.0 + 1.0 / (k * t)).powf(k - 1.0) / t
}

/// FedSAM's amplification, one power above [`c_tilde`]: `1 + (2 + 1/(K T))^K / T`.
pub fn c_bar(k: usize, t: usize) -> f64 {
    let (k, t) = (k as f64, t as f64);
    1.0 + (2.0 + 1.0 / (k * t)).powf(k) / t
}

/// `1 + (mu / ((beta + mu) K))^(K-1) / T`
pub fn b_tilde(mu: f64, beta: f64, k: usize, t: usize) -> f64 {
    let (kf, tf) = (k as f64, t as f64);
    1.0 + (mu / ((beta + mu) * kf)).powf(kf - 1.0) / tf
}

/// Closed-form generalization bound of `alg` in `regime`.
pub fn theory_bound(alg: Algorithm, regime: Regime, p: &BoundParams) -> Result<f64> {
    let positive = [("l", p.l), ("beta", p.beta)];
    for (name, v) in positive {
        if !(v > 0.0 && v.is_finite()) {
            return Err(FedError::invalid(name, "must be positive"));
        }
    }
    for (name, v) in [("sigma", p.sigma), ("sigma_g", p.sigma_g)] {
        if !(v >= 0.0 && v.is_finite()) {
            return Err(FedError::invalid(name, "must be >= 0"));
        }
    }
    for (name, v) in [("m", p.m), ("n", p.n), ("K", p.k), ("T", p.t)] {
        if v == 0 {
            return Err(FedError::invalid(name, "must be >= 1"));
        }
    }
    let (m, n, t) = (p.m as f64, p.n as f64, p.t as f64);
    let scale = 2.0 * p.l / (m * n * p.beta);
    match regime {
        Regime::Nonconvex => {
            let pre = scale * (1.0 / t + 1.0).exp();
            let c = c_tilde(p.k, p.t);
            match alg {
                Algorithm::FedSwa => Ok(pre * (c * p.l + c * p.sigma_g + c * p.sigma)),
                Algorithm::FedMoSwa => Ok(pre * (c * p.l + p.sigma_g + c * p.sigma)),
                Algorithm::FedSam => {
                    let cb = c_bar(p.k, p.t);
                    Ok(pre * (cb * p.l + cb * p.sigma_g + cb * p.sigma))
                }
                other => Err(FedError::Unsupported(format!("no bound for {other}"))),
            }
        }
        Regime::StronglyConvex => {
            if !(p.mu > 0.0 && p.mu.is_finite()) {
                return Err(FedError::invalid("mu", "must be positive"));
            }
            let pre = scale * (1.0 - p.mu / ((p.beta + p.mu) * t)).exp();
            let b = b_tilde(p.mu, p.beta, p.k, p.t);
            match alg {
                Algorithm::FedSwa => Ok(pre * (b * p.l + b * p.sigma_g + b * p.sigma)),
                Algorithm::FedMoSwa => Ok(pre * (b * p.l + p.sigma_g + b * p.sigma)),
                other => Err(FedError::Unsupported(format!(
                    "no strongly convex bound for {other}"
                ))),
            }
        }
    }
}

/// `F = F_S(theta_0) - F_S(theta*)`, when the optimum is known.
pub fn initial_suboptimality<S: Scalar>(task: &TaskSpec<S>) -> Result<Option<f64>> {
    match &task.optimum {
        Some(opt) => Ok(Some(
            (task.train_loss(&task.initial)? - task.train_loss(opt)?).as_f64(),
        )),
        None => Ok(None),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    /// Samples per client.
    N,
    /// Number of clients.
    M,
    /// Heterogeneity knob of the task generator.
    SigmaG,
    /// Local steps per round.
    K,
    /// Rounds.
    T,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::N => "n",
            SweepAxis::M => "m",
            SweepAxis::SigmaG => "sigma_g",
            SweepAxis::K => "K",
            SweepAxis::T => "T",
        }
    }

    /// Config with this axis set to `value`. Full participation is kept
    /// when the base config has it.
    pub fn apply<S: Scalar>(self, base: &RunConfig<S>, value: f64) -> Result<RunConfig<S>> {
        let mut cfg = base.clone();
        let count = || -> Result<usize> {
            if value >= 1.0 && value.fract() == 0.0 {
                Ok(value as usize)
            } else {
                Err(FedError::invalid(self.name(), format!("needs a positive integer, got {value}")))
            }
        };
        match self {
            SweepAxis::N => cfg.task.samples = count()?,
            SweepAxis::M => {
                let full = base.participation == base.task.clients;
                cfg.task.clients = count()?;
                cfg.participation = if full {
                    cfg.task.clients
                } else {
                    base.participation.min(cfg.task.clients)
                };
            }
            SweepAxis::SigmaG => {
                if !(value >= 0.0) {
                    return Err(FedError::invalid("sigma_g", "knob must be >= 0"));
                }
                cfg.task.hetero_knob = value;
            }
            SweepAxis::K => cfg.sched.local_iters = count()?,
            SweepAxis::T => cfg.rounds = count()?,
        }
        Ok(cfg)
    }
}

impl std::fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for SweepAxis {
    type Err = FedError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "n" => Ok(SweepAxis::N),
            "m" => Ok(SweepAxis::M),
            "sigma_g" => Ok(SweepAxis::SigmaG),
            "K" | "k" => Ok(SweepAxis::K),
            "T" | "t" => Ok(SweepAxis::T),
            other => Err(FedError::invalid(
                "axis",
                format!("unknown axis `{other}` (expected n|m|sigma_g|K|T)"),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityRow {
    pub axis: SweepAxis,
    pub value: f64,
    pub trial: usize,
    pub gap_param: f64,
    pub gap_loss: f64,
    pub theory_bound: Option<f64>,
    /// Heterogeneity measured on this trial's task.
    pub sigma_g: f64,
    /// Lipschitz constant on the visited region, if known.
    pub lipschitz: Option<f64>,
    /// Largest distance of either final model from `theta_0`.
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityPoint {
    pub value: f64,
    pub gap_param: f64,
    pub gap_loss: f64,
    pub sigma_g: f64,
    pub theory_bound: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub axis: SweepAxis,
    pub algorithm: Algorithm,
    pub trials: usize,
    pub rows: Vec<StabilityRow>,
    pub points: Vec<StabilityPoint>,
    /// Least-squares slope of `ln gap_param` against `ln value`.
    pub loglog_slope: Option<f64>,
    /// Least-squares slope of `gap_param` against measured `sigma_g`.
    pub sigma_g_slope: Option<f64>,
}

impl StabilityReport {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(STABILITY_HEADER.split(','))?;
        for r in &self.rows {
            wr.write_record([
                r.axis.name().to_string(),
                r.value.to_string(),
                r.trial.to_string(),
                r.gap_param.to_string(),
                r.gap_loss.to_string(),
                r.theory_bound.map_or(String::new(), |b| b.to_string()),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }

    fn rows_for_trials(&self, trials: &[usize]) -> Vec<&StabilityRow> {
        trials
            .iter()
            .flat_map(|&t| self.rows.iter().filter(move |r| r.trial == t))
            .collect()
    }
}

/// Ordinary least-squares slope of `ys` against `xs`.
pub fn fit_slope(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    Some(sxy / sxx)
}

/// Slope of `ln y` against `ln x`; `None` if any value is non-positive.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.iter().chain(ys).any(|&v| !(v > 0.0)) {
        return None;
    }
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    fit_slope(&lx, &ly)
}

/// Seed of trial `r`: shared across sweep values (common random numbers).
pub fn trial_seed(base_seed: u64, trial: usize) -> u64 {
    rng::derive_seed(base_seed, &[Purpose::Trial as u64, trial as u64])
}

/// Bound inputs measured on a built task.
fn bound_params<S: Scalar>(
    cfg: &RunConfig<S>,
    task: &TaskSpec<S>,
    l: f64,
    sigma_g: f64,
) -> BoundParams {
    let batch = if cfg.batch_size == 0 { f64::INFINITY } else { cfg.batch_size as f64 };
    // logistic loss: Hessian <= ||(x, 1)||^2 / 4, and l = max ||(x, 1)||
    let beta = task.beta.unwrap_or(0.25 * l * l);
    BoundParams {
        l,
        beta,
        mu: task.mu.unwrap_or(0.0),
        // per-sample gradient noise sigma * xi, averaged over the batch
        sigma: task.noise_sigma * (task.dim as f64).sqrt() / batch.sqrt(),
        sigma_g,
        m: task.clients,
        n: task.samples_per_client,
        k: cfg.sched.local_iters,
        t: cfg.rounds,
    }
}

fn one_trial<S: Scalar>(
    axis: SweepAxis,
    value: f64,
    cfg_at: &RunConfig<S>,
    trial: usize,
) -> Result<StabilityRow> {
    let seed = trial_seed(cfg_at.seed, trial);
    let mut cfg = cfg_at.clone();
    cfg.seed = seed;
    cfg.task.seed = rng::derive_seed(seed, &[Purpose::TaskData as u64]);
    cfg.threads = 1;
    let task = cfg.task.build::<S>()?;
    let mut pick = rng::stream(seed, Purpose::Trial, trial as u64, 0);
    let client = pick.random_range(0..task.clients);
    let id = pick.random_range(0..task.samples_per_client) as u64;
    let twin = task.perturb_one_sample(client, id, seed)?;
    let out = twin_run_on(&cfg, task.clone(), twin, client, id)?;

    let pool = task.heldout_pool(HELDOUT_POOL, seed)?;
    let gap_loss = loss_gap(&task, &pool, &out.theta, &out.theta_twin)?;
    let radius = dist(&out.theta, &task.initial)?
        .as_f64()
        .max(dist(&out.theta_twin, &task.initial)?.as_f64());
    let lipschitz = pool_lipschitz(&task, &pool, &task.initial, radius);
    let at = task.optimum.as_ref().unwrap_or(&task.initial);
    let sigma_g = measure_sigma_g(&task, at)?.as_f64();

    let full = cfg.participation == cfg.task.clients;
    let theory = match (full, lipschitz, task.kind) {
        (true, Some(l), TaskKind::Quadratic) if cfg.algorithm.uses_swa() => Some(theory_bound(
            cfg.algorithm,
            Regime::StronglyConvex,
            &bound_params(&cfg, &task, l, sigma_g),
        )?),
        (true, Some(l), _) if cfg.algorithm.uses_swa() => Some(theory_bound(
            cfg.algorithm,
            Regime::Nonconvex,
            &bound_params(&cfg, &task, l, sigma_g),
        )?),
        _ => None,
    };
    Ok(StabilityRow {
        axis,
        value,
        trial,
        gap_param: out.final_gap(),
        gap_loss,
        theory_bound: theory,
        sigma_g,
        lipschitz,
        radius,
    })
}

fn summarize(values: &[f64], rows: &[&StabilityRow]) -> Vec<StabilityPoint> {
    values
        .iter()
        .map(|&v| {
            let here: Vec<&&StabilityRow> = rows.iter().filter(|r| r.value == v).collect();
            let k = here.len().max(1) as f64;
            let bounds: Vec<f64> = here.iter().filter_map(|r| r.theory_bound).collect();
            StabilityPoint {
                value: v,
                gap_param: here.iter().map(|r| r.gap_param).sum::<f64>() / k,
                gap_loss: here.iter().map(|r| r.gap_loss).sum::<f64>() / k,
                sigma_g: here.iter().map(|r| r.sigma_g).sum::<f64>() / k,
                theory_bound: (bounds.len() == here.len() && !bounds.is_empty())
                    .then(|| bounds.iter().sum::<f64>() / bounds.len() as f64),
            }
        })
        .collect()
}

fn slopes(axis: SweepAxis, points: &[StabilityPoint], rows: &[&StabilityRow]) -> (Option<f64>, Option<f64>) {
    let loglog = match axis {
        SweepAxis::SigmaG => None,
        _ => loglog_slope(
            &points.iter().map(|p| p.value).collect::<Vec<_>>(),
            &points.iter().map(|p| p.gap_param).collect::<Vec<_>>(),
        ),
    };
    let sg = fit_slope(
        &rows.iter().map(|r| r.sigma_g).collect::<Vec<_>>(),
        &rows.iter().map(|r| r.gap_param).collect::<Vec<_>>(),
    );
    (loglog, sg)
}

/// Sweeps `axis` over `values`, running `trials` twin pairs per value.
///
/// Trial `r` uses the same seeds at every value, so the curves are paired.
pub fn stability_sweep<S: Scalar>(
    base: &RunConfig<S>,
    axis: SweepAxis,
    values: &[f64],
    trials: usize,
) -> Result<StabilityReport> {
    if trials == 0 {
        return Err(FedError::invalid("trials", "must be >= 1"));
    }
    if values.is_empty() {
        return Err(FedError::Empty("sweep values"));
    }
    if values.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(FedError::invalid("values", "must be strictly ascending"));
    }
    let configs = values
        .iter()
        .map(|&v| axis.apply(base, v))
        .collect::<Result<Vec<_>>>()?;
    for c in &configs {
        c.validate()?;
    }
    let jobs: Vec<(usize, usize)> = (0..values.len())
        .flat_map(|vi| (0..trials).map(move |t| (vi, t)))
        .collect();
    let rows = jobs
        .par_iter()
        .map(|&(vi, t)| one_trial(axis, values[vi], &configs[vi], t))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&StabilityRow> = rows.iter().collect();
    let points = summarize(values, &refs);
    let (loglog, sg) = slopes(axis, &points, &refs);
    Ok(StabilityReport {
        axis,
        algorithm: base.algorithm,
        trials,
        rows,
        points,
        loglog_slope: loglog,
        sigma_g_slope: sg,
    })
}

/// Paired bootstrap of `a.sigma_g_slope - b.sigma_g_slope`, resampling
/// trial indices. Returns `(point estimate, lower, upper)` of the central
/// `level` interval.
pub fn bootstrap_slope_difference(
    a: &StabilityReport,
    b: &StabilityReport,
    resamples: usize,
    level: f64,
    seed: u64,
) -> Result<(f64, f64, f64)> {
    if a.trials != b.trials || a.axis != b.axis {
        return Err(FedError::invalid("reports", "sweeps are not paired"));
    }
    if resamples == 0 || !(level > 0.0 && level < 1.0) {
        return Err(FedError::invalid("bootstrap", "needs resamples >= 1 and level in (0, 1)"));
    }
    let slope_of = |r: &StabilityReport, trials: &[usize]| -> Option<f64> {
        let rows = r.rows_for_trials(trials);
        fit_slope(
            &rows.iter().map(|r| r.sigma_g).collect::<Vec<_>>(),
            &rows.iter().map(|r| r.gap_param).collect::<Vec<_>>(),
        )
    };
    let all: Vec<usize> = (0..a.trials).collect();
    let point = slope_of(a, &all)
        .zip(slope_of(b, &all))
        .map(|(x, y)| x - y)
        .ok_or(FedError::invalid("sigma_g", "slope undefined"))?;
    let mut r = rng::stream(seed, Purpose::Bootstrap, 0, 0);
    let mut diffs = Vec::with_capacity(resamples);
    for _ in 0..resamples {
        let pick: Vec<usize> = (0..a.trials).map(|_| r.random_range(0..a.trials)).collect();
        if let (Some(x), Some(y)) = (slope_of(a, &pick), slope_of(b, &pick)) {
            diffs.push(x - y);
        }
    }
    if diffs.is_empty() {
        return Err(FedError::Empty("bootstrap resamples"));
    }
    diffs.sort_by(|x, y| x.total_cmp(y));
    let q = |p: f64| diffs[((p * (diffs.len() - 1) as f64).round() as usize).min(diffs.len() - 1)];
    let tail = (1.0 - level) / 2.0;
    Ok((point, q(tail), q(1.0 - tail)))
}

/// Norm of `theta`'s distance from the twin, for callers outside the sweep.
pub fn param_gap<S: Scalar>(a: &ParamVec<S>, b: &ParamVec<S>) -> Result<f64> {
    Ok(l2_norm(&a.sub(b)?).as_f64())
}
