//! Round loop: client sampling, local work, control updates, aggregation and
//! per-round metrics.
//!
//! Client work inside a round may run on a thread pool. Each client draws
//! from its own stream keyed by `(seed, client, round)` and results are
//! reduced in ascending client order, so output does not depend on the
//! number of threads.

use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::algorithms::{
    control_update, local_update_fedavg, local_update_fedmoswa, local_update_fedsam,
    local_update_mofedsam, local_update_scaffold, scaffold_control_update, server_aggregate,
    server_control_update, AlgoConfig, Algorithm, BatchMode, ClientState, CtrlInit, CtrlOption,
    LocalCtx, LocalOutcome, ServerState,
};
use crate::error::{FedError, Result};
use crate::numkit::{dist, dist_sq, l2_norm, mean_vecs, ParamVec};
use crate::rng::{self, Purpose};
use crate::scalar::Scalar;
use crate::schedules::{sum_lrs, LrSchedule};
use crate::tasks::{
    make_logreg, make_mlp, make_quadratic, measure_sigma_g, MixtureConfig, QuadraticConfig,
    TaskKind, TaskSpec,
};

/// Column header of the metrics CSV.
pub const METRICS_HEADER: &str =
    "round,train_loss,dist_to_opt,grad_norm,client_drift,control_lag,sigma_g,wall_ms";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskConfig {
    pub kind: TaskKind,
    /// Feature dimension (equals the parameter dimension for quadratics).
    pub dim: usize,
    pub clients: usize,
    pub samples: usize,
    pub hetero_knob: f64,
    pub noise_sigma: f64,
    pub mu: f64,
    pub beta: f64,
    pub concentration: f64,
    pub classes: usize,
    pub hidden: usize,
    pub seed: u64,
}

impl Default for TaskConfig {
    fn default() -> Self {
        Self {
            kind: TaskKind::Quadratic,
            dim: 5,
            clients: 20,
            samples: 50,
            hetero_knob: 1.0,
            noise_sigma: 0.1,
            mu: 0.5,
            beta: 2.0,
            concentration: 0.3,
            classes: 2,
            hidden: 16,
            seed: 0,
        }
    }
}

impl TaskConfig {
    pub fn build<S: Scalar>(&self) -> Result<TaskSpec<S>> {
        match self.kind {
            TaskKind::Quadratic => make_quadratic(&QuadraticConfig {
                dim: self.dim,
                clients: self.clients,
                samples: self.samples,
                hetero_knob: self.hetero_knob,
                noise_sigma: self.noise_sigma,
                mu: self.mu,
                beta: self.beta,
                seed: self.seed,
            }),
            TaskKind::Logreg => make_logreg(&self.mixture()),
            TaskKind::Mlp => make_mlp(&self.mixture(), self.hidden),
        }
    }

    fn mixture(&self) -> MixtureConfig {
        MixtureConfig {
            features: self.dim,
            clients: self.clients,
            samples: self.samples,
            classes: self.classes,
            concentration: self.concentration,
            hetero_knob: self.hetero_knob,
            separation: 1.5,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct RunConfig<S> {
    pub task: TaskConfig,
    pub algorithm: Algorithm,
    pub algo: AlgoConfig<S>,
    pub sched: LrSchedule<S>,
    /// Number of communication rounds `T`.
    pub rounds: usize,
    /// Clients sampled per round `s`.
    pub participation: usize,
    /// Minibatch size; `0` means full shard (exact gradients).
    pub batch_size: usize,
    pub seed: u64,
    /// Retain local trajectories to report client drift.
    pub diagnostics: bool,
    /// Worker threads for client work inside a round.
    pub threads: usize,
}

impl<S: Scalar> Default for RunConfig<S> {
    fn default() -> Self {
        Self {
            task: TaskConfig::default(),
            algorithm: Algorithm::FedMoSwa,
            algo: AlgoConfig::default(),
            sched: LrSchedule {
                eta_l: S::lit(0.05),
                rho: S::lit(0.1),
                local_iters: 10,
                round_decay: S::lit(0.998),
            },
            rounds: 100,
            participation: 4,
            batch_size: 10,
            seed: 0,
            diagnostics: false,
            threads: 1,
        }
    }
}

impl<S: Scalar> RunConfig<S> {
    pub fn validate(&self) -> Result<()> {
        self.sched.validate()?;
        self.algo.validate()?;
        if self.task.clients == 0 {
            return Err(FedError::invalid("task.clients", "must be >= 1"));
        }
        if self.participation == 0 || self.participation > self.task.clients {
            return Err(FedError::invalid(
                "participation",
                format!("must lie in 1..={}, got {}", self.task.clients, self.participation),
            ));
        }
        if self.threads == 0 {
            return Err(FedError::invalid("threads", "must be >= 1"));
        }
        Ok(())
    }

    pub fn batch_mode(&self) -> BatchMode {
        match self.batch_size {
            0 => BatchMode::Full,
            b => BatchMode::Sampled(b),
        }
    }

    /// Step sizes of round `t` for this algorithm.
    pub fn round_lrs(&self, t: usize) -> Vec<S> {
        if self.algorithm.uses_swa() {
            self.sched.round_lrs(t)
        } else {
            self.sched.flattened().round_lrs(t)
        }
    }

    /// Server EMA coefficient in effect (`1` for the averaging baselines).
    pub fn effective_alpha(&self) -> S {
        if self.algorithm.uses_swa() {
            self.algo.alpha
        } else {
            S::one()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub train_loss: f64,
    pub dist_to_opt: Option<f64>,
    pub grad_norm: f64,
    pub client_drift: Option<f64>,
    pub control_lag: Option<f64>,
    pub sigma_g: f64,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub records: Vec<RoundRecord>,
}

impl RunMetrics {
    pub fn last(&self) -> Option<&RoundRecord> {
        self.records.last()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::WriterBuilder::new().has_headers(false).from_writer(w);
        wr.write_record(METRICS_HEADER.split(','))?;
        for r in &self.records {
            wr.serialize(r)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }
}

/// Drops the trailing `wall_ms` column, the only nondeterministic field.
pub fn strip_wall_ms(csv: &str) -> String {
    csv.lines()
        .map(|l| l.rsplit_once(',').map_or(l, |(head, _)| head))
        .collect::<Vec<_>>()
        .join("\n")
}

/// JSON document mirroring the config and its records.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct RunReport<S> {
    pub config: RunConfig<S>,
    pub records: Vec<RoundRecord>,
}

/// `s` distinct clients out of `m`, uniformly, ascending.
pub fn sample_clients(m: usize, s: usize, seed: u64, round: usize) -> Vec<usize> {
    if s >= m {
        return (0..m).collect();
    }
    let mut r = rng::stream(seed, Purpose::ClientSampling, 0, round as u64);
    let mut picked = rand::seq::index::sample(&mut r, m, s).into_vec();
    picked.sort_unstable();
    picked
}

/// Output of one client's local work.
#[derive(Debug, Clone)]
pub struct ClientUpdate<S> {
    pub client: usize,
    pub local: LocalOutcome<S>,
    pub ctrl_plus: Option<ParamVec<S>>,
}

pub struct Simulation<S: Scalar> {
    pub cfg: RunConfig<S>,
    pub task: TaskSpec<S>,
    pub server: ServerState<S>,
    pub clients: Vec<ClientState<S>>,
    /// Keep per-client local outcomes of the latest round.
    pub keep_updates: bool,
    pub last_updates: Vec<ClientUpdate<S>>,
    pool: Option<rayon::ThreadPool>,
}

impl<S: Scalar> Simulation<S> {
    pub fn new(cfg: RunConfig<S>) -> Result<Self> {
        cfg.validate()?;
        let task = cfg.task.build()?;
        Self::with_task(cfg, task)
    }

    /// Simulation on an explicit task (e.g. a neighbouring dataset).
    pub fn with_task(cfg: RunConfig<S>, task: TaskSpec<S>) -> Result<Self> {
        cfg.validate()?;
        if task.clients != cfg.task.clients {
            return Err(FedError::invalid("task.clients", "task and config disagree"));
        }
        let mut server = ServerState::new(cfg.algorithm, task.initial.clone());
        let mut clients: Vec<ClientState<S>> =
            (0..task.clients).map(|i| ClientState::new(i, task.dim)).collect();
        if cfg.algorithm.has_controls() && cfg.algo.ctrl_init == CtrlInit::Gradient {
            for c in clients.iter_mut() {
                c.ctrl = task.client_loss_grad(c.id, &server.theta).1;
            }
            let ctrls: Vec<_> = clients.iter().map(|c| c.ctrl.clone()).collect();
            server.sctl = mean_vecs(&ctrls)?;
        }
        let pool = if cfg.threads > 1 {
            Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(cfg.threads)
                    .build()
                    .map_err(|e| FedError::Io(e.to_string()))?,
            )
        } else {
            None
        };
        Ok(Self {
            cfg,
            task,
            server,
            clients,
            keep_updates: false,
            last_updates: Vec::new(),
            pool,
        })
    }

    fn client_work(&self, client: usize, lrs: &[S]) -> Result<ClientUpdate<S>> {
        let cfg = &self.cfg;
        let t = self.server.round;
        let mut r = rng::stream(cfg.seed, Purpose::LocalBatches, client as u64, t as u64);
        let ctx = LocalCtx {
            task: &self.task,
            client,
            lrs,
            batch: cfg.batch_mode(),
            trace: cfg.diagnostics || self.keep_updates,
        };
        let theta = &self.server.theta;
        let ctrl_i = &self.clients[client].ctrl;
        let (local, ctrl_plus) = match cfg.algorithm {
            Algorithm::FedAvg | Algorithm::FedSwa => (local_update_fedavg(&ctx, theta, &mut r)?, None),
            Algorithm::FedSam => (
                local_update_fedsam(&ctx, theta, cfg.algo.sam_radius, &mut r)?,
                None,
            ),
            Algorithm::MoFedSam => (
                local_update_mofedsam(
                    &ctx,
                    theta,
                    &self.server.delta_prev,
                    cfg.algo.sam_radius,
                    cfg.algo.mom_beta,
                    &mut r,
                )?,
                None,
            ),
            Algorithm::Scaffold => {
                let (out, plus) = local_update_scaffold(
                    &ctx,
                    theta,
                    ctrl_i,
                    &self.server.sctl,
                    cfg.algo.ctrl_option,
                    &mut r,
                )?;
                (out, Some(plus))
            }
            Algorithm::FedMoSwa => {
                let out = local_update_fedmoswa(&ctx, theta, ctrl_i, &self.server.sctl, &mut r)?;
                let fresh = match cfg.algo.ctrl_option {
                    CtrlOption::I => Some(self.task.client_loss_grad(client, theta).1),
                    CtrlOption::II => None,
                };
                let plus = control_update(
                    cfg.algo.ctrl_option,
                    theta,
                    &out.theta,
                    ctrl_i,
                    &self.server.sctl,
                    sum_lrs(lrs),
                    fresh.as_ref(),
                )?;
                (out, Some(plus))
            }
        };
        Ok(ClientUpdate {
            client,
            local,
            ctrl_plus,
        })
    }

    /// Metrics of the current server state; `drift` comes from the round.
    pub fn measure(&self, drift: Option<f64>, wall_ms: f64) -> Result<RoundRecord> {
        let theta = &self.server.theta;
        let (loss, grad) = self.task.train_loss_grad(theta)?;
        let dist_to_opt = match &self.task.optimum {
            Some(opt) => Some(dist(theta, opt)?.as_f64()),
            None => None,
        };
        Ok(RoundRecord {
            round: self.server.round,
            train_loss: loss.as_f64(),
            dist_to_opt,
            grad_norm: l2_norm(&grad).as_f64(),
            client_drift: drift,
            control_lag: self.control_lag()?,
            sigma_g: measure_sigma_g(&self.task, theta)?.as_f64(),
            wall_ms,
        })
    }

    /// `(1/m) sum_j || c_j - grad F_j(theta*) ||^2`, when `theta*` is known
    /// and the algorithm keeps controls.
    pub fn control_lag(&self) -> Result<Option<f64>> {
        let Some(opt) = &self.task.optimum else {
            return Ok(None);
        };
        if !self.cfg.algorithm.has_controls() {
            return Ok(None);
        }
        let ctrls: Vec<_> = self.clients.iter().map(|c| c.ctrl.clone()).collect();
        Ok(Some(measure_control_lag(&self.task, &ctrls, opt)?.as_f64()))
    }

    /// One communication round.
    pub fn run_round(&mut self) -> Result<RoundRecord> {
        let start = Instant::now();
        let t = self.server.round;
        let m = self.task.clients;
        let selected = sample_clients(m, self.cfg.participation, self.cfg.seed, t);
        let lrs = self.cfg.round_lrs(t);

        let updates: Vec<ClientUpdate<S>> = match &self.pool {
            Some(pool) => pool.install(|| {
                selected
                    .par_iter()
                    .map(|&i| self.client_work(i, &lrs))
                    .collect::<Result<Vec<_>>>()
            })?,
            None => selected
                .iter()
                .map(|&i| self.client_work(i, &lrs))
                .collect::<Result<Vec<_>>>()?,
        };

        for u in &updates {
            if !u.local.theta.is_finite() {
                return Err(self.non_finite(t, format!("client {} local model", u.client), &updates));
            }
        }

        // control updates, in ascending client order
        match self.cfg.algorithm {
            Algorithm::FedMoSwa => {
                let deltas = updates
                    .iter()
                    .map(|u| u.ctrl_plus.as_ref().expect("controlled").sub(&self.server.sctl))
                    .collect::<Result<Vec<_>>>()?;
                self.server.sctl = server_control_update(&self.server.sctl, &deltas, self.cfg.algo.gamma)?;
            }
            Algorithm::Scaffold => {
                let diffs = updates
                    .iter()
                    .map(|u| {
                        u.ctrl_plus
                            .as_ref()
                            .expect("controlled")
                            .sub(&self.clients[u.client].ctrl)
                    })
                    .collect::<Result<Vec<_>>>()?;
                self.server.sctl = scaffold_control_update(&self.server.sctl, &diffs, m)?;
            }
            _ => {}
        }
        for u in &updates {
            let c = &mut self.clients[u.client];
            if let Some(plus) = &u.ctrl_plus {
                c.ctrl = plus.clone();
            }
            c.participations += 1;
        }

        let models: Vec<ParamVec<S>> = updates.iter().map(|u| u.local.theta.clone()).collect();
        let prev = self.server.theta.clone();
        let next = server_aggregate(&prev, &models, self.cfg.effective_alpha())?;
        if self.cfg.algorithm == Algorithm::MoFedSam {
            let total = sum_lrs(&lrs);
            self.server.delta_prev = if total > S::zero() {
                prev.sub(&next)?.scale(S::one() / total)
            } else {
                ParamVec::zeros(prev.len())
            };
        }
        self.server.theta = next;
        if !self.server.theta.is_finite() || !self.server.sctl.is_finite() {
            return Err(self.non_finite(t, "server model or control".into(), &updates));
        }
        if self.cfg.algo.swa_tracker {
            self.server.update_swa()?;
        }
        self.server.round += 1;

        let drift = if self.cfg.diagnostics {
            Some(measure_client_drift(&prev, &updates)?.as_f64())
        } else {
            None
        };
        let wall = start.elapsed().as_secs_f64() * 1e3;
        let record = self.measure(drift, wall)?;
        if self.keep_updates {
            self.last_updates = updates;
        }
        Ok(record)
    }

    fn non_finite(&self, round: usize, what: String, updates: &[ClientUpdate<S>]) -> FedError {
        let norms: Vec<String> = updates
            .iter()
            .map(|u| format!("client {}: |theta_K| = {}", u.client, l2_norm(&u.local.theta)))
            .collect();
        FedError::NonFinite {
            round,
            detail: format!(
                "{what}; |theta_prev| = {}, |sctl| = {}; {}",
                l2_norm(&self.server.theta),
                l2_norm(&self.server.sctl),
                norms.join(", ")
            ),
        }
    }

    /// Runs all configured rounds, recording the initial state as round 0.
    pub fn run(&mut self) -> Result<RunMetrics> {
        let mut records = Vec::with_capacity(self.cfg.rounds + 1);
        records.push(self.measure(None, 0.0)?);
        for _ in 0..self.cfg.rounds {
            records.push(self.run_round()?);
        }
        Ok(RunMetrics { records })
    }
}

/// `E_t = (1/(K s)) sum_k sum_i || theta_{i,k} - theta_{t-1} ||^2` over the
/// participating clients. Needs traced trajectories.
pub fn measure_client_drift<S: Scalar>(
    theta_prev: &ParamVec<S>,
    updates: &[ClientUpdate<S>],
) -> Result<S> {
    let mut total = S::zero();
    let mut count = 0usize;
    for u in updates {
        if u.local.trajectory.is_empty() {
            return Err(FedError::invalid("diagnostics", "local trajectories were not retained"));
        }
        for th in &u.local.trajectory {
            total = total + dist_sq(th, theta_prev)?;
            count += 1;
        }
    }
    if count == 0 {
        return Err(FedError::Empty("client trajectories"));
    }
    Ok(total / S::from_count(count))
}

/// `C_t = (1/m) sum_j || c_j - grad F_j(theta*) ||^2`.
pub fn measure_control_lag<S: Scalar>(
    task: &TaskSpec<S>,
    ctrls: &[ParamVec<S>],
    optimum: &ParamVec<S>,
) -> Result<S> {
    if ctrls.len() != task.clients {
        return Err(FedError::DimensionMismatch {
            expected: task.clients,
            got: ctrls.len(),
        });
    }
    let mut total = S::zero();
    for (j, c) in ctrls.iter().enumerate() {
        let g = task.client_loss_grad(j, optimum).1;
        total = total + dist_sq(c, &g)?;
    }
    Ok(total / S::from_count(task.clients))
}

/// Builds the task and runs every round.
pub fn run_experiment<S: Scalar>(cfg: &RunConfig<S>) -> Result<RunMetrics> {
    Simulation::new(cfg.clone())?.run()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tasks::{quadratic_from_parts, Matrix};

    fn small_cfg(alg: Algorithm) -> RunConfig<f64> {
        RunConfig {
            task: TaskConfig {
                dim: 3,
                clients: 6,
                samples: 20,
                ..Default::default()
            },
            algorithm: alg,
            rounds: 5,
            participation: 3,
            batch_size: 4,
            ..Default::default()
        }
    }

    #[test]
    fn zero_rounds_records_initial_state_only() {
        let cfg = RunConfig { rounds: 0, ..small_cfg(Algorithm::FedAvg) };
        let m = run_experiment(&cfg).unwrap();
        assert_eq!(m.records.len(), 1);
        assert_eq!(m.records[0].round, 0);
    }

    #[test]
    fn replay_is_identical() {
        for alg in Algorithm::ALL {
            let cfg = small_cfg(alg);
            let a = run_experiment(&cfg).unwrap().to_csv_string().unwrap();
            let b = run_experiment(&cfg).unwrap().to_csv_string().unwrap();
            assert_eq!(strip_wall_ms(&a), strip_wall_ms(&b), "{alg}");
        }
    }

    #[test]
    fn csv_header_and_absent_fields() {
        let m = run_experiment(&small_cfg(Algorithm::FedAvg)).unwrap();
        let csv = m.to_csv_string().unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), METRICS_HEADER);
        // drift off, no controls: empty cells
        let row: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(row.len(), 8);
        assert_eq!(row[4], "");
        assert_eq!(row[5], "");
    }

    #[test]
    fn full_participation_fedavg_round_is_mean_of_local_runs() {
        let cfg = RunConfig {
            participation: 6,
            rounds: 1,
            ..small_cfg(Algorithm::FedAvg)
        };
        let mut sim = Simulation::new(cfg.clone()).unwrap();
        let theta0 = sim.server.theta.clone();
        sim.run_round().unwrap();
        let lrs = cfg.round_lrs(0);
        let locals: Vec<_> = (0..6)
            .map(|i| {
                let ctx = LocalCtx { task: &sim.task, client: i, lrs: &lrs, batch: cfg.batch_mode(), trace: false };
                let mut r = rng::stream(cfg.seed, Purpose::LocalBatches, i as u64, 0);
                local_update_fedavg(&ctx, &theta0, &mut r).unwrap().theta
            })
            .collect();
        assert_eq!(sim.server.theta, mean_vecs(&locals).unwrap());
    }

    #[test]
    fn sampling_is_uniform() {
        let mut counts = [0usize; 10];
        let rounds = 10_000;
        for t in 0..rounds {
            let s = sample_clients(10, 3, 99, t);
            assert_eq!(s.len(), 3);
            assert!(s.windows(2).all(|w| w[0] < w[1]));
            for i in s {
                counts[i] += 1;
            }
        }
        for c in counts {
            let f = c as f64 / rounds as f64;
            assert!((f - 0.3).abs() < 0.02, "frequency {f}");
        }
    }

    #[test]
    fn train_loss_recomputes() {
        let mut sim = Simulation::new(small_cfg(Algorithm::FedSwa)).unwrap();
        let m = sim.run().unwrap();
        let again = sim.task.train_loss(&sim.server.theta).unwrap();
        assert!((m.last().unwrap().train_loss - again).abs() <= 1e-12);
    }

    #[test]
    fn drift_is_absent_without_diagnostics_and_zero_for_zero_steps() {
        let m = run_experiment(&small_cfg(Algorithm::FedSwa)).unwrap();
        assert!(m.records.iter().all(|r| r.client_drift.is_none()));
        let mut cfg = small_cfg(Algorithm::FedAvg);
        cfg.diagnostics = true;
        cfg.sched.eta_l = 0.0;
        cfg.sched.local_iters = 1;
        let m = run_experiment(&cfg).unwrap();
        assert!(m.records[1..].iter().all(|r| r.client_drift == Some(0.0)));
    }

    #[test]
    fn homogeneous_drift_terms_are_equal() {
        let cfg: RunConfig<f64> = RunConfig {
            task: TaskConfig {
                hetero_knob: 0.0,
                noise_sigma: 0.0,
                dim: 3,
                clients: 4,
                samples: 5,
                ..Default::default()
            },
            algorithm: Algorithm::FedAvg,
            participation: 4,
            batch_size: 0,
            rounds: 1,
            diagnostics: true,
            ..Default::default()
        };
        let mut sim = Simulation::new(cfg).unwrap();
        sim.keep_updates = true;
        let theta0 = sim.server.theta.clone();
        sim.run_round().unwrap();
        let per_client: Vec<f64> = sim
            .last_updates
            .iter()
            .map(|u| u.local.trajectory.iter().map(|t| dist_sq(t, &theta0).unwrap()).sum())
            .collect();
        for v in &per_client {
            assert!((v - per_client[0]).abs() < 1e-13);
        }
    }

    #[test]
    fn control_lag_hand_example() {
        // A = I, b = [0], [2]: theta* = 1, grad F_j(theta*) = theta* - b_j
        let task = quadratic_from_parts(
            vec![Matrix::identity(1); 2],
            vec![ParamVec::from_f64(&[0.0]), ParamVec::from_f64(&[2.0])],
            3,
            0.0,
            0,
        )
        .unwrap();
        let opt = task.optimum.clone().unwrap();
        let zero = vec![ParamVec::zeros(1); 2];
        // (1/2)(||b_1 - bbar||^2 + ||b_2 - bbar||^2) = 1
        assert!((measure_control_lag::<f64>(&task, &zero, &opt).unwrap() - 1.0).abs() < 1e-15);
        let exact: Vec<_> = (0..2).map(|j| task.client_loss_grad(j, &opt).1).collect();
        assert_eq!(measure_control_lag(&task, &exact, &opt).unwrap(), 0.0);
    }

    #[test]
    fn divergence_aborts() {
        let mut cfg = small_cfg(Algorithm::FedAvg);
        cfg.sched.eta_l = 50.0;
        cfg.rounds = 200;
        let err = run_experiment(&cfg).unwrap_err();
        assert!(matches!(err, FedError::NonFinite { .. }), "{err}");
    }

    #[test]
    fn participation_bounds() {
        let mut cfg = small_cfg(Algorithm::FedAvg);
        cfg.participation = 7;
        assert!(run_experiment(&cfg).is_err());
        cfg.participation = 0;
        assert!(run_experiment(&cfg).is_err());
    }

    #[test]
    fn gradient_initialised_controls() {
        let mut cfg = small_cfg(Algorithm::FedMoSwa);
        cfg.algo.ctrl_init = CtrlInit::Gradient;
        let sim = Simulation::new(cfg).unwrap();
        let g = sim.task.client_loss_grad(2, &sim.server.theta).1;
        assert_eq!(sim.clients[2].ctrl, g);
        assert!(l2_norm(&sim.server.sctl) > 0.0);
    }
}
