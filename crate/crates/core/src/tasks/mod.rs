//! Differentiable federated objectives.
//!
//! A [`TaskSpec`] bundles a per-sample loss with `m` client shards of exactly
//! `n` samples each. Client objectives are shard means, the global empirical
//! risk is the mean over clients.

mod linalg;
mod mixture;
mod partition;
mod quadratic;

pub use linalg::{random_orthogonal, spd_from_spectrum, symmetric_eigenvalues, Matrix};
pub use mixture::{make_logreg, make_mlp, LabelMixture, MixtureConfig, MlpShape};
pub use partition::{dirichlet_partition, sample_dirichlet, DirichletPartition};
pub use quadratic::{make_quadratic, quadratic_from_parts, QuadraticConfig};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{FedError, Result};
use crate::numkit::{dist, l2_norm, mean_vecs, ParamVec};
use crate::rng::{self, Purpose};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Quadratic,
    Logreg,
    Mlp,
}

impl std::str::FromStr for TaskKind {
    type Err = FedError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "quadratic" => Ok(TaskKind::Quadratic),
            "logreg" => Ok(TaskKind::Logreg),
            "mlp" => Ok(TaskKind::Mlp),
            other => Err(FedError::invalid(
                "task.kind",
                format!("unknown task `{other}` (expected quadratic|logreg|mlp)"),
            )),
        }
    }
}

impl std::fmt::Display for TaskKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TaskKind::Quadratic => "quadratic",
            TaskKind::Logreg => "logreg",
            TaskKind::Mlp => "mlp",
        })
    }
}

/// One training example. `id` is unique within its shard.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct Sample<S> {
    pub x: Vec<S>,
    pub y: S,
    pub id: u64,
}

/// Generating model behind a task; also defines the per-sample loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum TaskModel<S> {
    /// `l(theta; x) = 0.5 (theta - x)^T A_i (theta - x)`
    Quadratic {
        curvature: Vec<Matrix<S>>,
        centers: Vec<ParamVec<S>>,
    },
    /// Binary logistic regression on a Gaussian class mixture.
    Logreg { mixture: mixture::LabelMixture },
    /// One hidden tanh layer, softmax cross-entropy.
    Mlp {
        mixture: mixture::LabelMixture,
        shape: MlpShape,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct TaskSpec<S> {
    pub kind: TaskKind,
    /// Parameter dimension.
    pub dim: usize,
    pub clients: usize,
    pub samples_per_client: usize,
    pub hetero_knob: f64,
    pub noise_sigma: f64,
    pub seed: u64,
    /// Smallest / largest Hessian eigenvalue over clients (quadratic only).
    pub mu: Option<f64>,
    pub beta: Option<f64>,
    /// Minimizer of the empirical risk, when available in closed form.
    pub optimum: Option<ParamVec<S>>,
    /// Starting point of every run on this task.
    pub initial: ParamVec<S>,
    pub model: TaskModel<S>,
    pub shards: Vec<Vec<Sample<S>>>,
}

impl<S: Scalar> TaskSpec<S> {
    fn check_client(&self, client: usize) -> Result<()> {
        if client >= self.clients {
            return Err(FedError::UnknownClient {
                client,
                clients: self.clients,
            });
        }
        Ok(())
    }

    fn check_theta(&self, theta: &ParamVec<S>) -> Result<()> {
        if theta.len() != self.dim {
            return Err(FedError::DimensionMismatch {
                expected: self.dim,
                got: theta.len(),
            });
        }
        Ok(())
    }

    /// Position of `id` in the client's shard.
    pub fn sample_index(&self, client: usize, id: u64) -> Result<usize> {
        self.check_client(client)?;
        let shard = &self.shards[client];
        // ids are assigned as positions at construction
        match shard.get(id as usize) {
            Some(s) if s.id == id => Ok(id as usize),
            _ => shard
                .iter()
                .position(|s| s.id == id)
                .ok_or(FedError::UnknownSample { client, id }),
        }
    }

    /// Loss of one sample, accumulating `weight * grad` into `grad`.
    fn accumulate(&self, client: usize, theta: &[S], sample: &Sample<S>, weight: S, grad: &mut [S]) -> S {
        match &self.model {
            TaskModel::Quadratic { curvature, .. } => {
                quadratic::sample_loss_grad(&curvature[client], theta, sample, weight, grad)
            }
            TaskModel::Logreg { .. } => mixture::logreg_loss_grad(theta, sample, weight, grad),
            TaskModel::Mlp { shape, .. } => mixture::mlp_loss_grad(shape, theta, sample, weight, grad),
        }
    }

    /// Per-sample loss without a gradient.
    pub fn sample_loss(&self, client: usize, theta: &ParamVec<S>, sample: &Sample<S>) -> S {
        let mut scratch = vec![S::zero(); self.dim];
        self.accumulate(client, theta.as_slice(), sample, S::zero(), &mut scratch)
    }

    /// Mean loss and gradient over shard positions `idx` (repeats allowed).
    pub fn batch_loss_grad(&self, client: usize, theta: &ParamVec<S>, idx: &[usize]) -> (S, ParamVec<S>) {
        let shard = &self.shards[client];
        let w = S::one() / S::from_count(idx.len());
        let mut grad = vec![S::zero(); self.dim];
        let mut loss = S::zero();
        for &j in idx {
            loss = loss + self.accumulate(client, theta.as_slice(), &shard[j], w, &mut grad);
        }
        (loss * w, ParamVec::new(grad))
    }

    /// Mean loss and gradient over the samples named by `sample_ids`.
    pub fn loss_grad(&self, client: usize, theta: &ParamVec<S>, sample_ids: &[u64]) -> Result<(S, ParamVec<S>)> {
        self.check_theta(theta)?;
        if sample_ids.is_empty() {
            return Err(FedError::Empty("sample batch"));
        }
        let idx = sample_ids
            .iter()
            .map(|&id| self.sample_index(client, id))
            .collect::<Result<Vec<_>>>()?;
        Ok(self.batch_loss_grad(client, theta, &idx))
    }

    /// Full-shard loss and gradient of client `client`.
    pub fn client_loss_grad(&self, client: usize, theta: &ParamVec<S>) -> (S, ParamVec<S>) {
        let idx: Vec<usize> = (0..self.shards[client].len()).collect();
        self.batch_loss_grad(client, theta, &idx)
    }

    /// Empirical risk and its gradient, averaged over clients in index order.
    pub fn train_loss_grad(&self, theta: &ParamVec<S>) -> Result<(S, ParamVec<S>)> {
        self.check_theta(theta)?;
        let mut loss = S::zero();
        let mut grads = Vec::with_capacity(self.clients);
        for i in 0..self.clients {
            let (l, g) = self.client_loss_grad(i, theta);
            loss = loss + l;
            grads.push(g);
        }
        Ok((loss / S::from_count(self.clients), mean_vecs(&grads)?))
    }

    pub fn train_loss(&self, theta: &ParamVec<S>) -> Result<S> {
        Ok(self.train_loss_grad(theta)?.0)
    }

    /// Draws a fresh sample for `client` from its generating distribution.
    pub fn draw_sample<R: Rng>(&self, client: usize, id: u64, rng: &mut R) -> Result<Sample<S>> {
        self.check_client(client)?;
        Ok(match &self.model {
            TaskModel::Quadratic { curvature, centers } => quadratic::draw_sample(
                &curvature[client],
                &centers[client],
                self.noise_sigma,
                id,
                rng,
            )?,
            TaskModel::Logreg { mixture } | TaskModel::Mlp { mixture, .. } => {
                mixture.draw(client, id, rng)
            }
        })
    }

    /// Copy of the task with one sample's content replaced.
    pub fn replace_sample(&self, client: usize, id: u64, replacement: Sample<S>) -> Result<TaskSpec<S>> {
        let pos = self.sample_index(client, id)?;
        if replacement.x.len() != self.shards[client][pos].x.len() {
            return Err(FedError::DimensionMismatch {
                expected: self.shards[client][pos].x.len(),
                got: replacement.x.len(),
            });
        }
        let mut out = self.clone();
        out.shards[client][pos] = Sample { id, ..replacement };
        if let TaskModel::Quadratic { curvature, .. } = &out.model {
            out.optimum = Some(quadratic::empirical_optimum(curvature, &out.shards)?);
        }
        Ok(out)
    }

    /// Neighbouring dataset: sample `id` of `client` redrawn from the same
    /// generator. All randomness comes from `seed`.
    pub fn perturb_one_sample(&self, client: usize, id: u64, seed: u64) -> Result<TaskSpec<S>> {
        self.sample_index(client, id)?;
        let mut r = rng::stream(seed, Purpose::Replacement, client as u64, id);
        let fresh = self.draw_sample(client, id, &mut r)?;
        self.replace_sample(client, id, fresh)
    }

    /// Held-out pool of `(client, sample)` pairs from the generating mixture.
    pub fn heldout_pool(&self, count: usize, seed: u64) -> Result<Vec<(usize, Sample<S>)>> {
        let mut r = rng::stream(seed, Purpose::HeldOut, self.seed, 0);
        (0..count)
            .map(|k| {
                let client = r.random_range(0..self.clients);
                Ok((client, self.draw_sample(client, k as u64, &mut r)?))
            })
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// `(1/m) sum_i || grad F_i(theta) - grad F(theta) ||` with full-shard gradients.
pub fn measure_sigma_g<S: Scalar>(task: &TaskSpec<S>, theta: &ParamVec<S>) -> Result<S> {
    task.check_theta(theta)?;
    let grads: Vec<ParamVec<S>> = (0..task.clients)
        .map(|i| task.client_loss_grad(i, theta).1)
        .collect();
    let global = mean_vecs(&grads)?;
    let mut total = S::zero();
    for g in &grads {
        total = total + dist(g, &global)?;
    }
    Ok(total / S::from_count(task.clients))
}

/// Free-function form of [`TaskSpec::perturb_one_sample`].
pub fn perturb_one_sample<S: Scalar>(task: &TaskSpec<S>, client: usize, id: u64, seed: u64) -> Result<TaskSpec<S>> {
    task.perturb_one_sample(client, id, seed)
}

/// Norm of the full empirical gradient.
pub fn grad_norm<S: Scalar>(task: &TaskSpec<S>, theta: &ParamVec<S>) -> Result<S> {
    Ok(l2_norm(&task.train_loss_grad(theta)?.1))
}
