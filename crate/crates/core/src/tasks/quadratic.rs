//! Heterogeneous quadratic clients.
//!
//! Client `i` has curvature `A_i` (SPD, spectrum in `[mu, beta]`) and
//! population centre `b_i`. Its samples are `x = b_i + sigma * A_i^{-1} xi`
//! with `xi ~ N(0, I)`, so a single-sample gradient `A_i (theta - x)` deviates
//! from the population gradient by exactly `sigma * xi`.
//!
//! `hetero_knob` moves clients apart in two ways at once: centres spread as
//! `b_i = b_0 + knob * u_i`, and curvatures blend from a shared `A_0` toward
//! client-specific matrices with weight `knob / (1 + knob)`. At `knob = 0`
//! every client has the same objective.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::linalg::{random_orthogonal, spd_from_spectrum, symmetric_eigenvalues, Matrix};
use super::{Sample, TaskKind, TaskModel, TaskSpec};
use crate::error::{FedError, Result};
use crate::numkit::ParamVec;
use crate::rng::{self, Purpose};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticConfig {
    pub dim: usize,
    pub clients: usize,
    pub samples: usize,
    pub hetero_knob: f64,
    pub noise_sigma: f64,
    pub mu: f64,
    pub beta: f64,
    pub seed: u64,
}

impl Default for QuadraticConfig {
    fn default() -> Self {
        Self {
            dim: 5,
            clients: 10,
            samples: 50,
            hetero_knob: 1.0,
            noise_sigma: 0.0,
            mu: 0.5,
            beta: 2.0,
            seed: 0,
        }
    }
}

pub(super) fn sample_loss_grad<S: Scalar>(
    a: &Matrix<S>,
    theta: &[S],
    sample: &Sample<S>,
    weight: S,
    grad: &mut [S],
) -> S {
    let diff: Vec<S> = theta.iter().zip(&sample.x).map(|(&t, &x)| t - x).collect();
    let ad = a.matvec(&diff);
    let mut quad = S::zero();
    for ((g, &adv), &d) in grad.iter_mut().zip(&ad).zip(&diff) {
        *g = *g + weight * adv;
        quad = quad + adv * d;
    }
    S::lit(0.5) * quad
}

pub(super) fn draw_sample<S: Scalar, R: Rng>(
    a: &Matrix<S>,
    center: &ParamVec<S>,
    sigma: f64,
    id: u64,
    rng: &mut R,
) -> Result<Sample<S>> {
    let xi: Vec<S> = (0..a.n)
        .map(|_| S::lit(sigma * rng.sample::<f64, _>(StandardNormal)))
        .collect();
    let offset = if sigma == 0.0 {
        vec![S::zero(); a.n]
    } else {
        a.solve_spd(&xi)?
    };
    Ok(Sample {
        x: center.iter().zip(&offset).map(|(&c, &o)| c + o).collect(),
        y: S::zero(),
        id,
    })
}

/// `(sum_i A_i)^{-1} sum_i A_i xbar_i` where `xbar_i` is the shard mean.
pub(super) fn empirical_optimum<S: Scalar>(
    curvature: &[Matrix<S>],
    shards: &[Vec<Sample<S>>],
) -> Result<ParamVec<S>> {
    let d = curvature[0].n;
    let mut a_sum = Matrix::zeros(d);
    let mut rhs = vec![S::zero(); d];
    for (a, shard) in curvature.iter().zip(shards) {
        let inv_n = S::one() / S::from_count(shard.len());
        let mut mean = vec![S::zero(); d];
        for s in shard {
            for (m, &x) in mean.iter_mut().zip(&s.x) {
                *m = *m + x;
            }
        }
        mean.iter_mut().for_each(|m| *m = *m * inv_n);
        let am = a.matvec(&mean);
        for (r, v) in rhs.iter_mut().zip(am) {
            *r = *r + v;
        }
        a_sum = a_sum.add(a);
    }
    Ok(ParamVec::new(a_sum.solve_spd(&rhs)?))
}

/// Builds a quadratic task from explicit curvatures and centres.
pub fn quadratic_from_parts<S: Scalar>(
    curvature: Vec<Matrix<S>>,
    centers: Vec<ParamVec<S>>,
    samples: usize,
    noise_sigma: f64,
    seed: u64,
) -> Result<TaskSpec<S>> {
    build(curvature, centers, samples, noise_sigma, 0.0, seed)
}

fn build<S: Scalar>(
    curvature: Vec<Matrix<S>>,
    centers: Vec<ParamVec<S>>,
    samples: usize,
    noise_sigma: f64,
    hetero_knob: f64,
    seed: u64,
) -> Result<TaskSpec<S>> {
    let clients = curvature.len();
    if clients == 0 {
        return Err(FedError::invalid("clients", "must be >= 1"));
    }
    if centers.len() != clients {
        return Err(FedError::DimensionMismatch {
            expected: clients,
            got: centers.len(),
        });
    }
    if samples == 0 {
        return Err(FedError::invalid("samples", "must be >= 1"));
    }
    if !(noise_sigma >= 0.0) {
        return Err(FedError::invalid("noise_sigma", "must be >= 0"));
    }
    let dim = curvature[0].n;
    if dim == 0 {
        return Err(FedError::invalid("dim", "must be >= 1"));
    }
    let mut mu = f64::INFINITY;
    let mut beta = 0.0f64;
    for (a, b) in curvature.iter().zip(&centers) {
        if a.n != dim || b.len() != dim {
            return Err(FedError::DimensionMismatch {
                expected: dim,
                got: if a.n != dim { a.n } else { b.len() },
            });
        }
        let ev = symmetric_eigenvalues(&a.cast::<f64>());
        if ev[0] <= 0.0 {
            return Err(FedError::invalid("curvature", "matrix is not positive definite"));
        }
        mu = mu.min(ev[0]);
        beta = beta.max(ev[dim - 1]);
    }
    let mut shards = Vec::with_capacity(clients);
    for (i, (a, b)) in curvature.iter().zip(&centers).enumerate() {
        let mut r = rng::stream(seed, Purpose::TaskData, i as u64, 1);
        let shard = (0..samples as u64)
            .map(|id| draw_sample(a, b, noise_sigma, id, &mut r))
            .collect::<Result<Vec<_>>>()?;
        shards.push(shard);
    }
    let optimum = empirical_optimum(&curvature, &shards)?;
    Ok(TaskSpec {
        kind: TaskKind::Quadratic,
        dim,
        clients,
        samples_per_client: samples,
        hetero_knob,
        noise_sigma,
        seed,
        mu: Some(mu),
        beta: Some(beta),
        optimum: Some(optimum),
        initial: ParamVec::zeros(dim),
        model: TaskModel::Quadratic { curvature, centers },
        shards,
    })
}

/// Random heterogeneous quadratic task.
///
/// All structural randomness is drawn before `hetero_knob` is applied, so
/// tasks that differ only in the knob share the same underlying draws.
pub fn make_quadratic<S: Scalar>(cfg: &QuadraticConfig) -> Result<TaskSpec<S>> {
    let QuadraticConfig {
        dim,
        clients,
        samples,
        hetero_knob,
        noise_sigma,
        mu,
        beta,
        seed,
    } = *cfg;
    if dim == 0 {
        return Err(FedError::invalid("dim", "must be >= 1"));
    }
    if clients == 0 {
        return Err(FedError::invalid("clients", "must be >= 1"));
    }
    if !(hetero_knob >= 0.0) || !hetero_knob.is_finite() {
        return Err(FedError::invalid("hetero_knob", "must be >= 0"));
    }
    if !(mu > 0.0 && beta >= mu) {
        return Err(FedError::invalid("mu/beta", "need 0 < mu <= beta"));
    }
    let mut r = rng::stream(seed, Purpose::TaskData, u64::MAX, 0);
    let spectrum = |r: &mut rng::StreamRng| -> Vec<f64> {
        // endpoints pinned so the recorded range is attained
        let mut l: Vec<f64> = (0..dim).map(|_| r.random_range(mu..=beta)).collect();
        l[0] = mu;
        if dim > 1 {
            l[dim - 1] = beta;
        }
        l
    };
    let q0 = random_orthogonal(dim, &mut r);
    let l0 = spectrum(&mut r);
    let a0 = spd_from_spectrum(&q0, &l0);
    let b0: Vec<f64> = (0..dim).map(|_| r.sample(StandardNormal)).collect();
    let mut own = Vec::with_capacity(clients);
    let mut spread = Vec::with_capacity(clients);
    for _ in 0..clients {
        let qi = random_orthogonal(dim, &mut r);
        let li = spectrum(&mut r);
        own.push(spd_from_spectrum(&qi, &li));
        spread.push((0..dim).map(|_| r.sample(StandardNormal)).collect::<Vec<f64>>());
    }
    let w = hetero_knob / (1.0 + hetero_knob);
    let curvature: Vec<Matrix<S>> = own
        .iter()
        .map(|ai| a0.scale(1.0 - w).add(&ai.scale(w)).cast())
        .collect();
    let centers: Vec<ParamVec<S>> = spread
        .iter()
        .map(|u| {
            ParamVec::new(
                b0.iter()
                    .zip(u)
                    .map(|(&b, &ui)| S::lit(b + hetero_knob * ui))
                    .collect(),
            )
        })
        .collect();
    build(curvature, centers, samples, noise_sigma, hetero_knob, seed)
}
