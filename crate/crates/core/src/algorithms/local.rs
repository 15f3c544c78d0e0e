//! Local (client-side) update rules.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::CtrlOption;
use crate::error::{FedError, Result};
use crate::numkit::{l2_norm, ParamVec};
use crate::scalar::Scalar;
use crate::tasks::TaskSpec;

/// Gradients with smaller norm are treated as zero by [`sam_perturb`].
pub const SAM_GRAD_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BatchMode {
    /// Every step uses the whole shard; no randomness is consumed.
    Full,
    /// `B` indices drawn uniformly with replacement per step.
    Sampled(usize),
}

/// Everything a client needs for one round of local work.
#[derive(Debug, Clone, Copy)]
pub struct LocalCtx<'a, S> {
    pub task: &'a TaskSpec<S>,
    pub client: usize,
    /// Step sizes for steps `k = 0..K-1`.
    pub lrs: &'a [S],
    pub batch: BatchMode,
    /// Record iterates, raw gradients and batch indices.
    pub trace: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LocalOutcome<S> {
    /// `theta_{i,K}`
    pub theta: ParamVec<S>,
    /// `theta_{i,1}, ..., theta_{i,K}` when tracing.
    pub trajectory: Vec<ParamVec<S>>,
    /// Raw minibatch gradient `g_i(theta_{i,k})` per step when tracing.
    pub grads: Vec<ParamVec<S>>,
    pub batches: Vec<Vec<usize>>,
}

impl<S: Scalar> LocalCtx<'_, S> {
    fn draw_batch<R: Rng>(&self, rng: &mut R) -> Vec<usize> {
        let n = self.task.shards[self.client].len();
        match self.batch {
            BatchMode::Full => (0..n).collect(),
            BatchMode::Sampled(b) => (0..b.max(1)).map(|_| rng.random_range(0..n)).collect(),
        }
    }

    fn grad(&self, theta: &ParamVec<S>, idx: &[usize]) -> ParamVec<S> {
        self.task.batch_loss_grad(self.client, theta, idx).1
    }

    /// Runs `K` steps `theta <- theta - eta_k * dir`, where `step` maps the
    /// current iterate and batch to `(dir, raw_grad)`.
    fn run<R, F>(&self, theta0: &ParamVec<S>, rng: &mut R, mut step: F) -> Result<LocalOutcome<S>>
    where
        R: Rng,
        F: FnMut(&ParamVec<S>, &[usize]) -> Result<(ParamVec<S>, ParamVec<S>)>,
    {
        if self.lrs.is_empty() {
            return Err(FedError::invalid("local_iters", "must be >= 1"));
        }
        let mut out = LocalOutcome {
            theta: theta0.clone(),
            ..Default::default()
        };
        for &eta in self.lrs {
            let idx = self.draw_batch(rng);
            let (dir, raw) = step(&out.theta, &idx)?;
            out.theta.axpy_assign(-eta, &dir)?;
            if self.trace {
                out.trajectory.push(out.theta.clone());
                out.grads.push(raw);
                out.batches.push(idx);
            }
        }
        Ok(out)
    }
}

/// Plain local SGD. With a cyclical schedule this is FedSWA's client step.
pub fn local_update_fedavg<S: Scalar, R: Rng>(
    ctx: &LocalCtx<'_, S>,
    theta: &ParamVec<S>,
    rng: &mut R,
) -> Result<LocalOutcome<S>> {
    ctx.run(theta, rng, |th, idx| {
        let g = ctx.grad(th, idx);
        Ok((g.clone(), g))
    })
}

/// First-order SAM ascent: `radius * g / ||g||`, zero for a vanishing gradient.
pub fn sam_perturb<S: Scalar>(grad: &ParamVec<S>, radius: S) -> ParamVec<S> {
    let norm = l2_norm(grad);
    if radius == S::zero() || norm < S::lit(SAM_GRAD_EPS) {
        return ParamVec::zeros(grad.len());
    }
    grad.scale(radius / norm)
}

/// Gradient at the SAM-perturbed point, evaluated on the same batch.
fn sam_gradient<S: Scalar>(
    ctx: &LocalCtx<'_, S>,
    theta: &ParamVec<S>,
    idx: &[usize],
    radius: S,
) -> Result<(ParamVec<S>, ParamVec<S>)> {
    let g1 = ctx.grad(theta, idx);
    let eps = sam_perturb(&g1, radius);
    let probe = theta.add(&eps)?;
    Ok((ctx.grad(&probe, idx), g1))
}

pub fn local_update_fedsam<S: Scalar, R: Rng>(
    ctx: &LocalCtx<'_, S>,
    theta: &ParamVec<S>,
    sam_radius: S,
    rng: &mut R,
) -> Result<LocalOutcome<S>> {
    ctx.run(theta, rng, |th, idx| sam_gradient(ctx, th, idx, sam_radius))
}

/// MoFedSAM local step `d = beta * g_sam + (1 - beta) * delta_prev`.
///
/// `delta_prev` is the previous server move divided by the previous round's
/// summed step size, i.e. an average per-step descent direction.
pub fn local_update_mofedsam<S: Scalar, R: Rng>(
    ctx: &LocalCtx<'_, S>,
    theta: &ParamVec<S>,
    delta_prev: &ParamVec<S>,
    sam_radius: S,
    mom_beta: S,
    rng: &mut R,
) -> Result<LocalOutcome<S>> {
    let carry = delta_prev.scale(S::one() - mom_beta);
    ctx.run(theta, rng, |th, idx| {
        let (g_sam, g1) = sam_gradient(ctx, th, idx, sam_radius)?;
        let dir = ParamVec::new(
            g_sam
                .iter()
                .zip(carry.iter())
                .map(|(&g, &c)| mom_beta * g + c)
                .collect(),
        );
        Ok((dir, g1))
    })
}

/// Drift-corrected step `g - c_i + m` shared by SCAFFOLD and FedMoSWA.
fn corrected<S: Scalar, R: Rng>(
    ctx: &LocalCtx<'_, S>,
    theta: &ParamVec<S>,
    ctrl_i: &ParamVec<S>,
    server_ctrl: &ParamVec<S>,
    rng: &mut R,
) -> Result<LocalOutcome<S>> {
    // m - c_i is formed once so equal controls cancel exactly
    let corr = server_ctrl.sub(ctrl_i)?;
    ctx.run(theta, rng, |th, idx| {
        let g = ctx.grad(th, idx);
        Ok((g.add(&corr)?, g))
    })
}

/// FedMoSWA client step `theta <- theta - eta_k (g - c_i + m)`.
pub fn local_update_fedmoswa<S: Scalar, R: Rng>(
    ctx: &LocalCtx<'_, S>,
    theta: &ParamVec<S>,
    ctrl_i: &ParamVec<S>,
    sctl: &ParamVec<S>,
    rng: &mut R,
) -> Result<LocalOutcome<S>> {
    corrected(ctx, theta, ctrl_i, sctl, rng)
}

/// SCAFFOLD client step; returns the local model and `c_i^+`.
pub fn local_update_scaffold<S: Scalar, R: Rng>(
    ctx: &LocalCtx<'_, S>,
    theta: &ParamVec<S>,
    ctrl_i: &ParamVec<S>,
    ctrl_global: &ParamVec<S>,
    option: CtrlOption,
    rng: &mut R,
) -> Result<(LocalOutcome<S>, ParamVec<S>)> {
    let out = corrected(ctx, theta, ctrl_i, ctrl_global, rng)?;
    let fresh = match option {
        CtrlOption::I => Some(ctx.task.client_loss_grad(ctx.client, theta).1),
        CtrlOption::II => None,
    };
    let sum_eta = crate::schedules::sum_lrs(ctx.lrs);
    let plus = control_update(option, theta, &out.theta, ctrl_i, ctrl_global, sum_eta, fresh.as_ref())?;
    Ok((out, plus))
}

/// Client control refresh.
///
/// Option I returns `fresh_grad`; Option II returns
/// `c_i - m + (theta_prev - theta_K) / sum_eta`.
pub fn control_update<S: Scalar>(
    option: CtrlOption,
    theta_prev: &ParamVec<S>,
    theta_k: &ParamVec<S>,
    ctrl_i: &ParamVec<S>,
    sctl: &ParamVec<S>,
    sum_eta: S,
    fresh_grad: Option<&ParamVec<S>>,
) -> Result<ParamVec<S>> {
    match option {
        CtrlOption::I => fresh_grad
            .cloned()
            .ok_or_else(|| FedError::invalid("fresh_grad", "option I needs a fresh gradient")),
        CtrlOption::II => {
            if !(sum_eta > S::zero()) {
                return Err(FedError::invalid(
                    "sum_eta",
                    "option II needs a positive summed step size",
                ));
            }
            let moved = theta_prev.sub(theta_k)?;
            let base = ctrl_i.sub(sctl)?;
            Ok(ParamVec::new(
                base.iter()
                    .zip(moved.iter())
                    .map(|(&b, &d)| b + d / sum_eta)
                    .collect(),
            ))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Purpose};
    use crate::schedules::{sum_lrs, LrSchedule};
    use crate::tasks::{make_quadratic, quadratic_from_parts, Matrix, QuadraticConfig};

    fn unit_task(center: f64) -> TaskSpec<f64> {
        quadratic_from_parts(
            vec![Matrix::identity(1)],
            vec![ParamVec::from_f64(&[center])],
            3,
            0.0,
            0,
        )
        .unwrap()
    }

    fn noisy_task() -> TaskSpec<f64> {
        make_quadratic(&QuadraticConfig {
            dim: 3,
            clients: 4,
            samples: 40,
            hetero_knob: 1.0,
            noise_sigma: 0.5,
            seed: 21,
            ..Default::default()
        })
        .unwrap()
    }

    fn rng() -> crate::rng::StreamRng {
        stream(5, Purpose::LocalBatches, 0, 0)
    }

    #[test]
    fn one_sgd_step_by_hand() {
        let t = unit_task(0.0);
        let lrs = [0.1];
        let ctx = LocalCtx { task: &t, client: 0, lrs: &lrs, batch: BatchMode::Full, trace: false };
        let out = local_update_fedavg(&ctx, &ParamVec::from_f64(&[1.0]), &mut rng()).unwrap();
        assert!((out.theta[0] - 0.9).abs() < 1e-15);
    }

    #[test]
    fn zero_rate_and_fixed_point() {
        let t = unit_task(0.7);
        let lrs = [0.0; 5];
        let ctx = LocalCtx { task: &t, client: 0, lrs: &lrs, batch: BatchMode::Sampled(2), trace: false };
        let th = ParamVec::from_f64(&[3.0]);
        assert_eq!(local_update_fedavg(&ctx, &th, &mut rng()).unwrap().theta, th);
        let lrs = [0.3; 5];
        let ctx = LocalCtx { lrs: &lrs, ..ctx };
        let at = ParamVec::from_f64(&[0.7]);
        assert_eq!(local_update_fedavg(&ctx, &at, &mut rng()).unwrap().theta, at);
    }

    #[test]
    fn consumes_one_batch_per_step() {
        let t = noisy_task();
        let lrs = [0.1; 4];
        let ctx = LocalCtx { task: &t, client: 1, lrs: &lrs, batch: BatchMode::Sampled(3), trace: true };
        let out = local_update_fedavg(&ctx, &ParamVec::zeros(3), &mut rng()).unwrap();
        assert_eq!(out.batches.len(), 4);
        let mut r = rng();
        let expected: Vec<Vec<usize>> = (0..4)
            .map(|_| (0..3).map(|_| r.random_range(0..40)).collect())
            .collect();
        assert_eq!(out.batches, expected);
    }

    #[test]
    fn sam_perturb_examples() {
        let e = sam_perturb::<f64>(&ParamVec::from_f64(&[3.0, 4.0]), 1.0);
        assert!((e[0] - 0.6).abs() < 1e-15 && (e[1] - 0.8).abs() < 1e-15);
        assert_eq!(sam_perturb(&ParamVec::from_f64(&[3.0, 4.0]), 0.0), ParamVec::zeros(2));
        assert_eq!(sam_perturb(&ParamVec::<f64>::zeros(2), 0.5), ParamVec::zeros(2));
    }

    #[test]
    fn sam_step_by_hand() {
        let t = unit_task(0.0);
        let lrs = [0.1];
        let ctx = LocalCtx { task: &t, client: 0, lrs: &lrs, batch: BatchMode::Full, trace: false };
        let out = local_update_fedsam(&ctx, &ParamVec::from_f64(&[1.0]), 0.1, &mut rng()).unwrap();
        // probe at 1.1, gradient 1.1, step to 1 - 0.11
        assert!((out.theta[0] - 0.89).abs() < 1e-15);
    }

    #[test]
    fn zero_radius_sam_is_sgd() {
        let t = noisy_task();
        let lrs = LrSchedule::constant(0.1, 6).unwrap().round_lrs(0);
        let ctx = LocalCtx { task: &t, client: 2, lrs: &lrs, batch: BatchMode::Sampled(5), trace: false };
        let th = ParamVec::from_f64(&[0.5, -1.0, 2.0]);
        let a = local_update_fedavg(&ctx, &th, &mut rng()).unwrap();
        let b = local_update_fedsam(&ctx, &th, 0.0, &mut rng()).unwrap();
        assert_eq!(a.theta, b.theta);
    }

    #[test]
    fn mofedsam_degenerations() {
        let t = noisy_task();
        let lrs = LrSchedule::constant(0.1, 5).unwrap().round_lrs(0);
        let ctx = LocalCtx { task: &t, client: 0, lrs: &lrs, batch: BatchMode::Sampled(4), trace: false };
        let th = ParamVec::from_f64(&[1.0, 0.0, -1.0]);
        let delta = ParamVec::from_f64(&[0.3, -0.2, 0.1]);
        let sam = local_update_fedsam(&ctx, &th, 0.05, &mut rng()).unwrap();
        let mo = local_update_mofedsam(&ctx, &th, &delta, 0.05, 1.0, &mut rng()).unwrap();
        assert_eq!(sam.theta, mo.theta);

        // zero momentum buffer: steps are FedSAM steps with rate beta * eta
        let scaled: Vec<f64> = lrs.iter().map(|e| e * 0.9).collect();
        let ctx_scaled = LocalCtx { lrs: &scaled, ..ctx };
        let sam_scaled = local_update_fedsam(&ctx_scaled, &th, 0.05, &mut rng()).unwrap();
        let mo0 = local_update_mofedsam(&ctx, &th, &ParamVec::zeros(3), 0.05, 0.9, &mut rng()).unwrap();
        for (a, b) in sam_scaled.theta.iter().zip(mo0.theta.iter()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_controls_reduce_to_sgd() {
        let t = noisy_task();
        let lrs = LrSchedule::new(0.1, 0.1, 7, 1.0).unwrap().round_lrs(0);
        let ctx = LocalCtx { task: &t, client: 3, lrs: &lrs, batch: BatchMode::Sampled(3), trace: false };
        let th = ParamVec::from_f64(&[0.2, 0.2, 0.2]);
        let z = ParamVec::zeros(3);
        let a = local_update_fedavg(&ctx, &th, &mut rng()).unwrap();
        let b = local_update_fedmoswa(&ctx, &th, &z, &z, &mut rng()).unwrap();
        assert_eq!(a.theta, b.theta);
        let c = ParamVec::from_f64(&[0.4, -1.0, 3.0]);
        let d = local_update_fedmoswa(&ctx, &th, &c, &c, &mut rng()).unwrap();
        assert_eq!(a.theta, d.theta);
    }

    #[test]
    fn exact_controls_follow_global_gradient() {
        // homogeneous clients: c_i = grad F_i(theta) = grad F(theta) = m
        let t = make_quadratic::<f64>(&QuadraticConfig {
            hetero_knob: 0.0,
            clients: 3,
            dim: 2,
            seed: 4,
            ..Default::default()
        })
        .unwrap();
        let th = ParamVec::from_f64(&[1.0, -1.0]);
        let lrs = [0.05; 4];
        let ctx = LocalCtx { task: &t, client: 1, lrs: &lrs, batch: BatchMode::Full, trace: true };
        let c = t.client_loss_grad(1, &th).1;
        let m = t.train_loss_grad(&th).unwrap().1;
        let out = local_update_fedmoswa(&ctx, &th, &c, &m, &mut rng()).unwrap();
        // local iterates are global gradient-descent iterates
        let mut g = th.clone();
        for (k, it) in out.trajectory.iter().enumerate() {
            let grad = t.train_loss_grad(&g).unwrap().1;
            g.axpy_assign(-lrs[k], &grad).unwrap();
            assert!(crate::numkit::dist(it, &g).unwrap() < 1e-13);
        }
    }

    #[test]
    fn option_two_single_step_is_the_gradient() {
        let t = noisy_task();
        let lrs = [0.07];
        let ctx = LocalCtx { task: &t, client: 0, lrs: &lrs, batch: BatchMode::Sampled(4), trace: true };
        let th = ParamVec::from_f64(&[0.1, 0.2, 0.3]);
        let ci = ParamVec::from_f64(&[1.0, 2.0, -1.0]);
        let m = ParamVec::from_f64(&[-0.5, 0.0, 0.25]);
        let out = local_update_fedmoswa(&ctx, &th, &ci, &m, &mut rng()).unwrap();
        let plus = control_update(CtrlOption::II, &th, &out.theta, &ci, &m, sum_lrs(&lrs), None).unwrap();
        for (p, g) in plus.iter().zip(out.grads[0].iter()) {
            assert!((p - g).abs() < 1e-12);
        }
    }

    #[test]
    fn option_two_is_weighted_gradient_mean() {
        let t = noisy_task();
        let lrs = LrSchedule::new(0.08, 0.1, 12, 1.0).unwrap().round_lrs(0);
        let ctx = LocalCtx { task: &t, client: 2, lrs: &lrs, batch: BatchMode::Sampled(2), trace: true };
        let th = ParamVec::from_f64(&[2.0, -1.0, 0.0]);
        let ci = ParamVec::from_f64(&[0.3, 0.3, -0.2]);
        let m = ParamVec::from_f64(&[0.1, -0.4, 0.0]);
        let out = local_update_fedmoswa(&ctx, &th, &ci, &m, &mut rng()).unwrap();
        let plus = control_update(CtrlOption::II, &th, &out.theta, &ci, &m, sum_lrs(&lrs), None).unwrap();
        let total: f64 = lrs.iter().sum();
        for j in 0..3 {
            let w: f64 = lrs.iter().zip(&out.grads).map(|(e, g)| e * g[j]).sum::<f64>() / total;
            assert!((plus[j] - w).abs() <= 1e-10 * w.abs().max(1.0));
        }
    }

    #[test]
    fn option_one_and_errors() {
        let t = unit_task(2.0);
        let th = ParamVec::from_f64(&[5.0]);
        let fresh = t.client_loss_grad(0, &th).1;
        let z = ParamVec::zeros(1);
        let plus = control_update(CtrlOption::I, &th, &th, &z, &z, 1.0, Some(&fresh)).unwrap();
        assert_eq!(plus[0], 3.0);
        assert!(control_update(CtrlOption::I, &th, &th, &z, &z, 1.0, None).is_err());
        assert!(control_update(CtrlOption::II, &th, &th, &z, &z, 0.0, None).is_err());
    }

    #[test]
    fn homogeneous_scaffold_controls_agree() {
        let t = make_quadratic::<f64>(&QuadraticConfig {
            hetero_knob: 0.0,
            clients: 4,
            dim: 3,
            seed: 12,
            ..Default::default()
        })
        .unwrap();
        let lrs = [0.1; 5];
        let th = ParamVec::from_f64(&[1.0, 2.0, 3.0]);
        let z = ParamVec::zeros(3);
        let plus: Vec<ParamVec<f64>> = (0..4)
            .map(|i| {
                let ctx = LocalCtx { task: &t, client: i, lrs: &lrs, batch: BatchMode::Full, trace: false };
                local_update_scaffold(&ctx, &th, &z, &z, CtrlOption::II, &mut rng()).unwrap().1
            })
            .collect();
        for p in &plus[1..] {
            assert!(crate::numkit::dist(p, &plus[0]).unwrap() < 1e-12);
        }
    }
}
