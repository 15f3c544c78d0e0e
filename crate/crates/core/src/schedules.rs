//! Local learning-rate schedules.
//!
//! Within a round the local rate decays linearly from the round's base rate
//! `eta` to `rho * eta` over `K` steps; after aggregation it restarts from the
//! base. The base itself decays geometrically across rounds.

use serde::{Deserialize, Serialize};

use crate::error::{FedError, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct LrSchedule<S> {
    /// Base local learning rate at round 0.
    pub eta_l: S,
    /// Ratio of the last-step rate to the first-step rate, in `[0, 1]`.
    pub rho: S,
    /// Local iterations per round.
    pub local_iters: usize,
    /// Multiplicative decay of the base rate per round.
    pub round_decay: S,
}

impl<S: Scalar> LrSchedule<S> {
    pub fn new(eta_l: S, rho: S, local_iters: usize, round_decay: S) -> Result<Self> {
        let sched = Self {
            eta_l,
            rho,
            local_iters,
            round_decay,
        };
        sched.validate()?;
        Ok(sched)
    }

    /// Constant local rate: `rho = 1`, no round decay.
    pub fn constant(eta_l: S, local_iters: usize) -> Result<Self> {
        Self::new(eta_l, S::one(), local_iters, S::one())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta_l >= S::zero()) || !self.eta_l.is_finite() {
            return Err(FedError::invalid("eta_l", format!("must be >= 0, got {}", self.eta_l)));
        }
        if !(self.rho >= S::zero() && self.rho <= S::one()) {
            return Err(FedError::invalid("rho", format!("must lie in [0, 1], got {}", self.rho)));
        }
        if self.local_iters == 0 {
            return Err(FedError::invalid("local_iters", "must be >= 1"));
        }
        if !(self.round_decay > S::zero()) || !self.round_decay.is_finite() {
            return Err(FedError::invalid(
                "round_decay",
                format!("must be > 0, got {}", self.round_decay),
            ));
        }
        Ok(())
    }

    /// Same schedule with `rho` forced to one (constant within a round).
    pub fn flattened(&self) -> Self {
        Self {
            rho: S::one(),
            ..*self
        }
    }

    /// Base rate of round `t`: `eta_l * round_decay^t`.
    pub fn round_base_lr(&self, t: usize) -> S {
        let exp = i32::try_from(t).unwrap_or(i32::MAX);
        self.eta_l * self.round_decay.powi(exp)
    }

    /// Rate for step `k` of a cycle with base rate `eta_l`.
    pub fn local_lr(&self, k: usize) -> Result<S> {
        cyclical_lr(self.eta_l, self.rho, k, self.local_iters)
    }

    /// The `K` step sizes used in round `t`, for steps `k = 0..K-1`.
    pub fn round_lrs(&self, t: usize) -> Vec<S> {
        let base = self.round_base_lr(t);
        (0..self.local_iters)
            .map(|k| {
                cyclical_lr(base, self.rho, k, self.local_iters).expect("k < K by construction")
            })
            .collect()
    }
}

/// `eta * (1 - k/K) + (k/K) * rho * eta`, for `0 <= k <= K`.
pub fn cyclical_lr<S: Scalar>(eta: S, rho: S, k: usize, big_k: usize) -> Result<S> {
    if big_k == 0 {
        return Err(FedError::invalid("local_iters", "must be >= 1"));
    }
    if k > big_k {
        return Err(FedError::invalid(
            "k",
            format!("local step {k} exceeds K = {big_k}"),
        ));
    }
    let frac = S::from_count(k) / S::from_count(big_k);
    Ok(eta * (S::one() - frac) + frac * rho * eta)
}

/// Sum of step sizes over one round, accumulated in step order.
pub fn sum_lrs<S: Scalar>(lrs: &[S]) -> S {
    lrs.iter().fold(S::zero(), |acc, &v| acc + v)
}

/// Closed form of `sum_{k=0}^{K-1} local_lr(k)`:
/// `eta * K * (1 + rho) / 2 + eta * (1 - rho) / 2`.
pub fn closed_form_sum<S: Scalar>(eta: S, rho: S, big_k: usize) -> S {
    let two = S::lit(2.0);
    let k = S::from_count(big_k);
    eta * k * (S::one() + rho) / two + eta * (S::one() - rho) / two
}
