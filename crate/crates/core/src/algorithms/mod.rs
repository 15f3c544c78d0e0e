//! Client-update and server-aggregate rules.
//!
//! | algorithm  | local rate | local step                     | server          |
//! |------------|------------|--------------------------------|-----------------|
//! | `fedavg`   | constant   | `g`                            | mean            |
//! | `fedsam`   | constant   | `g(theta + eps)`               | mean            |
//! | `mofedsam` | constant   | `b g_sam + (1 - b) delta_prev` | mean            |
//! | `scaffold` | constant   | `g - c_i + c`                  | mean, `c` sum   |
//! | `fedswa`   | cyclical   | `g`                            | EMA (`alpha`)   |
//! | `fedmoswa` | cyclical   | `g - c_i + m`                  | EMA, `m` EMA    |

mod local;
mod server;

pub use local::{
    control_update, local_update_fedavg, local_update_fedmoswa, local_update_fedsam,
    local_update_mofedsam, local_update_scaffold, sam_perturb, BatchMode, LocalCtx, LocalOutcome,
    SAM_GRAD_EPS,
};
pub use server::{
    scaffold_control_update, server_aggregate, server_control_update, server_control_update_ema,
};

use serde::{Deserialize, Serialize};

use crate::error::{FedError, Result};
use crate::numkit::ParamVec;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    FedAvg,
    FedSam,
    MoFedSam,
    Scaffold,
    FedSwa,
    FedMoSwa,
}

impl Algorithm {
    pub const ALL: [Algorithm; 6] = [
        Algorithm::FedAvg,
        Algorithm::FedSam,
        Algorithm::MoFedSam,
        Algorithm::Scaffold,
        Algorithm::FedSwa,
        Algorithm::FedMoSwa,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::FedAvg => "fedavg",
            Algorithm::FedSam => "fedsam",
            Algorithm::MoFedSam => "mofedsam",
            Algorithm::Scaffold => "scaffold",
            Algorithm::FedSwa => "fedswa",
            Algorithm::FedMoSwa => "fedmoswa",
        }
    }

    /// Uses the cyclical local rate and EMA aggregation with `alpha`.
    /// The baselines run a constant local rate and plain averaging.
    pub fn uses_swa(self) -> bool {
        matches!(self, Algorithm::FedSwa | Algorithm::FedMoSwa)
    }

    /// Maintains per-client control variates.
    pub fn has_controls(self) -> bool {
        matches!(self, Algorithm::Scaffold | Algorithm::FedMoSwa)
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Algorithm {
    type Err = FedError;
    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| {
                FedError::invalid(
                    "algorithm",
                    format!("unknown algorithm `{s}` (expected fedavg|fedsam|mofedsam|scaffold|fedswa|fedmoswa)"),
                )
            })
    }
}

/// How a client refreshes its control variate after local training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum CtrlOption {
    /// Fresh full-shard gradient at the received global model.
    I,
    /// Reuse the local trajectory: `c_i - m + (theta_prev - theta_K) / sum(eta)`.
    II,
}

impl TryFrom<u8> for CtrlOption {
    type Error = String;
    fn try_from(v: u8) -> std::result::Result<Self, String> {
        match v {
            1 => Ok(CtrlOption::I),
            2 => Ok(CtrlOption::II),
            other => Err(format!("ctrl_option must be 1 or 2, got {other}")),
        }
    }
}

impl From<CtrlOption> for u8 {
    fn from(o: CtrlOption) -> u8 {
        match o {
            CtrlOption::I => 1,
            CtrlOption::II => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CtrlInit {
    Zero,
    /// `c_i = grad F_i(theta_0)`, `m = mean_i c_i`.
    Gradient,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct AlgoConfig<S> {
    /// Server EMA / extrapolation coefficient.
    pub alpha: S,
    /// Server-control momentum.
    pub gamma: S,
    /// SAM perturbation radius.
    pub sam_radius: S,
    pub ctrl_option: CtrlOption,
    /// Weight of the fresh SAM gradient in MoFedSAM's local direction.
    pub mom_beta: S,
    pub ctrl_init: CtrlInit,
    /// Keep a running average of server models (reported only).
    pub swa_tracker: bool,
}

impl<S: Scalar> Default for AlgoConfig<S> {
    fn default() -> Self {
        Self {
            alpha: S::lit(1.5),
            gamma: S::lit(0.2),
            sam_radius: S::lit(0.05),
            ctrl_option: CtrlOption::II,
            mom_beta: S::lit(0.9),
            ctrl_init: CtrlInit::Zero,
            swa_tracker: false,
        }
    }
}

impl<S: Scalar> AlgoConfig<S> {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > S::zero()) || !self.alpha.is_finite() {
            return Err(FedError::invalid("alpha", format!("must be > 0, got {}", self.alpha)));
        }
        if !(self.gamma > S::zero() && self.gamma <= S::one()) {
            return Err(FedError::invalid("gamma", format!("must lie in (0, 1], got {}", self.gamma)));
        }
        if !(self.sam_radius >= S::zero()) || !self.sam_radius.is_finite() {
            return Err(FedError::invalid("sam_radius", "must be >= 0"));
        }
        if !(self.mom_beta >= S::zero() && self.mom_beta <= S::one()) {
            return Err(FedError::invalid("mom_beta", "must lie in [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct ClientState<S> {
    pub id: usize,
    /// Control variate `c_i`.
    pub ctrl: ParamVec<S>,
    pub participations: usize,
}

impl<S: Scalar> ClientState<S> {
    pub fn new(id: usize, dim: usize) -> Self {
        Self {
            id,
            ctrl: ParamVec::zeros(dim),
            participations: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct ServerState<S> {
    pub alg: Algorithm,
    pub theta: ParamVec<S>,
    /// Server control: FedMoSWA's `m`, SCAFFOLD's `c`, zero otherwise.
    pub sctl: ParamVec<S>,
    pub round: usize,
    /// MoFedSAM's previous server direction per unit step size.
    pub delta_prev: ParamVec<S>,
    pub swa_running: Option<ParamVec<S>>,
    pub swa_count: usize,
}

impl<S: Scalar> ServerState<S> {
    pub fn new(alg: Algorithm, theta0: ParamVec<S>) -> Self {
        let dim = theta0.len();
        Self {
            alg,
            theta: theta0,
            sctl: ParamVec::zeros(dim),
            round: 0,
            delta_prev: ParamVec::zeros(dim),
            swa_running: None,
            swa_count: 0,
        }
    }

    /// `theta_swa <- (theta_swa * n + theta) / (n + 1)`
    pub fn update_swa(&mut self) -> Result<()> {
        let n = S::from_count(self.swa_count);
        let next = match &self.swa_running {
            None => self.theta.clone(),
            Some(avg) => {
                let inv = S::one() / (n + S::one());
                ParamVec::new(
                    avg.iter()
                        .zip(self.theta.iter())
                        .map(|(&a, &t)| (a * n + t) * inv)
                        .collect(),
                )
            }
        };
        self.swa_running = Some(next);
        self.swa_count += 1;
        Ok(())
    }
}
