//! Server-side aggregation and control updates.

use crate::error::{FedError, Result};
use crate::numkit::{mean_vecs, ParamVec};
use crate::scalar::Scalar;

/// `theta_t = theta_{t-1} + alpha (v_t - theta_{t-1})` with `v_t` the mean of
/// the client models. `alpha = 1` returns `v_t` itself, `alpha > 1`
/// extrapolates past it.
pub fn server_aggregate<S: Scalar>(
    theta_prev: &ParamVec<S>,
    client_models: &[ParamVec<S>],
    alpha: S,
) -> Result<ParamVec<S>> {
    if client_models.is_empty() {
        return Err(FedError::Empty("client models"));
    }
    if !(alpha >= S::zero()) {
        return Err(FedError::invalid("alpha", "must be >= 0"));
    }
    let v = mean_vecs(client_models)?;
    theta_prev.check_dim(&v)?;
    if alpha == S::one() {
        return Ok(v);
    }
    if alpha == S::zero() {
        return Ok(theta_prev.clone());
    }
    Ok(ParamVec::new(
        theta_prev
            .iter()
            .zip(v.iter())
            .map(|(&t, &vi)| t + alpha * (vi - t))
            .collect(),
    ))
}

/// `m <- m + gamma * (1/s) * sum_i delta_i` with `delta_i = c_i^+ - m`.
pub fn server_control_update<S: Scalar>(
    sctl: &ParamVec<S>,
    deltas: &[ParamVec<S>],
    gamma: S,
) -> Result<ParamVec<S>> {
    if deltas.is_empty() {
        return Err(FedError::Empty("participating clients"));
    }
    let mean_delta = mean_vecs(deltas)?;
    let mut out = sctl.clone();
    out.axpy_assign(gamma, &mean_delta)?;
    Ok(out)
}

/// Equivalent EMA form `(1 - gamma) m + gamma * mean_i c_i^+`.
pub fn server_control_update_ema<S: Scalar>(
    sctl: &ParamVec<S>,
    c_plus: &[ParamVec<S>],
    gamma: S,
) -> Result<ParamVec<S>> {
    if c_plus.is_empty() {
        return Err(FedError::Empty("participating clients"));
    }
    let mean = mean_vecs(c_plus)?;
    sctl.check_dim(&mean)?;
    Ok(ParamVec::new(
        sctl.iter()
            .zip(mean.iter())
            .map(|(&m, &c)| (S::one() - gamma) * m + gamma * c)
            .collect(),
    ))
}

/// SCAFFOLD: `c <- c + (1/m) sum_{i in S} (c_i^+ - c_i)` over all `m` clients.
pub fn scaffold_control_update<S: Scalar>(
    c: &ParamVec<S>,
    diffs: &[ParamVec<S>],
    total_clients: usize,
) -> Result<ParamVec<S>> {
    if diffs.is_empty() {
        return Err(FedError::Empty("participating clients"));
    }
    if total_clients < diffs.len() {
        return Err(FedError::invalid("clients", "fewer clients than participants"));
    }
    let mut sum = ParamVec::zeros(c.len());
    for d in diffs {
        sum.axpy_assign(S::one(), d)?;
    }
    let mut out = c.clone();
    out.axpy_assign(S::one() / S::from_count(total_clients), &sum)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pv(v: &[f64]) -> ParamVec<f64> {
        ParamVec::from_f64(v)
    }

    #[test]
    fn aggregate_examples() {
        let prev = pv(&[0.0]);
        let models = [pv(&[1.0]), pv(&[3.0])];
        assert_eq!(server_aggregate(&prev, &models, 1.0).unwrap(), pv(&[2.0]));
        assert_eq!(server_aggregate(&prev, &models, 0.0).unwrap(), prev);
        assert_eq!(server_aggregate(&prev, &models, 1.5).unwrap(), pv(&[3.0]));
        assert!(server_aggregate(&prev, &[], 1.0).is_err());
    }

    #[test]
    fn control_examples() {
        let m = pv(&[0.0]);
        let c = [pv(&[1.0])];
        let deltas: Vec<_> = c.iter().map(|ci| ci.sub(&m).unwrap()).collect();
        assert!((server_control_update(&m, &deltas, 0.2).unwrap()[0] - 0.2).abs() < 1e-16);
        assert_eq!(server_control_update(&m, &deltas, 1.0).unwrap(), pv(&[1.0]));
        assert!(server_control_update(&m, &[], 0.5).is_err());
        let m = pv(&[0.7, -0.1]);
        let zero_gamma = server_control_update(&m, &[pv(&[4.0, 4.0])], 0.0).unwrap();
        assert_eq!(zero_gamma, m);
    }

    #[test]
    fn scaffold_update_divides_by_all_clients() {
        let c = pv(&[1.0]);
        let out = scaffold_control_update(&c, &[pv(&[2.0]), pv(&[2.0])], 4).unwrap();
        assert_eq!(out, pv(&[2.0]));
    }

    proptest! {
        #[test]
        fn increment_and_ema_forms_agree(
            m in prop::collection::vec(-10.0f64..10.0, 3),
            cs in prop::collection::vec(prop::collection::vec(-10.0f64..10.0, 3), 1..6),
            gamma in 0.01f64..=1.0,
        ) {
            let m = pv(&m);
            let cs: Vec<_> = cs.iter().map(|c| pv(c)).collect();
            let deltas: Vec<_> = cs.iter().map(|c| c.sub(&m).unwrap()).collect();
            let a = server_control_update(&m, &deltas, gamma).unwrap();
            let b = server_control_update_ema(&m, &cs, gamma).unwrap();
            for (x, y) in a.iter().zip(b.iter()) {
                prop_assert!((x - y).abs() <= 1e-12 * (1.0 + x.abs()));
            }
        }
    }
}
