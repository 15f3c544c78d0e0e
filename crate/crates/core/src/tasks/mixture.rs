//! Label-skewed classification tasks: logistic regression and a tiny MLP.
//!
//! Each class is an isotropic Gaussian blob. Client `i` draws labels from its
//! own class proportions `p_i ~ Dirichlet(concentration)`, so small
//! concentrations give strongly skewed clients.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::partition::sample_dirichlet;
use super::{Sample, TaskKind, TaskModel, TaskSpec};
use crate::error::{FedError, Result};
use crate::numkit::ParamVec;
use crate::rng::{self, Purpose};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelMixture {
    pub features: usize,
    pub class_means: Vec<Vec<f64>>,
    pub feature_std: f64,
    /// Per-client label distribution.
    pub class_props: Vec<Vec<f64>>,
    /// Per-client feature offset (covariate shift).
    #[serde(default)]
    pub client_shift: Vec<Vec<f64>>,
}

impl LabelMixture {
    pub fn classes(&self) -> usize {
        self.class_means.len()
    }

    pub(super) fn draw<S: Scalar, R: Rng>(&self, client: usize, id: u64, rng: &mut R) -> Sample<S> {
        let u: f64 = rng.random();
        let props = &self.class_props[client];
        let mut acc = 0.0;
        let mut label = props.len() - 1;
        for (c, &p) in props.iter().enumerate() {
            acc += p;
            if u < acc {
                label = c;
                break;
            }
        }
        let shift = self.client_shift.get(client);
        let x = self.class_means[label]
            .iter()
            .enumerate()
            .map(|(j, &m)| {
                let off = shift.map_or(0.0, |s| s[j]);
                S::lit(m + off + self.feature_std * rng.sample::<f64, _>(StandardNormal))
            })
            .collect();
        Sample {
            x,
            y: S::from_count(label),
            id,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureConfig {
    pub features: usize,
    pub clients: usize,
    pub samples: usize,
    pub classes: usize,
    pub concentration: f64,
    /// Scale of the per-client feature offsets.
    pub hetero_knob: f64,
    /// Standard deviation of class means around the origin.
    pub separation: f64,
    pub seed: u64,
}

impl Default for MixtureConfig {
    fn default() -> Self {
        Self {
            features: 5,
            clients: 10,
            samples: 50,
            classes: 2,
            concentration: 0.3,
            hetero_knob: 0.0,
            separation: 1.5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpShape {
    pub features: usize,
    pub hidden: usize,
    pub classes: usize,
}

impl MlpShape {
    pub fn param_count(&self) -> usize {
        self.hidden * self.features + self.hidden + self.classes * self.hidden + self.classes
    }
}

fn build_mixture(cfg: &MixtureConfig) -> Result<LabelMixture> {
    if cfg.features == 0 {
        return Err(FedError::invalid("dim", "must be >= 1"));
    }
    if cfg.clients == 0 || cfg.samples == 0 {
        return Err(FedError::invalid("clients/samples", "must be >= 1"));
    }
    if cfg.classes < 2 {
        return Err(FedError::invalid("classes", "need at least two classes"));
    }
    if !(cfg.concentration > 0.0) {
        return Err(FedError::invalid("concentration", "must be > 0"));
    }
    if !(cfg.hetero_knob >= 0.0) || !cfg.hetero_knob.is_finite() {
        return Err(FedError::invalid("hetero_knob", "must be >= 0"));
    }
    let mut r = rng::stream(cfg.seed, Purpose::TaskData, u64::MAX, 0);
    let class_means = (0..cfg.classes)
        .map(|_| {
            (0..cfg.features)
                .map(|_| cfg.separation * r.sample::<f64, _>(StandardNormal))
                .collect()
        })
        .collect();
    let mut pr = rng::stream(cfg.seed, Purpose::Partition, 0, 0);
    let class_props = (0..cfg.clients)
        .map(|_| sample_dirichlet(&mut pr, cfg.concentration, cfg.classes))
        .collect();
    // offsets are drawn before scaling so tasks differing only in the knob
    // share their draws
    let mut sr = rng::stream(cfg.seed, Purpose::TaskData, u64::MAX - 2, 0);
    let client_shift = (0..cfg.clients)
        .map(|_| {
            (0..cfg.features)
                .map(|_| cfg.hetero_knob * sr.sample::<f64, _>(StandardNormal))
                .collect()
        })
        .collect();
    Ok(LabelMixture {
        features: cfg.features,
        class_means,
        feature_std: 1.0,
        class_props,
        client_shift,
    })
}

fn draw_shards<S: Scalar>(mix: &LabelMixture, cfg: &MixtureConfig) -> Vec<Vec<Sample<S>>> {
    (0..cfg.clients)
        .map(|i| {
            let mut r = rng::stream(cfg.seed, Purpose::TaskData, i as u64, 1);
            (0..cfg.samples as u64).map(|id| mix.draw(i, id, &mut r)).collect()
        })
        .collect()
}

/// Binary logistic regression; parameters are `[w; bias]`.
pub fn make_logreg<S: Scalar>(cfg: &MixtureConfig) -> Result<TaskSpec<S>> {
    let cfg = MixtureConfig {
        classes: 2,
        ..cfg.clone()
    };
    let mixture = build_mixture(&cfg)?;
    let shards = draw_shards(&mixture, &cfg);
    let dim = cfg.features + 1;
    Ok(TaskSpec {
        kind: TaskKind::Logreg,
        dim,
        clients: cfg.clients,
        samples_per_client: cfg.samples,
        hetero_knob: cfg.hetero_knob,
        noise_sigma: 0.0,
        seed: cfg.seed,
        mu: None,
        beta: None,
        optimum: None,
        initial: ParamVec::zeros(dim),
        model: TaskModel::Logreg { mixture },
        shards,
    })
}

/// One-hidden-layer tanh network with `hidden <= 64` units.
pub fn make_mlp<S: Scalar>(cfg: &MixtureConfig, hidden: usize) -> Result<TaskSpec<S>> {
    if hidden == 0 || hidden > 64 {
        return Err(FedError::invalid("hidden", "must lie in 1..=64"));
    }
    let mixture = build_mixture(cfg)?;
    let shards = draw_shards(&mixture, cfg);
    let shape = MlpShape {
        features: cfg.features,
        hidden,
        classes: cfg.classes,
    };
    let dim = shape.param_count();
    let mut r = rng::stream(cfg.seed, Purpose::TaskData, u64::MAX - 1, 0);
    let w1_scale = 1.0 / (cfg.features as f64).sqrt();
    let w2_scale = 1.0 / (hidden as f64).sqrt();
    let mut init = Vec::with_capacity(dim);
    for _ in 0..hidden * cfg.features {
        init.push(S::lit(w1_scale * r.sample::<f64, _>(StandardNormal)));
    }
    init.extend(std::iter::repeat_n(S::zero(), hidden));
    for _ in 0..cfg.classes * hidden {
        init.push(S::lit(w2_scale * r.sample::<f64, _>(StandardNormal)));
    }
    init.extend(std::iter::repeat_n(S::zero(), cfg.classes));
    Ok(TaskSpec {
        kind: TaskKind::Mlp,
        dim,
        clients: cfg.clients,
        samples_per_client: cfg.samples,
        hetero_knob: cfg.hetero_knob,
        noise_sigma: 0.0,
        seed: cfg.seed,
        mu: None,
        beta: None,
        optimum: None,
        initial: ParamVec::new(init),
        model: TaskModel::Mlp { mixture, shape },
        shards,
    })
}

/// `softplus(z) - y z` with `z = w.x + b`.
pub(super) fn logreg_loss_grad<S: Scalar>(theta: &[S], sample: &Sample<S>, weight: S, grad: &mut [S]) -> S {
    let p = sample.x.len();
    let z = theta[..p]
        .iter()
        .zip(&sample.x)
        .fold(theta[p], |acc, (&w, &x)| acc + w * x);
    let softplus = z.max(S::zero()) + (-z.abs()).exp().ln_1p();
    let sig = S::one() / (S::one() + (-z).exp());
    let r = weight * (sig - sample.y);
    for (g, &x) in grad[..p].iter_mut().zip(&sample.x) {
        *g = *g + r * x;
    }
    grad[p] = grad[p] + r;
    softplus - sample.y * z
}

pub(super) fn mlp_loss_grad<S: Scalar>(
    shape: &MlpShape,
    theta: &[S],
    sample: &Sample<S>,
    weight: S,
    grad: &mut [S],
) -> S {
    let MlpShape {
        features: p,
        hidden: h,
        classes: c,
    } = *shape;
    let (w1, rest) = theta.split_at(h * p);
    let (b1, rest) = rest.split_at(h);
    let (w2, b2) = rest.split_at(c * h);

    let act: Vec<S> = (0..h)
        .map(|j| {
            let pre = w1[j * p..(j + 1) * p]
                .iter()
                .zip(&sample.x)
                .fold(b1[j], |acc, (&w, &x)| acc + w * x);
            pre.tanh()
        })
        .collect();
    let logits: Vec<S> = (0..c)
        .map(|k| {
            w2[k * h..(k + 1) * h]
                .iter()
                .zip(&act)
                .fold(b2[k], |acc, (&w, &a)| acc + w * a)
        })
        .collect();
    let max = logits.iter().copied().fold(S::neg_infinity(), S::max);
    let exps: Vec<S> = logits.iter().map(|&l| (l - max).exp()).collect();
    let z: S = exps.iter().copied().sum();
    let label = sample.y.to_usize().unwrap_or(0).min(c - 1);
    let loss = z.ln() + max - logits[label];

    // d loss / d logits
    let dlogit: Vec<S> = exps
        .iter()
        .enumerate()
        .map(|(k, &e)| {
            let pk = e / z;
            weight * if k == label { pk - S::one() } else { pk }
        })
        .collect();
    let (gw1, grest) = grad.split_at_mut(h * p);
    let (gb1, grest) = grest.split_at_mut(h);
    let (gw2, gb2) = grest.split_at_mut(c * h);
    let mut dact = vec![S::zero(); h];
    for k in 0..c {
        gb2[k] = gb2[k] + dlogit[k];
        for j in 0..h {
            gw2[k * h + j] = gw2[k * h + j] + dlogit[k] * act[j];
            dact[j] = dact[j] + dlogit[k] * w2[k * h + j];
        }
    }
    for j in 0..h {
        let dpre = dact[j] * (S::one() - act[j] * act[j]);
        gb1[j] = gb1[j] + dpre;
        for (g, &x) in gw1[j * p..(j + 1) * p].iter_mut().zip(&sample.x) {
            *g = *g + dpre * x;
        }
    }
    loss
}
