//! Dirichlet label-skew partitioning.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{FedError, Result};
use crate::rng::{self, Purpose};

const MAX_ATTEMPTS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirichletPartition {
    pub concentration: f64,
    pub clients: usize,
    /// `assignment[sample] = client`
    pub assignment: Vec<usize>,
}

impl DirichletPartition {
    pub fn client_samples(&self, client: usize) -> Vec<usize> {
        self.assignment
            .iter()
            .enumerate()
            .filter_map(|(s, &c)| (c == client).then_some(s))
            .collect()
    }

    pub fn counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.clients];
        for &c in &self.assignment {
            counts[c] += 1;
        }
        counts
    }
}

/// Symmetric Dirichlet draw via normalised Gamma variates.
pub fn sample_dirichlet<R: Rng>(rng: &mut R, concentration: f64, k: usize) -> Vec<f64> {
    let gamma = Gamma::new(concentration, 1.0).expect("concentration > 0");
    loop {
        let g: Vec<f64> = (0..k).map(|_| gamma.sample(rng)).collect();
        let total: f64 = g.iter().sum();
        if total > 0.0 && total.is_finite() {
            return g.into_iter().map(|v| v / total).collect();
        }
    }
}

/// Splits every class across `m` clients with proportions drawn from
/// `Dirichlet(concentration)`, redrawing until each client owns a sample.
pub fn dirichlet_partition(
    labels: &[usize],
    m: usize,
    concentration: f64,
    seed: u64,
) -> Result<DirichletPartition> {
    if !(concentration > 0.0) {
        return Err(FedError::invalid("concentration", "must be > 0"));
    }
    if m == 0 {
        return Err(FedError::invalid("clients", "must be >= 1"));
    }
    if labels.len() < m {
        return Err(FedError::invalid(
            "clients",
            format!("{} samples cannot cover {m} clients", labels.len()),
        ));
    }
    let classes = labels.iter().copied().max().map_or(0, |c| c + 1);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (s, &c) in labels.iter().enumerate() {
        by_class[c].push(s);
    }
    let mut r = rng::stream(seed, Purpose::Partition, m as u64, 1);
    for _ in 0..MAX_ATTEMPTS {
        let mut assignment = vec![0usize; labels.len()];
        for members in &by_class {
            if members.is_empty() {
                continue;
            }
            let mut members = members.clone();
            members.shuffle(&mut r);
            let props = sample_dirichlet(&mut r, concentration, m);
            let n = members.len();
            let mut start = 0usize;
            let mut cum = 0.0;
            for (client, p) in props.iter().enumerate() {
                cum += p;
                let end = if client + 1 == m {
                    n
                } else {
                    ((cum * n as f64).round() as usize).clamp(start, n)
                };
                for &s in &members[start..end] {
                    assignment[s] = client;
                }
                start = end;
            }
        }
        let part = DirichletPartition {
            concentration,
            clients: m,
            assignment,
        };
        if part.counts().iter().all(|&c| c >= 1) {
            return Ok(part);
        }
    }
    Err(FedError::invalid(
        "concentration",
        format!("could not give every client a sample after {MAX_ATTEMPTS} draws"),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn balanced_labels(classes: usize, per_class: usize) -> Vec<usize> {
        (0..classes * per_class).map(|s| s % classes).collect()
    }

    fn class_shares(part: &DirichletPartition, labels: &[usize], classes: usize) -> Vec<Vec<f64>> {
        (0..part.clients)
            .map(|c| {
                let mine = part.client_samples(c);
                let mut counts = vec![0.0; classes];
                for s in &mine {
                    counts[labels[*s]] += 1.0;
                }
                counts.iter().map(|v| v / mine.len() as f64).collect()
            })
            .collect()
    }

    #[test]
    fn single_client_gets_everything() {
        let labels = balanced_labels(3, 7);
        let p = dirichlet_partition(&labels, 1, 0.5, 1).unwrap();
        assert!(p.assignment.iter().all(|&c| c == 0));
    }

    #[test]
    fn every_sample_assigned_once_and_clients_nonempty() {
        let labels = balanced_labels(10, 50);
        let p = dirichlet_partition(&labels, 20, 0.1, 3).unwrap();
        assert_eq!(p.assignment.len(), labels.len());
        assert!(p.counts().iter().all(|&c| c >= 1));
        assert_eq!(p.counts().iter().sum::<usize>(), labels.len());
    }

    #[test]
    fn too_few_samples() {
        assert!(dirichlet_partition(&[0, 1], 3, 1.0, 0).is_err());
        assert!(dirichlet_partition(&[0, 1, 2], 3, 0.0, 0).is_err());
    }

    #[test]
    fn huge_concentration_is_near_iid() {
        let classes = 10;
        let labels = balanced_labels(classes, 500);
        for seed in 0..10 {
            let p = dirichlet_partition(&labels, 10, 1e6, seed).unwrap();
            for shares in class_shares(&p, &labels, classes) {
                for s in shares {
                    assert!((s - 0.1).abs() < 0.05, "seed {seed}: share {s}");
                }
            }
        }
    }

    #[test]
    fn small_concentration_is_skewed() {
        let classes = 10;
        let labels = balanced_labels(classes, 200);
        let p = dirichlet_partition(&labels, 10, 0.1, 42).unwrap();
        let mut dominant: Vec<f64> = class_shares(&p, &labels, classes)
            .iter()
            .map(|s| s.iter().copied().fold(0.0, f64::max))
            .collect();
        dominant.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = 0.5 * (dominant[4] + dominant[5]);
        assert!(median > 0.5, "median dominant share {median}");
    }
}
