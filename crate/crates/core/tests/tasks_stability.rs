use fedlab::stability::{twin_run, SweepAxis};
use fedlab::tasks::{make_quadratic, measure_sigma_g, QuadraticConfig, TaskModel};
use fedlab::{stability_sweep, Algorithm, LrSchedule, RunConfig, TaskConfig, TaskKind, TaskSpec};
use proptest::prelude::*;

/// Standard normal CDF through erf (Abramowitz and Stegun 7.1.26).
fn phi(z: f64) -> f64 {
    let x = z.abs() / std::f64::consts::SQRT_2;
    let t = 1.0 / (1.0 + 0.327_591_1 * x);
    let poly = t * (0.254_829_592 + t * (-0.284_496_736 + t * (1.421_413_741 + t * (-1.453_152_027 + t * 1.061_405_429))));
    let erf = 1.0 - poly * (-x * x).exp();
    if z >= 0.0 {
        0.5 * (1.0 + erf)
    } else {
        0.5 * (1.0 - erf)
    }
}

fn ks_statistic(mut xs: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
    xs.sort_by(|a, b| a.total_cmp(b));
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max((f - (i + 1) as f64 / n).abs())
        })
        .fold(0.0, f64::max)
}

#[test]
fn replacement_sample_follows_client_distribution() {
    let task = make_quadratic::<f64>(&QuadraticConfig {
        dim: 3,
        clients: 4,
        samples: 10,
        hetero_knob: 1.5,
        noise_sigma: 0.7,
        seed: 17,
        ..Default::default()
    })
    .unwrap();
    let (client, id) = (2usize, 4u64);
    let TaskModel::Quadratic { curvature, centers } = &task.model else { unreachable!() };
    // x = b + sigma A^{-1} xi, so x_0 ~ N(b_0, sigma^2 ||row_0(A^{-1})||^2)
    let a = &curvature[client];
    let col: Vec<f64> = (0..3).map(|j| a.solve_spd(&unit(j)).unwrap()[0]).collect();
    let sd = 0.7 * col.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mean = centers[client][0];
    let draws: Vec<f64> = (0..2000u64)
        .map(|s| task.perturb_one_sample(client, id, s).unwrap().shards[client][id as usize].x[0])
        .collect();
    let d = ks_statistic(draws, |x| phi((x - mean) / sd));
    // 1% critical value 1.63 / sqrt(N)
    assert!(d < 1.63 / 2000f64.sqrt(), "KS statistic {d}");
}

fn unit(j: usize) -> Vec<f64> {
    let mut e = vec![0.0; 3];
    e[j] = 1.0;
    e
}

#[test]
fn perturbation_changes_exactly_one_sample() {
    let task = TaskConfig { kind: TaskKind::Logreg, ..Default::default() }.build::<f64>().unwrap();
    let twin = task.perturb_one_sample(3, 7, 99).unwrap();
    let mut differing = 0;
    for (a, b) in task.shards.iter().zip(&twin.shards) {
        for (za, zb) in a.iter().zip(b) {
            assert_eq!(za.id, zb.id);
            differing += usize::from(za != zb);
        }
    }
    assert_eq!(differing, 1);
    assert!(task.perturb_one_sample(3, 10_000, 1).is_err());
    assert!(task.perturb_one_sample(99, 0, 1).is_err());
}

#[test]
fn mixture_knob_raises_heterogeneity() {
    let sg = |knob: f64| {
        let t = TaskConfig { kind: TaskKind::Logreg, hetero_knob: knob, concentration: 1e6, ..Default::default() }
            .build::<f64>()
            .unwrap();
        measure_sigma_g(&t, &t.initial).unwrap()
    };
    let vals: Vec<f64> = [0.0, 1.0, 3.0].into_iter().map(sg).collect();
    assert!(vals[0] < vals[1] && vals[1] < vals[2], "{vals:?}");
}

#[test]
fn task_round_trips_through_json() {
    for kind in [TaskKind::Quadratic, TaskKind::Logreg, TaskKind::Mlp] {
        let t = TaskConfig { kind, ..Default::default() }.build::<f64>().unwrap();
        let back = TaskSpec::<f64>::from_json(&t.to_json().unwrap()).unwrap();
        assert_eq!(back, t);
    }
}

#[test]
fn stability_scales_with_clients_at_full_participation() {
    let base = RunConfig::<f64> {
        task: TaskConfig { dim: 5, clients: 4, samples: 50, noise_sigma: 0.1, ..Default::default() },
        algorithm: Algorithm::FedSwa,
        sched: LrSchedule::new(0.05, 0.1, 10, 1.0).unwrap(),
        rounds: 50,
        participation: 4,
        batch_size: 10,
        seed: 8,
        ..Default::default()
    };
    let r = stability_sweep(&base, SweepAxis::M, &[4.0, 8.0, 16.0], 10).unwrap();
    let s = r.loglog_slope.unwrap();
    assert!((-1.4..=-0.6).contains(&s), "slope {s}");
    assert!(r.rows.iter().all(|row| row.theory_bound.is_some()));
}

#[test]
fn theory_is_reported_only_at_full_participation() {
    let base = RunConfig::<f64> {
        task: TaskConfig { dim: 3, clients: 6, samples: 20, ..Default::default() },
        algorithm: Algorithm::FedMoSwa,
        rounds: 5,
        participation: 2,
        ..Default::default()
    };
    let r = stability_sweep(&base, SweepAxis::T, &[2.0, 5.0], 2).unwrap();
    assert!(r.rows.iter().all(|row| row.theory_bound.is_none()));
    assert!(r.rows.iter().all(|row| row.gap_param >= 0.0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn quadratic_optimum_is_stationary(seed in 0u64..10_000, knob in 0.0f64..3.0, noise in 0.0f64..1.0, dim in 1usize..7) {
        let t = make_quadratic::<f64>(&QuadraticConfig { dim, clients: 5, samples: 8, hetero_knob: knob, noise_sigma: noise, seed, ..Default::default() }).unwrap();
        let opt = t.optimum.clone().unwrap();
        let g = t.train_loss_grad(&opt).unwrap().1;
        prop_assert!(fedlab::numkit::l2_norm(&g) < 1e-10);
        prop_assert!(t.shards.iter().all(|s| s.len() == 8));
    }

    #[test]
    fn twin_gap_is_zero_at_start(seed in 0u64..1000, client in 0usize..4, id in 0u64..10) {
        let cfg = RunConfig::<f64> {
            task: TaskConfig { dim: 2, clients: 4, samples: 10, seed, ..Default::default() },
            rounds: 3,
            participation: 4,
            batch_size: 3,
            seed,
            ..Default::default()
        };
        let out = twin_run(&cfg, client, id, seed).unwrap();
        prop_assert_eq!(out.gaps[0], 0.0);
        prop_assert!(out.gaps.iter().all(|g| *g >= 0.0));
    }
}
