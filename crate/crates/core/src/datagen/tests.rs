use std::sync::Arc;

use super::*;
use crate::fdata::{smooth_all, BasisSpec, BasisSystem};
use crate::metrics::hilbert_distance;

#[test]
fn default_shapes() {
    for kind in SimKind::ALL {
        let spec = SimSpec::new(kind, 1);
        let sim = generate(&spec).unwrap();
        let (n, p, r, k) = kind.default_shape();
        assert_eq!(sim.paths.len(), n);
        assert!(sim.paths.iter().all(|s| s.values.dim() == (r, p)));
        let mut labels = sim.labels.clone();
        labels.dedup();
        assert_eq!(labels, (0..k as i64).collect::<Vec<_>>());
    }
}

#[test]
fn generation_is_deterministic() {
    for kind in SimKind::ALL {
        let spec = SimSpec::new(kind, 9);
        assert_eq!(generate(&spec).unwrap(), generate(&spec).unwrap());
    }
    let w = WarpSpec::default();
    let spec = SimSpec::new(SimKind::Pendulum, 2);
    assert_eq!(generate_warped(&spec, Some(&w)).unwrap(), generate_warped(&spec, Some(&w)).unwrap());
}

#[test]
fn sphere_paths_stay_on_the_sphere() {
    let sim = generate(&SimSpec::new(SimKind::Hypersphere, 3).with_noise(0.0)).unwrap();
    for s in &sim.paths {
        for row in s.values.rows() {
            assert!((row.dot(&row).sqrt() - 1.0).abs() < 1e-6);
        }
    }
}

#[test]
fn hyperbolic_paths_stay_in_the_disk() {
    let sim = generate(&SimSpec::new(SimKind::Hyperbolic, 3).with_noise(0.0)).unwrap();
    for s in &sim.paths {
        assert!(s.values.rows().into_iter().all(|r| r.dot(&r) < 1.0));
    }
}

#[test]
fn subcritical_lorenz_settles() {
    let sim = generate(&SimSpec::new(SimKind::Lorenz, 4).with_noise(0.0)).unwrap();
    let window_var = |v: &ndarray::Array2<f64>, rows: std::ops::Range<usize>| -> f64 {
        let w = v.slice(ndarray::s![rows, ..]);
        w.var_axis(ndarray::Axis(0), 0.0).sum()
    };
    for (s, &l) in sim.paths.iter().zip(&sim.labels) {
        if l == 0 {
            assert!(window_var(&s.values, 80..100) < window_var(&s.values, 0..20));
        }
    }
}

#[test]
fn low_energy_pendulum_conserves_energy() {
    let mut spec = SimSpec::new(SimKind::Pendulum, 5).with_noise(0.0);
    spec.n_steps = 400;
    let sim = generate(&spec).unwrap();
    for (s, &l) in sim.paths.iter().zip(&sim.labels) {
        if l < 2 {
            let e: Vec<f64> = s.values.rows().into_iter().map(|r| 0.5 * r[1] * r[1] - r[0].cos()).collect();
            let spread = e.iter().cloned().fold(f64::MIN, f64::max) - e.iter().cloned().fold(f64::MAX, f64::min);
            assert!(spread < 1e-4, "{spread}");
            assert!(e[0] < 1.0);
        }
    }
}

#[test]
fn pendulum_angle_is_wrapped() {
    let sim = generate(&SimSpec::new(SimKind::Pendulum, 6).with_noise(0.0)).unwrap();
    for s in &sim.paths {
        assert!(s.values.column(0).iter().all(|&a| a > -PI && a <= PI));
    }
    assert_eq!(wrap_angle(PI), PI);
    assert!((wrap_angle(-PI) - PI).abs() < 1e-15);
    assert!((wrap_angle(3.0 * PI + 0.5) - (-PI + 0.5)).abs() < 1e-12);
}

#[test]
fn rk4_halving_the_step() {
    let tr = |h: f64| DenseTrajectory::integrate(pendulum_field, &[0.0, 2.4], h, 18.0);
    let (a, b) = (tr(ODE_STEP), tr(ODE_STEP / 2.0));
    let mut worst = 0.0f64;
    for k in 0..=1800 {
        let t = k as f64 * 0.01;
        let (x, y) = (a.at(t), b.at(t));
        worst = worst.max((x[0] - y[0]).abs()).max((x[1] - y[1]).abs());
    }
    assert!(worst < 1e-5, "{worst}");
    for rho in [14.0, 21.0, 28.0] {
        let lz = |h: f64| DenseTrajectory::integrate(lorenz_field(rho), &[1.0, 2.0, 20.0], h, 10.0);
        let (a, b) = (lz(LORENZ_STEP), lz(LORENZ_STEP / 2.0));
        let worst = (0..=1000)
            .map(|k| {
                let t = k as f64 * 0.01;
                a.at(t).iter().zip(b.at(t)).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
            })
            .fold(0.0, f64::max);
        eprintln!("rho {rho}: {worst:e}");
        assert!(worst < 1e-5, "rho {rho}: {worst}");
    }
}

#[test]
fn noise_free_classes_are_separated() {
    let basis = Arc::new(BasisSystem::new(BasisSpec::bspline(20, 3, [0.0, 1.0])).unwrap());
    for kind in SimKind::ALL {
        let mut spec = SimSpec::new(kind, 11).with_noise(0.0);
        spec.n_samples = 8 * spec.n_clusters;
        let sim = generate(&spec).unwrap();
        let smp = smooth_all(&sim.paths, &basis, 1e-8).unwrap();
        let (mut within, mut nw, mut between, mut nb) = (0.0, 0, 0.0, 0);
        for i in 0..smp.len() {
            for j in i + 1..smp.len() {
                let d = hilbert_distance(&smp[i], &smp[j], &basis).unwrap();
                if sim.labels[i] == sim.labels[j] {
                    within += d;
                    nw += 1;
                } else {
                    between += d;
                    nb += 1;
                }
            }
        }
        let (w, b) = (within / nw as f64, between / nb as f64);
        assert!(w < b, "{}: within {w} between {b}", kind.name());
    }
}

#[test]
fn invalid_specs() {
    let mut s = SimSpec::new(SimKind::Lorenz, 0);
    s.n_clusters = 4;
    assert!(matches!(generate(&s), Err(FaeError::InvalidSpec(_))));
    let mut s = SimSpec::new(SimKind::Pendulum, 0);
    s.n_dims = 3;
    assert!(generate(&s).is_err());
    assert!(generate(&SimSpec::new(SimKind::Swissroll, 0).with_noise(-1.0)).is_err());
    assert!("pendulum".parse::<SimKind>().is_ok() && "circle".parse::<SimKind>().is_err());
}

#[test]
fn identity_warp_reproduces_the_sample() {
    let basis = BasisSystem::new(BasisSpec::bspline(12, 3, [0.0, 1.0])).unwrap();
    let sim = generate(&SimSpec::new(SimKind::Hypersphere, 1)).unwrap();
    let smp = smooth_all(&sim.paths[..3], &basis, 1e-6).unwrap();
    let grid: Vec<f64> = (0..50).map(|k| k as f64 / 49.0).collect();
    for s in &smp {
        let w = apply_warp(s, &basis, &Warp::identity(), &grid).unwrap();
        let direct = s.evaluate(&basis, &grid).unwrap();
        assert!(w.values.t().iter().zip(direct.iter()).all(|(a, b)| (a - b).abs() < 1e-10));
    }
}

#[test]
fn warping_moves_hilbert_but_not_elastic_distance() {
    use crate::metrics::{elastic_distance, srv_norm, srv_transform, uniform_grid};
    let basis = BasisSystem::new(BasisSpec::bspline(12, 3, [0.0, 1.0])).unwrap();
    let sim = generate(&SimSpec::new(SimKind::Hypersphere, 2).with_noise(0.0)).unwrap();
    let smp = smooth_all(&sim.paths[..2], &basis, 0.0).unwrap();
    let h = make_warp(&WarpSpec { n_knots: 4, max_speed_ratio: 2.0, seed: 8 }).unwrap();
    let dense: Vec<f64> = (0..400).map(|k| k as f64 / 399.0).collect();
    for s in &smp {
        let path = apply_warp(s, &basis, &h, &dense).unwrap();
        let warped = crate::fdata::smooth(&path, &basis, 0.0).unwrap();
        let grid = uniform_grid(basis.domain(), 256);
        let q = srv_transform(s, &basis, &grid).unwrap();
        let norm = srv_norm(q.view(), grid[1] - grid[0]);
        let e = elastic_distance(s, &warped, &basis, 256).unwrap();
        assert!(e < 0.05 * norm, "elastic {e} vs srv norm {norm}");
        let l2 = hilbert_distance(s, &warped, &basis).unwrap();
        assert!(l2 > 0.0);
    }
}
