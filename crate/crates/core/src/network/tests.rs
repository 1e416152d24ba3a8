use std::sync::Arc;

use ndarray::{Array2, Array3, Axis};
use rand::Rng;
use rand_distr::StandardNormal;

use super::*;
use crate::fdata::{BasisSpec, BasisSystem, FunctionalDataset, FunctionalSample};

fn toy_config() -> NetworkConfig {
    NetworkConfig {
        layer_widths: vec![3, 2, 2, 2, 3],
        latent_dim: 2,
        net_basis_size: 6,
        batch_size: 8,
        lambda_w: 0.05,
        lambda_c: 0.3,
        ..NetworkConfig::default()
    }
}

fn random_dataset(n: usize, p: usize, m: usize, seed: u64) -> FunctionalDataset {
    let basis = Arc::new(BasisSystem::new(BasisSpec::bspline(m, 3, [0.0, 1.0])).unwrap());
    let mut rng = crate::rng(seed);
    let samples = (0..n)
        .map(|i| {
            let c = Array2::from_shape_fn((p, m), |_| rng.sample::<f64, _>(StandardNormal));
            FunctionalSample::new(i as i64, c, &basis).unwrap()
        })
        .collect();
    FunctionalDataset::new(samples, basis).unwrap()
}

fn perturb(net: &mut FaeNetwork, seed: u64) {
    // move every parameter off its initial value, keeping all of them
    // away from zero so the l1 term is differentiable
    let mut rng = crate::rng(seed);
    for v in net.params.iter_mut() {
        let step: f64 = rng.random_range(0.05..0.4);
        *v += if rng.random::<bool>() { step } else { -step };
    }
    net.touch();
}

fn total_loss(net: &FaeNetwork, z: &Array2<f64>, y: &Array3<f64>, labels: Option<&[usize]>, w: LossWeights, mode: Mode) -> f64 {
    let mut rng = crate::rng(3);
    let cache = net.forward(z.view(), mode, &mut rng).unwrap();
    net.backward(&cache, y.view(), labels, w).unwrap().1.total
}

fn gradient_check(mode: Mode, batch: usize, seed: u64) {
    let ds = random_dataset(batch, 2, 8, seed);
    let mut net = FaeNetwork::new(&toy_config(), &ds.basis, 2).unwrap();
    perturb(&mut net, seed + 1);
    if mode == Mode::Eval {
        let mut rng = crate::rng(seed + 2);
        for m in net.moments.iter_mut() {
            m.mean.iter_mut().for_each(|v| *v = rng.random_range(-0.5..0.5));
            m.var.iter_mut().for_each(|v| *v = rng.random_range(0.5..2.0));
            m.trained = true;
        }
    }
    let input = net.prepare(&ds).unwrap();
    let idx: Vec<usize> = (0..batch).collect();
    let (z, y) = input.batch(&idx);
    let labels: Vec<usize> = (0..batch).map(|i| i % 3).collect();
    let w = LossWeights { lambda_w: 0.05, lambda_c: 0.3 };
    let mut rng = crate::rng(3);
    let cache = net.forward(z.view(), mode, &mut rng).unwrap();
    let (grad, _) = net.backward(&cache, y.view(), Some(&labels), w).unwrap();
    let h = 1e-5;
    let mut worst = 0.0f64;
    for k in 0..net.params.len() {
        let orig = net.params[k];
        net.params[k] = orig + h;
        net.touch();
        let up = total_loss(&net, &z, &y, Some(&labels), w, mode);
        net.params[k] = orig - h;
        net.touch();
        let down = total_loss(&net, &z, &y, Some(&labels), w, mode);
        net.params[k] = orig;
        net.touch();
        let fd = (up - down) / (2.0 * h);
        let rel = (fd - grad[k]).abs() / fd.abs().max(grad[k].abs()).max(1e-6);
        worst = worst.max(rel);
        assert!(rel < 1e-4, "param {k}: analytic {} vs fd {fd} (rel {rel})", grad[k]);
    }
    assert!(worst < 1e-4);
}

#[test]
fn gradient_matches_finite_differences_with_running_moments() {
    for seed in 0..4 {
        gradient_check(Mode::Eval, 5, 10 * seed);
    }
}

#[test]
fn gradient_matches_finite_differences_with_batch_statistics() {
    for seed in 0..4 {
        gradient_check(Mode::Train, 9, 100 + 10 * seed);
    }
}

#[test]
fn gradient_without_batch_norm() {
    // untrained moments in eval mode and small train batches skip the
    // normalisation entirely
    gradient_check(Mode::Train, 4, 7);
}

#[test]
fn zero_network_outputs_zero() {
    let ds = random_dataset(3, 1, 8, 1);
    let mut net = FaeNetwork::new(&toy_config(), &ds.basis, 1).unwrap();
    net.params.iter_mut().for_each(|v| *v = 0.0);
    net.touch();
    let input = net.prepare(&ds).unwrap();
    assert!(net.embed(&input).unwrap().iter().all(|&v| v == 0.0));
    assert!(net.reconstruct(&input).unwrap().iter().all(|&v| v == 0.0));
}

#[test]
fn constant_weight_integrates_input() {
    let basis = Arc::new(BasisSystem::new(BasisSpec::bspline(8, 3, [0.0, 1.0])).unwrap());
    // B-spline coefficients all 3 give the constant function 3
    let s = FunctionalSample::new(0, Array2::from_elem((1, 8), 3.0), &basis).unwrap();
    let ds = FunctionalDataset::new(vec![s], basis.clone()).unwrap();
    let mut net = FaeNetwork::new(&toy_config(), &basis, 1).unwrap();
    net.params.iter_mut().for_each(|v| *v = 0.0);
    let lay = net.layout().clone();
    let l = net.config.net_basis_size;
    // w_{0,0} ≡ 1 = 1/|T|
    for u in 0..l {
        net.params[lay.seg(lay.enc_w).offset + u] = 1.0 / net.net_scale()[u];
    }
    net.touch();
    let input = net.prepare(&ds).unwrap();
    let mut rng = crate::rng(0);
    let cache = net.forward(input.z.view(), Mode::Eval, &mut rng).unwrap();
    let pre = cache.encoder_pre().unwrap();
    assert!((pre[[0, 0]] - 3.0).abs() < 1e-12, "{}", pre[[0, 0]]);
    assert_eq!(pre[[0, 1]], 0.0);
}

#[test]
fn eval_forward_is_bitwise_repeatable() {
    let ds = random_dataset(10, 2, 8, 4);
    let mut cfg = toy_config();
    cfg.tau = 0.5;
    let net = FaeNetwork::new(&cfg, &ds.basis, 2).unwrap();
    let input = net.prepare(&ds).unwrap();
    let a = net.reconstruct(&input).unwrap();
    let b = net.reconstruct(&input).unwrap();
    assert_eq!(a, b);
    assert_eq!(net.embed(&input).unwrap(), net.embed(&input).unwrap());
}

#[test]
fn reconstruction_loss_of_unit_constant() {
    let basis = Arc::new(BasisSystem::new(BasisSpec::bspline(8, 3, [0.0, 1.0])).unwrap());
    let s = FunctionalSample::new(0, Array2::from_elem((1, 8), 1.0), &basis).unwrap();
    let ds = FunctionalDataset::new(vec![s], basis.clone()).unwrap();
    let net = FaeNetwork::new(&toy_config(), &basis, 1).unwrap();
    let input = net.prepare(&ds).unwrap();
    let (_, y) = input.batch(&[0]);
    let zero = Array3::zeros(y.dim());
    assert!((net.reconstruction_loss(y.view(), zero.view()) - 1.0).abs() < 1e-13);
    assert_eq!(net.reconstruction_loss(y.view(), y.view()), 0.0);
}

#[test]
fn reconstruction_loss_matches_dense_grid() {
    let ds = random_dataset(3, 2, 8, 21);
    let other = random_dataset(3, 2, 8, 22);
    let net = FaeNetwork::new(&toy_config(), &ds.basis, 2).unwrap();
    let idx = [0, 1, 2];
    let (_, y) = net.prepare(&ds).unwrap().batch(&idx);
    let (_, g) = net.prepare(&FunctionalDataset::new(other.samples.clone(), ds.basis.clone()).unwrap()).unwrap().batch(&idx);
    let got = net.reconstruction_loss(y.view(), g.view());
    let n = 20001;
    let grid: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
    let mut oracle = 0.0;
    for i in 0..3 {
        let a = ds.samples[i].evaluate(&ds.basis, &grid).unwrap();
        let b = other.samples[i].evaluate(&ds.basis, &grid).unwrap();
        for d in 0..2 {
            let sq: Vec<f64> = (0..n).map(|k| (a[[d, k]] - b[[d, k]]).powi(2)).collect();
            let h = 1.0 / (n - 1) as f64;
            oracle += h * (sq.iter().sum::<f64>() - 0.5 * (sq[0] + sq[n - 1]));
        }
    }
    oracle /= 3.0;
    assert!((got - oracle).abs() < 1e-6, "{got} vs {oracle}");
}

#[test]
fn roughness_integral_vanishes_for_linear_weights() {
    let ds = random_dataset(2, 1, 8, 2);
    let mut net = FaeNetwork::new(&toy_config(), &ds.basis, 1).unwrap();
    let knots = net.net_basis().knots().to_vec();
    let l = net.config.net_basis_size;
    // Greville abscissae reproduce the identity function
    let greville: Vec<f64> = (0..l).map(|j| (knots[j + 1] + knots[j + 2] + knots[j + 3]) / 3.0).collect();
    let lay = net.layout().clone();
    let scale = net.net_scale().clone();
    for s in lay.decoder_segments() {
        for (k, v) in net.params[lay.seg(s).range()].iter_mut().enumerate() {
            *v = (2.0 * greville[k % l] - 0.5) / scale[k % l];
        }
    }
    net.touch();
    assert!(net.roughness_integral().abs() < 1e-9, "{}", net.roughness_integral());
}

#[test]
fn perfect_reconstruction_has_zero_reconstruction_gradient() {
    let ds = random_dataset(4, 1, 8, 5);
    let net = FaeNetwork::new(&toy_config(), &ds.basis, 1).unwrap();
    let input = net.prepare(&ds).unwrap();
    let mut rng = crate::rng(0);
    let cache = net.forward(input.z.view(), Mode::Eval, &mut rng).unwrap();
    let target = cache.yhat.clone();
    let (grad, loss) = net.backward(&cache, target.view(), None, LossWeights { lambda_w: 0.0, lambda_c: 0.0 }).unwrap();
    assert_eq!(loss.reconstruction, 0.0);
    assert!(grad.iter().all(|&g| g == 0.0));
}

#[test]
fn duplicated_batch_leaves_gradient_unchanged() {
    let ds = random_dataset(4, 2, 8, 6);
    let mut net = FaeNetwork::new(&toy_config(), &ds.basis, 2).unwrap();
    perturb(&mut net, 1);
    let input = net.prepare(&ds).unwrap();
    let w = LossWeights { lambda_w: 0.05, lambda_c: 0.3 };
    let grad_of = |idx: &[usize], labels: &[usize]| {
        let (z, y) = input.batch(idx);
        let mut rng = crate::rng(0);
        let cache = net.forward(z.view(), Mode::Eval, &mut rng).unwrap();
        net.backward(&cache, y.view(), Some(labels), w).unwrap().0
    };
    let g1 = grad_of(&[0, 1, 2, 3], &[0, 0, 1, 1]);
    let g2 = grad_of(&[0, 1, 2, 3, 0, 1, 2, 3], &[0, 0, 1, 1, 0, 0, 1, 1]);
    for (a, b) in g1.iter().zip(&g2) {
        assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()), "{a} vs {b}");
    }
}

#[test]
fn stale_cache_is_rejected() {
    let ds = random_dataset(4, 1, 8, 7);
    let mut net = FaeNetwork::new(&toy_config(), &ds.basis, 1).unwrap();
    let input = net.prepare(&ds).unwrap();
    let mut rng = crate::rng(0);
    let cache = net.forward(input.z.view(), Mode::Train, &mut rng).unwrap();
    net.touch();
    let (_, y) = input.batch(&[0, 1, 2, 3]);
    let w = LossWeights { lambda_w: 0.0, lambda_c: 0.0 };
    assert!(matches!(net.backward(&cache, y.view(), None, w), Err(crate::FaeError::StaleCache)));
}

#[test]
fn zero_decoder_coefficient_stays_zero() {
    let ds = random_dataset(4, 1, 8, 8);
    let mut net = FaeNetwork::new(&toy_config(), &ds.basis, 1).unwrap();
    let lay = net.layout().clone();
    let k = lay.seg(lay.dec[2].0).offset;
    net.params[k] = 0.0;
    net.touch();
    let input = net.prepare(&ds).unwrap();
    let mut rng = crate::rng(0);
    let cache = net.forward(input.z.view(), Mode::Eval, &mut rng).unwrap();
    let target = cache.yhat.clone();
    let (grad, _) = net.backward(&cache, target.view(), None, LossWeights { lambda_w: 1.0, lambda_c: 0.0 }).unwrap();
    assert_eq!(grad[k], 0.0);
}

#[test]
fn sgd_momentum_examples() {
    let mut opt = SgdMomentum::new(1.0, 0.9, 1);
    let mut theta = [0.0];
    opt.step(&mut theta, &[1.0]);
    opt.step(&mut theta, &[1.0]);
    assert!((theta[0] + 0.29).abs() < 1e-15);

    let mut plain = SgdMomentum::new(0.5, 0.0, 2);
    let mut theta = [1.0, 2.0];
    plain.step(&mut theta, &[2.0, -4.0]);
    assert_eq!(theta, [0.0, 4.0]);

    let mut idle = SgdMomentum::new(0.3, 0.9, 2);
    let mut theta = [1.5, -2.5];
    for _ in 0..5 {
        idle.step(&mut theta, &[0.0, 0.0]);
    }
    assert_eq!(theta, [1.5, -2.5]);
}

#[test]
fn last_small_batch_is_merged() {
    let mut rng = crate::rng(1);
    let b = make_batches(37, 16, &mut rng);
    assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![16, 21]);
    let mut all: Vec<usize> = b.concat();
    all.sort_unstable();
    assert_eq!(all, (0..37).collect::<Vec<_>>());
    assert_eq!(make_batches(40, 16, &mut rng).iter().map(Vec::len).collect::<Vec<_>>(), vec![16, 16, 8]);
}

fn span_dataset(n: usize, seed: u64) -> FunctionalDataset {
    // smooth curves a·sin(2πt) + b·t, well inside what the decoder can express
    let basis = Arc::new(BasisSystem::new(BasisSpec::bspline(10, 3, [0.0, 1.0])).unwrap());
    let grid: Vec<f64> = (0..60).map(|i| i as f64 / 59.0).collect();
    let mut rng = crate::rng(seed);
    let paths: Vec<_> = (0..n)
        .map(|i| {
            let (a, b): (f64, f64) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let v = Array2::from_shape_fn((60, 1), |(k, _)| a * (std::f64::consts::TAU * grid[k]).sin() + b * grid[k]);
            crate::fdata::SamplePath::new(i as i64, grid.clone(), v).unwrap()
        })
        .collect();
    let samples = crate::fdata::smooth_all(&paths, &basis, 0.0).unwrap();
    FunctionalDataset::new(samples, basis).unwrap()
}

#[test]
fn zero_epochs_leave_parameters_unchanged() {
    let ds = span_dataset(12, 0);
    let net = FaeNetwork::new(&NetworkConfig { epochs: 0, ..toy_config() }, &ds.basis, 1).unwrap();
    let before = net.params.clone();
    let input = net.prepare(&ds).unwrap();
    let (after, hist) = pretrain(net, &input).unwrap();
    assert_eq!(after.params, before);
    assert!(hist.is_empty());
}

#[test]
fn pretraining_reduces_reconstruction_loss() {
    let ds = span_dataset(16, 1);
    let cfg = NetworkConfig {
        layer_widths: vec![4, 2, 4, 4, 4],
        latent_dim: 2,
        net_basis_size: 8,
        batch_size: 16,
        epochs: 500,
        alpha: 1e-2,
        lambda_w: 1e-4,
        ..NetworkConfig::default()
    };
    let net = FaeNetwork::new(&cfg, &ds.basis, 1).unwrap();
    let input = net.prepare(&ds).unwrap();
    let (net, hist) = pretrain(net, &input).unwrap();
    let first = hist[0].loss.reconstruction;
    let (_, y) = input.batch(&(0..16).collect::<Vec<_>>());
    let mut rng = crate::rng(0);
    let cache = net.forward(input.z.view(), Mode::Eval, &mut rng).unwrap();
    let last = net.reconstruction_loss(y.view(), cache.yhat.view());
    assert!(last < 0.1 * first, "{first} -> {last}");
}

#[test]
fn training_is_deterministic() {
    let ds = span_dataset(20, 2);
    let cfg = NetworkConfig { epochs: 3, tau: 0.8, ..toy_config() };
    let run = || {
        let net = FaeNetwork::new(&cfg, &ds.basis, 1).unwrap();
        let input = net.prepare(&ds).unwrap();
        let mut t = Trainer::new(net);
        t.pretrain(&input, 2).unwrap();
        t.finetune(&input, &(0..20).map(|i| i % 2).collect::<Vec<_>>(), 2).unwrap();
        t.into_network().params
    };
    assert_eq!(run(), run());
}

#[test]
fn checkpoint_round_trip_is_exact() {
    let ds = span_dataset(20, 3);
    let net = FaeNetwork::new(&NetworkConfig { epochs: 2, ..toy_config() }, &ds.basis, 1).unwrap();
    let input = net.prepare(&ds).unwrap();
    let (net, _) = pretrain(net, &input).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.json");
    save_checkpoint(&net, &path).unwrap();
    let back = load_checkpoint(&path).unwrap();
    assert_eq!(back.params, net.params);
    assert_eq!(back.moments, net.moments);
    assert_eq!(back.reconstruct(&input).unwrap(), net.reconstruct(&input).unwrap());
    assert_eq!(back.embed(&input).unwrap(), net.embed(&input).unwrap());
}

#[test]
fn decoder_only_forward_has_no_encoder_gradient() {
    let ds = random_dataset(9, 1, 8, 9);
    let net = FaeNetwork::new(&toy_config(), &ds.basis, 1).unwrap();
    let input = net.prepare(&ds).unwrap();
    let x = net.embed(&input).unwrap();
    let mut rng = crate::rng(0);
    let cache = net.forward_from_latent(x.view(), Mode::Eval, &mut rng).unwrap();
    let full = net.forward(input.z.view(), Mode::Eval, &mut rng).unwrap();
    assert_eq!(cache.yhat, full.yhat);
    let (_, y) = input.batch(&(0..9).collect::<Vec<_>>());
    let (grad, _) = net.backward(&cache, y.view(), None, LossWeights { lambda_w: 0.0, lambda_c: 0.0 }).unwrap();
    assert!(grad[..net.decoder_start()].iter().all(|&g| g == 0.0));
    let _ = x.len_of(Axis(0));
}
