//! Square-root velocity representation and the elastic distance between
//! SRV curves, minimised over discretised warps by dynamic programming.

use ndarray::{Array2, ArrayView2};

use crate::error::{FaeError, Result};
use crate::fdata::{BasisSystem, FunctionalSample};

/// Velocities below this norm map to a zero SRV.
pub const SRV_EPS: f64 = 1e-8;
/// Smallest grid accepted by the warp DP.
pub const MIN_GRID: usize = 16;
/// Largest step in either direction of the DP neighbourhood.
const MAX_STEP: usize = 10;
/// Steep single-sample moves reach slopes up to this value (and its
/// reciprocal), which matters where a warp has near-zero speed.
const MAX_STEEP: usize = 32;
/// Coordinate-descent sweeps after the DP and their stopping rule.
const REFINE_SWEEPS: usize = 3000;
const REFINE_TOL: f64 = 1e-10;
const GOLDEN_ITERS: usize = 30;

/// `n` equispaced points covering `[lo, hi]`.
pub fn uniform_grid(domain: (f64, f64), n: usize) -> Vec<f64> {
    let (lo, hi) = domain;
    if n == 1 {
        return vec![lo];
    }
    (0..n)
        .map(|k| if k + 1 == n { hi } else { lo + (hi - lo) * k as f64 / (n - 1) as f64 })
        .collect()
}

/// Maps a `p × N` velocity matrix to its SRV: `v / sqrt(‖v‖)` column-wise.
pub fn srv_from_velocity(vel: ArrayView2<f64>) -> Array2<f64> {
    let mut out = vel.to_owned();
    for mut col in out.columns_mut() {
        let norm = col.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > SRV_EPS {
            col.mapv_inplace(|v| v / norm.sqrt());
        } else {
            col.fill(0.0);
        }
    }
    out
}

/// SRV of a sample on `grid`, with the derivative taken from the basis.
pub fn srv_transform(sample: &FunctionalSample, basis: &BasisSystem, grid: &[f64]) -> Result<Array2<f64>> {
    let vel = sample.evaluate_deriv(basis, grid, 1)?;
    Ok(srv_from_velocity(vel.view()))
}

/// Discrete `L²` norm of a `p × N` SRV on a uniform grid of spacing `h`
/// (trapezoid rule).
pub fn srv_norm(q: ArrayView2<f64>, h: f64) -> f64 {
    let n = q.ncols();
    let mut acc = 0.0;
    for (k, col) in q.columns().into_iter().enumerate() {
        let w = if k == 0 || k + 1 == n { 0.5 } else { 1.0 };
        acc += w * col.iter().map(|v| v * v).sum::<f64>();
    }
    (acc * h).sqrt()
}

/// Elastic distance between two samples evaluated on an `n`-point grid.
pub fn elastic_distance(f: &FunctionalSample, g: &FunctionalSample, basis: &BasisSystem, n: usize) -> Result<f64> {
    if n < MIN_GRID {
        return Err(FaeError::GridTooSmall { n, min: MIN_GRID });
    }
    if f.basis_id != basis.id() || g.basis_id != basis.id() || f.dims() != g.dims() {
        return Err(FaeError::BasisMismatch);
    }
    let grid = uniform_grid(basis.domain(), n);
    let q1 = srv_transform(f, basis, &grid)?;
    let q2 = srv_transform(g, basis, &grid)?;
    elastic_distance_srv(q1.view(), q2.view(), basis.domain_len())
}

/// Elastic distance between two SRVs sampled on the same uniform grid over
/// a domain of length `span`.
///
/// The DP is run in both directions and the smaller optimum is returned, so
/// the result is symmetric.
pub fn elastic_distance_srv(q1: ArrayView2<f64>, q2: ArrayView2<f64>, span: f64) -> Result<f64> {
    let n = q1.ncols();
    if n < MIN_GRID {
        return Err(FaeError::GridTooSmall { n, min: MIN_GRID });
    }
    if q2.dim() != q1.dim() {
        return Err(FaeError::ShapeMismatch(format!("SRV shapes {:?} and {:?}", q1.dim(), q2.dim())));
    }
    let h = span / (n - 1) as f64;
    let steps = build_steps(&step_pairs());
    let a = warp_energy(q1, q2, &steps);
    let b = warp_energy(q2, q1, &steps);
    Ok((a.min(b).max(0.0) * h).sqrt())
}

fn step_pairs() -> Vec<(usize, usize)> {
    let mut pairs = coprime_steps(MAX_STEP);
    for a in MAX_STEP + 1..=MAX_STEEP {
        pairs.push((a, 1));
        pairs.push((1, a));
    }
    pairs
}

fn coprime_steps(k: usize) -> Vec<(usize, usize)> {
    fn gcd(a: usize, b: usize) -> usize {
        if b == 0 {
            a
        } else {
            gcd(b, a % b)
        }
    }
    let mut out = Vec::new();
    for a in 1..=k {
        for b in 1..=k {
            if gcd(a, b) == 1 {
                out.push((a, b));
            }
        }
    }
    out
}

/// One DP move: `a` rows of `q1` against `b` samples of `q2`, with the
/// interpolation offsets and weights of each covered sample precomputed.
struct Step {
    a: usize,
    b: usize,
    root: f64,
    taps: Vec<(usize, f64)>,
}

fn build_steps(pairs: &[(usize, usize)]) -> Vec<Step> {
    let mut steps: Vec<Step> = pairs
        .iter()
        .map(|&(a, b)| {
            let slope = a as f64 / b as f64;
            let taps = (1..=b)
                .map(|x| {
                    let num = a * x;
                    (num / b, (num % b) as f64 / b as f64)
                })
                .collect();
            Step { a, b, root: slope.sqrt(), taps }
        })
        .collect();
    // cheap, likely-optimal moves first so the running best prunes early
    steps.sort_by_key(|s| (s.a.max(s.b), s.b, s.a));
    steps
}

/// Minimum over piecewise-linear warps `γ` of
/// `Σ_x |q2(x) − q1(γ(x))·sqrt(γ'(x))|²`, in grid units.
///
/// Cell `(i, j)` means `γ(j) = i`. A step `(a, b)` moves from `(i−a, j−b)`
/// with slope `a/b`, and charges the `b` samples of `q2` it covers
/// against linearly interpolated `q1`. The DP optimum is then polished by
/// [`refine_warp`], which frees `γ` from the grid vertices.
fn warp_energy(q1: ArrayView2<f64>, q2: ArrayView2<f64>, steps: &[Step]) -> f64 {
    let p = q1.nrows();
    let n = q1.ncols();
    // time-major copies with one padding sample for the interpolation tap
    let mut c1: Vec<f64> = q1.t().iter().copied().collect();
    c1.extend_from_slice(&c1[(n - 1) * p..n * p].to_vec());
    let c2: Vec<f64> = q2.t().iter().copied().collect();
    let mut energy = vec![f64::INFINITY; n * n];
    let mut choice = vec![u16::MAX; n * n];
    energy[0] = 0.0;
    for i in 1..n {
        for j in 1..n {
            let mut best = f64::INFINITY;
            let mut arg = u16::MAX;
            for (s, st) in steps.iter().enumerate() {
                if st.a > i || st.b > j {
                    continue;
                }
                let (k, l) = (i - st.a, j - st.b);
                let prev = energy[k * n + l];
                if prev >= best {
                    continue;
                }
                let mut total = prev;
                for (x, &(off, fr)) in st.taps.iter().enumerate() {
                    let r1 = (k + off) * p;
                    let r2 = (l + 1 + x) * p;
                    for d in 0..p {
                        let v = c1[r1 + d] + fr * (c1[r1 + p + d] - c1[r1 + d]);
                        let e = c2[r2 + d] - v * st.root;
                        total += e * e;
                    }
                    if total >= best {
                        break;
                    }
                }
                if total < best {
                    best = total;
                    arg = s as u16;
                }
            }
            energy[i * n + j] = best;
            choice[i * n + j] = arg;
        }
    }
    let dp = energy[n * n - 1];
    if !dp.is_finite() {
        return dp;
    }
    // γ at every sample of q2 along the optimal path
    let mut gamma = vec![0.0; n];
    let (mut i, mut j) = (n - 1, n - 1);
    while i > 0 && j > 0 {
        let st = &steps[choice[i * n + j] as usize];
        let (k, l) = (i - st.a, j - st.b);
        for x in 1..=st.b {
            gamma[l + x] = k as f64 + (st.a * x) as f64 / st.b as f64;
        }
        (i, j) = (k, l);
    }
    refine_warp(&c1, &c2, p, &mut gamma).min(dp)
}

/// Sweeps of coordinate descent on the same discrete energy with `γ(j)`
/// free to move between its neighbours. Returns the polished energy.
fn refine_warp(c1: &[f64], c2: &[f64], p: usize, gamma: &mut [f64]) -> f64 {
    let n = gamma.len();
    let top = (n - 1) as f64;
    // charge of sample j given γ(j) = y and γ(j−1) = prev
    let term = |j: usize, y: f64, prev: f64| -> f64 {
        let root = (y - prev).max(0.0).sqrt();
        let y = y.clamp(0.0, top);
        let k = (y.floor() as usize).min(n - 1);
        let fr = y - k as f64;
        let (r1, r2) = (k * p, j * p);
        let mut e = 0.0;
        for d in 0..p {
            let v = c1[r1 + d] + fr * (c1[r1 + p + d] - c1[r1 + d]);
            let diff = c2[r2 + d] - v * root;
            e += diff * diff;
        }
        e
    };
    let total = |g: &[f64]| (1..n).map(|j| term(j, g[j], g[j - 1])).sum::<f64>();
    let mut current = total(gamma);
    let inv_phi = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..REFINE_SWEEPS {
        for j in 1..n - 1 {
            let (lo, hi) = (gamma[j - 1], gamma[j + 1]);
            let local = |y: f64| term(j, y, lo) + term(j + 1, gamma[j + 1], y);
            let mut best = (local(gamma[j]), gamma[j]);
            let (mut a, mut b) = (lo, hi);
            let mut x1 = b - inv_phi * (b - a);
            let mut x2 = a + inv_phi * (b - a);
            let (mut f1, mut f2) = (local(x1), local(x2));
            for _ in 0..GOLDEN_ITERS {
                if f1 < f2 {
                    b = x2;
                    x2 = x1;
                    f2 = f1;
                    x1 = b - inv_phi * (b - a);
                    f1 = local(x1);
                } else {
                    a = x1;
                    x1 = x2;
                    f1 = f2;
                    x2 = a + inv_phi * (b - a);
                    f2 = local(x2);
                }
            }
            for (f, x) in [(f1, x1), (f2, x2)] {
                if f < best.0 {
                    best = (f, x);
                }
            }
            gamma[j] = best.1;
        }
        let next = total(gamma);
        let done = current - next <= REFINE_TOL * current.max(f64::MIN_POSITIVE);
        current = next.min(current);
        if done {
            break;
        }
    }
    current
}
