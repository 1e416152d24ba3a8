//! Dynamic time warping with squared Euclidean cell cost and the unit step
//! set `{(1,0), (0,1), (1,1)}`. Costs are unnormalised path sums.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::elastic::{uniform_grid, MIN_GRID};
use crate::error::{FaeError, Result};
use crate::fdata::{BasisSystem, FunctionalSample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DtwMode {
    /// Multiresolution refinement with a projection window of `radius`.
    Fast,
    /// Lower-bound-pruned DTW inside a Sakoe–Chiba band of width `radius`.
    Ultra,
}

/// Default band for ultra mode: `⌈0.1·N⌉`.
pub fn default_band(n: usize) -> usize {
    (n as f64 * 0.1).ceil() as usize
}

#[inline]
fn cell(a: ArrayView2<f64>, b: ArrayView2<f64>, i: usize, j: usize) -> f64 {
    a.row(i).iter().zip(b.row(j)).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Exact DTW over the full `n × m` grid. Series are time-major (`rows = time`).
pub fn dtw_full(a: ArrayView2<f64>, b: ArrayView2<f64>) -> f64 {
    let window: Vec<(usize, usize)> = (0..a.nrows()).map(|_| (0, b.nrows() - 1)).collect();
    windowed(a, b, &window, f64::INFINITY, false).0
}

/// DTW restricted to `window[i] = (lo, hi)` columns of each row, optionally
/// returning the optimal path. Partial costs above `cutoff` are discarded.
fn windowed(
    a: ArrayView2<f64>,
    b: ArrayView2<f64>,
    window: &[(usize, usize)],
    cutoff: f64,
    want_path: bool,
) -> (f64, Vec<(usize, usize)>) {
    let n = a.nrows();
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n);
    for i in 0..n {
        let (lo, hi) = window[i];
        let mut row = vec![f64::INFINITY; hi + 1 - lo];
        for j in lo..=hi {
            let prev = if i == 0 && j == 0 {
                0.0
            } else {
                let mut best = f64::INFINITY;
                if j > lo {
                    best = best.min(row[j - 1 - lo]);
                }
                if i > 0 {
                    let (plo, phi) = window[i - 1];
                    let up = &rows[i - 1];
                    if j >= plo && j <= phi {
                        best = best.min(up[j - plo]);
                    }
                    if j > plo && j - 1 <= phi {
                        best = best.min(up[j - 1 - plo]);
                    }
                }
                best
            };
            if prev.is_finite() {
                let v = prev + cell(a, b, i, j);
                row[j - lo] = if v > cutoff { f64::INFINITY } else { v };
            }
        }
        rows.push(row);
    }
    let m = b.nrows();
    let (lo, hi) = window[n - 1];
    let total = if m - 1 >= lo && m - 1 <= hi { rows[n - 1][m - 1 - lo] } else { f64::INFINITY };
    if !want_path || !total.is_finite() {
        return (total, Vec::new());
    }
    let get = |i: usize, j: usize| {
        let (lo, hi) = window[i];
        if j >= lo && j <= hi {
            rows[i][j - lo]
        } else {
            f64::INFINITY
        }
    };
    let mut path = vec![(n - 1, m - 1)];
    let (mut i, mut j) = (n - 1, m - 1);
    while i > 0 || j > 0 {
        let (ni, nj) = if i == 0 {
            (0, j - 1)
        } else if j == 0 {
            (i - 1, 0)
        } else {
            let diag = get(i - 1, j - 1);
            let up = get(i - 1, j);
            let left = get(i, j - 1);
            if diag <= up && diag <= left {
                (i - 1, j - 1)
            } else if up <= left {
                (i - 1, j)
            } else {
                (i, j - 1)
            }
        };
        i = ni;
        j = nj;
        path.push((i, j));
    }
    path.reverse();
    (total, path)
}

fn coarsen(a: ArrayView2<f64>) -> Array2<f64> {
    let n = a.nrows();
    let half = n.div_ceil(2);
    Array2::from_shape_fn((half, a.ncols()), |(i, d)| {
        if 2 * i + 1 < n {
            0.5 * (a[[2 * i, d]] + a[[2 * i + 1, d]])
        } else {
            a[[2 * i, d]]
        }
    })
}

/// FastDTW: cost and path. With `radius ≥ max(len) − 2` this is exact DTW.
pub fn fast_dtw(a: ArrayView2<f64>, b: ArrayView2<f64>, radius: usize) -> (f64, Vec<(usize, usize)>) {
    let (n, m) = (a.nrows(), b.nrows());
    let min_size = radius + 2;
    if n <= min_size || m <= min_size {
        let window: Vec<(usize, usize)> = (0..n).map(|_| (0, m - 1)).collect();
        return windowed(a, b, &window, f64::INFINITY, true);
    }
    let (ca, cb) = (coarsen(a), coarsen(b));
    let (_, coarse_path) = fast_dtw(ca.view(), cb.view(), radius);
    let mut window = vec![(usize::MAX, 0usize); n];
    // the radius is applied on the coarse grid, then each coarse cell
    // projects onto its 2×2 block
    let r = radius as isize;
    for &(ci, cj) in &coarse_path {
        let (ci, cj) = (ci as isize, cj as isize);
        let jl = (2 * (cj - r)).max(0) as usize;
        let jh = ((2 * (cj + r) + 1) as usize).min(m - 1);
        for i in (2 * (ci - r)).max(0)..=(2 * (ci + r) + 1).min(n as isize - 1) {
            let w = &mut window[i as usize];
            w.0 = w.0.min(jl);
            w.1 = w.1.max(jh);
        }
    }
    window[0].0 = 0;
    window[n - 1].1 = m - 1;
    // keep rows connected for monotone paths
    for i in 1..n {
        if window[i].0 == usize::MAX {
            window[i] = window[i - 1];
        }
        if window[i].0 > window[i - 1].1 {
            window[i].0 = window[i - 1].1;
        }
    }
    windowed(a, b, &window, f64::INFINITY, true)
}

/// LB_Keogh lower bound of banded DTW between equal-length series.
pub fn lb_keogh(a: ArrayView2<f64>, b: ArrayView2<f64>, band: usize) -> f64 {
    let n = a.nrows();
    let mut total = 0.0;
    for i in 0..n {
        let lo = i.saturating_sub(band);
        let hi = (i + band).min(n - 1);
        for d in 0..a.ncols() {
            let mut upper = f64::NEG_INFINITY;
            let mut lower = f64::INFINITY;
            for j in lo..=hi {
                upper = upper.max(b[[j, d]]);
                lower = lower.min(b[[j, d]]);
            }
            let x = a[[i, d]];
            if x > upper {
                total += (x - upper) * (x - upper);
            } else if x < lower {
                total += (lower - x) * (lower - x);
            }
        }
    }
    total
}

/// Banded DTW pruned against the diagonal alignment as an upper bound, with
/// an LB_Keogh shortcut when the bound is already tight.
pub fn ultra_dtw(a: ArrayView2<f64>, b: ArrayView2<f64>, band: usize) -> Result<f64> {
    let n = a.nrows();
    if b.nrows() != n {
        return Err(FaeError::ShapeMismatch(format!("ultra DTW needs equal lengths, got {} and {}", n, b.nrows())));
    }
    let upper: f64 = (0..n).map(|i| cell(a, b, i, i)).sum();
    let lower = lb_keogh(a, b, band).max(lb_keogh(b, a, band));
    if lower >= upper {
        return Ok(upper);
    }
    let window: Vec<(usize, usize)> = (0..n).map(|i| (i.saturating_sub(band), (i + band).min(n - 1))).collect();
    Ok(windowed(a, b, &window, upper, false).0.min(upper))
}

/// DTW cost between two samples evaluated on an `n`-point uniform grid.
///
/// `radius` is the FastDTW projection radius in fast mode and the band
/// half-width in ultra mode (`None` selects `⌈0.1·n⌉`).
pub fn dtw_distance(
    f: &FunctionalSample,
    g: &FunctionalSample,
    basis: &BasisSystem,
    n: usize,
    mode: DtwMode,
    radius: Option<usize>,
) -> Result<f64> {
    if n < MIN_GRID {
        return Err(FaeError::GridTooSmall { n, min: MIN_GRID });
    }
    if f.basis_id != basis.id() || g.basis_id != basis.id() || f.dims() != g.dims() {
        return Err(FaeError::BasisMismatch);
    }
    let grid = uniform_grid(basis.domain(), n);
    let a = f.evaluate(basis, &grid)?.reversed_axes();
    let b = g.evaluate(basis, &grid)?.reversed_axes();
    dtw_series(a.view(), b.view(), mode, radius)
}

/// DTW cost between two time-major series of equal length.
pub fn dtw_series(a: ArrayView2<f64>, b: ArrayView2<f64>, mode: DtwMode, radius: Option<usize>) -> Result<f64> {
    let n = a.nrows();
    let r = radius.unwrap_or_else(|| default_band(n));
    match mode {
        DtwMode::Fast => {
            if r == 0 {
                return Err(FaeError::Config("fast DTW radius must be at least 1".into()));
            }
            Ok(fast_dtw(a, b, r).0)
        }
        DtwMode::Ultra => ultra_dtw(a, b, r),
    }
}

#[cfg(test)]
mod tests {
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    /// Textbook O(n·m) recursion, written independently of `windowed`.
    fn oracle(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
        let (n, m) = (a.nrows(), b.nrows());
        let mut d = vec![vec![f64::INFINITY; m + 1]; n + 1];
        d[0][0] = 0.0;
        for i in 1..=n {
            for j in 1..=m {
                let c: f64 = (0..a.ncols()).map(|k| (a[[i - 1, k]] - b[[j - 1, k]]).powi(2)).sum();
                d[i][j] = c + d[i - 1][j - 1].min(d[i - 1][j]).min(d[i][j - 1]);
            }
        }
        d[n][m]
    }

    fn walk(rng: &mut ChaCha8Rng, n: usize, p: usize) -> Array2<f64> {
        let mut out = Array2::zeros((n, p));
        for d in 0..p {
            let mut x = 0.0;
            for i in 0..n {
                x += rng.random_range(-1.0..1.0);
                out[[i, d]] = x;
            }
        }
        out
    }

    #[test]
    fn full_matches_oracle_on_unequal_lengths() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..5 {
            let a = walk(&mut rng, 23, 2);
            let b = walk(&mut rng, 31, 2);
            assert!((dtw_full(a.view(), b.view()) - oracle(&a, &b)).abs() < 1e-9);
        }
    }

    #[test]
    fn constant_shift_costs_n() {
        let a = Array2::zeros((64, 1));
        let b = Array2::ones((64, 1));
        for mode in [DtwMode::Fast, DtwMode::Ultra] {
            assert!((dtw_series(a.view(), b.view(), mode, Some(3)).unwrap() - 64.0).abs() < 1e-12);
        }
        assert!((oracle(&a, &b) - 64.0).abs() < 1e-12);
    }

    #[test]
    fn approximations_bound_exact_from_above() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10 {
            let a = walk(&mut rng, 64, 1);
            let b = walk(&mut rng, 64, 1);
            let exact = oracle(&a, &b);
            let fast = dtw_series(a.view(), b.view(), DtwMode::Fast, Some(4)).unwrap();
            let ultra = dtw_series(a.view(), b.view(), DtwMode::Ultra, None).unwrap();
            assert!(fast >= exact - 1e-9 && ultra >= exact - 1e-9);
            let full_fast = dtw_series(a.view(), b.view(), DtwMode::Fast, Some(64)).unwrap();
            let full_ultra = dtw_series(a.view(), b.view(), DtwMode::Ultra, Some(64)).unwrap();
            assert!((full_fast - exact).abs() < 1e-9);
            assert!((full_ultra - exact).abs() < 1e-9);
        }
    }

    #[test]
    fn self_distance_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = walk(&mut rng, 40, 3);
        for mode in [DtwMode::Fast, DtwMode::Ultra] {
            assert_eq!(dtw_series(a.view(), a.view(), mode, Some(2)).unwrap(), 0.0);
        }
    }

    #[test]
    fn lb_keogh_is_a_lower_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..10 {
            let a = walk(&mut rng, 50, 2);
            let b = walk(&mut rng, 50, 2);
            let banded = ultra_dtw(a.view(), b.view(), 5).unwrap();
            assert!(lb_keogh(a.view(), b.view(), 5) <= banded + 1e-9);
        }
    }
}
