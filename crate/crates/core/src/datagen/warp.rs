//! Random monotone time warps of `[0, 1]`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{FaeError, Result};
use crate::fdata::{BasisSystem, FunctionalSample, SamplePath};

pub const MAX_WARP_ATTEMPTS: usize = 100;
/// Grid on which the derivative bound is verified.
const CHECK_POINTS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WarpSpec {
    /// Knots including both endpoints.
    pub n_knots: usize,
    pub max_speed_ratio: f64,
    pub seed: u64,
}

impl Default for WarpSpec {
    fn default() -> Self {
        WarpSpec { n_knots: 4, max_speed_ratio: 2.0, seed: 0 }
    }
}

/// Monotone piecewise-cubic map of `[0, 1]` onto itself.
#[derive(Debug, Clone, PartialEq)]
pub struct Warp {
    x: Vec<f64>,
    y: Vec<f64>,
    d: Vec<f64>,
}

impl Warp {
    pub fn identity() -> Self {
        Warp { x: vec![0.0, 1.0], y: vec![0.0, 1.0], d: vec![1.0, 1.0] }
    }

    /// Fritsch-Carlson interpolant of increasing knot images.
    pub fn monotone(x: Vec<f64>, y: Vec<f64>) -> Self {
        let n = x.len();
        let delta: Vec<f64> = (0..n - 1).map(|j| (y[j + 1] - y[j]) / (x[j + 1] - x[j])).collect();
        let mut d = vec![0.0; n];
        d[0] = delta[0];
        d[n - 1] = delta[n - 2];
        for j in 1..n - 1 {
            let (a, b) = (delta[j - 1], delta[j]);
            d[j] = if a * b <= 0.0 {
                0.0
            } else {
                // weighted harmonic mean keeps the interpolant monotone
                let (h0, h1) = (x[j] - x[j - 1], x[j + 1] - x[j]);
                let (w1, w2) = (2.0 * h1 + h0, h1 + 2.0 * h0);
                (w1 + w2) / (w1 / a + w2 / b)
            };
        }
        Warp { x, y, d }
    }

    fn segment(&self, t: f64) -> (usize, f64, f64) {
        let t = t.clamp(0.0, 1.0);
        let j = match self.x.iter().rposition(|&k| k <= t) {
            Some(j) => j.min(self.x.len() - 2),
            None => 0,
        };
        let h = self.x[j + 1] - self.x[j];
        (j, (t - self.x[j]) / h, h)
    }

    pub fn eval(&self, t: f64) -> f64 {
        let (j, s, h) = self.segment(t);
        let (h00, h10, h01, h11) =
            ((1.0 + 2.0 * s) * (1.0 - s) * (1.0 - s), s * (1.0 - s) * (1.0 - s), s * s * (3.0 - 2.0 * s), s * s * (s - 1.0));
        h00 * self.y[j] + h10 * h * self.d[j] + h01 * self.y[j + 1] + h11 * h * self.d[j + 1]
    }

    pub fn deriv(&self, t: f64) -> f64 {
        let (j, s, h) = self.segment(t);
        let (g00, g10, g01, g11) = (6.0 * s * s - 6.0 * s, 3.0 * s * s - 4.0 * s + 1.0, 6.0 * s - 6.0 * s * s, 3.0 * s * s - 2.0 * s);
        (g00 * self.y[j] + g01 * self.y[j + 1]) / h + g10 * self.d[j] + g11 * self.d[j + 1]
    }

    /// `a + (b − a)·h((t − a)/(b − a))` on the domain `[a, b]`.
    pub fn eval_on(&self, t: f64, domain: (f64, f64)) -> f64 {
        let (a, b) = domain;
        a + (b - a) * self.eval((t - a) / (b - a))
    }
}

/// Draws a warp whose speed stays within `[1/r, r]`.
pub fn make_warp(spec: &WarpSpec) -> Result<Warp> {
    make_warp_with(spec, &mut crate::rng(spec.seed))
}

pub fn make_warp_with<R: Rng>(spec: &WarpSpec, rng: &mut R) -> Result<Warp> {
    let r = spec.max_speed_ratio;
    if spec.n_knots < 2 || !(r >= 1.0) || !r.is_finite() {
        return Err(FaeError::InvalidSpec(format!("warp needs n_knots >= 2 and ratio >= 1, got {} and {r}", spec.n_knots)));
    }
    if r == 1.0 || spec.n_knots == 2 {
        return Ok(Warp::identity());
    }
    let n = spec.n_knots;
    let x: Vec<f64> = (0..n).map(|j| j as f64 / (n - 1) as f64).collect();
    let span = r.ln();
    for _ in 0..MAX_WARP_ATTEMPTS {
        let slopes: Vec<f64> = (0..n - 1).map(|_| (rng.random_range(-span..=span)).exp()).collect();
        let total: f64 = slopes.iter().sum::<f64>() / (n - 1) as f64;
        let mut y = vec![0.0];
        for s in &slopes {
            y.push(y.last().unwrap() + s / total / (n - 1) as f64);
        }
        *y.last_mut().unwrap() = 1.0;
        let w = Warp::monotone(x.clone(), y);
        let ok = (0..=CHECK_POINTS).all(|k| {
            let d = w.deriv(k as f64 / CHECK_POINTS as f64);
            d >= 1.0 / r - 1e-12 && d <= r + 1e-12
        });
        if ok {
            return Ok(w);
        }
    }
    Err(FaeError::InvalidWarp(MAX_WARP_ATTEMPTS))
}

/// Values of `f ∘ h` on `grid`, with `h` rescaled to the basis domain.
pub fn apply_warp(sample: &FunctionalSample, basis: &BasisSystem, h: &Warp, grid: &[f64]) -> Result<SamplePath> {
    let dom = basis.domain();
    let warped: Vec<f64> = grid.iter().map(|&t| h.eval_on(t, dom).clamp(dom.0, dom.1)).collect();
    let v = sample.evaluate(basis, &warped)?;
    SamplePath::new(sample.subject_id, grid.to_vec(), v.t().to_owned())
}
