//! Simulated manifold-valued functional datasets and random time warps.
//!
//! Every subject draws from its own random stream derived from the seed and
//! its index, so output does not depend on the thread count.

mod ode;
mod warp;

use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::str::FromStr;

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use ode::{rk4_step, DenseTrajectory};
pub use warp::{apply_warp, make_warp, make_warp_with, Warp, WarpSpec, MAX_WARP_ATTEMPTS};

use crate::error::{FaeError, Result};
use crate::fdata::SamplePath;
use crate::FaeRng;

/// Keeps warp draws independent of the trajectory draws when both use the
/// same seed.
const WARP_STREAM_SALT: u64 = 0x77a2_b00f;

/// Integrator step of the pendulum.
pub const ODE_STEP: f64 = 0.01;
/// The Lorenz field is two orders of magnitude faster than the pendulum.
pub const LORENZ_STEP: f64 = 0.0005;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimKind {
    Hypersphere,
    Hyperbolic,
    Swissroll,
    Lorenz,
    Pendulum,
}

impl SimKind {
    pub const ALL: [SimKind; 5] = [SimKind::Hypersphere, SimKind::Hyperbolic, SimKind::Swissroll, SimKind::Lorenz, SimKind::Pendulum];

    /// `(samples, dims, steps, clusters)`.
    pub fn default_shape(self) -> (usize, usize, usize, usize) {
        match self {
            SimKind::Hypersphere => (100, 3, 100, 2),
            SimKind::Hyperbolic => (200, 2, 50, 2),
            SimKind::Swissroll => (300, 2, 200, 4),
            SimKind::Lorenz => (100, 3, 100, 3),
            SimKind::Pendulum => (200, 2, 100, 4),
        }
    }

    /// Number of coordinates the underlying construction has.
    fn native_dims(self) -> usize {
        match self {
            SimKind::Hypersphere | SimKind::Swissroll | SimKind::Lorenz => 3,
            SimKind::Hyperbolic | SimKind::Pendulum => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SimKind::Hypersphere => "hypersphere",
            SimKind::Hyperbolic => "hyperbolic",
            SimKind::Swissroll => "swissroll",
            SimKind::Lorenz => "lorenz",
            SimKind::Pendulum => "pendulum",
        }
    }
}

impl FromStr for SimKind {
    type Err = FaeError;

    fn from_str(s: &str) -> Result<Self> {
        SimKind::ALL
            .into_iter()
            .find(|k| k.name() == s.to_ascii_lowercase())
            .ok_or_else(|| FaeError::InvalidSpec(format!("unknown simulation kind '{s}'")))
    }
}

/// Cluster-level constants of the generators. None of these are published
/// values; they are chosen so the classes are separable without noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimParams {
    /// Revolutions per unit time of each hypersphere class.
    pub sphere_frequencies: Vec<f64>,
    /// Standard deviation of the per-sample perturbation of the class axis.
    pub sphere_axis_jitter: f64,
    /// Starting phases are uniform in `[0, sphere_max_phase)`.
    pub sphere_max_phase: f64,
    /// Hyperbolic distance travelled by each hyperbolic class.
    pub hyperbolic_reach: Vec<f64>,
    /// Largest Euclidean radius of a hyperbolic starting point.
    pub hyperbolic_start_radius: f64,
    /// Half-width of the cone of geodesic directions.
    pub hyperbolic_spread: f64,
    /// Total height of the swiss roll, split into equal bands.
    pub swissroll_height: f64,
    /// Range of the starting roll angle.
    pub swissroll_angle_jitter: f64,
    pub lorenz_rhos: Vec<f64>,
    pub lorenz_horizon: f64,
    /// Energy `θ'²/2 − cos θ` of each pendulum class; the separatrix is at 1.
    pub pendulum_energies: Vec<f64>,
    pub pendulum_energy_jitter: f64,
    pub pendulum_horizon: f64,
    /// Trajectories start at a uniform random time in `[0, shift)` of their orbit.
    pub pendulum_max_shift: f64,
}

impl Default for SimParams {
    fn default() -> Self {
        SimParams {
            sphere_frequencies: vec![1.0, 1.5, 2.0, 2.5],
            sphere_axis_jitter: 0.15,
            sphere_max_phase: FRAC_PI_2,
            hyperbolic_reach: vec![1.0, 4.0, 2.5, 5.5],
            hyperbolic_start_radius: 0.25,
            hyperbolic_spread: PI / 4.0,
            swissroll_height: 20.0,
            swissroll_angle_jitter: 0.5,
            lorenz_rhos: vec![14.0, 21.0, 28.0],
            lorenz_horizon: 10.0,
            pendulum_energies: vec![-0.5, 0.5, 1.6, 4.0],
            pendulum_energy_jitter: 0.05,
            pendulum_horizon: 10.0,
            pendulum_max_shift: 1.0,
        }
    }
}

impl SimParams {
    fn max_clusters(&self, kind: SimKind) -> usize {
        match kind {
            SimKind::Hypersphere => self.sphere_frequencies.len().min(SPHERE_AXES.len()),
            SimKind::Hyperbolic => self.hyperbolic_reach.len(),
            SimKind::Swissroll => 16,
            SimKind::Lorenz => self.lorenz_rhos.len(),
            SimKind::Pendulum => self.pendulum_energies.len(),
        }
    }
}

const SPHERE_AXES: [[f64; 3]; 4] = [[0.0, 0.0, 1.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.57735, 0.57735, 0.57735]];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSpec {
    pub kind: SimKind,
    pub n_samples: usize,
    pub n_dims: usize,
    pub n_steps: usize,
    pub n_clusters: usize,
    pub noise_sigma: f64,
    pub seed: u64,
    #[serde(default)]
    pub params: SimParams,
}

impl SimSpec {
    /// Default shape of `kind` with noise standard deviation 0.05.
    pub fn new(kind: SimKind, seed: u64) -> Self {
        let (n_samples, n_dims, n_steps, n_clusters) = kind.default_shape();
        SimSpec { kind, n_samples, n_dims, n_steps, n_clusters, noise_sigma: 0.05, seed, params: SimParams::default() }
    }

    pub fn with_noise(mut self, sigma: f64) -> Self {
        self.noise_sigma = sigma;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(FaeError::InvalidSpec(m));
        if self.n_dims == 0 || self.n_dims > self.kind.native_dims() {
            return bad(format!("{} supports 1..={} dims, got {}", self.kind.name(), self.kind.native_dims(), self.n_dims));
        }
        if self.n_steps < 4 {
            return bad(format!("need at least 4 steps, got {}", self.n_steps));
        }
        let kmax = self.params.max_clusters(self.kind);
        if self.n_clusters == 0 || self.n_clusters > kmax {
            return bad(format!("{} supports 1..={kmax} clusters, got {}", self.kind.name(), self.n_clusters));
        }
        if self.n_samples < self.n_clusters {
            return bad(format!("{} samples cannot fill {} clusters", self.n_samples, self.n_clusters));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!("noise_sigma must be finite and non-negative, got {}", self.noise_sigma));
        }
        Ok(())
    }

    /// Class of subject `i`: contiguous, nearly equal blocks.
    pub fn label_of(&self, i: usize) -> usize {
        i * self.n_clusters / self.n_samples
    }
}

/// Raw sample paths with their generating class.
#[derive(Debug, Clone, PartialEq)]
pub struct Simulated {
    pub paths: Vec<SamplePath>,
    pub labels: Vec<i64>,
}

/// Random stream of subject `i` under `seed`.
pub fn subject_rng(seed: u64, i: usize) -> FaeRng {
    let mut r = crate::rng(seed);
    r.set_stream(i as u64 + 1);
    r
}

pub fn generate(spec: &SimSpec) -> Result<Simulated> {
    generate_warped(spec, None)
}

/// Like [`generate`], but every subject is observed through its own random
/// time warp (drawn from `warp.seed` and the subject index).
pub fn generate_warped(spec: &SimSpec, warp: Option<&WarpSpec>) -> Result<Simulated> {
    spec.validate()?;
    let times: Vec<f64> = (0..spec.n_steps).map(|j| j as f64 / (spec.n_steps - 1) as f64).collect();
    let paths = (0..spec.n_samples)
        .into_par_iter()
        .map(|i| {
            let k = spec.label_of(i);
            let mut rng = subject_rng(spec.seed, i);
            let curve = trajectory(spec, k, &mut rng);
            let h = match warp {
                Some(w) => make_warp_with(w, &mut subject_rng(w.seed ^ WARP_STREAM_SALT, i))?,
                None => Warp::identity(),
            };
            let mut values = Array2::zeros((spec.n_steps, spec.n_dims));
            for (j, &t) in times.iter().enumerate() {
                let y = curve.at(h.eval(t));
                for d in 0..spec.n_dims {
                    let noise: f64 = if spec.noise_sigma > 0.0 { spec.noise_sigma * rng.sample::<f64, _>(StandardNormal) } else { 0.0 };
                    values[[j, d]] = y[d] + noise;
                }
            }
            SamplePath::new(i as i64, times.clone(), values)
        })
        .collect::<Result<Vec<_>>>()?;
    let labels = (0..spec.n_samples).map(|i| spec.label_of(i) as i64).collect();
    Ok(Simulated { paths, labels })
}

/// A noise-free curve on `[0, 1]`.
enum Curve {
    Sphere { u: [f64; 3], v: [f64; 3], omega: f64, phase: f64 },
    Disk { start: (f64, f64), dir: f64, reach: f64 },
    Roll { angle0: f64, center: f64, amp: f64, phase: f64 },
    Ode { traj: DenseTrajectory, offset: f64, horizon: f64, wrap_first: bool },
}

impl Curve {
    fn at(&self, t: f64) -> Vec<f64> {
        match self {
            Curve::Sphere { u, v, omega, phase } => {
                let (s, c) = (omega * t + phase).sin_cos();
                (0..3).map(|d| c * u[d] + s * v[d]).collect()
            }
            Curve::Disk { start, dir, reach } => {
                // geodesic from the origin mapped to start by a disk isometry
                let r = (reach * t / 2.0).tanh();
                let w = (r * dir.cos(), r * dir.sin());
                let (a, b) = *start;
                let num = (w.0 + a, w.1 + b);
                // 1 + conj(start)·w
                let den = (1.0 + a * w.0 + b * w.1, a * w.1 - b * w.0);
                let dd = den.0 * den.0 + den.1 * den.1;
                vec![(num.0 * den.0 + num.1 * den.1) / dd, (num.1 * den.0 - num.0 * den.1) / dd]
            }
            Curve::Roll { angle0, center, amp, phase } => {
                let th = angle0 + PI * t;
                vec![th * th.cos(), center + amp * (TAU * t + phase).sin(), th * th.sin()]
            }
            Curve::Ode { traj, offset, horizon, wrap_first } => {
                let mut y = traj.at(offset + horizon * t);
                if *wrap_first {
                    y[0] = wrap_angle(y[0]);
                }
                y
            }
        }
    }
}

/// Maps an angle to `(−π, π]`.
pub fn wrap_angle(x: f64) -> f64 {
    let y = x - TAU * ((x + PI) / TAU).floor();
    if y <= -PI {
        y + TAU
    } else {
        y
    }
}

fn normal3(rng: &mut FaeRng) -> [f64; 3] {
    [rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal)]
}

fn normalize(v: [f64; 3]) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

pub fn lorenz_field(rho: f64) -> impl Fn(&[f64], &mut [f64]) {
    move |y: &[f64], d: &mut [f64]| {
        d[0] = 10.0 * (y[1] - y[0]);
        d[1] = y[0] * (rho - y[2]) - y[1];
        d[2] = y[0] * y[1] - 8.0 / 3.0 * y[2];
    }
}

pub fn pendulum_field(y: &[f64], d: &mut [f64]) {
    d[0] = y[1];
    d[1] = -y[0].sin();
}

fn trajectory(spec: &SimSpec, k: usize, rng: &mut FaeRng) -> Curve {
    let p = &spec.params;
    match spec.kind {
        SimKind::Hypersphere => {
            let j = normal3(rng);
            let base = SPHERE_AXES[k];
            let axis = normalize([
                base[0] + p.sphere_axis_jitter * j[0],
                base[1] + p.sphere_axis_jitter * j[1],
                base[2] + p.sphere_axis_jitter * j[2],
            ]);
            // any unit vector not parallel to the axis spans the great circle
            let helper = if axis[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
            let u = normalize(cross(axis, helper));
            let v = cross(axis, u);
            Curve::Sphere { u, v, omega: TAU * p.sphere_frequencies[k], phase: if p.sphere_max_phase > 0.0 { rng.random_range(0.0..p.sphere_max_phase) } else { 0.0 } }
        }
        SimKind::Hyperbolic => {
            let r = p.hyperbolic_start_radius * rng.random::<f64>().sqrt();
            let a = rng.random_range(0.0..TAU);
            let dir = rng.random_range(-p.hyperbolic_spread..=p.hyperbolic_spread);
            Curve::Disk { start: (r * a.cos(), r * a.sin()), dir, reach: p.hyperbolic_reach[k] }
        }
        SimKind::Swissroll => {
            let band = p.swissroll_height / spec.n_clusters as f64;
            Curve::Roll {
                angle0: 1.5 * PI + rng.random_range(0.0..=p.swissroll_angle_jitter),
                center: (k as f64 + 0.5) * band,
                amp: 0.3 * band,
                phase: rng.random_range(0.0..TAU),
            }
        }
        SimKind::Lorenz => {
            let y0 = [
                5.0 * rng.sample::<f64, _>(StandardNormal),
                5.0 * rng.sample::<f64, _>(StandardNormal),
                20.0 + 5.0 * rng.sample::<f64, _>(StandardNormal),
            ];
            let traj = DenseTrajectory::integrate(lorenz_field(p.lorenz_rhos[k]), &y0, LORENZ_STEP, p.lorenz_horizon);
            Curve::Ode { traj, offset: 0.0, horizon: p.lorenz_horizon, wrap_first: false }
        }
        SimKind::Pendulum => {
            let e = p.pendulum_energies[k] + p.pendulum_energy_jitter * rng.sample::<f64, _>(StandardNormal);
            // start at the bottom of the orbit; energy above −1 always allows it
            let e = e.max(-0.99);
            let y0 = [0.0, (2.0 * (e + 1.0)).sqrt()];
            let offset = if p.pendulum_max_shift > 0.0 { rng.random_range(0.0..p.pendulum_max_shift) } else { 0.0 };
            let traj = DenseTrajectory::integrate(pendulum_field, &y0, ODE_STEP, p.pendulum_max_shift + p.pendulum_horizon);
            Curve::Ode { traj, offset, horizon: p.pendulum_horizon, wrap_first: true }
        }
    }
}

#[cfg(test)]
mod tests;
