//! Fixed-step RK4 with cubic Hermite dense output.

use ndarray::{Array1, Array2};

/// One classical Runge-Kutta step of `y' = f(y)`.
pub fn rk4_step<F: Fn(&[f64], &mut [f64])>(f: &F, y: &[f64], h: f64) -> Vec<f64> {
    let n = y.len();
    let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut tmp = vec![0.0; n];
    f(y, &mut k1);
    for i in 0..n {
        tmp[i] = y[i] + 0.5 * h * k1[i];
    }
    f(&tmp, &mut k2);
    for i in 0..n {
        tmp[i] = y[i] + 0.5 * h * k2[i];
    }
    f(&tmp, &mut k3);
    for i in 0..n {
        tmp[i] = y[i] + h * k3[i];
    }
    f(&tmp, &mut k4);
    (0..n).map(|i| y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])).collect()
}

/// A trajectory on `[0, horizon]` stored at every integrator step together
/// with the vector field, so it can be evaluated at any time to fourth order.
#[derive(Debug, Clone)]
pub struct DenseTrajectory {
    pub h: f64,
    pub states: Array2<f64>,
    pub rates: Array2<f64>,
}

impl DenseTrajectory {
    pub fn integrate<F: Fn(&[f64], &mut [f64])>(f: F, y0: &[f64], h: f64, horizon: f64) -> Self {
        let steps = (horizon / h).round() as usize;
        let n = y0.len();
        let mut states = Array2::zeros((steps + 1, n));
        let mut rates = Array2::zeros((steps + 1, n));
        let mut y = y0.to_vec();
        let mut r = vec![0.0; n];
        for s in 0..=steps {
            f(&y, &mut r);
            states.row_mut(s).assign(&Array1::from(y.clone()));
            rates.row_mut(s).assign(&Array1::from(r.clone()));
            if s < steps {
                y = rk4_step(&f, &y, h);
            }
        }
        DenseTrajectory { h, states, rates }
    }

    pub fn horizon(&self) -> f64 {
        self.h * (self.states.nrows() - 1) as f64
    }

    /// State at time `t`, clamped to the horizon.
    pub fn at(&self, t: f64) -> Vec<f64> {
        let last = self.states.nrows() - 1;
        let x = (t / self.h).clamp(0.0, last as f64);
        let k = (x.floor() as usize).min(last.saturating_sub(1));
        let s = x - k as f64;
        if last == 0 {
            return self.states.row(0).to_vec();
        }
        let (h00, h10, h01, h11) = (
            (1.0 + 2.0 * s) * (1.0 - s) * (1.0 - s),
            s * (1.0 - s) * (1.0 - s),
            s * s * (3.0 - 2.0 * s),
            s * s * (s - 1.0),
        );
        (0..self.states.ncols())
            .map(|i| {
                h00 * self.states[[k, i]]
                    + h10 * self.h * self.rates[[k, i]]
                    + h01 * self.states[[k + 1, i]]
                    + h11 * self.h * self.rates[[k + 1, i]]
            })
            .collect()
    }
}
