use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::Array2;

use super::{BasisSystem, FunctionalSample, SamplePath};
use crate::error::{FaeError, Result};

/// Largest admissible condition number of the stacked least-squares design.
pub const MAX_CONDITION: f64 = 1e12;

/// Penalized least-squares fit of every dimension of `path` onto `basis`:
/// `min ‖y − B c‖² + λ cᵀ P c` with `P` the second-derivative penalty.
///
/// The system is solved through the SVD of the stacked design
/// `[B; √λ L]` (`LᵀL = P`) rather than the normal equations; the singularity
/// check applies to the condition number of that design.
pub fn smooth(path: &SamplePath, basis: &BasisSystem, lambda_s: f64) -> Result<FunctionalSample> {
    if !(lambda_s >= 0.0 && lambda_s.is_finite()) {
        return Err(FaeError::Config(format!("smoothing weight must be non-negative, got {lambda_s}")));
    }
    for &t in &path.times {
        basis.check_in_domain(t).map_err(|_| FaeError::InvalidSamplePath {
            subject_id: path.subject_id,
            reason: format!("time {t} outside the basis domain {:?}", basis.domain()),
        })?;
    }
    let solver = PenalizedSolver::new(&basis.design_matrix(&path.times, 0)?, basis, lambda_s)?;
    let p = path.dims();
    let mut coeffs = Array2::zeros((p, basis.size()));
    for d in 0..p {
        let y: Vec<f64> = path.values.column(d).to_vec();
        let c = solver.solve(&y);
        coeffs.row_mut(d).iter_mut().zip(&c).for_each(|(o, v)| *o = *v);
    }
    FunctionalSample::new(path.subject_id, coeffs, basis)
}

/// Smooths every path with the same basis and weight.
pub fn smooth_all(paths: &[SamplePath], basis: &BasisSystem, lambda_s: f64) -> Result<Vec<FunctionalSample>> {
    paths.iter().map(|p| smooth(p, basis, lambda_s)).collect()
}

/// Reusable SVD of the stacked penalized design.
pub(crate) struct PenalizedSolver {
    rows: usize,
    // pseudo-inverse restricted to the data rows: m × rows
    pinv: DMatrix<f64>,
}

impl PenalizedSolver {
    pub(crate) fn new(design: &Array2<f64>, basis: &BasisSystem, lambda_s: f64) -> Result<Self> {
        let (r, m) = design.dim();
        let extra = if lambda_s > 0.0 { m } else { 0 };
        let mut a = DMatrix::<f64>::zeros(r + extra, m);
        for i in 0..r {
            for j in 0..m {
                a[(i, j)] = design[[i, j]];
            }
        }
        if lambda_s > 0.0 {
            let pen = DMatrix::from_fn(m, m, |i, j| basis.penalty()[[i, j]]);
            let eig = SymmetricEigen::new(pen);
            for k in 0..m {
                let s = (eig.eigenvalues[k].max(0.0) * lambda_s).sqrt();
                for j in 0..m {
                    a[(r + k, j)] = s * eig.eigenvectors[(j, k)];
                }
            }
        }
        if a.nrows() < m {
            return Err(FaeError::SingularSystem { condition: f64::INFINITY });
        }
        let svd = a.svd(true, true);
        let smax = svd.singular_values.max();
        let smin = svd.singular_values.min();
        let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
        if !(condition <= MAX_CONDITION) {
            return Err(FaeError::SingularSystem { condition });
        }
        let u = svd.u.unwrap();
        let vt = svd.v_t.unwrap();
        // pinv = V Σ⁻¹ Uᵀ, keep only the columns acting on data rows
        let mut pinv = DMatrix::zeros(m, r);
        for k in 0..m {
            let inv = 1.0 / svd.singular_values[k];
            for j in 0..m {
                let vjk = vt[(k, j)] * inv;
                if vjk == 0.0 {
                    continue;
                }
                for i in 0..r {
                    pinv[(j, i)] += vjk * u[(i, k)];
                }
            }
        }
        Ok(PenalizedSolver { rows: r, pinv })
    }

    pub(crate) fn solve(&self, y: &[f64]) -> Vec<f64> {
        debug_assert_eq!(y.len(), self.rows);
        let m = self.pinv.nrows();
        (0..m).map(|j| (0..self.rows).map(|i| self.pinv[(j, i)] * y[i]).sum()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fdata::BasisSpec;
    use ndarray::Array2;

    fn path_1d(times: Vec<f64>, f: impl Fn(f64) -> f64) -> SamplePath {
        let vals = Array2::from_shape_fn((times.len(), 1), |(i, _)| f(times[i]));
        SamplePath::new(0, times, vals).unwrap()
    }

    #[test]
    fn interpolates_linear_data_exactly() {
        let basis = BasisSystem::new(BasisSpec::bspline(6, 3, [0.0, 1.0])).unwrap();
        let times: Vec<f64> = (0..10).map(|i| i as f64 / 9.0).collect();
        let s = smooth(&path_1d(times.clone(), |t| t), &basis, 0.0).unwrap();
        let fit = s.evaluate(&basis, &times).unwrap();
        for (j, t) in times.iter().enumerate() {
            assert!((fit[[0, j]] - t).abs() < 1e-8);
        }
    }

    #[test]
    fn heavy_penalty_tends_to_linear_fit() {
        let basis = BasisSystem::new(BasisSpec::bspline(10, 3, [0.0, 1.0])).unwrap();
        let times: Vec<f64> = (0..30).map(|i| i as f64 / 29.0).collect();
        let f = |t: f64| (6.0 * t).sin() + t * t;
        let s = smooth(&path_1d(times.clone(), f), &basis, 1e9).unwrap();
        // ordinary least-squares line through the same points
        let n = times.len() as f64;
        let (mt, my) = (times.iter().sum::<f64>() / n, times.iter().map(|&t| f(t)).sum::<f64>() / n);
        let sxy: f64 = times.iter().map(|&t| (t - mt) * (f(t) - my)).sum();
        let sxx: f64 = times.iter().map(|&t| (t - mt).powi(2)).sum();
        let slope = sxy / sxx;
        let fit = s.evaluate(&basis, &times).unwrap();
        for (j, &t) in times.iter().enumerate() {
            let line = my + slope * (t - mt);
            assert!((fit[[0, j]] - line).abs() < 1e-3, "t={t}: {} vs {line}", fit[[0, j]]);
        }
    }

    #[test]
    fn too_few_points_without_penalty_is_singular() {
        let basis = BasisSystem::new(BasisSpec::bspline(12, 3, [0.0, 1.0])).unwrap();
        let times: Vec<f64> = (0..6).map(|i| i as f64 / 5.0).collect();
        let err = smooth(&path_1d(times.clone(), |t| t), &basis, 0.0).unwrap_err();
        assert!(matches!(err, FaeError::SingularSystem { .. }));
        assert!(smooth(&path_1d(times, |t| t), &basis, 1e-2).is_ok());
    }

    #[test]
    fn rejects_times_outside_domain() {
        let basis = BasisSystem::new(BasisSpec::bspline(6, 3, [0.0, 1.0])).unwrap();
        let times = vec![0.0, 0.3, 0.6, 1.2];
        assert!(matches!(
            smooth(&path_1d(times, |t| t), &basis, 0.0),
            Err(FaeError::InvalidSamplePath { .. })
        ));
    }
}
