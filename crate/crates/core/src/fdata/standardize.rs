use ndarray::Array2;

use super::{FunctionalDataset, FunctionalSample};
use crate::error::{FaeError, Result};
use crate::fdata::smooth::PenalizedSolver;

/// Grid variance at or below which a point is centered but left unscaled.
pub const DEGENERATE_VARIANCE: f64 = 1e-10;

const MAX_PASSES: usize = 200;
const PASS_TOLERANCE: f64 = 1e-10;

/// Diagnostics from [`standardize`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StandardizeReport {
    /// `(dimension, quadrature-node index)` pairs whose variance was degenerate.
    pub degenerate_points: Vec<(usize, usize)>,
    /// Largest `|mean|` on the grid after re-projection.
    pub max_abs_mean: f64,
    /// Largest `|variance − 1|` on the non-degenerate grid points after re-projection.
    pub max_var_deviation: f64,
}

/// Pointwise standardization of every dimension on the quadrature grid:
/// subtract the cross-sample mean function, divide by the square root of the
/// (population) variance function, then re-project onto the basis by
/// unpenalized least squares on the grid.
///
/// The re-projection is exact when the standardized functions lie in the
/// basis span; otherwise the grid moments match to the basis approximation
/// error, which `max_var_deviation` reports.
pub fn standardize(dataset: &FunctionalDataset) -> Result<(FunctionalDataset, StandardizeReport)> {
    dataset.validate()?;
    let n = dataset.len();
    if n < 2 {
        return Err(FaeError::InvalidDataset("standardization needs at least two samples".into()));
    }
    let basis = &dataset.basis;
    let phi = basis.quad_values();
    let q = phi.nrows();
    let p = dataset.dims();
    let solver = PenalizedSolver::new(phi, basis, 0.0)?;
    let mut report = StandardizeReport::default();
    let mut new_coeffs: Vec<Array2<f64>> = vec![Array2::zeros((p, basis.size())); n];

    for d in 0..p {
        // n × q grid values of dimension d
        let mut grid = Array2::zeros((n, q));
        for (i, s) in dataset.samples.iter().enumerate() {
            grid.row_mut(i).assign(&phi.dot(&s.coeffs.row(d)));
        }
        let (_, var0) = grid_moments(&grid);
        let scalable: Vec<bool> = var0.iter().map(|v| *v > DEGENERATE_VARIANCE).collect();
        for (g, ok) in scalable.iter().enumerate() {
            if !ok {
                report.degenerate_points.push((d, g));
            }
        }
        let mut coeffs: Vec<Vec<f64>> = vec![Vec::new(); n];
        let mut best = (f64::INFINITY, f64::INFINITY);
        for pass in 0..MAX_PASSES {
            let (mean, var) = grid_moments(&grid);
            let mean_dev = mean.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            let var_dev = var
                .iter()
                .zip(&scalable)
                .filter(|(_, ok)| **ok)
                .fold(0.0f64, |a, (v, _)| a.max((v - 1.0).abs()));
            if pass > 0 {
                best = (mean_dev, var_dev);
                if var_dev < PASS_TOLERANCE && mean_dev < PASS_TOLERANCE {
                    break;
                }
            }
            for g in 0..q {
                let scale = if scalable[g] && var[g] > 0.0 { var[g].sqrt() } else { 1.0 };
                for i in 0..n {
                    grid[[i, g]] = (grid[[i, g]] - mean[g]) / scale;
                }
            }
            for i in 0..n {
                coeffs[i] = solver.solve(grid.row(i).as_slice().unwrap());
                let row = phi.dot(&ndarray::ArrayView1::from(&coeffs[i]));
                grid.row_mut(i).assign(&row);
            }
            if pass + 1 == MAX_PASSES {
                let (mean, var) = grid_moments(&grid);
                best = (
                    mean.iter().fold(0.0f64, |a, v| a.max(v.abs())),
                    var.iter().zip(&scalable).filter(|(_, ok)| **ok).fold(0.0f64, |a, (v, _)| a.max((v - 1.0).abs())),
                );
            }
        }
        report.max_abs_mean = report.max_abs_mean.max(best.0);
        report.max_var_deviation = report.max_var_deviation.max(best.1);
        for i in 0..n {
            new_coeffs[i].row_mut(d).iter_mut().zip(&coeffs[i]).for_each(|(o, v)| *o = *v);
        }
    }
    if !report.degenerate_points.is_empty() {
        log::warn!(
            "standardize: {} grid points with variance <= {DEGENERATE_VARIANCE:e} were centered but not scaled",
            report.degenerate_points.len()
        );
    }
    let samples = dataset
        .samples
        .iter()
        .zip(new_coeffs)
        .map(|(s, c)| FunctionalSample { subject_id: s.subject_id, coeffs: c, basis_id: s.basis_id })
        .collect();
    let out = FunctionalDataset {
        samples,
        basis: dataset.basis.clone(),
        standardized: true,
        labels_truth: dataset.labels_truth.clone(),
    };
    Ok((out, report))
}

/// Column-wise mean and population variance.
pub(crate) fn grid_moments(grid: &Array2<f64>) -> (Vec<f64>, Vec<f64>) {
    let n = grid.nrows() as f64;
    let mut mean = vec![0.0; grid.ncols()];
    let mut var = vec![0.0; grid.ncols()];
    for (g, col) in grid.columns().into_iter().enumerate() {
        let m = col.sum() / n;
        mean[g] = m;
        var[g] = col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
    }
    (mean, var)
}
