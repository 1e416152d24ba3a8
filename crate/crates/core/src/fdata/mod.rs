//! Functional data: sample paths, basis expansions, smoothing and
//! standardization.

pub mod basis;
pub mod quadrature;
pub(crate) mod smooth;
mod standardize;

use std::sync::Arc;

use ndarray::{Array2, ArrayView1};

pub use basis::{BasisKind, BasisSpec, BasisSystem};
pub use quadrature::Quadrature;
pub use smooth::{smooth, smooth_all};
pub use standardize::{standardize, StandardizeReport};

use crate::error::{FaeError, Result};

/// Discrete noisy observations of one subject's `p`-dimensional function.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePath {
    pub subject_id: i64,
    pub times: Vec<f64>,
    /// `r × p`, row `j` holds the observation at `times[j]`.
    pub values: Array2<f64>,
}

impl SamplePath {
    pub fn new(subject_id: i64, times: Vec<f64>, values: Array2<f64>) -> Result<Self> {
        let bad = |reason: String| FaeError::InvalidSamplePath { subject_id, reason };
        if times.len() != values.nrows() {
            return Err(bad(format!("{} times but {} value rows", times.len(), values.nrows())));
        }
        if times.len() < 4 {
            return Err(bad(format!("{} observations; at least 4 are required", times.len())));
        }
        if values.ncols() == 0 {
            return Err(bad("no dimensions".into()));
        }
        if let Some(w) = times.windows(2).find(|w| !(w[1] > w[0])) {
            return Err(bad(format!("times not strictly increasing ({} then {})", w[0], w[1])));
        }
        if times.iter().any(|t| !t.is_finite()) || values.iter().any(|v| !v.is_finite()) {
            return Err(bad("non-finite entry".into()));
        }
        Ok(SamplePath { subject_id, times, values })
    }

    pub fn dims(&self) -> usize {
        self.values.ncols()
    }
}

/// One subject's function as per-dimension coefficient rows over a shared basis.
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionalSample {
    pub subject_id: i64,
    /// `p × m`; row `d` is the coefficient vector of dimension `d`.
    pub coeffs: Array2<f64>,
    pub basis_id: u64,
}

impl FunctionalSample {
    pub fn new(subject_id: i64, coeffs: Array2<f64>, basis: &BasisSystem) -> Result<Self> {
        if coeffs.ncols() != basis.size() {
            return Err(FaeError::BasisMismatch);
        }
        if coeffs.iter().any(|v| !v.is_finite()) {
            return Err(FaeError::InvalidDataset(format!("non-finite coefficients for subject {subject_id}")));
        }
        Ok(FunctionalSample { subject_id, coeffs, basis_id: basis.id() })
    }

    pub fn dims(&self) -> usize {
        self.coeffs.nrows()
    }

    fn check_basis(&self, basis: &BasisSystem) -> Result<()> {
        if self.basis_id != basis.id() || self.coeffs.ncols() != basis.size() {
            return Err(FaeError::BasisMismatch);
        }
        Ok(())
    }

    /// `p × |grid|` matrix of function values.
    pub fn evaluate(&self, basis: &BasisSystem, grid: &[f64]) -> Result<Array2<f64>> {
        self.evaluate_deriv(basis, grid, 0)
    }

    /// `p × |grid|` matrix of the `deriv`-th derivative.
    pub fn evaluate_deriv(&self, basis: &BasisSystem, grid: &[f64], deriv: usize) -> Result<Array2<f64>> {
        self.check_basis(basis)?;
        let phi = basis.design_matrix(grid, deriv)?;
        Ok(self.coeffs.dot(&phi.t()))
    }

    /// Values at the basis quadrature nodes (`p × nodes`).
    pub fn quad_values(&self, basis: &BasisSystem) -> Result<Array2<f64>> {
        self.check_basis(basis)?;
        Ok(self.coeffs.dot(&basis.quad_values().t()))
    }
}

/// `⟨f, g⟩_H` of two coefficient rows over the same basis.
pub fn inner_product(f: ArrayView1<f64>, g: ArrayView1<f64>, basis: &BasisSystem) -> Result<f64> {
    match (f.as_slice(), g.as_slice()) {
        (Some(f), Some(g)) => basis.inner(f, g),
        _ => basis.inner(&f.to_vec(), &g.to_vec()),
    }
}

#[derive(Debug, Clone)]
pub struct FunctionalDataset {
    pub samples: Vec<FunctionalSample>,
    pub basis: Arc<BasisSystem>,
    pub standardized: bool,
    pub labels_truth: Option<Vec<i64>>,
}

impl FunctionalDataset {
    pub fn new(samples: Vec<FunctionalSample>, basis: Arc<BasisSystem>) -> Result<Self> {
        let ds = FunctionalDataset { samples, basis, standardized: false, labels_truth: None };
        ds.validate()?;
        Ok(ds)
    }

    pub fn with_labels(mut self, labels: Vec<i64>) -> Result<Self> {
        if labels.len() != self.samples.len() {
            return Err(FaeError::LengthMismatch(labels.len(), self.samples.len()));
        }
        self.labels_truth = Some(labels);
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let Some(first) = self.samples.first() else {
            return Err(FaeError::InvalidDataset("empty dataset".into()));
        };
        let p = first.dims();
        for s in &self.samples {
            s.check_basis(&self.basis)?;
            if s.dims() != p {
                return Err(FaeError::InvalidDataset(format!(
                    "subject {} has {} dimensions, expected {p}",
                    s.subject_id,
                    s.dims()
                )));
            }
        }
        if let Some(l) = &self.labels_truth {
            if l.len() != self.samples.len() {
                return Err(FaeError::LengthMismatch(l.len(), self.samples.len()));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dims(&self) -> usize {
        self.samples.first().map_or(0, |s| s.dims())
    }

    pub fn subject_ids(&self) -> Vec<i64> {
        self.samples.iter().map(|s| s.subject_id).collect()
    }
}
