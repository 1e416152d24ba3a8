use crate::error::{FaeError, Result};
use crate::fdata::basis::quad_form;
use crate::fdata::{BasisSystem, FunctionalSample};

/// `sqrt(Σ_d ‖f^d − g^d‖²)` in `L²(T)`, computed through the Gram matrix.
pub fn hilbert_distance(f: &FunctionalSample, g: &FunctionalSample, basis: &BasisSystem) -> Result<f64> {
    if f.basis_id != basis.id() || g.basis_id != basis.id() || f.coeffs.dim() != g.coeffs.dim() {
        return Err(FaeError::BasisMismatch);
    }
    let diff = &f.coeffs - &g.coeffs;
    let mut total = 0.0;
    for row in diff.rows() {
        let r = row.to_vec();
        total += quad_form(basis.gram(), &r, &r);
    }
    Ok(total.max(0.0).sqrt())
}

#[cfg(test)]
mod tests {
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::fdata::BasisSpec;

    #[test]
    fn constants_zero_and_one() {
        let basis = BasisSystem::new(BasisSpec::bspline(6, 3, [0.0, 1.0])).unwrap();
        let f = FunctionalSample::new(0, Array2::zeros((1, 6)), &basis).unwrap();
        let g = FunctionalSample::new(1, Array2::ones((1, 6)), &basis).unwrap();
        assert!((hilbert_distance(&f, &g, &basis).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(hilbert_distance(&f, &f, &basis).unwrap(), 0.0);
    }

    #[test]
    fn random_pair_matches_trapezoid() {
        let basis = BasisSystem::new(BasisSpec::bspline(10, 3, [0.0, 2.0])).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut draw = || Array2::from_shape_fn((2, 10), |_| rng.random_range(-2.0..2.0));
        let f = FunctionalSample::new(0, draw(), &basis).unwrap();
        let g = FunctionalSample::new(1, draw(), &basis).unwrap();
        let n = 40_001;
        let grid: Vec<f64> = (0..n).map(|k| 2.0 * k as f64 / (n - 1) as f64).collect();
        let (vf, vg) = (f.evaluate(&basis, &grid).unwrap(), g.evaluate(&basis, &grid).unwrap());
        let h = 2.0 / (n - 1) as f64;
        let mut acc = 0.0;
        for k in 0..n {
            let w = if k == 0 || k == n - 1 { 0.5 * h } else { h };
            for d in 0..2 {
                acc += w * (vf[[d, k]] - vg[[d, k]]).powi(2);
            }
        }
        let got = hilbert_distance(&f, &g, &basis).unwrap();
        assert!((got - acc.sqrt()).abs() < 1e-6, "{got} vs {}", acc.sqrt());
    }

    #[test]
    fn mismatched_basis_is_rejected() {
        let b1 = BasisSystem::new(BasisSpec::bspline(6, 3, [0.0, 1.0])).unwrap();
        let b2 = BasisSystem::new(BasisSpec::bspline(7, 3, [0.0, 1.0])).unwrap();
        let f = FunctionalSample::new(0, Array2::zeros((1, 6)), &b1).unwrap();
        let g = FunctionalSample::new(0, Array2::zeros((1, 7)), &b2).unwrap();
        assert!(matches!(hilbert_distance(&f, &g, &b1), Err(FaeError::BasisMismatch)));
    }
}
