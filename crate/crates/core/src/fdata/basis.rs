//! Basis families (B-spline, orthonormal Fourier) together with the Gram,
//! roughness-penalty and quadrature machinery that every functional inner
//! product goes through.

use std::f64::consts::PI;
use std::hash::{Hash, Hasher};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::quadrature::Quadrature;
use crate::error::{FaeError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BasisKind {
    Bspline,
    Fourier,
}

/// User-facing description of a basis, as found in dataset manifests.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisSpec {
    pub kind: BasisKind,
    pub m: usize,
    #[serde(default = "default_degree")]
    pub degree: usize,
    pub domain: [f64; 2],
}

fn default_degree() -> usize {
    3
}

impl BasisSpec {
    pub fn bspline(m: usize, degree: usize, domain: [f64; 2]) -> Self {
        BasisSpec { kind: BasisKind::Bspline, m, degree, domain }
    }

    pub fn fourier(m: usize, domain: [f64; 2]) -> Self {
        BasisSpec { kind: BasisKind::Fourier, m, degree: 0, domain }
    }

    fn fingerprint(&self) -> u64 {
        let mut h = std::collections::hash_map::DefaultHasher::new();
        self.kind.hash(&mut h);
        self.m.hash(&mut h);
        self.degree.hash(&mut h);
        self.domain[0].to_bits().hash(&mut h);
        self.domain[1].to_bits().hash(&mut h);
        h.finish()
    }
}

/// An evaluated basis family on a closed interval.
///
/// Immutable after construction; share it behind an `Arc`.
#[derive(Debug, Clone)]
pub struct BasisSystem {
    spec: BasisSpec,
    id: u64,
    knots: Vec<f64>,
    gram: Array2<f64>,
    penalty: Array2<f64>,
    quad: Quadrature,
    /// Basis values at the quadrature nodes, `quad.len() × m`.
    quad_values: Array2<f64>,
}

impl BasisSystem {
    pub fn new(spec: BasisSpec) -> Result<Self> {
        let [a, b] = spec.domain;
        if !(a.is_finite() && b.is_finite() && b > a) {
            return Err(FaeError::InvalidBasisConfig(format!("degenerate domain [{a}, {b}]")));
        }
        if spec.m == 0 {
            return Err(FaeError::InvalidBasisConfig("basis size must be positive".into()));
        }
        let target = (4 * spec.m).max(200);
        let (knots, quad) = match spec.kind {
            BasisKind::Bspline => {
                let p = spec.degree;
                if spec.m < p + 1 {
                    return Err(FaeError::InvalidBasisConfig(format!(
                        "B-spline basis of degree {p} needs at least {} functions, got {}",
                        p + 1,
                        spec.m
                    )));
                }
                let n_interior = spec.m - p - 1;
                let mut knots = vec![a; p + 1];
                for j in 1..=n_interior {
                    knots.push(a + (b - a) * j as f64 / (n_interior + 1) as f64);
                }
                knots.extend(std::iter::repeat_n(b, p + 1));
                let breaks = unique_breaks(&knots);
                let order = (p + 1).max(4);
                let spans = breaks.len() - 1;
                let sub = target.div_ceil(order * spans);
                (knots, Quadrature::composite(&breaks, order, sub))
            }
            BasisKind::Fourier => {
                let order = 5;
                (vec![a, b], Quadrature::composite(&[a, b], order, target.div_ceil(order)))
            }
        };
        let mut sys = BasisSystem {
            spec,
            id: spec.fingerprint(),
            knots,
            gram: Array2::zeros((spec.m, spec.m)),
            penalty: Array2::zeros((spec.m, spec.m)),
            quad,
            quad_values: Array2::zeros((0, spec.m)),
        };
        sys.quad_values = sys.design_matrix_unchecked(&sys.quad.nodes, 0);
        let d2 = sys.design_matrix_unchecked(&sys.quad.nodes, 2);
        sys.gram = weighted_cross(&sys.quad_values, &sys.quad_values, &sys.quad.weights);
        sys.penalty = weighted_cross(&d2, &d2, &sys.quad.weights);
        Ok(sys)
    }

    pub fn spec(&self) -> &BasisSpec {
        &self.spec
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn kind(&self) -> BasisKind {
        self.spec.kind
    }

    pub fn size(&self) -> usize {
        self.spec.m
    }

    pub fn degree(&self) -> usize {
        self.spec.degree
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.spec.domain[0], self.spec.domain[1])
    }

    pub fn domain_len(&self) -> f64 {
        self.spec.domain[1] - self.spec.domain[0]
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// Distinct breakpoints of the piecewise structure (the domain ends for Fourier).
    pub fn breakpoints(&self) -> Vec<f64> {
        unique_breaks(&self.knots)
    }

    /// `gram[u][v] = ∫ b_u b_v`.
    pub fn gram(&self) -> &Array2<f64> {
        &self.gram
    }

    /// `penalty[u][v] = ∫ b_u'' b_v''`.
    pub fn penalty(&self) -> &Array2<f64> {
        &self.penalty
    }

    pub fn quadrature(&self) -> &Quadrature {
        &self.quad
    }

    /// Basis values at the quadrature nodes (`nodes × m`).
    pub fn quad_values(&self) -> &Array2<f64> {
        &self.quad_values
    }

    pub fn check_in_domain(&self, t: f64) -> Result<()> {
        let (lo, hi) = self.domain();
        let tol = 1e-12 * (hi - lo).max(1.0);
        if !t.is_finite() || t < lo - tol || t > hi + tol {
            return Err(FaeError::OutOfDomain { t, lo, hi });
        }
        Ok(())
    }

    /// Values (or derivatives of order `deriv`) of every basis function at `t`.
    pub fn eval_at(&self, t: f64, deriv: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.spec.m];
        self.eval_into(t, deriv, &mut out);
        out
    }

    fn eval_into(&self, t: f64, deriv: usize, out: &mut [f64]) {
        let (lo, hi) = self.domain();
        let t = t.clamp(lo, hi);
        match self.spec.kind {
            BasisKind::Bspline => {
                out.iter_mut().for_each(|v| *v = 0.0);
                let p = self.spec.degree;
                let span = self.find_span(t);
                let ders = self.ders_basis(span, t, deriv);
                for (j, v) in ders[deriv].iter().enumerate() {
                    out[span - p + j] = *v;
                }
            }
            BasisKind::Fourier => {
                let len = hi - lo;
                let x = t - lo;
                out[0] = if deriv == 0 { 1.0 / len.sqrt() } else { 0.0 };
                let amp = (2.0 / len).sqrt();
                for (idx, slot) in out.iter_mut().enumerate().skip(1) {
                    let k = idx.div_ceil(2) as f64;
                    let w = 2.0 * PI * k / len;
                    let phase = w * x + if idx % 2 == 1 { 0.0 } else { 0.5 * PI };
                    // d^r/dx^r sin(wx + c) = w^r sin(wx + c + r·π/2)
                    *slot = amp * w.powi(deriv as i32) * (phase + deriv as f64 * 0.5 * PI).sin();
                }
            }
        }
    }

    /// `grid.len() × m` matrix of basis values or derivatives.
    pub fn design_matrix(&self, grid: &[f64], deriv: usize) -> Result<Array2<f64>> {
        for &t in grid {
            self.check_in_domain(t)?;
        }
        Ok(self.design_matrix_unchecked(grid, deriv))
    }

    pub(crate) fn design_matrix_unchecked(&self, grid: &[f64], deriv: usize) -> Array2<f64> {
        let m = self.spec.m;
        let mut out = Array2::zeros((grid.len(), m));
        let mut row = vec![0.0; m];
        for (i, &t) in grid.iter().enumerate() {
            self.eval_into(t, deriv, &mut row);
            out.row_mut(i).iter_mut().zip(&row).for_each(|(o, v)| *o = *v);
        }
        out
    }

    /// `c_fᵀ · gram · c_g`.
    pub fn inner(&self, f: &[f64], g: &[f64]) -> Result<f64> {
        let m = self.spec.m;
        if f.len() != m || g.len() != m {
            return Err(FaeError::BasisMismatch);
        }
        Ok(quad_form(&self.gram, f, g))
    }

    fn find_span(&self, t: f64) -> usize {
        let p = self.spec.degree;
        let n = self.spec.m - 1;
        let u = &self.knots;
        if t >= u[n + 1] {
            return n;
        }
        if t <= u[p] {
            return p;
        }
        let (mut lo, mut hi) = (p, n + 1);
        let mut mid = (lo + hi) / 2;
        while t < u[mid] || t >= u[mid + 1] {
            if t < u[mid] {
                hi = mid;
            } else {
                lo = mid;
            }
            mid = (lo + hi) / 2;
        }
        mid
    }

    /// Non-zero basis functions and their derivatives up to `nd` at `t`
    /// (de Boor / Piegl–Tiller recurrence). Row `k` holds the `k`-th derivative.
    fn ders_basis(&self, span: usize, t: f64, nd: usize) -> Vec<Vec<f64>> {
        let p = self.spec.degree;
        let u = &self.knots;
        let mut ndu = vec![vec![0.0; p + 1]; p + 1];
        let mut left = vec![0.0; p + 1];
        let mut right = vec![0.0; p + 1];
        ndu[0][0] = 1.0;
        for j in 1..=p {
            left[j] = t - u[span + 1 - j];
            right[j] = u[span + j] - t;
            let mut saved = 0.0;
            for r in 0..j {
                ndu[j][r] = right[r + 1] + left[j - r];
                let temp = ndu[r][j - 1] / ndu[j][r];
                ndu[r][j] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            ndu[j][j] = saved;
        }
        let mut ders = vec![vec![0.0; p + 1]; nd + 1];
        for j in 0..=p {
            ders[0][j] = ndu[j][p];
        }
        if nd == 0 {
            return ders;
        }
        let pi = p as i64;
        let mut a = [vec![0.0; p + 1], vec![0.0; p + 1]];
        for r in 0..=pi {
            let (mut s1, mut s2) = (0usize, 1usize);
            a[0][0] = 1.0;
            for k in 1..=(nd as i64).min(pi) {
                let mut d = 0.0;
                let rk = r - k;
                let pk = pi - k;
                if r >= k {
                    a[s2][0] = a[s1][0] / ndu[(pk + 1) as usize][rk as usize];
                    d = a[s2][0] * ndu[rk as usize][pk as usize];
                }
                let j1 = if rk >= -1 { 1 } else { -rk };
                let j2 = if r - 1 <= pk { k - 1 } else { pi - r };
                for j in j1..=j2 {
                    let (ju, rkj) = (j as usize, (rk + j) as usize);
                    a[s2][ju] = (a[s1][ju] - a[s1][ju - 1]) / ndu[(pk + 1) as usize][rkj];
                    d += a[s2][ju] * ndu[rkj][pk as usize];
                }
                if r <= pk {
                    let ku = k as usize;
                    a[s2][ku] = -a[s1][ku - 1] / ndu[(pk + 1) as usize][r as usize];
                    d += a[s2][ku] * ndu[r as usize][pk as usize];
                }
                ders[k as usize][r as usize] = d;
                std::mem::swap(&mut s1, &mut s2);
            }
        }
        let mut fac = p as f64;
        for k in 1..=nd {
            for v in ders[k].iter_mut() {
                *v *= fac;
            }
            fac *= p as f64 - k as f64;
        }
        ders
    }
}

fn unique_breaks(knots: &[f64]) -> Vec<f64> {
    let mut b: Vec<f64> = knots.to_vec();
    b.dedup_by(|x, y| (*x - *y).abs() < 1e-14);
    b
}

/// `Aᵀ diag(w) B`.
pub(crate) fn weighted_cross(a: &Array2<f64>, b: &Array2<f64>, w: &[f64]) -> Array2<f64> {
    let mut wb = b.clone();
    for (mut row, &wi) in wb.rows_mut().into_iter().zip(w) {
        row *= wi;
    }
    a.t().dot(&wb)
}

pub(crate) fn quad_form(m: &Array2<f64>, f: &[f64], g: &[f64]) -> f64 {
    let mut s = 0.0;
    for (u, fu) in f.iter().enumerate() {
        if *fu == 0.0 {
            continue;
        }
        let row = m.row(u);
        s += fu * row.iter().zip(g).map(|(a, b)| a * b).sum::<f64>();
    }
    s
}
