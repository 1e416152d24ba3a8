//! Distances between functional samples and the similarity graph built on
//! them.

mod dtw;
mod elastic;
mod graph;
mod hilbert;

use std::str::FromStr;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use dtw::{default_band, dtw_distance, dtw_full, dtw_series, fast_dtw, lb_keogh, ultra_dtw, DtwMode};
pub use elastic::{
    elastic_distance, elastic_distance_srv, srv_from_velocity, srv_norm, srv_transform, uniform_grid, MIN_GRID,
    SRV_EPS,
};
pub use graph::{
    build_similarity_graph, fallback_neighborhood, select_neighborhood_size, NeighborhoodStrategy, SimilarityGraph,
    WeightScaling,
};
pub use hilbert::hilbert_distance;
pub(crate) use graph::UnionFind;

use crate::error::{FaeError, Result};
use crate::fdata::basis::quad_form;
use crate::fdata::FunctionalDataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    HilbertL2,
    ElasticSrv,
    DtwFast,
    DtwUltra,
}

impl FromStr for MetricKind {
    type Err = FaeError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l2" | "hilbert_l2" => Ok(MetricKind::HilbertL2),
            "srv" | "elastic_srv" => Ok(MetricKind::ElasticSrv),
            "dtw-fast" | "dtw_fast" => Ok(MetricKind::DtwFast),
            "dtw-ultra" | "dtw_ultra" => Ok(MetricKind::DtwUltra),
            other => Err(FaeError::Config(format!("unknown metric '{other}'"))),
        }
    }
}

/// Options for [`distance_matrix`]. `grid` and `radius` are ignored by the
/// Hilbert metric.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricOptions {
    pub kind: MetricKind,
    #[serde(default = "default_grid")]
    pub grid: usize,
    #[serde(default)]
    pub radius: Option<usize>,
}

fn default_grid() -> usize {
    64
}

impl Default for MetricOptions {
    fn default() -> Self {
        MetricOptions { kind: MetricKind::HilbertL2, grid: default_grid(), radius: None }
    }
}

/// Dense symmetric matrix of pairwise distances.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    pub kind: MetricKind,
    data: Array2<f64>,
}

impl DistanceMatrix {
    /// Fills the upper triangle from `f` and mirrors it; the diagonal is zero.
    pub fn from_fn(n: usize, kind: MetricKind, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut data = Array2::zeros((n, n));
        for i in 0..n {
            for j in i + 1..n {
                let v = f(i, j);
                data[[i, j]] = v;
                data[[j, i]] = v;
            }
        }
        DistanceMatrix { kind, data }
    }

    pub fn from_array(kind: MetricKind, data: Array2<f64>) -> Result<Self> {
        let n = data.nrows();
        if data.ncols() != n {
            return Err(FaeError::ShapeMismatch(format!("distance matrix is {:?}", data.dim())));
        }
        for i in 0..n {
            if data[[i, i]] != 0.0 {
                return Err(FaeError::InvalidDataset(format!("nonzero diagonal at {i}")));
            }
            for j in i + 1..n {
                let (a, b) = (data[[i, j]], data[[j, i]]);
                if !(a >= 0.0) || !a.is_finite() || (a - b).abs() > 1e-9 * (1.0 + a.abs()) {
                    return Err(FaeError::InvalidDataset(format!("bad distance at ({i}, {j})")));
                }
            }
        }
        Ok(DistanceMatrix { kind, data })
    }

    pub fn n(&self) -> usize {
        self.data.nrows()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[[i, j]]
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.data
    }

    /// Upper-triangle entries `(i, j, d)` with `i < j`.
    pub fn upper(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        let n = self.n();
        (0..n).flat_map(move |i| (i + 1..n).map(move |j| (i, j, self.data[[i, j]])))
    }
}

/// All pairwise distances of a dataset, computed row-parallel.
pub fn distance_matrix(ds: &FunctionalDataset, opts: &MetricOptions) -> Result<DistanceMatrix> {
    let basis = ds.basis.as_ref();
    let n = ds.len();
    if opts.kind != MetricKind::HilbertL2 && opts.grid < MIN_GRID {
        return Err(FaeError::GridTooSmall { n: opts.grid, min: MIN_GRID });
    }
    let grid = uniform_grid(basis.domain(), opts.grid);
    // per-sample representation the metric works on
    let reps: Vec<Array2<f64>> = ds
        .samples
        .par_iter()
        .map(|s| match opts.kind {
            MetricKind::HilbertL2 => Ok(s.coeffs.clone()),
            MetricKind::ElasticSrv => srv_transform(s, basis, &grid),
            MetricKind::DtwFast | MetricKind::DtwUltra => Ok(s.evaluate(basis, &grid)?.reversed_axes()),
        })
        .collect::<Result<_>>()?;
    let span = basis.domain_len();
    // DTW costs sum squared gaps over grid cells; scaling by the spacing and
    // taking the root puts them in the units of the Hilbert distance
    let cell = span / (opts.grid.max(2) - 1) as f64;
    let pair = |i: usize, j: usize| -> Result<f64> {
        let (a, b) = (&reps[i], &reps[j]);
        match opts.kind {
            MetricKind::HilbertL2 => {
                let diff = a - b;
                let total: f64 = diff.rows().into_iter().map(|r| {
                    let r = r.to_vec();
                    quad_form(basis.gram(), &r, &r)
                }).sum();
                Ok(total.max(0.0).sqrt())
            }
            MetricKind::ElasticSrv => elastic_distance_srv(a.view(), b.view(), span),
            MetricKind::DtwFast => Ok((cell * dtw_series(a.view(), b.view(), DtwMode::Fast, opts.radius)?).sqrt()),
            MetricKind::DtwUltra => Ok((cell * dtw_series(a.view(), b.view(), DtwMode::Ultra, opts.radius)?).sqrt()),
        }
    };
    let rows: Vec<Vec<f64>> =
        (0..n).into_par_iter().map(|i| (i + 1..n).map(|j| pair(i, j)).collect::<Result<Vec<_>>>()).collect::<Result<_>>()?;
    let mut data = Array2::zeros((n, n));
    for (i, row) in rows.into_iter().enumerate() {
        for (k, v) in row.into_iter().enumerate() {
            let j = i + 1 + k;
            data[[i, j]] = v;
            data[[j, i]] = v;
        }
    }
    Ok(DistanceMatrix { kind: opts.kind, data })
}
