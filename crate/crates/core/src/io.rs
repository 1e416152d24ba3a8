//! File formats: long-format observations, label tables, dataset
//! manifests, distance and graph lists, embeddings and JSON documents.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use ndarray::Array2;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{FaeError, Result};
use crate::fdata::{smooth_all, standardize, BasisSpec, BasisSystem, FunctionalDataset, SamplePath, StandardizeReport};
use crate::metrics::{DistanceMatrix, MetricKind, SimilarityGraph};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub basis: BasisSpec,
    #[serde(default = "default_lambda_s")]
    pub lambda_s: f64,
    #[serde(default)]
    pub standardize: bool,
}

fn default_lambda_s() -> f64 {
    1e-4
}

impl DatasetManifest {
    pub fn new(basis: BasisSpec) -> Self {
        DatasetManifest { basis, lambda_s: default_lambda_s(), standardize: false }
    }
}

/// Basis size used when no manifest is given.
pub const DEFAULT_BASIS_SIZE: usize = 20;

/// Cubic B-splines of size [`DEFAULT_BASIS_SIZE`] over the observed time
/// range, `λ_s = 1e-4`, no standardization.
pub fn default_manifest(paths: &[SamplePath]) -> Result<DatasetManifest> {
    let lo = paths.iter().filter_map(|p| p.times.first()).copied().fold(f64::INFINITY, f64::min);
    let hi = paths.iter().filter_map(|p| p.times.last()).copied().fold(f64::NEG_INFINITY, f64::max);
    if !(lo.is_finite() && hi.is_finite() && hi > lo) {
        return Err(FaeError::InvalidDataset("cannot infer a time domain from the observations".into()));
    }
    Ok(DatasetManifest::new(BasisSpec::bspline(DEFAULT_BASIS_SIZE, 3, [lo, hi])))
}

/// Smooths every path into the manifest basis and optionally standardizes.
pub fn build_dataset(paths: &[SamplePath], manifest: &DatasetManifest) -> Result<(FunctionalDataset, Option<StandardizeReport>)> {
    if paths.is_empty() {
        return Err(FaeError::InvalidDataset("no subjects".into()));
    }
    let basis = Arc::new(BasisSystem::new(manifest.basis)?);
    let (lo, hi) = basis.domain();
    for p in paths {
        if let Some(&t) = p.times.iter().find(|&&t| t < lo - 1e-12 || t > hi + 1e-12) {
            return Err(FaeError::InvalidSamplePath {
                subject_id: p.subject_id,
                reason: format!("time {t} outside the basis domain [{lo}, {hi}]"),
            });
        }
    }
    let samples = smooth_all(paths, &basis, manifest.lambda_s)?;
    let ds = FunctionalDataset::new(samples, basis)?;
    if manifest.standardize {
        let (ds, rep) = standardize(&ds)?;
        Ok((ds, Some(rep)))
    } else {
        Ok((ds, None))
    }
}

#[derive(Debug, Deserialize, Serialize)]
struct LongRow {
    subject_id: i64,
    dim: usize,
    t: f64,
    value: f64,
}

/// Reads `subject_id,dim,t,value` rows. Each subject's observations must
/// appear in increasing time order and cover every dimension at every time.
pub fn read_long_csv(path: &Path) -> Result<Vec<SamplePath>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let headers = rdr.headers()?.clone();
    let expected = ["subject_id", "dim", "t", "value"];
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(FaeError::Parse(format!("{}: expected header {}, found {}", path.display(), expected.join(","), headers.iter().collect::<Vec<_>>().join(","))));
    }
    // subject → dim → (times, values), keeping file order
    let mut order: Vec<i64> = Vec::new();
    let mut data: BTreeMap<i64, BTreeMap<usize, (Vec<f64>, Vec<f64>)>> = BTreeMap::new();
    for (line, row) in rdr.deserialize::<LongRow>().enumerate() {
        let row = row.map_err(|e| FaeError::Parse(format!("{} row {}: {e}", path.display(), line + 2)))?;
        let subj = data.entry(row.subject_id).or_insert_with(|| {
            order.push(row.subject_id);
            BTreeMap::new()
        });
        let (ts, vs) = subj.entry(row.dim).or_default();
        ts.push(row.t);
        vs.push(row.value);
    }
    if order.is_empty() {
        return Err(FaeError::InvalidDataset(format!("{} holds no observations", path.display())));
    }
    let mut paths = Vec::with_capacity(order.len());
    for id in order {
        let dims = &data[&id];
        let p = dims.len();
        if dims.keys().copied().ne(0..p) {
            return Err(FaeError::InvalidSamplePath { subject_id: id, reason: "dimensions are not numbered 0..p".into() });
        }
        let times = &dims[&0].0;
        if let Some(w) = times.windows(2).find(|w| !(w[1] > w[0])) {
            return Err(FaeError::InvalidSamplePath {
                subject_id: id,
                reason: format!("times not strictly increasing ({} then {})", w[0], w[1]),
            });
        }
        let mut values = Array2::zeros((times.len(), p));
        for (d, (ts, vs)) in dims {
            if ts != times {
                return Err(FaeError::InvalidSamplePath { subject_id: id, reason: format!("dimension {d} is observed at different times") });
            }
            for (j, v) in vs.iter().enumerate() {
                values[[j, *d]] = *v;
            }
        }
        paths.push(SamplePath::new(id, times.clone(), values)?);
    }
    let p0 = paths[0].dims();
    if let Some(bad) = paths.iter().find(|s| s.dims() != p0) {
        return Err(FaeError::InvalidSamplePath { subject_id: bad.subject_id, reason: format!("{} dimensions, expected {p0}", bad.dims()) });
    }
    Ok(paths)
}

/// Writes `subject_id,dim,t,value` rows.
pub fn write_long_csv(path: &Path, paths: &[SamplePath]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for s in paths {
        for d in 0..s.dims() {
            for (j, t) in s.times.iter().enumerate() {
                w.serialize(LongRow { subject_id: s.subject_id, dim: d, t: *t, value: s.values[[j, d]] })?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Deserialize, Serialize)]
struct LabelRow {
    subject_id: i64,
    label: i64,
}

/// `subject_id,label` rows in file order.
pub fn read_labels(path: &Path) -> Result<Vec<(i64, i64)>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let mut out = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for (line, row) in rdr.deserialize::<LabelRow>().enumerate() {
        let row = row.map_err(|e| FaeError::Parse(format!("{} row {}: {e}", path.display(), line + 2)))?;
        if !seen.insert(row.subject_id) {
            return Err(FaeError::Parse(format!("{}: subject {} listed twice", path.display(), row.subject_id)));
        }
        out.push((row.subject_id, row.label));
    }
    Ok(out)
}

pub fn write_labels(path: &Path, ids: &[i64], labels: &[i64]) -> Result<()> {
    if ids.len() != labels.len() {
        return Err(FaeError::LengthMismatch(ids.len(), labels.len()));
    }
    let mut w = csv::Writer::from_path(path)?;
    for (&subject_id, &label) in ids.iter().zip(labels) {
        w.serialize(LabelRow { subject_id, label })?;
    }
    w.flush()?;
    Ok(())
}

/// Pairs two label tables by subject id, in the order of `pred`.
pub fn align_labels(pred: &[(i64, i64)], truth: &[(i64, i64)]) -> Result<(Vec<i64>, Vec<i64>)> {
    let map: BTreeMap<i64, i64> = truth.iter().copied().collect();
    if pred.len() != truth.len() {
        return Err(FaeError::LengthMismatch(pred.len(), truth.len()));
    }
    let mut a = Vec::with_capacity(pred.len());
    let mut b = Vec::with_capacity(pred.len());
    for &(id, l) in pred {
        let t = map.get(&id).ok_or_else(|| FaeError::InvalidDataset(format!("subject {id} has no truth label")))?;
        a.push(l);
        b.push(*t);
    }
    Ok((a, b))
}

/// Upper triangle as `i,j,d` rows.
pub fn write_distances(path: &Path, d: &DistanceMatrix) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["i", "j", "d"])?;
    for (i, j, v) in d.upper() {
        w.write_record([i.to_string(), j.to_string(), format_f64(v)])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads an `i,j,d` upper triangle over `n` subjects (inferred when `None`).
pub fn read_distances(path: &Path, kind: MetricKind) -> Result<DistanceMatrix> {
    let rows = read_triples(path, "d")?;
    let n = rows.iter().map(|r| r.0.max(r.1) + 1).max().unwrap_or(0);
    let mut a = Array2::zeros((n, n));
    for (i, j, v) in rows {
        a[[i, j]] = v;
        a[[j, i]] = v;
    }
    DistanceMatrix::from_array(kind, a)
}

/// Edge list as `i,j,s` rows.
pub fn write_graph(path: &Path, g: &SimilarityGraph) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["i", "j", "s"])?;
    for &(i, j, s) in &g.edges {
        w.write_record([i.to_string(), j.to_string(), format_f64(s)])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads an `i,j,s` edge list for a graph on `n` vertices.
pub fn read_graph(path: &Path, n: usize) -> Result<SimilarityGraph> {
    let rows = read_triples(path, "s")?;
    if let Some(r) = rows.iter().find(|r| r.0 >= n || r.1 >= n) {
        return Err(FaeError::InvalidDataset(format!("edge ({}, {}) outside {n} vertices", r.0, r.1)));
    }
    if let Some(r) = rows.iter().find(|r| !(r.2 >= 0.0) || !r.2.is_finite()) {
        return Err(FaeError::InvalidDataset(format!("edge ({}, {}) has invalid weight {}", r.0, r.1, r.2)));
    }
    Ok(SimilarityGraph::from_edges(n, 0, rows))
}

fn read_triples(path: &Path, third: &str) -> Result<Vec<(usize, usize, f64)>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let headers = rdr.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["i", "j", third] {
        return Err(FaeError::Parse(format!("{}: expected header i,j,{third}", path.display())));
    }
    let mut out = Vec::new();
    for (line, rec) in rdr.deserialize::<(usize, usize, f64)>().enumerate() {
        out.push(rec.map_err(|e| FaeError::Parse(format!("{} row {}: {e}", path.display(), line + 2)))?);
    }
    Ok(out)
}

/// `subject_id,x0,x1,…` rows.
pub fn write_embedding(path: &Path, ids: &[i64], x: &Array2<f64>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["subject_id".to_string()];
    header.extend((0..x.ncols()).map(|k| format!("x{k}")));
    w.write_record(&header)?;
    for (id, row) in ids.iter().zip(x.rows()) {
        let mut rec = vec![id.to_string()];
        rec.extend(row.iter().map(|v| format_f64(*v)));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_embedding(path: &Path) -> Result<(Vec<i64>, Array2<f64>)> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let s = rdr.headers()?.len().saturating_sub(1);
    if s == 0 {
        return Err(FaeError::Parse(format!("{}: no coordinate columns", path.display())));
    }
    let mut ids = Vec::new();
    let mut vals = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let parse = |k: usize| -> Result<f64> {
            rec.get(k)
                .and_then(|v| v.parse::<f64>().ok())
                .filter(|v| v.is_finite())
                .ok_or_else(|| FaeError::Parse(format!("{} row {}: bad value in column {k}", path.display(), line + 2)))
        };
        let id = rec.get(0).and_then(|v| v.parse::<i64>().ok()).ok_or_else(|| FaeError::Parse(format!("{} row {}: bad subject id", path.display(), line + 2)))?;
        ids.push(id);
        for k in 1..=s {
            vals.push(parse(k)?);
        }
    }
    let n = ids.len();
    Ok((ids, Array2::from_shape_vec((n, s), vals).expect("row lengths checked")))
}

/// Shortest text that parses back to the same value.
pub fn format_f64(v: f64) -> String {
    format!("{v:?}")
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

/// Pretty JSON written to a temporary sibling and renamed into place.
pub fn write_json_atomic<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().ok_or_else(|| FaeError::Config(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp", name.to_string_lossy()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}
