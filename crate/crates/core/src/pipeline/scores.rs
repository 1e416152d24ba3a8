//! Chance-adjusted agreement between two labelings.

use std::collections::BTreeMap;

use crate::error::{FaeError, Result};

/// Dense contingency table with row and column sums.
struct Contingency {
    n: usize,
    table: Vec<Vec<usize>>,
    rows: Vec<usize>,
    cols: Vec<usize>,
}

fn dense_ids<T: Ord + Copy>(labels: &[T]) -> (Vec<usize>, usize) {
    let mut map = BTreeMap::new();
    for &l in labels {
        let next = map.len();
        map.entry(l).or_insert(next);
    }
    (labels.iter().map(|l| map[l]).collect(), map.len())
}

fn contingency<T: Ord + Copy>(a: &[T], b: &[T]) -> Result<Contingency> {
    if a.len() != b.len() {
        return Err(FaeError::LengthMismatch(a.len(), b.len()));
    }
    let (ia, ka) = dense_ids(a);
    let (ib, kb) = dense_ids(b);
    let mut table = vec![vec![0usize; kb]; ka];
    for (x, y) in ia.iter().zip(&ib) {
        table[*x][*y] += 1;
    }
    let rows = table.iter().map(|r| r.iter().sum()).collect();
    let cols = (0..kb).map(|j| table.iter().map(|r| r[j]).sum()).collect();
    Ok(Contingency { n: a.len(), table, rows, cols })
}

fn entropy(counts: &[usize], n: usize) -> f64 {
    let n = n as f64;
    -counts.iter().filter(|&&c| c > 0).map(|&c| (c as f64 / n) * (c as f64 / n).ln()).sum::<f64>()
}

fn mutual_information(c: &Contingency) -> f64 {
    let n = c.n as f64;
    let mut mi = 0.0;
    for (i, row) in c.table.iter().enumerate() {
        for (j, &nij) in row.iter().enumerate() {
            if nij > 0 {
                let v = nij as f64;
                mi += v / n * (n * v / (c.rows[i] as f64 * c.cols[j] as f64)).ln();
            }
        }
    }
    mi.max(0.0)
}

/// Expected mutual information under the hypergeometric model of random
/// labelings with the same cluster sizes.
fn expected_mutual_information(c: &Contingency) -> f64 {
    let n = c.n;
    // ln k! for k = 0..=n
    let mut lf = vec![0.0f64; n + 1];
    for k in 1..=n {
        lf[k] = lf[k - 1] + (k as f64).ln();
    }
    let nf = n as f64;
    let mut emi = 0.0;
    for &a in &c.rows {
        for &b in &c.cols {
            let lo = (a + b).saturating_sub(n).max(1);
            let hi = a.min(b);
            let base = lf[a] + lf[b] + lf[n - a] + lf[n - b] - lf[n];
            for nij in lo..=hi {
                let v = nij as f64;
                let log_p = base - lf[nij] - lf[a - nij] - lf[b - nij] - lf[n + nij - a - b];
                emi += v / nf * (nf * v / (a as f64 * b as f64)).ln() * log_p.exp();
            }
        }
    }
    emi
}

/// Adjusted mutual information, normalised by the larger entropy.
pub fn ami<T: Ord + Copy>(a: &[T], b: &[T]) -> Result<f64> {
    let c = contingency(a, b)?;
    if c.n == 0 || (c.rows.len() == c.cols.len() && c.table.iter().all(|r| r.iter().filter(|&&v| v > 0).count() == 1)) {
        // identical partitions up to relabeling, including the one-cluster case
        return Ok(1.0);
    }
    let mi = mutual_information(&c);
    let emi = expected_mutual_information(&c);
    let norm = entropy(&c.rows, c.n).max(entropy(&c.cols, c.n));
    let mut denom = norm - emi;
    if denom.abs() < f64::EPSILON {
        denom = f64::EPSILON.copysign(denom);
    }
    Ok((mi - emi) / denom)
}

fn pairs(k: usize) -> f64 {
    (k * k.saturating_sub(1)) as f64 / 2.0
}

/// Adjusted Rand index from pair counts.
pub fn ari<T: Ord + Copy>(a: &[T], b: &[T]) -> Result<f64> {
    let c = contingency(a, b)?;
    let index: f64 = c.table.iter().flatten().map(|&v| pairs(v)).sum();
    let sa: f64 = c.rows.iter().map(|&v| pairs(v)).sum();
    let sb: f64 = c.cols.iter().map(|&v| pairs(v)).sum();
    let total = pairs(c.n);
    if total == 0.0 {
        return Ok(1.0);
    }
    let expected = sa * sb / total;
    let max = 0.5 * (sa + sb);
    if max == expected {
        // both labelings are all-singletons or both a single cluster
        return Ok(if index == max { 1.0 } else { 0.0 });
    }
    Ok((index - expected) / (max - expected))
}
