//! Loss terms of the training objective and their gradients.

use ndarray::{Array2, ArrayView2, ArrayView3, ArrayViewMut3};

/// `(1/(n·s)) (2·WSS − TSS)` for the rows of `x` grouped by `labels`
/// (labels may be any ids).
pub fn clustering_loss(x: ArrayView2<f64>, labels: &[usize]) -> f64 {
    clustering_terms(x, labels).0
}

/// Loss value and its gradient with respect to `x`. The cluster means are
/// treated as functions of `x`; assignments are fixed.
pub fn clustering_loss_grad(x: ArrayView2<f64>, labels: &[usize]) -> (f64, Array2<f64>) {
    let (loss, means, global) = clustering_terms(x, labels);
    let (n, s) = x.dim();
    let scale = 1.0 / (n as f64 * s as f64);
    let mut g = Array2::zeros((n, s));
    for i in 0..n {
        let mu = &means[&labels[i]];
        for d in 0..s {
            g[[i, d]] = scale * (4.0 * (x[[i, d]] - mu[d]) - 2.0 * (x[[i, d]] - global[d]));
        }
    }
    (loss, g)
}

type Means = std::collections::BTreeMap<usize, Vec<f64>>;

fn clustering_terms(x: ArrayView2<f64>, labels: &[usize]) -> (f64, Means, Vec<f64>) {
    let (n, s) = x.dim();
    assert_eq!(n, labels.len(), "one label per row");
    let mut means: Means = Means::new();
    let mut counts = std::collections::BTreeMap::new();
    let mut global = vec![0.0; s];
    for i in 0..n {
        let m = means.entry(labels[i]).or_insert_with(|| vec![0.0; s]);
        *counts.entry(labels[i]).or_insert(0usize) += 1;
        for d in 0..s {
            m[d] += x[[i, d]];
            global[d] += x[[i, d]];
        }
    }
    for (k, m) in means.iter_mut() {
        let c = counts[k] as f64;
        m.iter_mut().for_each(|v| *v /= c);
    }
    global.iter_mut().for_each(|v| *v /= n as f64);
    let mut wss = 0.0;
    let mut tss = 0.0;
    for i in 0..n {
        let mu = &means[&labels[i]];
        for d in 0..s {
            wss += (x[[i, d]] - mu[d]).powi(2);
            tss += (x[[i, d]] - global[d]).powi(2);
        }
    }
    ((2.0 * wss - tss) / (n as f64 * s as f64), means, global)
}

/// `Σ_d [Σ_{q<g} ⟨w_qd, w_gd⟩² + Σ_q (‖w_qd‖² − 1)²]` for encoder weights
/// `w[q, d, :]` under the Gram matrix `gram`.
pub fn orthogonality_penalty(w: ArrayView3<f64>, gram: &Array2<f64>) -> f64 {
    orth_impl(w, gram, None)
}

/// Adds `scale · ∂penalty/∂w` into `grad` and returns the penalty.
pub fn orthogonality_penalty_grad(w: ArrayView3<f64>, gram: &Array2<f64>, scale: f64, grad: ArrayViewMut3<f64>) -> f64 {
    orth_impl(w, gram, Some((scale, grad)))
}

fn orth_impl(w: ArrayView3<f64>, gram: &Array2<f64>, mut grad: Option<(f64, ArrayViewMut3<f64>)>) -> f64 {
    let (q1, p, _) = w.dim();
    let mut total = 0.0;
    for d in 0..p {
        let wd = w.index_axis(ndarray::Axis(1), d); // q1 × ℓ
        let wg = wd.dot(gram); // q1 × ℓ
        let pm = wg.dot(&wd.t()); // q1 × q1
        // F = E + diag(E), E = P − I
        let mut f = pm.clone();
        for q in 0..q1 {
            f[[q, q]] -= 1.0;
        }
        for q in 0..q1 {
            total += (f[[q, q]]).powi(2);
            for g in q + 1..q1 {
                total += pm[[q, g]].powi(2);
            }
            f[[q, q]] *= 2.0;
        }
        if let Some((scale, g)) = grad.as_mut() {
            let dw = f.dot(&wg) * (2.0 * *scale);
            let mut slot = g.index_axis_mut(ndarray::Axis(1), d);
            slot += &dw;
        }
    }
    total
}

/// Sum of absolute coefficients.
pub fn l1_norm(c: &[f64]) -> f64 {
    c.iter().map(|v| v.abs()).sum()
}

/// Subgradient of the ℓ1 norm with `sign(0) = 0`.
#[inline]
pub fn l1_subgradient(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}
