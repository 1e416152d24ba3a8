//! Accelerated projected gradient on the dual of the weighted fusion
//! problem `(1/n)‖x − u‖² + λ Σ_{i<j} s_ij |u_i − u_j|`.

use crate::metrics::SimilarityGraph;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FistaOptions {
    pub max_iter: usize,
    /// Stop once the duality gap falls below `tol · max(1, |primal|)`.
    pub tol: f64,
}

impl Default for FistaOptions {
    fn default() -> Self {
        FistaOptions { max_iter: 100_000, tol: 1e-12 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FistaResult {
    pub u: Vec<f64>,
    pub objective: f64,
    pub gap: f64,
    pub iterations: usize,
    /// False when `max_iter` was hit; `u` is then the best iterate seen.
    pub converged: bool,
}

/// The convex-clustering objective at `u`.
pub fn objective(x: &[f64], graph: &SimilarityGraph, lambda: f64, u: &[f64]) -> f64 {
    let n = x.len() as f64;
    let fit: f64 = x.iter().zip(u).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n;
    let pen: f64 = graph.edges.iter().map(|&(i, j, s)| s * (u[i] - u[j]).abs()).sum();
    fit + lambda * pen
}

/// Solves the fusion problem at `lambda_plus` (used to warm-start a path
/// above zero and as a verification oracle).
pub fn fista_warm_start(x: &[f64], graph: &SimilarityGraph, lambda_plus: f64, opts: &FistaOptions) -> FistaResult {
    let n = x.len();
    let nf = n as f64;
    let edges = &graph.edges;
    if lambda_plus <= 0.0 || edges.is_empty() {
        return FistaResult {
            u: x.to_vec(),
            objective: 0.0,
            gap: 0.0,
            iterations: 0,
            converged: true,
        };
    }
    let w: Vec<f64> = edges.iter().map(|e| lambda_plus * e.2).collect();
    let mut deg = vec![0usize; n];
    for &(i, j, _) in edges {
        deg[i] += 1;
        deg[j] += 1;
    }
    // λmax(DᵀD) ≤ 2·max degree
    let lip = nf * (*deg.iter().max().unwrap()).max(1) as f64;
    let primal = |z: &[f64], u: &mut Vec<f64>| {
        u.copy_from_slice(x);
        for (e, &(i, j, _)) in edges.iter().enumerate() {
            u[i] -= 0.5 * nf * z[e];
            u[j] += 0.5 * nf * z[e];
        }
    };
    let dual_value = |z: &[f64], u: &[f64]| -> f64 {
        // h(z) = zᵀDx − (n/4)‖Dᵀz‖², with Dᵀz = (2/n)(x − u)
        let dx: f64 = edges.iter().zip(z).map(|(&(i, j, _), ze)| ze * (x[i] - x[j])).sum();
        let dtz: f64 = x.iter().zip(u).map(|(a, b)| (2.0 / nf * (a - b)).powi(2)).sum();
        dx - 0.25 * nf * dtz
    };
    let m = edges.len();
    let mut z = vec![0.0; m];
    let mut z_prev = z.clone();
    let mut y = z.clone();
    let mut t = 1.0f64;
    let mut u = vec![0.0; n];
    let mut best = (f64::INFINITY, x.to_vec(), f64::INFINITY);
    let mut iterations = 0;
    let mut converged = false;
    for it in 1..=opts.max_iter {
        iterations = it;
        primal(&y, &mut u);
        std::mem::swap(&mut z, &mut z_prev);
        for (e, &(i, j, _)) in edges.iter().enumerate() {
            // −∇g(y)_e = (D u(y))_e
            let v = y[e] + (u[i] - u[j]) / lip;
            z[e] = v.clamp(-w[e], w[e]);
        }
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        // gradient-based adaptive restart
        let restart: f64 = (0..m).map(|e| (y[e] - z[e]) * (z[e] - z_prev[e])).sum();
        if restart > 0.0 {
            t = 1.0;
            y.copy_from_slice(&z);
        } else {
            let beta = (t - 1.0) / t_next;
            for e in 0..m {
                y[e] = z[e] + beta * (z[e] - z_prev[e]);
            }
            t = t_next;
        }
        if it % 25 == 0 || it == opts.max_iter {
            primal(&z, &mut u);
            let p = objective(x, graph, lambda_plus, &u);
            let gap = p - dual_value(&z, &u);
            if p < best.0 {
                best = (p, u.clone(), gap);
            }
            if gap <= opts.tol * p.abs().max(1.0) {
                best = (p, u.clone(), gap);
                converged = true;
                break;
            }
        }
    }
    if !converged {
        log::warn!("FISTA stopped after {iterations} iterations with gap {:.3e}", best.2);
    }
    FistaResult { u: best.1, objective: best.0, gap: best.2, iterations, converged }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn complete(n: usize) -> SimilarityGraph {
        let mut e = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                e.push((i, j, 1.0));
            }
        }
        SimilarityGraph::from_edges(n, n - 1, e)
    }

    #[test]
    fn zero_lambda_returns_data() {
        let x = [0.3, -1.0, 2.0];
        let r = fista_warm_start(&x, &complete(3), 0.0, &FistaOptions::default());
        assert_eq!(r.u, x.to_vec());
    }

    #[test]
    fn two_point_closed_form() {
        let r = fista_warm_start(&[0.0, 2.0], &complete(2), 0.5, &FistaOptions::default());
        assert!(r.converged);
        assert!((r.u[0] - 0.5).abs() < 1e-6 && (r.u[1] - 1.5).abs() < 1e-6, "{:?}", r.u);
    }

    #[test]
    fn huge_lambda_gives_the_mean() {
        let x = [0.0, 1.0, 5.0, -2.0];
        let r = fista_warm_start(&x, &complete(4), 1e3, &FistaOptions::default());
        for v in &r.u {
            assert!((v - 1.0).abs() < 1e-6, "{:?}", r.u);
        }
    }
}
