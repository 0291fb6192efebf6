//! Upper bounds for the discrete problem `min_pi sum L[ij,kl] pi_ij pi_kl`
//! over the transportation polytope.
//!
//! None of these certify global optimality on their own; they are paired
//! with a relaxation lower bound.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use rayon::prelude::*;
use serde::Serialize;

use crate::certify::Coupling;
use crate::error::{Error, Result};
use crate::spaces::CostTensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum OracleMethod {
    Multistart,
    VertexEnum,
    ExactScalar,
}

#[derive(Clone, Debug)]
pub struct OracleResult {
    pub coupling: Coupling,
    pub value: f64,
    pub starts: usize,
    pub method: OracleMethod,
}

/// Neumaier-compensated running sum.
#[derive(Default)]
struct Compensated {
    sum: f64,
    c: f64,
}

impl Compensated {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.c += (self.sum - t) + x;
        } else {
            self.c += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.c
    }
}

/// `sum L[ij,kl] pi_ij pi_kl` with compensated summation; `pi` row-major.
pub fn objective(l: &CostTensor, pi: &[f64]) -> Result<f64> {
    let nv = l.num_vars();
    if pi.len() != nv {
        return Err(Error::Dimension(format!(
            "coupling with {} entries for a cost over {nv} variables",
            pi.len()
        )));
    }
    let mut acc = Compensated::default();
    for a in 0..nv {
        if pi[a] == 0.0 {
            continue;
        }
        for b in 0..nv {
            acc.add(l.at(a, b) * pi[a] * pi[b]);
        }
    }
    Ok(acc.value())
}

fn gradient(l: &CostTensor, pi: &[f64]) -> Vec<f64> {
    let nv = pi.len();
    (0..nv)
        .map(|a| 2.0 * (0..nv).map(|b| l.at(a, b) * pi[b]).sum::<f64>())
        .collect()
}

fn marginal_error(pi: &[f64], mu: &[f64], nu: &[f64]) -> f64 {
    let n = nu.len();
    let mut worst = 0.0f64;
    for (i, &m) in mu.iter().enumerate() {
        worst = worst.max((pi[i * n..(i + 1) * n].iter().sum::<f64>() - m).abs());
    }
    for (j, &w) in nu.iter().enumerate() {
        worst = worst.max(((0..mu.len()).map(|i| pi[i * n + j]).sum::<f64>() - w).abs());
    }
    worst
}

/// Euclidean projection onto the affine set of matrices with the given
/// row and column sums.
fn project_affine(y: &[f64], mu: &[f64], nu: &[f64]) -> Vec<f64> {
    let (m, n) = (mu.len(), nu.len());
    let rows: Vec<f64> = (0..m).map(|i| y[i * n..(i + 1) * n].iter().sum()).collect();
    let cols: Vec<f64> = (0..n).map(|j| (0..m).map(|i| y[i * n + j]).sum()).collect();
    let total: f64 = rows.iter().sum();
    let mass: f64 = mu.iter().sum();
    let a: Vec<f64> = rows.iter().zip(mu).map(|(r, t)| (r - t) / n as f64).collect();
    let s = (total - mass) / n as f64;
    let b: Vec<f64> = cols.iter().zip(nu).map(|(c, t)| (c - t - s) / m as f64).collect();
    let mut out = y.to_vec();
    for i in 0..m {
        for j in 0..n {
            out[i * n + j] -= a[i] + b[j];
        }
    }
    out
}

/// Moves `pi` onto the exact marginals by adjusting the entries of a
/// maximum-weight spanning tree of the bipartite support graph.
fn tree_correction(pi: &mut [f64], mu: &[f64], nu: &[f64]) {
    let (m, n) = (mu.len(), nu.len());
    let mut edges: Vec<usize> = (0..m * n).collect();
    edges.sort_by(|&a, &b| pi[b].total_cmp(&pi[a]).then(a.cmp(&b)));
    // union-find over m + n nodes
    let mut parent: Vec<usize> = (0..m + n).collect();
    fn find(p: &mut [usize], x: usize) -> usize {
        let mut r = x;
        while p[r] != r {
            r = p[r];
        }
        let mut c = x;
        while p[c] != r {
            let nx = p[c];
            p[c] = r;
            c = nx;
        }
        r
    }
    let mut tree = Vec::with_capacity(m + n - 1);
    for e in edges {
        let (a, b) = (find(&mut parent, e / n), find(&mut parent, m + e % n));
        if a != b {
            parent[a] = b;
            tree.push(e);
        }
    }
    let mut row_res: Vec<f64> = (0..m)
        .map(|i| mu[i] - pi[i * n..(i + 1) * n].iter().sum::<f64>())
        .collect();
    let mut col_res: Vec<f64> = (0..n)
        .map(|j| nu[j] - (0..m).map(|i| pi[i * n + j]).sum::<f64>())
        .collect();
    if let Some(delta) = solve_tree(&tree, &mut row_res, &mut col_res, m, n) {
        for (e, d) in delta {
            pi[e] = (pi[e] + d).max(0.0);
        }
    }
}

/// Solves for edge values on a spanning tree that produce the given row and
/// column sums, by repeatedly eliminating leaves. Returns `None` when the
/// edge set is not a spanning tree.
fn solve_tree(
    tree: &[usize],
    row: &mut [f64],
    col: &mut [f64],
    m: usize,
    n: usize,
) -> Option<Vec<(usize, f64)>> {
    if tree.len() != m + n - 1 {
        return None;
    }
    let mut degree = vec![0usize; m + n];
    let mut incident: Vec<Vec<usize>> = vec![Vec::new(); m + n];
    for (k, &e) in tree.iter().enumerate() {
        let (a, b) = (e / n, m + e % n);
        degree[a] += 1;
        degree[b] += 1;
        incident[a].push(k);
        incident[b].push(k);
    }
    let mut used = vec![false; tree.len()];
    let mut out = Vec::with_capacity(tree.len());
    let mut stack: Vec<usize> = (0..m + n).filter(|&v| degree[v] == 1).collect();
    while let Some(v) = stack.pop() {
        if degree[v] != 1 {
            continue;
        }
        let k = *incident[v].iter().find(|&&k| !used[k])?;
        used[k] = true;
        let e = tree[k];
        let (a, b) = (e / n, m + e % n);
        let value = if v < m { row[v] } else { col[v - m] };
        out.push((e, value));
        row[a] -= value;
        col[b - m] -= value;
        degree[a] -= 1;
        degree[b] -= 1;
        let other = if v == a { b } else { a };
        if degree[other] == 1 {
            stack.push(other);
        }
    }
    (out.len() == tree.len()).then_some(out)
}

/// Euclidean projection onto the transportation polytope by Dykstra's
/// alternating projections, finished with an exact marginal correction.
pub fn project_transport(y: &[f64], mu: &[f64], nu: &[f64]) -> Vec<f64> {
    let len = y.len();
    let mut x = y.to_vec();
    let mut p = vec![0.0; len];
    let mut q = vec![0.0; len];
    for _ in 0..200_000 {
        let xp: Vec<f64> = x.iter().zip(&p).map(|(a, b)| a + b).collect();
        let ya = project_affine(&xp, mu, nu);
        for k in 0..len {
            p[k] = xp[k] - ya[k];
        }
        let mut change = 0.0f64;
        for k in 0..len {
            let v = ya[k] + q[k];
            let nx = v.max(0.0);
            q[k] = v - nx;
            change = change.max((nx - x[k]).abs());
            x[k] = nx;
        }
        if change <= 1e-13 && marginal_error(&x, mu, nu) <= 1e-12 {
            break;
        }
    }
    tree_correction(&mut x, mu, nu);
    x
}

fn sinkhorn_start(g: &mut [f64], mu: &[f64], nu: &[f64]) {
    let (m, n) = (mu.len(), nu.len());
    for _ in 0..10_000 {
        for i in 0..m {
            let s: f64 = g[i * n..(i + 1) * n].iter().sum();
            for j in 0..n {
                g[i * n + j] *= mu[i] / s;
            }
        }
        for j in 0..n {
            let s: f64 = (0..m).map(|i| g[i * n + j]).sum();
            for i in 0..m {
                g[i * n + j] *= nu[j] / s;
            }
        }
        if marginal_error(g, mu, nu) <= 1e-13 {
            break;
        }
    }
    tree_correction(g, mu, nu);
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Projected gradient descent with Armijo backtracking from `pi`.
fn descend(l: &CostTensor, mu: &[f64], nu: &[f64], mut pi: Vec<f64>) -> Vec<f64> {
    let nv = pi.len();
    let lip = (0..nv)
        .map(|a| (0..nv).map(|b| l.at(a, b).abs()).sum::<f64>())
        .fold(0.0, f64::max)
        .max(1e-12)
        * 2.0;
    let t0 = 1.0 / lip;
    let mut f = objective(l, &pi).unwrap();
    let mut t = t0;
    for _ in 0..5_000 {
        let g = gradient(l, &pi);
        let probe: Vec<f64> = pi.iter().zip(&g).map(|(x, d)| x - t0 * d).collect();
        let pg = project_transport(&probe, mu, nu);
        let gmap = pi.iter().zip(&pg).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt() / t0;
        if gmap <= 1e-10 {
            break;
        }
        let mut accepted = false;
        t = (t * 4.0).min(1e3 * t0);
        for _ in 0..60 {
            let trial: Vec<f64> = pi.iter().zip(&g).map(|(x, d)| x - t * d).collect();
            let cand = project_transport(&trial, mu, nu);
            let fc = objective(l, &cand).unwrap();
            let step: Vec<f64> = cand.iter().zip(&pi).map(|(a, b)| a - b).collect();
            if fc <= f + 1e-4 * dot(&g, &step) {
                if fc < f || (fc == f && step.iter().all(|s| *s == 0.0)) {
                    accepted = fc < f;
                    pi = cand;
                    f = fc;
                }
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    pi
}

fn lexicographic_min(cands: Vec<(f64, Vec<f64>)>) -> (f64, Vec<f64>) {
    cands
        .into_iter()
        .min_by(|a, b| {
            a.0.total_cmp(&b.0).then_with(|| {
                a.1.iter()
                    .zip(&b.1)
                    .map(|(x, y)| x.total_cmp(y))
                    .find(|o| o.is_ne())
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
        })
        .unwrap()
}

fn to_coupling(pi: &[f64], mu: &[f64], nu: &[f64]) -> Result<Coupling> {
    let n = nu.len();
    let mat = DMatrix::from_fn(mu.len(), n, |i, j| pi[i * n + j]);
    Coupling::new(mat, mu, nu, 1e-10)
}

fn check_inputs(l: &CostTensor, mu: &[f64], nu: &[f64]) -> Result<()> {
    if mu.len() != l.m() || nu.len() != l.n() {
        return Err(Error::Dimension(format!(
            "marginals of length {}/{} for a {}x{} cost",
            mu.len(),
            nu.len(),
            l.m(),
            l.n()
        )));
    }
    let (a, b): (f64, f64) = (mu.iter().sum(), nu.iter().sum());
    if (a - b).abs() > 1e-9 || mu.iter().chain(nu).any(|w| !(*w > 0.0)) {
        return Err(Error::Invalid("marginals must be positive with equal mass".into()));
    }
    Ok(())
}

/// Best local minimum over `starts` Dirichlet-random feasible starts.
/// Start `k` draws from its own stream, so the first `k` starts are the same
/// for any larger `starts`.
pub fn multistart(l: &CostTensor, mu: &[f64], nu: &[f64], starts: usize, seed: u64) -> Result<OracleResult> {
    check_inputs(l, mu, nu)?;
    if starts == 0 {
        return Err(Error::Invalid("multistart needs at least one start".into()));
    }
    let nv = mu.len() * nu.len();
    let gamma = Gamma::<f64>::new(1.0, 1.0).expect("valid gamma");
    let cands: Vec<(f64, Vec<f64>)> = (0..starts)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k as u64);
            let mut g: Vec<f64> = (0..nv).map(|_| gamma.sample(&mut rng).max(1e-300)).collect();
            let s: f64 = g.iter().sum();
            g.iter_mut().for_each(|x| *x /= s);
            sinkhorn_start(&mut g, mu, nu);
            let pi = descend(l, mu, nu, g);
            (objective(l, &pi).unwrap(), pi)
        })
        .filter(|(_, pi)| marginal_error(pi, mu, nu) <= 1e-10 && pi.iter().all(|v| *v >= 0.0))
        .collect();
    if cands.is_empty() {
        return Err(Error::Solver("no multistart run ended at a feasible coupling".into()));
    }
    let (value, pi) = lexicographic_min(cands);
    Ok(OracleResult {
        coupling: to_coupling(&pi, mu, nu)?,
        value,
        starts,
        method: OracleMethod::Multistart,
    })
}

/// All vertices of the transportation polytope, from spanning-tree supports.
pub fn transport_vertices(mu: &[f64], nu: &[f64]) -> Result<Vec<Vec<f64>>> {
    let (m, n) = (mu.len(), nu.len());
    if m > 4 || n > 4 {
        return Err(Error::Capacity {
            what: "vertex enumeration (m, n <= 4)",
            needed: m.max(n) as u128,
            limit: 4,
        });
    }
    let cells = m * n;
    let k = m + n - 1;
    let mut out: Vec<Vec<f64>> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    let mut subset: Vec<usize> = (0..k).collect();
    loop {
        let mut row = mu.to_vec();
        let mut col = nu.to_vec();
        if let Some(vals) = solve_tree(&subset, &mut row, &mut col, m, n) {
            if vals.iter().all(|&(_, v)| v >= -1e-12) {
                let mut pi = vec![0.0; cells];
                for (e, v) in vals {
                    pi[e] = v.max(0.0);
                }
                let key: Vec<i64> = pi.iter().map(|v| (v * 1e10).round() as i64).collect();
                if seen.insert(key) {
                    out.push(pi);
                }
            }
        }
        // next k-combination of 0..cells
        let mut i = k;
        loop {
            if i == 0 {
                return Ok(out);
            }
            i -= 1;
            if subset[i] < cells - k + i {
                subset[i] += 1;
                for t in i + 1..k {
                    subset[t] = subset[t - 1] + 1;
                }
                break;
            }
        }
    }
}

/// Minimum over all polytope vertices and, when given, a multistart result.
/// The objective is indefinite, so this is an upper bound only.
pub fn vertex_enumeration(
    l: &CostTensor,
    mu: &[f64],
    nu: &[f64],
    multistart_best: Option<&OracleResult>,
) -> Result<OracleResult> {
    check_inputs(l, mu, nu)?;
    let verts = transport_vertices(mu, nu)?;
    let count = verts.len();
    let mut cands: Vec<(f64, Vec<f64>)> = verts
        .into_iter()
        .map(|v| (objective(l, &v).unwrap(), v))
        .collect();
    let mut method = OracleMethod::VertexEnum;
    if let Some(best) = multistart_best {
        let v = best.coupling.to_vec();
        cands.push((best.value, v));
    }
    let (value, pi) = lexicographic_min(cands.clone());
    if let Some(best) = multistart_best {
        if value == best.value && pi == best.coupling.to_vec() {
            method = OracleMethod::Multistart;
        }
    }
    Ok(OracleResult {
        coupling: to_coupling(&pi, mu, nu)?,
        value,
        starts: count,
        method,
    })
}

/// Exact minimum for `m = n = 2` (a one-parameter family) and for the forced
/// coupling when `m = 1` or `n = 1`.
pub fn exact_scalar(l: &CostTensor, mu: &[f64], nu: &[f64]) -> Result<OracleResult> {
    check_inputs(l, mu, nu)?;
    let (m, n) = (mu.len(), nu.len());
    let pi: Vec<f64> = if m == 1 || n == 1 {
        (0..m * n).map(|a| mu[a / n] * nu[a % n] / mu.iter().sum::<f64>()).collect()
    } else if m == 2 && n == 2 {
        let at = |t: f64| vec![t, mu[0] - t, nu[0] - t, mu[1] - nu[0] + t];
        let lo = (nu[0] - mu[1]).max(0.0);
        let hi = mu[0].min(nu[0]);
        let f = |t: f64| objective(l, &at(t)).unwrap();
        // f is quadratic in t: recover it from three samples
        let (f0, f1, f2) = (f(lo), f((lo + hi) / 2.0), f(hi));
        let h = (hi - lo) / 2.0;
        let mut cands = vec![lo, hi];
        if h > 0.0 {
            let a = (f0 - 2.0 * f1 + f2) / (2.0 * h * h);
            let b = (f2 - f0) / (2.0 * h);
            if a > 0.0 {
                let t = (lo + hi) / 2.0 - b / (2.0 * a);
                if t > lo && t < hi {
                    cands.push(t);
                }
            }
        }
        let best = cands
            .into_iter()
            .map(|t| (f(t), at(t)))
            .collect::<Vec<_>>();
        lexicographic_min(best).1
    } else {
        return Err(Error::Invalid(format!(
            "the scalar oracle handles 2x2, 1xn and mx1 instances, not {m}x{n}"
        )));
    };
    let value = objective(l, &pi)?;
    Ok(OracleResult {
        coupling: to_coupling(&pi, mu, nu)?,
        value,
        starts: 1,
        method: OracleMethod::ExactScalar,
    })
}

/// The strongest available upper bound: exact for 2x2 and degenerate shapes,
/// multistart combined with vertex enumeration up to 4x4, multistart beyond.
pub fn best_upper_bound(
    l: &CostTensor,
    mu: &[f64],
    nu: &[f64],
    starts: usize,
    seed: u64,
) -> Result<OracleResult> {
    let (m, n) = (mu.len(), nu.len());
    if (m == 2 && n == 2) || m == 1 || n == 1 {
        return exact_scalar(l, mu, nu);
    }
    let ms = multistart(l, mu, nu, starts, seed)?;
    if m <= 4 && n <= 4 {
        vertex_enumeration(l, mu, nu, Some(&ms))
    } else {
        Ok(ms)
    }
}
