//! ADMM splitting solver for [`ConicProblem`]s.
//!
//! The iterate `z` carries every moment coordinate. Each PSD block and the
//! nonnegative coordinates get their own copy (`S_k`, `w`) with scaled duals
//! (`U_k`, `u`). The `z`-step is an equality-constrained least squares
//! problem whose Hessian is diagonal, since every block entry reads a single
//! coordinate; it is solved through a pivoted Cholesky factor of
//! `A (D + sigma)^-1 A^T` computed once per solve.

mod linalg;

use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use linalg::{project_psd, PivotedCholesky, ReducedSolver};

use crate::error::{Error, Result};
use crate::relax::{ConicProblem, CouplingShape, HierarchyKind, MomentVector, PsdBlock};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Optimal,
    MaxIterations,
    Infeasible,
    NumericalFailure,
}

impl SolveStatus {
    pub fn name(self) -> &'static str {
        match self {
            SolveStatus::Optimal => "Optimal",
            SolveStatus::MaxIterations => "MaxIterations",
            SolveStatus::Infeasible => "Infeasible",
            SolveStatus::NumericalFailure => "NumericalFailure",
        }
    }
}

impl std::fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug)]
pub struct SolveOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
    /// Magnitude of the seeded perturbation of the starting point; 0 starts
    /// from the origin.
    pub init_noise: f64,
    pub rho: f64,
    pub sigma: f64,
    /// Over-relaxation factor in (0, 2).
    pub alpha: f64,
    pub adaptive_rho: bool,
    /// Iterations stop once every residual is below `stop_margin * tol`.
    pub stop_margin: f64,
    pub check_every: usize,
    /// Progress lines go to stderr every `log_every` iterations when set.
    pub log_every: Option<usize>,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iter: 200_000,
            seed: 0,
            init_noise: 0.0,
            rho: 1.0,
            sigma: 1e-6,
            alpha: 1.6,
            adaptive_rho: true,
            stop_margin: 0.1,
            check_every: 10,
            log_every: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SolveResult {
    pub moments: MomentVector,
    /// Primal objective in the original cost units; the lower bound.
    pub objective: f64,
    pub dual_objective: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub gap: f64,
    pub iterations: usize,
    pub status: SolveStatus,
    pub wall_time: f64,
    pub kind: HierarchyKind,
    pub level: usize,
    pub shape: CouplingShape,
}

impl SolveResult {
    pub fn converged(&self) -> bool {
        self.status == SolveStatus::Optimal
    }
}

/// Solves with default options apart from the given tolerance, iteration cap
/// and seed.
pub fn solve(problem: &ConicProblem, tol: f64, max_iter: usize, seed: u64) -> Result<SolveResult> {
    solve_with(
        problem,
        &SolveOptions {
            tol,
            max_iter,
            seed,
            ..SolveOptions::default()
        },
    )
}

struct Row {
    terms: Vec<(usize, f64)>,
    rhs: f64,
}

struct BlockState {
    s: DMatrix<f64>,
    u: DMatrix<f64>,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Adds `B^*(V)` to `acc`: the adjoint of the block map under the Frobenius
/// inner product.
fn adjoint_add(block: &PsdBlock, v: &DMatrix<f64>, scale: f64, acc: &mut [f64]) {
    for e in &block.entries {
        let w = if e.row == e.col { 1.0 } else { 2.0 };
        acc[e.coord] += scale * w * e.coef * v[(e.row, e.col)];
    }
}

#[derive(Clone, Copy)]
struct Residuals {
    primal: f64,
    dual: f64,
    gap: f64,
    pobj: f64,
    dobj: f64,
}

pub fn solve_with(problem: &ConicProblem, opts: &SolveOptions) -> Result<SolveResult> {
    if !(opts.tol > 0.0) {
        return Err(Error::Invalid(format!("tolerance must be positive, got {}", opts.tol)));
    }
    if !(opts.alpha > 0.0 && opts.alpha < 2.0) || !(opts.rho > 0.0) || !(opts.sigma > 0.0) {
        return Err(Error::Invalid("alpha must lie in (0, 2), rho and sigma positive".into()));
    }
    let start = Instant::now();
    let n = problem.num_coords();
    let obj_scale = problem.cost_scale.max(1.0);

    let mut c = vec![0.0; n];
    for &(coord, a) in &problem.objective {
        c[coord] += a / obj_scale;
    }
    let rows: Vec<Row> = problem
        .equalities
        .iter()
        .filter_map(|r| {
            let nr = r.norm();
            (nr > 0.0).then(|| Row {
                terms: r.terms.iter().map(|&(c, a)| (c, a / nr)).collect(),
                rhs: r.rhs / nr,
            })
        })
        .collect();
    let b: Vec<f64> = rows.iter().map(|r| r.rhs).collect();
    let b_norm = norm(&b);
    let c_norm = norm(&c);

    let mut dd = vec![opts.sigma; n];
    for block in &problem.blocks {
        for e in &block.entries {
            let w = if e.row == e.col { 1.0 } else { 2.0 };
            dd[e.coord] += w * e.coef * e.coef;
        }
    }
    for &coord in &problem.nonneg {
        dd[coord] += 1.0;
    }

    // K0 = A (D + sigma)^-1 A^T
    let mut by_coord: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for (i, r) in rows.iter().enumerate() {
        for &(coord, a) in &r.terms {
            by_coord[coord].push((i, a));
        }
    }
    let k = rows.len();
    let mut k0 = DMatrix::zeros(k, k);
    for (coord, list) in by_coord.iter().enumerate() {
        for &(i, a) in list {
            for &(j, bj) in list {
                k0[(i, j)] += a * bj / dd[coord];
            }
        }
    }
    let pivots = PivotedCholesky::factor(&k0, 1e-11);
    let chol = ReducedSolver::new(&k0, &pivots);
    drop(k0);
    if !chol.is_ok() {
        return Err(Error::Solver("equality system could not be factored".into()));
    }

    let a_mul = |z: &[f64]| -> Vec<f64> {
        rows.iter()
            .map(|r| r.terms.iter().map(|&(c, a)| a * z[c]).sum())
            .collect()
    };
    let at_mul = |y: &[f64], out: &mut [f64]| {
        for (r, &yi) in rows.iter().zip(y) {
            if yi != 0.0 {
                for &(c, a) in &r.terms {
                    out[c] += a * yi;
                }
            }
        }
    };

    // Dropped rows are combinations of kept ones; an inconsistent right-hand
    // side makes the affine constraints infeasible outright.
    let dropped = pivots.dropped();
    if !dropped.is_empty() {
        let mu = chol.solve(&b);
        let mut z = vec![0.0; n];
        at_mul(&mu, &mut z);
        for (zi, d) in z.iter_mut().zip(&dd) {
            *zi /= d;
        }
        let az = a_mul(&z);
        let worst = dropped
            .iter()
            .map(|&i| (az[i] - b[i]).abs())
            .fold(0.0, f64::max);
        if worst > 1e-7 * (1.0 + b_norm) {
            let z = vec![f64::NAN; n];
            return Ok(SolveResult {
                moments: MomentVector::new(problem.basis.clone(), z)?,
                objective: f64::NAN,
                dual_objective: f64::NAN,
                primal_residual: worst,
                dual_residual: f64::NAN,
                gap: f64::NAN,
                iterations: 0,
                status: SolveStatus::Infeasible,
                wall_time: start.elapsed().as_secs_f64(),
                kind: problem.kind,
                level: problem.level,
                shape: problem.shape,
            });
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut z: Vec<f64> = (0..n)
        .map(|_| {
            if opts.init_noise > 0.0 {
                opts.init_noise * rng.gen_range(-1.0..1.0)
            } else {
                0.0
            }
        })
        .collect();
    let mut states: Vec<BlockState> = problem
        .blocks
        .iter()
        .map(|bk| {
            let s = bk.eval(&z);
            let u = DMatrix::zeros(bk.dim, bk.dim);
            BlockState { s, u }
        })
        .collect();
    let nn = problem.nonneg.len();
    let mut w: Vec<f64> = problem.nonneg.iter().map(|&c| z[c].max(0.0)).collect();
    let mut u = vec![0.0; nn];
    let mut lambda = vec![0.0; k];
    let mut rho = opts.rho;
    let alpha = opts.alpha;
    let parallel = problem.blocks.len() > 1 || problem.blocks.iter().any(|b| b.dim >= 64);

    let mut best: Option<(f64, Vec<f64>, Residuals)> = None;
    let mut last: Option<Residuals> = None;
    let mut status = SolveStatus::MaxIterations;
    let mut iterations = 0;
    let mut dual_growth_ref: Option<f64> = None;

    for it in 1..=opts.max_iter {
        iterations = it;
        let z_prev = z.clone();

        // z-step
        let mut g: Vec<f64> = z_prev
            .iter()
            .zip(&c)
            .map(|(zp, ci)| opts.sigma * zp - ci / rho)
            .collect();
        for (block, st) in problem.blocks.iter().zip(&states) {
            let v = &st.s - &st.u;
            adjoint_add(block, &v, 1.0, &mut g);
        }
        for (t, &coord) in problem.nonneg.iter().enumerate() {
            g[coord] += w[t] - u[t];
        }
        let gd: Vec<f64> = g.iter().zip(&dd).map(|(a, d)| a / d).collect();
        let mut rhs = a_mul(&gd);
        for (ri, bi) in rhs.iter_mut().zip(&b) {
            *ri -= bi;
        }
        let mu = chol.solve(&rhs);
        let mut atmu = vec![0.0; n];
        at_mul(&mu, &mut atmu);
        for i in 0..n {
            z[i] = (g[i] - atmu[i]) / dd[i];
        }
        for (l, m) in lambda.iter_mut().zip(&mu) {
            *l = rho * m;
        }

        // cone steps
        let step = |(block, st): (&PsdBlock, &mut BlockState)| {
            let bz = block.eval(&z);
            let relaxed = &bz * alpha + &st.s * (1.0 - alpha);
            let target = &relaxed + &st.u;
            st.s = project_psd(target);
            st.u += &relaxed - &st.s;
        };
        if parallel {
            problem.blocks.par_iter().zip(states.par_iter_mut()).for_each(step);
        } else {
            problem.blocks.iter().zip(states.iter_mut()).for_each(step);
        }
        for (t, &coord) in problem.nonneg.iter().enumerate() {
            let relaxed = alpha * z[coord] + (1.0 - alpha) * w[t];
            w[t] = (relaxed + u[t]).max(0.0);
            u[t] += relaxed - w[t];
        }

        if it % opts.check_every != 0 && it != opts.max_iter {
            continue;
        }
        if z.iter().any(|x| !x.is_finite()) {
            status = SolveStatus::NumericalFailure;
            break;
        }

        // residuals
        let az = a_mul(&z);
        let mut prim_sq: f64 = az.iter().zip(&b).map(|(a, bi)| (a - bi).powi(2)).sum();
        let mut gz_sq = 0.0;
        let mut s_sq = 0.0;
        for (block, st) in problem.blocks.iter().zip(&states) {
            let bz = block.eval(&z);
            prim_sq += (&bz - &st.s).norm_squared();
            gz_sq += bz.norm_squared();
            s_sq += st.s.norm_squared();
        }
        for (t, &coord) in problem.nonneg.iter().enumerate() {
            prim_sq += (z[coord] - w[t]).powi(2);
            gz_sq += z[coord] * z[coord];
            s_sq += w[t] * w[t];
        }
        let primal = prim_sq.sqrt() / (1.0 + b_norm.max(gz_sq.sqrt()).max(s_sq.sqrt()));

        let mut cone_dual = vec![0.0; n];
        for (block, st) in problem.blocks.iter().zip(&states) {
            adjoint_add(block, &st.u, rho, &mut cone_dual);
        }
        for (t, &coord) in problem.nonneg.iter().enumerate() {
            cone_dual[coord] += rho * u[t];
        }
        let mut at_l = vec![0.0; n];
        at_mul(&lambda, &mut at_l);
        let stat: Vec<f64> = (0..n).map(|i| c[i] + at_l[i] + cone_dual[i]).collect();
        let dual = norm(&stat) / (1.0 + c_norm.max(norm(&at_l)).max(norm(&cone_dual)));

        let pobj: f64 = c.iter().zip(&z).map(|(a, x)| a * x).sum();
        let dobj: f64 = -b.iter().zip(&lambda).map(|(a, l)| a * l).sum::<f64>();
        let gap = (pobj - dobj).abs() / (1.0 + pobj.abs() + dobj.abs());
        let res = Residuals {
            primal,
            dual,
            gap,
            pobj,
            dobj,
        };
        if let Some(every) = opts.log_every {
            if it % every.max(1) == 0 {
                eprintln!(
                    "iter {it:>7}  primal {primal:.3e}  dual {dual:.3e}  gap {gap:.3e}  obj {:.8e}  rho {rho:.2e}",
                    pobj * obj_scale
                );
            }
        }
        let score = primal.max(dual).max(gap);
        if !score.is_finite() {
            status = SolveStatus::NumericalFailure;
            break;
        }
        if best.as_ref().is_none_or(|(s, _, _)| score < *s) {
            best = Some((score, z.clone(), res));
        }
        if score <= opts.tol * opts.stop_margin.clamp(1e-6, 1.0) {
            last = Some(res);
            status = SolveStatus::Optimal;
            break;
        }

        // divergence of the scaled duals signals an infeasible conic part
        let dual_size = states.iter().map(|s| s.u.norm() * rho).sum::<f64>() + norm(&u) * rho;
        if it >= 1000 {
            match dual_growth_ref {
                None => dual_growth_ref = Some(dual_size.max(1.0)),
                Some(r0) if dual_size > 1e8 * r0 && primal > 1e-3 => {
                    last = Some(res);
                    status = SolveStatus::Infeasible;
                    break;
                }
                _ => {}
            }
        }

        if opts.adaptive_rho && it % (5 * opts.check_every) == 0 {
            let ratio = (primal / dual.max(1e-300)).sqrt();
            if !(0.2..=5.0).contains(&ratio) {
                let new_rho = (rho * ratio).clamp(1e-6, 1e6);
                let f = rho / new_rho;
                for st in &mut states {
                    st.u *= f;
                }
                for x in &mut u {
                    *x *= f;
                }
                rho = new_rho;
            }
        }
        last = Some(res);
    }

    let (z_out, res) = match status {
        SolveStatus::Optimal | SolveStatus::Infeasible => (z, last.unwrap()),
        _ => match best {
            Some((_, bz, r)) => (bz, r),
            None => {
                let r = last.unwrap_or(Residuals {
                    primal: f64::NAN,
                    dual: f64::NAN,
                    gap: f64::NAN,
                    pobj: f64::NAN,
                    dobj: f64::NAN,
                });
                (z, r)
            }
        },
    };
    Ok(SolveResult {
        moments: MomentVector::new(problem.basis.clone(), z_out)?,
        objective: res.pobj * obj_scale,
        dual_objective: res.dobj * obj_scale,
        primal_residual: res.primal,
        dual_residual: res.dual,
        gap: res.gap,
        iterations,
        status,
        wall_time: start.elapsed().as_secs_f64(),
        kind: problem.kind,
        level: problem.level,
        shape: problem.shape,
    })
}
