//! Coupling extraction and the eigenvalue/error-ratio optimality test.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::relax::{moment_matrix, project_p, ConicProblem, HierarchyKind, MomentVector, SparseRow};
use crate::sdpsolve::{solve_with, SolveOptions, SolveResult, SolveStatus};
use crate::spaces::CostTensor;

/// Marginal violation below which extraction leaves the matrix alone.
pub const REPAIR_THRESHOLD: f64 = 1e-8;
/// Marginal violation after one rebalancing pass above which extraction fails.
pub const EXTRACTION_LIMIT: f64 = 1e-4;
/// Marginal accuracy every returned coupling satisfies.
pub const COUPLING_TOL: f64 = 1e-6;
pub const ERROR_RATIO_THRESHOLD: f64 = 1.0001;
pub const EIGENVALUE_RATIO_THRESHOLD: f64 = 1e-4;
/// Lower bounds at or below this, or upper bounds at or below
/// [`ZERO_UPPER_BOUND`], mark an exact-zero instance.
pub const ZERO_LOWER_BOUND: f64 = 1e-12;
pub const ZERO_UPPER_BOUND: f64 = 1e-9;

/// A transport plan between two weighted point sets.
#[derive(Clone, Debug, PartialEq)]
pub struct Coupling {
    matrix: DMatrix<f64>,
}

impl Coupling {
    /// Wraps `matrix` after checking it is nonnegative with the given
    /// marginals to within `tol`.
    pub fn new(matrix: DMatrix<f64>, mu: &[f64], nu: &[f64], tol: f64) -> Result<Self> {
        if matrix.nrows() != mu.len() || matrix.ncols() != nu.len() {
            return Err(Error::Dimension(format!(
                "{}x{} coupling for marginals of length {}/{}",
                matrix.nrows(),
                matrix.ncols(),
                mu.len(),
                nu.len()
            )));
        }
        if let Some(v) = matrix.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
            return Err(Error::Feasibility(format!("coupling entry {v} is not a nonnegative number")));
        }
        let c = Self { matrix };
        let viol = c.marginal_violation(mu, nu);
        if viol > tol {
            return Err(Error::Feasibility(format!(
                "coupling marginals off by {viol:.3e} (> {tol:.0e})"
            )));
        }
        Ok(c)
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.matrix
    }

    /// Row-major entries, `pi_ij` at `i * n + j`.
    pub fn to_vec(&self) -> Vec<f64> {
        let (m, n) = self.matrix.shape();
        (0..m * n).map(|a| self.matrix[(a / n, a % n)]).collect()
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.matrix
            .row_iter()
            .map(|r| r.iter().copied().collect())
            .collect()
    }

    pub fn marginal_violation(&self, mu: &[f64], nu: &[f64]) -> f64 {
        marginal_violation(&self.matrix, mu, nu)
    }

    /// `sum L[ij,kl] pi_ij pi_kl`.
    pub fn objective(&self, l: &CostTensor) -> f64 {
        gw_value(l, &self.to_vec())
    }
}

/// `sum L[ij,kl] pi_ij pi_kl` over a row-major coupling vector.
pub fn gw_value(l: &CostTensor, pi: &[f64]) -> f64 {
    let nv = pi.len();
    let mut total = 0.0;
    for a in 0..nv {
        if pi[a] == 0.0 {
            continue;
        }
        let row: f64 = (0..nv).map(|b| l.at(a, b) * pi[b]).sum();
        total += pi[a] * row;
    }
    total
}

fn marginal_violation(p: &DMatrix<f64>, mu: &[f64], nu: &[f64]) -> f64 {
    let rows = p
        .row_iter()
        .zip(mu)
        .map(|(r, m)| (r.sum() - m).abs())
        .fold(0.0, f64::max);
    let cols = p
        .column_iter()
        .zip(nu)
        .map(|(c, n)| (c.sum() - n).abs())
        .fold(0.0, f64::max);
    rows.max(cols)
}

fn scale_rows(p: &mut DMatrix<f64>, mu: &[f64], nu: &[f64]) {
    for (i, &target) in mu.iter().enumerate() {
        let s = p.row(i).sum();
        if s > 0.0 {
            p.row_mut(i).scale_mut(target / s);
        } else {
            for (j, &w) in nu.iter().enumerate() {
                p[(i, j)] = target * w;
            }
        }
    }
}

fn scale_cols(p: &mut DMatrix<f64>, mu: &[f64], nu: &[f64]) {
    for (j, &target) in nu.iter().enumerate() {
        let s = p.column(j).sum();
        if s > 0.0 {
            p.column_mut(j).scale_mut(target / s);
        } else {
            for (i, &w) in mu.iter().enumerate() {
                p[(i, j)] = target * w;
            }
        }
    }
}

/// First-order moments `z_ij` of the coupling variables in `result`.
pub fn first_moments(result: &SolveResult) -> Result<Vec<f64>> {
    let z = moments_of_pi(result)?;
    let nv = result.shape.num_vars();
    Ok(z.values()[1..=nv].to_vec())
}

fn moments_of_pi(result: &SolveResult) -> Result<MomentVector> {
    match result.kind {
        HierarchyKind::Putinar => project_p(&result.moments),
        _ => Ok(result.moments.clone()),
    }
}

/// Reads `z*_ij` off the solution, clamps negatives and, when the marginals
/// are off by more than [`REPAIR_THRESHOLD`], rebalances by alternating
/// row/column scaling.
pub fn extract_coupling(result: &SolveResult, mu: &[f64], nu: &[f64]) -> Result<Coupling> {
    let (m, n) = (result.shape.m, result.shape.n);
    if mu.len() != m || nu.len() != n {
        return Err(Error::Dimension(format!(
            "marginals of length {}/{} for an {m}x{n} solution",
            mu.len(),
            nu.len()
        )));
    }
    let z = first_moments(result)?;
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::Extraction {
            violation: f64::INFINITY,
            limit: EXTRACTION_LIMIT,
        });
    }
    let mut p = DMatrix::from_fn(m, n, |i, j| z[i * n + j].max(0.0));
    if marginal_violation(&p, mu, nu) > REPAIR_THRESHOLD {
        scale_rows(&mut p, mu, nu);
        scale_cols(&mut p, mu, nu);
        let violation = marginal_violation(&p, mu, nu);
        if violation > EXTRACTION_LIMIT {
            return Err(Error::Extraction {
                violation,
                limit: EXTRACTION_LIMIT,
            });
        }
        for _ in 0..10_000 {
            if marginal_violation(&p, mu, nu) <= 1e-12 {
                break;
            }
            scale_rows(&mut p, mu, nu);
            scale_cols(&mut p, mu, nu);
        }
    }
    Coupling::new(p, mu, nu, COUPLING_TOL)
}

/// `lambda_2 / lambda_1` of `M_1(z*)`, eigenvalues in descending order;
/// 0 when `lambda_1 <= 1e-14`.
pub fn eigenvalue_ratio(result: &SolveResult) -> Result<f64> {
    let z = moments_of_pi(result)?;
    let m1 = moment_matrix(&z, &[], 1)?;
    Ok(eigenvalue_ratio_of(&m1))
}

pub fn eigenvalue_ratio_of(m: &DMatrix<f64>) -> f64 {
    let mut ev: Vec<f64> = m.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    let l1 = ev.first().copied().unwrap_or(0.0);
    if l1 <= 1e-14 {
        return 0.0;
    }
    ev.get(1).copied().unwrap_or(0.0).max(0.0) / l1
}

/// Objective of `coupling` over the lower bound, `None` when the lower bound
/// is at most [`ZERO_LOWER_BOUND`].
pub fn error_ratio(lower_bound: f64, l: &CostTensor, coupling: &Coupling) -> Option<f64> {
    (lower_bound > ZERO_LOWER_BOUND).then(|| coupling.objective(l) / lower_bound)
}

#[derive(Clone, Debug, Serialize)]
pub struct Certificate {
    pub lower_bound: f64,
    pub upper_bound: f64,
    pub eigenvalue_ratio: f64,
    /// Absent on exact-zero instances.
    pub error_ratio: Option<f64>,
    pub exact_zero: bool,
    pub solved: bool,
}

impl Certificate {
    pub fn new(lower_bound: f64, upper_bound: f64, eigenvalue_ratio: f64) -> Self {
        Self::with_thresholds(
            lower_bound,
            upper_bound,
            eigenvalue_ratio,
            ERROR_RATIO_THRESHOLD,
            EIGENVALUE_RATIO_THRESHOLD,
        )
    }

    pub fn with_thresholds(
        lower_bound: f64,
        upper_bound: f64,
        eigenvalue_ratio: f64,
        max_error_ratio: f64,
        max_eigenvalue_ratio: f64,
    ) -> Self {
        let exact_zero = lower_bound <= ZERO_LOWER_BOUND || upper_bound <= ZERO_UPPER_BOUND;
        let error_ratio = (!exact_zero).then(|| upper_bound / lower_bound);
        let solved = match error_ratio {
            Some(e) => e <= max_error_ratio && eigenvalue_ratio < max_eigenvalue_ratio,
            None => upper_bound <= ZERO_UPPER_BOUND,
        };
        Self {
            lower_bound,
            upper_bound,
            eigenvalue_ratio,
            error_ratio,
            exact_zero,
            solved,
        }
    }
}

/// Extracts a coupling from `result` and certifies it against the bound.
pub fn certify(
    result: &SolveResult,
    l: &CostTensor,
    mu: &[f64],
    nu: &[f64],
) -> Result<(Coupling, Certificate)> {
    let coupling = extract_coupling(result, mu, nu)?;
    let eig = eigenvalue_ratio(result)?;
    let upper = coupling.objective(l);
    Ok((coupling, Certificate::new(result.objective, upper, eig)))
}

/// Re-solves `problem` with its objective pinned slightly above the bound
/// found in `result` and a seeded random linear objective on the first
/// moments. When the relaxation has several optimal solutions this moves
/// the iterate to a low-rank point of the optimal face, from which a
/// coupling can be read off.
pub fn refine_on_optimal_face(
    problem: &ConicProblem,
    result: &SolveResult,
    opts: &SolveOptions,
) -> Result<SolveResult> {
    let mut p = problem.clone();
    let lb = result.objective.max(0.0);
    let level = lb + opts.tol * (lb + 0.1 * problem.cost_scale.max(1.0));
    p.equalities.push(SparseRow {
        terms: problem.objective.clone(),
        rhs: level,
    });
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x5eed_f00d);
    let first: Vec<usize> = match problem.kind {
        HierarchyKind::Putinar => (0..problem.shape.num_vars())
            .map(|v| p.basis.position_of_factors(&[v, v]))
            .collect::<Result<_>>()?,
        _ => (1..=problem.shape.num_vars()).collect(),
    };
    p.objective = first.into_iter().map(|c| (c, rng.gen_range(0.0..1.0))).collect();
    p.cost_scale = 1.0;
    let capped = SolveOptions {
        max_iter: opts.max_iter.min(20_000),
        ..opts.clone()
    };
    let mut refined = solve_with(&p, &capped)?;
    refined.objective = result.objective;
    refined.dual_objective = result.dual_objective;
    Ok(refined)
}

/// Outcome of [`certify_problem`].
#[derive(Clone, Debug)]
pub struct Certified {
    pub coupling: Coupling,
    pub certificate: Certificate,
    /// Whether the coupling came from [`refine_on_optimal_face`].
    pub refined: bool,
    /// The tighter re-solve the certificate is based on, when one was needed.
    pub polished: Option<SolveResult>,
}

/// Tolerance of the re-solve done when a bound is zero up to solver accuracy.
pub const POLISH_TOL: f64 = 1e-10;

/// Certifies `result`. If that fails on a converged solve, retries on a
/// refined point of the optimal face. A bound that is zero up to the solver
/// tolerance is first re-solved at [`POLISH_TOL`], since the exact-zero test
/// needs a bound far below the default accuracy.
pub fn certify_problem(
    problem: &ConicProblem,
    result: &SolveResult,
    l: &CostTensor,
    mu: &[f64],
    nu: &[f64],
    opts: &SolveOptions,
) -> Result<Certified> {
    if let Ok((coupling, certificate)) = certify(result, l, mu, nu) {
        if certificate.solved {
            return Ok(Certified {
                coupling,
                certificate,
                refined: false,
                polished: None,
            });
        }
    }
    let near_zero = result.objective.abs() <= opts.tol * problem.cost_scale.max(1.0);
    if result.status == SolveStatus::Optimal && near_zero && opts.tol > POLISH_TOL {
        let tight = SolveOptions {
            tol: POLISH_TOL,
            ..opts.clone()
        };
        if let Ok(polished) = solve_with(problem, &tight) {
            if polished.status == SolveStatus::Optimal {
                if let Ok(mut c) = certify_face(problem, &polished, l, mu, nu, &tight) {
                    if c.certificate.solved {
                        c.polished = Some(polished);
                        return Ok(c);
                    }
                }
            }
        }
    }
    certify_face(problem, result, l, mu, nu, opts)
}

fn certify_face(
    problem: &ConicProblem,
    result: &SolveResult,
    l: &CostTensor,
    mu: &[f64],
    nu: &[f64],
    opts: &SolveOptions,
) -> Result<Certified> {
    let first = certify(result, l, mu, nu);
    if let Ok((coupling, certificate)) = &first {
        if certificate.solved {
            return Ok(Certified {
                coupling: coupling.clone(),
                certificate: certificate.clone(),
                refined: false,
                polished: None,
            });
        }
    }
    if result.status != SolveStatus::Optimal {
        let (coupling, certificate) = first?;
        return Ok(Certified {
            coupling,
            certificate,
            refined: false,
            polished: None,
        });
    }
    let second = refine_on_optimal_face(problem, result, opts)
        .ok()
        .filter(|r| r.status == SolveStatus::Optimal)
        .and_then(|r| certify(&r, l, mu, nu).ok());
    match (first, second) {
        (_, Some((c, cert))) if cert.solved => Ok(Certified {
            coupling: c,
            certificate: cert,
            refined: true,
            polished: None,
        }),
        (Ok((c, cert)), Some((c2, cert2))) => {
            if cert2.upper_bound < cert.upper_bound {
                Ok(Certified {
                    coupling: c2,
                    certificate: cert2,
                    refined: true,
                    polished: None,
                })
            } else {
                Ok(Certified {
                    coupling: c,
                    certificate: cert,
                    refined: false,
                    polished: None,
                })
            }
        }
        (Ok((c, cert)), None) => Ok(Certified {
            coupling: c,
            certificate: cert,
            refined: false,
            polished: None,
        }),
        (Err(_), Some((c, cert))) => Ok(Certified {
            coupling: c,
            certificate: cert,
            refined: true,
            polished: None,
        }),
        (Err(e), None) => Err(e),
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SandwichReport {
    pub lower_bound: f64,
    pub oracle_value: f64,
    pub gap: f64,
    pub globally_optimal: bool,
}

/// Checks `lower <= oracle` up to `1e-5 (1 + |oracle|)` and flags global
/// optimality when the two agree to `1e-4 (1 + |oracle|)`.
pub fn sandwich(result: &SolveResult, oracle_value: f64) -> Result<SandwichReport> {
    sandwich_values(result.objective, oracle_value)
}

pub fn sandwich_values(lower: f64, oracle_value: f64) -> Result<SandwichReport> {
    let scale = 1.0 + oracle_value.abs();
    if !lower.is_finite() || !oracle_value.is_finite() {
        return Err(Error::Invalid("sandwich needs finite bounds".into()));
    }
    if lower - 1e-5 * scale > oracle_value {
        return Err(Error::Sandwich {
            lower,
            upper: oracle_value,
            tol: 1e-5 * scale,
        });
    }
    let gap = oracle_value - lower;
    Ok(SandwichReport {
        lower_bound: lower,
        oracle_value,
        gap,
        globally_optimal: gap <= 1e-4 * scale,
    })
}
