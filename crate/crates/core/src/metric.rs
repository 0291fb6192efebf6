//! The distortion distance between metric measure spaces, the gluing of
//! two moment sequences through a shared middle space, and a triangle
//! inequality harness.

use serde::Serialize;

use crate::certify::{certify_problem, Certificate};
use crate::error::{Error, Result};
use crate::moment_index::{MonomialBasis, DEFAULT_MAX_BASIS};
use crate::relax::{
    build, build_schmudgen_with, marginal_residual, moment_matrix, shared_basis, HierarchyKind,
    Limits, MomentVector,
};
use crate::sdpsolve::{solve_with, SolveOptions, SolveStatus};
use crate::spaces::{build_cost_tensor, CostTensor, MetricMeasureSpace};

/// Feasibility tolerances used when auditing glued moment sequences.
pub const GLUE_INPUT_TOL: f64 = 1e-6;
pub const AUDIT_EQUALITY_TOL: f64 = 1e-10;
pub const AUDIT_EIGENVALUE_TOL: f64 = -1e-8;
/// Floor for the cost-scaled solver tolerance used by the distance.
pub const MIN_DISTANCE_TOL: f64 = 1e-13;

#[derive(Clone, Debug)]
pub struct DistanceOptions {
    /// Exponent on the distances inside the cost; 1 in the standard
    /// definition.
    pub q: f64,
    /// `tol` is divided by `max(1, K)` before solving, down to
    /// [`MIN_DISTANCE_TOL`].
    pub solver: SolveOptions,
    pub limits: Limits,
    /// Extract a coupling and certify it.
    pub certify: bool,
}

impl Default for DistanceOptions {
    fn default() -> Self {
        Self {
            q: 1.0,
            solver: SolveOptions {
                tol: 1e-10,
                ..SolveOptions::default()
            },
            limits: Limits::default(),
            certify: true,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct DistanceReport {
    /// `max(0, bound)^(1/p)`.
    pub value: f64,
    pub lower_bound: f64,
    pub level: usize,
    pub p: f64,
    pub q: f64,
    pub kind: HierarchyKind,
    pub status: SolveStatus,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub gap: f64,
    pub iterations: usize,
    pub certificate: Option<Certificate>,
}

/// `Delta_{p,r}(X, Y)`: the `p`-th root of the level-`r` relaxation bound of
/// the cost `|d_X^q - d_Y^q|^p`.
pub fn distortion_distance(
    x: &MetricMeasureSpace,
    y: &MetricMeasureSpace,
    p: f64,
    r: usize,
    kind: HierarchyKind,
    opts: &DistanceOptions,
) -> Result<DistanceReport> {
    let l = build_cost_tensor(x, y, p, opts.q)?;
    let problem = build(kind, &l, x.weights(), y.weights(), r, &opts.limits)?;
    let solver = SolveOptions {
        tol: (opts.solver.tol / l.max_abs().max(1.0)).max(MIN_DISTANCE_TOL),
        ..opts.solver.clone()
    };
    let res = solve_with(&problem, &solver)?;
    if matches!(res.status, SolveStatus::Infeasible | SolveStatus::NumericalFailure) {
        return Err(Error::Solver(format!(
            "relaxation solve ended with status {}",
            res.status
        )));
    }
    let certificate = if opts.certify {
        certify_problem(&problem, &res, &l, x.weights(), y.weights(), &solver)
            .ok()
            .map(|c| c.certificate)
    } else {
        None
    };
    Ok(DistanceReport {
        value: res.objective.max(0.0).powf(1.0 / p),
        lower_bound: res.objective,
        level: r,
        p,
        q: opts.q,
        kind,
        status: res.status,
        primal_residual: res.primal_residual,
        dual_residual: res.dual_residual,
        gap: res.gap,
        iterations: res.iterations,
        certificate,
    })
}

/// Sizes of the three spaces behind a glued moment sequence. Variable
/// `(i, j, k)` is number `i * n * p + j * p + k`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GlueShape {
    pub m: usize,
    pub n: usize,
    pub p: usize,
}

impl GlueShape {
    #[inline]
    pub fn var(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.n + j) * self.p + k
    }

    #[inline]
    pub fn split(&self, v: usize) -> (usize, usize, usize) {
        (v / (self.n * self.p), (v / self.p) % self.n, v % self.p)
    }
}

fn first_order_marginals(z: &MomentVector, rows: usize, cols: usize) -> (Vec<f64>, Vec<f64>) {
    let v = &z.values()[1..=rows * cols];
    let a = (0..rows).map(|i| v[i * cols..(i + 1) * cols].iter().sum()).collect();
    let b = (0..cols).map(|j| (0..rows).map(|i| v[i * cols + j]).sum()).collect();
    (a, b)
}

fn check_input(z: &MomentVector, rows: usize, cols: usize, r: usize, what: &str) -> Result<(Vec<f64>, Vec<f64>)> {
    if z.basis().num_vars() != rows * cols || z.degree() < 2 * r {
        return Err(Error::Dimension(format!(
            "{what}: expected degree-{} moments over {} variables, got degree {} over {}",
            2 * r,
            rows * cols,
            z.degree(),
            z.basis().num_vars()
        )));
    }
    let (a, b) = first_order_marginals(z, rows, cols);
    let mut worst = (z.values()[0] - 1.0).abs();
    worst = worst.max(marginal_residual(z, &a, &b, r)?);
    let min_eig = moment_matrix(z, &[], r)?.symmetric_eigenvalues().min();
    if worst > GLUE_INPUT_TOL || min_eig < -GLUE_INPUT_TOL {
        return Err(Error::Feasibility(format!(
            "{what} is not a feasible moment sequence (marginal residual {worst:.3e}, min eigenvalue {min_eig:.3e})"
        )));
    }
    Ok((a, b))
}

/// Calls `f` with every tuple in `0..dim` of length `len`.
fn for_each_tuple(dim: usize, len: usize, mut f: impl FnMut(&[usize])) {
    let mut t = vec![0usize; len];
    loop {
        f(&t);
        let mut pos = len;
        loop {
            if pos == 0 {
                return;
            }
            pos -= 1;
            t[pos] += 1;
            if t[pos] < dim {
                break;
            }
            t[pos] = 0;
        }
    }
}

/// Glues `z1` over `(X, Y)` and `z2` over `(Y, Z)` into a sequence over the
/// triple products: `z_gamma = z1(prod pi1_{i_s j_s}) z2(prod pi2_{j_s k_s}) / prod beta_{j_s}`.
pub fn glue(z1: &MomentVector, z2: &MomentVector, beta: &[f64], r: usize) -> Result<(MomentVector, GlueShape)> {
    let n = beta.len();
    if n == 0 || !z1.basis().num_vars().is_multiple_of(n) || !z2.basis().num_vars().is_multiple_of(n) {
        return Err(Error::Dimension("variable counts do not factor through beta".into()));
    }
    if beta.iter().any(|b| !(*b > 0.0)) {
        return Err(Error::Invalid("middle weights must be positive".into()));
    }
    let shape = GlueShape {
        m: z1.basis().num_vars() / n,
        n,
        p: z2.basis().num_vars() / n,
    };
    let (_, b1) = check_input(z1, shape.m, n, r, "first sequence")?;
    let (b2, _) = check_input(z2, n, shape.p, r, "second sequence")?;
    for j in 0..n {
        if (b1[j] - beta[j]).abs() > GLUE_INPUT_TOL || (b2[j] - beta[j]).abs() > GLUE_INPUT_TOL {
            return Err(Error::Feasibility(format!(
                "shared marginal does not match beta at {j}"
            )));
        }
    }
    let nv = shape.m * n * shape.p;
    let basis = shared_basis(nv, 2 * r, DEFAULT_MAX_BASIS)?;
    let mut values = Vec::with_capacity(basis.len());
    for gamma in basis.entries() {
        let mut f1 = Vec::new();
        let mut f2 = Vec::new();
        let mut denom = 1.0;
        for v in gamma.factors() {
            let (i, j, k) = shape.split(v);
            f1.push(i * n + j);
            f2.push(j * shape.p + k);
            denom *= beta[j];
        }
        values.push(z1.riesz_factors(&f1)? * z2.riesz_factors(&f2)? / denom);
    }
    Ok((MomentVector::new(basis, values)?, shape))
}

/// Which index of the triple a contraction sums out.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Contract {
    /// Sum over `k`; the result is indexed by `(i, j)`.
    Last,
    /// Sum over `i`; the result is indexed by `(j, k)`.
    First,
    /// Sum over `j`; the result is indexed by `(k, i)`.
    Middle,
}

/// Sums a glued sequence over one index family.
pub fn contract(z: &MomentVector, shape: GlueShape, which: Contract) -> Result<MomentVector> {
    let GlueShape { m, n, p } = shape;
    if z.basis().num_vars() != m * n * p {
        return Err(Error::Dimension("glued sequence does not match its shape".into()));
    }
    let (rows, cols, dropped) = match which {
        Contract::Last => (m, n, p),
        Contract::First => (n, p, m),
        Contract::Middle => (p, m, n),
    };
    let basis: std::sync::Arc<MonomialBasis> = shared_basis(rows * cols, z.degree(), DEFAULT_MAX_BASIS)?;
    let mut values = Vec::with_capacity(basis.len());
    for gamma in basis.entries() {
        let pairs: Vec<(usize, usize)> = gamma.factors().iter().map(|&v| (v / cols, v % cols)).collect();
        let mut total = 0.0;
        let mut err = None;
        for_each_tuple(dropped, pairs.len(), |t| {
            let factors: Vec<usize> = pairs
                .iter()
                .zip(t)
                .map(|(&(a, b), &d)| match which {
                    Contract::Last => shape.var(a, b, d),
                    Contract::First => shape.var(d, a, b),
                    Contract::Middle => shape.var(b, d, a),
                })
                .collect();
            match z.riesz_factors(&factors) {
                Ok(v) => total += v,
                Err(e) => err = Some(e),
            }
        });
        if let Some(e) = err {
            return Err(e);
        }
        values.push(total);
    }
    MomentVector::new(basis, values)
}

/// Feasibility of a moment sequence for the level-`r` coupling set between
/// marginals `a` and `b`.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct Audit {
    pub max_equality_residual: f64,
    pub min_eigenvalue: f64,
    pub passed: bool,
}

pub fn audit_coupling_moments(z: &MomentVector, a: &[f64], b: &[f64], r: usize) -> Result<Audit> {
    let zero = CostTensor::from_entries(a.len(), b.len(), vec![0.0; (a.len() * b.len()).pow(2)])?;
    let problem = build_schmudgen_with(&zero, a, b, r, &Limits::default())?;
    let rep = problem.evaluate(z.values());
    let min_eigenvalue = rep.min_block_eigenvalue.min(rep.min_nonneg);
    Ok(Audit {
        max_equality_residual: rep.max_equality_residual,
        min_eigenvalue,
        passed: rep.max_equality_residual <= AUDIT_EQUALITY_TOL && min_eigenvalue >= AUDIT_EIGENVALUE_TOL,
    })
}

/// The `(Z, X)` marginal of a glued sequence, audited for feasibility.
pub fn third_marginal(z: &MomentVector, shape: GlueShape, r: usize) -> Result<(MomentVector, Audit)> {
    let z3 = contract(z, shape, Contract::Middle)?;
    let (g, a) = first_order_marginals(&z3, shape.p, shape.m);
    let audit = audit_coupling_moments(&z3, &g, &a, r)?;
    if !audit.passed {
        return Err(Error::Feasibility(format!(
            "third marginal infeasible: equality residual {:.3e}, min eigenvalue {:.3e}",
            audit.max_equality_residual, audit.min_eigenvalue
        )));
    }
    Ok((z3, audit))
}

#[derive(Clone, Debug, Serialize)]
pub struct TriangleReport {
    pub xy: DistanceReport,
    pub yz: DistanceReport,
    pub xz: DistanceReport,
    /// `d(X,Y) + d(Y,Z) - d(X,Z)`.
    pub slack: f64,
    pub tol: f64,
    pub pass: bool,
}

impl TriangleReport {
    pub fn summary(&self) -> String {
        format!(
            "d(X,Z) = {:.9e} vs d(X,Y) + d(Y,Z) = {:.9e} + {:.9e} (slack {:.3e}, tol {:.1e}); residuals xy {:.1e}/{:.1e}, yz {:.1e}/{:.1e}, xz {:.1e}/{:.1e}",
            self.xz.value,
            self.xy.value,
            self.yz.value,
            self.slack,
            self.tol,
            self.xy.primal_residual,
            self.xy.dual_residual,
            self.yz.primal_residual,
            self.yz.dual_residual,
            self.xz.primal_residual,
            self.xz.dual_residual
        )
    }
}

/// Computes the three pairwise distances (concurrently) and checks
/// `d(X,Z) <= d(X,Y) + d(Y,Z) + 1e-5 (1 + d(X,Y) + d(Y,Z))`.
pub fn triangle_check(
    x: &MetricMeasureSpace,
    y: &MetricMeasureSpace,
    z: &MetricMeasureSpace,
    p: f64,
    r: usize,
    kind: HierarchyKind,
    opts: &DistanceOptions,
) -> Result<TriangleReport> {
    let (xy, (yz, xz)) = rayon::join(
        || distortion_distance(x, y, p, r, kind, opts),
        || {
            rayon::join(
                || distortion_distance(y, z, p, r, kind, opts),
                || distortion_distance(x, z, p, r, kind, opts),
            )
        },
    );
    let (xy, yz, xz) = (xy?, yz?, xz?);
    let rhs = xy.value + yz.value;
    let tol = 1e-5 * (1.0 + rhs);
    Ok(TriangleReport {
        slack: rhs - xz.value,
        pass: xz.value <= rhs + tol,
        tol,
        xy,
        yz,
        xz,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn space(d: &[f64], k: usize) -> MetricMeasureSpace {
        MetricMeasureSpace::with_uniform_weights(DMatrix::from_row_slice(k, k, d)).unwrap()
    }

    fn random_coupling(a: &[f64], b: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
        let (m, n) = (a.len(), b.len());
        let mut p: Vec<f64> = (0..m * n).map(|_| rng.gen_range(0.05..1.0)).collect();
        for _ in 0..3000 {
            for i in 0..m {
                let s: f64 = p[i * n..(i + 1) * n].iter().sum();
                p[i * n..(i + 1) * n].iter_mut().for_each(|v| *v *= a[i] / s);
            }
            for j in 0..n {
                let s: f64 = (0..m).map(|i| p[i * n + j]).sum();
                (0..m).for_each(|i| p[i * n + j] *= b[j] / s);
            }
        }
        p
    }

    fn mixture(a: &[f64], b: &[f64], r: usize, rng: &mut ChaCha8Rng) -> MomentVector {
        let basis = shared_basis(a.len() * b.len(), 2 * r, DEFAULT_MAX_BASIS).unwrap();
        let atoms: Vec<(f64, Vec<f64>)> = (0..3).map(|_| (1.0 / 3.0, random_coupling(a, b, rng))).collect();
        let refs: Vec<(f64, &[f64])> = atoms.iter().map(|(w, x)| (*w, x.as_slice())).collect();
        MomentVector::from_atoms(basis, &refs).unwrap()
    }

    #[test]
    fn identical_spaces_have_zero_distance() {
        let x = space(&[0.0, 1.0, 2.0, 1.0, 0.0, 1.5, 2.0, 1.5, 0.0], 3);
        for p in [1.0, 2.0] {
            let d = distortion_distance(&x, &x, p, 1, HierarchyKind::FirstLevelDnn, &DistanceOptions::default()).unwrap();
            assert!(d.value <= 1e-5, "p={p}: {}", d.value);
        }
    }

    #[test]
    fn derived_distance_bound() {
        let x = space(&[0.0, 1.0, 1.0, 0.0], 2);
        let y = space(&[0.0, 2.0, 2.0, 0.0], 2);
        let d = distortion_distance(&x, &y, 2.0, 1, HierarchyKind::Schmudgen, &DistanceOptions::default()).unwrap();
        assert!(d.value <= 0.5f64.sqrt() + 1e-6);
        let back = distortion_distance(&y, &x, 2.0, 1, HierarchyKind::Schmudgen, &DistanceOptions::default()).unwrap();
        assert!((d.value - back.value).abs() <= 1e-6 * (1.0 + d.value));
    }

    #[test]
    fn glue_single_atoms() {
        let basis = shared_basis(1, 2, DEFAULT_MAX_BASIS).unwrap();
        let z = MomentVector::from_atoms(basis, &[(1.0, &[1.0])]).unwrap();
        let (g, shape) = glue(&z, &z, &[1.0], 1).unwrap();
        assert_eq!(shape, GlueShape { m: 1, n: 1, p: 1 });
        assert_eq!(g.values(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn glue_recovers_both_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (a, b, c) = (vec![0.4, 0.6], vec![0.3, 0.7], vec![0.55, 0.45]);
        for r in 1..=2 {
            let z1 = mixture(&a, &b, r, &mut rng);
            let z2 = mixture(&b, &c, r, &mut rng);
            let (z, shape) = glue(&z1, &z2, &b, r).unwrap();
            let back1 = contract(&z, shape, Contract::Last).unwrap();
            let back2 = contract(&z, shape, Contract::First).unwrap();
            for (u, v) in back1.values().iter().zip(z1.values()) {
                assert!((u - v).abs() < 1e-12);
            }
            for (u, v) in back2.values().iter().zip(z2.values()) {
                assert!((u - v).abs() < 1e-12);
            }
            let (_, audit) = third_marginal(&z, shape, r).unwrap();
            assert!(audit.passed);
        }
    }

    #[test]
    fn glue_of_rank_one_inputs_composes_couplings() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (a, b, c) = (vec![0.5, 0.5], vec![0.2, 0.8], vec![0.35, 0.65]);
        let p1 = random_coupling(&a, &b, &mut rng);
        let p2 = random_coupling(&b, &c, &mut rng);
        let z1 = MomentVector::from_atoms(shared_basis(4, 2, DEFAULT_MAX_BASIS).unwrap(), &[(1.0, &p1)]).unwrap();
        let z2 = MomentVector::from_atoms(shared_basis(4, 2, DEFAULT_MAX_BASIS).unwrap(), &[(1.0, &p2)]).unwrap();
        let (z, shape) = glue(&z1, &z2, &b, 1).unwrap();
        let rho: Vec<f64> = (0..8)
            .map(|v| {
                let (i, j, k) = shape.split(v);
                p1[i * 2 + j] * p2[j * 2 + k] / b[j]
            })
            .collect();
        let want = MomentVector::from_atoms(z.basis().clone(), &[(1.0, &rho)]).unwrap();
        for (u, v) in z.values().iter().zip(want.values()) {
            assert!((u - v).abs() < 1e-14);
        }
        let (z3, _) = third_marginal(&z, shape, 1).unwrap();
        let composed: Vec<f64> = (0..4)
            .map(|v| {
                let (k, i) = (v / 2, v % 2);
                (0..2).map(|j| rho[shape.var(i, j, k)]).sum()
            })
            .collect();
        let want3 = MomentVector::from_atoms(z3.basis().clone(), &[(1.0, &composed)]).unwrap();
        for (u, v) in z3.values().iter().zip(want3.values()) {
            assert!((u - v).abs() < 1e-14);
        }
    }

    #[test]
    fn glue_rejects_infeasible_inputs() {
        let basis = shared_basis(4, 2, DEFAULT_MAX_BASIS).unwrap();
        let bad = MomentVector::from_atoms(basis.clone(), &[(1.0, &[0.5, 0.2, 0.0, 0.3])]).unwrap();
        let mut off = bad.clone();
        off.values_mut()[5] += 0.1;
        assert!(glue(&off, &bad, &[0.5, 0.5], 1).is_err());
        assert!(glue(&bad, &bad, &[0.5, 0.0], 1).is_err());
    }

    #[test]
    fn triangle_trivial_cases() {
        let x = space(&[0.0, 1.0, 2.0, 1.0, 0.0, 1.5, 2.0, 1.5, 0.0], 3);
        let z = space(&[0.0, 2.0, 1.0, 2.0, 0.0, 2.5, 1.0, 2.5, 0.0], 3);
        let opts = DistanceOptions::default();
        let same = triangle_check(&x, &x, &x, 2.0, 1, HierarchyKind::FirstLevelDnn, &opts).unwrap();
        assert!(same.pass);
        let t = triangle_check(&x, &x, &z, 2.0, 1, HierarchyKind::FirstLevelDnn, &opts).unwrap();
        assert!(t.pass, "{}", t.summary());
        assert!(t.slack.abs() <= 1e-4);
    }
}
