//! Moment relaxations of the discrete Gromov-Wasserstein problem.
//!
//! Four families are assembled into a common [`ConicProblem`]:
//!
//! * [`HierarchyKind::Schmudgen`]: moment matrix `M_r(z)` plus one localizing
//!   block `M_{r-d_I}(e_I z)` per squarefree product `e_I` of coupling
//!   variables with `deg e_I <= 2r`.
//! * [`HierarchyKind::Putinar`]: moments of the square-root variables
//!   `pi_ij = t_ij^2`, a single moment matrix and the row/column sphere
//!   equalities.
//! * [`HierarchyKind::Combined`]: Schmüdgen variables with the single
//!   parity-patterned block `M~_r(z)`.
//! * [`HierarchyKind::FirstLevelDnn`]: `M_1(z) ⪰ 0` together with
//!   entrywise nonnegativity of all second moments.
//!
//! Coupling variable `pi_ij` is variable number `i * n + j` throughout.

mod maps;
mod moment;
pub mod sdpa;

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::moment_index::{
    binomial, enumerate_basis_with_limit, MonomialBasis, MultiIndex, DEFAULT_MAX_BASIS,
};
use crate::spaces::CostTensor;

pub use maps::{extend_q, project_p};
pub use moment::{marginal_residual, moment_matrix, reduced_moment_matrix, MARGINAL_PRECONDITION_TOL};

/// Returns a shared, cached basis over `num_vars` variables up to `degree`.
pub fn shared_basis(num_vars: usize, degree: usize, limit: usize) -> Result<Arc<MonomialBasis>> {
    static CACHE: OnceLock<Mutex<HashMap<(usize, usize), Arc<MonomialBasis>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(Default::default);
    if let Some(b) = cache.lock().unwrap().get(&(num_vars, degree)) {
        return Ok(b.clone());
    }
    let b = Arc::new(enumerate_basis_with_limit(num_vars, degree, limit)?);
    cache
        .lock()
        .unwrap()
        .insert((num_vars, degree), b.clone());
    Ok(b)
}

/// A truncated pseudo-moment sequence aligned with a monomial basis.
#[derive(Clone, Debug)]
pub struct MomentVector {
    basis: Arc<MonomialBasis>,
    values: Vec<f64>,
}

impl MomentVector {
    pub fn new(basis: Arc<MonomialBasis>, values: Vec<f64>) -> Result<Self> {
        if values.len() != basis.len() {
            return Err(Error::Dimension(format!(
                "{} moment values for a basis of {}",
                values.len(),
                basis.len()
            )));
        }
        Ok(Self { basis, values })
    }

    pub fn zeros(basis: Arc<MonomialBasis>) -> Self {
        let values = vec![0.0; basis.len()];
        Self { basis, values }
    }

    /// Moments `z_alpha = sum_k w_k x_k^alpha` of an atomic measure.
    pub fn from_atoms(basis: Arc<MonomialBasis>, atoms: &[(f64, &[f64])]) -> Result<Self> {
        for (_, x) in atoms {
            if x.len() != basis.num_vars() {
                return Err(Error::Dimension(format!(
                    "atom has {} coordinates, basis has {} variables",
                    x.len(),
                    basis.num_vars()
                )));
            }
        }
        let values = basis
            .entries()
            .iter()
            .map(|alpha| {
                atoms
                    .iter()
                    .map(|(w, x)| {
                        w * alpha
                            .support()
                            .map(|(v, e)| x[v].powi(e as i32))
                            .product::<f64>()
                    })
                    .sum()
            })
            .collect();
        Ok(Self { basis, values })
    }

    /// The Riesz functional on a single monomial.
    pub fn riesz(&self, alpha: &MultiIndex) -> Result<f64> {
        Ok(self.values[self.basis.position(alpha)?])
    }

    pub fn riesz_factors(&self, factors: &[usize]) -> Result<f64> {
        Ok(self.values[self.basis.position_of_factors(factors)?])
    }

    pub fn basis(&self) -> &Arc<MonomialBasis> {
        &self.basis
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn degree(&self) -> usize {
        self.basis.max_degree()
    }
}

/// Which relaxation a [`ConicProblem`] encodes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HierarchyKind {
    Schmudgen,
    Putinar,
    Combined,
    #[serde(rename = "first-level")]
    FirstLevelDnn,
}

impl HierarchyKind {
    pub fn name(self) -> &'static str {
        match self {
            HierarchyKind::Schmudgen => "schmudgen",
            HierarchyKind::Putinar => "putinar",
            HierarchyKind::Combined => "combined",
            HierarchyKind::FirstLevelDnn => "first-level",
        }
    }
}

impl fmt::Display for HierarchyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for HierarchyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "schmudgen" => Ok(HierarchyKind::Schmudgen),
            "putinar" => Ok(HierarchyKind::Putinar),
            "combined" => Ok(HierarchyKind::Combined),
            "first-level" | "dnn" => Ok(HierarchyKind::FirstLevelDnn),
            other => Err(Error::Invalid(format!("unknown hierarchy '{other}'"))),
        }
    }
}

/// One matrix entry `coef * z[coord]` at `(row, col)` with `row <= col`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BlockEntry {
    pub row: usize,
    pub col: usize,
    pub coord: usize,
    pub coef: f64,
}

/// A symmetric matrix block whose entries are linear in the moment vector.
/// Positions without an entry are identically zero.
#[derive(Clone, Debug)]
pub struct PsdBlock {
    pub dim: usize,
    pub entries: Vec<BlockEntry>,
    pub label: String,
}

impl PsdBlock {
    pub fn eval(&self, z: &[f64]) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for e in &self.entries {
            let v = e.coef * z[e.coord];
            m[(e.row, e.col)] += v;
            if e.row != e.col {
                m[(e.col, e.row)] += v;
            }
        }
        m
    }
}

/// A sparse affine equality `sum coef * z[coord] = rhs`.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseRow {
    pub terms: Vec<(usize, f64)>,
    pub rhs: f64,
}

impl SparseRow {
    pub fn eval(&self, z: &[f64]) -> f64 {
        self.terms.iter().map(|&(c, a)| a * z[c]).sum::<f64>() - self.rhs
    }

    pub fn norm(&self) -> f64 {
        self.terms.iter().map(|(_, a)| a * a).sum::<f64>().sqrt()
    }
}

/// Dimensions of the coupling matrix the moment variables describe.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CouplingShape {
    pub m: usize,
    pub n: usize,
}

impl CouplingShape {
    #[inline]
    pub fn var(&self, i: usize, j: usize) -> usize {
        i * self.n + j
    }

    pub fn num_vars(&self) -> usize {
        self.m * self.n
    }
}

/// A standard-form conic program over moment coordinates.
#[derive(Clone, Debug)]
pub struct ConicProblem {
    pub basis: Arc<MonomialBasis>,
    pub kind: HierarchyKind,
    pub level: usize,
    pub shape: CouplingShape,
    pub blocks: Vec<PsdBlock>,
    pub equalities: Vec<SparseRow>,
    pub objective: Vec<(usize, f64)>,
    pub nonneg: Vec<usize>,
    /// `K = max |L|` of the cost the objective was built from.
    pub cost_scale: f64,
}

/// How far a moment vector is from satisfying a [`ConicProblem`].
#[derive(Clone, Copy, Debug)]
pub struct FeasibilityReport {
    pub max_equality_residual: f64,
    pub min_block_eigenvalue: f64,
    pub min_nonneg: f64,
    pub objective: f64,
}

impl ConicProblem {
    pub fn num_coords(&self) -> usize {
        self.basis.len()
    }

    pub fn objective_value(&self, z: &[f64]) -> f64 {
        self.objective.iter().map(|&(c, a)| a * z[c]).sum()
    }

    pub fn evaluate(&self, z: &[f64]) -> FeasibilityReport {
        let max_equality_residual = self
            .equalities
            .iter()
            .map(|r| r.eval(z).abs())
            .fold(0.0, f64::max);
        let min_block_eigenvalue = self
            .blocks
            .iter()
            .map(|b| {
                let ev = b.eval(z).symmetric_eigenvalues();
                ev.iter().copied().fold(f64::INFINITY, f64::min)
            })
            .fold(f64::INFINITY, f64::min);
        let min_nonneg = self
            .nonneg
            .iter()
            .map(|&c| z[c])
            .fold(f64::INFINITY, f64::min);
        FeasibilityReport {
            max_equality_residual,
            min_block_eigenvalue,
            min_nonneg,
            objective: self.objective_value(z),
        }
    }

    /// Number of localizing blocks counted the way the hierarchy defines
    /// them: PSD blocks plus the 1x1 blocks stored as nonnegative coordinates.
    pub fn block_census(&self) -> Vec<usize> {
        let mut dims: Vec<usize> = self.blocks.iter().map(|b| b.dim).collect();
        dims.extend(std::iter::repeat_n(1, self.nonneg.len()));
        dims
    }
}

/// Size guards for problem construction.
#[derive(Clone, Copy, Debug)]
pub struct Limits {
    pub max_basis: usize,
    pub max_subsets: usize,
}

impl Default for Limits {
    fn default() -> Self {
        Self {
            max_basis: DEFAULT_MAX_BASIS,
            max_subsets: 200_000,
        }
    }
}

fn check_marginals(l: &CostTensor, mu: &[f64], nu: &[f64]) -> Result<CouplingShape> {
    if mu.len() != l.m() || nu.len() != l.n() {
        return Err(Error::Dimension(format!(
            "marginals of length {}/{} for a {}x{} cost",
            mu.len(),
            nu.len(),
            l.m(),
            l.n()
        )));
    }
    let (sm, sn): (f64, f64) = (mu.iter().sum(), nu.iter().sum());
    if (sm - sn).abs() > 1e-9 {
        return Err(Error::Invalid(format!(
            "marginals carry different mass ({sm} vs {sn})"
        )));
    }
    Ok(CouplingShape { m: l.m(), n: l.n() })
}

/// Collects equality rows, merging repeated coordinates inside a row and
/// discarding exact duplicates and empty rows.
#[derive(Default)]
struct RowSet {
    rows: Vec<SparseRow>,
    seen: HashSet<Vec<(usize, u64)>>,
}

impl RowSet {
    fn push(&mut self, mut terms: Vec<(usize, f64)>, rhs: f64) {
        terms.sort_by_key(|t| t.0);
        let mut merged: Vec<(usize, f64)> = Vec::with_capacity(terms.len());
        for (c, a) in terms {
            match merged.last_mut() {
                Some(last) if last.0 == c => last.1 += a,
                _ => merged.push((c, a)),
            }
        }
        merged.retain(|t| t.1 != 0.0);
        if merged.is_empty() {
            return;
        }
        let mut key: Vec<(usize, u64)> = merged.iter().map(|&(c, a)| (c, a.to_bits())).collect();
        key.push((usize::MAX, rhs.to_bits()));
        if self.seen.insert(key) {
            self.rows.push(SparseRow { terms: merged, rhs });
        }
    }
}

/// Scalar rows of the four marginal families at level `r`, each localizing
/// matrix `M_{r-1}(g z)` flattened entry by entry.
fn marginal_rows(
    basis: &MonomialBasis,
    shape: CouplingShape,
    mu: &[f64],
    nu: &[f64],
    r: usize,
    rows: &mut RowSet,
) -> Result<()> {
    let nv = shape.num_vars();
    let t = r - 1;
    let inner = basis.count_up_to(t);
    // Each entry (alpha, beta) of M_{r-1}(g z) depends only on alpha + beta.
    let mut emit = |extra: &[usize], linear: &dyn Fn(&[usize]) -> Vec<(Vec<usize>, f64)>| -> Result<()> {
        for a in 0..inner {
            for b in a..inner {
                let delta = basis.get(a).add(basis.get(b));
                let mut base = delta.factors();
                base.extend_from_slice(extra);
                let mut terms = Vec::new();
                for (factors, coef) in linear(&base) {
                    terms.push((basis.position(&MultiIndex::from_factors(nv, &factors))?, coef));
                }
                rows.push(terms, 0.0);
            }
        }
        Ok(())
    };
    for i in 0..shape.m {
        let row_poly = |base: &[usize]| {
            let mut out: Vec<(Vec<usize>, f64)> = (0..shape.n)
                .map(|j| {
                    let mut f = base.to_vec();
                    f.push(shape.var(i, j));
                    (f, 1.0)
                })
                .collect();
            out.push((base.to_vec(), -mu[i]));
            out
        };
        emit(&[], &row_poly)?;
        for i2 in 0..shape.m {
            for j in 0..shape.n {
                emit(&[shape.var(i2, j)], &row_poly)?;
            }
        }
    }
    for j in 0..shape.n {
        let col_poly = |base: &[usize]| {
            let mut out: Vec<(Vec<usize>, f64)> = (0..shape.m)
                .map(|i| {
                    let mut f = base.to_vec();
                    f.push(shape.var(i, j));
                    (f, 1.0)
                })
                .collect();
            out.push((base.to_vec(), -nu[j]));
            out
        };
        emit(&[], &col_poly)?;
        for i in 0..shape.m {
            for j2 in 0..shape.n {
                emit(&[shape.var(i, j2)], &col_poly)?;
            }
        }
    }
    Ok(())
}

/// `sum_{ij,kl} L[ij,kl] z_{target(ij,kl)}`, merged per coordinate.
fn objective_terms(
    l: &CostTensor,
    basis: &MonomialBasis,
    squared: bool,
) -> Result<Vec<(usize, f64)>> {
    let nv = l.num_vars();
    let mut acc: HashMap<usize, f64> = HashMap::new();
    for a in 0..nv {
        for b in 0..nv {
            let w = l.at(a, b);
            if w == 0.0 {
                continue;
            }
            let factors = if squared { vec![a, a, b, b] } else { vec![a, b] };
            let pos = basis.position(&MultiIndex::from_factors(nv, &factors))?;
            *acc.entry(pos).or_insert(0.0) += w;
        }
    }
    let mut terms: Vec<(usize, f64)> = acc.into_iter().collect();
    terms.sort_by_key(|t| t.0);
    Ok(terms)
}

/// `M_t(shift z)` for a monomial shift: entry `(a, b)` is `z_{shift + alpha_a + alpha_b}`.
fn shifted_moment_block(
    basis: &MonomialBasis,
    shift: &MultiIndex,
    t: usize,
    label: String,
) -> Result<PsdBlock> {
    let dim = basis.count_up_to(t);
    let mut entries = Vec::with_capacity(dim * (dim + 1) / 2);
    for a in 0..dim {
        let sa = shift.add(basis.get(a));
        for b in a..dim {
            let coord = basis.position(&sa.add(basis.get(b)))?;
            entries.push(BlockEntry {
                row: a,
                col: b,
                coord,
                coef: 1.0,
            });
        }
    }
    Ok(PsdBlock { dim, entries, label })
}

fn zero_row(rows: &mut RowSet) {
    rows.push(vec![(0, 1.0)], 1.0);
}

/// Every subset of `0..n` with at most `k` elements, in increasing size.
fn subsets_up_to(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    let mut frontier = vec![Vec::new()];
    for _ in 0..k.min(n) {
        let mut next = Vec::new();
        for s in &frontier {
            let start = s.last().map_or(0, |&x: &usize| x + 1);
            for v in start..n {
                let mut t = s.clone();
                t.push(v);
                next.push(t);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

/// The level-`r` Schmüdgen-type relaxation.
pub fn build_schmudgen(l: &CostTensor, mu: &[f64], nu: &[f64], r: usize) -> Result<ConicProblem> {
    build_schmudgen_with(l, mu, nu, r, &Limits::default())
}

pub fn build_schmudgen_with(
    l: &CostTensor,
    mu: &[f64],
    nu: &[f64],
    r: usize,
    limits: &Limits,
) -> Result<ConicProblem> {
    if r == 0 {
        return Err(Error::Level {
            kind: "schmudgen",
            level: r,
            reason: "level must be at least 1",
        });
    }
    let shape = check_marginals(l, mu, nu)?;
    let nv = shape.num_vars();
    let subset_count = (0..=2 * r)
        .map(|k| binomial(nv as u128, k as u128).unwrap_or(u128::MAX))
        .fold(0u128, |a, b| a.saturating_add(b));
    if subset_count > limits.max_subsets as u128 {
        return Err(Error::Capacity {
            what: "localizing blocks (sum of binom(mn, k) for k <= 2r)",
            needed: subset_count,
            limit: limits.max_subsets as u128,
        });
    }
    let basis = shared_basis(nv, 2 * r, limits.max_basis)?;

    let mut blocks = Vec::new();
    let mut nonneg = Vec::new();
    for subset in subsets_up_to(nv, 2 * r) {
        let shift = MultiIndex::from_factors(nv, &subset);
        let t = r - subset.len().div_ceil(2);
        if t == 0 && !subset.is_empty() {
            nonneg.push(basis.position(&shift)?);
        } else {
            blocks.push(shifted_moment_block(
                &basis,
                &shift,
                t,
                format!("M_{t}(e{subset:?} z)"),
            )?);
        }
    }

    let mut rows = RowSet::default();
    zero_row(&mut rows);
    marginal_rows(&basis, shape, mu, nu, r, &mut rows)?;

    Ok(ConicProblem {
        objective: objective_terms(l, &basis, false)?,
        basis,
        kind: HierarchyKind::Schmudgen,
        level: r,
        shape,
        blocks,
        equalities: rows.rows,
        nonneg,
        cost_scale: l.max_abs(),
    })
}

/// The level-`r` Putinar-type relaxation over the square-root variables.
pub fn build_putinar(l: &CostTensor, mu: &[f64], nu: &[f64], r: usize) -> Result<ConicProblem> {
    build_putinar_with(l, mu, nu, r, &Limits::default())
}

pub fn build_putinar_with(
    l: &CostTensor,
    mu: &[f64],
    nu: &[f64],
    r: usize,
    limits: &Limits,
) -> Result<ConicProblem> {
    if r < 2 {
        return Err(Error::Level {
            kind: "putinar",
            level: r,
            reason: "the quartic objective needs degree-4 moments (level >= 2)",
        });
    }
    let shape = check_marginals(l, mu, nu)?;
    let nv = shape.num_vars();
    let basis = shared_basis(nv, 2 * r, limits.max_basis)?;
    let blocks = vec![shifted_moment_block(
        &basis,
        &MultiIndex::zero(nv),
        r,
        format!("M_{r}(z~)"),
    )?];

    let mut rows = RowSet::default();
    zero_row(&mut rows);
    let inner = basis.count_up_to(r - 1);
    let sphere = |rows: &mut RowSet, vars: &[usize], mass: f64| -> Result<()> {
        for a in 0..inner {
            for b in a..inner {
                let delta = basis.get(a).add(basis.get(b));
                let mut terms = vec![(basis.position(&delta)?, mass)];
                for &v in vars {
                    let mut f = delta.factors();
                    f.extend([v, v]);
                    terms.push((basis.position_of_factors(&f)?, -1.0));
                }
                rows.push(terms, 0.0);
            }
        }
        Ok(())
    };
    for (i, &w) in mu.iter().enumerate() {
        let vars: Vec<usize> = (0..shape.n).map(|j| shape.var(i, j)).collect();
        sphere(&mut rows, &vars, w)?;
    }
    for (j, &w) in nu.iter().enumerate() {
        let vars: Vec<usize> = (0..shape.m).map(|i| shape.var(i, j)).collect();
        sphere(&mut rows, &vars, w)?;
    }

    Ok(ConicProblem {
        objective: objective_terms(l, &basis, true)?,
        basis,
        kind: HierarchyKind::Putinar,
        level: r,
        shape,
        blocks,
        equalities: rows.rows,
        nonneg: Vec::new(),
        cost_scale: l.max_abs(),
    })
}

/// The parity-patterned block `M~_r(z)` of dimension `s(mn, 2r)`.
pub fn parity_block(basis: &MonomialBasis, r: usize) -> Result<PsdBlock> {
    let dim = basis.count_up_to(2 * r);
    let mut entries = Vec::new();
    for a in 0..dim {
        for b in a..dim {
            if let Some(gamma) = basis.get(a).add(basis.get(b)).halve() {
                entries.push(BlockEntry {
                    row: a,
                    col: b,
                    coord: basis.position(&gamma)?,
                    coef: 1.0,
                });
            }
        }
    }
    Ok(PsdBlock {
        dim,
        entries,
        label: format!("M~_{r}(z)"),
    })
}

/// The level-`r` combined relaxation: Schmüdgen variables and marginal
/// equalities, one parity-patterned PSD block.
pub fn build_combined(l: &CostTensor, mu: &[f64], nu: &[f64], r: usize) -> Result<ConicProblem> {
    build_combined_with(l, mu, nu, r, &Limits::default())
}

pub fn build_combined_with(
    l: &CostTensor,
    mu: &[f64],
    nu: &[f64],
    r: usize,
    limits: &Limits,
) -> Result<ConicProblem> {
    if r == 0 {
        return Err(Error::Level {
            kind: "combined",
            level: r,
            reason: "level must be at least 1",
        });
    }
    let shape = check_marginals(l, mu, nu)?;
    let basis = shared_basis(shape.num_vars(), 2 * r, limits.max_basis)?;
    let blocks = vec![parity_block(&basis, r)?];
    let mut rows = RowSet::default();
    zero_row(&mut rows);
    marginal_rows(&basis, shape, mu, nu, r, &mut rows)?;
    Ok(ConicProblem {
        objective: objective_terms(l, &basis, false)?,
        basis,
        kind: HierarchyKind::Combined,
        level: r,
        shape,
        blocks,
        equalities: rows.rows,
        nonneg: Vec::new(),
        cost_scale: l.max_abs(),
    })
}

/// The first-level doubly nonnegative relaxation.
pub fn build_first_level(l: &CostTensor, mu: &[f64], nu: &[f64]) -> Result<ConicProblem> {
    build_first_level_with(l, mu, nu, &Limits::default())
}

pub fn build_first_level_with(
    l: &CostTensor,
    mu: &[f64],
    nu: &[f64],
    limits: &Limits,
) -> Result<ConicProblem> {
    let shape = check_marginals(l, mu, nu)?;
    let nv = shape.num_vars();
    let basis = shared_basis(nv, 2, limits.max_basis)?;
    let blocks = vec![shifted_moment_block(
        &basis,
        &MultiIndex::zero(nv),
        1,
        "M_1(z)".into(),
    )?];
    let nonneg: Vec<usize> = basis.positions_of_degree(2).collect();
    let mut rows = RowSet::default();
    zero_row(&mut rows);
    marginal_rows(&basis, shape, mu, nu, 1, &mut rows)?;
    Ok(ConicProblem {
        objective: objective_terms(l, &basis, false)?,
        basis,
        kind: HierarchyKind::FirstLevelDnn,
        level: 1,
        shape,
        blocks,
        equalities: rows.rows,
        nonneg,
        cost_scale: l.max_abs(),
    })
}

/// Dispatches to the builder for `kind`.
pub fn build(
    kind: HierarchyKind,
    l: &CostTensor,
    mu: &[f64],
    nu: &[f64],
    r: usize,
    limits: &Limits,
) -> Result<ConicProblem> {
    match kind {
        HierarchyKind::Schmudgen => build_schmudgen_with(l, mu, nu, r, limits),
        HierarchyKind::Putinar => build_putinar_with(l, mu, nu, r, limits),
        HierarchyKind::Combined => build_combined_with(l, mu, nu, r, limits),
        HierarchyKind::FirstLevelDnn => {
            if r != 1 {
                return Err(Error::Level {
                    kind: "first-level",
                    level: r,
                    reason: "the doubly nonnegative form exists only at level 1",
                });
            }
            build_first_level_with(l, mu, nu, limits)
        }
    }
}

#[cfg(test)]
mod tests;
