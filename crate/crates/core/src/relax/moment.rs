use nalgebra::DMatrix;

use super::MomentVector;
use crate::error::{Error, Result};
use crate::moment_index::MultiIndex;

/// Largest marginal residual tolerated by [`reduced_moment_matrix`].
pub const MARGINAL_PRECONDITION_TOL: f64 = 1e-8;

/// Localizing matrix `M_r(g z)`: entry `(alpha, beta)` is
/// `sum_gamma g_gamma z_{gamma + alpha + beta}` over basis monomials of degree
/// at most `r`. An empty `g` is treated as the constant polynomial 1.
pub fn moment_matrix(z: &MomentVector, g: &[(MultiIndex, f64)], r: usize) -> Result<DMatrix<f64>> {
    let basis = z.basis();
    let g_deg = g.iter().map(|(m, _)| m.degree()).max().unwrap_or(0);
    if g_deg + 2 * r > basis.max_degree() {
        return Err(Error::OutOfBasis(format!(
            "M_{r}(g z) with deg g = {g_deg} needs degree {} moments, have {}",
            g_deg + 2 * r,
            basis.max_degree()
        )));
    }
    let one = [(MultiIndex::zero(basis.num_vars()), 1.0)];
    let g = if g.is_empty() { &one[..] } else { g };
    let dim = basis.count_up_to(r);
    let mut out = DMatrix::zeros(dim, dim);
    for a in 0..dim {
        for b in a..dim {
            let ab = basis.get(a).add(basis.get(b));
            let mut v = 0.0;
            for (gamma, coef) in g {
                v += coef * z.riesz(&ab.add(gamma))?;
            }
            out[(a, b)] = v;
            out[(b, a)] = v;
        }
    }
    Ok(out)
}

/// Largest absolute violation of the marginal conditions at level `r`:
/// `sum_j z_{delta+e_ij} = mu_i z_delta` and `sum_i z_{delta+e_ij} = nu_j z_delta`
/// for every `|delta| <= 2r - 1`.
pub fn marginal_residual(z: &MomentVector, mu: &[f64], nu: &[f64], r: usize) -> Result<f64> {
    let basis = z.basis();
    let (m, n) = (mu.len(), nu.len());
    if basis.num_vars() != m * n {
        return Err(Error::Dimension(format!(
            "moment vector over {} variables, marginals imply {}",
            basis.num_vars(),
            m * n
        )));
    }
    if r == 0 || basis.max_degree() < 2 * r {
        return Err(Error::OutOfBasis(format!(
            "marginal conditions at level {r} need degree {} moments",
            2 * r
        )));
    }
    let mut worst = 0.0f64;
    for pos in 0..basis.count_up_to(2 * r - 1) {
        let delta = basis.get(pos);
        let zd = z.values()[pos];
        let mut shifted = vec![vec![0.0; n]; m];
        for (i, row) in shifted.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = z.riesz(&delta.add(&MultiIndex::unit(m * n, i * n + j)))?;
            }
        }
        for i in 0..m {
            let s: f64 = shifted[i].iter().sum();
            worst = worst.max((s - mu[i] * zd).abs());
        }
        for j in 0..n {
            let s: f64 = (0..m).map(|i| shifted[i][j]).sum();
            worst = worst.max((s - nu[j] * zd).abs());
        }
    }
    Ok(worst)
}

/// `M̄_{r-d_I}(e_I z)`: the localizing matrix of the squarefree monomial
/// `e_I` restricted to rows and columns of degree exactly `r - d_I`.
/// Only meaningful when the marginal conditions hold, which is checked.
pub fn reduced_moment_matrix(
    z: &MomentVector,
    subset: &[usize],
    r: usize,
    mu: &[f64],
    nu: &[f64],
) -> Result<DMatrix<f64>> {
    let residual = marginal_residual(z, mu, nu, r)?;
    if residual > MARGINAL_PRECONDITION_TOL {
        return Err(Error::Precondition(format!(
            "marginal conditions violated by {residual:.3e} (> {MARGINAL_PRECONDITION_TOL:.0e})"
        )));
    }
    let basis = z.basis();
    let d_i = subset.len().div_ceil(2);
    if d_i > r {
        return Err(Error::Invalid(format!(
            "subset of size {} exceeds degree 2r = {}",
            subset.len(),
            2 * r
        )));
    }
    let t = r - d_i;
    let shift = MultiIndex::from_factors(basis.num_vars(), subset);
    let rows: Vec<usize> = basis.positions_of_degree(t).collect();
    let mut out = DMatrix::zeros(rows.len(), rows.len());
    for (a, &pa) in rows.iter().enumerate() {
        let sa = shift.add(basis.get(pa));
        for (b, &pb) in rows.iter().enumerate().skip(a) {
            let v = z.riesz(&sa.add(basis.get(pb)))?;
            out[(a, b)] = v;
            out[(b, a)] = v;
        }
    }
    Ok(out)
}
