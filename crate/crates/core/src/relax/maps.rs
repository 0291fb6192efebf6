//! The maps between Schmüdgen moments of `pi` and Putinar moments of the
//! square-root variables `t` with `pi = t^2`.

use super::{shared_basis, MomentVector};
use crate::error::{Error, Result};
use crate::moment_index::DEFAULT_MAX_BASIS;

/// `P(z~)_alpha = z~_{2 alpha}`: from degree `2d` moments of `t` to degree
/// `d` moments of `pi`.
pub fn project_p(z_tilde: &MomentVector) -> Result<MomentVector> {
    let basis = z_tilde.basis();
    let deg = basis.max_degree();
    if deg < 2 || !deg.is_multiple_of(2) {
        return Err(Error::Dimension(format!(
            "projection needs an even degree >= 2, got {deg}"
        )));
    }
    let out_basis = shared_basis(basis.num_vars(), deg / 2, DEFAULT_MAX_BASIS)?;
    let values = out_basis
        .entries()
        .iter()
        .map(|alpha| z_tilde.riesz(&alpha.double()))
        .collect::<Result<Vec<f64>>>()?;
    MomentVector::new(out_basis, values)
}

/// `Q(z)_{2 alpha} = z_alpha`, zero on every multi-index with an odd exponent.
pub fn extend_q(z: &MomentVector) -> Result<MomentVector> {
    extend_q_with_limit(z, DEFAULT_MAX_BASIS)
}

pub fn extend_q_with_limit(z: &MomentVector, limit: usize) -> Result<MomentVector> {
    let basis = z.basis();
    let out_basis = shared_basis(basis.num_vars(), 2 * basis.max_degree(), limit)?;
    let values = out_basis
        .entries()
        .iter()
        .map(|gamma| match gamma.halve() {
            Some(alpha) => z.riesz(&alpha),
            None => Ok(0.0),
        })
        .collect::<Result<Vec<f64>>>()?;
    MomentVector::new(out_basis, values)
}
