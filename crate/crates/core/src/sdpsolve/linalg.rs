use faer::linalg::solvers::{Llt, Solve};
use faer::{Mat, Side};
use nalgebra::DMatrix;

/// Cholesky factorization with diagonal pivoting of a symmetric positive
/// semidefinite matrix. Rows whose remaining pivot falls below
/// `rel_tol * max_diag` are treated as linearly dependent and dropped.
#[derive(Clone, Debug)]
pub struct PivotedCholesky {
    n: usize,
    /// Original indices of the kept pivots, in elimination order.
    kept: Vec<usize>,
    /// Row `s` holds `L[s][0..=s]` for the kept pivots.
    l: Vec<Vec<f64>>,
}

impl PivotedCholesky {
    pub fn factor(k: &DMatrix<f64>, rel_tol: f64) -> Self {
        let n = k.nrows();
        let mut diag: Vec<f64> = (0..n).map(|i| k[(i, i)]).collect();
        let max_diag = diag.iter().copied().fold(0.0, f64::max);
        let cutoff = rel_tol * max_diag.max(f64::MIN_POSITIVE);
        let mut remaining: Vec<usize> = (0..n).collect();
        // cols[i] is the partially built row of L for original index i
        let mut cols: Vec<Vec<f64>> = vec![Vec::new(); n];
        let mut kept = Vec::new();
        let mut l = Vec::new();

        while !remaining.is_empty() {
            let (pos, &p) = remaining
                .iter()
                .enumerate()
                .max_by(|a, b| diag[*a.1].total_cmp(&diag[*b.1]).then(b.1.cmp(a.1)))
                .unwrap();
            if diag[p] <= cutoff {
                break;
            }
            remaining.swap_remove(pos);
            let piv = diag[p].sqrt();
            let lp = std::mem::take(&mut cols[p]);
            for &i in &remaining {
                let li = &cols[i];
                let dot: f64 = li.iter().zip(&lp).map(|(a, b)| a * b).sum();
                let v = (k[(i, p)] - dot) / piv;
                cols[i].push(v);
                diag[i] -= v * v;
            }
            let mut row = lp;
            row.push(piv);
            l.push(row);
            kept.push(p);
        }
        Self { n, kept, l }
    }

    pub fn rank(&self) -> usize {
        self.kept.len()
    }

    /// Original indices judged dependent on the kept ones.
    pub fn dropped(&self) -> Vec<usize> {
        let mut mark = vec![false; self.n];
        for &k in &self.kept {
            mark[k] = true;
        }
        (0..self.n).filter(|&i| !mark[i]).collect()
    }

    /// Solves the kept subsystem; dropped coordinates of the answer are zero.
    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let r = self.rank();
        let mut y = vec![0.0; r];
        for s in 0..r {
            let row = &self.l[s];
            let dot: f64 = row[..s].iter().zip(&y[..s]).map(|(a, b)| a * b).sum();
            y[s] = (rhs[self.kept[s]] - dot) / row[s];
        }
        for s in (0..r).rev() {
            y[s] /= self.l[s][s];
            let ys = y[s];
            for t in 0..s {
                y[t] -= self.l[s][t] * ys;
            }
        }
        let mut out = vec![0.0; self.n];
        for (s, &k) in self.kept.iter().enumerate() {
            out[k] = y[s];
        }
        out
    }
}

/// Fast repeated solves with the kept part of a [`PivotedCholesky`].
pub struct ReducedSolver {
    n: usize,
    kept: Vec<usize>,
    llt: Option<Llt<f64>>,
}

impl ReducedSolver {
    /// Refactors the independent rows of `k` found by `pivots`.
    pub fn new(k: &DMatrix<f64>, pivots: &PivotedCholesky) -> Self {
        let mut kept = pivots.kept.clone();
        kept.sort_unstable();
        let sub = Mat::<f64>::from_fn(kept.len(), kept.len(), |a, b| k[(kept[a], kept[b])]);
        let llt = if kept.is_empty() { None } else { sub.llt(Side::Lower).ok() };
        Self {
            n: pivots.n,
            kept,
            llt,
        }
    }

    pub fn is_ok(&self) -> bool {
        self.kept.is_empty() || self.llt.is_some()
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        if let Some(llt) = &self.llt {
            let b = Mat::<f64>::from_fn(self.kept.len(), 1, |a, _| rhs[self.kept[a]]);
            let x = llt.solve(&b);
            for (a, &k) in self.kept.iter().enumerate() {
                out[k] = x[(a, 0)];
            }
        }
        out
    }
}

/// Nearest positive semidefinite matrix in Frobenius norm.
pub fn project_psd(m: DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    if n == 1 {
        return DMatrix::from_element(1, 1, m[(0, 0)].max(0.0));
    }
    let fm = Mat::<f64>::from_fn(n, n, |i, j| m[(i, j)]);
    let eig = match fm.self_adjoint_eigen(Side::Lower) {
        Ok(e) => e,
        Err(_) => return DMatrix::from_element(n, n, f64::NAN),
    };
    let lam = eig.S().column_vector();
    let u = eig.U();
    let pos: Vec<usize> = (0..n).filter(|&i| lam[i] > 0.0).collect();
    if pos.is_empty() {
        return DMatrix::zeros(n, n);
    }
    let v = Mat::<f64>::from_fn(n, pos.len(), |r, c| u[(r, pos[c])]);
    let vs = Mat::<f64>::from_fn(n, pos.len(), |r, c| u[(r, pos[c])] * lam[pos[c]]);
    let out = &vs * v.transpose();
    DMatrix::from_fn(n, n, |i, j| 0.5 * (out[(i, j)] + out[(j, i)]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cholesky_solves_spd() {
        let a = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]);
        let f = PivotedCholesky::factor(&a, 1e-12);
        assert_eq!(f.rank(), 3);
        let b = [1.0, -2.0, 0.5];
        let x = f.solve(&b);
        let ax = &a * nalgebra::DVector::from_vec(x);
        for i in 0..3 {
            assert!((ax[i] - b[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn cholesky_drops_dependent_rows() {
        // rows of A: a, b, a+b -> K = A A^T has rank 2
        let a = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 1.0, 0.0, 1.0, 1.0, 1.0, 1.0, 2.0]);
        let k = &a * a.transpose();
        let f = PivotedCholesky::factor(&k, 1e-10);
        assert_eq!(f.rank(), 2);
        assert_eq!(f.dropped().len(), 1);
        // consistent right-hand side from some x
        let x0 = nalgebra::DVector::from_vec(vec![0.3, -0.7, 1.1]);
        let rhs = &k * &x0;
        let lam = f.solve(rhs.as_slice());
        let back = &k * nalgebra::DVector::from_vec(lam);
        for i in 0..3 {
            assert!((back[i] - rhs[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn psd_projection_idempotent() {
        let b = DMatrix::from_row_slice(3, 2, &[1.0, 0.5, -0.3, 2.0, 0.7, 0.1]);
        let p = &b * b.transpose();
        let q = project_psd(p.clone());
        assert!((&q - &p).norm() <= 1e-12 * p.norm());
    }

    #[test]
    fn psd_projection_clips_negative_part() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -2.0]);
        let q = project_psd(m);
        assert!((q[(0, 0)] - 1.0).abs() < 1e-14);
        assert!(q[(1, 1)].abs() < 1e-14);
    }
}
