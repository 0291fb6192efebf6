//! Multi-indices and graded monomial bases.
//!
//! Every moment vector in the crate is addressed through a [`MonomialBasis`]:
//! the list of all exponent vectors over `num_vars` variables with total
//! degree at most `max_degree`, sorted by ascending degree and, within a
//! degree, lexicographically with the first variable most significant
//! (so `(1,0)` precedes `(0,1)`).

use std::collections::HashMap;
use std::fmt;

use crate::error::{Error, Result};

/// Default cap on the number of basis entries that may be materialized.
pub const DEFAULT_MAX_BASIS: usize = 250_000;

/// An exponent vector together with its cached total degree.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct MultiIndex {
    exps: Vec<u32>,
    degree: u32,
}

impl MultiIndex {
    pub fn new(exps: Vec<u32>) -> Self {
        let degree = exps.iter().sum();
        Self { exps, degree }
    }

    pub fn zero(num_vars: usize) -> Self {
        Self {
            exps: vec![0; num_vars],
            degree: 0,
        }
    }

    pub fn unit(num_vars: usize, var: usize) -> Self {
        let mut exps = vec![0; num_vars];
        exps[var] = 1;
        Self { exps, degree: 1 }
    }

    /// Builds the exponent vector of the product of the given variables
    /// (repetitions allowed).
    pub fn from_factors(num_vars: usize, factors: &[usize]) -> Self {
        let mut exps = vec![0u32; num_vars];
        for &v in factors {
            exps[v] += 1;
        }
        Self {
            exps,
            degree: factors.len() as u32,
        }
    }

    pub fn exponents(&self) -> &[u32] {
        &self.exps
    }

    pub fn degree(&self) -> usize {
        self.degree as usize
    }

    pub fn num_vars(&self) -> usize {
        self.exps.len()
    }

    pub fn is_zero(&self) -> bool {
        self.degree == 0
    }

    pub fn add(&self, other: &MultiIndex) -> MultiIndex {
        debug_assert_eq!(self.exps.len(), other.exps.len());
        MultiIndex {
            exps: self.exps.iter().zip(&other.exps).map(|(a, b)| a + b).collect(),
            degree: self.degree + other.degree,
        }
    }

    pub fn double(&self) -> MultiIndex {
        MultiIndex {
            exps: self.exps.iter().map(|e| 2 * e).collect(),
            degree: 2 * self.degree,
        }
    }

    /// Returns `gamma` with `2 * gamma == self`, or `None` if some exponent is odd.
    pub fn halve(&self) -> Option<MultiIndex> {
        if self.exps.iter().any(|e| e % 2 == 1) {
            return None;
        }
        Some(MultiIndex {
            exps: self.exps.iter().map(|e| e / 2).collect(),
            degree: self.degree / 2,
        })
    }

    /// Component-wise `self <= other`.
    pub fn le(&self, other: &MultiIndex) -> bool {
        self.exps.iter().zip(&other.exps).all(|(a, b)| a <= b)
    }

    /// `self - other`, or `None` if some component would go negative.
    pub fn checked_sub(&self, other: &MultiIndex) -> Option<MultiIndex> {
        if !other.le(self) {
            return None;
        }
        Some(MultiIndex {
            exps: self.exps.iter().zip(&other.exps).map(|(a, b)| a - b).collect(),
            degree: self.degree - other.degree,
        })
    }

    /// Expands the monomial into its unit factors, in increasing variable order.
    pub fn factors(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.degree as usize);
        for (v, &e) in self.exps.iter().enumerate() {
            out.extend(std::iter::repeat_n(v, e as usize));
        }
        out
    }

    /// Nonzero `(variable, exponent)` pairs.
    pub fn support(&self) -> impl Iterator<Item = (usize, u32)> + '_ {
        self.exps
            .iter()
            .enumerate()
            .filter(|(_, &e)| e > 0)
            .map(|(v, &e)| (v, e))
    }
}

impl fmt::Debug for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.exps)
    }
}

impl fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.exps)
    }
}

/// `binomial(num_vars + degree, degree)`, the number of monomials of degree
/// at most `degree` in `num_vars` variables.
pub fn basis_size(num_vars: usize, degree: usize) -> Result<usize> {
    if num_vars == 0 {
        return Err(Error::Invalid("basis needs at least one variable".into()));
    }
    let v = binomial(num_vars as u128 + degree as u128, degree as u128)
        .ok_or(Error::Overflow("basis size"))?;
    usize::try_from(v).map_err(|_| Error::Overflow("basis size"))
}

/// Exact `binomial(n, k)` with overflow detection.
pub fn binomial(n: u128, k: u128) -> Option<u128> {
    if k > n {
        return Some(0);
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        // acc * (n - i) / (i + 1) stays integral at every step.
        acc = acc.checked_mul(n - i)? / (i + 1);
    }
    Some(acc)
}

/// `|tau|! / (tau_1! ... tau_n!)`: the number of ordered tuples of unit
/// multi-indices summing to `tau`.
pub fn multinomial_weight(tau: &MultiIndex) -> Result<u64> {
    let mut acc: u128 = 1;
    let mut running: u128 = 0;
    for &e in tau.exponents() {
        running += e as u128;
        let b = binomial(running, e as u128).ok_or(Error::Overflow("multinomial weight"))?;
        acc = acc
            .checked_mul(b)
            .ok_or(Error::Overflow("multinomial weight"))?;
    }
    u64::try_from(acc).map_err(|_| Error::Overflow("multinomial weight"))
}

/// All monomials of degree at most `max_degree`, in graded order.
#[derive(Clone, Debug)]
pub struct MonomialBasis {
    num_vars: usize,
    max_degree: usize,
    entries: Vec<MultiIndex>,
    lookup: HashMap<MultiIndex, usize>,
    /// `degree_starts[k]` is the position of the first entry of degree `k`;
    /// one extra sentinel equal to `entries.len()`.
    degree_starts: Vec<usize>,
}

impl MonomialBasis {
    pub fn num_vars(&self) -> usize {
        self.num_vars
    }

    pub fn max_degree(&self) -> usize {
        self.max_degree
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[MultiIndex] {
        &self.entries
    }

    pub fn get(&self, pos: usize) -> &MultiIndex {
        &self.entries[pos]
    }

    pub fn index_of(&self, alpha: &MultiIndex) -> Option<usize> {
        self.lookup.get(alpha).copied()
    }

    /// Position of the monomial, or an out-of-basis error.
    pub fn position(&self, alpha: &MultiIndex) -> Result<usize> {
        self.index_of(alpha)
            .ok_or_else(|| Error::OutOfBasis(alpha.to_string()))
    }

    pub fn position_of_factors(&self, factors: &[usize]) -> Result<usize> {
        self.position(&MultiIndex::from_factors(self.num_vars, factors))
    }

    /// Number of entries with degree at most `d`.
    pub fn count_up_to(&self, d: usize) -> usize {
        self.degree_starts[(d + 1).min(self.max_degree + 1)]
    }

    /// Positions of the entries with degree exactly `d`.
    pub fn positions_of_degree(&self, d: usize) -> std::ops::Range<usize> {
        if d > self.max_degree {
            return self.entries.len()..self.entries.len();
        }
        self.degree_starts[d]..self.degree_starts[d + 1]
    }
}

pub fn enumerate_basis(num_vars: usize, degree: usize) -> Result<MonomialBasis> {
    enumerate_basis_with_limit(num_vars, degree, DEFAULT_MAX_BASIS)
}

pub fn enumerate_basis_with_limit(
    num_vars: usize,
    degree: usize,
    limit: usize,
) -> Result<MonomialBasis> {
    let size = basis_size(num_vars, degree)?;
    if size > limit {
        return Err(Error::Capacity {
            what: "monomial basis",
            needed: size as u128,
            limit: limit as u128,
        });
    }
    let mut entries = Vec::with_capacity(size);
    let mut degree_starts = Vec::with_capacity(degree + 2);
    let mut scratch = vec![0u32; num_vars];
    for d in 0..=degree {
        degree_starts.push(entries.len());
        push_compositions(&mut scratch, 0, d as u32, &mut entries);
    }
    degree_starts.push(entries.len());
    debug_assert_eq!(entries.len(), size);
    let lookup = entries
        .iter()
        .enumerate()
        .map(|(i, e)| (e.clone(), i))
        .collect();
    Ok(MonomialBasis {
        num_vars,
        max_degree: degree,
        entries,
        lookup,
        degree_starts,
    })
}

/// Appends every exponent vector with `scratch[pos..]` summing to `left`,
/// first variable descending.
fn push_compositions(scratch: &mut [u32], pos: usize, left: u32, out: &mut Vec<MultiIndex>) {
    if pos + 1 == scratch.len() {
        scratch[pos] = left;
        out.push(MultiIndex::new(scratch.to_vec()));
        scratch[pos] = 0;
        return;
    }
    for e in (0..=left).rev() {
        scratch[pos] = e;
        push_compositions(scratch, pos + 1, left - e, out);
    }
    scratch[pos] = 0;
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn basis_size_examples() {
        assert_eq!(basis_size(2, 2).unwrap(), 6);
        assert_eq!(basis_size(4, 2).unwrap(), 15);
        assert_eq!(basis_size(1, 3).unwrap(), 4);
        assert_eq!(basis_size(3, 0).unwrap(), 1);
    }

    #[test]
    fn basis_size_overflow_is_reported() {
        assert!(matches!(
            basis_size(usize::MAX / 2, 40),
            Err(Error::Overflow(_))
        ));
    }

    #[test]
    fn univariate_and_degree_one_orders() {
        let b = enumerate_basis(1, 2).unwrap();
        let got: Vec<_> = b.entries().iter().map(|e| e.exponents().to_vec()).collect();
        assert_eq!(got, vec![vec![0], vec![1], vec![2]]);

        let b = enumerate_basis(2, 1).unwrap();
        let got: Vec<_> = b.entries().iter().map(|e| e.exponents().to_vec()).collect();
        assert_eq!(got, vec![vec![0, 0], vec![1, 0], vec![0, 1]]);
    }

    #[test]
    fn four_vars_degree_two_matches_sorted_brute_force() {
        let b = enumerate_basis(4, 2).unwrap();
        assert_eq!(b.len(), 15);
        assert_eq!(b.get(14).exponents(), &[0, 0, 0, 2]);
        assert!(b.get(0).is_zero());

        // brute force: all vectors in {0,1,2}^4 with sum <= 2, sorted by
        // (degree asc, exponents desc)
        let mut all = Vec::new();
        for a in 0..3u32 {
            for c in 0..3u32 {
                for d in 0..3u32 {
                    for e in 0..3u32 {
                        if a + c + d + e <= 2 {
                            all.push(vec![a, c, d, e]);
                        }
                    }
                }
            }
        }
        all.sort_by(|x, y| {
            let sx: u32 = x.iter().sum();
            let sy: u32 = y.iter().sum();
            sx.cmp(&sy).then_with(|| y.cmp(x))
        });
        let got: Vec<_> = b.entries().iter().map(|e| e.exponents().to_vec()).collect();
        assert_eq!(got, all);
    }

    #[test]
    fn capacity_limit_enforced() {
        let err = enumerate_basis_with_limit(10, 4, 100).unwrap_err();
        assert!(matches!(err, Error::Capacity { .. }));
    }

    #[test]
    fn out_of_basis_lookup_is_an_error() {
        let b = enumerate_basis(2, 2).unwrap();
        assert!(b.position(&MultiIndex::new(vec![2, 1])).is_err());
        assert_eq!(b.position(&MultiIndex::new(vec![1, 1])).unwrap(), 4);
    }

    #[test]
    fn multinomial_examples() {
        assert_eq!(multinomial_weight(&MultiIndex::new(vec![1, 1, 0, 0])).unwrap(), 2);
        assert_eq!(multinomial_weight(&MultiIndex::new(vec![2, 0])).unwrap(), 1);
        assert_eq!(multinomial_weight(&MultiIndex::new(vec![1, 1, 1])).unwrap(), 6);
        assert_eq!(multinomial_weight(&MultiIndex::new(vec![0, 0])).unwrap(), 1);
    }

    /// Counts ordered tuples of unit vectors whose sum is `tau` by direct enumeration.
    fn brute_force_tuples(tau: &[u32]) -> u64 {
        let n = tau.len();
        let len: u32 = tau.iter().sum();
        let mut count = 0u64;
        let total = (n as u64).pow(len);
        for code in 0..total {
            let mut c = code;
            let mut hist = vec![0u32; n];
            for _ in 0..len {
                hist[(c % n as u64) as usize] += 1;
                c /= n as u64;
            }
            if hist == tau {
                count += 1;
            }
        }
        count
    }

    #[test]
    fn degree_slices_partition_the_basis() {
        for n in 1..=6 {
            for r in 0..=4 {
                let b = enumerate_basis(n, r).unwrap();
                let total: usize = (0..=r).map(|k| b.positions_of_degree(k).len()).sum();
                assert_eq!(total, basis_size(n, r).unwrap());
                for k in 0..=r {
                    for pos in b.positions_of_degree(k) {
                        assert_eq!(b.get(pos).degree(), k);
                    }
                }
            }
        }
    }

    proptest! {
        #[test]
        fn lookup_inverts_entries(n in 1usize..6, r in 0usize..4) {
            let b = enumerate_basis(n, r).unwrap();
            for (i, e) in b.entries().iter().enumerate() {
                prop_assert_eq!(b.index_of(e), Some(i));
                prop_assert_eq!(e.degree() as u32, e.exponents().iter().sum::<u32>());
            }
        }

        #[test]
        fn multinomial_matches_tuple_count(tau in proptest::collection::vec(0u32..3, 1..=4)) {
            prop_assume!(tau.iter().sum::<u32>() <= 5);
            let w = multinomial_weight(&MultiIndex::new(tau.clone())).unwrap();
            prop_assert_eq!(w, brute_force_tuples(&tau));
        }
    }
}
