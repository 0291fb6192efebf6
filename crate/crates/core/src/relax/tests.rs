use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::sdpa::{read_sdpa, write_sdpa};
use super::*;
use crate::spaces::{build_cost_tensor, MetricMeasureSpace};

fn random_space(k: usize, rng: &mut ChaCha8Rng) -> MetricMeasureSpace {
    let pts: Vec<Vec<f64>> = (0..k)
        .map(|_| vec![rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)])
        .collect();
    MetricMeasureSpace::from_points(&pts, None).unwrap()
}

fn random_weights(k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let w: Vec<f64> = (0..k).map(|_| rng.gen_range(0.2..1.0)).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|x| x / s).collect()
}

/// A random coupling with the given marginals via Sinkhorn scaling.
fn random_coupling(mu: &[f64], nu: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
    let (m, n) = (mu.len(), nu.len());
    let mut p: Vec<f64> = (0..m * n).map(|_| rng.gen_range(0.05..1.0)).collect();
    for _ in 0..2000 {
        for i in 0..m {
            let s: f64 = (0..n).map(|j| p[i * n + j]).sum();
            for j in 0..n {
                p[i * n + j] *= mu[i] / s;
            }
        }
        for j in 0..n {
            let s: f64 = (0..m).map(|i| p[i * n + j]).sum();
            for i in 0..m {
                p[i * n + j] *= nu[j] / s;
            }
        }
    }
    p
}

fn instance(m: usize, n: usize, seed: u64) -> (CostTensor, Vec<f64>, Vec<f64>, ChaCha8Rng) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = random_space(m, &mut rng);
    let y = random_space(n, &mut rng);
    let l = build_cost_tensor(&x, &y, 2.0, 1.0).unwrap();
    let mu = random_weights(m, &mut rng);
    let nu = random_weights(n, &mut rng);
    (l, mu, nu, rng)
}

fn gw_objective(l: &CostTensor, pi: &[f64]) -> f64 {
    let nv = pi.len();
    let mut s = 0.0;
    for a in 0..nv {
        for b in 0..nv {
            s += l.at(a, b) * pi[a] * pi[b];
        }
    }
    s
}

fn rank(mat: &DMatrix<f64>) -> usize {
    if mat.nrows() == 0 {
        return 0;
    }
    let sv = mat.clone().svd(false, false).singular_values;
    let top = sv.iter().copied().fold(0.0, f64::max);
    sv.iter().filter(|&&s| s > 1e-9 * top.max(1.0)).count()
}

fn dense_rows(rows: &[SparseRow], ncoords: usize) -> DMatrix<f64> {
    let mut a = DMatrix::zeros(rows.len(), ncoords + 1);
    for (i, r) in rows.iter().enumerate() {
        for &(c, v) in &r.terms {
            a[(i, c)] += v;
        }
        a[(i, ncoords)] = r.rhs;
    }
    a
}

/// Marginal rows generated directly from the definition, without any
/// deduplication: `sum_j z_{d+e_ij} - mu_i z_d` for every `|d| <= 2r-1`.
fn brute_marginal_rows(basis: &MonomialBasis, mu: &[f64], nu: &[f64], r: usize) -> Vec<SparseRow> {
    let (m, n) = (mu.len(), nu.len());
    let nv = m * n;
    let mut out = vec![SparseRow {
        terms: vec![(0, 1.0)],
        rhs: 1.0,
    }];
    for pos in 0..basis.count_up_to(2 * r - 1) {
        let delta = basis.get(pos);
        for i in 0..m {
            let mut terms: Vec<(usize, f64)> = (0..n)
                .map(|j| (basis.position(&delta.add(&MultiIndex::unit(nv, i * n + j))).unwrap(), 1.0))
                .collect();
            terms.push((pos, -mu[i]));
            out.push(SparseRow { terms, rhs: 0.0 });
        }
        for j in 0..n {
            let mut terms: Vec<(usize, f64)> = (0..m)
                .map(|i| (basis.position(&delta.add(&MultiIndex::unit(nv, i * n + j))).unwrap(), 1.0))
                .collect();
            terms.push((pos, -nu[j]));
            out.push(SparseRow { terms, rhs: 0.0 });
        }
    }
    out
}

#[test]
fn schmudgen_census_level_one() {
    let (l, mu, nu, _) = instance(2, 2, 1);
    let p = build_schmudgen(&l, &mu, &nu, 1).unwrap();
    assert_eq!(p.blocks.len(), 1);
    assert_eq!(p.blocks[0].dim, 5);
    assert_eq!(p.nonneg.len(), 4 + 6);
    assert_eq!(p.block_census().len(), 1 + 4 + 6);
}

#[test]
fn schmudgen_census_level_two() {
    let (l, mu, nu, _) = instance(2, 2, 2);
    let p = build_schmudgen(&l, &mu, &nu, 2).unwrap();
    let mut dims: Vec<usize> = p.blocks.iter().map(|b| b.dim).collect();
    dims.sort_unstable();
    let mut want = vec![5; 4 + 6];
    want.push(15);
    assert_eq!(dims, want);
    assert_eq!(p.nonneg.len(), 4 + 1);
}

#[test]
fn marginal_rows_span_the_definition() {
    for (m, n, r) in [(2, 2, 1), (2, 3, 1), (2, 2, 2), (3, 2, 2), (1, 3, 2)] {
        let (l, mu, nu, _) = instance(m, n, (m * 10 + n * 3 + r) as u64);
        let p = build_schmudgen(&l, &mu, &nu, r).unwrap();
        let brute = brute_marginal_rows(&p.basis, &mu, &nu, r);
        let nc = p.num_coords();
        let built = dense_rows(&p.equalities, nc);
        let reference = dense_rows(&brute, nc);
        let both = DMatrix::from_fn(built.nrows() + reference.nrows(), nc + 1, |i, j| {
            if i < built.nrows() {
                built[(i, j)]
            } else {
                reference[(i - built.nrows(), j)]
            }
        });
        let (rb, rr, ru) = (rank(&built), rank(&reference), rank(&both));
        assert_eq!(rb, rr, "m={m} n={n} r={r}");
        assert_eq!(ru, rr, "m={m} n={n} r={r}");
    }
}

#[test]
fn equality_rows_are_unique() {
    let (l, mu, nu, _) = instance(2, 3, 5);
    let p = build_schmudgen(&l, &mu, &nu, 2).unwrap();
    let mut seen = std::collections::HashSet::new();
    for r in &p.equalities {
        let key: Vec<(usize, u64)> = r.terms.iter().map(|&(c, a)| (c, a.to_bits())).collect();
        assert!(seen.insert((key, r.rhs.to_bits())));
        assert!(r.terms.iter().all(|t| t.1 != 0.0));
    }
}

#[test]
fn rank_one_couplings_are_feasible() {
    for (m, n) in [(1, 1), (1, 3), (2, 2), (2, 3), (3, 3)] {
        for r in 1..=2 {
            let (l, mu, nu, mut rng) = instance(m, n, (100 * m + 10 * n + r) as u64);
            let pi = random_coupling(&mu, &nu, &mut rng);
            let want = gw_objective(&l, &pi);
            for kind in [HierarchyKind::Schmudgen, HierarchyKind::Combined] {
                let p = build(kind, &l, &mu, &nu, r, &Limits::default()).unwrap();
                let z = MomentVector::from_atoms(p.basis.clone(), &[(1.0, &pi)]).unwrap();
                let rep = p.evaluate(z.values());
                assert!(rep.max_equality_residual < 1e-12, "{kind} m={m} n={n} r={r}");
                assert!(rep.min_block_eigenvalue > -1e-10, "{kind} m={m} n={n} r={r}");
                assert!(rep.min_nonneg >= 0.0 || p.nonneg.is_empty());
                assert!((rep.objective - want).abs() < 1e-12 * (1.0 + want));
            }
            if r == 1 {
                let p = build_first_level(&l, &mu, &nu).unwrap();
                let z = MomentVector::from_atoms(p.basis.clone(), &[(1.0, &pi)]).unwrap();
                let rep = p.evaluate(z.values());
                assert!(rep.max_equality_residual < 1e-12);
                assert!(rep.min_block_eigenvalue > -1e-10);
                assert!((rep.objective - want).abs() < 1e-12 * (1.0 + want));
            }
        }
    }
}

#[test]
fn single_atom_spaces_build() {
    let (l, mu, nu, _) = instance(1, 1, 3);
    for kind in [
        HierarchyKind::Schmudgen,
        HierarchyKind::Combined,
        HierarchyKind::FirstLevelDnn,
    ] {
        let p = build(kind, &l, &mu, &nu, 1, &Limits::default()).unwrap();
        assert_eq!(p.shape.num_vars(), 1);
        let z = MomentVector::from_atoms(p.basis.clone(), &[(1.0, &[1.0])]).unwrap();
        assert!(p.evaluate(z.values()).max_equality_residual < 1e-15);
    }
    let p = build_putinar(&l, &mu, &nu, 2).unwrap();
    let z = MomentVector::from_atoms(p.basis.clone(), &[(1.0, &[1.0])]).unwrap();
    assert!(p.evaluate(z.values()).max_equality_residual < 1e-15);
}

#[test]
fn level_guards() {
    let (l, mu, nu, _) = instance(2, 2, 4);
    assert!(matches!(build_putinar(&l, &mu, &nu, 1), Err(Error::Level { .. })));
    assert!(matches!(build_schmudgen(&l, &mu, &nu, 0), Err(Error::Level { .. })));
    assert!(matches!(
        build(HierarchyKind::FirstLevelDnn, &l, &mu, &nu, 2, &Limits::default()),
        Err(Error::Level { .. })
    ));
    let tight = Limits {
        max_basis: 250_000,
        max_subsets: 10,
    };
    assert!(matches!(
        build_schmudgen_with(&l, &mu, &nu, 1, &tight),
        Err(Error::Capacity { .. })
    ));
    assert!(matches!(
        build_schmudgen(&l, &mu[..1], &nu, 1),
        Err(Error::Dimension(_))
    ));
}

#[test]
fn parity_pattern() {
    let basis = shared_basis(2, 4, DEFAULT_MAX_BASIS).unwrap();
    let blk = parity_block(&basis, 1).unwrap();
    assert_eq!(blk.dim, 6);
    let mut present = vec![vec![false; 6]; 6];
    for e in &blk.entries {
        present[e.row][e.col] = true;
        let sum = basis.get(e.row).add(basis.get(e.col));
        assert_eq!(basis.get(e.coord).double(), sum);
    }
    for a in 0..6 {
        for b in a..6 {
            let even = basis
                .get(a)
                .add(basis.get(b))
                .exponents()
                .iter()
                .all(|e| e % 2 == 0);
            assert_eq!(present[a][b], even, "({a},{b})");
        }
    }
}

#[test]
fn parity_block_contains_first_moment_matrix() {
    let (l, mu, nu, mut rng) = instance(2, 2, 6);
    let pi = random_coupling(&mu, &nu, &mut rng);
    let p = build_combined(&l, &mu, &nu, 1).unwrap();
    let z = MomentVector::from_atoms(p.basis.clone(), &[(1.0, &pi)]).unwrap();
    let big = p.blocks[0].eval(z.values());
    let m1 = moment_matrix(&z, &[], 1).unwrap();
    // rows {1, pi_ij^2} of the parity block reproduce M_1(z)
    let nv = 4;
    let mut idx = vec![0];
    for v in 0..nv {
        idx.push(p.basis.position_of_factors(&[v, v]).unwrap());
    }
    for (a, &ia) in idx.iter().enumerate() {
        for (b, &ib) in idx.iter().enumerate() {
            assert!((big[(ia, ib)] - m1[(a, b)]).abs() < 1e-15);
        }
    }
}

#[test]
fn moment_matrix_of_dirac() {
    let basis = shared_basis(1, 4, DEFAULT_MAX_BASIS).unwrap();
    let z = MomentVector::from_atoms(basis, &[(1.0, &[0.5])]).unwrap();
    let m = moment_matrix(&z, &[], 1).unwrap();
    let want = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 0.25]);
    assert!((&m - &want).norm() < 1e-15);
    let g = [(MultiIndex::unit(1, 0), 1.0)];
    let m = moment_matrix(&z, &g, 1).unwrap();
    let want = DMatrix::from_row_slice(2, 2, &[0.5, 0.25, 0.25, 0.125]);
    assert!((&m - &want).norm() < 1e-15);
    assert!(moment_matrix(&z, &[(MultiIndex::new(vec![2]), 1.0)], 1).is_ok());
    assert!(matches!(
        moment_matrix(&z, &[(MultiIndex::new(vec![3]), 1.0)], 2),
        Err(Error::OutOfBasis(_))
    ));
}

#[test]
fn moment_matrix_matches_double_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let basis = shared_basis(2, 2, DEFAULT_MAX_BASIS).unwrap();
    let vals: Vec<f64> = (0..basis.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let z = MomentVector::new(basis.clone(), vals.clone()).unwrap();
    let m = moment_matrix(&z, &[], 1).unwrap();
    for a in 0..3 {
        for b in 0..3 {
            let ea = basis.get(a).exponents();
            let eb = basis.get(b).exponents();
            let sum: Vec<u32> = ea.iter().zip(eb).map(|(x, y)| x + y).collect();
            let pos = basis
                .entries()
                .iter()
                .position(|e| e.exponents() == sum.as_slice())
                .unwrap();
            assert_eq!(m[(a, b)], vals[pos]);
        }
    }
}

#[test]
fn reduced_matrix_drops_lower_degrees() {
    let (_, mu, nu, mut rng) = instance(2, 2, 7);
    let pi = random_coupling(&mu, &nu, &mut rng);
    let basis = shared_basis(4, 2, DEFAULT_MAX_BASIS).unwrap();
    let z = MomentVector::from_atoms(basis, &[(1.0, &pi)]).unwrap();
    let full = moment_matrix(&z, &[], 1).unwrap();
    let red = reduced_moment_matrix(&z, &[], 1, &mu, &nu).unwrap();
    assert_eq!(red.nrows(), 4);
    assert!((&red - full.view((1, 1), (4, 4))).norm() < 1e-15);
}

#[test]
fn reduced_matrix_needs_marginals() {
    let (_, mu, nu, mut rng) = instance(2, 2, 8);
    let mut pi = random_coupling(&mu, &nu, &mut rng);
    pi[0] += 1e-3;
    let basis = shared_basis(4, 2, DEFAULT_MAX_BASIS).unwrap();
    let z = MomentVector::from_atoms(basis, &[(1.0, &pi)]).unwrap();
    assert!(matches!(
        reduced_moment_matrix(&z, &[], 1, &mu, &nu),
        Err(Error::Precondition(_))
    ));
}

#[test]
fn reduced_and_full_agree_on_psd_for_coupling_measures() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let basis = shared_basis(4, 4, DEFAULT_MAX_BASIS).unwrap();
    for _ in 0..20 {
        let mu = random_weights(2, &mut rng);
        let nu = random_weights(2, &mut rng);
        let atoms: Vec<(f64, Vec<f64>)> = (0..3)
            .map(|_| (rng.gen_range(0.1..1.0), random_coupling(&mu, &nu, &mut rng)))
            .collect();
        let tot: f64 = atoms.iter().map(|a| a.0).sum();
        let refs: Vec<(f64, &[f64])> = atoms.iter().map(|(w, x)| (w / tot, x.as_slice())).collect();
        let z = MomentVector::from_atoms(basis.clone(), &refs).unwrap();
        for subset in [vec![], vec![0], vec![1, 2], vec![0, 1, 3]] {
            let d = subset.len().div_ceil(2);
            let shift = MultiIndex::from_factors(4, &subset);
            let full = moment_matrix(&z, &[(shift, 1.0)], 2 - d).unwrap();
            let red = reduced_moment_matrix(&z, &subset, 2, &mu, &nu).unwrap();
            let min_full = full.symmetric_eigenvalues().min();
            let min_red = red.symmetric_eigenvalues().min();
            assert_eq!(min_full > -1e-10, min_red > -1e-10);
        }
    }
}

#[test]
fn reduced_quadratic_form_lifts_through_multinomial_weights() {
    // Under the marginal conditions a polynomial of degree <= t evaluated on
    // couplings equals a homogeneous one of degree t, since sum pi_ij = 1.
    // The reduced form at the homogenized coefficients matches the full form.
    let (_, mu, nu, mut rng) = instance(2, 2, 12);
    let pi = random_coupling(&mu, &nu, &mut rng);
    let pi2 = random_coupling(&mu, &nu, &mut rng);
    let basis = shared_basis(4, 2, DEFAULT_MAX_BASIS).unwrap();
    let z = MomentVector::from_atoms(basis, &[(0.5, &pi), (0.5, &pi2)]).unwrap();
    let full = moment_matrix(&z, &[], 1).unwrap();
    let red = reduced_moment_matrix(&z, &[], 1, &mu, &nu).unwrap();
    let c: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
    // c0 + sum c_v pi_v = sum (c0 + c_v) pi_v
    let h: Vec<f64> = (0..4).map(|v| c[0] + c[v + 1]).collect();
    let cf = nalgebra::DVector::from_vec(c);
    let hv = nalgebra::DVector::from_vec(h);
    let a = (cf.transpose() * &full * &cf)[(0, 0)];
    let b = (hv.transpose() * &red * &hv)[(0, 0)];
    assert!((a - b).abs() < 1e-12);
    assert_eq!(
        crate::moment_index::multinomial_weight(&MultiIndex::new(vec![1, 1, 0, 0])).unwrap(),
        2
    );
}

#[test]
fn p_and_q_maps() {
    let (l, mu, nu, mut rng) = instance(2, 2, 13);
    let pi = random_coupling(&mu, &nu, &mut rng);
    let basis = shared_basis(4, 2, DEFAULT_MAX_BASIS).unwrap();
    let z = MomentVector::from_atoms(basis, &[(1.0, &pi)]).unwrap();
    let q = extend_q(&z).unwrap();
    assert_eq!(q.degree(), 4);
    let back = project_p(&q).unwrap();
    assert_eq!(back.values(), z.values());
    // Q of a coupling's moments is the symmetric square-root measure, which
    // is feasible for the level-2 Putinar problem with the same objective.
    let p = build_putinar(&l, &mu, &nu, 2).unwrap();
    let rep = p.evaluate(q.values());
    assert!(rep.max_equality_residual < 1e-12);
    assert!(rep.min_block_eigenvalue > -1e-10);
    assert!((rep.objective - gw_objective(&l, &pi)).abs() < 1e-12);
    let odd = shared_basis(4, 3, DEFAULT_MAX_BASIS).unwrap();
    assert!(project_p(&MomentVector::zeros(odd)).is_err());
}

#[test]
fn putinar_square_root_moments_feasible() {
    let (l, mu, nu, mut rng) = instance(2, 3, 14);
    let pi = random_coupling(&mu, &nu, &mut rng);
    let t: Vec<f64> = pi.iter().map(|x| x.sqrt()).collect();
    let p = build_putinar(&l, &mu, &nu, 2).unwrap();
    let z = MomentVector::from_atoms(p.basis.clone(), &[(1.0, &t)]).unwrap();
    let rep = p.evaluate(z.values());
    assert!(rep.max_equality_residual < 1e-12);
    assert!(rep.min_block_eigenvalue > -1e-10);
    assert!((rep.objective - gw_objective(&l, &pi)).abs() < 1e-12);
}

#[test]
fn blocks_are_linear() {
    let (l, mu, nu, mut rng) = instance(2, 2, 15);
    let p = build_schmudgen(&l, &mu, &nu, 2).unwrap();
    let n = p.num_coords();
    let z: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let w: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let z2: Vec<f64> = z.iter().map(|x| 2.0 * x).collect();
    let zw: Vec<f64> = z.iter().zip(&w).map(|(a, b)| a + b).collect();
    for b in &p.blocks {
        assert!((b.eval(&z2) - b.eval(&z) * 2.0).norm() < 1e-12);
        assert!((b.eval(&zw) - b.eval(&z) - b.eval(&w)).norm() < 1e-12);
    }
    for r in &p.equalities {
        let lin = |v: &[f64]| r.eval(v) + r.rhs;
        assert!((lin(&zw) - lin(&z) - lin(&w)).abs() < 1e-12);
    }
}

#[test]
fn archimedean_identity() {
    let (l, mu, nu, mut rng) = instance(2, 3, 16);
    let p = build_putinar(&l, &mu, &nu, 2).unwrap();
    let z: Vec<f64> = (0..p.num_coords()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    // the degree-0 instances of the row sphere equalities
    let nv = p.shape.num_vars();
    let row_rows: Vec<&SparseRow> = (0..p.shape.m)
        .map(|i| {
            let first = p.basis.position_of_factors(&[i * 3, i * 3]).unwrap();
            p.equalities
                .iter()
                .find(|r| r.terms.len() == 4 && r.terms.iter().any(|t| t.0 == 0) && r.terms.iter().any(|t| t.0 == first))
                .unwrap()
        })
        .collect();
    let lhs: f64 = row_rows.iter().map(|r| r.eval(&z)).sum();
    let squares: f64 = (0..nv)
        .map(|v| z[p.basis.position_of_factors(&[v, v]).unwrap()])
        .sum();
    assert!((lhs - (z[0] - squares)).abs() < 1e-12);
}

#[test]
fn sdpa_round_trip() {
    let (l, mu, nu, mut rng) = instance(2, 2, 17);
    let pi = random_coupling(&mu, &nu, &mut rng);
    for kind in [HierarchyKind::Schmudgen, HierarchyKind::FirstLevelDnn] {
        let p = build(kind, &l, &mu, &nu, 1, &Limits::default()).unwrap();
        let text = write_sdpa(&p);
        let parsed = read_sdpa(&text).unwrap();
        assert_eq!(parsed.c.len(), p.num_coords());
        let z = MomentVector::from_atoms(p.basis.clone(), &[(1.0, &pi)]).unwrap();
        assert!((parsed.objective(z.values()) - p.objective_value(z.values())).abs() < 1e-12);
        let blocks = parsed.slack_blocks(z.values());
        assert_eq!(blocks.len(), p.blocks.len() + 1);
        for (k, b) in p.blocks.iter().enumerate() {
            assert!((&blocks[k] - b.eval(z.values())).norm() < 1e-12);
        }
        let lp = blocks.last().unwrap();
        for i in 0..lp.nrows() {
            assert!(lp[(i, i)] > -1e-12);
        }
    }
}

#[test]
fn hierarchy_kind_names_round_trip() {
    for k in [
        HierarchyKind::Schmudgen,
        HierarchyKind::Putinar,
        HierarchyKind::Combined,
        HierarchyKind::FirstLevelDnn,
    ] {
        assert_eq!(k.name().parse::<HierarchyKind>().unwrap(), k);
        let json = serde_json::to_string(&k).unwrap();
        assert_eq!(json, format!("\"{}\"", k.name()));
    }
    assert!("bogus".parse::<HierarchyKind>().is_err());
}
