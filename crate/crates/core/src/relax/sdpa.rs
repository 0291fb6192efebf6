//! Sparse SDPA (`.dat-s`) export of a [`ConicProblem`], plus a small reader
//! used to cross-check exports.
//!
//! The moment coordinates become the SDPA free variables `x`. Every PSD
//! block maps to one SDP block; nonnegative coordinates and both sides of
//! every equality share a final diagonal (LP) block:
//! `a.x - b >= 0` and `-a.x + b >= 0`.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::DMatrix;

use super::ConicProblem;
use crate::error::{Error, Result};

pub fn write_sdpa(problem: &ConicProblem) -> String {
    let nvars = problem.num_coords();
    let lp_size = problem.nonneg.len() + 2 * problem.equalities.len();
    let mut sizes: Vec<i64> = problem.blocks.iter().map(|b| b.dim as i64).collect();
    if lp_size > 0 {
        sizes.push(-(lp_size as i64));
    }

    let mut out = String::new();
    let _ = writeln!(
        out,
        "\"gwsos {} relaxation, level {}, m={}, n={}",
        problem.kind, problem.level, problem.shape.m, problem.shape.n
    );
    let _ = writeln!(out, "{nvars}");
    let _ = writeln!(out, "{}", sizes.len());
    let _ = writeln!(
        out,
        "{}",
        sizes.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(" ")
    );
    let mut c = vec![0.0; nvars];
    for &(coord, a) in &problem.objective {
        c[coord] += a;
    }
    let _ = writeln!(
        out,
        "{}",
        c.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(" ")
    );

    // (matrix, block, i, j) -> value, summed, 1-based
    let mut entries: BTreeMap<(usize, usize, usize, usize), f64> = BTreeMap::new();
    for (k, block) in problem.blocks.iter().enumerate() {
        for e in &block.entries {
            *entries
                .entry((e.coord + 1, k + 1, e.row + 1, e.col + 1))
                .or_insert(0.0) += e.coef;
        }
    }
    if lp_size > 0 {
        let lp = problem.blocks.len() + 1;
        let mut pos = 1;
        for &coord in &problem.nonneg {
            *entries.entry((coord + 1, lp, pos, pos)).or_insert(0.0) += 1.0;
            pos += 1;
        }
        for row in &problem.equalities {
            for sign in [1.0, -1.0] {
                for &(coord, a) in &row.terms {
                    *entries.entry((coord + 1, lp, pos, pos)).or_insert(0.0) += sign * a;
                }
                if row.rhs != 0.0 {
                    *entries.entry((0, lp, pos, pos)).or_insert(0.0) += sign * row.rhs;
                }
                pos += 1;
            }
        }
    }
    for ((mat, blk, i, j), v) in entries {
        if v != 0.0 {
            let _ = writeln!(out, "{mat} {blk} {i} {j} {v:?}");
        }
    }
    out
}

/// A parsed sparse SDPA problem.
#[derive(Clone, Debug)]
pub struct SdpaProblem {
    pub c: Vec<f64>,
    pub block_sizes: Vec<i64>,
    /// `(matrix, block, i, j, value)`, 1-based as in the file.
    pub entries: Vec<(usize, usize, usize, usize, f64)>,
}

impl SdpaProblem {
    pub fn objective(&self, x: &[f64]) -> f64 {
        self.c.iter().zip(x).map(|(a, b)| a * b).sum()
    }

    /// `X_k = sum_i F_i x_i - F_0` for every block.
    pub fn slack_blocks(&self, x: &[f64]) -> Vec<DMatrix<f64>> {
        let mut blocks: Vec<DMatrix<f64>> = self
            .block_sizes
            .iter()
            .map(|&s| {
                let d = s.unsigned_abs() as usize;
                DMatrix::zeros(d, d)
            })
            .collect();
        for &(mat, blk, i, j, v) in &self.entries {
            let w = if mat == 0 { -v } else { v * x[mat - 1] };
            let b = &mut blocks[blk - 1];
            b[(i - 1, j - 1)] += w;
            if i != j {
                b[(j - 1, i - 1)] += w;
            }
        }
        blocks
    }
}

pub fn read_sdpa(text: &str) -> Result<SdpaProblem> {
    let mut lines = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('"') && !l.starts_with('*'));
    let mut next = |what: &str| {
        lines
            .next()
            .ok_or_else(|| Error::Invalid(format!("sdpa: missing {what}")))
    };
    let bad = |what: &str, l: &str| Error::Invalid(format!("sdpa: bad {what} line '{l}'"));
    let split = |l: &str| -> Vec<String> {
        l.split(|c: char| c.is_whitespace() || c == ',' || c == '{' || c == '}' || c == '(' || c == ')')
            .filter(|s| !s.is_empty())
            .map(str::to_owned)
            .collect()
    };

    let l = next("mDIM")?;
    let m: usize = split(l).first().and_then(|s| s.parse().ok()).ok_or_else(|| bad("mDIM", l))?;
    let l = next("nBLOCK")?;
    let nb: usize = split(l).first().and_then(|s| s.parse().ok()).ok_or_else(|| bad("nBLOCK", l))?;
    let l = next("block structure")?;
    let block_sizes = split(l)
        .iter()
        .take(nb)
        .map(|s| s.parse::<i64>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|_| bad("block structure", l))?;
    let l = next("objective")?;
    let c = split(l)
        .iter()
        .take(m)
        .map(|s| s.parse::<f64>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|_| bad("objective", l))?;
    if c.len() != m || block_sizes.len() != nb {
        return Err(Error::Invalid("sdpa: header length mismatch".into()));
    }
    let mut entries = Vec::new();
    for l in lines {
        let f = split(l);
        if f.len() < 5 {
            return Err(bad("entry", l));
        }
        let p = |k: usize| f[k].parse::<usize>().map_err(|_| bad("entry", l));
        let v: f64 = f[4].parse().map_err(|_| bad("entry", l))?;
        entries.push((p(0)?, p(1)?, p(2)?, p(3)?, v));
    }
    Ok(SdpaProblem {
        c,
        block_sizes,
        entries,
    })
}
