//! Machine-readable run reports written by the command-line tool.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::certify::{Certified, SandwichReport};
use crate::error::{Error, Result};
use crate::sdpsolve::SolveResult;

pub const SCHEMA_VERSION: &str = "1.0.0";

/// JSON schema every [`RunReport`] validates against.
pub const REPORT_SCHEMA: &str = include_str!("../../../docs/report.schema.json");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputDigest {
    pub role: String,
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverDiagnostics {
    pub status: String,
    pub iterations: usize,
    pub primal_residual: Option<f64>,
    pub dual_residual: Option<f64>,
    pub gap: Option<f64>,
    pub dual_objective: Option<f64>,
    pub tol: f64,
    pub max_iter: usize,
    pub refined: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleDiagnostics {
    pub method: String,
    pub starts: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SandwichSummary {
    pub lower_bound: f64,
    pub oracle_value: f64,
    pub gap: f64,
    pub globally_optimal: bool,
}

impl From<&SandwichReport> for SandwichSummary {
    fn from(s: &SandwichReport) -> Self {
        Self {
            lower_bound: s.lower_bound,
            oracle_value: s.oracle_value,
            gap: s.gap,
            globally_optimal: s.globally_optimal,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: String,
    pub command: Vec<String>,
    pub inputs: Vec<InputDigest>,
    pub hierarchy: Option<String>,
    pub level: Option<usize>,
    pub p: f64,
    pub q: f64,
    pub m: usize,
    pub n: usize,
    pub seed: u64,
    pub lower_bound: Option<f64>,
    pub upper_bound: Option<f64>,
    pub distance: Option<f64>,
    /// Wall-clock seconds.
    pub time: f64,
    pub eig_ratio: Option<f64>,
    pub err_ratio: Option<f64>,
    pub solved: Option<bool>,
    /// Row-major `m x n` matrix.
    pub coupling: Option<Vec<Vec<f64>>>,
    pub solver: Option<SolverDiagnostics>,
    pub oracle: Option<OracleDiagnostics>,
    pub sandwich: Option<SandwichSummary>,
}

pub fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

impl RunReport {
    pub fn new(command: Vec<String>, p: f64, q: f64, m: usize, n: usize, seed: u64) -> Self {
        Self {
            schema_version: SCHEMA_VERSION.to_string(),
            command,
            inputs: Vec::new(),
            hierarchy: None,
            level: None,
            p,
            q,
            m,
            n,
            seed,
            lower_bound: None,
            upper_bound: None,
            distance: None,
            time: 0.0,
            eig_ratio: None,
            err_ratio: None,
            solved: None,
            coupling: None,
            solver: None,
            oracle: None,
            sandwich: None,
        }
    }

    pub fn record_solve(&mut self, res: &SolveResult, tol: f64, max_iter: usize) {
        self.hierarchy = Some(res.kind.name().to_string());
        self.level = Some(res.level);
        self.lower_bound = finite(res.objective);
        self.solver = Some(SolverDiagnostics {
            status: res.status.name().to_string(),
            iterations: res.iterations,
            primal_residual: finite(res.primal_residual),
            dual_residual: finite(res.dual_residual),
            gap: finite(res.gap),
            dual_objective: finite(res.dual_objective),
            tol,
            max_iter,
            refined: false,
        });
    }

    pub fn record_certificate(&mut self, c: &Certified) {
        let cert = &c.certificate;
        self.upper_bound = finite(cert.upper_bound);
        self.eig_ratio = finite(cert.eigenvalue_ratio);
        self.err_ratio = cert.error_ratio.and_then(finite);
        self.solved = Some(cert.solved);
        self.coupling = Some(c.coupling.to_rows());
        if let Some(s) = self.solver.as_mut() {
            s.refined = c.refined;
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json() + "\n").map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            row: e.line(),
            col: e.column(),
            msg: e.to_string(),
        })
    }

    /// One-paragraph human summary.
    pub fn summary(&self) -> String {
        let num = |x: Option<f64>| x.map_or("n/a".to_string(), |v| format!("{v:.9e}"));
        let mut out = String::new();
        if let (Some(h), Some(r)) = (&self.hierarchy, self.level) {
            out.push_str(&format!("relaxation   {h} level {r} ({}x{}, p={}, q={})\n", self.m, self.n, self.p, self.q));
        } else {
            out.push_str(&format!("instance     {}x{}, p={}, q={}\n", self.m, self.n, self.p, self.q));
        }
        if let Some(s) = &self.solver {
            out.push_str(&format!(
                "solver       {} after {} iterations (primal {}, dual {}, gap {})\n",
                s.status,
                s.iterations,
                num(s.primal_residual),
                num(s.dual_residual),
                num(s.gap)
            ));
        }
        if self.lower_bound.is_some() {
            out.push_str(&format!("lower bound  {}\n", num(self.lower_bound)));
        }
        if self.upper_bound.is_some() {
            out.push_str(&format!("upper bound  {}\n", num(self.upper_bound)));
        }
        if self.distance.is_some() {
            out.push_str(&format!("distance     {}\n", num(self.distance)));
        }
        if self.eig_ratio.is_some() || self.err_ratio.is_some() {
            out.push_str(&format!("eig ratio    {}\nerr ratio    {}\n", num(self.eig_ratio), num(self.err_ratio)));
        }
        if let Some(s) = self.solved {
            out.push_str(&format!("solved       {s}\n"));
        }
        if let Some(o) = &self.oracle {
            out.push_str(&format!("oracle       {} ({} starts)\n", o.method, o.starts));
        }
        if let Some(s) = &self.sandwich {
            out.push_str(&format!(
                "sandwich     gap {:.3e}, globally optimal {}\n",
                s.gap, s.globally_optimal
            ));
        }
        out.push_str(&format!("time         {:.3} s", self.time));
        out
    }
}

pub fn digest_file(role: &str, path: &Path) -> Result<InputDigest> {
    let bytes = std::fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(InputDigest {
        role: role.to_string(),
        path: path.display().to_string(),
        sha256: hex::encode(Sha256::digest(&bytes)),
    })
}
