//! Finite metric measure spaces, CSV ingestion and the four-index cost tensor.

use std::path::Path;

use log::warn;
use nalgebra::DMatrix;

use crate::error::{Error, Result};

const WEIGHT_SUM_TOL: f64 = 1e-12;
const ASYMMETRY_TOL: f64 = 1e-9;

/// A finite metric space together with a probability vector on its points.
#[derive(Clone, Debug)]
pub struct MetricMeasureSpace {
    distances: DMatrix<f64>,
    weights: Vec<f64>,
    /// Index in the caller's input of every retained atom.
    original_index: Vec<usize>,
    warnings: Vec<String>,
}

impl MetricMeasureSpace {
    /// Validates and normalizes a distance matrix / weight vector pair.
    ///
    /// Asymmetric input is symmetrized, a nonzero diagonal is zeroed, weights
    /// are renormalized to sum to one and zero-mass atoms are dropped. Each of
    /// these repairs is recorded as a warning. Triangle-inequality violations
    /// are only warned about.
    pub fn new(distances: DMatrix<f64>, weights: Vec<f64>) -> Result<Self> {
        let m = distances.nrows();
        if m == 0 {
            return Err(Error::Invalid("a space needs at least one point".into()));
        }
        if distances.ncols() != m {
            return Err(Error::Dimension(format!(
                "distance matrix is {}x{}, expected square",
                m,
                distances.ncols()
            )));
        }
        if weights.len() != m {
            return Err(Error::Dimension(format!(
                "{} weights for {} points",
                weights.len(),
                m
            )));
        }
        let mut warnings = Vec::new();
        for (idx, d) in distances.iter().enumerate() {
            if !d.is_finite() {
                return Err(Error::Invalid(format!("non-finite distance at flat index {idx}")));
            }
            if *d < 0.0 {
                let (i, j) = (idx % m, idx / m);
                return Err(Error::Invalid(format!("negative distance {d} at ({i}, {j})")));
            }
        }
        for (i, w) in weights.iter().enumerate() {
            if !w.is_finite() || *w < 0.0 {
                return Err(Error::Invalid(format!("negative or non-finite weight {w} at {i}")));
            }
        }

        let scale = distances.amax().max(f64::MIN_POSITIVE);
        let asym = (&distances - distances.transpose()).amax();
        let mut d = distances.clone();
        if asym > 0.0 {
            d = (&distances + distances.transpose()) * 0.5;
            if asym > ASYMMETRY_TOL * scale {
                warnings.push(format!(
                    "distance matrix asymmetric by {asym:.3e}; symmetrized as (D + D^T)/2"
                ));
            }
        }
        if (0..m).any(|i| d[(i, i)] != 0.0) {
            warnings.push("nonzero diagonal in distance matrix forced to zero".into());
            for i in 0..m {
                d[(i, i)] = 0.0;
            }
        }

        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::Invalid("weights sum to zero".into()));
        }
        let keep: Vec<usize> = (0..m).filter(|&i| weights[i] > 0.0).collect();
        if keep.len() < m {
            warnings.push(format!("dropped {} zero-mass atoms", m - keep.len()));
        }
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            warnings.push(format!("weights summed to {total}; renormalized"));
        }
        let weights: Vec<f64> = keep.iter().map(|&i| weights[i] / total).collect();
        let distances = DMatrix::from_fn(keep.len(), keep.len(), |a, b| d[(keep[a], keep[b])]);

        let space = Self {
            distances,
            weights,
            original_index: keep,
            warnings,
        };
        let mut space = space;
        if let Some((i, j, k)) = space.triangle_violation() {
            space.warnings.push(format!(
                "triangle inequality violated at ({i}, {j}, {k}); continuing"
            ));
        }
        for w in &space.warnings {
            warn!("{w}");
        }
        Ok(space)
    }

    pub fn with_uniform_weights(distances: DMatrix<f64>) -> Result<Self> {
        let m = distances.nrows();
        Self::new(distances, vec![1.0 / m.max(1) as f64; m])
    }

    /// Pairwise Euclidean distances between rows of `points`.
    pub fn from_points(points: &[Vec<f64>], weights: Option<Vec<f64>>) -> Result<Self> {
        let m = points.len();
        if m == 0 {
            return Err(Error::Invalid("point cloud is empty".into()));
        }
        let dim = points[0].len();
        if let Some((row, p)) = points.iter().enumerate().find(|(_, p)| p.len() != dim) {
            return Err(Error::Dimension(format!(
                "point {row} has {} coordinates, expected {dim}",
                p.len()
            )));
        }
        let d = DMatrix::from_fn(m, m, |i, j| {
            points[i]
                .iter()
                .zip(&points[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
        });
        let w = weights.unwrap_or_else(|| vec![1.0 / m as f64; m]);
        Self::new(d, w)
    }

    pub fn size(&self) -> usize {
        self.weights.len()
    }

    pub fn distances(&self) -> &DMatrix<f64> {
        &self.distances
    }

    pub fn distance(&self, i: usize, k: usize) -> f64 {
        self.distances[(i, k)]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn original_index(&self) -> &[usize] {
        &self.original_index
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    fn triangle_violation(&self) -> Option<(usize, usize, usize)> {
        let m = self.size();
        let scale = self.distances.amax().max(1.0);
        for i in 0..m {
            for j in 0..m {
                for k in 0..m {
                    let lhs = self.distances[(i, k)];
                    let rhs = self.distances[(i, j)] + self.distances[(j, k)];
                    if lhs > rhs + 1e-12 * scale {
                        return Some((i, j, k));
                    }
                }
            }
        }
        None
    }
}

/// Reads a comma-separated numeric table. Lines starting with `#` are skipped.
pub fn read_csv_table(path: &Path) -> Result<Vec<Vec<f64>>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(source) => Error::Io {
                path: path.to_path_buf(),
                source,
            },
            other => Error::Parse {
                path: path.to_path_buf(),
                row: 0,
                col: 0,
                msg: format!("{other:?}"),
            },
        })?;
    let mut rows = Vec::new();
    for (r, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            row: r + 1,
            col: 0,
            msg: e.to_string(),
        })?;
        if rec.iter().all(|f| f.is_empty()) {
            continue;
        }
        let row = rec
            .iter()
            .enumerate()
            .map(|(c, field)| {
                field.parse::<f64>().map_err(|e| Error::Parse {
                    path: path.to_path_buf(),
                    row: r + 1,
                    col: c + 1,
                    msg: format!("'{field}': {e}"),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok(rows)
}

/// Reads a single-column weight file.
pub fn read_weights(path: &Path) -> Result<Vec<f64>> {
    let rows = read_csv_table(path)?;
    rows.into_iter()
        .enumerate()
        .map(|(r, row)| {
            if row.len() != 1 {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    row: r + 1,
                    col: 2,
                    msg: format!("weight file must have one column, found {}", row.len()),
                });
            }
            if row[0] < 0.0 {
                return Err(Error::Invalid(format!(
                    "negative weight {} at row {} of {}",
                    row[0],
                    r + 1,
                    path.display()
                )));
            }
            Ok(row[0])
        })
        .collect()
}

pub fn load_point_cloud(path: &Path, weights: Option<&Path>) -> Result<MetricMeasureSpace> {
    let points = read_csv_table(path)?;
    if let Some(first) = points.first() {
        if let Some((r, row)) = points.iter().enumerate().find(|(_, p)| p.len() != first.len()) {
            return Err(Error::Dimension(format!(
                "{}: row {} has {} columns, expected {}",
                path.display(),
                r + 1,
                row.len(),
                first.len()
            )));
        }
    }
    let w = weights.map(read_weights).transpose()?;
    MetricMeasureSpace::from_points(&points, w)
}

pub fn load_distance_matrix(path: &Path, weights: Option<&Path>) -> Result<MetricMeasureSpace> {
    let rows = read_csv_table(path)?;
    let m = rows.len();
    if let Some((r, row)) = rows.iter().enumerate().find(|(_, row)| row.len() != m) {
        return Err(Error::Dimension(format!(
            "{}: row {} has {} columns but the matrix has {} rows",
            path.display(),
            r + 1,
            row.len(),
            m
        )));
    }
    let d = DMatrix::from_fn(m, m, |i, j| rows[i][j]);
    let w = match weights {
        Some(p) => read_weights(p)?,
        None => vec![1.0 / m.max(1) as f64; m],
    };
    MetricMeasureSpace::new(d, w)
}

/// Writes a distance matrix in the CSV layout accepted by [`load_distance_matrix`].
pub fn write_distance_matrix(path: &Path, d: &DMatrix<f64>) -> Result<()> {
    let mut out = String::new();
    for i in 0..d.nrows() {
        let row: Vec<String> = (0..d.ncols()).map(|j| format!("{:?}", d[(i, j)])).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// `L[ij,kl] = |d_X(x_i,x_k)^q - d_Y(y_j,y_l)^q|^p`, stored densely as an
/// `(mn) x (mn)` array with coupling variable `ij` at position `i * n + j`.
#[derive(Clone, Debug)]
pub struct CostTensor {
    m: usize,
    n: usize,
    p: f64,
    q: f64,
    entries: Vec<f64>,
    max_abs: f64,
}

impl CostTensor {
    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    pub fn num_vars(&self) -> usize {
        self.m * self.n
    }

    /// The largest entry magnitude, `K`.
    pub fn max_abs(&self) -> f64 {
        self.max_abs
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize, l: usize) -> f64 {
        let mn = self.m * self.n;
        self.entries[(i * self.n + j) * mn + k * self.n + l]
    }

    /// Entry addressed by flattened coupling variables.
    #[inline]
    pub fn at(&self, a: usize, b: usize) -> f64 {
        self.entries[a * self.m * self.n + b]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.entries
    }

    /// Builds a tensor from raw entries; used for synthetic costs in tests
    /// and the C interface.
    pub fn from_entries(m: usize, n: usize, entries: Vec<f64>) -> Result<Self> {
        if entries.len() != (m * n) * (m * n) {
            return Err(Error::Dimension(format!(
                "{} cost entries for m={m}, n={n}",
                entries.len()
            )));
        }
        let max_abs = entries.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
        Ok(Self {
            m,
            n,
            p: f64::NAN,
            q: f64::NAN,
            entries,
            max_abs,
        })
    }
}

pub fn build_cost_tensor(
    x: &MetricMeasureSpace,
    y: &MetricMeasureSpace,
    p: f64,
    q: f64,
) -> Result<CostTensor> {
    if !(p >= 1.0 && q >= 1.0) {
        return Err(Error::Invalid(format!("exponents must satisfy p, q >= 1 (got p={p}, q={q})")));
    }
    let (m, n) = (x.size(), y.size());
    let mn = m * n;
    let dxq = x.distances().map(|d| d.powf(q));
    let dyq = y.distances().map(|d| d.powf(q));
    let mut entries = vec![0.0; mn * mn];
    let mut max_abs = 0.0f64;
    for i in 0..m {
        for j in 0..n {
            let row = (i * n + j) * mn;
            for k in 0..m {
                for l in 0..n {
                    let v = (dxq[(i, k)] - dyq[(j, l)]).abs().powf(p);
                    if !v.is_finite() {
                        return Err(Error::Invalid(format!(
                            "cost entry overflowed at ({i}{j},{k}{l})"
                        )));
                    }
                    entries[row + k * n + l] = v;
                    max_abs = max_abs.max(v);
                }
            }
        }
    }
    Ok(CostTensor {
        m,
        n,
        p,
        q,
        entries,
        max_abs,
    })
}
