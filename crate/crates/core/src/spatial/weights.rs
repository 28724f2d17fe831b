use std::fmt;
use std::str::FromStr;

use nalgebra::{Complex, DMatrix};

use crate::error::{Error, Result};
use crate::line_list::{Edge, RegionTable};

/// How neighbor weights are derived from the region table.
#[derive(Debug, Clone, PartialEq)]
pub enum Scheme {
    /// Rook contiguity on integer grid coordinates.
    RookGrid,
    /// k nearest neighbors by Euclidean distance, symmetrized by max.
    Knn { k: usize },
    /// `w_ij = d_ij^-power` over all pairs.
    InverseDistance { power: f64 },
    /// Weights taken from an edge list (not symmetrized).
    ExplicitEdges(Vec<Edge>),
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scheme::RookGrid => write!(f, "rook"),
            Scheme::Knn { k } => write!(f, "knn:{k}"),
            Scheme::InverseDistance { power } => write!(f, "idw:{power}"),
            Scheme::ExplicitEdges(_) => write!(f, "edges"),
        }
    }
}

impl FromStr for Scheme {
    type Err = Error;

    /// Parses `rook`, `knn:K` or `idw:P`. Edge lists need a file and are
    /// built by the caller.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Input(format!("unknown weight scheme `{s}` (rook, knn:K, idw:P)"));
        match s.split_once(':') {
            None if s == "rook" => Ok(Scheme::RookGrid),
            Some(("knn", k)) => Ok(Scheme::Knn { k: k.parse().map_err(|_| bad())? }),
            Some(("idw", p)) => {
                let power: f64 = p.parse().map_err(|_| bad())?;
                if !(power.is_finite() && power > 0.0) {
                    return Err(bad());
                }
                Ok(Scheme::InverseDistance { power })
            }
            _ => Err(bad()),
        }
    }
}

/// Dense spatial weight matrix over a fixed region order.
///
/// Keeps the unstandardized weights alongside the working matrix so that
/// subsets can be re-standardized.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    region_ids: Vec<String>,
    base: DMatrix<f64>,
    weights: DMatrix<f64>,
    scheme: Scheme,
    row_standardized: bool,
}

fn standardize_rows(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    for i in 0..m.nrows() {
        let s: f64 = m.row(i).sum();
        if s > 0.0 {
            out.row_mut(i).iter_mut().for_each(|w| *w /= s);
        }
    }
    out
}

impl WeightMatrix {
    /// Wraps a raw nonnegative matrix with zero diagonal.
    pub fn from_dense(
        region_ids: Vec<String>,
        raw: DMatrix<f64>,
        scheme: Scheme,
        row_standardize: bool,
    ) -> Result<Self> {
        let n = region_ids.len();
        if raw.nrows() != n || raw.ncols() != n {
            return Err(Error::Input(format!("weight matrix is {}x{}, expected {n}x{n}", raw.nrows(), raw.ncols())));
        }
        for i in 0..n {
            if raw[(i, i)] != 0.0 {
                return Err(Error::Input(format!("self-link on region `{}`", region_ids[i])));
            }
        }
        if raw.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Input("weights must be finite and nonnegative".into()));
        }
        let weights = if row_standardize { standardize_rows(&raw) } else { raw.clone() };
        Ok(WeightMatrix { region_ids, base: raw, weights, scheme, row_standardized: row_standardize })
    }

    /// Rook contiguity on a `side x side` grid, cells numbered row-major.
    pub fn rook_grid(side: usize, row_standardize: bool) -> Self {
        let n = side * side;
        let mut raw = DMatrix::zeros(n, n);
        for r in 0..side {
            for c in 0..side {
                let i = r * side + c;
                if r + 1 < side {
                    raw[(i, i + side)] = 1.0;
                    raw[(i + side, i)] = 1.0;
                }
                if c + 1 < side {
                    raw[(i, i + 1)] = 1.0;
                    raw[(i + 1, i)] = 1.0;
                }
            }
        }
        let ids = (0..n).map(|i| format!("r{i:03}")).collect();
        Self::from_dense(ids, raw, Scheme::RookGrid, row_standardize).expect("grid weights are valid")
    }

    pub fn n(&self) -> usize {
        self.region_ids.len()
    }

    pub fn region_ids(&self) -> &[String] {
        &self.region_ids
    }

    pub fn scheme(&self) -> &Scheme {
        &self.scheme
    }

    pub fn is_row_standardized(&self) -> bool {
        self.row_standardized
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.weights[(i, j)]
    }

    /// Sum of all weights (S0).
    pub fn total(&self) -> f64 {
        self.weights.sum()
    }

    /// Nonzero entries of row `i`.
    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.weights.row(i).iter().copied().enumerate().filter(|&(_, w)| w != 0.0).collect::<Vec<_>>().into_iter()
    }

    pub fn row_standardize(&self) -> Self {
        WeightMatrix { weights: standardize_rows(&self.weights), row_standardized: true, ..self.clone() }
    }

    /// Restricts to the regions at `keep` (in that order), re-standardizing
    /// rows from the raw weights if this matrix is standardized.
    pub fn subset(&self, keep: &[usize]) -> Self {
        let base = DMatrix::from_fn(keep.len(), keep.len(), |i, j| self.base[(keep[i], keep[j])]);
        let weights = if self.row_standardized { standardize_rows(&base) } else { base.clone() };
        WeightMatrix {
            region_ids: keep.iter().map(|&i| self.region_ids[i].clone()).collect(),
            base,
            weights,
            scheme: self.scheme.clone(),
            row_standardized: self.row_standardized,
        }
    }

    /// Nonzero entries as `(src, dst, weight)` in row-major order.
    pub fn edge_list(&self) -> Vec<(&str, &str, f64)> {
        let n = self.n();
        let mut out = Vec::new();
        for i in 0..n {
            for j in 0..n {
                let w = self.weights[(i, j)];
                if w != 0.0 {
                    out.push((self.region_ids[i].as_str(), self.region_ids[j].as_str(), w));
                }
            }
        }
        out
    }

    pub fn eigenvalues(&self) -> Vec<Complex<f64>> {
        self.weights.clone().complex_eigenvalues().iter().copied().collect()
    }

    /// Open interval `(1/lambda_min, 1/lambda_max)` of admissible SAR
    /// parameters, from the real eigenvalues of W.
    pub fn admissible_interval(&self) -> Result<(f64, f64)> {
        let real: Vec<f64> = self.eigenvalues().iter().filter(|c| c.im.abs() < 1e-9).map(|c| c.re).collect();
        let max = real.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = real.iter().copied().fold(f64::INFINITY, f64::min);
        if !(max > 1e-12 && min < -1e-12) {
            return Err(Error::precondition(
                "weight matrix has no positive and negative real eigenvalue pair; SAR parameter undefined",
            ));
        }
        Ok((1.0 / min, 1.0 / max))
    }
}

fn euclid(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - b.0).hypot(a.1 - b.1)
}

/// Builds W for `regions` under `scheme`, in region-table order.
pub fn build_weight_matrix(regions: &RegionTable, scheme: &Scheme, row_standardize: bool) -> Result<WeightMatrix> {
    let n = regions.len();
    if n < 2 {
        return Err(Error::precondition("at least 2 regions are needed for spatial weights"));
    }
    let pts: Vec<(f64, f64)> = regions.regions().iter().map(|r| (r.x, r.y)).collect();
    let ids: Vec<String> = regions.ids().map(String::from).collect();
    let mut raw = DMatrix::zeros(n, n);
    match scheme {
        Scheme::RookGrid => {
            for (i, p) in pts.iter().enumerate() {
                if p.0.fract() != 0.0 || p.1.fract() != 0.0 {
                    return Err(Error::Input(format!(
                        "rook scheme needs integer grid coordinates; region `{}` is at ({}, {})",
                        ids[i], p.0, p.1
                    )));
                }
            }
            for i in 0..n {
                for j in 0..n {
                    let d = (pts[i].0 - pts[j].0).abs() + (pts[i].1 - pts[j].1).abs();
                    if d == 1.0 {
                        raw[(i, j)] = 1.0;
                    }
                }
            }
        }
        Scheme::Knn { k } => {
            let k = *k;
            if k == 0 || k >= n {
                return Err(Error::precondition(format!("knn needs 1 <= k < number of regions ({n}), got k = {k}")));
            }
            for i in 0..n {
                let mut order: Vec<usize> = (0..n).filter(|&j| j != i).collect();
                order.sort_by(|&a, &b| euclid(pts[i], pts[a]).total_cmp(&euclid(pts[i], pts[b])).then(a.cmp(&b)));
                for &j in &order[..k] {
                    raw[(i, j)] = 1.0;
                    raw[(j, i)] = 1.0;
                }
            }
        }
        Scheme::InverseDistance { power } => {
            for i in 0..n {
                for j in 0..n {
                    if i == j {
                        continue;
                    }
                    let d = euclid(pts[i], pts[j]);
                    if d == 0.0 {
                        return Err(Error::Input(format!(
                            "regions `{}` and `{}` share coordinates; inverse distance undefined",
                            ids[i], ids[j]
                        )));
                    }
                    raw[(i, j)] = d.powf(-power);
                }
            }
        }
        Scheme::ExplicitEdges(edges) => {
            for e in edges {
                let (Some(i), Some(j)) = (regions.position(&e.src), regions.position(&e.dst)) else {
                    return Err(Error::Input(format!("edge {} -> {} references an unknown region", e.src, e.dst)));
                };
                if i == j {
                    return Err(Error::Input(format!("self-link on region `{}`", e.src)));
                }
                raw[(i, j)] = e.weight;
            }
        }
    }
    WeightMatrix::from_dense(ids, raw, scheme.clone(), row_standardize)
}
