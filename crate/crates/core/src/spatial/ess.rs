use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::WeightMatrix;
use crate::error::{Error, Result};

/// Two-level correlation model: a SAR field between regions plus
/// exchangeable noise within them.
///
/// Regional effects have covariance `tau2 * [(I - rho W)'(I - rho W)]^-1`;
/// individuals add independent noise with variance `sigma_e2`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialModel {
    pub rho: f64,
    pub tau2: f64,
    pub sigma_e2: f64,
    /// `[(I - rho W)'(I - rho W)]^-1`, the unit-scale regional structure.
    structure: DMatrix<f64>,
}

impl SpatialModel {
    pub fn new(w: &WeightMatrix, rho: f64, tau2: f64, sigma_e2: f64) -> Result<Self> {
        if !(tau2 >= 0.0 && sigma_e2 >= 0.0) {
            return Err(Error::precondition("variance components must be nonnegative"));
        }
        if rho != 0.0 {
            let (lo, hi) = w.admissible_interval()?;
            if !(rho > lo && rho < hi) {
                return Err(Error::precondition(format!(
                    "rho = {rho} outside the admissible interval ({lo:.6}, {hi:.6})"
                )));
            }
        }
        let n = w.n();
        let a = DMatrix::<f64>::identity(n, n) - w.matrix() * rho;
        let precision = a.transpose() * &a;
        let structure = precision
            .cholesky()
            .ok_or_else(|| Error::Degenerate(format!("I - rho W is singular at rho = {rho}")))?
            .inverse();
        Ok(SpatialModel { rho, tau2, sigma_e2, structure })
    }

    /// Independent regions: `rho = 0` on `n_regions` regions.
    pub fn independent(n_regions: usize, tau2: f64, sigma_e2: f64) -> Self {
        SpatialModel { rho: 0.0, tau2, sigma_e2, structure: DMatrix::identity(n_regions, n_regions) }
    }

    pub fn n_regions(&self) -> usize {
        self.structure.nrows()
    }

    pub fn structure(&self) -> &DMatrix<f64> {
        &self.structure
    }

    /// Covariance of the regional effects.
    pub fn region_sigma(&self) -> DMatrix<f64> {
        &self.structure * self.tau2
    }
}

/// Per-region sample totals feeding the effective sample size.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionTotals {
    pub count: Vec<usize>,
    pub weight_sum: Vec<f64>,
    pub weight_sq_sum: Vec<f64>,
}

impl RegionTotals {
    /// Unweighted observations.
    pub fn from_counts(count: &[usize]) -> Self {
        let f: Vec<f64> = count.iter().map(|&c| c as f64).collect();
        RegionTotals { count: count.to_vec(), weight_sum: f.clone(), weight_sq_sum: f }
    }

    /// Accumulates `weights[i]` into region `regions[i]`.
    pub fn from_weighted(n_regions: usize, regions: &[usize], weights: &[f64]) -> Self {
        let mut t = RegionTotals {
            count: vec![0; n_regions],
            weight_sum: vec![0.0; n_regions],
            weight_sq_sum: vec![0.0; n_regions],
        };
        for (&r, &w) in regions.iter().zip(weights) {
            t.count[r] += 1;
            t.weight_sum[r] += w;
            t.weight_sq_sum[r] += w * w;
        }
        t
    }

    pub fn n(&self) -> usize {
        self.count.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EssComponents {
    /// `(sum w)^2 / sum w^2`, ignoring correlation.
    pub kish_n_eff: f64,
    /// Correlation alone, as if all weights were equal.
    pub spatial_n_eff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EssReport {
    pub n: usize,
    pub n_eff: f64,
    pub deff: f64,
    pub components: EssComponents,
}

/// Variance-matching effective size `(sum w)^2 * vbar / (w' Omega w)`, where
/// `vbar` is the weight-averaged marginal variance and `Omega` the implied
/// individual covariance. With unit weights this is `N tr(Omega) / 1'Omega 1`.
/// Only region-level sums are used; `Omega` is never built.
fn variance_matching(t: &RegionTotals, m: &SpatialModel, use_weights: bool) -> f64 {
    let (sum, sq): (Vec<f64>, Vec<f64>) = if use_weights {
        (t.weight_sum.clone(), t.weight_sq_sum.clone())
    } else {
        let c: Vec<f64> = t.count.iter().map(|&c| c as f64).collect();
        (c.clone(), c)
    };
    let diag = m.structure.diagonal();
    let total: f64 = sum.iter().sum();
    let marginal: f64 = sum.iter().zip(diag.iter()).map(|(w, d)| w * (m.tau2 * d + m.sigma_e2)).sum();
    let wv = DVector::from_column_slice(&sum);
    let between = wv.dot(&(&m.structure * &wv));
    let quad = m.tau2 * between + m.sigma_e2 * sq.iter().sum::<f64>();
    total * marginal / quad
}

/// Effective sample size of a (possibly weighted) sample under `model`.
///
/// `n_eff` combines weighting and correlation in one variance-matching
/// ratio and is floored at 1. The Kish and correlation-only sizes are
/// reported as components.
pub fn effective_sample_size(totals: &RegionTotals, model: &SpatialModel) -> Result<EssReport> {
    let l = model.n_regions();
    if totals.count.len() != l || totals.weight_sum.len() != l || totals.weight_sq_sum.len() != l {
        return Err(Error::Input(format!("region totals cover {} regions, model has {l}", totals.count.len())));
    }
    let n = totals.n();
    if n == 0 {
        return Err(Error::precondition("all region counts are zero"));
    }
    if totals.weight_sum.iter().chain(&totals.weight_sq_sum).any(|w| *w < 0.0) {
        return Err(Error::Input("weights must be nonnegative".into()));
    }
    let sum_w: f64 = totals.weight_sum.iter().sum();
    let sum_w2: f64 = totals.weight_sq_sum.iter().sum();
    if !(sum_w > 0.0) {
        return Err(Error::precondition("total weight is zero"));
    }
    if model.tau2 == 0.0 && model.sigma_e2 == 0.0 {
        return Err(Error::Degenerate("model has zero variance".into()));
    }
    let nf = n as f64;
    let unit = totals.weight_sum == totals.weight_sq_sum;
    // Without regional variance the unit-weight ratio is N exactly; skip the
    // rounding of the general formula.
    let n_eff = if model.tau2 == 0.0 && unit { nf } else { variance_matching(totals, model, true).max(1.0) };
    let spatial = if model.tau2 == 0.0 { nf } else { variance_matching(totals, model, false).max(1.0) };
    Ok(EssReport {
        n,
        n_eff,
        deff: nf / n_eff,
        components: EssComponents { kish_n_eff: sum_w * sum_w / sum_w2, spatial_n_eff: spatial },
    })
}
