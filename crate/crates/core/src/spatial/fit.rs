use super::WeightMatrix;
use crate::error::{Error, Result};

/// One-way ANOVA variance components.
#[derive(Debug, Clone, PartialEq)]
pub struct IntraclassFit {
    /// Between-region variance, truncated at zero.
    pub tau2: f64,
    /// Within-region mean square.
    pub sigma_e2: f64,
    /// The moment estimate of `tau2` was negative and has been set to 0.
    pub tau2_truncated: bool,
    /// Within-region variance is zero.
    pub degenerate: bool,
    pub n: usize,
    pub n_regions: usize,
    /// Unbalanced-design average group size.
    pub n_tilde: f64,
}

impl IntraclassFit {
    pub fn icc(&self) -> f64 {
        let total = self.tau2 + self.sigma_e2;
        if total > 0.0 {
            self.tau2 / total
        } else {
            0.0
        }
    }
}

/// Method-of-moments variance components from values labelled by region.
///
/// Regions are identified by arbitrary `usize` labels. Every nonempty region
/// enters the ANOVA; at least two must hold two or more observations.
pub fn fit_intraclass(values: &[f64], regions: &[usize]) -> Result<IntraclassFit> {
    if values.len() != regions.len() {
        return Err(Error::Input("values and region labels differ in length".into()));
    }
    let n_labels = regions.iter().copied().max().map_or(0, |m| m + 1);
    let mut count = vec![0usize; n_labels];
    let mut sum = vec![0.0; n_labels];
    for (&v, &r) in values.iter().zip(regions) {
        count[r] += 1;
        sum[r] += v;
    }
    let usable = count.iter().filter(|&&c| c >= 2).count();
    if usable < 2 {
        return Err(Error::precondition(format!(
            "variance components need at least 2 regions with 2 or more observations, found {usable}"
        )));
    }
    let mean: Vec<f64> = sum.iter().zip(&count).map(|(s, &c)| if c > 0 { s / c as f64 } else { 0.0 }).collect();
    let n = values.len();
    let groups = count.iter().filter(|&&c| c > 0).count();
    let grand = values.iter().sum::<f64>() / n as f64;

    let ss_within: f64 = values.iter().zip(regions).map(|(v, &r)| (v - mean[r]).powi(2)).sum();
    let ss_between: f64 =
        count.iter().zip(&mean).filter(|(&c, _)| c > 0).map(|(&c, m)| c as f64 * (m - grand).powi(2)).sum();

    let ms_within = ss_within / (n - groups) as f64;
    let ms_between = ss_between / (groups - 1) as f64;
    let nf = n as f64;
    let sum_sq: f64 = count.iter().map(|&c| (c * c) as f64).sum();
    let n_tilde = (nf - sum_sq / nf) / (groups - 1) as f64;
    let raw = (ms_between - ms_within) / n_tilde;

    Ok(IntraclassFit {
        tau2: raw.max(0.0),
        sigma_e2: ms_within,
        tau2_truncated: raw < 0.0,
        degenerate: ms_within == 0.0,
        n,
        n_regions: groups,
        n_tilde,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SarFit {
    pub rho: f64,
    pub log_likelihood: f64,
    /// Admissible open interval searched.
    pub interval: (f64, f64),
    pub grid_points: usize,
}

pub const RHO_GRID_STEP: f64 = 1e-3;

fn centered(values: &[f64]) -> Vec<f64> {
    let m = values.iter().sum::<f64>() / values.len() as f64;
    values.iter().map(|v| v - m).collect()
}

/// Terms reused across the grid: eigenvalues, `e'e`, `e'We`, `(We)'(We)`.
struct Profile {
    eig: Vec<nalgebra::Complex<f64>>,
    ee: f64,
    e_we: f64,
    we_we: f64,
    n: f64,
}

impl Profile {
    fn new(means: &[f64], w: &WeightMatrix) -> Self {
        let e = nalgebra::DVector::from_vec(centered(means));
        let we = w.matrix() * &e;
        Profile { eig: w.eigenvalues(), ee: e.dot(&e), e_we: e.dot(&we), we_we: we.dot(&we), n: means.len() as f64 }
    }

    fn eval(&self, rho: f64) -> Option<f64> {
        let mut log_det = 0.0;
        for l in &self.eig {
            let m = (nalgebra::Complex::new(1.0, 0.0) - l * rho).norm();
            if m < 1e-12 {
                return None;
            }
            log_det += m.ln();
        }
        let sse = self.ee - 2.0 * rho * self.e_we + rho * rho * self.we_we;
        if !(sse > 0.0) {
            return None;
        }
        Some(log_det - 0.5 * self.n * sse.ln())
    }
}

/// Concentrated SAR-error log likelihood (up to a constant) at `rho`:
/// `log|I - rho W| - (n/2) log(e'(I - rho W)'(I - rho W)e)` for centered `e`.
pub fn sar_profile_log_likelihood(rho: f64, means: &[f64], w: &WeightMatrix) -> Option<f64> {
    Profile::new(means, w).eval(rho)
}

/// Grid-search maximum likelihood for the SAR parameter of regional means.
///
/// `w` must be row-standardized. The grid holds every multiple of 0.001
/// strictly inside the admissible interval; singular points are skipped.
pub fn fit_sar_rho(means: &[f64], w: &WeightMatrix) -> Result<SarFit> {
    if !w.is_row_standardized() {
        return Err(Error::precondition("SAR fit needs a row-standardized weight matrix"));
    }
    if means.len() != w.n() {
        return Err(Error::Input(format!("{} regional means for a {}-region weight matrix", means.len(), w.n())));
    }
    if means.len() < 4 {
        return Err(Error::precondition("SAR fit needs at least 4 regions"));
    }
    let interval = w.admissible_interval()?;
    let profile = Profile::new(means, w);
    if !(profile.ee > 0.0) {
        return Err(Error::Degenerate("regional means are constant".into()));
    }
    let lo = (interval.0 / RHO_GRID_STEP).floor() as i64 + 1;
    let hi = (interval.1 / RHO_GRID_STEP).ceil() as i64 - 1;
    let mut best: Option<(f64, f64)> = None;
    let mut grid_points = 0;
    for k in lo..=hi {
        let rho = k as f64 * RHO_GRID_STEP;
        // Eigenvalues carry rounding error; keep clear of the singular ends.
        if rho <= interval.0 + 1e-9 || rho >= interval.1 - 1e-9 {
            continue;
        }
        grid_points += 1;
        if let Some(ll) = profile.eval(rho) {
            if best.is_none_or(|(_, b)| ll > b) {
                best = Some((rho, ll));
            }
        }
    }
    let (rho, log_likelihood) = best.ok_or_else(|| Error::Degenerate("no evaluable grid point for rho".into()))?;
    Ok(SarFit { rho, log_likelihood, interval, grid_points })
}
