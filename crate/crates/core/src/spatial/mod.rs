//! Spatial weights, Moran's I, the two-level SAR correlation model and the
//! effective sample sizes it implies.

mod ess;
mod fit;
mod moran;
mod weights;

pub use ess::{effective_sample_size, EssComponents, EssReport, RegionTotals, SpatialModel};
pub use fit::{fit_intraclass, fit_sar_rho, sar_profile_log_likelihood, IntraclassFit, SarFit, RHO_GRID_STEP};
pub use moran::{morans_i, MoranResult};
pub use weights::{build_weight_matrix, Scheme, WeightMatrix};

use crate::error::{Error, Result};

/// Fitted two-level model for a sample, with the pieces used to build it.
#[derive(Debug, Clone)]
pub struct FittedModel {
    pub intraclass: IntraclassFit,
    pub sar: SarFit,
    pub model: SpatialModel,
    /// Positions (in the full W) of the regions that carried data.
    pub regions: Vec<usize>,
    /// Row-standardized W restricted to those regions.
    pub weights: WeightMatrix,
}

impl FittedModel {
    /// Expands per-region totals over the full W to the fitted subset.
    pub fn restrict<T: Copy>(&self, full: &[T]) -> Vec<T> {
        self.regions.iter().map(|&r| full[r]).collect()
    }
}

/// Fits the two-level model to `values` observed in regions `region_of`
/// (positions in `w`). Variance components come from the one-way ANOVA; rho
/// from the SAR profile likelihood of regional means over the regions that
/// have data, with W restricted to them and re-standardized.
pub fn fit_model(values: &[f64], region_of: &[usize], w: &WeightMatrix) -> Result<FittedModel> {
    let l = w.n();
    let mut count = vec![0usize; l];
    let mut sum = vec![0.0; l];
    for (&v, &r) in values.iter().zip(region_of) {
        if r >= l {
            return Err(Error::Input(format!("region index {r} outside weight matrix")));
        }
        count[r] += 1;
        sum[r] += v;
    }
    let regions: Vec<usize> = (0..l).filter(|&r| count[r] > 0).collect();
    let intraclass = fit_intraclass(values, region_of)?;
    let sub = if w.is_row_standardized() { w.subset(&regions) } else { w.subset(&regions).row_standardize() };
    let means: Vec<f64> = regions.iter().map(|&r| sum[r] / count[r] as f64).collect();
    let sar = fit_sar_rho(&means, &sub)?;
    let model = SpatialModel::new(&sub, sar.rho, intraclass.tau2, intraclass.sigma_e2)?;
    Ok(FittedModel { intraclass, sar, model, regions, weights: sub })
}
