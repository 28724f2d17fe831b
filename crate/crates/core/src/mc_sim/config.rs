use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spatial::WeightMatrix;

/// Where the convenience-sampling propensity comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionChannel {
    /// The latent regional field itself, so coverage tracks the outcome.
    #[default]
    LatentField,
    /// A standard normal regional covariate unrelated to the outcome.
    IndependentCovariate,
}

/// How the two comparison groups are formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupAssignment {
    /// A random half of the regions forms group 1, fresh each replicate.
    #[default]
    ByRegion,
    /// Each individual joins group 1 with probability 1/2.
    WithinRegion,
}

fn d_grid_side() -> usize {
    6
}
fn d_region_population() -> usize {
    1000
}
fn d_rho() -> f64 {
    0.5
}
fn d_tau() -> f64 {
    0.5
}
fn d_sigma_e() -> f64 {
    0.5
}
fn d_mu() -> f64 {
    10.0
}
fn d_gamma() -> f64 {
    1.5
}
fn d_sample_size() -> usize {
    507
}
fn d_target_total_n() -> u64 {
    507
}
fn d_reps() -> usize {
    2000
}
fn d_seed() -> u64 {
    20_200_131
}
fn d_alpha() -> f64 {
    0.05
}
fn d_n_perm() -> usize {
    999
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    /// Regions form a `grid_side x grid_side` rook grid.
    #[serde(default = "d_grid_side")]
    pub grid_side: usize,
    #[serde(default = "d_region_population")]
    pub region_population: usize,
    #[serde(default = "d_rho")]
    pub rho: f64,
    #[serde(default = "d_tau")]
    pub tau: f64,
    #[serde(default = "d_sigma_e")]
    pub sigma_e: f64,
    #[serde(default = "d_mu")]
    pub mu: f64,
    #[serde(default)]
    pub beta: f64,
    #[serde(default = "d_gamma")]
    pub selection_gamma: f64,
    #[serde(default)]
    pub selection_channel: SelectionChannel,
    #[serde(default = "d_sample_size")]
    pub sample_size: usize,
    #[serde(default = "d_target_total_n")]
    pub target_total_n: u64,
    #[serde(default = "d_reps")]
    pub reps: usize,
    #[serde(default = "d_seed")]
    pub seed: u64,
    #[serde(default = "d_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub group_assignment: GroupAssignment,
    /// Relabelings per permutation test.
    #[serde(default = "d_n_perm")]
    pub n_perm: usize,
    /// Replace post-sampling weights with ones.
    #[serde(default)]
    pub force_unit_weights: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults deserialize")
    }
}

impl SimConfig {
    /// Parses JSON, then validates. Unknown fields and bad values name the
    /// offending field.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let config: SimConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner().to_string();
            // Unknown and missing fields are reported one level up.
            let field = inner
                .strip_prefix("unknown field `")
                .and_then(|rest| rest.split('`').next())
                .map(str::to_string)
                .unwrap_or(if path == "." { "<root>".to_string() } else { path });
            Error::Config { field, reason: inner }
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn n_regions(&self) -> usize {
        self.grid_side * self.grid_side
    }

    pub fn weight_matrix(&self) -> WeightMatrix {
        WeightMatrix::rook_grid(self.grid_side, true)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = |field: &str, v: f64| {
            if v.is_finite() {
                Ok(())
            } else {
                Err(Error::config(field, "must be finite"))
            }
        };
        if self.grid_side < 2 {
            return Err(Error::config("grid_side", "must be at least 2"));
        }
        if self.region_population < 1 {
            return Err(Error::config("region_population", "must be at least 1"));
        }
        for (f, v) in [
            ("rho", self.rho),
            ("tau", self.tau),
            ("sigma_e", self.sigma_e),
            ("mu", self.mu),
            ("beta", self.beta),
            ("selection_gamma", self.selection_gamma),
            ("alpha", self.alpha),
        ] {
            finite(f, v)?;
        }
        let (lo, hi) =
            self.weight_matrix().admissible_interval().map_err(|e| Error::config("grid_side", e.to_string()))?;
        if !(self.rho > lo && self.rho < hi) {
            return Err(Error::config("rho", format!("must lie in the admissible interval ({lo:.6}, {hi:.6})")));
        }
        if self.tau < 0.0 {
            return Err(Error::config("tau", "must be nonnegative"));
        }
        if self.sigma_e < 0.0 {
            return Err(Error::config("sigma_e", "must be nonnegative"));
        }
        let population = self.n_regions() * self.region_population;
        if self.sample_size < 3 || self.sample_size > population {
            return Err(Error::config("sample_size", format!("must lie in [3, {population}] (total population)")));
        }
        if self.target_total_n < 1 {
            return Err(Error::config("target_total_n", "must be at least 1"));
        }
        if self.reps < 1 {
            return Err(Error::config("reps", "must be at least 1"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::config("alpha", "must lie in (0, 1)"));
        }
        if self.n_perm < 1 {
            return Err(Error::config("n_perm", "must be at least 1"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::ErrorKind;

    #[test]
    fn defaults() {
        let c = SimConfig::default();
        assert_eq!((c.grid_side, c.sample_size, c.target_total_n, c.reps), (6, 507, 507, 2000));
        assert_eq!(c.alpha, 0.05);
        assert!(c.validate().is_ok());
        let round: SimConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(round, c);
    }

    #[test]
    fn field_level_errors() {
        let e = SimConfig::from_json(r#"{"rho": 1.5}"#).unwrap_err();
        assert!(matches!(&e, Error::Config { field, .. } if field == "rho"));
        assert_eq!(e.kind(), ErrorKind::Config);
        let e = SimConfig::from_json(r#"{"bogus": 1}"#).unwrap_err();
        assert!(matches!(&e, Error::Config { field, .. } if field == "bogus"));
        let e = SimConfig::from_json(r#"{"reps": 0}"#).unwrap_err();
        assert!(matches!(&e, Error::Config { field, .. } if field == "reps"));
        let e = SimConfig::from_json(r#"{"sample_size": 1000000}"#).unwrap_err();
        assert!(matches!(&e, Error::Config { field, .. } if field == "sample_size"));
        let e = SimConfig::from_json(r#"{"reps": "many"}"#).unwrap_err();
        assert!(matches!(&e, Error::Config { field, .. } if field == "reps"));
    }

    #[test]
    fn enums_parse() {
        let c = SimConfig::from_json(
            r#"{"selection_channel": "independent_covariate", "group_assignment": "within_region"}"#,
        )
        .unwrap();
        assert_eq!(c.selection_channel, SelectionChannel::IndependentCovariate);
        assert_eq!(c.group_assignment, GroupAssignment::WithinRegion);
    }
}
