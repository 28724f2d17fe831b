use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use super::{true_mean, GroupAssignment, SimConfig};
use crate::error::Result;
use crate::rank_tests::Adjustment;

/// Per-replicate results behind an [`McReport`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicateOutcome {
    pub rep: usize,
    pub population_mean: f64,
    pub naive_mean: f64,
    pub weighted_mean: f64,
    /// `s / sqrt(n)`.
    pub naive_se: f64,
    /// Naive mean's SE with the correlation-only effective size.
    pub naive_se_adjusted: f64,
    /// `s_w / sqrt(n)`.
    pub weighted_se: f64,
    /// `s_w / sqrt(n_eff)`.
    pub weighted_se_adjusted: f64,
    pub p_naive: f64,
    pub p_ess: f64,
    pub p_perm: f64,
    pub rho_hat: f64,
    pub tau2_hat: f64,
    pub sigma_e2_hat: f64,
    pub regions_covered: usize,
    pub kish_n_eff: f64,
    pub n_eff: f64,
}

/// Sampling behaviour of one estimator, naive versus weighted.
///
/// Bias, RMSE and coverage are measured against `true_value`, the mean of the
/// outcome model; `empirical_se` is the standard deviation of the estimates
/// across replicates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimatorSummary {
    pub name: String,
    pub true_value: f64,
    pub mean_naive: f64,
    pub mean_weighted: f64,
    pub bias_naive: f64,
    pub bias_weighted: f64,
    pub bias_naive_mc_se: f64,
    pub bias_weighted_mc_se: f64,
    pub rmse_naive: f64,
    pub rmse_weighted: f64,
    pub empirical_se_naive: f64,
    pub empirical_se_weighted: f64,
    pub mean_estimated_se_naive: f64,
    pub mean_estimated_se_weighted: f64,
    pub mean_adjusted_se_naive: f64,
    pub mean_adjusted_se_weighted: f64,
    pub coverage_naive: f64,
    pub coverage_weighted: f64,
    pub coverage_weighted_adjusted: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RejectionRate {
    pub variant: Adjustment,
    pub rejections: usize,
    pub rate: f64,
    /// `sqrt(r (1 - r) / reps)`.
    pub mc_se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TestSummary {
    pub nominal_alpha: f64,
    pub group_assignment: GroupAssignment,
    pub rejection_rate_naive: f64,
    /// Rate of the permutation test valid for the grouping.
    pub rejection_rate_adjusted: f64,
    pub adjusted_variant: Adjustment,
    pub variants: Vec<RejectionRate>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitSummary {
    pub mean_rho_hat: f64,
    pub mean_tau2_hat: f64,
    pub mean_sigma_e2_hat: f64,
    pub mean_regions_covered: f64,
    pub mean_kish_n_eff: f64,
    pub mean_n_eff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McReport {
    pub reps: usize,
    pub seed: u64,
    pub config: SimConfig,
    pub estimators: Vec<EstimatorSummary>,
    pub tests: TestSummary,
    pub fit: FitSummary,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (mut s, mut k) = (0.0, 0usize);
    for x in v {
        s += x;
        k += 1;
    }
    s / k as f64
}

fn sd(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v.iter().copied());
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

fn rate(variant: Adjustment, p: impl Iterator<Item = f64>, alpha: f64, reps: usize) -> RejectionRate {
    let rejections = p.filter(|&p| p <= alpha).count();
    let rate = rejections as f64 / reps as f64;
    RejectionRate { variant, rejections, rate, mc_se: (rate * (1.0 - rate) / reps as f64).sqrt() }
}

impl McReport {
    pub fn aggregate(config: &SimConfig, outcomes: &[ReplicateOutcome]) -> McReport {
        let reps = outcomes.len();
        let truth = true_mean(config);
        let z = Normal::standard().inverse_cdf(1.0 - config.alpha / 2.0);
        let naive: Vec<f64> = outcomes.iter().map(|o| o.naive_mean).collect();
        let weighted: Vec<f64> = outcomes.iter().map(|o| o.weighted_mean).collect();
        let covered = |est: fn(&ReplicateOutcome) -> f64, se: fn(&ReplicateOutcome) -> f64| {
            mean(outcomes.iter().map(|o| f64::from(u8::from((est(o) - truth).abs() <= z * se(o)))))
        };
        let rmse = |v: &[f64]| mean(v.iter().map(|x| (x - truth).powi(2))).sqrt();
        let (sd_n, sd_w) = (sd(&naive), sd(&weighted));
        let estimator = EstimatorSummary {
            name: "outcome_mean".into(),
            true_value: truth,
            mean_naive: mean(naive.iter().copied()),
            mean_weighted: mean(weighted.iter().copied()),
            bias_naive: mean(naive.iter().map(|x| x - truth)),
            bias_weighted: mean(weighted.iter().map(|x| x - truth)),
            bias_naive_mc_se: sd_n / (reps as f64).sqrt(),
            bias_weighted_mc_se: sd_w / (reps as f64).sqrt(),
            rmse_naive: rmse(&naive),
            rmse_weighted: rmse(&weighted),
            empirical_se_naive: sd_n,
            empirical_se_weighted: sd_w,
            mean_estimated_se_naive: mean(outcomes.iter().map(|o| o.naive_se)),
            mean_estimated_se_weighted: mean(outcomes.iter().map(|o| o.weighted_se)),
            mean_adjusted_se_naive: mean(outcomes.iter().map(|o| o.naive_se_adjusted)),
            mean_adjusted_se_weighted: mean(outcomes.iter().map(|o| o.weighted_se_adjusted)),
            coverage_naive: covered(|o| o.naive_mean, |o| o.naive_se),
            coverage_weighted: covered(|o| o.weighted_mean, |o| o.weighted_se),
            coverage_weighted_adjusted: covered(|o| o.weighted_mean, |o| o.weighted_se_adjusted),
        };

        let alpha = config.alpha;
        let perm_variant = match config.group_assignment {
            GroupAssignment::ByRegion => Adjustment::RegionPerm,
            GroupAssignment::WithinRegion => Adjustment::BlockPerm,
        };
        let variants = vec![
            rate(Adjustment::None, outcomes.iter().map(|o| o.p_naive), alpha, reps),
            rate(Adjustment::Ess, outcomes.iter().map(|o| o.p_ess), alpha, reps),
            rate(perm_variant, outcomes.iter().map(|o| o.p_perm), alpha, reps),
        ];
        let tests = TestSummary {
            nominal_alpha: alpha,
            group_assignment: config.group_assignment,
            rejection_rate_naive: variants[0].rate,
            rejection_rate_adjusted: variants[2].rate,
            adjusted_variant: perm_variant,
            variants,
        };
        let fit = FitSummary {
            mean_rho_hat: mean(outcomes.iter().map(|o| o.rho_hat)),
            mean_tau2_hat: mean(outcomes.iter().map(|o| o.tau2_hat)),
            mean_sigma_e2_hat: mean(outcomes.iter().map(|o| o.sigma_e2_hat)),
            mean_regions_covered: mean(outcomes.iter().map(|o| o.regions_covered as f64)),
            mean_kish_n_eff: mean(outcomes.iter().map(|o| o.kish_n_eff)),
            mean_n_eff: mean(outcomes.iter().map(|o| o.n_eff)),
        };
        McReport { reps, seed: config.seed, config: config.clone(), estimators: vec![estimator], tests, fit }
    }
}

pub const TRACE_HEADER: [&str; 6] = ["rep", "estimator", "naive", "weighted", "p_naive", "p_adjusted"];

/// Per-replicate trace CSV: one row per estimator and replicate. The p-value
/// columns carry the replicate's naive and permutation-adjusted test.
pub fn trace_csv(outcomes: &[ReplicateOutcome]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(TRACE_HEADER)?;
    for o in outcomes {
        w.write_record([
            o.rep.to_string(),
            "outcome_mean".to_string(),
            o.naive_mean.to_string(),
            o.weighted_mean.to_string(),
            o.p_naive.to_string(),
            o.p_perm.to_string(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| crate::error::Error::Input(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}
