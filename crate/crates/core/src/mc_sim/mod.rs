//! Monte Carlo harness: synthetic populations with a SAR latent field,
//! convenience samples drawn with field-dependent propensity, and the naive
//! versus corrected analyses run on each.
//!
//! Replicate `r` draws everything from `rng::stream(seed, r)`, and replicate
//! outputs are aggregated in index order, so a report depends only on the
//! configuration.

mod config;
mod report;

pub use config::{GroupAssignment, SelectionChannel, SimConfig};
pub use report::{
    trace_csv, EstimatorSummary, FitSummary, McReport, RejectionRate, ReplicateOutcome, TestSummary, TRACE_HEADER,
};

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore};
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::design_weights::{case_weights, merge_strata, observed_counts, post_sampling_ratios, Normalization};
use crate::error::{Error, Result};
use crate::estimators::{mean_estimate, SeAdjustment};
use crate::rank_tests::{adjusted_test, group_values, mann_whitney, AdjustSpec, MwMode};
use crate::rng::{self, StreamRng};
use crate::spatial::{effective_sample_size, fit_model, fit_sar_rho, RegionTotals, WeightMatrix};

/// `u = tau (I - rho W)^-1 eps` with `eps` standard normal.
pub fn simulate_latent_field(w: &WeightMatrix, rho: f64, tau: f64, rng: &mut impl Rng) -> Result<Vec<f64>> {
    let n = w.n();
    let eps: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    if tau == 0.0 {
        return Ok(vec![0.0; n]);
    }
    let a = DMatrix::<f64>::identity(n, n) - w.matrix() * rho;
    let rhs = DVector::from_vec(eps) * tau;
    let u = a.lu().solve(&rhs).ok_or_else(|| Error::Degenerate(format!("I - rho W is singular at rho = {rho}")))?;
    Ok(u.iter().copied().collect())
}

/// Individuals of a synthetic population, stored region by region.
#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    pub region: Vec<usize>,
    pub group: Vec<usize>,
    pub outcome: Vec<f64>,
    /// Per-region selection score driving convenience sampling.
    pub score: Vec<f64>,
    /// Per-region population counts.
    pub sizes: Vec<usize>,
}

impl Population {
    pub fn len(&self) -> usize {
        self.outcome.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outcome.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.outcome.iter().sum::<f64>() / self.len() as f64
    }
}

/// `mu + beta g + u[region] + sigma_e e` for every individual.
pub fn simulate_population(config: &SimConfig, field: &[f64], rng: &mut impl Rng) -> Population {
    let l = field.len();
    let per = config.region_population;
    let score = match config.selection_channel {
        SelectionChannel::LatentField => field.to_vec(),
        SelectionChannel::IndependentCovariate => (0..l).map(|_| rng.sample::<f64, _>(StandardNormal)).collect(),
    };
    let region_group: Vec<usize> = match config.group_assignment {
        GroupAssignment::ByRegion => {
            let mut order: Vec<usize> = (0..l).collect();
            rand::seq::SliceRandom::shuffle(order.as_mut_slice(), rng);
            let mut g = vec![0; l];
            for &r in &order[..l / 2] {
                g[r] = 1;
            }
            g
        }
        GroupAssignment::WithinRegion => vec![0; l],
    };
    let total = l * per;
    let mut pop = Population {
        region: Vec::with_capacity(total),
        group: Vec::with_capacity(total),
        outcome: Vec::with_capacity(total),
        score,
        sizes: vec![per; l],
    };
    for (r, &u) in field.iter().enumerate() {
        for _ in 0..per {
            let g = match config.group_assignment {
                GroupAssignment::ByRegion => region_group[r],
                GroupAssignment::WithinRegion => usize::from(rng.random_bool(0.5)),
            };
            let e: f64 = rng.sample(StandardNormal);
            pop.region.push(r);
            pop.group.push(g);
            pop.outcome.push(config.mu + config.beta * g as f64 + u + config.sigma_e * e);
        }
    }
    pop
}

/// Draws `sample_size` individuals without replacement, one at a time. Each
/// draw picks a region with probability proportional to
/// `remaining_l * exp(gamma * score_l)`, then a uniform remaining individual
/// in it. Returns population indices in draw order.
pub fn convenience_sample(pop: &Population, config: &SimConfig, rng: &mut impl Rng) -> Result<Vec<usize>> {
    if config.sample_size > pop.len() {
        return Err(Error::precondition("sample size exceeds population"));
    }
    let l = pop.sizes.len();
    let top = pop.score.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let propensity: Vec<f64> = pop.score.iter().map(|s| (config.selection_gamma * (s - top)).exp()).collect();
    let mut pools: Vec<Vec<usize>> = Vec::with_capacity(l);
    let mut start = 0;
    for &size in &pop.sizes {
        pools.push((start..start + size).collect());
        start += size;
    }
    let mut drawn = Vec::with_capacity(config.sample_size);
    for _ in 0..config.sample_size {
        let weights: Vec<f64> = pools.iter().zip(&propensity).map(|(p, q)| p.len() as f64 * q).collect();
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::Degenerate("all selection weights are zero".into()));
        }
        let mut target = rng.random::<f64>() * total;
        let mut region = l - 1;
        for (r, &w) in weights.iter().enumerate() {
            if w > 0.0 && target < w {
                region = r;
                break;
            }
            target -= w;
        }
        // Guard against rounding past the last nonempty pool.
        while pools[region].is_empty() {
            region -= 1;
        }
        let pool = &mut pools[region];
        let k = rng.random_range(0..pool.len());
        drawn.push(pool.swap_remove(k));
    }
    Ok(drawn)
}

/// Expected share of group 1 in the population.
fn group_share(config: &SimConfig) -> f64 {
    match config.group_assignment {
        GroupAssignment::ByRegion => (config.n_regions() / 2) as f64 / config.n_regions() as f64,
        GroupAssignment::WithinRegion => 0.5,
    }
}

/// Population mean of the outcome model: `mu + beta * E[g]`.
pub fn true_mean(config: &SimConfig) -> f64 {
    config.mu + config.beta * group_share(config)
}

/// Shared per-experiment inputs.
struct Setup {
    w: WeightMatrix,
    ids: Vec<String>,
    required: BTreeMap<String, u64>,
    adjacency: WeightMatrix,
}

impl Setup {
    fn new(config: &SimConfig) -> Result<Self> {
        let w = config.weight_matrix();
        let ids = w.region_ids().to_vec();
        let table = crate::line_list::RegionTable::new(
            ids.iter()
                .enumerate()
                .map(|(i, id)| crate::line_list::Region {
                    region_id: id.clone(),
                    name: id.clone(),
                    population: config.region_population as u64,
                    x: (i % config.grid_side) as f64,
                    y: (i / config.grid_side) as f64,
                    age_distribution: None,
                    covariate: None,
                })
                .collect(),
        )?;
        let required = crate::design_weights::target_allocation(
            &crate::design_weights::DesignSpec::proportional(config.target_total_n),
            &table,
        )?;
        Ok(Setup { adjacency: WeightMatrix::rook_grid(config.grid_side, false), w, ids, required })
    }
}

fn run_replicate(config: &SimConfig, setup: &Setup, rep: usize) -> Result<ReplicateOutcome> {
    let mut rng: StreamRng = rng::stream(config.seed, rep as u64);
    let field = simulate_latent_field(&setup.w, config.rho, config.tau, &mut rng)?;
    let pop = simulate_population(config, &field, &mut rng);
    let idx = convenience_sample(&pop, config, &mut rng)?;
    let perm_seed = rng.next_u64();

    let y: Vec<f64> = idx.iter().map(|&i| pop.outcome[i]).collect();
    let region: Vec<usize> = idx.iter().map(|&i| pop.region[i]).collect();
    let group: Vec<usize> = idx.iter().map(|&i| pop.group[i]).collect();
    let n = y.len();
    let l = setup.w.n();

    // Post-sampling weights against the true populations.
    let weights = if config.force_unit_weights {
        vec![1.0; n]
    } else {
        let observed = observed_counts(region.iter().map(|&r| setup.ids[r].as_str()));
        let ratios = post_sampling_ratios(&setup.required, &observed)?;
        let ratios = merge_strata(&ratios, &setup.adjacency)?;
        case_weights(region.iter().map(|&r| setup.ids[r].as_str()), &ratios, Normalization::SumToN)?
    };

    let fitted = fit_model(&y, &region, &setup.w)?;
    let weighted_totals = RegionTotals::from_weighted(l, &region, &weights);
    let restrict = |t: &RegionTotals| RegionTotals {
        count: fitted.restrict(&t.count),
        weight_sum: fitted.restrict(&t.weight_sum),
        weight_sq_sum: fitted.restrict(&t.weight_sq_sum),
    };
    let ess_weighted = effective_sample_size(&restrict(&weighted_totals), &fitted.model)?;
    let ess_unit =
        effective_sample_size(&restrict(&RegionTotals::from_weighted(l, &region, &vec![1.0; n])), &fitted.model)?;

    let ones = vec![1.0; n];
    let naive = mean_estimate(&y, &ones, &SeAdjustment::Ess(ess_unit.clone()))?;
    let weighted = mean_estimate(&y, &weights, &SeAdjustment::Ess(ess_weighted.clone()))?;

    // Tests compare outcome between groups, ignoring weights.
    let groups = group_values(&y, &group, 2);
    if groups.iter().any(|g| g.is_empty()) {
        return Err(Error::precondition("a comparison group is empty in the sample"));
    }
    let naive_test = mann_whitney(&groups[0], &groups[1], MwMode::Auto)?;

    // Dependence for the tests is fitted on residuals from the group means.
    let group_mean: Vec<f64> = groups.iter().map(|g| g.iter().sum::<f64>() / g.len() as f64).collect();
    let resid: Vec<f64> = y.iter().zip(&group).map(|(v, &g)| v - group_mean[g]).collect();
    let resid_fit = fit_model(&resid, &region, &setup.w)?;
    let mut deff = [1.0; 2];
    for (g, d) in deff.iter_mut().enumerate() {
        let mut count = vec![0usize; l];
        for (&r, &gg) in region.iter().zip(&group) {
            if gg == g {
                count[r] += 1;
            }
        }
        let totals = RegionTotals::from_counts(&resid_fit.restrict(&count));
        *d = effective_sample_size(&totals, &resid_fit.model)?.deff.max(1.0);
    }
    let ess_test = adjusted_test(&groups, &AdjustSpec::Ess(&deff))?;

    // Observations are ordered by group inside `groups`; regions must follow.
    let regions_by_group: Vec<usize> =
        (0..2).flat_map(|g| region.iter().zip(&group).filter(move |(_, &gg)| gg == g).map(|(&r, _)| r)).collect();
    let perm_spec = match config.group_assignment {
        GroupAssignment::ByRegion => {
            AdjustSpec::RegionPerm { regions: &regions_by_group, n_perm: config.n_perm, seed: perm_seed }
        }
        GroupAssignment::WithinRegion => {
            AdjustSpec::BlockPerm { regions: &regions_by_group, n_perm: config.n_perm, seed: perm_seed }
        }
    };
    let perm_test = adjusted_test(&groups, &perm_spec)?;

    Ok(ReplicateOutcome {
        rep,
        population_mean: pop.mean(),
        naive_mean: naive.value,
        weighted_mean: weighted.value,
        naive_se: naive.se_naive,
        naive_se_adjusted: naive.se_adjusted,
        weighted_se: weighted.se_naive,
        weighted_se_adjusted: weighted.se_adjusted,
        p_naive: naive_test.p_naive,
        p_ess: ess_test.p_adjusted.expect("ess sets p_adjusted"),
        p_perm: perm_test.p_adjusted.expect("permutation sets p_adjusted"),
        rho_hat: fitted.sar.rho,
        tau2_hat: fitted.intraclass.tau2,
        sigma_e2_hat: fitted.intraclass.sigma_e2,
        regions_covered: fitted.regions.len(),
        kish_n_eff: ess_weighted.components.kish_n_eff,
        n_eff: ess_weighted.n_eff,
    })
}

/// Every replicate of `config`, in index order.
pub fn run_replicates(config: &SimConfig) -> Result<Vec<ReplicateOutcome>> {
    config.validate()?;
    let setup = Setup::new(config)?;
    let outcomes: Vec<Result<ReplicateOutcome>> = (0..config.reps)
        .into_par_iter()
        .map(|rep| run_replicate(config, &setup, rep).map_err(|e| Error::Replicate { rep, source: Box::new(e) }))
        .collect();
    outcomes.into_iter().collect()
}

/// Runs the experiment and aggregates it.
pub fn run_experiment(config: &SimConfig) -> Result<McReport> {
    let outcomes = run_replicates(config)?;
    Ok(McReport::aggregate(config, &outcomes))
}

/// Fitted SAR parameter of directly observed fields on a rook grid, one per
/// replicate.
pub fn sar_recovery(grid_side: usize, rho: f64, tau: f64, reps: usize, seed: u64) -> Result<Vec<f64>> {
    let w = WeightMatrix::rook_grid(grid_side, true);
    (0..reps)
        .into_par_iter()
        .map(|rep| {
            let mut rng = rng::stream(seed, rep as u64);
            let u = simulate_latent_field(&w, rho, tau, &mut rng)?;
            Ok(fit_sar_rho(&u, &w)?.rho)
        })
        .collect()
}
