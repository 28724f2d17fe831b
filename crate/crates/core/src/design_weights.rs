//! Post-sampling ratio weights.
//!
//! A reference design allocates the target sample size across regions in
//! proportion to population. Each region's post-sampling ratio is
//! `required_n / observed_n`; cases are weighted by their region's ratio, so
//! under-covered regions count for more and over-covered ones for less.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::line_list::{CaseRecord, RegionTable};
use crate::spatial::WeightMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Allocation {
    #[default]
    ProportionalToPopulation,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DesignSpec {
    pub target_total_n: u64,
    pub allocation: Allocation,
}

impl DesignSpec {
    pub fn proportional(target_total_n: u64) -> Self {
        DesignSpec { target_total_n, allocation: Allocation::ProportionalToPopulation }
    }
}

/// Required sample size per region under `design`.
///
/// Largest-remainder rounding: every region gets the floor of its exact
/// quota, and the leftover units go to the largest remainders, ties broken by
/// `region_id`. The result always sums to `target_total_n`. Quotas are
/// computed in integer arithmetic, so no rounding error enters the ranking.
pub fn target_allocation(design: &DesignSpec, regions: &RegionTable) -> Result<BTreeMap<String, u64>> {
    if regions.is_empty() {
        return Err(Error::Input("region table is empty".into()));
    }
    match design.allocation {
        Allocation::ProportionalToPopulation => {}
    }
    let total: u128 = regions.regions().iter().map(|r| r.population as u128).sum();
    let n = design.target_total_n as u128;
    let mut quotas: Vec<(&str, u64, u128)> = regions
        .regions()
        .iter()
        .map(|r| {
            let scaled = n * r.population as u128;
            (r.region_id.as_str(), (scaled / total) as u64, scaled % total)
        })
        .collect();
    let assigned: u64 = quotas.iter().map(|q| q.1).sum();
    let leftover = (design.target_total_n - assigned) as usize;
    let mut order: Vec<usize> = (0..quotas.len()).collect();
    order.sort_by(|&a, &b| quotas[b].2.cmp(&quotas[a].2).then(quotas[a].0.cmp(quotas[b].0)));
    for &i in order.iter().take(leftover) {
        quotas[i].1 += 1;
    }
    Ok(quotas.into_iter().map(|(id, q, _)| (id.to_string(), q)).collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case", tag = "status", content = "into")]
pub enum RatioFlag {
    Ok,
    /// Cases required but none observed; ratio undefined.
    Uncovered,
    /// Cases observed where the design requires none.
    NotRequired,
    /// Neither required nor observed.
    Empty,
    /// Pooled into the stratum rooted at the given region.
    Merged(String),
}

impl RatioFlag {
    /// Text form used in the ratios CSV.
    pub fn label(&self) -> String {
        match self {
            RatioFlag::Ok => "ok".into(),
            RatioFlag::Uncovered => "uncovered".into(),
            RatioFlag::NotRequired => "not_required".into(),
            RatioFlag::Empty => "empty".into(),
            RatioFlag::Merged(root) => format!("merged:{root}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PostSamplingRatio {
    pub region_id: String,
    pub required_n: u64,
    pub observed_n: u64,
    pub ps: Option<f64>,
    pub flag: RatioFlag,
}

fn ratio_for(required_n: u64, observed_n: u64) -> (Option<f64>, RatioFlag) {
    match (required_n, observed_n) {
        (0, 0) => (None, RatioFlag::Empty),
        (_, 0) => (None, RatioFlag::Uncovered),
        (0, _) => (None, RatioFlag::NotRequired),
        (r, o) => (Some(r as f64 / o as f64), RatioFlag::Ok),
    }
}

/// Ratios for every region in `required`. Regions missing from `observed`
/// count as zero observations; observed regions the design does not know are
/// an error.
pub fn post_sampling_ratios(
    required: &BTreeMap<String, u64>,
    observed: &BTreeMap<String, u64>,
) -> Result<Vec<PostSamplingRatio>> {
    let unknown: Vec<&String> = observed.keys().filter(|k| !required.contains_key(*k)).collect();
    if !unknown.is_empty() {
        return Err(Error::Input(format!(
            "observed regions missing from the region table: {}",
            unknown.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(", ")
        )));
    }
    Ok(required
        .iter()
        .map(|(id, &required_n)| {
            let observed_n = observed.get(id).copied().unwrap_or(0);
            let (ps, flag) = ratio_for(required_n, observed_n);
            PostSamplingRatio { region_id: id.clone(), required_n, observed_n, ps, flag }
        })
        .collect())
}

/// Observed case counts per region.
pub fn observed_counts<'a>(regions: impl IntoIterator<Item = &'a str>) -> BTreeMap<String, u64> {
    let mut m = BTreeMap::new();
    for r in regions {
        *m.entry(r.to_string()).or_insert(0) += 1;
    }
    m
}

/// Pools strata whose ratio is undefined into neighboring strata.
///
/// Repeatedly takes the undefined stratum with the smallest root id and
/// merges it into the adjacent stratum (by nonzero weight in `adjacency`,
/// either direction) with the most observed cases, ties going to the smaller
/// region id. Every member of a pooled stratum gets the pooled ratio and a
/// `Merged(root)` flag. Regions with neither requirement nor cases are left
/// alone. Fails if an undefined stratum has no neighbors.
pub fn merge_strata(ratios: &[PostSamplingRatio], adjacency: &WeightMatrix) -> Result<Vec<PostSamplingRatio>> {
    let ids = adjacency.region_ids();
    let pos: HashMap<&str, usize> = ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let n = ids.len();
    let mut required = vec![0u64; n];
    let mut observed = vec![0u64; n];
    for r in ratios {
        let i = *pos
            .get(r.region_id.as_str())
            .ok_or_else(|| Error::Input(format!("region `{}` missing from adjacency", r.region_id)))?;
        required[i] = r.required_n;
        observed[i] = r.observed_n;
    }

    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    let mut req = required.clone();
    let mut obs = observed.clone();
    let is_bad = |r: u64, o: u64| (r == 0) != (o == 0);

    loop {
        let bad = (0..n)
            .filter(|&i| find(&mut parent, i) == i && is_bad(req[i], obs[i]))
            .min_by(|&a, &b| ids[a].cmp(&ids[b]));
        let Some(root) = bad else { break };
        let mut candidates = BTreeSet::new();
        for i in 0..n {
            if find(&mut parent, i) != root {
                continue;
            }
            for j in 0..n {
                if adjacency.get(i, j) != 0.0 || adjacency.get(j, i) != 0.0 {
                    let rj = find(&mut parent, j);
                    if rj != root {
                        candidates.insert(rj);
                    }
                }
            }
        }
        let target =
            candidates.into_iter().max_by(|&a, &b| obs[a].cmp(&obs[b]).then(ids[b].cmp(&ids[a]))).ok_or_else(|| {
                Error::precondition(format!("cannot merge stratum `{}`: no neighboring region", ids[root]))
            })?;
        // Keep the smaller id as root for stable labels.
        let (keep, drop) = if ids[target] < ids[root] { (target, root) } else { (root, target) };
        parent[drop] = keep;
        req[keep] += req[drop];
        obs[keep] += obs[drop];
    }

    let mut roots = vec![0; n];
    let mut size = vec![0usize; n];
    for i in 0..n {
        roots[i] = find(&mut parent, i);
        size[roots[i]] += 1;
    }
    Ok(ratios
        .iter()
        .map(|r| {
            let i = pos[r.region_id.as_str()];
            let root = roots[i];
            if size[root] == 1 {
                return r.clone();
            }
            let (ps, _) = ratio_for(req[root], obs[root]);
            PostSamplingRatio { ps, flag: RatioFlag::Merged(ids[root].clone()), ..r.clone() }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// Weights are the ratios themselves (population-total scale).
    Raw,
    /// Weights rescaled to sum to the number of cases.
    #[default]
    SumToN,
}

impl std::str::FromStr for Normalization {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raw" => Ok(Normalization::Raw),
            "sum_to_n" => Ok(Normalization::SumToN),
            _ => Err(Error::Input(format!("unknown normalization `{s}` (raw, sum_to_n)"))),
        }
    }
}

/// Cases with aligned positive weights.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedSample {
    records: Vec<CaseRecord>,
    weights: Vec<f64>,
    normalization: Normalization,
    kish_n_eff: f64,
}

pub fn kish_n_eff(weights: &[f64]) -> f64 {
    let s: f64 = weights.iter().sum();
    let s2: f64 = weights.iter().map(|w| w * w).sum();
    s * s / s2
}

impl WeightedSample {
    pub fn new(records: Vec<CaseRecord>, weights: Vec<f64>, normalization: Normalization) -> Result<Self> {
        if records.len() != weights.len() {
            return Err(Error::Input(format!("{} records but {} weights", records.len(), weights.len())));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::Input("weights must be finite and strictly positive".into()));
        }
        let weights = match normalization {
            Normalization::Raw => weights,
            Normalization::SumToN => normalize_to_n(weights),
        };
        let kish_n_eff =
            if weights.iter().all(|&w| w == weights[0]) { weights.len() as f64 } else { kish_n_eff(&weights) };
        Ok(WeightedSample { records, weights, normalization, kish_n_eff })
    }

    /// Unit weights.
    pub fn unweighted(records: Vec<CaseRecord>) -> Self {
        let n = records.len();
        WeightedSample { records, weights: vec![1.0; n], normalization: Normalization::SumToN, kish_n_eff: n as f64 }
    }

    pub fn records(&self) -> &[CaseRecord] {
        &self.records
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn normalization(&self) -> Normalization {
        self.normalization
    }

    pub fn kish_n_eff(&self) -> f64 {
        self.kish_n_eff
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Keeps the records matching `keep`, with their weights unchanged.
    pub fn filter(&self, mut keep: impl FnMut(&CaseRecord) -> bool) -> WeightedSample {
        let (records, weights): (Vec<_>, Vec<_>) =
            self.records.iter().zip(&self.weights).filter(|(r, _)| keep(r)).map(|(r, w)| (r.clone(), *w)).unzip();
        let kish = if weights.is_empty() { 0.0 } else { kish_n_eff(&weights) };
        WeightedSample { records, weights, normalization: self.normalization, kish_n_eff: kish }
    }
}

fn normalize_to_n(weights: Vec<f64>) -> Vec<f64> {
    if weights.iter().all(|&w| w == 1.0) {
        return weights;
    }
    let n = weights.len() as f64;
    let total: f64 = weights.iter().sum();
    weights.into_iter().map(|w| w * n / total).collect()
}

/// Per-case weights `ps[region]`, normalized.
pub fn case_weights<'a>(
    case_regions: impl IntoIterator<Item = &'a str>,
    ratios: &[PostSamplingRatio],
    normalization: Normalization,
) -> Result<Vec<f64>> {
    let lookup: HashMap<&str, &PostSamplingRatio> = ratios.iter().map(|r| (r.region_id.as_str(), r)).collect();
    let mut weights = Vec::new();
    let mut undefined = BTreeSet::new();
    for region in case_regions {
        match lookup.get(region) {
            Some(PostSamplingRatio { ps: Some(ps), .. }) => weights.push(*ps),
            Some(_) => {
                undefined.insert(region.to_string());
                weights.push(f64::NAN);
            }
            None => return Err(Error::Input(format!("no ratio for region `{region}`"))),
        }
    }
    if !undefined.is_empty() {
        return Err(Error::UncoveredStrata(undefined.into_iter().collect()));
    }
    Ok(match normalization {
        Normalization::Raw => weights,
        Normalization::SumToN => normalize_to_n(weights),
    })
}

/// Weights every case by its region's post-sampling ratio.
///
/// Cases in a region with an undefined ratio are an error naming those
/// regions; merge strata first with [`merge_strata`] to proceed.
pub fn attach_weights(
    cases: &[CaseRecord],
    ratios: &[PostSamplingRatio],
    normalization: Normalization,
) -> Result<WeightedSample> {
    let weights = case_weights(cases.iter().map(|c| c.region_id.as_str()), ratios, normalization)?;
    WeightedSample::new(cases.to_vec(), weights, Normalization::Raw).map(|mut s| {
        s.normalization = normalization;
        s
    })
}

/// Regions with a nonzero requirement but no observed cases.
pub fn uncovered(ratios: &[PostSamplingRatio]) -> Vec<String> {
    ratios.iter().filter(|r| r.flag == RatioFlag::Uncovered).map(|r| r.region_id.clone()).collect()
}
