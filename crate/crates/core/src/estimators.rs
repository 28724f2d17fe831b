//! Weighted point estimates with naive and adjusted standard errors.
//!
//! The naive SE treats the `n` records as independent and equally informative;
//! the adjusted SE replaces `n` with an effective size from either the Kish
//! weight formula or a spatial [`EssReport`]. By construction
//! `se_adjusted / se_naive = sqrt(n / n_eff)`.

use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::design_weights::{kish_n_eff, WeightedSample};
use crate::error::{Error, Result};
use crate::line_list::{compute_delay, CaseRecord, RegionTable, MAX_AGE};
use crate::spatial::EssReport;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Estimate {
    pub value: f64,
    pub se_naive: f64,
    pub se_adjusted: f64,
    pub n: usize,
    pub n_eff: f64,
    pub method: String,
}

/// Source of the effective sample size behind `se_adjusted`.
#[derive(Debug, Clone, PartialEq)]
pub enum SeAdjustment {
    /// Kish size of the weights actually used.
    Kish,
    /// Design effect of a spatial effective-size report, applied to the
    /// number of records used.
    Ess(EssReport),
    /// A design effect supplied directly.
    Deff(f64),
}

impl SeAdjustment {
    fn n_eff(&self, weights: &[f64]) -> f64 {
        let n = weights.len() as f64;
        let n_eff = match self {
            SeAdjustment::Kish => kish_n_eff(weights),
            SeAdjustment::Ess(r) => n / r.deff,
            SeAdjustment::Deff(d) => n / d,
        };
        n_eff.max(1.0)
    }

    fn label(&self) -> String {
        match self {
            SeAdjustment::Kish => "kish".into(),
            SeAdjustment::Ess(r) => format!("ess(deff={:.6})", r.deff),
            SeAdjustment::Deff(d) => format!("deff({d:.6})"),
        }
    }
}

/// Numeric per-case variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Variable {
    Age,
    /// Days from onset to care; missing when no care date.
    Delay,
}

impl Variable {
    pub fn of(self, record: &CaseRecord) -> Option<f64> {
        match self {
            Variable::Age => Some(record.age),
            Variable::Delay => compute_delay(record).map(|d| d.value() as f64),
        }
    }
}

impl FromStr for Variable {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "age" => Ok(Variable::Age),
            "delay" => Ok(Variable::Delay),
            _ => Err(Error::Input(format!("unknown variable `{s}` (age, delay)"))),
        }
    }
}

impl fmt::Display for Variable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variable::Age => "age",
            Variable::Delay => "delay",
        })
    }
}

/// Present values of `var` with their weights, and the count of missing ones.
pub fn extract(sample: &WeightedSample, var: Variable) -> (Vec<f64>, Vec<f64>, usize) {
    let mut xs = Vec::with_capacity(sample.len());
    let mut ws = Vec::with_capacity(sample.len());
    for (r, &w) in sample.records().iter().zip(sample.weights()) {
        if let Some(x) = var.of(r) {
            xs.push(x);
            ws.push(w);
        }
    }
    let missing = sample.len() - xs.len();
    (xs, ws, missing)
}

fn check_weights(w: &[f64]) -> Result<f64> {
    let total: f64 = w.iter().sum();
    if !(total > 0.0) {
        return Err(Error::precondition("total weight is zero"));
    }
    Ok(total)
}

/// `sum w x / sum w`.
pub fn mean_of(x: &[f64], w: &[f64]) -> Result<f64> {
    let total = check_weights(w)?;
    Ok(x.iter().zip(w).map(|(x, w)| w * x).sum::<f64>() / total)
}

/// Frequency-weight variance, divisor `sum w - 1`.
pub fn variance_of(x: &[f64], w: &[f64]) -> Result<f64> {
    let total = check_weights(w)?;
    if !(total > 1.0) {
        return Err(Error::precondition("total weight must exceed 1 for a variance"));
    }
    let m = mean_of(x, w)?;
    Ok(x.iter().zip(w).map(|(x, w)| w * (x - m).powi(2)).sum::<f64>() / (total - 1.0))
}

/// Mean estimate from raw slices.
pub fn mean_estimate(x: &[f64], w: &[f64], adjustment: &SeAdjustment) -> Result<Estimate> {
    if x.len() < 2 {
        return Err(Error::precondition(format!("mean needs at least 2 observations, found {}", x.len())));
    }
    let value = mean_of(x, w)?;
    let var = variance_of(x, w)?;
    let n = x.len();
    let n_eff = adjustment.n_eff(w);
    Ok(Estimate {
        value,
        se_naive: (var / n as f64).sqrt(),
        se_adjusted: (var / n_eff).sqrt(),
        n,
        n_eff,
        method: adjustment.label(),
    })
}

pub fn weighted_mean(sample: &WeightedSample, var: Variable, adjustment: &SeAdjustment) -> Result<Estimate> {
    let (x, w, _) = extract(sample, var);
    if x.is_empty() {
        return Err(Error::Input(format!("variable `{var}` is missing for every record")));
    }
    mean_estimate(&x, &w, adjustment)
}

/// Weighted median of raw slices.
///
/// Smallest value whose cumulative weight reaches half the total. When the
/// cumulative weight of a value lands exactly on one half, the result is the
/// midpoint between it and the next larger value.
pub fn median_of(x: &[f64], w: &[f64]) -> Result<f64> {
    if x.is_empty() {
        return Err(Error::precondition("median of an empty sample"));
    }
    let total = check_weights(w)?;
    let mut pairs: Vec<(f64, f64)> = x.iter().copied().zip(w.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut groups: Vec<(f64, f64)> = Vec::new();
    for (v, wt) in pairs {
        match groups.last_mut() {
            Some(g) if g.0 == v => g.1 += wt,
            _ => groups.push((v, wt)),
        }
    }
    let tol = 1e-12 * total;
    let mut cum = 0.0;
    for (i, &(v, wt)) in groups.iter().enumerate() {
        cum += wt;
        let gap = 2.0 * cum - total;
        if gap.abs() <= tol && i + 1 < groups.len() {
            return Ok(0.5 * (v + groups[i + 1].0));
        }
        if gap >= -tol {
            return Ok(v);
        }
    }
    Ok(groups.last().expect("nonempty").0)
}

pub fn weighted_median(sample: &WeightedSample, var: Variable) -> Result<f64> {
    let (x, w, _) = extract(sample, var);
    median_of(&x, &w)
}

/// Proportion estimate from a boolean indicator.
pub fn proportion_estimate(hits: &[bool], w: &[f64], adjustment: &SeAdjustment) -> Result<Estimate> {
    if hits.is_empty() {
        return Err(Error::precondition("proportion of an empty sample"));
    }
    let total = check_weights(w)?;
    let p = hits.iter().zip(w).filter(|(h, _)| **h).map(|(_, w)| w).sum::<f64>() / total;
    let pq = p * (1.0 - p);
    let n = hits.len();
    let n_eff = adjustment.n_eff(w);
    Ok(Estimate {
        value: p,
        se_naive: (pq / n as f64).sqrt(),
        se_adjusted: (pq / n_eff).sqrt(),
        n,
        n_eff,
        method: adjustment.label(),
    })
}

pub fn weighted_proportion(
    sample: &WeightedSample,
    predicate: impl Fn(&CaseRecord) -> bool,
    adjustment: &SeAdjustment,
) -> Result<Estimate> {
    let hits: Vec<bool> = sample.records().iter().map(predicate).collect();
    proportion_estimate(&hits, sample.weights(), adjustment)
}

/// Moment skewness `m3 / m2^1.5` with weighted central moments.
pub fn skewness_of(x: &[f64], w: &[f64]) -> Result<f64> {
    if x.len() < 3 {
        return Err(Error::precondition("skewness needs at least 3 observations"));
    }
    let total = check_weights(w)?;
    let m = mean_of(x, w)?;
    let (mut m2, mut m3) = (0.0, 0.0);
    for (x, w) in x.iter().zip(w) {
        let d = x - m;
        m2 += w * d * d;
        m3 += w * d * d * d;
    }
    m2 /= total;
    m3 /= total;
    if !(m2 > 0.0) {
        return Err(Error::Degenerate("zero weighted variance; skewness undefined".into()));
    }
    Ok(m3 / m2.powf(1.5))
}

pub fn weighted_skewness(sample: &WeightedSample, var: Variable) -> Result<f64> {
    let (x, w, _) = extract(sample, var);
    skewness_of(&x, &w)
}

/// Closed-open age intervals covering `[0, 120]`; the last bin also holds 120.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgeBins {
    edges: Vec<f64>,
}

impl AgeBins {
    pub fn new(edges: Vec<f64>) -> Result<Self> {
        if edges.len() < 2 {
            return Err(Error::Input("age bins need at least two edges".into()));
        }
        if edges[0] != 0.0 || *edges.last().unwrap() != MAX_AGE {
            return Err(Error::Input(format!("age bins must start at 0 and end at {MAX_AGE}")));
        }
        if edges.windows(2).any(|p| !(p[0] < p[1])) {
            return Err(Error::Input("age bin edges must be strictly increasing".into()));
        }
        Ok(AgeBins { edges })
    }

    pub fn len(&self) -> usize {
        self.edges.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn bin_of(&self, age: f64) -> Option<usize> {
        if !(0.0..=MAX_AGE).contains(&age) {
            return None;
        }
        let k = self.edges.partition_point(|&e| e <= age);
        Some((k - 1).min(self.len() - 1))
    }
}

impl Default for AgeBins {
    fn default() -> Self {
        AgeBins { edges: vec![0.0, 10.0, 20.0, 30.0, 40.0, 50.0, 60.0, 70.0, 80.0, MAX_AGE] }
    }
}

impl FromStr for AgeBins {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let edges = s
            .split(',')
            .map(|t| t.trim().parse::<f64>().map_err(|_| Error::Input(format!("bad age bin edge `{t}`"))))
            .collect::<Result<Vec<_>>>()?;
        AgeBins::new(edges)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgeBinRow {
    pub lower: f64,
    pub upper: f64,
    pub cases: usize,
    pub weighted_cases: f64,
    pub exposure: f64,
    pub rate: Option<f64>,
    pub relative_risk: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgeBinTable {
    pub rows: Vec<AgeBinRow>,
    pub reference_bin: usize,
}

impl AgeBinTable {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["lower", "upper", "cases", "weighted_cases", "exposure", "rate", "relative_risk"])?;
        let opt = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
        for r in &self.rows {
            w.write_record([
                r.lower.to_string(),
                r.upper.to_string(),
                r.cases.to_string(),
                r.weighted_cases.to_string(),
                r.exposure.to_string(),
                opt(r.rate),
                opt(r.relative_risk),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Input(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RiskOptions {
    /// Reference bin index; defaults to the bin of the weighted median age.
    pub reference_bin: Option<usize>,
    /// Age distribution for regions that lack their own.
    pub fallback_distribution: Option<Vec<f64>>,
}

/// Weighted case rates per age bin relative to a reference bin.
///
/// Exposure in bin `b` is `sum_l population_l * dist_l[b]` over every region
/// in the table.
pub fn relative_risk_by_age(
    sample: &WeightedSample,
    bins: &AgeBins,
    regions: &RegionTable,
    options: &RiskOptions,
) -> Result<AgeBinTable> {
    let k = bins.len();
    if let Some(f) = &options.fallback_distribution {
        if f.len() != k {
            return Err(Error::Input(format!("fallback age distribution has {} entries for {k} bins", f.len())));
        }
    }
    let mut exposure = vec![0.0; k];
    for region in regions.regions() {
        let dist = region.age_distribution.as_ref().or(options.fallback_distribution.as_ref()).ok_or_else(|| {
            Error::Input(format!("region `{}` has no age distribution and no fallback was given", region.region_id))
        })?;
        if dist.len() != k {
            return Err(Error::Input(format!(
                "region `{}` age distribution has {} entries for {k} bins",
                region.region_id,
                dist.len()
            )));
        }
        for (e, p) in exposure.iter_mut().zip(dist) {
            *e += region.population as f64 * p;
        }
    }

    let mut cases = vec![0usize; k];
    let mut weighted = vec![0.0; k];
    for (r, &w) in sample.records().iter().zip(sample.weights()) {
        let b = bins
            .bin_of(r.age)
            .ok_or_else(|| Error::Input(format!("case `{}` age {} outside bins", r.case_id, r.age)))?;
        cases[b] += 1;
        weighted[b] += w;
    }

    let reference_bin = match options.reference_bin {
        Some(b) if b < k => b,
        Some(b) => return Err(Error::Input(format!("reference bin {b} out of range 0..{k}"))),
        None => {
            let ages: Vec<f64> = sample.records().iter().map(|r| r.age).collect();
            let median = median_of(&ages, sample.weights())?;
            bins.bin_of(median).expect("median lies within the bins")
        }
    };

    let mut rate = vec![None; k];
    for b in 0..k {
        if exposure[b] > 0.0 {
            rate[b] = Some(weighted[b] / exposure[b]);
        } else if cases[b] > 0 {
            return Err(Error::precondition(format!(
                "age bin [{}, {}) has cases but zero exposure",
                bins.edges[b],
                bins.edges[b + 1]
            )));
        }
    }
    let ref_rate = match rate[reference_bin] {
        Some(r) if r > 0.0 => r,
        _ => return Err(Error::Degenerate(format!("reference age bin {reference_bin} has a zero rate"))),
    };
    let rows = (0..k)
        .map(|b| AgeBinRow {
            lower: bins.edges[b],
            upper: bins.edges[b + 1],
            cases: cases[b],
            weighted_cases: weighted[b],
            exposure: exposure[b],
            rate: rate[b],
            relative_risk: if b == reference_bin { Some(1.0) } else { rate[b].map(|r| r / ref_rate) },
        })
        .collect();
    Ok(AgeBinTable { rows, reference_bin })
}

/// One group's input to [`delay_summary`].
#[derive(Debug, Clone)]
pub struct DelayGroup {
    pub label: String,
    pub sample: WeightedSample,
    pub adjustment: SeAdjustment,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupDelay {
    pub label: String,
    pub estimate: Estimate,
    /// Records without a care date.
    pub excluded: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DelaySummary {
    pub groups: Vec<GroupDelay>,
    /// First group minus second; present for exactly two groups.
    pub difference: Option<Estimate>,
}

/// Mean onset-to-care delay per group, complete cases only.
pub fn delay_summary(groups: &[DelayGroup]) -> Result<DelaySummary> {
    if groups.is_empty() {
        return Err(Error::precondition("delay summary needs at least one group"));
    }
    let mut out = Vec::with_capacity(groups.len());
    for g in groups {
        if g.sample.is_empty() {
            return Err(Error::precondition(format!("group `{}` is empty", g.label)));
        }
        let (x, w, excluded) = extract(&g.sample, Variable::Delay);
        if x.is_empty() {
            return Err(Error::Input(format!("group `{}` has no recorded delays", g.label)));
        }
        out.push(GroupDelay { label: g.label.clone(), estimate: mean_estimate(&x, &w, &g.adjustment)?, excluded });
    }
    let difference = match out.as_slice() {
        [a, b] => Some(difference(&a.estimate, &b.estimate)),
        _ => None,
    };
    Ok(DelaySummary { groups: out, difference })
}

/// `a - b` for independent estimates.
pub fn difference(a: &Estimate, b: &Estimate) -> Estimate {
    Estimate {
        value: a.value - b.value,
        se_naive: a.se_naive.hypot(b.se_naive),
        se_adjusted: a.se_adjusted.hypot(b.se_adjusted),
        n: a.n + b.n,
        n_eff: a.n_eff + b.n_eff,
        method: format!("difference[{}; {}]", a.method, b.method),
    }
}
