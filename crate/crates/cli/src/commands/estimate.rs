use std::collections::HashMap;
use std::path::Path;
use std::str::FromStr;

use crowdcorr::design_weights::WeightedSample;
use crowdcorr::estimators::{
    delay_summary, extract, mean_estimate, median_of, proportion_estimate, relative_risk_by_age, skewness_of,
    AgeBinTable, AgeBins, DelayGroup, RiskOptions, Variable,
};
use crowdcorr::spatial::{effective_sample_size, fit_model, FittedModel, RegionTotals};
use crowdcorr::{CaseRecord, Estimate, Normalization, RegionTable, SeAdjustment};
use serde::Serialize;

use super::{fmt_opt, load_cases, load_regions, load_weight_matrix, parse_list, region_positions, ParseSummary};
use crate::grouping::GroupBy;
use crate::manifest::{path_string, write_json, RunManifest};
use crate::{table, CliError, CliResult, EstimateArgs};

#[derive(Serialize)]
struct Config<'a> {
    var: &'a str,
    groupby: &'a str,
    se: &'a str,
    scheme: &'a str,
    edges: Option<String>,
    age_bins: Option<&'a str>,
    age_fallback: Option<&'a str>,
    reference_bin: Option<usize>,
}

#[derive(Serialize)]
struct GroupOut {
    label: String,
    n: usize,
    kish_n_eff: f64,
}

#[derive(Serialize)]
struct SpatialFitOut {
    variable: Variable,
    /// Fitted to residuals around the group means.
    residuals: bool,
    regions: usize,
    rho: f64,
    tau2: f64,
    tau2_truncated: bool,
    sigma_e2: f64,
}

#[derive(Serialize)]
struct VariableEstimates {
    variable: Variable,
    group: String,
    missing: usize,
    mean: Estimate,
    median: f64,
    skewness: Option<f64>,
    skewness_note: Option<String>,
}

#[derive(Serialize)]
struct ProportionOut {
    group: String,
    traveler: Estimate,
}

#[derive(Serialize)]
struct Report {
    manifest: RunManifest,
    weights: String,
    n_cases: usize,
    kish_n_eff: f64,
    se_method: String,
    groupby: String,
    groups: Vec<GroupOut>,
    parse: ParseSummary,
    spatial_fits: Vec<SpatialFitOut>,
    estimates: Vec<VariableEstimates>,
    proportions: Vec<ProportionOut>,
    delay_difference: Option<Estimate>,
    relative_risk: Option<AgeBinTable>,
}

/// Weights keyed by case_id; every case must appear exactly once.
fn join_weights(manifest: &mut RunManifest, path: &Path, records: &[CaseRecord]) -> CliResult<Vec<f64>> {
    let text = manifest.read_input(path)?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let bad = |e: csv::Error| CliError::input(format!("{}: {e}", path.display()));
    let headers = rdr.headers().map_err(bad)?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::input(format!("{}: missing required column `{name}`", path.display())))
    };
    let (id_col, w_col) = (col("case_id")?, col("weight")?);
    let mut by_id: HashMap<String, f64> = HashMap::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row.map_err(bad)?;
        let id = row.get(id_col).unwrap_or_default().to_string();
        let w: f64 = row
            .get(w_col)
            .unwrap_or_default()
            .parse()
            .map_err(|_| CliError::input(format!("{} row {}: bad weight", path.display(), i + 1)))?;
        if by_id.insert(id.clone(), w).is_some() {
            return Err(CliError::input(format!("duplicate case_id `{id}` in weights")));
        }
    }
    let weights = records
        .iter()
        .map(|r| {
            by_id.remove(&r.case_id).ok_or_else(|| CliError::input(format!("case_id `{}` has no weight", r.case_id)))
        })
        .collect::<CliResult<Vec<f64>>>()?;
    if !by_id.is_empty() {
        let mut extra: Vec<String> = by_id.into_keys().collect();
        extra.sort();
        return Err(CliError::input(format!("weights reference case_ids not in the line list: {}", extra.join(", "))));
    }
    Ok(weights)
}

fn load_age_distributions(manifest: &mut RunManifest, path: &Path, regions: &mut RegionTable) -> CliResult<()> {
    let text = manifest.read_input(path)?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    for (i, row) in rdr.records().enumerate() {
        let row = row.map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
        let id = row.get(0).unwrap_or_default();
        let dist = row
            .iter()
            .skip(1)
            .map(|v| v.parse::<f64>())
            .collect::<Result<Vec<f64>, _>>()
            .map_err(|_| CliError::input(format!("{} row {}: bad proportion", path.display(), i + 1)))?;
        regions.set_age_distribution(id, dist)?;
    }
    Ok(())
}

struct Spatial {
    table: RegionTable,
    positions: Vec<usize>,
}

impl Spatial {
    fn fit(
        &self,
        values: &[Option<f64>],
        centered_by: Option<&[Option<usize>]>,
        w: &crowdcorr::WeightMatrix,
    ) -> CliResult<FittedModel> {
        let mut x = Vec::new();
        let mut r = Vec::new();
        let mut g = Vec::new();
        for (i, v) in values.iter().enumerate() {
            if let Some(v) = v {
                x.push(*v);
                r.push(self.positions[i]);
                g.push(centered_by.and_then(|c| c[i]));
            }
        }
        if centered_by.is_some() {
            let mut sums: HashMap<Option<usize>, (f64, usize)> = HashMap::new();
            for (v, k) in x.iter().zip(&g) {
                let e = sums.entry(*k).or_default();
                e.0 += v;
                e.1 += 1;
            }
            for (v, k) in x.iter_mut().zip(&g) {
                let (s, c) = sums[k];
                *v -= s / c as f64;
            }
        }
        Ok(fit_model(&x, &r, w)?)
    }
}

fn ess_adjustment(
    fitted: &FittedModel,
    n_regions: usize,
    positions: &[usize],
    weights: &[f64],
) -> CliResult<SeAdjustment> {
    let t = RegionTotals::from_weighted(n_regions, positions, weights);
    let t = RegionTotals {
        count: fitted.restrict(&t.count),
        weight_sum: fitted.restrict(&t.weight_sum),
        weight_sq_sum: fitted.restrict(&t.weight_sq_sum),
    };
    Ok(SeAdjustment::Ess(effective_sample_size(&t, &fitted.model)?))
}

pub fn run(args: &EstimateArgs) -> CliResult<String> {
    let vars: Vec<Variable> = args.var.split(',').map(|v| Variable::from_str(v.trim())).collect::<Result<_, _>>()?;
    let groupby = GroupBy::from_str(&args.groupby)?;
    let se_method = match (args.se.as_deref(), &args.regions) {
        (Some("kish"), _) | (None, None) => "kish",
        (Some("spatial"), Some(_)) | (None, Some(_)) => "spatial",
        (Some("spatial"), None) => return Err(CliError::input("--se spatial needs --regions")),
        (Some(other), _) => return Err(CliError::input(format!("unknown SE method `{other}` (kish, spatial)"))),
    };
    let mut manifest = RunManifest::new(
        "estimate",
        Config {
            var: &args.var,
            groupby: &args.groupby,
            se: se_method,
            scheme: &args.scheme,
            edges: path_string(&args.edges),
            age_bins: args.age_bins.as_deref(),
            age_fallback: args.age_fallback.as_deref(),
            reference_bin: args.reference_bin,
        },
        None,
    );

    let mut regions = match &args.regions {
        Some(p) => Some(load_regions(&mut manifest, p)?),
        None => None,
    };
    let (records, parse) = load_cases(&mut manifest, &args.cases, regions.as_ref())?;
    if records.is_empty() {
        return Err(CliError::input("no valid cases"));
    }
    let sample = match &args.weights {
        Some(p) => {
            let w = join_weights(&mut manifest, p, &records)?;
            WeightedSample::new(records.clone(), w, Normalization::Raw)?
        }
        None => WeightedSample::unweighted(records.clone()),
    };

    let labels = groupby.labels(&records);
    let assignment = groupby.assign(&records, &labels);
    let mut subsets: Vec<(String, Vec<bool>)> = vec![("all".into(), vec![true; records.len()])];
    if groupby != GroupBy::None {
        for (k, l) in labels.iter().enumerate() {
            subsets.push((l.clone(), assignment.iter().map(|a| *a == Some(k)).collect()));
        }
    }
    let take = |mask: &[bool]| -> WeightedSample {
        let mut it = mask.iter();
        sample.filter(|_| *it.next().expect("mask matches records"))
    };

    let spatial = match (se_method, &regions) {
        ("spatial", Some(table)) => {
            let w = load_weight_matrix(&mut manifest, table, &args.scheme, args.edges.as_deref(), true)?;
            Some((Spatial { table: table.clone(), positions: region_positions(&records, table)? }, w))
        }
        _ => None,
    };

    let mut spatial_fits = Vec::new();
    let mut estimates = Vec::new();
    let mut adjustments: HashMap<(Variable, usize), SeAdjustment> = HashMap::new();
    for &var in &vars {
        let values: Vec<Option<f64>> = records.iter().map(|r| var.of(r)).collect();
        let fitted = match &spatial {
            Some((s, w)) => {
                let centered = (groupby != GroupBy::None).then_some(assignment.as_slice());
                let f = s.fit(&values, centered, w)?;
                spatial_fits.push(SpatialFitOut {
                    variable: var,
                    residuals: centered.is_some(),
                    regions: f.regions.len(),
                    rho: f.sar.rho,
                    tau2: f.intraclass.tau2,
                    tau2_truncated: f.intraclass.tau2_truncated,
                    sigma_e2: f.intraclass.sigma_e2,
                });
                Some(f)
            }
            None => None,
        };
        for (k, (label, mask)) in subsets.iter().enumerate() {
            let sub = take(mask);
            let (x, w, missing) = extract(&sub, var);
            if x.is_empty() {
                return Err(CliError::input(format!(
                    "variable `{var}` is missing for every record in group `{label}`"
                )));
            }
            let adjustment = match (&fitted, &spatial) {
                (Some(f), Some((s, _))) => {
                    let pos: Vec<usize> = s
                        .positions
                        .iter()
                        .zip(mask)
                        .zip(&values)
                        .filter(|((_, m), v)| **m && v.is_some())
                        .map(|((p, _), _)| *p)
                        .collect();
                    ess_adjustment(f, s.table.len(), &pos, &w)?
                }
                _ => SeAdjustment::Kish,
            };
            let (skewness, skewness_note) = match skewness_of(&x, &w) {
                Ok(v) => (Some(v), None),
                Err(e) => (None, Some(e.to_string())),
            };
            estimates.push(VariableEstimates {
                variable: var,
                group: label.clone(),
                missing,
                mean: mean_estimate(&x, &w, &adjustment)?,
                median: median_of(&x, &w)?,
                skewness,
                skewness_note,
            });
            adjustments.insert((var, k), adjustment);
        }
    }

    let proportions = subsets
        .iter()
        .map(|(label, mask)| {
            let sub = take(mask);
            let hits: Vec<bool> = sub.records().iter().map(|r| r.traveler).collect();
            Ok(ProportionOut {
                group: label.clone(),
                traveler: proportion_estimate(&hits, sub.weights(), &SeAdjustment::Kish)?,
            })
        })
        .collect::<CliResult<Vec<_>>>()?;

    let delay_difference = if vars.contains(&Variable::Delay) && subsets.len() == 3 {
        let groups: Vec<DelayGroup> = subsets
            .iter()
            .enumerate()
            .skip(1)
            .map(|(k, (label, mask))| DelayGroup {
                label: label.clone(),
                sample: take(mask),
                adjustment: adjustments[&(Variable::Delay, k)].clone(),
            })
            .collect();
        delay_summary(&groups)?.difference
    } else {
        None
    };

    let want_rr = args.age_bins.is_some() || args.age_dist.is_some() || args.age_fallback.is_some();
    let relative_risk = match (&mut regions, want_rr) {
        (_, false) => None,
        (None, true) => return Err(CliError::input("relative risks need --regions")),
        (Some(table), true) => {
            let bins = match &args.age_bins {
                Some(s) => AgeBins::from_str(s)?,
                None => AgeBins::default(),
            };
            if let Some(p) = &args.age_dist {
                load_age_distributions(&mut manifest, p, table)?;
            }
            let fallback = match &args.age_fallback {
                Some(s) => Some(parse_list::<f64>(s, "age proportion")?),
                None => None,
            };
            let opts = RiskOptions { reference_bin: args.reference_bin, fallback_distribution: fallback };
            Some(relative_risk_by_age(&sample, &bins, table, &opts)?)
        }
    };

    let groups = subsets
        .iter()
        .map(|(label, mask)| {
            let sub = take(mask);
            GroupOut { label: label.clone(), n: sub.len(), kish_n_eff: sub.kish_n_eff() }
        })
        .collect();
    manifest.add_output(&args.out);
    let report = Report {
        manifest,
        weights: args.weights.as_ref().map_or_else(|| "none".to_string(), |p| p.display().to_string()),
        n_cases: sample.len(),
        kish_n_eff: sample.kish_n_eff(),
        se_method: se_method.to_string(),
        groupby: args.groupby.clone(),
        groups,
        parse,
        spatial_fits,
        estimates,
        proportions,
        delay_difference,
        relative_risk,
    };
    write_json(&args.out, &report)?;

    let rows: Vec<Vec<String>> = report
        .estimates
        .iter()
        .map(|e| {
            vec![
                e.variable.to_string(),
                e.group.clone(),
                e.mean.n.to_string(),
                format!("{:.4}", e.mean.value),
                format!("{:.4}", e.mean.se_naive),
                format!("{:.4}", e.mean.se_adjusted),
                format!("{:.1}", e.mean.n_eff),
                format!("{:.4}", e.median),
                fmt_opt(e.skewness),
            ]
        })
        .collect();
    let mut text = table::render(
        &format!("Estimates (weights: {}, se: {})", report.weights, report.se_method),
        &["variable", "group", "n", "mean", "se_naive", "se_adj", "n_eff", "median", "skew"],
        &rows,
    );
    if let Some(d) = &report.delay_difference {
        text += &format!("delay difference {:.4} (se {:.4}, adjusted {:.4})\n", d.value, d.se_naive, d.se_adjusted);
    }
    if let Some(rr) = &report.relative_risk {
        let rows: Vec<Vec<String>> = rr
            .rows
            .iter()
            .map(|r| {
                vec![
                    format!("[{}, {})", r.lower, r.upper),
                    r.cases.to_string(),
                    format!("{:.2}", r.weighted_cases),
                    fmt_opt(r.relative_risk),
                ]
            })
            .collect();
        text += &table::render("Relative risk by age", &["bin", "cases", "weighted", "rr"], &rows);
    }
    Ok(text)
}
