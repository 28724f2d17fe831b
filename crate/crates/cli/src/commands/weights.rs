use std::collections::HashMap;
use std::str::FromStr;

use crowdcorr::design_weights::{
    case_weights, kish_n_eff, merge_strata, observed_counts, post_sampling_ratios, target_allocation, uncovered,
};
use crowdcorr::{DesignSpec, Normalization, PostSamplingRatio};
use serde::Serialize;

use super::{fmt_opt, load_cases, load_regions, load_weight_matrix, ParseSummary};
use crate::manifest::{path_string, write_file, write_json, RunManifest};
use crate::{table, CliError, CliResult, WeightsArgs};

#[derive(Serialize)]
struct Config<'a> {
    target_n: Option<u64>,
    normalization: &'a str,
    merge_strata: bool,
    scheme: &'a str,
    edges: Option<String>,
}

#[derive(Serialize)]
struct StratumOut<'a> {
    region_id: &'a str,
    required_n: u64,
    observed_n: u64,
    ps: Option<f64>,
    flag: String,
}

#[derive(Serialize)]
struct Report<'a> {
    manifest: RunManifest,
    target_total_n: u64,
    normalization: Normalization,
    merged: bool,
    n_cases: usize,
    sum_weights: f64,
    kish_n_eff: f64,
    parse: ParseSummary,
    strata: Vec<StratumOut<'a>>,
}

fn csv_text(header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> CliResult<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| CliError::input(e.to_string());
    w.write_record(header).map_err(err)?;
    for row in rows {
        w.write_record(&row).map_err(err)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::input(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn run(args: &WeightsArgs) -> CliResult<String> {
    let normalization = Normalization::from_str(&args.normalization)?;
    let mut manifest = RunManifest::new(
        "weights",
        Config {
            target_n: args.target_n,
            normalization: &args.normalization,
            merge_strata: args.merge_strata,
            scheme: &args.scheme,
            edges: path_string(&args.edges),
        },
        None,
    );
    let regions = load_regions(&mut manifest, &args.regions)?;
    let (records, parse) = load_cases(&mut manifest, &args.cases, Some(&regions))?;
    if records.is_empty() {
        return Err(CliError::input("no valid cases"));
    }
    let target = args.target_n.unwrap_or(records.len() as u64);
    let required = target_allocation(&DesignSpec::proportional(target), &regions)?;
    let observed = observed_counts(records.iter().map(|r| r.region_id.as_str()));
    let mut ratios = post_sampling_ratios(&required, &observed)?;
    if args.merge_strata {
        let adjacency = load_weight_matrix(&mut manifest, &regions, &args.scheme, args.edges.as_deref(), false)?;
        ratios = merge_strata(&ratios, &adjacency)?;
    } else {
        let missing = uncovered(&ratios);
        if !missing.is_empty() {
            return Err(crowdcorr::Error::UncoveredStrata(missing).into());
        }
    }
    let weights = case_weights(records.iter().map(|r| r.region_id.as_str()), &ratios, normalization)?;
    let lookup: HashMap<&str, &PostSamplingRatio> = ratios.iter().map(|r| (r.region_id.as_str(), r)).collect();

    let ratios_path = args.out.join("ratios.csv");
    let weights_path = args.out.join("weights.csv");
    let report_path = args.out.join("weights.json");
    let ratios_csv = csv_text(
        &["region_id", "required_n", "observed_n", "ps", "flag"],
        ratios.iter().map(|r| {
            vec![
                r.region_id.clone(),
                r.required_n.to_string(),
                r.observed_n.to_string(),
                r.ps.map_or(String::new(), |p| p.to_string()),
                r.flag.label(),
            ]
        }),
    )?;
    let weights_csv = csv_text(
        &["case_id", "region_id", "ps", "weight"],
        records.iter().zip(&weights).map(|(r, w)| {
            let ps = lookup[r.region_id.as_str()].ps.expect("weighted cases have a defined ratio");
            vec![r.case_id.clone(), r.region_id.clone(), ps.to_string(), w.to_string()]
        }),
    )?;
    write_file(&ratios_path, &ratios_csv)?;
    write_file(&weights_path, &weights_csv)?;
    for p in [&ratios_path, &weights_path, &report_path] {
        manifest.add_output(p);
    }

    let report = Report {
        manifest,
        target_total_n: target,
        normalization,
        merged: args.merge_strata,
        n_cases: records.len(),
        sum_weights: weights.iter().sum(),
        kish_n_eff: kish_n_eff(&weights),
        parse,
        strata: ratios
            .iter()
            .map(|r| StratumOut {
                region_id: &r.region_id,
                required_n: r.required_n,
                observed_n: r.observed_n,
                ps: r.ps,
                flag: r.flag.label(),
            })
            .collect(),
    };
    write_json(&report_path, &report)?;

    let rows: Vec<Vec<String>> = report
        .strata
        .iter()
        .map(|s| {
            vec![
                s.region_id.to_string(),
                s.required_n.to_string(),
                s.observed_n.to_string(),
                fmt_opt(s.ps),
                s.flag.clone(),
            ]
        })
        .collect();
    let mut text = table::render("Post-sampling ratios", &["region", "required", "observed", "ps", "flag"], &rows);
    text +=
        &format!("cases {}  target {}  kish n_eff {:.2}\n", report.n_cases, report.target_total_n, report.kish_n_eff);
    Ok(text)
}
