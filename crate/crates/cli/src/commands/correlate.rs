use std::collections::HashMap;
use std::str::FromStr;

use crowdcorr::estimators::Variable;
use crowdcorr::spatial::{effective_sample_size, fit_model, morans_i, RegionTotals};
use serde::Serialize;

use super::{fmt_opt, load_cases, load_regions, load_weight_matrix, region_positions, ParseSummary};
use crate::grouping::GroupBy;
use crate::manifest::{path_string, write_json, RunManifest};
use crate::{table, CliError, CliResult, CorrelateArgs};

#[derive(Serialize)]
struct Config<'a> {
    var: &'a str,
    scheme: &'a str,
    edges: Option<String>,
    groupby: &'a str,
    perms: usize,
}

#[derive(Serialize)]
struct Report {
    manifest: RunManifest,
    variable: Variable,
    scheme: String,
    residuals: bool,
    n_used: usize,
    regions_with_data: usize,
    morans_i: f64,
    expected: f64,
    p_perm: Option<f64>,
    n_perm: usize,
    null_mean: Option<f64>,
    null_sd: Option<f64>,
    rho_hat: f64,
    tau2: f64,
    tau2_truncated: bool,
    sigma_e2: f64,
    icc: f64,
    n_eff: f64,
    deff: f64,
    seed: u64,
    parse: ParseSummary,
}

pub fn run(args: &CorrelateArgs) -> CliResult<String> {
    let var = Variable::from_str(&args.var)?;
    let groupby = GroupBy::from_str(&args.groupby)?;
    let mut manifest = RunManifest::new(
        "correlate",
        Config {
            var: &args.var,
            scheme: &args.scheme,
            edges: path_string(&args.edges),
            groupby: &args.groupby,
            perms: args.perms,
        },
        Some(args.seed),
    );
    let regions = load_regions(&mut manifest, &args.regions)?;
    let (records, parse) = load_cases(&mut manifest, &args.cases, Some(&regions))?;
    let w = load_weight_matrix(&mut manifest, &regions, &args.scheme, args.edges.as_deref(), true)?;
    let positions = region_positions(&records, &regions)?;

    let labels = groupby.labels(&records);
    let assignment = groupby.assign(&records, &labels);
    let mut x = Vec::new();
    let mut pos = Vec::new();
    let mut grp = Vec::new();
    for (i, r) in records.iter().enumerate() {
        if let Some(v) = var.of(r) {
            x.push(v);
            pos.push(positions[i]);
            grp.push(assignment[i]);
        }
    }
    if x.is_empty() {
        return Err(CliError::input(format!("variable `{var}` is missing for every record")));
    }
    let residuals = groupby != GroupBy::None;
    if residuals {
        let mut sums: HashMap<Option<usize>, (f64, usize)> = HashMap::new();
        for (v, g) in x.iter().zip(&grp) {
            let e = sums.entry(*g).or_default();
            e.0 += v;
            e.1 += 1;
        }
        for (v, g) in x.iter_mut().zip(&grp) {
            let (s, c) = sums[g];
            *v -= s / c as f64;
        }
    }
    if x.iter().all(|v| *v == x[0]) {
        return Err(crowdcorr::Error::Degenerate(format!("variable `{var}` is constant")).into());
    }

    let l = regions.len();
    let mut count = vec![0usize; l];
    let mut sum = vec![0.0; l];
    for (v, &p) in x.iter().zip(&pos) {
        count[p] += 1;
        sum[p] += v;
    }
    let covered: Vec<usize> = (0..l).filter(|&r| count[r] > 0).collect();
    if covered.len() < 3 {
        return Err(crowdcorr::Error::Precondition(format!(
            "at least 3 regions with data are needed, found {}",
            covered.len()
        ))
        .into());
    }
    let means: Vec<f64> = covered.iter().map(|&r| sum[r] / count[r] as f64).collect();
    let moran = morans_i(&means, &w.subset(&covered), args.perms, args.seed)?;

    let fitted = fit_model(&x, &pos, &w)?;
    let totals = RegionTotals::from_counts(&fitted.restrict(&count));
    let ess = effective_sample_size(&totals, &fitted.model)?;

    manifest.add_output(&args.out);
    let report = Report {
        manifest,
        variable: var,
        scheme: w.scheme().to_string(),
        residuals,
        n_used: x.len(),
        regions_with_data: covered.len(),
        morans_i: moran.statistic,
        expected: moran.expected,
        p_perm: moran.p_perm,
        n_perm: moran.n_perm,
        null_mean: moran.null_mean,
        null_sd: moran.null_sd,
        rho_hat: fitted.sar.rho,
        tau2: fitted.intraclass.tau2,
        tau2_truncated: fitted.intraclass.tau2_truncated,
        sigma_e2: fitted.intraclass.sigma_e2,
        icc: fitted.intraclass.icc(),
        n_eff: ess.n_eff,
        deff: ess.deff,
        seed: args.seed,
        parse,
    };
    write_json(&args.out, &report)?;

    let rows = vec![
        vec!["Moran's I".into(), format!("{:.4}", report.morans_i)],
        vec!["E[I]".into(), format!("{:.4}", report.expected)],
        vec!["p (permutation)".into(), fmt_opt(report.p_perm)],
        vec!["rho".into(), format!("{:.4}", report.rho_hat)],
        vec!["tau2".into(), format!("{:.4}", report.tau2)],
        vec!["sigma_e2".into(), format!("{:.4}", report.sigma_e2)],
        vec!["n".into(), report.n_used.to_string()],
        vec!["n_eff".into(), format!("{:.1}", report.n_eff)],
        vec!["deff".into(), format!("{:.3}", report.deff)],
    ];
    Ok(table::render(
        &format!("Spatial correlation of {var} ({} regions, {})", report.regions_with_data, report.scheme),
        &["quantity", "value"],
        &rows,
    ))
}
