use crowdcorr::mc_sim::{run_replicates, trace_csv};
use crowdcorr::{McReport, SimConfig};
use serde::Serialize;

use crate::manifest::{write_file, write_json, RunManifest};
use crate::{plot, table, CliError, CliResult, SimulateArgs};

#[derive(Serialize)]
struct Report {
    manifest: RunManifest,
    #[serde(flatten)]
    report: McReport,
}

pub fn run(args: &SimulateArgs) -> CliResult<String> {
    let mut manifest = RunManifest::new("simulate", serde_json::Value::Null, None);
    let mut config = match &args.config {
        Some(p) => {
            let text = manifest.read_input(p)?;
            SimConfig::from_json(&text)?
        }
        None => SimConfig::default(),
    };
    if let Some(r) = args.reps {
        config.reps = r;
    }
    if let Some(s) = args.seed {
        config.seed = s;
    }
    config.validate()?;
    manifest.config = serde_json::to_value(&config).map_err(|e| CliError::config(e.to_string()))?;
    manifest.seed = Some(config.seed);

    let outcomes = run_replicates(&config)?;
    let report = McReport::aggregate(&config, &outcomes);

    if let Some(p) = &args.trace {
        write_file(p, &trace_csv(&outcomes)?)?;
        manifest.add_output(p);
    }
    if let Some(p) = &args.plot {
        write_file(p, &plot::svg(&report))?;
        manifest.add_output(p);
    }
    manifest.add_output(&args.out);
    let out = Report { manifest, report };
    write_json(&args.out, &out)?;

    let e = &out.report.estimators[0];
    let est_rows = vec![
        vec![
            "naive".into(),
            format!("{:.4}", e.bias_naive),
            format!("{:.4}", e.empirical_se_naive),
            format!("{:.4}", e.mean_estimated_se_naive),
            format!("{:.4}", e.mean_adjusted_se_naive),
            format!("{:.3}", e.coverage_naive),
        ],
        vec![
            "weighted".into(),
            format!("{:.4}", e.bias_weighted),
            format!("{:.4}", e.empirical_se_weighted),
            format!("{:.4}", e.mean_estimated_se_weighted),
            format!("{:.4}", e.mean_adjusted_se_weighted),
            format!("{:.3}", e.coverage_weighted),
        ],
    ];
    let mut text = table::render(
        &format!("Outcome mean over {} replicates (truth {:.4})", out.report.reps, e.true_value),
        &["estimator", "bias", "empirical_se", "mean_se", "mean_adj_se", "coverage"],
        &est_rows,
    );
    let test_rows: Vec<Vec<String>> = out
        .report
        .tests
        .variants
        .iter()
        .map(|v| {
            vec![
                serde_json::to_value(v.variant).map(|s| s.as_str().unwrap_or_default().to_string()).unwrap_or_default(),
                v.rejections.to_string(),
                format!("{:.4}", v.rate),
                format!("{:.4}", v.mc_se),
            ]
        })
        .collect();
    text += &table::render(
        &format!("Rejection rates at alpha = {}", out.report.tests.nominal_alpha),
        &["variant", "rejections", "rate", "mc_se"],
        &test_rows,
    );
    Ok(text)
}
