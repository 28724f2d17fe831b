pub mod correlate;
pub mod estimate;
pub mod simulate;
pub mod weights;

use std::path::Path;
use std::str::FromStr;

use crowdcorr::line_list::{parse_edges, parse_line_list, parse_regions};
use crowdcorr::spatial::build_weight_matrix;
use crowdcorr::{CaseRecord, RegionTable, Scheme, WeightMatrix};
use serde::Serialize;

use crate::manifest::RunManifest;
use crate::CliResult;

#[derive(Debug, Clone, Serialize)]
pub struct RejectedRowOut {
    pub row: usize,
    pub case_id: Option<String>,
    pub reason: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct ParseSummary {
    pub data_rows: usize,
    pub accepted: usize,
    pub rejected: Vec<RejectedRowOut>,
}

pub fn load_regions(manifest: &mut RunManifest, path: &Path) -> CliResult<RegionTable> {
    Ok(parse_regions(&manifest.read_input(path)?)?)
}

/// Parses the line list. Rejected rows are reported on stderr and in the
/// returned summary; the run continues with the valid records.
pub fn load_cases(
    manifest: &mut RunManifest,
    path: &Path,
    regions: Option<&RegionTable>,
) -> CliResult<(Vec<CaseRecord>, ParseSummary)> {
    let parsed = parse_line_list(&manifest.read_input(path)?, regions)?;
    for r in &parsed.report.rejected {
        eprintln!("warning: {} row {}: {}", path.display(), r.row, r.reason);
    }
    let summary = ParseSummary {
        data_rows: parsed.report.data_rows,
        accepted: parsed.records.len(),
        rejected: parsed
            .report
            .rejected
            .iter()
            .map(|r| RejectedRowOut { row: r.row, case_id: r.case_id.clone(), reason: r.reason.clone() })
            .collect(),
    };
    Ok((parsed.records, summary))
}

/// W over the region table from `--scheme`, or from `--edges` when given.
pub fn load_weight_matrix(
    manifest: &mut RunManifest,
    regions: &RegionTable,
    scheme: &str,
    edges: Option<&Path>,
    row_standardize: bool,
) -> CliResult<WeightMatrix> {
    let scheme = match edges {
        Some(p) => Scheme::ExplicitEdges(parse_edges(&manifest.read_input(p)?, regions)?),
        None => Scheme::from_str(scheme)?,
    };
    Ok(build_weight_matrix(regions, &scheme, row_standardize)?)
}

/// Position of each record's region in the table.
pub fn region_positions(records: &[CaseRecord], regions: &RegionTable) -> CliResult<Vec<usize>> {
    records
        .iter()
        .map(|r| {
            regions.position(&r.region_id).ok_or_else(|| {
                crate::CliError::input(format!(
                    "case `{}` has region `{}` missing from the region table",
                    r.case_id, r.region_id
                ))
            })
        })
        .collect()
}

pub fn parse_list<T: FromStr>(s: &str, what: &str) -> CliResult<Vec<T>> {
    s.split(',')
        .map(|t| t.trim().parse().map_err(|_| crate::CliError::input(format!("bad {what} `{}`", t.trim()))))
        .collect()
}

pub fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |v| format!("{v:.4}"))
}
