//! Line-list and region-table input.
//!
//! Case files are CSV with the columns
//! `case_id,region_id,age,sex,onset_date,care_date,traveler,group_label`.
//! Rows that break a record invariant are collected into a [`ParseReport`]
//! instead of aborting the whole file; only structural problems (a missing
//! column) are hard errors.

use std::collections::{HashMap, HashSet};
use std::fmt;

use chrono::NaiveDate;

use crate::error::{Error, Result};

pub const CASE_COLUMNS: [&str; 8] =
    ["case_id", "region_id", "age", "sex", "onset_date", "care_date", "traveler", "group_label"];

pub const REGION_COLUMNS: [&str; 6] = ["region_id", "name", "population", "x", "y", "covariate"];

pub const EDGE_COLUMNS: [&str; 3] = ["src_region", "dst_region", "weight"];

pub const MAX_AGE: f64 = 120.0;

const DATE_FORMAT: &str = "%Y-%m-%d";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub enum Sex {
    Male,
    Female,
    #[default]
    Unknown,
}

impl Sex {
    fn parse(s: &str) -> Option<Sex> {
        match s.trim() {
            "M" | "m" => Some(Sex::Male),
            "F" | "f" => Some(Sex::Female),
            "" | "U" | "u" | "unknown" => Some(Sex::Unknown),
            _ => None,
        }
    }

    fn as_field(self) -> &'static str {
        match self {
            Sex::Male => "M",
            Sex::Female => "F",
            Sex::Unknown => "",
        }
    }
}

/// One crowdsourced case.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseRecord {
    pub case_id: String,
    /// Reporting region as given in the source; travelers are not reassigned.
    pub region_id: String,
    pub age: f64,
    pub sex: Sex,
    pub onset_date: NaiveDate,
    pub care_date: Option<NaiveDate>,
    pub traveler: bool,
    pub group_label: Option<String>,
}

/// Whole days from symptom onset to seeking care.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DelayDays(u32);

impl DelayDays {
    pub fn value(self) -> u32 {
        self.0
    }
}

impl fmt::Display for DelayDays {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Delay between onset and care, absent when the care date is unknown.
pub fn compute_delay(record: &CaseRecord) -> Option<DelayDays> {
    let care = record.care_date?;
    let days = (care - record.onset_date).num_days();
    // Parsing rejects care before onset, so this only guards hand-built records.
    u32::try_from(days).ok().map(DelayDays)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    pub region_id: String,
    pub name: String,
    pub population: u64,
    pub x: f64,
    pub y: f64,
    /// Proportions over the configured age bins.
    pub age_distribution: Option<Vec<f64>>,
    pub covariate: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RegionTable {
    regions: Vec<Region>,
    index: HashMap<String, usize>,
}

impl RegionTable {
    pub fn new(regions: Vec<Region>) -> Result<Self> {
        let mut index = HashMap::with_capacity(regions.len());
        for (i, r) in regions.iter().enumerate() {
            if r.population == 0 {
                return Err(Error::Input(format!("region `{}` has zero population", r.region_id)));
            }
            if let Some(dist) = &r.age_distribution {
                check_distribution(&r.region_id, dist)?;
            }
            if index.insert(r.region_id.clone(), i).is_some() {
                return Err(Error::Input(format!("duplicate region_id `{}`", r.region_id)));
            }
        }
        Ok(RegionTable { regions, index })
    }

    pub fn len(&self) -> usize {
        self.regions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.regions.is_empty()
    }

    pub fn regions(&self) -> &[Region] {
        &self.regions
    }

    pub fn get(&self, region_id: &str) -> Option<&Region> {
        self.index.get(region_id).map(|&i| &self.regions[i])
    }

    pub fn position(&self, region_id: &str) -> Option<usize> {
        self.index.get(region_id).copied()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.regions.iter().map(|r| r.region_id.as_str())
    }

    /// Attaches age distributions by region id.
    pub fn set_age_distribution(&mut self, region_id: &str, dist: Vec<f64>) -> Result<()> {
        check_distribution(region_id, &dist)?;
        let i = self.position(region_id).ok_or_else(|| Error::Input(format!("unknown region `{region_id}`")))?;
        self.regions[i].age_distribution = Some(dist);
        Ok(())
    }
}

fn check_distribution(region_id: &str, dist: &[f64]) -> Result<()> {
    if dist.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(Error::Input(format!("region `{region_id}`: age proportions must be finite and nonnegative")));
    }
    let total: f64 = dist.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Input(format!("region `{region_id}`: age proportions sum to {total}, expected 1")));
    }
    Ok(())
}

/// Explicit network link between two regions.
#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub src: String,
    pub dst: String,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RejectedRow {
    /// 1-based data row number (the header is row 0).
    pub row: usize,
    pub case_id: Option<String>,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParseReport {
    pub data_rows: usize,
    pub rejected: Vec<RejectedRow>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParsedLineList {
    pub records: Vec<CaseRecord>,
    pub report: ParseReport,
}

fn reader(text: &str) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new().trim(csv::Trim::All).flexible(true).from_reader(text.as_bytes())
}

fn column_positions(headers: &csv::StringRecord, required: &[&str]) -> Result<Vec<usize>> {
    required
        .iter()
        .map(|name| headers.iter().position(|h| h == *name).ok_or_else(|| Error::MissingColumn((*name).to_string())))
        .collect()
}

fn parse_date(s: &str, column: &str) -> std::result::Result<NaiveDate, String> {
    NaiveDate::parse_from_str(s, DATE_FORMAT).map_err(|_| format!("unparseable date `{s}` in {column}"))
}

fn parse_case_row(
    row: &csv::StringRecord,
    cols: &[usize],
    regions: Option<&RegionTable>,
) -> std::result::Result<CaseRecord, String> {
    let field = |i: usize| row.get(cols[i]).unwrap_or("");
    let case_id = field(0).to_string();
    if case_id.is_empty() {
        return Err("empty case_id".into());
    }
    let region_id = field(1).to_string();
    if region_id.is_empty() {
        return Err("empty region_id".into());
    }
    if let Some(table) = regions {
        if table.get(&region_id).is_none() {
            return Err(format!("unknown region `{region_id}`"));
        }
    }
    let age: f64 = field(2).parse().map_err(|_| format!("unparseable age `{}`", field(2)))?;
    if !(0.0..=MAX_AGE).contains(&age) {
        return Err(format!("age {age} outside [0, 120]"));
    }
    let sex = Sex::parse(field(3)).ok_or_else(|| format!("unknown sex `{}`", field(3)))?;
    let onset_date = parse_date(field(4), "onset_date")?;
    let care_date = match field(5) {
        "" => None,
        s => Some(parse_date(s, "care_date")?),
    };
    if let Some(care) = care_date {
        if care < onset_date {
            return Err("care precedes onset".into());
        }
    }
    let traveler = match field(6) {
        "0" => false,
        "1" => true,
        s => return Err(format!("traveler must be 0 or 1, got `{s}`")),
    };
    let group_label = match field(7) {
        "" => None,
        s => Some(s.to_string()),
    };
    Ok(CaseRecord { case_id, region_id, age, sex, onset_date, care_date, traveler, group_label })
}

/// Parses a cases CSV.
///
/// When `regions` is given, every record's region must resolve in it. Rows
/// with bad values, unknown regions or a repeated `case_id` are rejected with
/// their row number; `records.len() + report.rejected.len()` always equals the
/// number of data rows.
pub fn parse_line_list(csv_text: &str, regions: Option<&RegionTable>) -> Result<ParsedLineList> {
    let mut rdr = reader(csv_text);
    let headers = rdr.headers()?.clone();
    let cols = column_positions(&headers, &CASE_COLUMNS)?;

    let mut out = ParsedLineList::default();
    let mut seen = HashSet::new();
    for (i, row) in rdr.records().enumerate() {
        let row_no = i + 1;
        out.report.data_rows += 1;
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                out.report.rejected.push(RejectedRow { row: row_no, case_id: None, reason: e.to_string() });
                continue;
            }
        };
        let case_id = row.get(cols[0]).filter(|s| !s.is_empty()).map(String::from);
        let parsed = parse_case_row(&row, &cols, regions).and_then(|rec| {
            if seen.insert(rec.case_id.clone()) {
                Ok(rec)
            } else {
                Err(format!("duplicate case_id `{}`", rec.case_id))
            }
        });
        match parsed {
            Ok(rec) => out.records.push(rec),
            Err(reason) => out.report.rejected.push(RejectedRow { row: row_no, case_id, reason }),
        }
    }
    Ok(out)
}

/// Serializes records in the cases CSV layout accepted by [`parse_line_list`].
pub fn write_line_list(records: &[CaseRecord]) -> Result<String> {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    wtr.write_record(CASE_COLUMNS)?;
    for r in records {
        let age = r.age.to_string();
        let onset = r.onset_date.format(DATE_FORMAT).to_string();
        let care = r.care_date.map(|d| d.format(DATE_FORMAT).to_string()).unwrap_or_default();
        wtr.write_record([
            r.case_id.as_str(),
            r.region_id.as_str(),
            age.as_str(),
            r.sex.as_field(),
            onset.as_str(),
            care.as_str(),
            if r.traveler { "1" } else { "0" },
            r.group_label.as_deref().unwrap_or(""),
        ])?;
    }
    let bytes = wtr.into_inner().map_err(|e| Error::Input(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Input(e.to_string()))
}

/// Parses a regions CSV. Unlike case files, any bad row is a hard error.
pub fn parse_regions(csv_text: &str) -> Result<RegionTable> {
    let mut rdr = reader(csv_text);
    let headers = rdr.headers()?.clone();
    let cols = column_positions(&headers, &REGION_COLUMNS[..5])?;
    let covariate_col = headers.iter().position(|h| h == "covariate");

    let mut regions = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        let row_no = i + 1;
        let bad = |reason: String| Error::Row { row: row_no, reason };
        let field = |c: usize| row.get(cols[c]).unwrap_or("");
        let population: u64 = field(2).parse().map_err(|_| bad(format!("unparseable population `{}`", field(2))))?;
        let x: f64 = field(3).parse().map_err(|_| bad(format!("unparseable x `{}`", field(3))))?;
        let y: f64 = field(4).parse().map_err(|_| bad(format!("unparseable y `{}`", field(4))))?;
        let covariate = match covariate_col.and_then(|c| row.get(c)).unwrap_or("") {
            "" => None,
            s => Some(s.parse::<f64>().map_err(|_| bad(format!("unparseable covariate `{s}`")))?),
        };
        regions.push(Region {
            region_id: field(0).to_string(),
            name: field(1).to_string(),
            population,
            x,
            y,
            age_distribution: None,
            covariate,
        });
    }
    RegionTable::new(regions)
}

/// Parses an explicit adjacency CSV (`src_region,dst_region,weight`).
pub fn parse_edges(csv_text: &str, regions: &RegionTable) -> Result<Vec<Edge>> {
    let mut rdr = reader(csv_text);
    let headers = rdr.headers()?.clone();
    let cols = column_positions(&headers, &EDGE_COLUMNS)?;
    let mut edges = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        let bad = |reason: String| Error::Row { row: i + 1, reason };
        let src = row.get(cols[0]).unwrap_or("").to_string();
        let dst = row.get(cols[1]).unwrap_or("").to_string();
        for id in [&src, &dst] {
            if regions.get(id).is_none() {
                return Err(bad(format!("unknown region `{id}`")));
            }
        }
        let raw = row.get(cols[2]).unwrap_or("");
        let weight: f64 = raw.parse().map_err(|_| bad(format!("unparseable weight `{raw}`")))?;
        if !weight.is_finite() || weight < 0.0 {
            return Err(bad(format!("weight must be finite and nonnegative, got {weight}")));
        }
        edges.push(Edge { src, dst, weight });
    }
    Ok(edges)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CutoffSplit {
    pub before: Vec<CaseRecord>,
    /// Onsets on or after the cutoff date.
    pub after: Vec<CaseRecord>,
    pub warnings: Vec<String>,
}

pub const BEFORE_LABEL: &str = "before";
pub const AFTER_LABEL: &str = "after";

/// Splits records at `cutoff`; the cutoff day itself goes to the `after` group.
pub fn split_by_cutoff(records: &[CaseRecord], cutoff: NaiveDate) -> CutoffSplit {
    let mut split = CutoffSplit::default();
    for r in records {
        let mut r = r.clone();
        if r.onset_date < cutoff {
            r.group_label = Some(BEFORE_LABEL.to_string());
            split.before.push(r);
        } else {
            r.group_label = Some(AFTER_LABEL.to_string());
            split.after.push(r);
        }
    }
    if !records.is_empty() {
        if split.before.is_empty() {
            split.warnings.push(format!("no onsets before {cutoff}; `before` group is empty"));
        }
        if split.after.is_empty() {
            split.warnings.push(format!("no onsets on or after {cutoff}; `after` group is empty"));
        }
    }
    split
}
