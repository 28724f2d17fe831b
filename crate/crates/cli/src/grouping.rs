use std::collections::BTreeSet;
use std::str::FromStr;

use chrono::NaiveDate;
use crowdcorr::line_list::{AFTER_LABEL, BEFORE_LABEL};
use crowdcorr::CaseRecord;

use crate::{CliError, CliResult};

/// How records are split into comparison groups.
#[derive(Debug, Clone, PartialEq)]
pub enum GroupBy {
    None,
    Traveler,
    Sex,
    GroupLabel,
    Region,
    Cutoff(NaiveDate),
}

impl FromStr for GroupBy {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        match s {
            "none" => Ok(GroupBy::None),
            "traveler" => Ok(GroupBy::Traveler),
            "sex" => Ok(GroupBy::Sex),
            "group_label" => Ok(GroupBy::GroupLabel),
            "region" => Ok(GroupBy::Region),
            _ => match s.strip_prefix("cutoff:") {
                Some(d) => NaiveDate::parse_from_str(d, "%Y-%m-%d")
                    .map(GroupBy::Cutoff)
                    .map_err(|_| CliError::input(format!("bad cutoff date `{d}` (YYYY-MM-DD)"))),
                None => Err(CliError::input(format!(
                    "unknown grouping `{s}` (none, traveler, sex, group_label, region, cutoff:DATE)"
                ))),
            },
        }
    }
}

impl GroupBy {
    /// Label of `r`, or `None` when the record has no group.
    pub fn label(&self, r: &CaseRecord) -> Option<String> {
        match self {
            GroupBy::None => Some("all".into()),
            GroupBy::Traveler => Some(if r.traveler { "traveler" } else { "local" }.into()),
            GroupBy::Sex => Some(
                match r.sex {
                    crowdcorr::Sex::Male => "M",
                    crowdcorr::Sex::Female => "F",
                    crowdcorr::Sex::Unknown => "U",
                }
                .into(),
            ),
            GroupBy::GroupLabel => r.group_label.clone(),
            GroupBy::Region => Some(r.region_id.clone()),
            GroupBy::Cutoff(d) => Some(if r.onset_date < *d { BEFORE_LABEL } else { AFTER_LABEL }.into()),
        }
    }

    /// Group labels in report order: before/after for cutoffs, sorted otherwise.
    pub fn labels<'a>(&self, records: impl IntoIterator<Item = &'a CaseRecord>) -> Vec<String> {
        let seen: BTreeSet<String> = records.into_iter().filter_map(|r| self.label(r)).collect();
        match self {
            GroupBy::Cutoff(_) => {
                [BEFORE_LABEL, AFTER_LABEL].iter().filter(|l| seen.contains(**l)).map(|l| l.to_string()).collect()
            }
            _ => seen.into_iter().collect(),
        }
    }

    /// Index into `labels` per record.
    pub fn assign(&self, records: &[CaseRecord], labels: &[String]) -> Vec<Option<usize>> {
        records.iter().map(|r| self.label(r).and_then(|l| labels.iter().position(|x| *x == l))).collect()
    }
}
