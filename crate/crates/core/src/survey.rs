//! Classification of survey respondents into demographic cells and
//! aggregation of their answers into per-cell human distributions.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{make_distribution, DemographicCell, Gender, Ideology, OpinionDistribution, Question, Race};

/// One respondent as read from the microdata, demographic answers still in
/// source coding. `None` or an empty string means the item was skipped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RespondentRecord {
    pub respondent_id: String,
    pub ideology_raw: Option<String>,
    pub gender_raw: Option<String>,
    pub race_raw: Option<String>,
    /// question id -> category in `1..=C`
    pub answers: BTreeMap<String, u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight: Option<f64>,
}

/// Source-code mapping for the three demographic items. Codes are matched
/// after trimming whitespace.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DemographicMapping {
    pub ideology: BTreeMap<String, Ideology>,
    pub gender: BTreeMap<String, Gender>,
    pub race: BTreeMap<String, Race>,
    /// Codes meaning "skipped" or "declined to answer", valid for any item.
    #[serde(default)]
    pub missing: BTreeSet<String>,
    /// Gender codes outside the binary schema.
    #[serde(default)]
    pub non_binary_gender: BTreeSet<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    MissingDemographic,
    OutsideBinarySchema,
    UnmappedCode,
}

impl DropReason {
    pub const ALL: [DropReason; 3] =
        [DropReason::MissingDemographic, DropReason::OutsideBinarySchema, DropReason::UnmappedCode];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Classification {
    Cell(DemographicCell),
    Dropped(DropReason),
}

fn lookup<T: Copy>(
    raw: Option<&str>,
    table: &BTreeMap<String, T>,
    mapping: &DemographicMapping,
) -> core::result::Result<T, DropReason> {
    let code = match raw.map(str::trim) {
        None | Some("") => return Err(DropReason::MissingDemographic),
        Some(c) => c,
    };
    if mapping.missing.contains(code) {
        return Err(DropReason::MissingDemographic);
    }
    table.get(code).copied().ok_or(DropReason::UnmappedCode)
}

/// Places a respondent into one of the 20 cells, or says why it cannot.
/// Items are checked in the order ideology, gender, race; the first failure wins.
pub fn classify(record: &RespondentRecord, mapping: &DemographicMapping) -> Classification {
    let result = (|| {
        let ideology = lookup(record.ideology_raw.as_deref(), &mapping.ideology, mapping)?;
        let gender_code = record.gender_raw.as_deref().map(str::trim);
        if let Some(code) = gender_code {
            if mapping.non_binary_gender.contains(code) {
                return Err(DropReason::OutsideBinarySchema);
            }
        }
        let gender = lookup(gender_code, &mapping.gender, mapping)?;
        let race = lookup(record.race_raw.as_deref(), &mapping.race, mapping)?;
        Ok(DemographicCell { ideology, gender, race })
    })();
    match result {
        Ok(cell) => Classification::Cell(cell),
        Err(reason) => Classification::Dropped(reason),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HumanCellDistribution {
    pub question_id: String,
    pub cell: DemographicCell,
    pub n_respondents: usize,
    pub distribution: OpinionDistribution,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmptyCell {
    pub question_id: String,
    pub cell: DemographicCell,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregation {
    /// Question-major in corpus order, cells in [`DemographicCell::all`] order.
    pub distributions: Vec<HumanCellDistribution>,
    /// Cells without a single respondent; excluded from comparison.
    pub empty_cells: Vec<EmptyCell>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    #[default]
    Unweighted,
    /// Tally each respondent's `weight` instead of 1.
    Weighted,
}

/// Tallies category selections per (question, cell).
///
/// Unclassifiable respondents are skipped entirely; a respondent who did not
/// answer a question is skipped for that question only.
pub fn aggregate(
    records: &[RespondentRecord],
    questions: &[Question],
    mapping: &DemographicMapping,
    weighting: Weighting,
) -> Result<Aggregation> {
    let index: BTreeMap<&str, usize> =
        questions.iter().enumerate().map(|(i, q)| (q.id.as_str(), i)).collect();
    let cells = DemographicCell::all();
    let cell_index = |c: &DemographicCell| cells.iter().position(|x| x == c).unwrap_or(0);

    // tallies[q][cell] = (mass per category, respondent count)
    let mut tallies: Vec<Vec<(Vec<f64>, usize)>> = questions
        .iter()
        .map(|q| vec![(vec![0.0; q.cardinality.get()], 0usize); cells.len()])
        .collect();

    for record in records {
        let Classification::Cell(cell) = classify(record, mapping) else {
            continue;
        };
        let mass = match weighting {
            Weighting::Unweighted => 1.0,
            Weighting::Weighted => match record.weight {
                Some(w) if w.is_finite() && w >= 0.0 => w,
                _ => {
                    return Err(Error::InvalidParameter(format!(
                        "respondent {} has no usable weight",
                        record.respondent_id
                    )))
                }
            },
        };
        let ci = cell_index(&cell);
        for (qid, &category) in &record.answers {
            let Some(&qi) = index.get(qid.as_str()) else {
                continue;
            };
            let c = questions[qi].cardinality.get();
            if category == 0 || category as usize > c {
                return Err(Error::CategoryOutOfRange {
                    respondent: record.respondent_id.clone(),
                    question: qid.clone(),
                    category,
                    cardinality: c,
                });
            }
            let slot = &mut tallies[qi][ci];
            slot.0[category as usize - 1] += mass;
            slot.1 += 1;
        }
    }

    let mut distributions = Vec::new();
    let mut empty_cells = Vec::new();
    for (q, per_cell) in questions.iter().zip(tallies) {
        for (cell, (mass, n)) in cells.iter().zip(per_cell) {
            let distribution = if n == 0 { None } else { make_distribution(&mass, mass.len()).ok() };
            match distribution {
                Some(distribution) => distributions.push(HumanCellDistribution {
                    question_id: q.id.clone(),
                    cell: *cell,
                    n_respondents: n,
                    distribution,
                }),
                // zero total weight counts as empty too
                None => empty_cells.push(EmptyCell { question_id: q.id.clone(), cell: *cell }),
            }
        }
    }
    Ok(Aggregation { distributions, empty_cells })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReasonCount {
    pub count: usize,
    /// Share of all records.
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DropReport {
    pub total: usize,
    pub classified: usize,
    pub dropped: usize,
    pub by_reason: BTreeMap<DropReason, ReasonCount>,
}

pub fn drop_report(records: &[RespondentRecord], mapping: &DemographicMapping) -> DropReport {
    let mut counts: BTreeMap<DropReason, usize> = DropReason::ALL.iter().map(|r| (*r, 0)).collect();
    let mut classified = 0;
    for record in records {
        match classify(record, mapping) {
            Classification::Cell(_) => classified += 1,
            Classification::Dropped(reason) => *counts.entry(reason).or_default() += 1,
        }
    }
    let total = records.len();
    let by_reason = counts
        .into_iter()
        .map(|(reason, count)| {
            let fraction = if total == 0 { 0.0 } else { count as f64 / total as f64 };
            (reason, ReasonCount { count, fraction })
        })
        .collect();
    DropReport { total, classified, dropped: total - classified, by_reason }
}
