//! Question corpus and respondent microdata readers.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use aipoll_core::model::validate_corpus;
use aipoll_core::survey::{RespondentRecord, Weighting};
use aipoll_core::Question;
use serde::{Deserialize, Serialize};

use crate::config::SurveyConfig;
use crate::error::{format_err, Error, IoContext, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuestionCorpus {
    /// Closed set of topic tags; empty when questions are untagged.
    #[serde(default)]
    pub tags: Vec<String>,
    pub questions: Vec<Question>,
}

impl QuestionCorpus {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).at(path)?;
        let corpus: QuestionCorpus = serde_json::from_str(&text).map_err(|e| format_err(path, e))?;
        corpus.validate()?;
        Ok(corpus)
    }

    pub fn validate(&self) -> Result<()> {
        if self.questions.is_empty() {
            return Err(Error::Input("question corpus is empty".into()));
        }
        let tags = (!self.tags.is_empty()).then_some(self.tags.as_slice());
        validate_corpus(&self.questions, tags)?;
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&Question> {
        self.questions.iter().find(|q| q.id == id)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RespondentFile {
    pub records: Vec<RespondentRecord>,
    /// Header columns that are neither demographics nor corpus questions.
    pub ignored_columns: Vec<String>,
    /// Corpus questions with no column in the file.
    pub absent_questions: Vec<String>,
}

const ID: &str = "respondent_id";
const DEMOGRAPHICS: [&str; 3] = ["ideology", "gender", "race"];

pub fn read_respondents(path: &Path, corpus: &QuestionCorpus, survey: &SurveyConfig) -> Result<RespondentFile> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path).map_err(|e| format_err(path, e))?;
    let header: Vec<String> = reader.headers().map_err(|e| format_err(path, e))?.iter().map(String::from).collect();
    let col = |name: &str| header.iter().position(|h| h == name);

    let id_col = col(ID).ok_or_else(|| format_err(path, format!("missing column {ID:?}")))?;
    let mut demo_cols = [0usize; 3];
    for (slot, name) in demo_cols.iter_mut().zip(DEMOGRAPHICS) {
        *slot = col(name).ok_or_else(|| format_err(path, format!("missing column {name:?}")))?;
    }
    let weight_col = col(&survey.weight_column);
    if survey.weighting == Weighting::Weighted && weight_col.is_none() {
        return Err(format_err(path, format!("weighted aggregation needs column {:?}", survey.weight_column)));
    }

    let known: BTreeSet<&str> = corpus.questions.iter().map(|q| q.id.as_str()).collect();
    let mut question_cols = Vec::new();
    let mut ignored_columns = Vec::new();
    for (i, h) in header.iter().enumerate() {
        if i == id_col || demo_cols.contains(&i) || Some(i) == weight_col {
            continue;
        }
        if known.contains(h.as_str()) {
            question_cols.push((i, h.clone()));
        } else {
            ignored_columns.push(h.clone());
        }
    }
    let present: BTreeSet<&str> = question_cols.iter().map(|(_, h)| h.as_str()).collect();
    let absent_questions = corpus.questions.iter().filter(|q| !present.contains(q.id.as_str())).map(|q| q.id.clone()).collect();

    let optional = |s: &str| (!s.is_empty()).then(|| s.to_string());
    let mut records = Vec::new();
    let mut seen_ids = BTreeSet::new();
    for (row, rec) in reader.records().enumerate() {
        let line = row + 2;
        let rec = rec.map_err(|e| format_err(path, e))?;
        let respondent_id = rec.get(id_col).unwrap_or_default().to_string();
        if respondent_id.is_empty() {
            return Err(format_err(path, format!("line {line}: empty respondent_id")));
        }
        if !seen_ids.insert(respondent_id.clone()) {
            return Err(format_err(path, format!("line {line}: duplicate respondent_id {respondent_id:?}")));
        }
        let mut answers = BTreeMap::new();
        for (i, qid) in &question_cols {
            let cell = rec.get(*i).unwrap_or_default();
            if cell.is_empty() {
                continue;
            }
            let category: u32 = cell
                .parse()
                .map_err(|_| format_err(path, format!("line {line}, column {qid}: {cell:?} is not a category number")))?;
            answers.insert(qid.clone(), category);
        }
        let weight = match weight_col.map(|i| rec.get(i).unwrap_or_default()) {
            Some(w) if !w.is_empty() => Some(
                w.parse::<f64>().map_err(|_| format_err(path, format!("line {line}: weight {w:?} is not a number")))?,
            ),
            _ => None,
        };
        records.push(RespondentRecord {
            respondent_id,
            ideology_raw: optional(rec.get(demo_cols[0]).unwrap_or_default()),
            gender_raw: optional(rec.get(demo_cols[1]).unwrap_or_default()),
            race_raw: optional(rec.get(demo_cols[2]).unwrap_or_default()),
            answers,
            weight,
        });
    }
    if records.is_empty() {
        return Err(format_err(path, "no respondent rows"));
    }
    Ok(RespondentFile { records, ignored_columns, absent_questions })
}

#[cfg(test)]
mod tests {
    use super::*;
    use aipoll_core::Cardinality;

    fn corpus() -> QuestionCorpus {
        QuestionCorpus {
            tags: vec![],
            questions: vec![
                Question::new("q1", "Do a thing", Cardinality::new(2).unwrap(), "Yes", "No", None).unwrap(),
                Question::new("q2", "Do another", Cardinality::new(5).unwrap(), "Support", "Oppose", None).unwrap(),
            ],
        }
    }

    fn write(text: &str) -> tempfile::NamedTempFile {
        let f = tempfile::NamedTempFile::new().unwrap();
        std::fs::write(f.path(), text).unwrap();
        f
    }

    #[test]
    fn parses_answers_and_blanks() {
        let f = write("respondent_id,ideology,gender,race,q1,extra,q2\nr1,1,2,1,2,x,\nr2,,1,2,,y,5\n");
        let out = read_respondents(f.path(), &corpus(), &SurveyConfig::default()).unwrap();
        assert_eq!(out.records.len(), 2);
        assert_eq!(out.records[0].answers.get("q1"), Some(&2));
        assert!(!out.records[0].answers.contains_key("q2"));
        assert_eq!(out.records[1].ideology_raw, None);
        assert_eq!(out.ignored_columns, vec!["extra"]);
        assert!(out.absent_questions.is_empty());
    }

    #[test]
    fn rejects_bad_files() {
        let c = corpus();
        let s = SurveyConfig::default();
        assert!(read_respondents(write("respondent_id,ideology,gender,race,q1\n").path(), &c, &s).is_err());
        assert!(read_respondents(write("respondent_id,ideology,gender\nr1,1,1\n").path(), &c, &s).is_err());
        assert!(read_respondents(write("respondent_id,ideology,gender,race,q1\nr1,1,1,1,yes\n").path(), &c, &s).is_err());
        assert!(read_respondents(write("respondent_id,ideology,gender,race\nr1,1,1,1\nr1,1,1,1\n").path(), &c, &s).is_err());
        let weighted = SurveyConfig { weighting: Weighting::Weighted, ..SurveyConfig::default() };
        assert!(read_respondents(write("respondent_id,ideology,gender,race\nr1,1,1,1\n").path(), &c, &weighted).is_err());
    }

    #[test]
    fn corpus_json_validates() {
        let text = r#"{"tags":["Health"],"questions":[{"id":"q1","text":"t","cardinality":2,"low_label":"a","high_label":"b","tag":"Health"}]}"#;
        let c: QuestionCorpus = serde_json::from_str(text).unwrap();
        c.validate().unwrap();
        let bad = r#"{"tags":["Health"],"questions":[{"id":"q1","text":"t","cardinality":2,"low_label":"a","high_label":"b","tag":"Crime"}]}"#;
        let c: QuestionCorpus = serde_json::from_str(bad).unwrap();
        assert!(c.validate().is_err());
        assert!(serde_json::from_str::<QuestionCorpus>(&text.replace("\"cardinality\":2", "\"cardinality\":3")).is_err());
    }
}
