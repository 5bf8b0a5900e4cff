//! Regression design matrix: demographic, prompt and cardinality one-hots,
//! standardized question embeddings and demographic-by-embedding interactions.
//!
//! Column layout is fixed:
//!
//! | columns   | content                                                   |
//! |-----------|-----------------------------------------------------------|
//! | 0..10     | one-hots, reference levels Moderate / White / Man / C=5   |
//! | 10..110   | standardized embedding dimensions                         |
//! | 110..710  | 6 demographic one-hots x 100 dims, demographic-major      |

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use libm::sqrt;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Cardinality, Framework, Gender, Ideology, PermutationKey, Question, Race};
use crate::stats;

pub const EMBED_DIMS: usize = 100;
pub const BASE_COLUMNS: usize = 10;
pub const DEMOGRAPHIC_COLUMNS: usize = 6;
pub const INTERACTION_COLUMNS: usize = DEMOGRAPHIC_COLUMNS * EMBED_DIMS;

const BASE_NAMES: [&str; BASE_COLUMNS] = [
    "ideo_very_conservative",
    "ideo_conservative",
    "ideo_liberal",
    "ideo_very_liberal",
    "race_non_white",
    "gender_woman",
    "prompt_cot",
    "prompt_dist",
    "card_2",
    "card_4",
];

const INTERACTION_PREFIXES: [&str; DEMOGRAPHIC_COLUMNS] =
    ["very_conservative", "conservative", "liberal", "very_liberal", "non_white", "woman"];

pub fn column_count(with_interactions: bool) -> usize {
    BASE_COLUMNS + EMBED_DIMS + if with_interactions { INTERACTION_COLUMNS } else { 0 }
}

pub fn column_names(with_interactions: bool) -> Vec<String> {
    let mut names: Vec<String> = BASE_NAMES.iter().map(|s| String::from(*s)).collect();
    names.extend((0..EMBED_DIMS).map(|d| format!("emb_{d:03}")));
    if with_interactions {
        for prefix in INTERACTION_PREFIXES {
            names.extend((0..EMBED_DIMS).map(|d| format!("ix_{prefix}_emb_{d:03}")));
        }
    }
    names
}

/// A question embedding truncated to [`EMBED_DIMS`] leading coordinates and
/// rescaled to unit L2 norm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub question_id: String,
    pub vector: Vec<f64>,
}

/// Keeps the leading `dims` coordinates and renormalizes to unit length.
pub fn truncate_renormalize(full: &[f64], dims: usize) -> Result<Vec<f64>> {
    if full.len() < dims {
        return Err(Error::EmbeddingTooShort { need: dims, got: full.len() });
    }
    let head = &full[..dims];
    if head.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    let norm = sqrt(head.iter().map(|v| v * v).sum());
    if norm == 0.0 {
        return Err(Error::ZeroNorm);
    }
    Ok(head.iter().map(|v| v / norm).collect())
}

impl EmbeddingRecord {
    pub fn from_full(question_id: impl Into<String>, full: &[f64]) -> Result<Self> {
        Ok(EmbeddingRecord { question_id: question_id.into(), vector: truncate_renormalize(full, EMBED_DIMS)? })
    }
}

/// Per-dimension z-scoring fitted on training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalerState {
    pub mean: Vec<f64>,
    /// Population SD; 1 where the training column was constant.
    pub sd: Vec<f64>,
    pub degenerate: Vec<bool>,
}

pub fn fit_scaler<R: AsRef<[f64]>>(train_rows: &[R]) -> Result<ScalerState> {
    let Some(first) = train_rows.first() else {
        return Err(Error::InsufficientData("scaler needs at least one training row".into()));
    };
    let dims = first.as_ref().len();
    let mut mean = Vec::with_capacity(dims);
    let mut sd = Vec::with_capacity(dims);
    let mut degenerate = Vec::with_capacity(dims);
    let mut column = Vec::with_capacity(train_rows.len());
    for d in 0..dims {
        column.clear();
        for row in train_rows {
            let row = row.as_ref();
            if row.len() != dims {
                return Err(Error::Shape { expected: dims, got: row.len() });
            }
            column.push(row[d]);
        }
        let m = stats::mean(&column).expect("non-empty");
        let s = stats::population_sd(&column).expect("non-empty");
        // spread below rounding noise of the mean counts as constant
        let is_degenerate = !(s > 1e-12 * m.abs().max(1.0));
        mean.push(m);
        sd.push(if is_degenerate { 1.0 } else { s });
        degenerate.push(is_degenerate);
    }
    Ok(ScalerState { mean, sd, degenerate })
}

impl ScalerState {
    pub fn dims(&self) -> usize {
        self.mean.len()
    }

    pub fn transform(&self, row: &[f64]) -> Result<Vec<f64>> {
        if row.len() != self.dims() {
            return Err(Error::Shape { expected: self.dims(), got: row.len() });
        }
        Ok(row
            .iter()
            .zip(self.mean.iter().zip(&self.sd))
            .enumerate()
            .map(|(d, (x, (m, s)))| if self.degenerate[d] { 0.0 } else { (x - m) / s })
            .collect())
    }
}

pub fn apply_scaler<R: AsRef<[f64]>>(state: &ScalerState, rows: &[R]) -> Result<Vec<Vec<f64>>> {
    rows.iter().map(|r| state.transform(r.as_ref())).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub base: [f64; BASE_COLUMNS],
    pub embed: Vec<f64>,
    pub interactions: Option<Vec<f64>>,
}

impl FeatureVector {
    pub fn len(&self) -> usize {
        BASE_COLUMNS + self.embed.len() + self.interactions.as_ref().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn to_row(&self) -> Vec<f64> {
        let mut row = Vec::with_capacity(self.len());
        row.extend_from_slice(&self.base);
        row.extend_from_slice(&self.embed);
        if let Some(ix) = &self.interactions {
            row.extend_from_slice(ix);
        }
        row
    }
}

fn flag(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

/// The ten one-hot columns. SI rows carry zero prompt flags.
pub fn base_one_hots(key: &PermutationKey, cardinality: Cardinality) -> [f64; BASE_COLUMNS] {
    let ideo = key.cell.ideology;
    let dd = key.variant.framework == Framework::DD;
    [
        flag(ideo == Ideology::VeryConservative),
        flag(ideo == Ideology::Conservative),
        flag(ideo == Ideology::Liberal),
        flag(ideo == Ideology::VeryLiberal),
        flag(key.cell.race == Race::NonWhite),
        flag(key.cell.gender == Gender::Woman),
        flag(dd && key.variant.cot_reminder),
        flag(dd && key.variant.dist_reminder),
        flag(cardinality.get() == 2),
        flag(cardinality.get() == 4),
    ]
}

pub fn build_features(
    key: &PermutationKey,
    cardinality: Cardinality,
    embedding: Option<&EmbeddingRecord>,
    scaler: &ScalerState,
    with_interactions: bool,
) -> Result<FeatureVector> {
    let embedding = embedding.ok_or_else(|| Error::MissingEmbedding(key.question_id.clone()))?;
    if embedding.question_id != key.question_id {
        return Err(Error::MissingEmbedding(key.question_id.clone()));
    }
    let base = base_one_hots(key, cardinality);
    let embed = scaler.transform(&embedding.vector)?;
    let interactions = with_interactions.then(|| {
        let mut ix = Vec::with_capacity(INTERACTION_COLUMNS);
        for demo in &base[..DEMOGRAPHIC_COLUMNS] {
            ix.extend(embed.iter().map(|e| demo * e));
        }
        ix
    });
    Ok(FeatureVector { base, embed, interactions })
}

/// Pearson r between each tag's indicator and each embedding dimension,
/// across questions. `None` where either side is constant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TagCorrelations {
    pub tags: Vec<String>,
    pub dims: usize,
    /// `r[tag][dim]`
    pub r: Vec<Vec<Option<f64>>>,
}

impl TagCorrelations {
    pub fn get(&self, tag: &str, dim: usize) -> Option<f64> {
        let t = self.tags.iter().position(|x| x == tag)?;
        self.r[t].get(dim).copied().flatten()
    }
}

pub fn tag_correlations(
    questions: &[Question],
    embeddings: &BTreeMap<String, EmbeddingRecord>,
    tags: &[String],
) -> Result<TagCorrelations> {
    if questions.len() < 2 {
        return Err(Error::InsufficientData("tag correlations need at least two questions".into()));
    }
    let mut vectors = Vec::with_capacity(questions.len());
    let mut labels = Vec::with_capacity(questions.len());
    for q in questions {
        let tag = q
            .tag
            .as_ref()
            .ok_or_else(|| Error::InvalidQuestion(format!("{} has no tag", q.id)))?;
        let e = embeddings.get(&q.id).ok_or_else(|| Error::MissingEmbedding(q.id.clone()))?;
        vectors.push(&e.vector);
        labels.push(tag.as_str());
    }
    let dims = vectors[0].len();
    if let Some(v) = vectors.iter().find(|v| v.len() != dims) {
        return Err(Error::Shape { expected: dims, got: v.len() });
    }
    let columns: Vec<Vec<f64>> = (0..dims).map(|d| vectors.iter().map(|v| v[d]).collect()).collect();
    let r = tags
        .iter()
        .map(|tag| {
            let indicator: Vec<f64> = labels.iter().map(|l| flag(l == tag)).collect();
            columns.iter().map(|col| stats::pearson(&indicator, col)).collect()
        })
        .collect();
    Ok(TagCorrelations { tags: tags.to_vec(), dims, r })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{DemographicCell, PromptVariant};
    use alloc::vec;

    #[test]
    fn layout_sizes_and_names() {
        assert_eq!(column_count(false), 110);
        assert_eq!(column_count(true), 710);
        let names = column_names(true);
        assert_eq!(names.len(), 710);
        assert_eq!(names[0], "ideo_very_conservative");
        assert_eq!(names[97], "emb_087");
        assert_eq!(names[110 + 5 * 100 + 35], "ix_woman_emb_035");
        let short = column_names(false);
        assert_eq!(short[..], names[..110]);
    }

    #[test]
    fn truncation_examples() {
        let mut full = vec![0.5; 100];
        full.extend(vec![9.0; 1436]);
        let v = truncate_renormalize(&full, 100).unwrap();
        assert_eq!(v.len(), 100);
        for x in &v {
            assert!((x - 0.1).abs() < 1e-15);
        }
        let mut full = vec![0.0; 100];
        full[0] = 3.0;
        full[1] = 4.0;
        let v = truncate_renormalize(&full, 100).unwrap();
        assert!((v[0] - 0.6).abs() < 1e-15 && (v[1] - 0.8).abs() < 1e-15);
        assert!(v[2..].iter().all(|x| *x == 0.0));
        assert_eq!(truncate_renormalize(&[1.0; 50], 100), Err(Error::EmbeddingTooShort { need: 100, got: 50 }));
        assert_eq!(truncate_renormalize(&[0.0; 100], 100), Err(Error::ZeroNorm));
    }

    #[test]
    fn scaler_examples() {
        let rows = vec![vec![0.0, 5.0], vec![2.0, 5.0]];
        let s = fit_scaler(&rows).unwrap();
        assert_eq!(s.mean, vec![1.0, 5.0]);
        assert_eq!(s.sd, vec![1.0, 1.0]);
        assert_eq!(s.degenerate, vec![false, true]);
        assert_eq!(apply_scaler(&s, &rows).unwrap(), vec![vec![-1.0, 0.0], vec![1.0, 0.0]]);
        assert_eq!(s.transform(&[1.0, 7.0]).unwrap(), vec![0.0, 0.0]);
        assert!(fit_scaler::<Vec<f64>>(&[]).is_err());
        assert!(s.transform(&[1.0]).is_err());
    }

    fn embedding(id: &str) -> EmbeddingRecord {
        let full: Vec<f64> = (0..100).map(|i| 1.0 + i as f64).collect();
        EmbeddingRecord::from_full(id, &full).unwrap()
    }

    fn identity_scaler() -> ScalerState {
        ScalerState { mean: vec![0.0; 100], sd: vec![1.0; 100], degenerate: vec![false; 100] }
    }

    #[test]
    fn reference_cell_is_all_zero() {
        let key = PermutationKey::new(
            "q",
            DemographicCell::new(Ideology::Moderate, Gender::Man, Race::White),
            PromptVariant::dd(false, false),
        );
        let fv = build_features(&key, Cardinality::new(5).unwrap(), Some(&embedding("q")), &identity_scaler(), true)
            .unwrap();
        assert_eq!(fv.base, [0.0; 10]);
        assert!(fv.interactions.as_ref().unwrap().iter().all(|x| *x == 0.0));
        assert_eq!(fv.to_row().len(), 710);
    }

    #[test]
    fn direct_encoding() {
        let key = PermutationKey::new(
            "q",
            DemographicCell::new(Ideology::VeryLiberal, Gender::Woman, Race::NonWhite),
            PromptVariant::dd(true, true),
        );
        let fv = build_features(&key, Cardinality::new(2).unwrap(), Some(&embedding("q")), &identity_scaler(), false)
            .unwrap();
        assert_eq!(fv.base, [0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 0.0]);
        assert!(fv.interactions.is_none());
        assert_eq!(fv.to_row().len(), 110);

        let si = PermutationKey::new("q", key.cell, PromptVariant::si());
        let fv = build_features(&si, Cardinality::new(4).unwrap(), Some(&embedding("q")), &identity_scaler(), true)
            .unwrap();
        assert_eq!(fv.base, [0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        // the woman block equals the embedding, the conservative blocks are zero
        let ix = fv.interactions.unwrap();
        assert_eq!(&ix[500..600], &fv.embed[..]);
        assert!(ix[..200].iter().all(|x| *x == 0.0));
    }

    #[test]
    fn missing_embedding_is_an_error() {
        let key = PermutationKey::new("q", DemographicCell::all()[0], PromptVariant::si());
        let c = Cardinality::new(5).unwrap();
        assert!(matches!(build_features(&key, c, None, &identity_scaler(), false), Err(Error::MissingEmbedding(_))));
        assert!(build_features(&key, c, Some(&embedding("other")), &identity_scaler(), false).is_err());
    }
}
