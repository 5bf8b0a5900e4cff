//! Full factorial of target × framework × model on one shared question split.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::eval::r_squared;
use super::gbm::{fit_gbm, predict_gbm, GbmConfig, GbmFit};
use super::ridge::{predict_ridge, RidgeDesign, significant_coefficients, CoefficientReport, RidgeConfig, RidgeFit};
use super::split::{split_questions, QuestionSplit, SplitSpec};
use crate::error::{Error, Result};
use crate::features::{build_features, column_names, fit_scaler, EmbeddingRecord, ScalerState};
use crate::metrics::{ComparisonRow, Metric};
use crate::model::{Cardinality, DemographicCell, Framework, PermutationKey, PromptVariant};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum StudyFramework {
    DD,
    SI,
    /// SI minus the DD variant closest to the SI prompt, per (question, cell).
    #[serde(rename = "SI-DD")]
    Difference,
}

impl StudyFramework {
    pub const ALL: [StudyFramework; 3] = [StudyFramework::DD, StudyFramework::SI, StudyFramework::Difference];

    pub fn name(self) -> &'static str {
        match self {
            StudyFramework::DD => "DD",
            StudyFramework::SI => "SI",
            StudyFramework::Difference => "SI-DD",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "ridge")]
    Ridge,
    #[serde(rename = "ridge+ix")]
    RidgeInteractions,
    #[serde(rename = "gbm")]
    Gbm,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::Ridge, ModelKind::RidgeInteractions, ModelKind::Gbm];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Ridge => "ridge",
            ModelKind::RidgeInteractions => "ridge+ix",
            ModelKind::Gbm => "gbm",
        }
    }

    pub fn with_interactions(self) -> bool {
        self == ModelKind::RidgeInteractions
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StudyConfig {
    pub split: SplitSpec,
    pub ridge: RidgeConfig,
    pub gbm: GbmConfig,
}

/// Lookups the design matrix needs besides the keys themselves.
#[derive(Debug, Clone, Copy)]
pub struct FeatureContext<'a> {
    pub cardinality: &'a BTreeMap<String, Cardinality>,
    pub embeddings: &'a BTreeMap<String, EmbeddingRecord>,
}

impl FeatureContext<'_> {
    fn embedding(&self, question_id: &str) -> Result<&EmbeddingRecord> {
        self.embeddings.get(question_id).ok_or_else(|| Error::MissingEmbedding(question_id.to_string()))
    }

    fn cardinality(&self, question_id: &str) -> Result<Cardinality> {
        self.cardinality
            .get(question_id)
            .copied()
            .ok_or_else(|| Error::InvalidQuestion(format!("no cardinality known for {question_id}")))
    }

    /// Fits the embedding scaler on the rows' (repeated) question embeddings.
    pub fn fit_scaler(&self, keys: &[&PermutationKey]) -> Result<ScalerState> {
        let vectors = keys.iter().map(|k| self.embedding(&k.question_id).map(|e| e.vector.as_slice())).collect::<Result<Vec<_>>>()?;
        fit_scaler(&vectors)
    }

    pub fn design_matrix(&self, keys: &[&PermutationKey], scaler: &ScalerState, with_interactions: bool) -> Result<DMatrix<f64>> {
        let rows = keys
            .iter()
            .map(|k| {
                let card = self.cardinality(&k.question_id)?;
                let emb = self.embedding(&k.question_id)?;
                Ok(build_features(k, card, Some(emb), scaler, with_interactions)?.to_row())
            })
            .collect::<Result<Vec<_>>>()?;
        if rows.is_empty() {
            return Ok(DMatrix::zeros(0, crate::features::column_count(with_interactions)));
        }
        super::matrix_from_rows(&rows)
    }
}

/// Metric rows for one framework. Difference rows carry the SI key.
pub fn framework_rows(rows: &[ComparisonRow], framework: StudyFramework) -> Result<Vec<ComparisonRow>> {
    let of = |fw: Framework| rows.iter().filter(move |r| r.key.variant.framework == fw);
    match framework {
        StudyFramework::DD => Ok(of(Framework::DD).cloned().collect()),
        StudyFramework::SI => Ok(of(Framework::SI).cloned().collect()),
        StudyFramework::Difference => {
            let closest = PromptVariant::closest_to_si();
            let mut dd: BTreeMap<(&str, DemographicCell), &ComparisonRow> = BTreeMap::new();
            for r in of(Framework::DD).filter(|r| r.key.variant == closest) {
                if dd.insert((r.key.question_id.as_str(), r.key.cell), r).is_some() {
                    return Err(Error::Alignment(format!("duplicate row {}", r.key)));
                }
            }
            Ok(of(Framework::SI)
                .filter_map(|si| {
                    dd.get(&(si.key.question_id.as_str(), si.key.cell)).map(|d| ComparisonRow {
                        key: si.key.clone(),
                        n_human: si.n_human,
                        nemd: si.nemd - d.nemd,
                        md: si.md - d.md,
                        sdd: si.sdd - d.sdd,
                    })
                })
                .collect())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FittedModel {
    Ridge(RidgeFit),
    Gbm(GbmFit),
}

/// Everything needed to score new permutations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub framework: StudyFramework,
    pub target: Metric,
    pub model: ModelKind,
    pub columns: Vec<String>,
    pub scaler: ScalerState,
    pub fit: FittedModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub mean: f64,
    /// Present for the Bayesian models only.
    pub sd: Option<f64>,
}

impl TrainedModel {
    pub fn predict(&self, keys: &[&PermutationKey], ctx: &FeatureContext<'_>) -> Result<Vec<Prediction>> {
        let x = ctx.design_matrix(keys, &self.scaler, self.model.with_interactions())?;
        self.predict_matrix(&x)
    }

    pub fn predict_matrix(&self, x: &DMatrix<f64>) -> Result<Vec<Prediction>> {
        match &self.fit {
            FittedModel::Ridge(fit) => {
                let (means, sds) = predict_ridge(fit, x)?;
                Ok(means.into_iter().zip(sds).map(|(mean, sd)| Prediction { mean, sd: Some(sd) }).collect())
            }
            FittedModel::Gbm(fit) => Ok(predict_gbm(fit, x)?.into_iter().map(|mean| Prediction { mean, sd: None }).collect()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyCell {
    pub framework: StudyFramework,
    pub model: ModelKind,
    pub target: Metric,
    pub n_train: usize,
    pub n_test: usize,
    pub train_r2: Option<f64>,
    pub test_r2: Option<f64>,
    /// Why nothing was fitted, when nothing was.
    pub unavailable: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientSet {
    pub framework: StudyFramework,
    pub model: ModelKind,
    pub target: Metric,
    pub report: CoefficientReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub split: QuestionSplit,
    /// Framework-major, then model, then target.
    pub cells: Vec<StudyCell>,
    pub coefficients: Vec<CoefficientSet>,
    pub models: Vec<TrainedModel>,
}

impl StudyReport {
    pub fn cell(&self, framework: StudyFramework, model: ModelKind, target: Metric) -> Option<&StudyCell> {
        self.cells.iter().find(|c| c.framework == framework && c.model == model && c.target == target)
    }

    pub fn model(&self, framework: StudyFramework, model: ModelKind, target: Metric) -> Option<&TrainedModel> {
        self.models.iter().find(|m| m.framework == framework && m.model == model && m.target == target)
    }
}

/// Builds the shared split over every question present in `rows`.
pub fn study_split(rows: &[ComparisonRow], spec: SplitSpec) -> Result<QuestionSplit> {
    split_questions(rows.iter().map(|r| r.key.question_id.as_str()), spec)
}

pub fn run_study(rows: &[ComparisonRow], ctx: &FeatureContext<'_>, config: &StudyConfig) -> Result<StudyReport> {
    let split = study_split(rows, config.split)?;
    let mut report = StudyReport { split, cells: Vec::new(), coefficients: Vec::new(), models: Vec::new() };
    for framework in StudyFramework::ALL {
        let fw_rows = framework_rows(rows, framework)?;
        let part = run_framework(framework, &fw_rows, &report.split, ctx, config)?;
        report.cells.extend(part.cells);
        report.coefficients.extend(part.coefficients);
        report.models.extend(part.models);
    }
    Ok(report)
}

/// Fits all models and targets for one framework's rows against a fixed split.
pub fn run_framework(
    framework: StudyFramework,
    rows: &[ComparisonRow],
    split: &QuestionSplit,
    ctx: &FeatureContext<'_>,
    config: &StudyConfig,
) -> Result<StudyReport> {
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for r in rows {
        if split.is_test(&r.key.question_id) {
            test.push(r);
        } else if split.is_train(&r.key.question_id) {
            train.push(r);
        } else {
            return Err(Error::Alignment(format!("question {} is outside the split", r.key.question_id)));
        }
    }
    let mut out = StudyReport { split: split.clone(), cells: Vec::new(), coefficients: Vec::new(), models: Vec::new() };

    let shortfall = if rows.is_empty() {
        Some(format!("no {} rows", framework.name()))
    } else if train.len() < 2 {
        Some(format!("{} training rows", train.len()))
    } else if test.is_empty() {
        Some("no test rows".to_string())
    } else {
        None
    };
    if let Some(reason) = shortfall {
        for model in ModelKind::ALL {
            for target in Metric::ALL {
                out.cells.push(StudyCell {
                    framework,
                    model,
                    target,
                    n_train: train.len(),
                    n_test: test.len(),
                    train_r2: None,
                    test_r2: None,
                    unavailable: Some(reason.clone()),
                });
            }
        }
        return Ok(out);
    }

    let train_keys: Vec<&PermutationKey> = train.iter().map(|r| &r.key).collect();
    let test_keys: Vec<&PermutationKey> = test.iter().map(|r| &r.key).collect();
    let scaler = ctx.fit_scaler(&train_keys)?;

    for model in ModelKind::ALL {
        let ix = model.with_interactions();
        let columns = column_names(ix);
        let x_train = ctx.design_matrix(&train_keys, &scaler, ix)?;
        let x_test = ctx.design_matrix(&test_keys, &scaler, ix)?;
        let design = match model {
            ModelKind::Gbm => None,
            _ => Some(RidgeDesign::new(&x_train)),
        };
        for target in Metric::ALL {
            let y_train: Vec<f64> = train.iter().map(|r| r.get(target)).collect();
            let y_test: Vec<f64> = test.iter().map(|r| r.get(target)).collect();
            let fit = match &design {
                Some(Ok(d)) => d.fit(&y_train, &config.ridge).map(FittedModel::Ridge),
                Some(Err(e)) => Err(e.clone()),
                None => fit_gbm(&x_train, &y_train, &config.gbm).map(FittedModel::Gbm),
            };
            let mut cell = StudyCell {
                framework,
                model,
                target,
                n_train: train.len(),
                n_test: test.len(),
                train_r2: None,
                test_r2: None,
                unavailable: None,
            };
            let fit = match fit {
                Ok(f) => f,
                Err(e @ (Error::InsufficientData(_) | Error::NonFinite)) => {
                    cell.unavailable = Some(e.to_string());
                    out.cells.push(cell);
                    continue;
                }
                Err(e) => return Err(e),
            };
            let trained = TrainedModel { framework, target, model, columns: columns.clone(), scaler: scaler.clone(), fit };
            let means = |x: &DMatrix<f64>| -> Result<Vec<f64>> {
                Ok(trained.predict_matrix(x)?.into_iter().map(|p| p.mean).collect())
            };
            cell.train_r2 = r_squared(&y_train, &means(&x_train)?)?;
            cell.test_r2 = r_squared(&y_test, &means(&x_test)?)?;
            if let FittedModel::Ridge(fit) = &trained.fit {
                out.coefficients.push(CoefficientSet {
                    framework,
                    model,
                    target,
                    report: significant_coefficients(fit, &trained.columns)?,
                });
            }
            out.cells.push(cell);
            out.models.push(trained);
        }
    }
    Ok(out)
}
