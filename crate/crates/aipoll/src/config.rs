//! Run configuration, read from a TOML file.
//!
//! Every field has a default, so an empty file is a valid (if not very useful)
//! configuration. Relative paths resolve against the config file's directory.

use std::path::{Path, PathBuf};

use aipoll_core::payload::SumTolerance;
use aipoll_core::regression::gbm::GbmConfig;
use aipoll_core::regression::ridge::RidgeConfig;
use aipoll_core::regression::split::SplitSpec;
use aipoll_core::regression::study::StudyConfig;
use aipoll_core::survey::{DemographicMapping, Weighting};
use aipoll_core::{Framework, PromptVariant};
use serde::{Deserialize, Serialize};

use crate::error::{format_err, Error, IoContext, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub corpus: CorpusConfig,
    pub mapping: DemographicMapping,
    pub survey: SurveyConfig,
    pub poll: PollConfig,
    pub backend: BackendConfig,
    pub payload: PayloadConfig,
    pub embedding: EmbeddingConfig,
    pub study: StudySection,
    pub analysis: AnalysisConfig,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            seed: 0,
            out_dir: PathBuf::from("out"),
            corpus: CorpusConfig::default(),
            mapping: DemographicMapping::default(),
            survey: SurveyConfig::default(),
            poll: PollConfig::default(),
            backend: BackendConfig::default(),
            payload: PayloadConfig::default(),
            embedding: EmbeddingConfig::default(),
            study: StudySection::default(),
            analysis: AnalysisConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    /// JSON document `{"tags": [...], "questions": [...]}`.
    pub questions: PathBuf,
    /// Comma-separated respondent microdata with a header row.
    pub respondents: PathBuf,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig { questions: "questions.json".into(), respondents: "respondents.csv".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurveyConfig {
    pub weighting: Weighting,
    pub weight_column: String,
}

impl Default for SurveyConfig {
    fn default() -> Self {
        SurveyConfig { weighting: Weighting::Unweighted, weight_column: "weight".into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariantFlags {
    pub cot: bool,
    pub dist: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PollConfig {
    pub frameworks: Vec<Framework>,
    pub dd_variants: Vec<VariantFlags>,
    pub si_repeats: u32,
    /// Stop after this many uncached permutation-repeats; the next run resumes.
    pub limit: Option<usize>,
}

impl Default for PollConfig {
    fn default() -> Self {
        PollConfig {
            frameworks: vec![Framework::DD, Framework::SI],
            dd_variants: PromptVariant::DD_VARIANTS
                .iter()
                .map(|v| VariantFlags { cot: v.cot_reminder, dist: v.dist_reminder })
                .collect(),
            si_repeats: 20,
            limit: None,
        }
    }
}

impl PollConfig {
    pub fn variants(&self) -> Vec<PromptVariant> {
        let mut out = Vec::new();
        if self.frameworks.contains(&Framework::DD) {
            out.extend(self.dd_variants.iter().map(|f| PromptVariant::dd(f.cot, f.dist)));
        }
        if self.frameworks.contains(&Framework::SI) {
            out.push(PromptVariant::si());
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Mock,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    /// Scripted responses for the mock backend; without one it answers from
    /// the human data.
    pub mock_script: Option<PathBuf>,
    pub endpoint: String,
    pub model_name: String,
    pub temperature: f64,
    pub max_concurrency: usize,
    pub max_retries: u32,
    /// First backoff delay; doubles each retry, with jitter.
    pub retry_base_ms: u64,
    pub timeout_secs: u64,
    /// Minimum spacing between request starts; 0 disables rate limiting.
    pub min_interval_ms: u64,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            kind: BackendKind::Mock,
            mock_script: None,
            endpoint: "https://api.openai.com/v1/chat/completions".into(),
            model_name: "gpt-4o-mini".into(),
            temperature: 1.0,
            max_concurrency: 8,
            max_retries: 3,
            retry_base_ms: 1000,
            timeout_secs: 60,
            min_interval_ms: 0,
            api_key_env: "OPENAI_API_KEY".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PayloadConfig {
    pub sum_min: f64,
    pub sum_max: f64,
}

impl Default for PayloadConfig {
    fn default() -> Self {
        let t = SumTolerance::default();
        PayloadConfig { sum_min: t.min, sum_max: t.max }
    }
}

impl PayloadConfig {
    pub fn tolerance(&self) -> SumTolerance {
        SumTolerance { min: self.sum_min, max: self.sum_max }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingKind {
    /// Signed feature hashing of word unigrams and bigrams; offline and deterministic.
    Hashing,
    /// Vectors looked up by exact question text from a JSON file.
    Fixture,
    /// OpenAI-compatible `/embeddings` endpoint.
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingConfig {
    pub kind: EmbeddingKind,
    pub fixture: Option<PathBuf>,
    pub endpoint: String,
    pub model_name: String,
    pub api_key_env: String,
    pub timeout_secs: u64,
    /// Output width of the hashing embedder; must be at least 100.
    pub hashing_dims: usize,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        EmbeddingConfig {
            kind: EmbeddingKind::Hashing,
            fixture: None,
            endpoint: "https://api.openai.com/v1/embeddings".into(),
            model_name: "text-embedding-3-large".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            timeout_secs: 60,
            hashing_dims: 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudySection {
    pub test_fraction: f64,
    pub ridge: RidgeConfig,
    pub gbm: GbmConfig,
}

impl Default for StudySection {
    fn default() -> Self {
        StudySection {
            test_fraction: SplitSpec::default().test_fraction,
            ridge: RidgeConfig::default(),
            gbm: GbmConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    /// Width of the moving-average window over SDD in the heterogeneity table.
    pub band_window: f64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig { band_window: 0.1 }
    }
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Loads a config file and resolves its relative paths.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).at(path)?;
        let mut cfg = Config::from_toml(&text).map_err(|e| format_err(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.out_dir);
        fix(&mut self.corpus.questions);
        fix(&mut self.corpus.respondents);
        if let Some(p) = self.backend.mock_script.as_mut() {
            fix(p);
        }
        if let Some(p) = self.embedding.fixture.as_mut() {
            fix(p);
        }
    }

    pub fn validate(&self) -> Result<()> {
        let b = &self.backend;
        if b.max_concurrency == 0 {
            return Err(Error::Config("backend.max_concurrency must be at least 1".into()));
        }
        if !(b.temperature >= 0.0) {
            return Err(Error::Config("backend.temperature must be non-negative".into()));
        }
        if !(self.payload.sum_min <= self.payload.sum_max) {
            return Err(Error::Config("payload.sum_min exceeds payload.sum_max".into()));
        }
        if self.poll.si_repeats == 0 {
            return Err(Error::Config("poll.si_repeats must be at least 1".into()));
        }
        if self.embedding.kind == EmbeddingKind::Fixture && self.embedding.fixture.is_none() {
            return Err(Error::Config("embedding.kind = \"fixture\" needs embedding.fixture".into()));
        }
        if self.embedding.kind == EmbeddingKind::Hashing
            && self.embedding.hashing_dims < aipoll_core::features::EMBED_DIMS
        {
            return Err(Error::Config(format!(
                "embedding.hashing_dims must be at least {}",
                aipoll_core::features::EMBED_DIMS
            )));
        }
        if !(self.analysis.band_window > 0.0) {
            return Err(Error::Config("analysis.band_window must be positive".into()));
        }
        Ok(())
    }

    pub fn study_config(&self) -> StudyConfig {
        StudyConfig {
            split: SplitSpec { seed: self.seed, test_fraction: self.study.test_fraction },
            ridge: self.study.ridge,
            gbm: self.study.gbm,
        }
    }
}
