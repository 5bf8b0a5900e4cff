//! Stage runners. Each reads the artifacts of the stages before it from the
//! output directory and writes its own.
//!
//! | stage    | writes                                                    |
//! |----------|-----------------------------------------------------------|
//! | ingest   | `human.jsonl`, `drop_report.json`                         |
//! | render   | `prompts.jsonl`                                           |
//! | poll     | `cache/queries.jsonl`, `model_distributions.jsonl`, `failures.jsonl` |
//! | metrics  | `metrics.jsonl`, `metrics.{csv,txt}`                      |
//! | compare  | `compare.json`, `compare.{csv,txt}`, `variants.{csv,txt}` |
//! | features | `embeddings.jsonl`, `tag_correlations.json`               |
//! | fit      | `study.json`, `models/*.json`                             |
//! | report   | `report/`                                                 |

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use aipoll_core::features::{tag_correlations, EmbeddingRecord, TagCorrelations};
use aipoll_core::metrics::{paired_compare, ComparisonRow, Metric, PairedComparison};
use aipoll_core::payload::ExpectedSchema;
use aipoll_core::prompt::render;
use aipoll_core::regression::split::QuestionSplit;
use aipoll_core::regression::study::{
    framework_rows, run_framework, study_split, CoefficientSet, FeatureContext, ModelKind, Prediction, StudyCell,
    StudyConfig, StudyFramework, TrainedModel,
};
use aipoll_core::stats;
use aipoll_core::survey::{aggregate, drop_report, DropReport, EmptyCell, HumanCellDistribution};
use aipoll_core::{Cardinality, DemographicCell, Framework, PermutationKey, PromptVariant};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::{BackendKind, Config};
use crate::corpus::{read_respondents, QuestionCorpus};
use crate::embed::{embed_questions, embed_text, embedder};
use crate::error::{Error, Result};
use crate::gateway::http::HttpBackend;
use crate::gateway::mock::{MockBackend, MockScript, Truth};
use crate::gateway::{collect_dd, collect_si, run_tasks, ChatBackend, ExecConfig, ModelDistribution, QueryCache, QueryRecord, Task};
use crate::io::{
    file_sha256, fmt_opt, read_json, read_jsonl, sha256_hex, write_json, write_jsonl, CorpusHashes, RunMeta, Table,
};
use crate::manifest::{run_id, RunManifest};

pub const HUMAN: &str = "human.jsonl";
pub const DROP_REPORT: &str = "drop_report.json";
pub const PROMPTS: &str = "prompts.jsonl";
pub const QUERY_CACHE: &str = "cache/queries.jsonl";
pub const EMBEDDING_CACHE: &str = "cache/embeddings.jsonl";
pub const MODEL_DISTRIBUTIONS: &str = "model_distributions.jsonl";
pub const FAILURES: &str = "failures.jsonl";
pub const METRICS: &str = "metrics.jsonl";
pub const COMPARE: &str = "compare.json";
pub const EMBEDDINGS: &str = "embeddings.jsonl";
pub const TAG_CORRELATIONS: &str = "tag_correlations.json";
pub const STUDY: &str = "study.json";
pub const MODELS_DIR: &str = "models";
pub const REPORT_DIR: &str = "report";
pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub meta: RunMeta,
    pub drop: DropReport,
    pub distributions: usize,
    pub empty_cells: Vec<EmptyCell>,
    pub ignored_columns: Vec<String>,
    pub absent_questions: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptRecord {
    pub key: PermutationKey,
    pub prompt_sha256: String,
    pub expected_schema: ExpectedSchema,
    pub text: String,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PollSummary {
    pub tasks: usize,
    pub from_cache: usize,
    pub executed: usize,
    /// Left for the next run by `poll.limit`.
    pub deferred: usize,
    pub permutations: usize,
    pub succeeded: usize,
    pub failed: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub rows: usize,
    pub failed_permutations: usize,
    pub empty_human_cells: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricStat {
    pub metric: Metric,
    pub mean: f64,
    pub se: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantSummary {
    pub variant: PromptVariant,
    pub n: usize,
    pub stats: Vec<MetricStat>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub meta: RunMeta,
    /// The DD template paired against SI.
    pub dd_variant: PromptVariant,
    pub n_pairs: usize,
    pub comparisons: Vec<PairedComparison>,
    pub by_variant: Vec<VariantSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TagReport {
    pub meta: RunMeta,
    pub correlations: TagCorrelations,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudySummary {
    pub meta: RunMeta,
    pub config: StudyConfig,
    pub split: QuestionSplit,
    pub cells: Vec<StudyCell>,
    pub coefficients: Vec<CoefficientSet>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub meta: RunMeta,
    pub model: TrainedModel,
}

/// Inputs for `predict`: a question that need not be in the corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictRequest {
    pub text: String,
    pub cardinality: Cardinality,
    pub cell: DemographicCell,
    pub variant: PromptVariant,
    /// Defaults to the variant's own framework.
    pub framework: Option<StudyFramework>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub framework: StudyFramework,
    pub model: ModelKind,
    pub target: Metric,
    pub prediction: Prediction,
}

pub fn model_file_name(framework: StudyFramework, model: ModelKind, target: Metric) -> String {
    let slug = |s: &str| s.to_lowercase().replace('+', "-");
    format!("{}_{}_{}.json", slug(framework.name()), slug(model.name()), slug(target.name()))
}

/// A loaded configuration plus the corpus and run identity derived from it.
pub struct Pipeline {
    pub cfg: Config,
    pub corpus: QuestionCorpus,
    pub meta: RunMeta,
}

impl Pipeline {
    pub fn open(cfg: Config) -> Result<Self> {
        cfg.validate()?;
        let corpus = QuestionCorpus::load(&cfg.corpus.questions)?;
        let hashes = CorpusHashes {
            questions: file_sha256(&cfg.corpus.questions)?,
            respondents: file_sha256(&cfg.corpus.respondents)?,
            tags: sha256_hex(serde_json::to_string(&corpus.tags).expect("tags serialize").as_bytes()),
        };
        let meta = RunMeta { run_id: run_id(&cfg, &hashes), corpus: hashes };
        Ok(Pipeline { cfg, corpus, meta })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.cfg.out_dir.join(name)
    }

    fn record(&self, stage: &str, counts: impl IntoIterator<Item = (&'static str, u64)>) -> Result<()> {
        let path = self.path(MANIFEST);
        let mut m = RunManifest::load_or_new(&path, &self.cfg, &self.meta);
        m.record(stage, counts);
        m.save(&path)
    }

    fn check_meta(&self, path: &Path, meta: &RunMeta, stage: &str) -> Result<()> {
        if meta != &self.meta {
            return Err(Error::Input(format!(
                "{} was produced by run {}, but the current configuration is run {}; rerun `aipoll {stage}`",
                path.display(),
                meta.run_id,
                self.meta.run_id
            )));
        }
        Ok(())
    }

    fn load_jsonl<T: DeserializeOwned>(&self, name: &str, stage: &'static str) -> Result<Vec<T>> {
        let path = self.path(name);
        let (meta, items) = read_jsonl(&path, stage)?;
        self.check_meta(&path, &meta, stage)?;
        Ok(items)
    }

    fn cardinalities(&self) -> BTreeMap<String, Cardinality> {
        self.corpus.questions.iter().map(|q| (q.id.clone(), q.cardinality)).collect()
    }

    pub fn ingest(&self) -> Result<IngestReport> {
        let file = read_respondents(&self.cfg.corpus.respondents, &self.corpus, &self.cfg.survey)?;
        let agg = aggregate(&file.records, &self.corpus.questions, &self.cfg.mapping, self.cfg.survey.weighting)?;
        let drop = drop_report(&file.records, &self.cfg.mapping);
        write_jsonl(&self.path(HUMAN), &self.meta, &agg.distributions)?;
        let report = IngestReport {
            meta: self.meta.clone(),
            drop,
            distributions: agg.distributions.len(),
            empty_cells: agg.empty_cells,
            ignored_columns: file.ignored_columns,
            absent_questions: file.absent_questions,
        };
        write_json(&self.path(DROP_REPORT), &report)?;
        self.record(
            "ingest",
            [
                ("respondents", report.drop.total as u64),
                ("classified", report.drop.classified as u64),
                ("dropped", report.drop.dropped as u64),
                ("distributions", report.distributions as u64),
                ("empty_cells", report.empty_cells.len() as u64),
            ],
        )?;
        Ok(report)
    }

    pub fn human(&self) -> Result<Vec<HumanCellDistribution>> {
        self.load_jsonl(HUMAN, "ingest")
    }

    /// Human distributions keyed the way the mock backend looks them up.
    pub fn truth(&self) -> Result<Truth> {
        Ok(self.human()?.into_iter().map(|h| ((h.question_id, h.cell), h.distribution)).collect())
    }

    pub fn render(&self) -> Result<Vec<PromptRecord>> {
        let variants = self.cfg.poll.variants();
        let mut out = Vec::new();
        for q in &self.corpus.questions {
            for cell in DemographicCell::all() {
                for &variant in &variants {
                    let p = render(q, cell, variant);
                    out.push(PromptRecord {
                        prompt_sha256: sha256_hex(p.text.as_bytes()),
                        key: p.key,
                        expected_schema: p.expected_schema,
                        text: p.text,
                    });
                }
            }
        }
        write_jsonl(&self.path(PROMPTS), &self.meta, &out)?;
        self.record("render", [("prompts", out.len() as u64)])?;
        Ok(out)
    }

    pub fn backend(&self) -> Result<Box<dyn ChatBackend>> {
        Ok(match self.cfg.backend.kind {
            BackendKind::Mock => {
                let script = match self.cfg.backend.mock_script.as_deref() {
                    Some(path) => MockScript::load(path)?,
                    None => MockScript::truth(self.cfg.seed),
                };
                Box::new(MockBackend::new(script, self.truth()?))
            }
            BackendKind::Http => Box::new(HttpBackend::new(&self.cfg.backend)?),
        })
    }

    pub fn poll(&self) -> Result<PollSummary> {
        let backend = self.backend()?;
        self.poll_with(backend.as_ref())
    }

    pub fn poll_with(&self, backend: &dyn ChatBackend) -> Result<PollSummary> {
        let prompts: Vec<PromptRecord> = self.load_jsonl(PROMPTS, "render")?;
        let cards = self.cardinalities();
        let card = |k: &PermutationKey| -> Result<usize> {
            cards
                .get(&k.question_id)
                .map(|c| c.get())
                .ok_or_else(|| Error::Input(format!("prompt for unknown question {}", k.question_id)))
        };
        let mut tasks = Vec::new();
        for p in &prompts {
            let repeats = match p.key.variant.framework {
                Framework::SI => self.cfg.poll.si_repeats,
                Framework::DD => 1,
            };
            for repeat_index in 0..repeats {
                tasks.push(Task {
                    key: p.key.clone(),
                    repeat_index,
                    cardinality: card(&p.key)?,
                    prompt: p.text.clone(),
                    prompt_sha256: p.prompt_sha256.clone(),
                    schema: p.expected_schema,
                });
            }
        }
        let cache = QueryCache::open(&self.path(QUERY_CACHE))?;
        let exec = ExecConfig::from_backend(&self.cfg.backend, self.cfg.payload.tolerance());
        let run = run_tasks(&tasks, backend, &cache, &exec, self.cfg.poll.limit)?;
        let mut summary = PollSummary {
            tasks: tasks.len(),
            from_cache: run.from_cache,
            executed: run.executed,
            deferred: run.deferred,
            permutations: prompts.len(),
            ..PollSummary::default()
        };
        if !run.is_complete() {
            return Ok(summary);
        }

        let mut by_key: BTreeMap<&PermutationKey, Vec<&QueryRecord>> = BTreeMap::new();
        for r in &run.records {
            by_key.entry(&r.key).or_default().push(r);
        }
        let mut dists = Vec::with_capacity(prompts.len());
        for p in &prompts {
            let records = by_key.get(&p.key).map(Vec::as_slice).unwrap_or_default();
            dists.push(match p.key.variant.framework {
                Framework::SI => collect_si(&p.key, records, card(&p.key)?, self.cfg.poll.si_repeats),
                Framework::DD => collect_dd(&p.key, records.first().copied()),
            });
        }
        let failures: Vec<&ModelDistribution> = dists.iter().filter(|d| d.distribution.is_none()).collect();
        summary.failed = failures.len();
        summary.succeeded = dists.len() - failures.len();
        write_jsonl(&self.path(MODEL_DISTRIBUTIONS), &self.meta, &dists)?;
        write_jsonl(&self.path(FAILURES), &self.meta, failures)?;
        self.record(
            "poll",
            [
                ("queries", summary.tasks as u64),
                ("queries_from_cache", summary.from_cache as u64),
                ("queries_executed", summary.executed as u64),
                ("permutations_attempted", summary.permutations as u64),
                ("permutations_succeeded", summary.succeeded as u64),
                ("permutations_failed", summary.failed as u64),
            ],
        )?;
        Ok(summary)
    }

    pub fn model_distributions(&self) -> Result<Vec<ModelDistribution>> {
        self.load_jsonl(MODEL_DISTRIBUTIONS, "poll")
    }

    pub fn metrics(&self) -> Result<MetricsSummary> {
        let human: BTreeMap<(String, DemographicCell), HumanCellDistribution> =
            self.human()?.into_iter().map(|h| ((h.question_id.clone(), h.cell), h)).collect();
        let mut rows = Vec::new();
        let (mut failed, mut empty) = (0, 0);
        for m in self.model_distributions()? {
            let Some(model) = &m.distribution else {
                failed += 1;
                continue;
            };
            let Some(h) = human.get(&(m.key.question_id.clone(), m.key.cell)) else {
                empty += 1;
                continue;
            };
            rows.push(ComparisonRow::compute(m.key.clone(), h.n_respondents, &h.distribution, model)?);
        }
        write_jsonl(&self.path(METRICS), &self.meta, &rows)?;
        metrics_table(&rows).write(&self.cfg.out_dir, "metrics", &self.meta)?;
        let summary = MetricsSummary { rows: rows.len(), failed_permutations: failed, empty_human_cells: empty };
        self.record(
            "metrics",
            [("rows", rows.len() as u64), ("excluded_failed", failed as u64), ("excluded_empty_human", empty as u64)],
        )?;
        Ok(summary)
    }

    pub fn metric_rows(&self) -> Result<Vec<ComparisonRow>> {
        self.load_jsonl(METRICS, "metrics")
    }

    pub fn compare(&self) -> Result<CompareReport> {
        let rows = self.metric_rows()?;
        let report = compare_rows(&rows, self.meta.clone())?;
        write_json(&self.path(COMPARE), &report)?;
        comparison_table(&report).write(&self.cfg.out_dir, "compare", &self.meta)?;
        variant_table(&report).write(&self.cfg.out_dir, "variants", &self.meta)?;
        self.record("compare", [("pairs", report.n_pairs as u64)])?;
        Ok(report)
    }

    pub fn features(&self) -> Result<BTreeMap<String, EmbeddingRecord>> {
        let e = embedder(&self.cfg.embedding)?;
        let embeddings = embed_questions(e.as_ref(), &self.corpus.questions, &self.path(EMBEDDING_CACHE))?;
        write_jsonl(&self.path(EMBEDDINGS), &self.meta, embeddings.values())?;
        let tagged = !self.corpus.tags.is_empty() && self.corpus.questions.iter().all(|q| q.tag.is_some());
        if tagged {
            let correlations = tag_correlations(&self.corpus.questions, &embeddings, &self.corpus.tags)?;
            write_json(&self.path(TAG_CORRELATIONS), &TagReport { meta: self.meta.clone(), correlations })?;
        } else {
            let _ = std::fs::remove_file(self.path(TAG_CORRELATIONS));
        }
        self.record("features", [("embeddings", embeddings.len() as u64), ("tag_table", u64::from(tagged))])?;
        Ok(embeddings)
    }

    pub fn embeddings(&self) -> Result<BTreeMap<String, EmbeddingRecord>> {
        let records: Vec<EmbeddingRecord> = self.load_jsonl(EMBEDDINGS, "features")?;
        Ok(records.into_iter().map(|r| (r.question_id.clone(), r)).collect())
    }

    pub fn fit(&self) -> Result<StudySummary> {
        let rows = self.metric_rows()?;
        let embeddings = self.embeddings()?;
        let cards = self.cardinalities();
        let ctx = FeatureContext { cardinality: &cards, embeddings: &embeddings };
        let config = self.cfg.study_config();
        let split = study_split(&rows, config.split)?;
        let parts = StudyFramework::ALL
            .par_iter()
            .map(|&fw| run_framework(fw, &framework_rows(&rows, fw)?, &split, &ctx, &config))
            .collect::<aipoll_core::Result<Vec<_>>>()?;

        let models_dir = self.path(MODELS_DIR);
        if models_dir.exists() {
            std::fs::remove_dir_all(&models_dir).map_err(|source| Error::Io { path: models_dir.clone(), source })?;
        }
        let mut summary =
            StudySummary { meta: self.meta.clone(), config, split, cells: Vec::new(), coefficients: Vec::new() };
        let mut n_models = 0u64;
        for part in parts {
            summary.cells.extend(part.cells);
            summary.coefficients.extend(part.coefficients);
            for model in part.models {
                let name = model_file_name(model.framework, model.model, model.target);
                write_json(&models_dir.join(name), &ModelArtifact { meta: self.meta.clone(), model })?;
                n_models += 1;
            }
        }
        write_json(&self.path(STUDY), &summary)?;
        let unavailable = summary.cells.iter().filter(|c| c.unavailable.is_some()).count() as u64;
        self.record("fit", [("models", n_models), ("unavailable_cells", unavailable)])?;
        Ok(summary)
    }

    pub fn study(&self) -> Result<StudySummary> {
        let path = self.path(STUDY);
        let s: StudySummary = read_json(&path, "fit")?;
        self.check_meta(&path, &s.meta, "fit")?;
        Ok(s)
    }

    pub fn load_model(&self, framework: StudyFramework, model: ModelKind, target: Metric) -> Result<TrainedModel> {
        let path = self.path(MODELS_DIR).join(model_file_name(framework, model, target));
        let a: ModelArtifact = read_json(&path, "fit")?;
        self.check_meta(&path, &a.meta, "fit")?;
        Ok(a.model)
    }

    pub fn predict(&self, request: &PredictRequest) -> Result<Vec<PredictionRow>> {
        const ID: &str = "new_question";
        let framework = request.framework.unwrap_or(match request.variant.framework {
            Framework::DD => StudyFramework::DD,
            Framework::SI => StudyFramework::SI,
        });
        let e = embedder(&self.cfg.embedding)?;
        let embedding = embed_text(e.as_ref(), ID, &request.text, &self.path(EMBEDDING_CACHE))?;
        let cards = BTreeMap::from([(ID.to_string(), request.cardinality)]);
        let embeddings = BTreeMap::from([(ID.to_string(), embedding)]);
        let ctx = FeatureContext { cardinality: &cards, embeddings: &embeddings };
        let key = PermutationKey::new(ID, request.cell, request.variant);

        let study = self.study()?;
        let mut out = Vec::new();
        for model in ModelKind::ALL {
            for target in Metric::ALL {
                let cell = study.cells.iter().find(|c| c.framework == framework && c.model == model && c.target == target);
                if cell.is_some_and(|c| c.unavailable.is_some()) {
                    continue;
                }
                let trained = self.load_model(framework, model, target)?;
                let prediction = trained.predict(&[&key], &ctx)?.remove(0);
                out.push(PredictionRow { framework, model, target, prediction });
            }
        }
        Ok(out)
    }

    pub fn report(&self) -> Result<PathBuf> {
        let dir = self.path(REPORT_DIR);
        let compare_path = self.path(COMPARE);
        let compare: CompareReport = read_json(&compare_path, "compare")?;
        self.check_meta(&compare_path, &compare.meta, "compare")?;
        let study = self.study()?;
        let rows = self.metric_rows()?;
        let tags_path = self.path(TAG_CORRELATIONS);
        let tags = match read_json::<TagReport>(&tags_path, "features") {
            Ok(t) => {
                self.check_meta(&tags_path, &t.meta, "features")?;
                Some(t.correlations)
            }
            Err(Error::MissingArtifact { .. }) => None,
            Err(e) => return Err(e),
        };
        if dir.exists() {
            std::fs::remove_dir_all(&dir).map_err(|source| Error::Io { path: dir.clone(), source })?;
        }
        let tables = crate::report::build(&compare, &study, &rows, tags.as_ref(), self.cfg.analysis.band_window)?;
        for (stem, table) in &tables {
            table.write(&dir, stem, &self.meta)?;
        }
        let summary = crate::report::summary(&self.meta, &compare, &study, &rows);
        write_json(&dir.join("summary.json"), &summary)?;
        self.record("report", [("tables", tables.len() as u64)])?;
        Ok(dir)
    }

    /// Every stage in order. Stops after `poll` when a limit defers work.
    pub fn run_all(&self) -> Result<Option<PathBuf>> {
        self.ingest()?;
        self.render()?;
        let poll = self.poll()?;
        if poll.deferred > 0 {
            return Ok(None);
        }
        self.metrics()?;
        self.compare()?;
        self.features()?;
        self.fit()?;
        self.report().map(Some)
    }
}

fn stat(metric: Metric, xs: &[f64]) -> Option<MetricStat> {
    Some(MetricStat { metric, mean: stats::mean(xs)?, se: stats::standard_error(xs) })
}

/// Pairs SI rows with the closest DD template on shared (question, cell) and
/// summarizes every variant.
pub fn compare_rows(rows: &[ComparisonRow], meta: RunMeta) -> Result<CompareReport> {
    let dd_variant = PromptVariant::closest_to_si();
    let si: Vec<&ComparisonRow> = rows.iter().filter(|r| r.key.variant.framework == Framework::SI).collect();
    let dd: Vec<&ComparisonRow> = rows.iter().filter(|r| r.key.variant == dd_variant).collect();
    let slot = |r: &ComparisonRow| (r.key.question_id.clone(), r.key.cell);
    let si_slots: std::collections::BTreeSet<_> = si.iter().map(|r| slot(r)).collect();
    let dd_slots: std::collections::BTreeSet<_> = dd.iter().map(|r| slot(r)).collect();
    let si_rows: Vec<ComparisonRow> = si.iter().filter(|r| dd_slots.contains(&slot(r))).map(|r| (*r).clone()).collect();
    let dd_rows: Vec<ComparisonRow> = dd.iter().filter(|r| si_slots.contains(&slot(r))).map(|r| (*r).clone()).collect();

    let n_pairs = si_rows.len();
    let (comparisons, note) = if n_pairs < 2 {
        (Vec::new(), Some(format!("{n_pairs} matched SI/DD pairs; at least 2 are needed")))
    } else {
        let c = Metric::ALL.iter().map(|&m| paired_compare(&si_rows, &dd_rows, m)).collect::<aipoll_core::Result<_>>()?;
        (c, None)
    };

    let mut variants: Vec<PromptVariant> = rows.iter().map(|r| r.key.variant).collect();
    variants.sort();
    variants.dedup();
    let by_variant = variants
        .into_iter()
        .map(|variant| {
            let of: Vec<&ComparisonRow> = rows.iter().filter(|r| r.key.variant == variant).collect();
            let stats = Metric::ALL
                .iter()
                .filter_map(|&m| stat(m, &of.iter().map(|r| r.get(m)).collect::<Vec<_>>()))
                .collect();
            VariantSummary { variant, n: of.len(), stats }
        })
        .collect();
    Ok(CompareReport { meta, dd_variant, n_pairs, comparisons, by_variant, note })
}

pub fn variant_label(v: PromptVariant) -> String {
    format!("{}|cot={}|dist={}", v.framework, u8::from(v.cot_reminder), u8::from(v.dist_reminder))
}

pub fn metrics_table(rows: &[ComparisonRow]) -> Table {
    let mut t = Table::new(["key", "n_human", "NEMD", "MD", "SDD"]);
    for r in rows {
        t.push([r.key.canonical(), r.n_human.to_string(), format!("{:.6}", r.nemd), format!("{:.6}", r.md), format!("{:.6}", r.sdd)]);
    }
    t
}

pub fn comparison_table(report: &CompareReport) -> Table {
    let mut t = Table::new([
        "metric", "pairs", "SI_mean", "SI_se", "DD_mean", "DD_se", "diff_SI_minus_DD", "ci_low", "ci_high", "DD_win_fraction",
    ]);
    for c in &report.comparisons {
        t.push([
            c.metric.name().to_string(),
            c.n_pairs.to_string(),
            format!("{:.4}", c.si.mean),
            format!("{:.4}", c.si.se),
            format!("{:.4}", c.dd.mean),
            format!("{:.4}", c.dd.se),
            format!("{:.4}", c.mean_diff),
            format!("{:.4}", c.ci_2sigma[0]),
            format!("{:.4}", c.ci_2sigma[1]),
            format!("{:.3}", c.win_fraction),
        ]);
    }
    t
}

pub fn variant_table(report: &CompareReport) -> Table {
    let mut header = vec!["variant".to_string(), "n".to_string()];
    for m in Metric::ALL {
        header.push(format!("{m}_mean"));
        header.push(format!("{m}_se"));
    }
    let mut t = Table::new(header);
    for v in &report.by_variant {
        let mut row = vec![variant_label(v.variant), v.n.to_string()];
        for m in Metric::ALL {
            let s = v.stats.iter().find(|s| s.metric == m);
            row.push(fmt_opt(s.map(|s| s.mean), 4));
            row.push(fmt_opt(s.and_then(|s| s.se), 4));
        }
        t.push(row);
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;
    use aipoll_core::{make_distribution, Gender, Ideology, Race};

    fn meta() -> RunMeta {
        RunMeta { run_id: "r".into(), corpus: CorpusHashes { questions: "q".into(), respondents: "p".into(), tags: "t".into() } }
    }

    fn row(q: &str, cell: DemographicCell, variant: PromptVariant, model: &[f64]) -> ComparisonRow {
        let human = make_distribution(&[1.0, 1.0, 1.0, 1.0, 1.0], 5).unwrap();
        let model = make_distribution(model, 5).unwrap();
        ComparisonRow::compute(PermutationKey::new(q, cell, variant), 10, &human, &model).unwrap()
    }

    #[test]
    fn compare_pairs_only_matched_cells() {
        let a = DemographicCell::new(Ideology::Liberal, Gender::Man, Race::White);
        let b = DemographicCell::new(Ideology::Moderate, Gender::Woman, Race::NonWhite);
        let rows = vec![
            row("q1", a, PromptVariant::si(), &[0.0, 0.0, 1.0, 0.0, 0.0]),
            row("q1", b, PromptVariant::si(), &[1.0, 0.0, 0.0, 0.0, 0.0]),
            row("q2", a, PromptVariant::si(), &[0.0, 0.0, 1.0, 0.0, 0.0]),
            row("q1", a, PromptVariant::closest_to_si(), &[1.0, 1.0, 1.0, 1.0, 1.0]),
            row("q1", b, PromptVariant::closest_to_si(), &[1.0, 1.0, 1.0, 1.0, 1.0]),
            row("q1", a, PromptVariant::dd(false, false), &[1.0, 0.0, 0.0, 0.0, 0.0]),
        ];
        let r = compare_rows(&rows, meta()).unwrap();
        assert_eq!(r.n_pairs, 2);
        let nemd = &r.comparisons[0];
        assert_eq!(nemd.metric, Metric::Nemd);
        // SI NEMD is 0.3 (middle point mass) and 0.5 (point mass at 1); DD matches exactly
        assert!((nemd.si.mean - 0.4).abs() < 1e-12);
        assert!((nemd.mean_diff - 0.4).abs() < 1e-12);
        assert_eq!(nemd.win_fraction, 1.0);
        assert_eq!(r.by_variant.len(), 3);
        let lone = r.by_variant.iter().find(|v| v.variant == PromptVariant::dd(false, false)).unwrap();
        assert_eq!(lone.n, 1);
        assert_eq!(lone.stats[0].se, None);
        let text = variant_table(&r).to_text();
        assert!(text.contains("n/a"));
    }

    #[test]
    fn too_few_pairs_leaves_a_note() {
        let a = DemographicCell::new(Ideology::Liberal, Gender::Man, Race::White);
        let rows = vec![row("q1", a, PromptVariant::si(), &[0.0, 0.0, 1.0, 0.0, 0.0])];
        let r = compare_rows(&rows, meta()).unwrap();
        assert!(r.comparisons.is_empty());
        assert!(r.note.is_some());
    }

    #[test]
    fn model_file_names_are_filesystem_safe() {
        assert_eq!(model_file_name(StudyFramework::Difference, ModelKind::RidgeInteractions, Metric::Sdd), "si-dd_ridge-ix_sdd.json");
    }
}
