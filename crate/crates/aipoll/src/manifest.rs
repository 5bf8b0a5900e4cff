//! `manifest.json`: what a run was configured with, what it consumed, what
//! each stage produced and when.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::error::Result;
use crate::io::{sha256_hex, write_json, CorpusHashes, RunMeta};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub completed_at: String,
    pub counts: BTreeMap<String, u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    /// Holds the name of the API key variable, never the key.
    pub config: Config,
    pub corpus: CorpusHashes,
    pub stages: BTreeMap<String, StageRecord>,
}

/// Stands in for an input file by its content, so a run's identity does not
/// depend on where the file lives.
fn content_tag(path: &Path) -> PathBuf {
    match std::fs::read(path) {
        Ok(bytes) => PathBuf::from(format!("sha256:{}", sha256_hex(&bytes))),
        Err(_) => path.to_path_buf(),
    }
}

/// Settings that change how a run executes but not what it computes.
fn reproducible_part(cfg: &Config) -> Config {
    let mut c = cfg.clone();
    c.out_dir = Default::default();
    // the corpus files enter through their hashes
    c.corpus.questions = Default::default();
    c.corpus.respondents = Default::default();
    c.backend.mock_script = c.backend.mock_script.as_deref().map(content_tag);
    c.embedding.fixture = c.embedding.fixture.as_deref().map(content_tag);
    c.poll.limit = None;
    c.backend.max_concurrency = 1;
    c.backend.min_interval_ms = 0;
    c.backend.timeout_secs = 0;
    c.backend.retry_base_ms = 0;
    c
}

/// Identifier derived from the result-affecting configuration and the input hashes.
pub fn run_id(cfg: &Config, corpus: &CorpusHashes) -> String {
    let doc = serde_json::json!({"config": reproducible_part(cfg), "corpus": corpus});
    sha256_hex(doc.to_string().as_bytes())[..16].to_string()
}

impl RunManifest {
    pub fn load_or_new(path: &Path, cfg: &Config, meta: &RunMeta) -> Self {
        let fresh = || RunManifest {
            run_id: meta.run_id.clone(),
            config: cfg.clone(),
            corpus: meta.corpus.clone(),
            stages: BTreeMap::new(),
        };
        match std::fs::read_to_string(path).ok().and_then(|t| serde_json::from_str::<RunManifest>(&t).ok()) {
            Some(m) if m.run_id == meta.run_id => RunManifest { config: cfg.clone(), ..m },
            _ => fresh(),
        }
    }

    pub fn record(&mut self, stage: &str, counts: impl IntoIterator<Item = (&'static str, u64)>) {
        let completed_at = chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true);
        let counts = counts.into_iter().map(|(k, v)| (k.to_string(), v)).collect();
        self.stages.insert(stage.to_string(), StageRecord { completed_at, counts });
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hashes() -> CorpusHashes {
        CorpusHashes { questions: "a".into(), respondents: "b".into(), tags: "c".into() }
    }

    #[test]
    fn run_id_ignores_execution_knobs() {
        let base = Config::default();
        let id = run_id(&base, &hashes());
        let mut moved = base.clone();
        moved.out_dir = "elsewhere".into();
        moved.poll.limit = Some(3);
        moved.backend.max_concurrency = 32;
        moved.corpus.questions = "/data/elsewhere/questions.json".into();
        assert_eq!(run_id(&moved, &hashes()), id);
        let mut reseeded = base.clone();
        reseeded.seed = 9;
        assert_ne!(run_id(&reseeded, &hashes()), id);
        let other = CorpusHashes { tags: "d".into(), ..hashes() };
        assert_ne!(run_id(&base, &other), id);
    }

    #[test]
    fn manifest_carries_no_key_material() {
        std::env::set_var("AIPOLL_MANIFEST_TEST_KEY", "sk-very-secret");
        let mut cfg = Config::default();
        cfg.backend.api_key_env = "AIPOLL_MANIFEST_TEST_KEY".into();
        let meta = RunMeta { run_id: run_id(&cfg, &hashes()), corpus: hashes() };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.json");
        let mut m = RunManifest::load_or_new(&path, &cfg, &meta);
        m.record("ingest", [("rows", 3)]);
        m.save(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(!text.contains("sk-very-secret"));
        assert!(text.contains("AIPOLL_MANIFEST_TEST_KEY"));
        let again = RunManifest::load_or_new(&path, &cfg, &meta);
        assert_eq!(again.stages["ingest"].counts["rows"], 3);
    }
}
