//! Synthetic corpus, respondents and mock scripts for end-to-end tests.
#![allow(dead_code)]

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub const TAGS: [&str; 4] = ["Economy", "Health", "Crime", "Environment"];
const TOPICS: [&str; 12] = [
    "public libraries",
    "rural hospitals",
    "police body cameras",
    "wind farms",
    "small business loans",
    "prescription drug caps",
    "prison education",
    "coastal wetlands",
    "minimum wage increases",
    "mental health clinics",
    "community policing",
    "electric buses",
];
const ACTIONS: [&str; 4] = ["Increase federal funding for", "Expand state oversight of", "Require annual audits of", "Cut taxes tied to"];

/// SI collapses onto the modal answer half the time; DD adds small noise.
pub const CONTRAST_SCRIPT: &str = r#"{
  "seed": 11,
  "rules": [
    {"match": "*|SI|*", "respond": {"mode": "truth", "mode_collapse": 0.5}},
    {"match": "*|DD|*", "respond": {"mode": "truth", "noise_sd": 0.02}}
  ]
}"#;

pub struct FixtureSpec<'a> {
    pub n_questions: usize,
    pub n_respondents: usize,
    pub seed: u64,
    pub mock_script: &'a str,
    /// Appended verbatim; may only contain tables.
    pub extra_toml: &'a str,
}

impl Default for FixtureSpec<'_> {
    fn default() -> Self {
        FixtureSpec { n_questions: 5, n_respondents: 1200, seed: 7, mock_script: CONTRAST_SCRIPT, extra_toml: "" }
    }
}

pub fn question_text(i: usize) -> String {
    let topic = TOPICS[i % TOPICS.len()];
    let action = ACTIONS[(i / TOPICS.len()) % ACTIONS.len()];
    let round = i / (TOPICS.len() * ACTIONS.len());
    if round == 0 {
        format!("{action} {topic}")
    } else {
        format!("{action} {topic} within {} years", round + 1)
    }
}

pub fn cardinality(i: usize) -> usize {
    [5, 2, 4][i % 3]
}

/// Writes questions, respondents, mock script and config into `dir` and
/// returns the config path.
pub fn write_fixture(dir: &Path, spec: &FixtureSpec<'_>) -> PathBuf {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let questions: Vec<serde_json::Value> = (0..spec.n_questions)
        .map(|i| {
            serde_json::json!({
                "id": format!("q{i:03}"),
                "text": question_text(i),
                "cardinality": cardinality(i),
                "low_label": "Strongly support",
                "high_label": "Strongly oppose",
                "tag": TAGS[i % TAGS.len()],
            })
        })
        .collect();
    let corpus = serde_json::json!({"tags": TAGS, "questions": questions});
    std::fs::write(dir.join("questions.json"), serde_json::to_string_pretty(&corpus).unwrap()).unwrap();

    let params: Vec<(f64, f64)> =
        (0..spec.n_questions).map(|_| (rng.random_range(0.3..0.7), rng.random_range(-0.9..0.9))).collect();
    let noise = Normal::new(0.0, 0.22).unwrap();
    let mut csv = String::from("respondent_id,ideology,gender,race,weight");
    for i in 0..spec.n_questions {
        write!(csv, ",q{i:03}").unwrap();
    }
    csv.push('\n');
    for r in 0..spec.n_respondents {
        let ideology: usize = if rng.random_bool(0.02) { 8 } else { rng.random_range(1..=5) };
        let gender: usize = if rng.random_bool(0.02) { 3 } else { rng.random_range(1..=2) };
        let race: usize = rng.random_range(1..=6);
        let race = if rng.random_bool(0.5) { 1 } else { race.max(2) };
        write!(csv, "r{r:05},{ideology},{gender},{race},{:.3}", rng.random_range(0.5..1.5)).unwrap();
        for (i, (base, slant)) in params.iter().enumerate() {
            if rng.random_bool(0.03) {
                csv.push(',');
                continue;
            }
            let c = cardinality(i);
            let ideo = ideology.min(5) as f64;
            let mu = base + slant * (ideo - 3.0) / 2.0 * 0.3 + if gender == 2 { 0.05 } else { 0.0 };
            let latent = (mu + noise.sample(&mut rng)).clamp(0.0, 1.0);
            let category = (latent * (c - 1) as f64).round() as usize + 1;
            write!(csv, ",{category}").unwrap();
        }
        csv.push('\n');
    }
    std::fs::write(dir.join("respondents.csv"), csv).unwrap();
    std::fs::write(dir.join("mock.json"), spec.mock_script).unwrap();

    let config = format!(
        r#"seed = {seed}
out_dir = "out"

[corpus]
questions = "questions.json"
respondents = "respondents.csv"

[mapping]
missing = ["8", "9"]
non_binary_gender = ["3"]

[mapping.ideology]
"1" = "VeryLiberal"
"2" = "Liberal"
"3" = "Moderate"
"4" = "Conservative"
"5" = "VeryConservative"

[mapping.gender]
"1" = "Man"
"2" = "Woman"

[mapping.race]
"1" = "White"
"2" = "NonWhite"
"3" = "NonWhite"
"4" = "NonWhite"
"5" = "NonWhite"
"6" = "NonWhite"

[backend]
kind = "mock"
mock_script = "mock.json"
max_concurrency = 4
retry_base_ms = 0

{extra}
"#,
        seed = spec.seed,
        extra = spec.extra_toml
    );
    let path = dir.join("aipoll.toml");
    std::fs::write(&path, config).unwrap();
    path
}

pub fn load(config: &Path) -> aipoll::Pipeline {
    aipoll::Pipeline::open(aipoll::Config::load(config).unwrap()).unwrap()
}

/// Relative path -> contents for every file under `dir`.
pub fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<(String, Vec<u8>)>) {
        let mut entries: Vec<_> = std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
        entries.sort();
        for p in entries {
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out);
    out
}
