use std::collections::BTreeMap;

use aipoll_core::features::EmbeddingRecord;
use aipoll_core::metrics::{ComparisonRow, Metric};
use aipoll_core::regression::gbm::GbmConfig;
use aipoll_core::regression::study::{run_study, FeatureContext, ModelKind, StudyConfig, StudyFramework};
use aipoll_core::{Cardinality, DemographicCell, Gender, Ideology, PermutationKey, PromptVariant, Race};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Fixture {
    rows: Vec<ComparisonRow>,
    cards: BTreeMap<String, Cardinality>,
    embeddings: BTreeMap<String, EmbeddingRecord>,
}

fn fixture(n_questions: usize, identical: bool) -> Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut cards = BTreeMap::new();
    let mut embeddings = BTreeMap::new();
    let planted: Vec<f64> = (0..100).map(|_| rng.random::<f64>() - 0.5).collect();
    let mut rows = Vec::new();
    for q in 0..n_questions {
        let id = format!("q{q:03}");
        let card = Cardinality::new([2usize, 4, 5][q % 3]).unwrap();
        let full: Vec<f64> = (0..256).map(|_| rng.random::<f64>() - 0.5).collect();
        let emb = EmbeddingRecord::from_full(id.clone(), &full).unwrap();
        let signal: f64 = emb.vector.iter().zip(&planted).map(|(a, b)| a * b).sum();
        for cell in DemographicCell::all() {
            let demo = 0.05 * (cell.ideology == Ideology::VeryConservative) as u8 as f64
                - 0.03 * (cell.race == Race::NonWhite) as u8 as f64
                + 0.02 * (cell.gender == Gender::Woman) as u8 as f64;
            let dd_key = PermutationKey::new(id.clone(), cell, PromptVariant::closest_to_si());
            let base = 0.3 + demo + 0.2 * signal;
            let dd = ComparisonRow { key: dd_key, n_human: 50, nemd: base, md: 0.5 * base, sdd: -base };
            let si = if identical {
                ComparisonRow { key: PermutationKey::new(id.clone(), cell, PromptVariant::si()), ..dd.clone() }
            } else {
                ComparisonRow {
                    key: PermutationKey::new(id.clone(), cell, PromptVariant::si()),
                    n_human: 50,
                    nemd: rng.random(),
                    md: rng.random(),
                    sdd: rng.random::<f64>() - 0.5,
                }
            };
            rows.push(dd);
            rows.push(si);
        }
        cards.insert(id.clone(), card);
        embeddings.insert(id, emb);
    }
    Fixture { rows, cards, embeddings }
}

fn quick() -> StudyConfig {
    StudyConfig { gbm: GbmConfig { n_trees: 40, ..GbmConfig::default() }, ..StudyConfig::default() }
}

#[test]
fn predictable_dd_against_noisy_si() {
    let f = fixture(140, false);
    let ctx = FeatureContext { cardinality: &f.cards, embeddings: &f.embeddings };
    let report = run_study(&f.rows, &ctx, &quick()).unwrap();
    assert_eq!(report.cells.len(), 27);
    assert!(report.split.test.iter().all(|q| !report.split.train.contains(q)));
    for target in Metric::ALL {
        let dd = report.cell(StudyFramework::DD, ModelKind::Ridge, target).unwrap();
        assert!(dd.test_r2.unwrap() > 0.999, "{target:?} {dd:?}");
        for model in ModelKind::ALL {
            let si = report.cell(StudyFramework::SI, model, target).unwrap();
            assert!(si.test_r2.unwrap() <= 0.0, "{model:?} {target:?} {si:?}");
        }
    }
    let coef = report
        .coefficients
        .iter()
        .find(|c| c.framework == StudyFramework::DD && c.model == ModelKind::Ridge && c.target == Metric::Nemd)
        .unwrap();
    assert!(coef.report.get("ideo_very_conservative").unwrap().significant);
    assert_eq!(coef.report.entries.len(), 110);
    let ix = report.model(StudyFramework::DD, ModelKind::RidgeInteractions, Metric::Md).unwrap();
    assert_eq!(ix.columns.len(), 710);
    assert_eq!(ix.columns[..110], coef.report.entries.iter().map(|e| e.name.clone()).collect::<Vec<_>>()[..]);
}

#[test]
fn identical_frameworks_leave_difference_undefined() {
    let f = fixture(20, true);
    let ctx = FeatureContext { cardinality: &f.cards, embeddings: &f.embeddings };
    let report = run_study(&f.rows, &ctx, &quick()).unwrap();
    for model in ModelKind::ALL {
        for target in Metric::ALL {
            let cell = report.cell(StudyFramework::Difference, model, target).unwrap();
            assert_eq!(cell.unavailable, None);
            assert_eq!((cell.train_r2, cell.test_r2), (None, None));
        }
    }
}

#[test]
fn missing_framework_is_unavailable() {
    let mut f = fixture(20, false);
    f.rows.retain(|r| r.key.variant == PromptVariant::si());
    let ctx = FeatureContext { cardinality: &f.cards, embeddings: &f.embeddings };
    let report = run_study(&f.rows, &ctx, &quick()).unwrap();
    for fw in [StudyFramework::DD, StudyFramework::Difference] {
        for model in ModelKind::ALL {
            assert!(report.cell(fw, model, Metric::Nemd).unwrap().unavailable.is_some());
        }
    }
    assert!(report.cell(StudyFramework::SI, ModelKind::Gbm, Metric::Sdd).unwrap().unavailable.is_none());
}

#[test]
fn deterministic_given_seed() {
    let f = fixture(20, false);
    let ctx = FeatureContext { cardinality: &f.cards, embeddings: &f.embeddings };
    let a = run_study(&f.rows, &ctx, &quick()).unwrap();
    let b = run_study(&f.rows, &ctx, &quick()).unwrap();
    assert_eq!(a, b);
}
