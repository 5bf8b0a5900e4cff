//! Tables for the `report/` directory. Every value is derived from stage
//! artifacts, never from the clock, so reruns are byte-identical.

use aipoll_core::features::TagCorrelations;
use aipoll_core::metrics::{moving_average_band, ComparisonRow, Metric};
use aipoll_core::PromptVariant;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::io::{fmt_opt, RunMeta, Table};
use crate::stages::{comparison_table, variant_table, variant_label, CompareReport, StudySummary};

/// Embedding dimensions listed per tag, strongest first.
pub const TOP_TAG_DIMS: usize = 5;

pub fn build(
    compare: &CompareReport,
    study: &StudySummary,
    rows: &[ComparisonRow],
    tags: Option<&TagCorrelations>,
    band_window: f64,
) -> Result<Vec<(&'static str, Table)>> {
    let mut out = vec![
        ("comparison", comparison_table(compare)),
        ("variants", variant_table(compare)),
        ("study_r2", study_table(study)),
        ("coefficients", coefficient_table(study)),
        ("sdd_bands", band_table(rows, band_window)?),
    ];
    if let Some(t) = tags {
        out.push(("tags", tag_table(t)));
    }
    Ok(out)
}

pub fn study_table(study: &StudySummary) -> Table {
    let mut t = Table::new(["framework", "model", "target", "n_train", "n_test", "train_R2", "test_R2", "note"]);
    for c in &study.cells {
        t.push([
            c.framework.name().to_string(),
            c.model.name().to_string(),
            c.target.name().to_string(),
            c.n_train.to_string(),
            c.n_test.to_string(),
            fmt_opt(c.train_r2, 3),
            fmt_opt(c.test_r2, 3),
            c.unavailable.clone().unwrap_or_default(),
        ]);
    }
    t
}

pub fn coefficient_table(study: &StudySummary) -> Table {
    let mut t = Table::new(["framework", "model", "target", "column", "mean", "sd"]);
    for set in &study.coefficients {
        for e in set.report.significant() {
            t.push([
                set.framework.name().to_string(),
                set.model.name().to_string(),
                set.target.name().to_string(),
                e.name.clone(),
                format!("{:.5}", e.mean),
                format!("{:.5}", e.sd),
            ]);
        }
    }
    t
}

/// Moving average of SDD against NEMD, one series per prompt variant.
pub fn band_table(rows: &[ComparisonRow], window: f64) -> Result<Table> {
    let mut t = Table::new(["variant", "NEMD_center", "SDD_mean", "se_band_2sigma", "n"]);
    let mut variants: Vec<PromptVariant> = rows.iter().map(|r| r.key.variant).collect();
    variants.sort();
    variants.dedup();
    for v in variants {
        let (x, y): (Vec<f64>, Vec<f64>) =
            rows.iter().filter(|r| r.key.variant == v).map(|r| (r.get(Metric::Nemd), r.get(Metric::Sdd))).unzip();
        for b in moving_average_band(&x, &y, window)? {
            t.push([
                variant_label(v),
                format!("{:.4}", b.x_center),
                format!("{:.4}", b.mean),
                format!("{:.4}", b.se_band),
                b.n.to_string(),
            ]);
        }
    }
    Ok(t)
}

pub fn tag_table(tags: &TagCorrelations) -> Table {
    let mut t = Table::new(["tag", "rank", "dim", "r"]);
    for (i, tag) in tags.tags.iter().enumerate() {
        let mut dims: Vec<(usize, f64)> = tags.r[i].iter().enumerate().filter_map(|(d, r)| r.map(|r| (d, r))).collect();
        dims.sort_by(|a, b| b.1.abs().total_cmp(&a.1.abs()).then(a.0.cmp(&b.0)));
        for (rank, (d, r)) in dims.into_iter().take(TOP_TAG_DIMS).enumerate() {
            t.push([tag.clone(), (rank + 1).to_string(), format!("emb_{d:03}"), format!("{r:.4}")]);
        }
    }
    t
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Headline {
    pub metric: Metric,
    pub dd_win_fraction: f64,
    pub mean_si: f64,
    pub mean_dd: f64,
    pub mean_diff: f64,
    pub ci_2sigma: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub meta: RunMeta,
    pub metric_rows: usize,
    pub n_pairs: usize,
    pub headline: Vec<Headline>,
    pub train_questions: usize,
    pub test_questions: usize,
    pub unavailable_cells: usize,
}

pub fn summary(meta: &RunMeta, compare: &CompareReport, study: &StudySummary, rows: &[ComparisonRow]) -> ReportSummary {
    ReportSummary {
        meta: meta.clone(),
        metric_rows: rows.len(),
        n_pairs: compare.n_pairs,
        headline: compare
            .comparisons
            .iter()
            .map(|c| Headline {
                metric: c.metric,
                dd_win_fraction: c.win_fraction,
                mean_si: c.si.mean,
                mean_dd: c.dd.mean,
                mean_diff: c.mean_diff,
                ci_2sigma: c.ci_2sigma,
            })
            .collect(),
        train_questions: study.split.train.len(),
        test_questions: study.split.test.len(),
        unavailable_cells: study.cells.iter().filter(|c| c.unavailable.is_some()).count(),
    }
}
