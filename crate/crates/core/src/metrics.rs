//! Distribution comparison metrics (MD, SDD, NEMD) and the paired
//! framework comparison statistics.
//!
//! All three metrics place category `i` of a `C`-point scale at
//! `(i-1)/(C-1)`, so values are comparable across cardinalities.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use libm::sqrt;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{scaled_positions, DemographicCell, OpinionDistribution, PermutationKey};
use crate::stats;

/// Mean on the scaled grid, in `[0, 1]`.
pub fn scaled_mean(d: &OpinionDistribution) -> f64 {
    let pos = scaled_positions(d.cardinality()).expect("distributions have at least two categories");
    d.probs().iter().zip(&pos).map(|(p, x)| p * x).sum()
}

/// Population standard deviation on the scaled grid, in `[0, 0.5]`.
pub fn scaled_sd(d: &OpinionDistribution) -> f64 {
    let pos = scaled_positions(d.cardinality()).expect("distributions have at least two categories");
    let m = scaled_mean(d);
    let var: f64 = d.probs().iter().zip(&pos).map(|(p, x)| p * (x - m) * (x - m)).sum();
    sqrt(var.max(0.0))
}

fn same_shape(a: &OpinionDistribution, b: &OpinionDistribution) -> Result<()> {
    if a.cardinality() != b.cardinality() {
        return Err(Error::Shape { expected: a.cardinality(), got: b.cardinality() });
    }
    Ok(())
}

/// Mean Difference: `|mean(human) - mean(model)|`.
pub fn md(human: &OpinionDistribution, model: &OpinionDistribution) -> Result<f64> {
    same_shape(human, model)?;
    Ok((scaled_mean(human) - scaled_mean(model)).abs())
}

/// Standard Deviation Difference: `sd(model) - sd(human)`. Positive when the
/// model spreads its mass wider than the humans do.
pub fn sdd(human: &OpinionDistribution, model: &OpinionDistribution) -> Result<f64> {
    same_shape(human, model)?;
    Ok(scaled_sd(model) - scaled_sd(human))
}

/// Normalized earth mover's distance: the 1-Wasserstein distance on the
/// scaled grid, `sum_k |F_h(k) - F_m(k)| / (C - 1)` over `k = 1..C-1`.
pub fn nemd(human: &OpinionDistribution, model: &OpinionDistribution) -> Result<f64> {
    same_shape(human, model)?;
    let c = human.cardinality();
    let (mut fh, mut fm, mut total) = (0.0, 0.0, 0.0);
    for (ph, pm) in human.probs()[..c - 1].iter().zip(&model.probs()[..c - 1]) {
        fh += ph;
        fm += pm;
        total += (fh - fm).abs();
    }
    Ok(total / (c - 1) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Metric {
    #[serde(rename = "NEMD")]
    Nemd,
    #[serde(rename = "MD")]
    Md,
    #[serde(rename = "SDD")]
    Sdd,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Nemd, Metric::Md, Metric::Sdd];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Nemd => "NEMD",
            Metric::Md => "MD",
            Metric::Sdd => "SDD",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// The three metrics for one permutation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub key: PermutationKey,
    pub n_human: usize,
    pub nemd: f64,
    pub md: f64,
    pub sdd: f64,
}

impl ComparisonRow {
    pub fn compute(
        key: PermutationKey,
        n_human: usize,
        human: &OpinionDistribution,
        model: &OpinionDistribution,
    ) -> Result<Self> {
        Ok(ComparisonRow {
            key,
            n_human,
            nemd: nemd(human, model)?,
            md: md(human, model)?,
            sdd: sdd(human, model)?,
        })
    }

    pub fn get(&self, metric: Metric) -> f64 {
        match metric {
            Metric::Nemd => self.nemd,
            Metric::Md => self.md,
            Metric::Sdd => self.sdd,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSummary {
    pub mean: f64,
    pub se: f64,
    pub ci_2sigma: [f64; 2],
}

impl MeanSummary {
    fn of(xs: &[f64]) -> Option<Self> {
        let mean = stats::mean(xs)?;
        let se = stats::standard_error(xs)?;
        Some(MeanSummary { mean, se, ci_2sigma: [mean - 2.0 * se, mean + 2.0 * se] })
    }
}

/// SI versus DD on one metric over matched (question, cell) pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedComparison {
    pub metric: Metric,
    pub n_pairs: usize,
    /// Pairs where DD is strictly closer to the humans: smaller NEMD/MD,
    /// smaller `|SDD|`. Ties are not wins.
    pub win_fraction: f64,
    /// Mean of `SI - DD`.
    pub mean_diff: f64,
    pub se: f64,
    pub ci_2sigma: [f64; 2],
    pub si: MeanSummary,
    pub dd: MeanSummary,
}

/// Pairs rows on (question, cell). Every SI row must have exactly one DD
/// partner and vice versa; the caller picks which DD variant to pass.
pub fn paired_compare(
    rows_si: &[ComparisonRow],
    rows_dd: &[ComparisonRow],
    metric: Metric,
) -> Result<PairedComparison> {
    let index = |rows: &[ComparisonRow], side: &str| -> Result<BTreeMap<(String, DemographicCell), f64>> {
        let mut map = BTreeMap::new();
        for r in rows {
            if map.insert((r.key.question_id.clone(), r.key.cell), r.get(metric)).is_some() {
                return Err(Error::Alignment(format!("duplicate {side} row for {}", r.key)));
            }
        }
        Ok(map)
    };
    let si = index(rows_si, "SI")?;
    let dd = index(rows_dd, "DD")?;
    if let Some((q, cell)) = si.keys().find(|k| !dd.contains_key(*k)) {
        return Err(Error::Alignment(format!("no DD partner for {q}|{cell}")));
    }
    if let Some((q, cell)) = dd.keys().find(|k| !si.contains_key(*k)) {
        return Err(Error::Alignment(format!("no SI partner for {q}|{cell}")));
    }
    let n = si.len();
    if n < 2 {
        return Err(Error::InsufficientData(format!("{n} matched pairs; need at least 2")));
    }

    let si_vals: Vec<f64> = si.values().copied().collect();
    let dd_vals: Vec<f64> = dd.values().copied().collect();
    let diffs: Vec<f64> = si_vals.iter().zip(&dd_vals).map(|(s, d)| s - d).collect();
    let wins = si_vals
        .iter()
        .zip(&dd_vals)
        .filter(|(s, d)| match metric {
            Metric::Nemd | Metric::Md => d < s,
            Metric::Sdd => d.abs() < s.abs(),
        })
        .count();
    let diff = MeanSummary::of(&diffs).expect("n >= 2");
    Ok(PairedComparison {
        metric,
        n_pairs: n,
        win_fraction: wins as f64 / n as f64,
        mean_diff: diff.mean,
        se: diff.se,
        ci_2sigma: diff.ci_2sigma,
        si: MeanSummary::of(&si_vals).expect("n >= 2"),
        dd: MeanSummary::of(&dd_vals).expect("n >= 2"),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub x_center: f64,
    pub mean: f64,
    /// Twice the standard error of the window mean.
    pub se_band: f64,
    pub n: usize,
}

/// Sliding-window mean of `y` against `x`.
///
/// One window per distinct `x` value, of width `window`, centred on it but
/// shifted to stay inside `[min x, max x]` (a window at least as wide as the
/// data covers everything). Windows holding fewer than two points are skipped.
pub fn moving_average_band(x: &[f64], y: &[f64], window: f64) -> Result<Vec<Band>> {
    if x.len() != y.len() {
        return Err(Error::Shape { expected: x.len(), got: y.len() });
    }
    if !(window > 0.0) || !window.is_finite() {
        return Err(Error::InvalidParameter(format!("window must be positive, got {window}")));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    if x.is_empty() {
        return Ok(Vec::new());
    }
    let mut points: Vec<(f64, f64)> = x.iter().copied().zip(y.iter().copied()).collect();
    points.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let (lo_all, hi_all) = (points[0].0, points[points.len() - 1].0);

    let mut centers: Vec<f64> = points.iter().map(|p| p.0).collect();
    centers.dedup();

    let mut bands = Vec::with_capacity(centers.len());
    let mut buf = Vec::new();
    for c in centers {
        let lo = if window >= hi_all - lo_all {
            lo_all
        } else {
            (c - window / 2.0).clamp(lo_all, hi_all - window)
        };
        let hi = lo + window;
        buf.clear();
        buf.extend(points.iter().filter(|p| p.0 >= lo && p.0 <= hi).map(|p| p.1));
        if buf.len() < 2 {
            continue;
        }
        let s = MeanSummary::of(&buf).expect("two points");
        bands.push(Band { x_center: c, mean: s.mean, se_band: 2.0 * s.se, n: buf.len() });
    }
    Ok(bands)
}
