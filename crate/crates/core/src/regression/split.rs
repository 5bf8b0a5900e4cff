//! Question-partitioned train/test split.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitSpec {
    pub seed: u64,
    pub test_fraction: f64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec { seed: 0, test_fraction: 0.2 }
    }
}

/// Disjoint question sets, each sorted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionSplit {
    pub train: Vec<String>,
    pub test: Vec<String>,
}

impl QuestionSplit {
    pub fn is_test(&self, question_id: &str) -> bool {
        self.test.binary_search_by(|q| q.as_str().cmp(question_id)).is_ok()
    }

    pub fn is_train(&self, question_id: &str) -> bool {
        self.train.binary_search_by(|q| q.as_str().cmp(question_id)).is_ok()
    }
}

/// Shuffles the distinct question ids with a seeded ChaCha8 stream and sends
/// the first `ceil(test_fraction * n)` to test. The input order does not matter.
pub fn split_questions<'a>(ids: impl IntoIterator<Item = &'a str>, spec: SplitSpec) -> Result<QuestionSplit> {
    if !(spec.test_fraction > 0.0 && spec.test_fraction < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "test_fraction must lie in (0, 1), got {}",
            spec.test_fraction
        )));
    }
    let distinct: BTreeSet<&str> = ids.into_iter().collect();
    let n = distinct.len();
    if n < 2 {
        return Err(Error::InsufficientData(format!("{n} distinct questions; a split needs at least 2")));
    }
    let mut order: Vec<&str> = distinct.into_iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    order.shuffle(&mut rng);

    // guard against 0.2 * 10 landing a hair above 2
    let n_test = libm::ceil(spec.test_fraction * n as f64 - 1e-9).clamp(1.0, (n - 1) as f64) as usize;
    let mut test: Vec<String> = order[..n_test].iter().map(|s| String::from(*s)).collect();
    let mut train: Vec<String> = order[n_test..].iter().map(|s| String::from(*s)).collect();
    test.sort();
    train.sort();
    Ok(QuestionSplit { train, test })
}

/// Partitions row indices by their question's side of the split.
pub fn split_rows<T>(
    rows: &[T],
    question_of: impl Fn(&T) -> &str,
    spec: SplitSpec,
) -> Result<(QuestionSplit, Vec<usize>, Vec<usize>)> {
    let split = split_questions(rows.iter().map(&question_of), spec)?;
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (i, r) in rows.iter().enumerate() {
        if split.is_test(question_of(r)) {
            test.push(i);
        } else {
            train.push(i);
        }
    }
    Ok((split, train, test))
}
