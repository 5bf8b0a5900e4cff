//! Fidelity-prediction models and the train/test protocol around them.

pub mod eval;
pub mod gbm;
pub mod ridge;
pub mod split;
pub mod study;

use alloc::vec::Vec;

pub use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Stacks equal-length rows into a dense matrix.
pub fn matrix_from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<DMatrix<f64>> {
    let ncols = rows.first().map_or(0, |r| r.as_ref().len());
    let mut data = Vec::with_capacity(rows.len() * ncols);
    for r in rows {
        let r = r.as_ref();
        if r.len() != ncols {
            return Err(Error::Shape { expected: ncols, got: r.len() });
        }
        data.extend_from_slice(r);
    }
    Ok(DMatrix::from_row_slice(rows.len(), ncols, &data))
}

fn check_xy(x: &DMatrix<f64>, y: &[f64]) -> Result<()> {
    if x.nrows() != y.len() {
        return Err(Error::Shape { expected: x.nrows(), got: y.len() });
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    Ok(())
}
