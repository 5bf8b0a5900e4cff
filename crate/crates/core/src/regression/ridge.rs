//! Bayesian ridge regression fitted by evidence maximization.
//!
//! Model: `y = b + X w + e`, `e ~ N(0, 1/alpha)`, `w ~ N(0, I/lambda)`, with
//! Gamma(a, b) hyperpriors on both precisions. Columns of `X` and `y` are
//! centred before fitting and the intercept is recovered from the means.
//!
//! The centred design gets one thin SVD; each update of `(alpha, lambda)` is
//! then diagonal in the right singular basis, and directions outside it
//! carry prior variance only.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use libm::{log, sqrt};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::check_xy;
use crate::error::{Error, Result};

/// `|mean| >= Z * sd` marks a coefficient significant (two-sided, 5%).
pub const SIGNIFICANCE_Z: f64 = 1.96;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RidgeConfig {
    pub max_iter: usize,
    /// Relative change of both precisions below which iteration stops.
    pub tol: f64,
    /// Gamma hyperprior shape (`a`) and rate (`b`), shared by both precisions.
    pub prior_shape: f64,
    pub prior_rate: f64,
    /// Defaults to `1 / var(y)`.
    pub alpha_init: Option<f64>,
    pub lambda_init: f64,
    pub update_alpha: bool,
    pub update_lambda: bool,
}

impl Default for RidgeConfig {
    fn default() -> Self {
        RidgeConfig {
            max_iter: 300,
            tol: 1e-3,
            prior_shape: 1e-6,
            prior_rate: 1e-6,
            alpha_init: None,
            lambda_init: 1.0,
            update_alpha: true,
            update_lambda: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RidgeFit {
    pub intercept: f64,
    pub weight_means: Vec<f64>,
    /// Row-major `p x p` posterior covariance of the weights.
    pub posterior_cov: Vec<f64>,
    /// Noise precision.
    pub alpha: f64,
    /// Weight precision.
    pub lambda: f64,
    pub n_iter_used: usize,
    pub converged: bool,
    /// Log marginal likelihood of the centred data at `(alpha, lambda)`.
    pub log_evidence: f64,
}

impl RidgeFit {
    pub fn n_features(&self) -> usize {
        self.weight_means.len()
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        let p = self.n_features();
        DMatrix::from_row_slice(p, p, &self.posterior_cov)
    }

    pub fn posterior_sd(&self) -> Vec<f64> {
        let p = self.n_features();
        (0..p).map(|i| sqrt(self.posterior_cov[i * p + i].max(0.0))).collect()
    }
}

/// A centred design matrix with its thin SVD, reusable across several targets.
#[derive(Debug, Clone)]
pub struct RidgeDesign {
    xc: DMatrix<f64>,
    x_mean: Vec<f64>,
    /// Squared singular values, i.e. the nonzero spectrum of `XᵀX`.
    s: Vec<f64>,
    /// `p x r` right singular vectors.
    v: DMatrix<f64>,
}

impl RidgeDesign {
    pub fn new(x: &DMatrix<f64>) -> Result<Self> {
        let (n, p) = x.shape();
        if n < 2 {
            return Err(Error::InsufficientData(format!("{n} rows; ridge needs at least 2")));
        }
        if p == 0 {
            return Err(Error::InsufficientData("no feature columns".into()));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        let x_mean: Vec<f64> = x.column_iter().map(|c| c.sum() / n as f64).collect();
        let mut xc = x.clone();
        for (j, m) in x_mean.iter().enumerate() {
            xc.column_mut(j).add_scalar_mut(-m);
        }
        let svd = xc.clone().try_svd(false, true, f64::EPSILON, 0).ok_or(Error::NonFinite)?;
        let v = svd.v_t.ok_or(Error::NonFinite)?.transpose();
        let s: Vec<f64> = svd.singular_values.iter().map(|d| d * d).collect();
        if s.iter().chain(v.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(RidgeDesign { xc, x_mean, s, v })
    }

    pub fn shape(&self) -> (usize, usize) {
        self.xc.shape()
    }

    fn coords(&self, b: &[f64], alpha: f64, lambda: f64) -> Vec<f64> {
        self.s.iter().zip(b).map(|(s, b)| alpha * b / (alpha * s + lambda)).collect()
    }

    fn gamma(&self, alpha: f64, lambda: f64) -> f64 {
        self.s.iter().map(|s| alpha * s / (alpha * s + lambda)).sum()
    }

    pub fn fit(&self, y: &[f64], config: &RidgeConfig) -> Result<RidgeFit> {
        let (n, p) = self.shape();
        if y.len() != n {
            return Err(Error::Shape { expected: n, got: y.len() });
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        if config.max_iter == 0 || !(config.tol > 0.0) || !(config.lambda_init > 0.0) {
            return Err(Error::InvalidParameter(format!("bad ridge config {config:?}")));
        }
        let (xc, x_mean) = (&self.xc, &self.x_mean);
        let y_mean = y.iter().sum::<f64>() / n as f64;
        let yc = DVector::from_iterator(n, y.iter().map(|v| v - y_mean));
        let b = self.v.tr_mul(&xc.tr_mul(&yc)).as_slice().to_vec();
        let spec = self;

        let y_var = yc.norm_squared() / n as f64;
        let mut alpha = config.alpha_init.unwrap_or(1.0 / (y_var + f64::EPSILON));
        let mut lambda = config.lambda_init;
        if !(alpha > 0.0) {
            return Err(Error::InvalidParameter(format!("alpha_init must be positive, got {alpha}")));
        }
        let (a, rate) = (config.prior_shape, config.prior_rate);

        let weights = |coords: &[f64]| &spec.v * DVector::from_column_slice(coords);
        let rss = |w: &DVector<f64>| (&yc - xc * w).norm_squared();

        let mut converged = false;
        let mut n_iter_used = 0;
        for iter in 1..=config.max_iter {
            n_iter_used = iter;
            let z = spec.coords(&b, alpha, lambda);
            let w = weights(&z);
            let gamma = spec.gamma(alpha, lambda);
            let w_sq: f64 = z.iter().map(|v| v * v).sum();
            let new_lambda =
                if config.update_lambda { (gamma + 2.0 * a) / (w_sq + 2.0 * rate) } else { lambda };
            let new_alpha =
                if config.update_alpha { (n as f64 - gamma + 2.0 * a) / (rss(&w) + 2.0 * rate) } else { alpha };
            let settled = ((new_lambda - lambda) / lambda).abs() < config.tol
                && ((new_alpha - alpha) / alpha).abs() < config.tol;
            alpha = new_alpha;
            lambda = new_lambda;
            if settled {
                converged = true;
                break;
            }
        }

        let z = spec.coords(&b, alpha, lambda);
        let w = weights(&z);
        let w_sq: f64 = z.iter().map(|v| v * v).sum();
        let residual = rss(&w);
        let inv: Vec<f64> = spec.s.iter().map(|s| 1.0 / (alpha * s + lambda)).collect();
        let mut scaled_v = spec.v.clone();
        for (j, d) in inv.iter().enumerate() {
            scaled_v.column_mut(j).scale_mut(d - 1.0 / lambda);
        }
        let cov = &scaled_v * spec.v.transpose() + DMatrix::identity(p, p) / lambda;
        let mut posterior_cov = Vec::with_capacity(p * p);
        for i in 0..p {
            for j in 0..p {
                // symmetrize away rounding asymmetry
                posterior_cov.push(0.5 * (cov[(i, j)] + cov[(j, i)]));
            }
        }

        let null_dims = (p - spec.s.len()) as f64;
        let log_det_cov: f64 = inv.iter().map(|d| log(*d)).sum::<f64>() - null_dims * log(lambda);
        let log_evidence = 0.5
            * (p as f64 * log(lambda) + n as f64 * log(alpha) - alpha * residual - lambda * w_sq + log_det_cov
                - n as f64 * log(2.0 * core::f64::consts::PI));

        if !(alpha.is_finite() && lambda.is_finite() && log_evidence.is_finite()) || w.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        let weight_means = w.as_slice().to_vec();
        let intercept = y_mean - x_mean.iter().zip(&weight_means).map(|(m, w)| m * w).sum::<f64>();
        Ok(RidgeFit {
            intercept,
            weight_means,
            posterior_cov,
            alpha,
            lambda,
            n_iter_used,
            converged,
            log_evidence,
        })
    }
}

pub fn fit_bayesian_ridge(x: &DMatrix<f64>, y: &[f64], config: &RidgeConfig) -> Result<RidgeFit> {
    check_xy(x, y)?;
    RidgeDesign::new(x)?.fit(y, config)
}

/// Predictive means and standard deviations,
/// `sqrt(1/alpha + xᵀ Σ x)` per row.
pub fn predict_ridge(fit: &RidgeFit, x: &DMatrix<f64>) -> Result<(Vec<f64>, Vec<f64>)> {
    let p = fit.n_features();
    if x.ncols() != p {
        return Err(Error::ColumnMismatch { expected: p, got: x.ncols() });
    }
    let w = DVector::from_column_slice(&fit.weight_means);
    let means: Vec<f64> = (x * &w).iter().map(|v| v + fit.intercept).collect();
    let cov = fit.covariance();
    let xs = x * &cov;
    let sds = (0..x.nrows())
        .map(|i| {
            let quad: f64 = xs.row(i).iter().zip(x.row(i).iter()).map(|(a, b)| a * b).sum();
            sqrt(1.0 / fit.alpha + quad.max(0.0))
        })
        .collect();
    Ok((means, sds))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientEntry {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub significant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientReport {
    pub entries: Vec<CoefficientEntry>,
}

impl CoefficientReport {
    pub fn significant(&self) -> impl Iterator<Item = &CoefficientEntry> {
        self.entries.iter().filter(|e| e.significant)
    }

    pub fn get(&self, name: &str) -> Option<&CoefficientEntry> {
        self.entries.iter().find(|e| e.name == name)
    }
}

/// Gaussian-posterior significance test for every coefficient, in layout order.
pub fn significant_coefficients(fit: &RidgeFit, names: &[String]) -> Result<CoefficientReport> {
    if names.len() != fit.n_features() {
        return Err(Error::ColumnMismatch { expected: fit.n_features(), got: names.len() });
    }
    let entries = names
        .iter()
        .zip(fit.weight_means.iter().zip(fit.posterior_sd()))
        .map(|(name, (&mean, sd))| CoefficientEntry {
            name: name.clone(),
            mean,
            sd,
            significant: mean.abs() >= SIGNIFICANCE_Z * sd,
        })
        .collect();
    Ok(CoefficientReport { entries })
}
