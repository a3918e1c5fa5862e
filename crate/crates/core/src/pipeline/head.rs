use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::min_norm_lstsq;

/// `ŷ = z · weights + intercept`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearHead {
    pub intercept: f64,
    pub weights: Vec<f64>,
}

impl LinearHead {
    /// Least squares with an intercept. The intercept is absorbed by
    /// centering; the slopes are the minimum-norm solution, so constant or
    /// collinear latent coordinates get zero (or shared) weight instead of
    /// failing.
    pub fn fit(z: &DMatrix<f64>, y: &[f64]) -> Result<Self> {
        crate::error::ensure_len("head response", z.nrows(), y.len())?;
        let (n, d) = z.shape();
        if n <= d + 1 {
            return Err(Error::invalid(format!(
                "regression head needs more than {} subjects for {d} latent dims, got {n}",
                d + 1
            )));
        }
        if z.iter().chain(y).any(|v| !v.is_finite()) {
            return Err(Error::numerical("non-finite latent or phenotype value in head fit"));
        }
        let z_mean = z.row_mean();
        let y_mean = y.iter().sum::<f64>() / n as f64;
        let mut zc = z.clone();
        for mut row in zc.row_iter_mut() {
            row -= &z_mean;
        }
        let yc: Vec<f64> = y.iter().map(|v| v - y_mean).collect();
        let weights = min_norm_lstsq(&zc, &yc)?;
        let intercept = y_mean - z_mean.iter().zip(&weights).map(|(m, w)| m * w).sum::<f64>();
        Ok(Self { intercept, weights })
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn predict(&self, z: &DMatrix<f64>) -> Result<Vec<f64>> {
        crate::error::ensure_len("head input width", self.dim(), z.ncols())?;
        Ok(z.row_iter()
            .map(|row| self.intercept + row.iter().zip(&self.weights).map(|(a, w)| a * w).sum::<f64>())
            .collect())
    }
}
