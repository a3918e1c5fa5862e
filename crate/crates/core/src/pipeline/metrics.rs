use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mae: f64,
    pub mape: f64,
    pub rmse: f64,
    pub r2: f64,
}

impl MetricsReport {
    pub fn is_finite(&self) -> bool {
        [self.mae, self.mape, self.rmse, self.r2].iter().all(|v| v.is_finite())
    }

    /// `key=value` summary line.
    pub fn log_line(&self, prefix: &str) -> String {
        let mut s = String::new();
        let _ = write!(
            s,
            "{prefix} mae={} mape={} rmse={} r2={}",
            self.mae, self.mape, self.rmse, self.r2
        );
        s
    }
}

/// Mean absolute error, mean absolute percentage error (as a fraction), root
/// mean squared error and the coefficient of determination.
pub fn compute_metrics(y: &[f64], y_hat: &[f64]) -> Result<MetricsReport> {
    crate::error::ensure_len("metrics", y.len(), y_hat.len())?;
    let n = y.len();
    if n == 0 {
        return Err(Error::invalid("metrics of an empty prediction set"));
    }
    if y.iter().chain(y_hat).any(|v| !v.is_finite()) {
        return Err(Error::numerical("non-finite value in metrics input"));
    }
    if y.contains(&0.0) {
        return Err(Error::data("MAPE is undefined for a zero phenotype value"));
    }
    let nf = n as f64;
    let mean = y.iter().sum::<f64>() / nf;
    let ss_tot: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(Error::data("R² is undefined for a constant phenotype"));
    }
    let mut abs = 0.0;
    let mut pct = 0.0;
    let mut sq = 0.0;
    for (t, p) in y.iter().zip(y_hat) {
        let e = t - p;
        abs += e.abs();
        pct += (e / t).abs();
        sq += e * e;
    }
    Ok(MetricsReport {
        mae: abs / nf,
        mape: pct / nf,
        rmse: (sq / nf).sqrt(),
        r2: 1.0 - sq / ss_tot,
    })
}
