use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::dataset::MultiViewDataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScaleMode {
    MinMax,
    ZScore,
}

/// Per-feature affine statistics: `(min, max)` in min-max mode, `(mean, std)`
/// in z-score mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleParams {
    pub mode: ScaleMode,
    pub loc: Vec<f64>,
    pub spread: Vec<f64>,
}

impl ScaleParams {
    /// Fits on the rows flagged in `rows` (all rows when `None`).
    pub fn fit(x: &DMatrix<f64>, rows: Option<&[bool]>, mode: ScaleMode) -> Result<Self> {
        if let Some(r) = rows {
            crate::error::ensure_len("scale row mask", x.nrows(), r.len())?;
        }
        let used: Vec<usize> = (0..x.nrows())
            .filter(|&i| rows.is_none_or(|r| r[i]))
            .collect();
        let mut loc = Vec::with_capacity(x.ncols());
        let mut spread = Vec::with_capacity(x.ncols());
        for j in 0..x.ncols() {
            let vals: Vec<f64> = used.iter().map(|&i| x[(i, j)]).collect();
            if vals.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("feature {j} has non-finite values")));
            }
            match mode {
                ScaleMode::MinMax => {
                    let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
                    let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    if vals.is_empty() {
                        loc.push(0.0);
                        spread.push(0.0);
                    } else {
                        loc.push(lo);
                        spread.push(hi);
                    }
                }
                ScaleMode::ZScore => {
                    let n = vals.len().max(1) as f64;
                    let mean = vals.iter().sum::<f64>() / n;
                    let var = if vals.len() > 1 {
                        vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
                    } else {
                        0.0
                    };
                    loc.push(mean);
                    spread.push(var.sqrt());
                }
            }
        }
        Ok(Self { mode, loc, spread })
    }

    pub fn dim(&self) -> usize {
        self.loc.len()
    }

    /// Min-max output is clipped into `[0, 1]` and constant features map to
    /// 0.5; z-score output maps constant features to 0.
    pub fn apply(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        crate::error::ensure_len("scale width", self.dim(), x.ncols())?;
        let mut out = x.clone();
        for j in 0..x.ncols() {
            let (a, b) = (self.loc[j], self.spread[j]);
            for v in out.column_mut(j).iter_mut() {
                *v = match self.mode {
                    ScaleMode::MinMax if b > a => ((*v - a) / (b - a)).clamp(0.0, 1.0),
                    ScaleMode::MinMax => 0.5,
                    ScaleMode::ZScore if b > 0.0 => (*v - a) / b,
                    ScaleMode::ZScore => 0.0,
                };
            }
        }
        Ok(out)
    }

    pub fn inverse(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        crate::error::ensure_len("scale width", self.dim(), x.ncols())?;
        let mut out = x.clone();
        for j in 0..x.ncols() {
            let (a, b) = (self.loc[j], self.spread[j]);
            for v in out.column_mut(j).iter_mut() {
                *v = match self.mode {
                    ScaleMode::MinMax if b > a => a + *v * (b - a),
                    ScaleMode::MinMax => a,
                    ScaleMode::ZScore => a + *v * b,
                };
            }
        }
        Ok(out)
    }
}

/// Fits min-max statistics when `params` is `None`; otherwise applies the
/// given (training-set) statistics.
pub fn minmax_scale(
    x: &DMatrix<f64>,
    params: Option<&ScaleParams>,
) -> Result<(DMatrix<f64>, ScaleParams)> {
    let params = match params {
        Some(p) => {
            if p.mode != ScaleMode::MinMax {
                return Err(Error::invalid("expected min-max scale parameters"));
            }
            p.clone()
        }
        None => ScaleParams::fit(x, None, ScaleMode::MinMax)?,
    };
    Ok((params.apply(x)?, params))
}

/// Min-max statistics for every view of a training set, fitted on the rows
/// where the view is present. Applying it is the only way to scale any other
/// set, so evaluation data never contributes statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetScaler {
    pub view_names: Vec<String>,
    pub views: Vec<ScaleParams>,
}

impl DatasetScaler {
    pub fn fit(train: &MultiViewDataset) -> Result<Self> {
        let views = train
            .views
            .iter()
            .enumerate()
            .map(|(m, v)| {
                let rows: Vec<bool> = train.presence.iter().map(|p| p[m]).collect();
                ScaleParams::fit(&v.data, Some(&rows), ScaleMode::MinMax)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            view_names: train.view_names(),
            views,
        })
    }

    /// Scaled copy of `ds`; rows of absent views are left at zero.
    pub fn transform(&self, ds: &MultiViewDataset) -> Result<MultiViewDataset> {
        if ds.view_names() != self.view_names {
            return Err(Error::invalid(format!(
                "scaler was fitted on views {:?} but data has {:?}",
                self.view_names,
                ds.view_names()
            )));
        }
        let mut out = ds.clone();
        for (m, view) in out.views.iter_mut().enumerate() {
            let mut scaled = self.views[m].apply(&view.data)?;
            for (i, p) in ds.presence.iter().enumerate() {
                if !p[m] {
                    scaled.row_mut(i).fill(0.0);
                }
            }
            view.data = scaled;
        }
        Ok(out)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}
