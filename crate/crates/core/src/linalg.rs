//! Least-squares machinery shared by GWAS covariate adjustment and the
//! regression head.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative threshold on `|R_jj| / ‖column j‖` below which a design column is
/// treated as linearly dependent on the columns before it.
const RANK_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct OlsFit {
    /// Intercept first, then one coefficient per covariate column.
    pub coefficients: Vec<f64>,
    pub residuals: Vec<f64>,
    pub fitted: Vec<f64>,
}

/// Thin QR factorization of `[1 | covariates]`. Built once, then used to
/// residualize any number of response vectors in O(N·C) each.
#[derive(Debug, Clone)]
pub struct CovariateProjector {
    q: DMatrix<f64>,
    r: DMatrix<f64>,
}

impl CovariateProjector {
    pub fn new(covariates: &DMatrix<f64>) -> Result<Self> {
        let n = covariates.nrows();
        let c = covariates.ncols();
        if n <= c + 1 {
            return Err(Error::invalid(format!(
                "need more subjects than covariates + 1 (N = {n}, C = {c})"
            )));
        }
        if covariates.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("covariates contain non-finite values"));
        }
        let mut design = DMatrix::from_element(n, c + 1, 1.0);
        design.columns_mut(1, c).copy_from(covariates);

        let qr = design.clone().qr();
        let r = qr.r();
        let dependent: Vec<String> = (0..=c)
            .filter(|&j| r[(j, j)].abs() <= RANK_TOL * design.column(j).norm().max(f64::MIN_POSITIVE))
            .map(|j| {
                if j == 0 {
                    "intercept".to_string()
                } else {
                    format!("covariate {}", j - 1)
                }
            })
            .collect();
        if !dependent.is_empty() {
            return Err(Error::data(format!(
                "rank-deficient design; linearly dependent column(s): {}",
                dependent.join(", ")
            )));
        }
        Ok(Self { q: qr.q(), r })
    }

    pub fn n_subjects(&self) -> usize {
        self.q.nrows()
    }

    /// `v - Q Qᵀ v`.
    pub fn residualize(&self, v: &[f64]) -> Result<Vec<f64>> {
        crate::error::ensure_len("residualize", self.q.nrows(), v.len())?;
        let v = DVector::from_column_slice(v);
        let proj = &self.q * self.q.tr_mul(&v);
        Ok((v - proj).as_slice().to_vec())
    }

    pub fn fit(&self, response: &[f64]) -> Result<OlsFit> {
        crate::error::ensure_len("ols response", self.q.nrows(), response.len())?;
        if response.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("response contains non-finite values"));
        }
        let y = DVector::from_column_slice(response);
        let qty = self.q.tr_mul(&y);
        let coef = self
            .r
            .solve_upper_triangular(&qty)
            .ok_or_else(|| Error::numerical("singular R in OLS solve"))?;
        let fitted = &self.q * qty;
        let residuals = &y - &fitted;
        Ok(OlsFit {
            coefficients: coef.as_slice().to_vec(),
            residuals: residuals.as_slice().to_vec(),
            fitted: fitted.as_slice().to_vec(),
        })
    }
}

/// OLS of `response` on an intercept plus `covariates`, via QR.
pub fn residualize(response: &[f64], covariates: &DMatrix<f64>) -> Result<OlsFit> {
    CovariateProjector::new(covariates)?.fit(response)
}

/// Minimum-norm least squares `argmin ‖A x - b‖` with the smallest `‖x‖`,
/// via SVD with singular values below `max(n, p) · ε · s_max` dropped.
pub fn min_norm_lstsq(a: &DMatrix<f64>, b: &[f64]) -> Result<Vec<f64>> {
    crate::error::ensure_len("lstsq rhs", a.nrows(), b.len())?;
    let p = a.ncols();
    if a.nrows() == 0 || p == 0 {
        return Ok(vec![0.0; p]);
    }
    let svd = a.clone().svd(true, true);
    let s_max = svd.singular_values.max();
    if s_max == 0.0 {
        return Ok(vec![0.0; p]);
    }
    let tol = a.nrows().max(p) as f64 * f64::EPSILON * s_max;
    let x = svd
        .solve(&DVector::from_column_slice(b), tol)
        .map_err(|e| Error::numerical(format!("SVD solve failed: {e}")))?;
    Ok(x.as_slice().to_vec())
}
