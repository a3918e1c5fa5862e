//! Diagonal multivariate Gaussians parameterized by mean and log-variance.
//!
//! The product of diagonal Gaussian experts is again a diagonal Gaussian whose
//! precision is the sum of the expert precisions and whose mean is the
//! precision-weighted average of the expert means. The `1/M` normalizer that
//! sometimes appears in front of the product only rescales the unnormalized
//! density, so it never affects the fused parameters.


use crate::error::{ensure_len, Error, Result};

/// Log-variances produced by networks are clamped into `[-LOG_VAR_BOUND, LOG_VAR_BOUND]`;
/// user-supplied ones outside this range are rejected.
pub const LOG_VAR_BOUND: f64 = 10.0;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, PartialEq)]
pub struct DiagGaussian {
    mean: Vec<f64>,
    log_var: Vec<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FusionOptions {
    /// Multiply a standard-normal expert into the product. Off by default: the
    /// prior only enters the objective through the KL term.
    pub include_prior_expert: bool,
}

impl DiagGaussian {
    /// Strict constructor for user data. Rejects log-variances outside
    /// `[-LOG_VAR_BOUND, LOG_VAR_BOUND]` instead of clamping them.
    pub fn new(mean: Vec<f64>, log_var: Vec<f64>) -> Result<Self> {
        check_shape(&mean, &log_var)?;
        if let Some((d, v)) = log_var
            .iter()
            .enumerate()
            .find(|(_, v)| v.abs() > LOG_VAR_BOUND)
        {
            return Err(Error::invalid(format!(
                "log_var[{d}] = {v} outside [-{LOG_VAR_BOUND}, {LOG_VAR_BOUND}]"
            )));
        }
        Ok(Self { mean, log_var })
    }

    /// Constructor for network outputs: log-variances are clamped into range.
    pub fn clamped(mean: Vec<f64>, mut log_var: Vec<f64>) -> Result<Self> {
        check_shape(&mean, &log_var)?;
        for v in &mut log_var {
            *v = clamp_log_var(*v);
        }
        Ok(Self { mean, log_var })
    }

    /// `N(0, I)` in `dim` dimensions.
    pub fn standard(dim: usize) -> Self {
        assert!(dim >= 1, "dimension must be at least 1");
        Self {
            mean: vec![0.0; dim],
            log_var: vec![0.0; dim],
        }
    }

    // Fused posteriors can legitimately sit below the clamp range (precisions add).
    fn from_fused(mean: Vec<f64>, log_var: Vec<f64>) -> Result<Self> {
        check_shape(&mean, &log_var)?;
        Ok(Self { mean, log_var })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn log_var(&self) -> &[f64] {
        &self.log_var
    }

    pub fn variances(&self) -> Vec<f64> {
        self.log_var.iter().map(|v| v.exp()).collect()
    }

    pub fn precisions(&self) -> Vec<f64> {
        self.log_var.iter().map(|v| (-v).exp()).collect()
    }

    pub fn into_parts(self) -> (Vec<f64>, Vec<f64>) {
        (self.mean, self.log_var)
    }

    /// `log N(z; mean, diag(exp(log_var)))`.
    pub fn log_density(&self, z: &[f64]) -> Result<f64> {
        ensure_len("log_density", self.dim(), z.len())?;
        let quad: f64 = self
            .mean
            .iter()
            .zip(&self.log_var)
            .zip(z)
            .map(|((mu, lv), zi)| {
                let diff = zi - mu;
                lv + diff * diff * (-lv).exp()
            })
            .sum();
        Ok(-0.5 * self.dim() as f64 * LN_2PI - 0.5 * quad)
    }

    /// The z-independent constant of the canonical (precision) form
    /// `log q(z) = -1/2 zᵀTz + μᵀTz + Δ`, with `T = diag(1/σ²)`:
    /// `Δ = -1/2 μᵀTμ - (D/2) log 2π + 1/2 log|T|`.
    pub fn log_partition(&self) -> f64 {
        let (quad, log_det_precision) = self.mean.iter().zip(&self.log_var).fold(
            (0.0, 0.0),
            |(q, ld), (mu, lv)| (q + mu * mu * (-lv).exp(), ld - lv),
        );
        -0.5 * quad - 0.5 * self.dim() as f64 * LN_2PI + 0.5 * log_det_precision
    }

    /// Closed-form `KL(self ‖ N(0, I)) = 1/2 Σ (μ² + σ² - log σ² - 1)`.
    pub fn kl_to_standard_normal(&self) -> f64 {
        0.5 * self
            .mean
            .iter()
            .zip(&self.log_var)
            .map(|(mu, lv)| mu * mu + lv.exp_m1() - lv)
            .sum::<f64>()
    }

    /// `z = μ + exp(log_var / 2) ⊙ eps`.
    pub fn reparameterized_sample(&self, eps: &[f64]) -> Result<Vec<f64>> {
        ensure_len("reparameterized_sample", self.dim(), eps.len())?;
        Ok(self
            .mean
            .iter()
            .zip(&self.log_var)
            .zip(eps)
            .map(|((mu, lv), e)| mu + (0.5 * lv).exp() * e)
            .collect())
    }
}

pub fn clamp_log_var(v: f64) -> f64 {
    v.clamp(-LOG_VAR_BOUND, LOG_VAR_BOUND)
}

fn check_shape(mean: &[f64], log_var: &[f64]) -> Result<()> {
    if mean.is_empty() {
        return Err(Error::invalid("Gaussian dimension must be at least 1"));
    }
    ensure_len("DiagGaussian log_var", mean.len(), log_var.len())?;
    if mean.iter().chain(log_var).any(|v| !v.is_finite()) {
        return Err(Error::invalid("Gaussian parameters must be finite"));
    }
    Ok(())
}

/// Product-of-experts fusion without a prior expert.
pub fn poe_fuse(experts: &[DiagGaussian]) -> Result<DiagGaussian> {
    poe_fuse_with(experts, FusionOptions::default())
}

pub fn poe_fuse_with(experts: &[DiagGaussian], opts: FusionOptions) -> Result<DiagGaussian> {
    let first = experts
        .first()
        .ok_or_else(|| Error::invalid("poe_fuse needs at least one expert"))?;
    let dim = first.dim();
    for e in experts {
        ensure_len("poe_fuse expert dimension", dim, e.dim())?;
    }
    if experts.len() == 1 && !opts.include_prior_expert {
        return Ok(first.clone());
    }

    let mut mean = Vec::with_capacity(dim);
    let mut log_var = Vec::with_capacity(dim);
    for d in 0..dim {
        // the prior expert has unit precision and zero mean
        let (mut precision, mut weighted) = if opts.include_prior_expert {
            (1.0, 0.0)
        } else {
            (0.0, 0.0)
        };
        for e in experts {
            let p = (-e.log_var[d]).exp();
            precision += p;
            weighted += p * e.mean[d];
        }
        mean.push(weighted / precision);
        log_var.push(-precision.ln());
    }
    DiagGaussian::from_fused(mean, log_var)
}
