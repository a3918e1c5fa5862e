//! Independent reference computations shared by the integration tests.
//! Nothing here calls the routine it is used to check.
#![allow(dead_code)]

pub mod vae;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

pub fn normal_pdf(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    (-0.5 * d * d / var).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
}

/// Two-expert Gaussian product written out per coordinate, in variance form.
pub fn pairwise_fuse(a: (&[f64], &[f64]), b: (&[f64], &[f64])) -> (Vec<f64>, Vec<f64>) {
    let (ma, va) = a;
    let (mb, vb) = b;
    let mut mean = Vec::with_capacity(ma.len());
    let mut var = Vec::with_capacity(ma.len());
    for d in 0..ma.len() {
        let v = va[d] * vb[d] / (va[d] + vb[d]);
        mean.push(v * (ma[d] / va[d] + mb[d] / vb[d]));
        var.push(v);
    }
    (mean, var)
}

/// Folds [`pairwise_fuse`] left to right over `(mean, variance)` experts.
pub fn sequential_fuse(experts: &[(Vec<f64>, Vec<f64>)]) -> (Vec<f64>, Vec<f64>) {
    let mut acc = experts[0].clone();
    for e in &experts[1..] {
        acc = pairwise_fuse((&acc.0, &acc.1), (&e.0, &e.1));
    }
    acc
}

/// Evaluates the product of the expert densities on a regular grid around
/// the candidate fused Gaussian (±`half_width` standard deviations, `n`
/// points per axis), renormalizes it numerically and returns the largest
/// gap to the candidate density, relative to the candidate's peak.
/// Supports one or two dimensions.
pub fn grid_product_gap(
    experts: &[(Vec<f64>, Vec<f64>)],
    fused_mean: &[f64],
    fused_var: &[f64],
    n: usize,
    half_width: f64,
) -> f64 {
    let dim = fused_mean.len();
    assert!(dim == 1 || dim == 2);
    let axes: Vec<Vec<f64>> = (0..dim)
        .map(|d| {
            let sd = fused_var[d].sqrt();
            let lo = fused_mean[d] - half_width * sd;
            let step = 2.0 * half_width * sd / (n - 1) as f64;
            (0..n).map(|k| lo + k as f64 * step).collect()
        })
        .collect();
    let cell: f64 = axes.iter().map(|a| a[1] - a[0]).product();
    let points: Vec<Vec<f64>> = if dim == 1 {
        axes[0].iter().map(|&x| vec![x]).collect()
    } else {
        axes[0]
            .iter()
            .flat_map(|&x| axes[1].iter().map(move |&y| vec![x, y]))
            .collect()
    };
    // log of the unnormalized product, shifted by its maximum before exp
    let log_prod: Vec<f64> = points
        .iter()
        .map(|p| {
            experts
                .iter()
                .map(|(m, v)| (0..dim).map(|d| normal_pdf(p[d], m[d], v[d]).ln()).sum::<f64>())
                .sum()
        })
        .collect();
    let top = log_prod.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let unnorm: Vec<f64> = log_prod.iter().map(|l| (l - top).exp()).collect();
    let z: f64 = unnorm.iter().sum::<f64>() * cell;
    let candidate = |p: &[f64]| -> f64 { (0..dim).map(|d| normal_pdf(p[d], fused_mean[d], fused_var[d])).product() };
    let peak = candidate(fused_mean);
    points
        .iter()
        .zip(&unnorm)
        .map(|(p, u)| (u / z - candidate(p)).abs() / peak)
        .fold(0.0, f64::max)
}

/// Monte-Carlo `KL(q ‖ N(0, I))` as the sample mean of `log q(z) - log p(z)`
/// with `z ~ q`. Returns the estimate and its standard error.
pub fn mc_kl_standard_normal(mean: &[f64], var: &[f64], samples: usize, rng: &mut impl Rng) -> (f64, f64) {
    let (mut s, mut s2) = (0.0, 0.0);
    for _ in 0..samples {
        let mut log_ratio = 0.0;
        for d in 0..mean.len() {
            let e: f64 = rng.sample(StandardNormal);
            let z = mean[d] + var[d].sqrt() * e;
            log_ratio += normal_pdf(z, mean[d], var[d]).ln() - normal_pdf(z, 0.0, 1.0).ln();
        }
        s += log_ratio;
        s2 += log_ratio * log_ratio;
    }
    let n = samples as f64;
    let m = s / n;
    let var_hat = (s2 / n - m * m) * n / (n - 1.0);
    (m, (var_hat / n).sqrt())
}

fn ln_factorial(k: u64) -> f64 {
    libm::lgamma(k as f64 + 1.0)
}

/// Conditional probabilities of every heterozygote count given `n` subjects
/// and `rare` copies of the minor allele, from the closed-form multinomial
/// (Levene) formula. Entry `h` is zero when `h` has the wrong parity.
pub fn hwe_het_distribution(n: u64, rare: u64) -> Vec<f64> {
    let common = 2 * n - rare;
    let log_const = ln_factorial(n) + ln_factorial(rare) + ln_factorial(common) - ln_factorial(2 * n);
    (0..=rare)
        .map(|h| {
            if !(rare - h).is_multiple_of(2) {
                return 0.0;
            }
            let hom_r = (rare - h) / 2;
            let hom_c = (common - h) / 2;
            (log_const - ln_factorial(hom_r) - ln_factorial(h) - ln_factorial(hom_c) + h as f64 * std::f64::consts::LN_2)
                .exp()
        })
        .collect()
}

/// Exact HWE p-value by full enumeration of the heterozygote distribution:
/// the mass of every configuration no more probable than the observed one.
pub fn hwe_enumerated(dist: &[f64], observed_het: u64) -> f64 {
    let p_obs = dist[observed_het as usize];
    dist.iter().filter(|&&p| p > 0.0 && p <= p_obs * (1.0 + 1e-9)).sum::<f64>().min(1.0)
}

/// OLS residuals of `y` on `[1 | x]` through the normal equations.
pub fn ols_residuals(y: &[f64], x: &DMatrix<f64>) -> Vec<f64> {
    let n = y.len();
    let design = DMatrix::from_fn(n, x.ncols() + 1, |i, j| if j == 0 { 1.0 } else { x[(i, j - 1)] });
    let yv = DVector::from_column_slice(y);
    let xtx = design.transpose() * &design;
    let xty = design.transpose() * &yv;
    let beta = xtx.cholesky().expect("full-rank design").solve(&xty);
    (yv - design * beta).iter().copied().collect()
}

/// One-sample Kolmogorov-Smirnov test against U(0, 1). Returns the statistic
/// and its asymptotic p-value (with the Stephens small-sample correction).
pub fn ks_uniform(values: &[f64]) -> (f64, f64) {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let d = v
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let lo = x - i as f64 / n;
            let hi = (i + 1) as f64 / n - x;
            lo.max(hi)
        })
        .fold(0.0, f64::max);
    let sqrt_n = n.sqrt();
    let lambda = (sqrt_n + 0.12 + 0.11 / sqrt_n) * d;
    let mut p = 0.0;
    for k in 1..=100 {
        let k = k as f64;
        let term = 2.0 * (-1f64).powi(k as i32 - 1) * (-2.0 * k * k * lambda * lambda).exp();
        p += term;
        if term.abs() < 1e-16 {
            break;
        }
    }
    (d, p.clamp(0.0, 1.0))
}

/// Central difference of `f` in coordinate `i` of `x`.
pub fn central_difference(f: &mut impl FnMut(&[f64]) -> f64, x: &mut [f64], i: usize, h: f64) -> f64 {
    let orig = x[i];
    x[i] = orig + h;
    let up = f(x);
    x[i] = orig - h;
    let down = f(x);
    x[i] = orig;
    (up - down) / (2.0 * h)
}

/// Relative error with an absolute floor for near-zero gradients.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}
