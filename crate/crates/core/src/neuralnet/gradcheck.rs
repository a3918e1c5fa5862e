//! Central finite-difference verification of analytic gradients.

use nalgebra::DMatrix;
use rand::Rng as _;

use super::{MlpParams, MlpSpec};
use crate::seed;

/// Step used for central differences.
pub const FD_STEP: f64 = 1e-5;

/// Gradients smaller than this are compared in absolute rather than relative terms.
const REL_FLOOR: f64 = 1e-6;

/// Parameters addressable as one flat vector.
pub trait FlatParams {
    fn n_params(&self) -> usize;
    fn get(&self, i: usize) -> f64;
    fn set(&mut self, i: usize, v: f64);
}

/// A scalar loss of a network output: returns the value and `∂L/∂output`.
pub type LossFn<'a> = &'a dyn Fn(&DMatrix<f64>) -> (f64, DMatrix<f64>);

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Max relative error between `analytic` and central differences of `loss`
/// over every parameter. Parameters are restored on return.
pub fn check_gradients<P: FlatParams>(
    params: &mut P,
    analytic: &[f64],
    mut loss: impl FnMut(&P) -> f64,
    step: f64,
) -> f64 {
    assert_eq!(analytic.len(), params.n_params());
    let mut worst = 0.0f64;
    for (i, a) in analytic.iter().enumerate() {
        let orig = params.get(i);
        params.set(i, orig + step);
        let up = loss(params);
        params.set(i, orig - step);
        let down = loss(params);
        params.set(i, orig);
        worst = worst.max(relative_error(*a, (up - down) / (2.0 * step)));
    }
    worst
}

/// Builds a network from `spec` and `seed`, runs it on a seeded random batch
/// in `[-1, 1]`, and compares backprop against central differences of `loss`.
pub fn gradcheck(spec: &MlpSpec, loss: LossFn<'_>, seed: u64) -> f64 {
    let mut params = MlpParams::init(spec, seed);
    // widen biases so relu units are not sitting on their kink at zero
    let mut rng = seed::rng_for(seed, "gradcheck");
    for layer in params.layers_mut() {
        for b in layer.bias.iter_mut() {
            *b = rng.random_range(-0.5..0.5);
        }
    }
    let x = DMatrix::from_fn(4, spec.input_dim(), |_, _| rng.random_range(-1.0..1.0));

    let (out, tape) = params.forward(&x).expect("gradcheck input shape");
    let (_, grad_out) = loss(&out);
    let (grads, _) = params.backward(&tape, &grad_out).expect("gradcheck tape");
    let analytic: Vec<f64> = (0..grads.n_params()).map(|i| grads.get(i)).collect();
    check_gradients(
        &mut params,
        &analytic,
        |p| loss(&p.forward(&x).expect("gradcheck forward").0).0,
        FD_STEP,
    )
}

/// `L = Σ (y - target)²`.
pub fn squared_error_loss(target: DMatrix<f64>) -> impl Fn(&DMatrix<f64>) -> (f64, DMatrix<f64>) {
    move |y| {
        let diff = y - &target;
        (diff.norm_squared(), diff * 2.0)
    }
}

/// `L = -Σ [t log y + (1 - t) log(1 - y)]`, for outputs strictly inside (0, 1).
pub fn binary_cross_entropy_loss(
    target: DMatrix<f64>,
) -> impl Fn(&DMatrix<f64>) -> (f64, DMatrix<f64>) {
    move |y| {
        let value = -y
            .zip_map(&target, |p, t| t * p.ln() + (1.0 - t) * (1.0 - p).ln())
            .sum();
        let grad = y.zip_map(&target, |p, t| -t / p + (1.0 - t) / (1.0 - p));
        (value, grad)
    }
}
