//! Feed-forward MLPs with exact reverse-mode gradients.
//!
//! Matrices are batch-major: an input batch is `batch × in`, layer weights are
//! `out × in`, so a layer computes `x Wᵀ + 1 bᵀ`.

mod adam;
pub mod checkpoint;
mod gradcheck;

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, Error, Result};
use crate::seed;

pub use adam::{adam_step, AdamConfig, OptimizerState};
pub use gradcheck::{
    binary_cross_entropy_loss, check_gradients, gradcheck, relative_error, squared_error_loss,
    FlatParams, LossFn,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HiddenActivation {
    Relu,
    Tanh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputActivation {
    Identity,
    Sigmoid,
}

impl HiddenActivation {
    pub fn name(self) -> &'static str {
        match self {
            HiddenActivation::Relu => "relu",
            HiddenActivation::Tanh => "tanh",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(HiddenActivation::Relu),
            "tanh" => Ok(HiddenActivation::Tanh),
            other => Err(Error::invalid(format!("unknown hidden activation '{other}'"))),
        }
    }
}

impl OutputActivation {
    pub fn name(self) -> &'static str {
        match self {
            OutputActivation::Identity => "identity",
            OutputActivation::Sigmoid => "sigmoid",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(OutputActivation::Identity),
            "sigmoid" => Ok(OutputActivation::Sigmoid),
            other => Err(Error::invalid(format!("unknown output activation '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    /// Input dim, hidden dims..., output dim.
    pub layer_sizes: Vec<usize>,
    pub hidden_activation: HiddenActivation,
    pub output_activation: OutputActivation,
}

impl MlpSpec {
    pub fn new(
        layer_sizes: Vec<usize>,
        hidden_activation: HiddenActivation,
        output_activation: OutputActivation,
    ) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(Error::invalid("an MLP needs at least an input and an output size"));
        }
        if layer_sizes.contains(&0) {
            return Err(Error::invalid("layer sizes must be positive"));
        }
        Ok(Self {
            layer_sizes,
            hidden_activation,
            output_activation,
        })
    }

    pub fn n_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `out × in`.
    pub weight: DMatrix<f64>,
    pub bias: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    spec: MlpSpec,
    layers: Vec<Layer>,
}

/// Cached values from [`MlpParams::forward`]; enough to run backward without
/// recomputation.
#[derive(Debug, Clone)]
pub struct Tape {
    /// `inputs[l]` is the activation entering layer `l`; `inputs[0]` is the batch.
    inputs: Vec<DMatrix<f64>>,
    pre_activations: Vec<DMatrix<f64>>,
    output: DMatrix<f64>,
}

impl Tape {
    pub fn output(&self) -> &DMatrix<f64> {
        &self.output
    }

    pub fn batch_size(&self) -> usize {
        self.output.nrows()
    }
}

impl MlpParams {
    pub fn zeros(spec: &MlpSpec) -> Self {
        let layers = spec
            .layer_sizes
            .windows(2)
            .map(|w| Layer {
                weight: DMatrix::zeros(w[1], w[0]),
                bias: DVector::zeros(w[1]),
            })
            .collect();
        Self {
            spec: spec.clone(),
            layers,
        }
    }

    /// Glorot-uniform weights in `±√(6 / (fan_in + fan_out))`, zero biases.
    pub fn init(spec: &MlpSpec, seed: u64) -> Self {
        let mut rng = seed::rng_for(seed, "mlp-init");
        let mut params = Self::zeros(spec);
        for layer in &mut params.layers {
            let (fan_out, fan_in) = layer.weight.shape();
            let bound = glorot_bound(fan_in, fan_out);
            // row-major fill so the draw order matches the checkpoint layout
            for r in 0..fan_out {
                for c in 0..fan_in {
                    layer.weight[(r, c)] = rng.random_range(-bound..bound);
                }
            }
        }
        params
    }

    pub fn from_layers(spec: MlpSpec, layers: Vec<Layer>) -> Result<Self> {
        ensure_len("MLP layer count", spec.n_layers(), layers.len())?;
        for (l, (layer, w)) in layers.iter().zip(spec.layer_sizes.windows(2)).enumerate() {
            if layer.weight.shape() != (w[1], w[0]) || layer.bias.len() != w[1] {
                return Err(Error::invalid(format!(
                    "layer {l} shape does not match spec {:?}",
                    spec.layer_sizes
                )));
            }
            if layer.weight.iter().chain(layer.bias.iter()).any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("layer {l} has non-finite parameters")));
            }
        }
        Ok(Self { spec, layers })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }

    /// `self += scale * other`, shapes assumed equal.
    pub fn add_scaled(&mut self, other: &MlpParams, scale: f64) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight.zip_apply(&b.weight, |x, y| *x += scale * y);
            a.bias.zip_apply(&b.bias, |x, y| *x += scale * y);
        }
    }

    pub fn forward(&self, x: &DMatrix<f64>) -> Result<(DMatrix<f64>, Tape)> {
        ensure_len("MLP input columns", self.spec.input_dim(), x.ncols())?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("MLP input contains non-finite values"));
        }
        let n_layers = self.layers.len();
        let mut inputs = Vec::with_capacity(n_layers);
        let mut pre_activations = Vec::with_capacity(n_layers);
        let mut current = x.clone();
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = &current * layer.weight.transpose();
            for mut row in z.row_iter_mut() {
                row += layer.bias.transpose();
            }
            let a = if l + 1 == n_layers {
                match self.spec.output_activation {
                    OutputActivation::Identity => z.clone(),
                    OutputActivation::Sigmoid => z.map(sigmoid),
                }
            } else {
                match self.spec.hidden_activation {
                    HiddenActivation::Relu => z.map(|v| v.max(0.0)),
                    HiddenActivation::Tanh => z.map(f64::tanh),
                }
            };
            inputs.push(current);
            pre_activations.push(z);
            current = a;
        }
        let tape = Tape {
            inputs,
            pre_activations,
            output: current.clone(),
        };
        Ok((current, tape))
    }

    /// Reverse pass. `grad_output` is `∂L/∂output` (batch × out). Returns
    /// parameter gradients (same shapes as `self`) and `∂L/∂input`.
    pub fn backward(
        &self,
        tape: &Tape,
        grad_output: &DMatrix<f64>,
    ) -> Result<(MlpParams, DMatrix<f64>)> {
        self.check_tape(tape)?;
        if grad_output.shape() != tape.output.shape() {
            return Err(Error::invalid(format!(
                "grad_output shape {:?} does not match forward output {:?}",
                grad_output.shape(),
                tape.output.shape()
            )));
        }
        let n_layers = self.layers.len();
        let mut grads = MlpParams::zeros(&self.spec);
        let mut upstream = grad_output.clone();
        for l in (0..n_layers).rev() {
            let pre = &tape.pre_activations[l];
            let post = if l + 1 == n_layers {
                &tape.output
            } else {
                &tape.inputs[l + 1]
            };
            let delta = if l + 1 == n_layers {
                match self.spec.output_activation {
                    OutputActivation::Identity => upstream,
                    OutputActivation::Sigmoid => upstream.zip_map(post, |g, s| g * s * (1.0 - s)),
                }
            } else {
                match self.spec.hidden_activation {
                    HiddenActivation::Relu => {
                        upstream.zip_map(pre, |g, z| if z > 0.0 { g } else { 0.0 })
                    }
                    HiddenActivation::Tanh => upstream.zip_map(post, |g, t| g * (1.0 - t * t)),
                }
            };
            grads.layers[l].weight = delta.tr_mul(&tape.inputs[l]);
            grads.layers[l].bias = delta.row_sum().transpose();
            upstream = &delta * &self.layers[l].weight;
        }
        Ok((grads, upstream))
    }

    fn check_tape(&self, tape: &Tape) -> Result<()> {
        let stale = || Error::invalid("tape does not come from a forward pass of these parameters");
        if tape.pre_activations.len() != self.layers.len() || tape.inputs.len() != self.layers.len() {
            return Err(stale());
        }
        for (l, layer) in self.layers.iter().enumerate() {
            if tape.inputs[l].ncols() != layer.weight.ncols()
                || tape.pre_activations[l].ncols() != layer.weight.nrows()
            {
                return Err(stale());
            }
        }
        Ok(())
    }
}

impl FlatParams for MlpParams {
    fn n_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    fn get(&self, mut i: usize) -> f64 {
        for l in &self.layers {
            let (rows, cols) = l.weight.shape();
            if i < rows * cols {
                return l.weight[(i / cols, i % cols)];
            }
            i -= rows * cols;
            if i < rows {
                return l.bias[i];
            }
            i -= rows;
        }
        panic!("parameter index out of range");
    }

    fn set(&mut self, mut i: usize, v: f64) {
        for l in &mut self.layers {
            let (rows, cols) = l.weight.shape();
            if i < rows * cols {
                l.weight[(i / cols, i % cols)] = v;
                return;
            }
            i -= rows * cols;
            if i < rows {
                l.bias[i] = v;
                return;
            }
            i -= rows;
        }
        panic!("parameter index out of range");
    }
}

pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(sizes: &[usize], h: HiddenActivation, o: OutputActivation) -> MlpSpec {
        MlpSpec::new(sizes.to_vec(), h, o).unwrap()
    }

    #[test]
    fn spec_validation() {
        assert!(MlpSpec::new(vec![3], HiddenActivation::Relu, OutputActivation::Identity).is_err());
        assert!(MlpSpec::new(vec![3, 0, 2], HiddenActivation::Relu, OutputActivation::Identity).is_err());
        let s = spec(&[3, 4, 4, 2], HiddenActivation::Relu, OutputActivation::Identity);
        assert_eq!(s.n_layers(), 3);
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let s = spec(&[3, 2], HiddenActivation::Relu, OutputActivation::Identity);
        let a = MlpParams::init(&s, 11);
        assert_eq!(a, MlpParams::init(&s, 11));
        assert_ne!(a, MlpParams::init(&s, 12));
        let bound = (6.0f64 / 5.0).sqrt();
        assert!((bound - 1.0954).abs() < 1e-4);
        assert!(a.layers()[0].weight.iter().all(|w| w.abs() <= bound));
        assert!(a.layers()[0].bias.iter().all(|b| *b == 0.0));
    }

    #[test]
    fn identity_network_passes_input_through() {
        let s = spec(&[3, 3], HiddenActivation::Relu, OutputActivation::Identity);
        let p = MlpParams::from_layers(
            s,
            vec![Layer {
                weight: DMatrix::identity(3, 3),
                bias: DVector::zeros(3),
            }],
        )
        .unwrap();
        let x = DMatrix::from_row_slice(2, 3, &[1.0, -2.0, 3.5, 0.0, 0.25, -7.0]);
        assert_eq!(p.forward(&x).unwrap().0, x);
    }

    #[test]
    fn sigmoid_output_in_open_unit_interval() {
        let s = spec(&[2, 5, 3], HiddenActivation::Tanh, OutputActivation::Sigmoid);
        let p = MlpParams::init(&s, 3);
        let x = DMatrix::from_row_slice(2, 2, &[30.0, -30.0, 0.1, 0.2]);
        let (y, _) = p.forward(&x).unwrap();
        assert!(y.iter().all(|v| *v > 0.0 && *v < 1.0));
    }

    #[test]
    fn hand_evaluated_two_layer_net() {
        // 2 -> 2 (relu) -> 1 (identity)
        let s = spec(&[2, 2, 1], HiddenActivation::Relu, OutputActivation::Identity);
        let p = MlpParams::from_layers(
            s,
            vec![
                Layer {
                    weight: DMatrix::from_row_slice(2, 2, &[0.5, -0.25, -1.0, 0.75]),
                    bias: DVector::from_vec(vec![0.1, 0.2]),
                },
                Layer {
                    weight: DMatrix::from_row_slice(1, 2, &[2.0, -3.0]),
                    bias: DVector::from_vec(vec![0.05]),
                },
            ],
        )
        .unwrap();
        let x = DMatrix::from_row_slice(1, 2, &[0.4, 0.8]);
        // h1 = relu(0.2 - 0.2 + 0.1) = 0.1 ; h2 = relu(-0.4 + 0.6 + 0.2) = 0.4
        // y = 2*0.1 - 3*0.4 + 0.05 = -0.95
        let (y, _) = p.forward(&x).unwrap();
        assert!((y[(0, 0)] + 0.95).abs() < 1e-12);
    }

    #[test]
    fn forward_rejects_wrong_width() {
        let s = spec(&[3, 2], HiddenActivation::Relu, OutputActivation::Identity);
        let p = MlpParams::init(&s, 0);
        assert!(p.forward(&DMatrix::zeros(2, 4)).is_err());
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let s = spec(&[3, 4, 2], HiddenActivation::Tanh, OutputActivation::Sigmoid);
        let p = MlpParams::init(&s, 5);
        let x = DMatrix::from_fn(3, 3, |i, j| (i as f64 - j as f64) * 0.3);
        let (_, tape) = p.forward(&x).unwrap();
        let (g, gx) = p.backward(&tape, &DMatrix::zeros(3, 2)).unwrap();
        assert!((0..g.n_params()).all(|i| g.get(i) == 0.0));
        assert!(gx.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn single_linear_layer_weight_gradient_closed_form() {
        let s = spec(&[3, 2], HiddenActivation::Relu, OutputActivation::Identity);
        let p = MlpParams::init(&s, 9);
        let x = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, -1.0, 0.5, 0.0]);
        let g = DMatrix::from_row_slice(2, 2, &[0.3, -0.7, 1.1, 0.2]);
        let (_, tape) = p.forward(&x).unwrap();
        let (grads, gx) = p.backward(&tape, &g).unwrap();
        let expected_w = g.transpose() * &x;
        assert!((&grads.layers()[0].weight - expected_w).abs().max() < 1e-15);
        let expected_b = g.row_sum().transpose();
        assert!((&grads.layers()[0].bias - expected_b).abs().max() < 1e-15);
        let expected_x = &g * &p.layers()[0].weight;
        assert!((gx - expected_x).abs().max() < 1e-15);
    }

    #[test]
    fn mismatched_tape_rejected() {
        let a = MlpParams::init(&spec(&[3, 2], HiddenActivation::Relu, OutputActivation::Identity), 1);
        let b = MlpParams::init(&spec(&[3, 4, 2], HiddenActivation::Relu, OutputActivation::Identity), 1);
        let (_, tape) = b.forward(&DMatrix::zeros(1, 3)).unwrap();
        assert!(a.backward(&tape, &DMatrix::zeros(1, 2)).is_err());
        let (_, tape) = a.forward(&DMatrix::zeros(1, 3)).unwrap();
        assert!(a.backward(&tape, &DMatrix::zeros(2, 2)).is_err());
    }

    #[test]
    fn flat_indexing_covers_every_parameter() {
        let s = spec(&[2, 3, 1], HiddenActivation::Relu, OutputActivation::Identity);
        let mut p = MlpParams::zeros(&s);
        assert_eq!(p.n_params(), 2 * 3 + 3 + 3 + 1);
        for i in 0..p.n_params() {
            p.set(i, i as f64 + 1.0);
        }
        for i in 0..p.n_params() {
            assert_eq!(p.get(i), i as f64 + 1.0);
        }
        assert_eq!(p.layers()[0].bias[0], 7.0);
    }
}
