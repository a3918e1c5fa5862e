use serde::{Deserialize, Serialize};

use super::MlpParams;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && self.learning_rate.is_finite()
            && self.beta1 > 0.0
            && self.beta1 < 1.0
            && self.beta2 > 0.0
            && self.beta2 < 1.0
            && self.epsilon > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid optimizer hyperparameters {self:?}")))
        }
    }
}

/// First/second moment accumulators for one parameter set.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub config: AdamConfig,
    first_moment: MlpParams,
    second_moment: MlpParams,
    step: u64,
}

impl OptimizerState {
    pub fn new(params: &MlpParams, config: AdamConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            first_moment: MlpParams::zeros(params.spec()),
            second_moment: MlpParams::zeros(params.spec()),
            step: 0,
        })
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update, in place. Non-finite gradients are rejected
/// before anything is modified.
pub fn adam_step(params: &mut MlpParams, grads: &MlpParams, state: &mut OptimizerState) -> Result<()> {
    if grads.spec() != params.spec() || state.first_moment.spec() != params.spec() {
        return Err(Error::invalid("optimizer state / gradient shapes do not match parameters"));
    }
    if !grads.is_finite() {
        return Err(Error::numerical("non-finite gradient entries"));
    }
    state.step += 1;
    let AdamConfig {
        learning_rate,
        beta1,
        beta2,
        epsilon,
    } = state.config;
    let t = state.step as i32;
    let bc1 = 1.0 - beta1.powi(t);
    let bc2 = 1.0 - beta2.powi(t);

    let layers = params
        .layers_mut()
        .iter_mut()
        .zip(grads.layers())
        .zip(state.first_moment.layers_mut().iter_mut())
        .zip(state.second_moment.layers_mut().iter_mut());
    for (((p, g), m), v) in layers {
        let pw = p.weight.iter_mut().chain(p.bias.iter_mut());
        let gw = g.weight.iter().chain(g.bias.iter());
        let mw = m.weight.iter_mut().chain(m.bias.iter_mut());
        let vw = v.weight.iter_mut().chain(v.bias.iter_mut());
        for (((p, g), m), v) in pw.zip(gw).zip(mw).zip(vw) {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neuralnet::{FlatParams, HiddenActivation, MlpSpec, OutputActivation};
    use nalgebra::DMatrix;

    fn linear(inp: usize, out: usize) -> MlpParams {
        let spec = MlpSpec::new(vec![inp, out], HiddenActivation::Relu, OutputActivation::Identity).unwrap();
        MlpParams::init(&spec, 4)
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut p = linear(3, 2);
        let before = p.clone();
        let mut st = OptimizerState::new(&p, AdamConfig::default()).unwrap();
        let zero = MlpParams::zeros(p.spec());
        adam_step(&mut p, &zero, &mut st).unwrap();
        assert_eq!(p, before);
        assert_eq!(st.step(), 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate_against_gradient_sign() {
        let mut p = linear(2, 2);
        let before = p.clone();
        let mut g = MlpParams::zeros(p.spec());
        let vals = [0.5, -3.0, 1e-3, -7.5, 2.0, -0.01];
        for (i, v) in vals.iter().enumerate() {
            g.set(i, *v);
        }
        let cfg = AdamConfig::default();
        let mut st = OptimizerState::new(&p, cfg).unwrap();
        adam_step(&mut p, &g, &mut st).unwrap();
        for (i, v) in vals.iter().enumerate() {
            let delta = p.get(i) - before.get(i);
            assert!((delta + cfg.learning_rate * v.signum()).abs() < 1e-8, "{i}: {delta}");
        }
    }

    #[test]
    fn non_finite_gradient_rejected_without_mutation() {
        let mut p = linear(2, 1);
        let before = p.clone();
        let mut g = MlpParams::zeros(p.spec());
        g.set(0, f64::NAN);
        let mut st = OptimizerState::new(&p, AdamConfig::default()).unwrap();
        assert!(adam_step(&mut p, &g, &mut st).is_err());
        assert_eq!(p, before);
        assert_eq!(st.step(), 0);
    }

    #[test]
    fn converges_on_convex_quadratic() {
        // minimize Σ_i (w_i - target_i)² over the weights of a 1x3 linear layer
        let target = [1.5, -0.75, 0.25];
        let mut p = linear(3, 1);
        let cfg = AdamConfig {
            learning_rate: 0.05,
            ..AdamConfig::default()
        };
        let mut st = OptimizerState::new(&p, cfg).unwrap();
        for _ in 0..200 {
            let mut g = MlpParams::zeros(p.spec());
            for (i, t) in target.iter().enumerate() {
                g.set(i, 2.0 * (p.get(i) - t));
            }
            g.set(3, 2.0 * p.get(3));
            adam_step(&mut p, &g, &mut st).unwrap();
        }
        for (i, t) in target.iter().enumerate() {
            assert!((p.get(i) - t).abs() < 1e-3, "w{i} = {}", p.get(i));
        }
        assert!(p.get(3).abs() < 1e-3);
        let _ = DMatrix::<f64>::zeros(1, 1);
    }

    #[test]
    fn rejects_bad_hyperparameters() {
        let p = linear(1, 1);
        let bad = AdamConfig {
            beta1: 1.0,
            ..AdamConfig::default()
        };
        assert!(OptimizerState::new(&p, bad).is_err());
    }
}
