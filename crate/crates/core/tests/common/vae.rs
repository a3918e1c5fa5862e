//! A plain single-view VAE built directly from the network, Gaussian and
//! optimizer primitives, with its own loss, backprop and training loop.
//! The multi-view model with one view must reproduce it bit for bit.

use mvfuse::gaussians::{DiagGaussian, LOG_VAR_BOUND};
use mvfuse::mvvae::{bce, bce_grad, draw_eps, TrainConfig};
use mvfuse::neuralnet::{adam_step, MlpParams, OptimizerState};
use mvfuse::seed::rng_for;
use nalgebra::DMatrix;
use rand::seq::SliceRandom;

#[derive(Debug, Clone, PartialEq)]
pub struct StdVae {
    pub enc_mean: MlpParams,
    pub enc_log_var: MlpParams,
    pub dec: MlpParams,
    pub kl_weight: f64,
}

pub struct Step {
    pub total: f64,
    pub recon: f64,
    pub kl: f64,
    pub grads: [MlpParams; 3],
}

impl StdVae {
    pub fn step(&self, x: &DMatrix<f64>, eps: &DMatrix<f64>) -> Step {
        let n = x.nrows();
        let dim = eps.ncols();
        let (mu, mu_tape) = self.enc_mean.forward(x).unwrap();
        let (lv_raw, lv_tape) = self.enc_log_var.forward(x).unwrap();
        let post: Vec<DiagGaussian> = (0..n)
            .map(|i| {
                DiagGaussian::clamped(mu.row(i).iter().copied().collect(), lv_raw.row(i).iter().copied().collect())
                    .unwrap()
            })
            .collect();

        let mut z = DMatrix::zeros(n, dim);
        let mut kl_sum = 0.0;
        for (i, q) in post.iter().enumerate() {
            let e: Vec<f64> = eps.row(i).iter().copied().collect();
            for (d, v) in q.reparameterized_sample(&e).unwrap().into_iter().enumerate() {
                z[(i, d)] = v;
            }
            kl_sum += q.kl_to_standard_normal();
        }
        let scale = 1.0 / n as f64;
        let (x_hat, dec_tape) = self.dec.forward(&z).unwrap();
        let mut recon_sum = 0.0;
        for i in 0..n {
            let xr: Vec<f64> = x.row(i).iter().copied().collect();
            let pr: Vec<f64> = x_hat.row(i).iter().copied().collect();
            recon_sum += bce(&xr, &pr);
        }
        let recon = recon_sum * scale;
        let kl = kl_sum * scale;

        let upstream = DMatrix::from_fn(n, x.ncols(), |i, j| bce_grad(x[(i, j)], x_hat[(i, j)]) * scale);
        let (g_dec, gz) = self.dec.backward(&dec_tape, &upstream).unwrap();
        let grad_z = DMatrix::zeros(n, dim) + gz;
        let kl_scale = self.kl_weight * scale;
        let mut g_mu = DMatrix::zeros(n, dim);
        let mut g_lv = DMatrix::zeros(n, dim);
        for (i, q) in post.iter().enumerate() {
            for d in 0..dim {
                let (m, lv) = (q.mean()[d], q.log_var()[d]);
                g_mu[(i, d)] = grad_z[(i, d)] + kl_scale * m;
                g_lv[(i, d)] = if lv_raw[(i, d)].abs() > LOG_VAR_BOUND {
                    0.0
                } else {
                    grad_z[(i, d)] * 0.5 * (0.5 * lv).exp() * eps[(i, d)] + kl_scale * 0.5 * lv.exp_m1()
                };
            }
        }
        let (g_em, _) = self.enc_mean.backward(&mu_tape, &g_mu).unwrap();
        let (g_el, _) = self.enc_log_var.backward(&lv_tape, &g_lv).unwrap();
        Step {
            total: recon + self.kl_weight * kl,
            recon,
            kl,
            grads: [g_em, g_el, g_dec],
        }
    }

    /// Minibatch Adam with the same seeded streams a trainer would derive
    /// from `cfg.seed`. Returns per-epoch mean totals.
    pub fn train(&mut self, x: &DMatrix<f64>, cfg: &TrainConfig) -> Vec<f64> {
        let mut opts: Vec<OptimizerState> = [&self.enc_mean, &self.enc_log_var, &self.dec]
            .into_iter()
            .map(|p| OptimizerState::new(p, cfg.optimizer).unwrap())
            .collect();
        let mut shuffle_rng = rng_for(cfg.seed, "shuffle");
        let mut eps_rng = rng_for(cfg.seed, "eps");
        let n = x.nrows();
        let dim = self.dec.spec().input_dim();
        let mut order: Vec<usize> = (0..n).collect();
        let mut history = Vec::new();
        for _ in 0..cfg.epochs {
            if cfg.shuffle {
                order.shuffle(&mut shuffle_rng);
            }
            let mut tot = 0.0;
            for rows in order.chunks(cfg.batch_size) {
                let xb = x.select_rows(rows);
                let eps = draw_eps(&mut eps_rng, rows.len(), dim);
                let s = self.step(&xb, &eps);
                let nets = [&mut self.enc_mean, &mut self.enc_log_var, &mut self.dec];
                for ((net, g), opt) in nets.into_iter().zip(&s.grads).zip(&mut opts) {
                    adam_step(net, g, opt).unwrap();
                }
                tot += s.total * rows.len() as f64;
            }
            history.push(tot / n as f64);
        }
        history
    }
}
