//! Multi-view variational autoencoder with product-of-experts fusion.
//!
//! Each view `m` has an encoder pair (mean net, log-variance net) mapping its
//! features to a diagonal Gaussian over a shared latent space, and a decoder
//! mapping the latent back to the view's features through a sigmoid output.
//! The per-view posteriors of the views a subject actually has are fused by
//! [`poe_fuse`](crate::gaussians::poe_fuse); a single reparameterized sample of
//! the fused posterior feeds every decoder. The training objective is the
//! negative ELBO: Bernoulli cross-entropy reconstruction of the available
//! views plus the closed-form KL of the fused posterior to `N(0, I)`, both
//! averaged over the batch.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, Error, Result};
use crate::gaussians::{clamp_log_var, poe_fuse_with, DiagGaussian, FusionOptions, LOG_VAR_BOUND};
use crate::neuralnet::checkpoint::{read_mlp, write_mlp, CheckpointReader, MAGIC};
use crate::neuralnet::{
    adam_step, AdamConfig, FlatParams, HiddenActivation, MlpParams, MlpSpec, OptimizerState,
    OutputActivation, Tape,
};
use crate::pipeline::dataset::{MultiViewBatch, MultiViewDataset};
use crate::seed::{self, Rng};

/// Floor applied to the arguments of the logarithms in the cross-entropy.
pub const BCE_LOG_FLOOR: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MvvaeConfig {
    pub view_names: Vec<String>,
    pub view_dims: Vec<usize>,
    pub latent_dim: usize,
    pub encoder_hidden: Vec<usize>,
    pub decoder_hidden: Vec<usize>,
    pub kl_weight: f64,
    pub hidden_activation: HiddenActivation,
    pub include_prior_expert: bool,
}

impl MvvaeConfig {
    /// Encoder and decoder nets with `n_layers` affine layers each and uniform
    /// hidden width.
    pub fn uniform(
        view_names: Vec<String>,
        view_dims: Vec<usize>,
        latent_dim: usize,
        n_layers: usize,
        hidden: usize,
    ) -> Self {
        let hidden_layers = vec![hidden; n_layers.saturating_sub(1)];
        Self {
            view_names,
            view_dims,
            latent_dim,
            encoder_hidden: hidden_layers.clone(),
            decoder_hidden: hidden_layers,
            kl_weight: 1.0,
            hidden_activation: HiddenActivation::Relu,
            include_prior_expert: false,
        }
    }

    pub fn n_views(&self) -> usize {
        self.view_dims.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.view_dims.is_empty() {
            return Err(Error::invalid("model needs at least one view"));
        }
        ensure_len("view names", self.view_dims.len(), self.view_names.len())?;
        if self.latent_dim == 0 || self.view_dims.contains(&0) {
            return Err(Error::invalid("latent and view dimensions must be positive"));
        }
        if self.encoder_hidden.contains(&0) || self.decoder_hidden.contains(&0) {
            return Err(Error::invalid("hidden widths must be positive"));
        }
        if !(self.kl_weight >= 0.0 && self.kl_weight.is_finite()) {
            return Err(Error::invalid("kl_weight must be finite and non-negative"));
        }
        Ok(())
    }

    fn encoder_spec(&self, m: usize) -> MlpSpec {
        let mut sizes = vec![self.view_dims[m]];
        sizes.extend(&self.encoder_hidden);
        sizes.push(self.latent_dim);
        MlpSpec::new(sizes, self.hidden_activation, OutputActivation::Identity)
            .expect("validated config")
    }

    fn decoder_spec(&self, m: usize) -> MlpSpec {
        let mut sizes = vec![self.latent_dim];
        sizes.extend(&self.decoder_hidden);
        sizes.push(self.view_dims[m]);
        MlpSpec::new(sizes, self.hidden_activation, OutputActivation::Sigmoid)
            .expect("validated config")
    }

    fn fusion(&self) -> FusionOptions {
        FusionOptions {
            include_prior_expert: self.include_prior_expert,
        }
    }
}

/// The three networks of one view.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewNets {
    pub encoder_mean: MlpParams,
    pub encoder_log_var: MlpParams,
    pub decoder: MlpParams,
}

impl ViewNets {
    fn nets(&self) -> [&MlpParams; 3] {
        [&self.encoder_mean, &self.encoder_log_var, &self.decoder]
    }

    fn nets_mut(&mut self) -> [&mut MlpParams; 3] {
        [
            &mut self.encoder_mean,
            &mut self.encoder_log_var,
            &mut self.decoder,
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MvvaeModel {
    config: MvvaeConfig,
    views: Vec<ViewNets>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElboTerms {
    pub total: f64,
    pub recon: f64,
    pub kl: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub optimizer: AdamConfig,
    pub shuffle: bool,
    /// Reparameterized samples per subject per step.
    pub latent_samples: usize,
    /// Probability of hiding each available view of a subject for one step
    /// (at least one view always stays). Hidden views are treated exactly
    /// like missing ones, which trains every view subset's posterior.
    pub view_dropout: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 32,
            seed: 0,
            optimizer: AdamConfig::default(),
            shuffle: true,
            latent_samples: 1,
            view_dropout: 0.25,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub total: Vec<f64>,
    pub recon: Vec<f64>,
    pub kl: Vec<f64>,
}

impl TrainHistory {
    pub fn len(&self) -> usize {
        self.total.len()
    }

    pub fn is_empty(&self) -> bool {
        self.total.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,total,recon,kl\n");
        for e in 0..self.len() {
            let _ = writeln!(
                out,
                "{},{:e},{:e},{:e}",
                e + 1,
                self.total[e],
                self.recon[e],
                self.kl[e]
            );
        }
        out
    }
}

/// Per-subject Bernoulli cross-entropy summed over features,
/// `-Σ [x log x̂ + (1 - x) log(1 - x̂)]`, with log arguments floored.
pub fn bce(x: &[f64], x_hat: &[f64]) -> f64 {
    x.iter()
        .zip(x_hat)
        .map(|(x, p)| -(x * p.max(BCE_LOG_FLOOR).ln() + (1.0 - x) * (1.0 - p).max(BCE_LOG_FLOOR).ln()))
        .sum()
}

/// `∂ bce / ∂x̂` for one feature; zero where the log floor is active.
pub fn bce_grad(x: f64, p: f64) -> f64 {
    let a = if p > BCE_LOG_FLOOR { -x / p } else { 0.0 };
    let b = if 1.0 - p > BCE_LOG_FLOOR {
        (1.0 - x) / (1.0 - p)
    } else {
        0.0
    };
    a + b
}

/// `rows × dim` standard-normal draws, filled row by row.
pub fn draw_eps(rng: &mut Rng, rows: usize, dim: usize) -> DMatrix<f64> {
    let mut eps = DMatrix::zeros(rows, dim);
    for i in 0..rows {
        for d in 0..dim {
            eps[(i, d)] = StandardNormal.sample(rng);
        }
    }
    eps
}

/// Fuses the posteriors of the available views. `per_view` pairs a view index
/// with its posterior; entries whose view is not available are ignored.
pub fn fuse_posterior(per_view: &[(usize, DiagGaussian)], available: &[bool]) -> Result<DiagGaussian> {
    fuse_posterior_with(per_view, available, FusionOptions::default())
}

pub fn fuse_posterior_with(
    per_view: &[(usize, DiagGaussian)],
    available: &[bool],
    opts: FusionOptions,
) -> Result<DiagGaussian> {
    let experts: Vec<DiagGaussian> = per_view
        .iter()
        .filter(|(m, _)| available.get(*m).copied().unwrap_or(false))
        .map(|(_, g)| g.clone())
        .collect();
    if experts.is_empty() {
        return Err(Error::invalid("all views are missing for this subject"));
    }
    poe_fuse_with(&experts, opts)
}

struct EncodedView {
    mean: DMatrix<f64>,
    log_var_raw: DMatrix<f64>,
    mean_tape: Tape,
    log_var_tape: Tape,
}

impl MvvaeModel {
    pub fn new(config: MvvaeConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let views = (0..config.n_views())
            .map(|m| ViewNets {
                encoder_mean: MlpParams::init(
                    &config.encoder_spec(m),
                    seed::derive_seed(seed, &format!("view{m}-encoder-mean")),
                ),
                encoder_log_var: MlpParams::init(
                    &config.encoder_spec(m),
                    seed::derive_seed(seed, &format!("view{m}-encoder-logvar")),
                ),
                decoder: MlpParams::init(
                    &config.decoder_spec(m),
                    seed::derive_seed(seed, &format!("view{m}-decoder")),
                ),
            })
            .collect();
        Ok(Self { config, views })
    }

    /// Model with every parameter zero.
    pub fn zeros(config: MvvaeConfig) -> Result<Self> {
        config.validate()?;
        let views = (0..config.n_views())
            .map(|m| ViewNets {
                encoder_mean: MlpParams::zeros(&config.encoder_spec(m)),
                encoder_log_var: MlpParams::zeros(&config.encoder_spec(m)),
                decoder: MlpParams::zeros(&config.decoder_spec(m)),
            })
            .collect();
        Ok(Self { config, views })
    }

    pub fn from_parts(config: MvvaeConfig, views: Vec<ViewNets>) -> Result<Self> {
        config.validate()?;
        ensure_len("view networks", config.n_views(), views.len())?;
        for (m, v) in views.iter().enumerate() {
            if v.encoder_mean.spec() != &config.encoder_spec(m)
                || v.encoder_log_var.spec() != &config.encoder_spec(m)
                || v.decoder.spec() != &config.decoder_spec(m)
            {
                return Err(Error::invalid(format!(
                    "networks of view {m} do not match the model config"
                )));
            }
        }
        Ok(Self { config, views })
    }

    pub fn config(&self) -> &MvvaeConfig {
        &self.config
    }

    pub fn views(&self) -> &[ViewNets] {
        &self.views
    }

    pub fn views_mut(&mut self) -> &mut [ViewNets] {
        &mut self.views
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    fn check_view(&self, m: usize) -> Result<()> {
        if m >= self.config.n_views() {
            return Err(Error::invalid(format!(
                "view index {m} out of range (model has {} views)",
                self.config.n_views()
            )));
        }
        Ok(())
    }

    fn check_unit_range(&self, m: usize, x: &DMatrix<f64>, rows: Option<&[bool]>) -> Result<()> {
        for i in 0..x.nrows() {
            if rows.is_some_and(|r| !r[i]) {
                continue;
            }
            for j in 0..x.ncols() {
                let v = x[(i, j)];
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::invalid(format!(
                        "view '{}' column {j} has value {v} outside [0, 1] (row {i})",
                        self.config.view_names[m]
                    )));
                }
            }
        }
        Ok(())
    }

    fn encode_raw(&self, m: usize, x: &DMatrix<f64>) -> Result<EncodedView> {
        let nets = &self.views[m];
        let (mean, mean_tape) = nets.encoder_mean.forward(x)?;
        let (log_var_raw, log_var_tape) = nets.encoder_log_var.forward(x)?;
        Ok(EncodedView {
            mean,
            log_var_raw,
            mean_tape,
            log_var_tape,
        })
    }

    /// Per-row posterior of view `m`. Features must lie in `[0, 1]`.
    pub fn encode_view(&self, m: usize, x: &DMatrix<f64>) -> Result<Vec<DiagGaussian>> {
        self.check_view(m)?;
        ensure_len("encode_view columns", self.config.view_dims[m], x.ncols())?;
        self.check_unit_range(m, x, None)?;
        let enc = self.encode_raw(m, x)?;
        (0..x.nrows())
            .map(|i| row_gaussian(&enc, i))
            .collect()
    }

    /// Reconstruction `x̂_m` for latent rows `z` (entries in (0, 1)).
    pub fn decode_view(&self, m: usize, z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_view(m)?;
        ensure_len("decode_view latent columns", self.config.latent_dim, z.ncols())?;
        Ok(self.views[m].decoder.forward(z)?.0)
    }

    fn check_batch(&self, batch: &MultiViewBatch) -> Result<()> {
        ensure_len("batch views", self.config.n_views(), batch.views.len())?;
        for (m, x) in batch.views.iter().enumerate() {
            ensure_len("batch view columns", self.config.view_dims[m], x.ncols())?;
            ensure_len("batch view rows", batch.len(), x.nrows())?;
        }
        if batch.mask.iter().any(|r| r.len() != self.config.n_views()) {
            return Err(Error::invalid("mask width differs from view count"));
        }
        Ok(())
    }

    fn fused_rows(&self, encoded: &[EncodedView], mask: &[Vec<bool>]) -> Result<Vec<DiagGaussian>> {
        let opts = self.config.fusion();
        (0..mask.len())
            .map(|i| {
                let per_view = encoded
                    .iter()
                    .enumerate()
                    .filter(|(m, _)| mask[i][*m])
                    .map(|(m, enc)| Ok((m, row_gaussian(enc, i)?)))
                    .collect::<Result<Vec<_>>>()?;
                fuse_posterior_with(&per_view, &mask[i], opts)
                    .map_err(|_| Error::invalid(format!("all views are missing for batch row {i}")))
            })
            .collect()
    }

    /// Fused posterior mean for every row of the batch (`N × D`); no sampling.
    pub fn extract_latents(&self, batch: &MultiViewBatch) -> Result<DMatrix<f64>> {
        self.check_batch(batch)?;
        let encoded = batch
            .views
            .iter()
            .enumerate()
            .map(|(m, x)| {
                let rows: Vec<bool> = batch.mask.iter().map(|r| r[m]).collect();
                self.check_unit_range(m, x, Some(&rows))?;
                self.encode_raw(m, x)
            })
            .collect::<Result<Vec<_>>>()?;
        let fused = self.fused_rows(&encoded, &batch.mask)?;
        let d = self.config.latent_dim;
        Ok(DMatrix::from_fn(batch.len(), d, |i, j| fused[i].mean()[j]))
    }

    /// Latent of one subject; `views[m] = None` marks view `m` missing.
    pub fn extract_latent(&self, views: &[Option<&[f64]>]) -> Result<Vec<f64>> {
        ensure_len("extract_latent views", self.config.n_views(), views.len())?;
        let batch = MultiViewBatch {
            views: views
                .iter()
                .enumerate()
                .map(|(m, v)| match v {
                    Some(row) => {
                        ensure_len("extract_latent view width", self.config.view_dims[m], row.len())?;
                        Ok(DMatrix::from_row_slice(1, row.len(), row))
                    }
                    None => Ok(DMatrix::zeros(1, self.config.view_dims[m])),
                })
                .collect::<Result<Vec<_>>>()?,
            mask: vec![views.iter().map(Option::is_some).collect()],
        };
        Ok(self.extract_latents(&batch)?.row(0).iter().copied().collect())
    }

    /// Negative ELBO of the batch for fixed noise `eps` (`batch × D`).
    pub fn elbo_loss(&self, batch: &MultiViewBatch, eps: &DMatrix<f64>) -> Result<ElboTerms> {
        Ok(self.forward_loss(batch, eps, false)?.0)
    }

    /// Negative ELBO and its exact gradient with respect to every parameter.
    pub fn loss_and_grads(
        &self,
        batch: &MultiViewBatch,
        eps: &DMatrix<f64>,
    ) -> Result<(ElboTerms, MvvaeModel)> {
        let (terms, grads) = self.forward_loss(batch, eps, true)?;
        Ok((terms, grads.expect("gradients requested")))
    }

    fn forward_loss(
        &self,
        batch: &MultiViewBatch,
        eps: &DMatrix<f64>,
        want_grads: bool,
    ) -> Result<(ElboTerms, Option<MvvaeModel>)> {
        self.check_batch(batch)?;
        let n = batch.len();
        let dim = self.config.latent_dim;
        if n == 0 {
            return Err(Error::invalid("empty batch"));
        }
        if eps.shape() != (n, dim) {
            return Err(Error::invalid(format!(
                "eps shape {:?} does not match batch × latent ({n}, {dim})",
                eps.shape()
            )));
        }
        let encoded = batch
            .views
            .iter()
            .enumerate()
            .map(|(m, x)| {
                let rows: Vec<bool> = batch.mask.iter().map(|r| r[m]).collect();
                self.check_unit_range(m, x, Some(&rows))?;
                self.encode_raw(m, x)
            })
            .collect::<Result<Vec<_>>>()?;
        let fused = self.fused_rows(&encoded, &batch.mask)?;

        let mut z = DMatrix::zeros(n, dim);
        let mut kl_sum = 0.0;
        for (i, f) in fused.iter().enumerate() {
            let eps_row: Vec<f64> = eps.row(i).iter().copied().collect();
            let sample = f.reparameterized_sample(&eps_row)?;
            for (d, v) in sample.into_iter().enumerate() {
                z[(i, d)] = v;
            }
            kl_sum += f.kl_to_standard_normal();
        }

        let scale = 1.0 / n as f64;
        let mut recon_sum = 0.0;
        let mut decoded = Vec::with_capacity(self.config.n_views());
        for (m, x) in batch.views.iter().enumerate() {
            let (x_hat, tape) = self.views[m].decoder.forward(&z)?;
            for i in 0..n {
                if batch.mask[i][m] {
                    let xr: Vec<f64> = x.row(i).iter().copied().collect();
                    let pr: Vec<f64> = x_hat.row(i).iter().copied().collect();
                    recon_sum += bce(&xr, &pr);
                }
            }
            decoded.push((x_hat, tape));
        }
        let recon = recon_sum * scale;
        let kl = kl_sum * scale;
        let terms = ElboTerms {
            total: recon + self.config.kl_weight * kl,
            recon,
            kl,
        };
        if !want_grads {
            return Ok((terms, None));
        }

        let mut grads = MvvaeModel::zeros(self.config.clone())?;
        let mut grad_z = DMatrix::zeros(n, dim);
        for (m, (x_hat, tape)) in decoded.iter().enumerate() {
            let x = &batch.views[m];
            let mut upstream = DMatrix::zeros(n, x.ncols());
            for i in 0..n {
                if batch.mask[i][m] {
                    for j in 0..x.ncols() {
                        upstream[(i, j)] = bce_grad(x[(i, j)], x_hat[(i, j)]) * scale;
                    }
                }
            }
            let (g, gz) = self.views[m].decoder.backward(tape, &upstream)?;
            grads.views[m].decoder = g;
            grad_z += gz;
        }

        let kl_scale = self.config.kl_weight * scale;
        let mut grad_mean: Vec<DMatrix<f64>> = encoded.iter().map(|_| DMatrix::zeros(n, dim)).collect();
        let mut grad_log_var = grad_mean.clone();
        for (i, f) in fused.iter().enumerate() {
            let avail: Vec<usize> = (0..self.config.n_views()).filter(|&m| batch.mask[i][m]).collect();
            for d in 0..dim {
                let mu_z = f.mean()[d];
                let lv_z = f.log_var()[d];
                let g_mu_z = grad_z[(i, d)] + kl_scale * mu_z;
                let g_lv_z = grad_z[(i, d)] * 0.5 * (0.5 * lv_z).exp() * eps[(i, d)]
                    + kl_scale * 0.5 * lv_z.exp_m1();
                if avail.len() == 1 && !self.config.include_prior_expert {
                    let m = avail[0];
                    grad_mean[m][(i, d)] = g_mu_z;
                    grad_log_var[m][(i, d)] = g_lv_z;
                    continue;
                }
                let mut total_precision = if self.config.include_prior_expert { 1.0 } else { 0.0 };
                for &m in &avail {
                    let lv = clamp_log_var(encoded[m].log_var_raw[(i, d)]);
                    total_precision += (-lv).exp();
                }
                for &m in &avail {
                    let lv = clamp_log_var(encoded[m].log_var_raw[(i, d)]);
                    let w = (-lv).exp() / total_precision;
                    let mu = encoded[m].mean[(i, d)];
                    grad_mean[m][(i, d)] = g_mu_z * w;
                    grad_log_var[m][(i, d)] = g_lv_z * w - g_mu_z * w * (mu - mu_z);
                }
            }
        }
        for (m, enc) in encoded.iter().enumerate() {
            // clamped log-variances pass no gradient
            let g_lv = grad_log_var[m].zip_map(&enc.log_var_raw, |g, raw| {
                if raw.abs() > LOG_VAR_BOUND {
                    0.0
                } else {
                    g
                }
            });
            let (gm, _) = self.views[m].encoder_mean.backward(&enc.mean_tape, &grad_mean[m])?;
            let (gl, _) = self.views[m].encoder_log_var.backward(&enc.log_var_tape, &g_lv)?;
            grads.views[m].encoder_mean = gm;
            grads.views[m].encoder_log_var = gl;
        }
        Ok((terms, Some(grads)))
    }

    pub fn is_finite(&self) -> bool {
        self.views
            .iter()
            .all(|v| v.nets().iter().all(|n| n.is_finite()))
    }

    pub fn to_checkpoint(&self) -> String {
        let c = &self.config;
        let mut out = format!("{MAGIC}\n");
        let _ = writeln!(
            out,
            "mvvae {} {} {:e} {} {}",
            c.n_views(),
            c.latent_dim,
            c.kl_weight,
            c.hidden_activation.name(),
            u8::from(c.include_prior_expert)
        );
        let join = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ");
        let _ = writeln!(out, "view_names {}", c.view_names.join(" "));
        let _ = writeln!(out, "view_dims {}", join(&c.view_dims));
        let _ = writeln!(out, "encoder_hidden {}", join(&c.encoder_hidden));
        let _ = writeln!(out, "decoder_hidden {}", join(&c.decoder_hidden));
        for (m, v) in self.views.iter().enumerate() {
            let _ = writeln!(out, "view {m}");
            for net in v.nets() {
                write_mlp(&mut out, net);
            }
        }
        out
    }

    pub fn from_checkpoint(text: &str) -> Result<Self> {
        let mut r = CheckpointReader::new(text);
        r.expect_magic()?;
        let head = r.expect("mvvae")?;
        if head.len() != 5 {
            return Err(r.error("malformed mvvae header"));
        }
        let n_views: usize = r.parse(head[0])?;
        let latent_dim: usize = r.parse(head[1])?;
        let kl_weight: f64 = r.parse(head[2])?;
        let hidden_activation = HiddenActivation::parse(head[3]).map_err(|e| r.error(e))?;
        let include_prior_expert = match head[4] {
            "0" => false,
            "1" => true,
            _ => return Err(r.error("bad prior flag")),
        };
        let view_names: Vec<String> = r.expect("view_names")?.into_iter().map(String::from).collect();
        let parse_list = |r: &mut CheckpointReader<'_>, key: &str| -> Result<Vec<usize>> {
            let toks = r.expect(key)?;
            toks.iter().map(|t| r.parse(t)).collect()
        };
        let view_dims = parse_list(&mut r, "view_dims")?;
        let encoder_hidden = parse_list(&mut r, "encoder_hidden")?;
        let decoder_hidden = parse_list(&mut r, "decoder_hidden")?;
        if view_dims.len() != n_views || view_names.len() != n_views {
            return Err(r.error("view count mismatch"));
        }
        let config = MvvaeConfig {
            view_names,
            view_dims,
            latent_dim,
            encoder_hidden,
            decoder_hidden,
            kl_weight,
            hidden_activation,
            include_prior_expert,
        };
        let mut views = Vec::with_capacity(n_views);
        for m in 0..n_views {
            let tag = r.expect("view")?;
            if tag.first().and_then(|t| t.parse::<usize>().ok()) != Some(m) {
                return Err(r.error(format!("expected view {m}")));
            }
            views.push(ViewNets {
                encoder_mean: read_mlp(&mut r)?,
                encoder_log_var: read_mlp(&mut r)?,
                decoder: read_mlp(&mut r)?,
            });
        }
        Self::from_parts(config, views)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_checkpoint()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_checkpoint(&text)
    }
}


fn row_gaussian(enc: &EncodedView, i: usize) -> Result<DiagGaussian> {
    DiagGaussian::clamped(
        enc.mean.row(i).iter().copied().collect(),
        enc.log_var_raw.row(i).iter().copied().collect(),
    )
}

impl FlatParams for MvvaeModel {
    fn n_params(&self) -> usize {
        self.views
            .iter()
            .flat_map(|v| v.nets())
            .map(FlatParams::n_params)
            .sum()
    }

    fn get(&self, mut i: usize) -> f64 {
        for net in self.views.iter().flat_map(|v| v.nets()) {
            let k = net.n_params();
            if i < k {
                return net.get(i);
            }
            i -= k;
        }
        panic!("parameter index out of range");
    }

    fn set(&mut self, mut i: usize, v: f64) {
        for net in self.views.iter_mut().flat_map(|v| v.nets_mut()) {
            let k = net.n_params();
            if i < k {
                net.set(i, v);
                return;
            }
            i -= k;
        }
        panic!("parameter index out of range");
    }
}

fn hide_views(mask: &mut [Vec<bool>], p: f64, rng: &mut Rng) {
    for row in mask {
        let available: Vec<usize> = (0..row.len()).filter(|&m| row[m]).collect();
        if available.len() < 2 {
            continue;
        }
        let keep: Vec<bool> = available.iter().map(|_| !rng.random_bool(p)).collect();
        let rescue = available[rng.random_range(0..available.len())];
        for (&m, &k) in available.iter().zip(&keep) {
            row[m] = k;
        }
        if !keep.contains(&true) {
            row[rescue] = true;
        }
    }
}

/// Minibatch Adam on the negative ELBO. Deterministic given `cfg.seed`:
/// shuffling and noise come from independent derived streams.
pub fn train(
    mut model: MvvaeModel,
    data: &MultiViewDataset,
    cfg: &TrainConfig,
) -> Result<(MvvaeModel, TrainHistory)> {
    ensure_len("dataset views", model.config.n_views(), data.n_views())?;
    for (m, d) in data.view_dims().into_iter().enumerate() {
        ensure_len("dataset view width", model.config.view_dims[m], d)?;
    }
    if cfg.batch_size == 0 || cfg.batch_size > data.len() {
        return Err(Error::invalid(format!(
            "batch_size {} must be in 1..={}",
            cfg.batch_size,
            data.len()
        )));
    }
    if cfg.latent_samples == 0 {
        return Err(Error::invalid("latent_samples must be at least 1"));
    }
    if !(0.0..1.0).contains(&cfg.view_dropout) {
        return Err(Error::invalid("view_dropout must lie in [0, 1)"));
    }
    for (i, p) in data.presence.iter().enumerate() {
        if !p.iter().any(|&b| b) {
            return Err(Error::invalid(format!(
                "subject '{}' has no available view",
                data.subject_ids[i]
            )));
        }
    }
    for (m, v) in data.views.iter().enumerate() {
        let rows: Vec<bool> = data.presence.iter().map(|p| p[m]).collect();
        model.check_unit_range(m, &v.data, Some(&rows))?;
    }

    let mut optimizers = model
        .views
        .iter()
        .flat_map(|v| v.nets())
        .map(|net| OptimizerState::new(net, cfg.optimizer))
        .collect::<Result<Vec<_>>>()?;
    let mut shuffle_rng = seed::rng_for(cfg.seed, "shuffle");
    let mut eps_rng = seed::rng_for(cfg.seed, "eps");
    let mut dropout_rng = seed::rng_for(cfg.seed, "view-dropout");
    let n = data.len();
    let dim = model.config.latent_dim;
    let mut history = TrainHistory::default();
    let mut order: Vec<usize> = (0..n).collect();

    for epoch in 0..cfg.epochs {
        if cfg.shuffle {
            order.shuffle(&mut shuffle_rng);
        }
        let (mut tot, mut rec, mut kl) = (0.0, 0.0, 0.0);
        for (b, rows) in order.chunks(cfg.batch_size).enumerate() {
            let mut batch = data.batch(rows);
            if cfg.view_dropout > 0.0 && model.config.n_views() > 1 {
                hide_views(&mut batch.mask, cfg.view_dropout, &mut dropout_rng);
            }
            let mut terms = ElboTerms {
                total: 0.0,
                recon: 0.0,
                kl: 0.0,
            };
            let mut grads: Option<MvvaeModel> = None;
            for _ in 0..cfg.latent_samples {
                let eps = draw_eps(&mut eps_rng, rows.len(), dim);
                let (t, g) = model.loss_and_grads(&batch, &eps)?;
                if !(t.total.is_finite() && g.is_finite()) {
                    return Err(Error::numerical(format!(
                        "non-finite loss or gradient at epoch {} batch {}",
                        epoch + 1,
                        b + 1
                    )));
                }
                terms.total += t.total;
                terms.recon += t.recon;
                terms.kl += t.kl;
                match grads.as_mut() {
                    None => grads = Some(g),
                    Some(acc) => {
                        for (a, g) in acc.views.iter_mut().zip(&g.views) {
                            for (an, gn) in a.nets_mut().into_iter().zip(g.nets()) {
                                an.add_scaled(gn, 1.0);
                            }
                        }
                    }
                }
            }
            let mut grads = grads.expect("at least one sample");
            if cfg.latent_samples > 1 {
                let k = cfg.latent_samples as f64;
                terms.total /= k;
                terms.recon /= k;
                terms.kl /= k;
                for v in &mut grads.views {
                    for net in v.nets_mut() {
                        let copy = net.clone();
                        net.add_scaled(&copy, 1.0 / k - 1.0);
                    }
                }
            }
            let nets = model.views.iter_mut().flat_map(|v| v.nets_mut());
            let gnets = grads.views.iter().flat_map(|v| v.nets());
            for ((net, g), opt) in nets.zip(gnets).zip(optimizers.iter_mut()) {
                adam_step(net, g, opt).map_err(|e| {
                    Error::numerical(format!("epoch {} batch {}: {e}", epoch + 1, b + 1))
                })?;
            }
            let w = rows.len() as f64;
            tot += terms.total * w;
            rec += terms.recon * w;
            kl += terms.kl * w;
        }
        history.total.push(tot / n as f64);
        history.recon.push(rec / n as f64);
        history.kl.push(kl / n as f64);
    }
    Ok((model, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussians::poe_fuse;

    fn cfg(dims: &[usize], latent: usize, hidden: &[usize]) -> MvvaeConfig {
        MvvaeConfig {
            view_names: (0..dims.len()).map(|m| format!("v{m}")).collect(),
            view_dims: dims.to_vec(),
            latent_dim: latent,
            encoder_hidden: hidden.to_vec(),
            decoder_hidden: hidden.to_vec(),
            kl_weight: 1.0,
            hidden_activation: HiddenActivation::Relu,
            include_prior_expert: false,
        }
    }

    fn scalar(mean: f64, lv: f64) -> DiagGaussian {
        DiagGaussian::new(vec![mean], vec![lv]).unwrap()
    }

    #[test]
    fn zero_encoders_give_standard_normal() {
        let model = MvvaeModel::zeros(cfg(&[3], 2, &[4])).unwrap();
        let x = DMatrix::from_row_slice(2, 3, &[0.1, 0.5, 0.9, 1.0, 0.0, 0.3]);
        for g in model.encode_view(0, &x).unwrap() {
            assert_eq!(g, DiagGaussian::standard(2));
        }
        let batch = MultiViewBatch {
            views: vec![x],
            mask: vec![vec![true]; 2],
        };
        let z = model.extract_latents(&batch).unwrap();
        assert!(z.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn identical_rows_encode_identically() {
        let model = MvvaeModel::new(cfg(&[3], 2, &[4]), 1).unwrap();
        let x = DMatrix::from_row_slice(2, 3, &[0.2, 0.4, 0.6, 0.2, 0.4, 0.6]);
        let g = model.encode_view(0, &x).unwrap();
        assert_eq!(g[0], g[1]);
    }

    #[test]
    fn encode_rejects_out_of_range_naming_column() {
        let model = MvvaeModel::new(cfg(&[3], 2, &[]), 1).unwrap();
        let x = DMatrix::from_row_slice(1, 3, &[0.2, 1.4, 0.6]);
        let err = model.encode_view(0, &x).unwrap_err().to_string();
        assert!(err.contains("column 1"), "{err}");
        assert!(model.encode_view(2, &x).is_err());
    }

    #[test]
    fn zero_decoder_outputs_one_half() {
        let model = MvvaeModel::zeros(cfg(&[4], 2, &[3])).unwrap();
        let out = model.decode_view(0, &DMatrix::from_row_slice(1, 2, &[5.0, -3.0])).unwrap();
        assert!(out.iter().all(|v| *v == 0.5));
    }

    #[test]
    fn fuse_posterior_masks() {
        let per_view = vec![(0, scalar(0.0, 0.0)), (1, scalar(2.0, 0.0)), (2, scalar(-4.0, 1.0))];
        let one = fuse_posterior(&per_view, &[false, true, false]).unwrap();
        assert_eq!(one, per_view[1].1);
        let two = fuse_posterior(&per_view[..2], &[true, true, true]).unwrap();
        assert!((two.mean()[0] - 1.0).abs() < 1e-15);
        assert!((two.variances()[0] - 0.5).abs() < 1e-15);
        let dropped = fuse_posterior(&per_view, &[true, false, true]).unwrap();
        let direct = poe_fuse(&[per_view[0].1.clone(), per_view[2].1.clone()]).unwrap();
        assert_eq!(dropped, direct);
        assert!(fuse_posterior(&per_view, &[false, false, false]).is_err());
    }

    #[test]
    fn bce_examples() {
        assert_eq!(bce(&[0.0, 1.0, 1.0], &[0.0, 1.0, 1.0]), 0.0);
        let half = bce(&[0.5; 6], &[0.5; 6]);
        assert!((half - 6.0 * 2f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn zero_epochs_leave_model_unchanged() {
        let model = MvvaeModel::new(cfg(&[2], 1, &[2]), 3).unwrap();
        let ds = MultiViewDataset::new(
            vec![crate::pipeline::dataset::View {
                name: "v0".into(),
                feature_names: vec!["a".into(), "b".into()],
                data: DMatrix::from_row_slice(2, 2, &[0.1, 0.2, 0.3, 0.4]),
            }],
            vec![vec![true]; 2],
            vec![1.0, 2.0],
            vec!["s1".into(), "s2".into()],
        )
        .unwrap();
        let tc = TrainConfig {
            epochs: 0,
            batch_size: 2,
            ..TrainConfig::default()
        };
        let (trained, hist) = train(model.clone(), &ds, &tc).unwrap();
        assert_eq!(trained, model);
        assert!(hist.is_empty());
        let bad = TrainConfig {
            batch_size: 3,
            ..tc
        };
        assert!(train(model, &ds, &bad).is_err());
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let mut c = cfg(&[3, 2], 2, &[4, 3]);
        c.kl_weight = 0.37;
        c.include_prior_expert = true;
        let model = MvvaeModel::new(c, 21).unwrap();
        let back = MvvaeModel::from_checkpoint(&model.to_checkpoint()).unwrap();
        assert_eq!(back, model);
        for i in 0..model.n_params() {
            assert_eq!(model.get(i).to_bits(), back.get(i).to_bits());
        }
    }
}
