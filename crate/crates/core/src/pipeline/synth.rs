//! Synthetic multi-view cohort with known structure.
//!
//! Latent factors drive two feature views through fixed random one-hidden-layer
//! tanh maps; each view sees a contiguous slice of the factors. Genotypes are
//! independent binomial draws, a handful of SNPs are causal, and the
//! phenotype is a linear function of all factors plus the causal SNPs, a small
//! covariate effect and noise, mapped onto a positive load-like range.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::dataset::{MultiViewDataset, View};
use crate::error::{Error, Result};
use crate::genetics::{GenotypeMatrix, SnpMeta};
use crate::seed::{rng_for, Rng};

/// Name given to the view built from selected SNPs.
pub const GENETIC_VIEW: &str = "wgs";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthViewSpec {
    pub name: String,
    pub dim: usize,
    /// Fractions `[lo, hi)` of the factor list this view observes.
    pub factor_range: (f64, f64),
    /// Noise standard deviation relative to each feature's signal spread.
    pub noise: f64,
    /// Probability that a subject lacks the view entirely.
    pub missing_rate: f64,
}

impl Default for SynthViewSpec {
    fn default() -> Self {
        Self {
            name: "view".into(),
            dim: 10,
            factor_range: (0.0, 1.0),
            noise: 0.5,
            missing_rate: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub n_subjects: usize,
    pub n_factors: usize,
    pub views: Vec<SynthViewSpec>,
    /// Width of the hidden layer of each view's generating map.
    pub view_hidden: usize,
    pub n_snps: usize,
    pub n_causal: usize,
    pub genotype_missing_rate: f64,
    /// Shares of phenotype variance (before the affine map); the remainder is noise.
    pub factor_share: f64,
    pub genetic_share: f64,
    pub covariate_share: f64,
    pub phenotype_center: f64,
    pub phenotype_scale: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_subjects: 1000,
            n_factors: 8,
            views: vec![
                SynthViewSpec {
                    name: "dxa".into(),
                    dim: 205,
                    factor_range: (0.0, 0.75),
                    ..SynthViewSpec::default()
                },
                SynthViewSpec {
                    name: "clinical".into(),
                    dim: 102,
                    factor_range: (0.5, 1.0),
                    ..SynthViewSpec::default()
                },
            ],
            view_hidden: 16,
            n_snps: 1000,
            n_causal: 20,
            genotype_missing_rate: 0.0,
            factor_share: 0.75,
            genetic_share: 0.1,
            covariate_share: 0.05,
            phenotype_center: 5000.0,
            phenotype_scale: 700.0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.n_subjects < 2 || self.n_factors == 0 || self.view_hidden == 0 {
            return bad("n_subjects >= 2, n_factors >= 1 and view_hidden >= 1 are required".into());
        }
        if self.n_causal > self.n_snps {
            return bad(format!("n_causal {} exceeds n_snps {}", self.n_causal, self.n_snps));
        }
        let shares = [self.factor_share, self.genetic_share, self.covariate_share];
        if shares.iter().any(|s| !(0.0..=1.0).contains(s)) || shares.iter().sum::<f64>() > 1.0 + 1e-12 {
            return bad("variance shares must be in [0, 1] and sum to at most 1".into());
        }
        if self.genetic_share > 0.0 && self.n_causal == 0 {
            return bad("genetic_share > 0 needs at least one causal SNP".into());
        }
        if !(0.0..1.0).contains(&self.genotype_missing_rate) {
            return bad("genotype_missing_rate must be in [0, 1)".into());
        }
        if self.views.is_empty() {
            return bad("at least one feature view is required".into());
        }
        for v in &self.views {
            if v.dim == 0 || v.name.is_empty() || v.name == GENETIC_VIEW {
                return bad(format!("view '{}' needs a positive dim and a name other than '{GENETIC_VIEW}'", v.name));
            }
            let (lo, hi) = v.factor_range;
            if !(0.0 <= lo && lo < hi && hi <= 1.0) || self.factor_slice(v).is_empty() {
                return bad(format!("view '{}' has an empty factor range", v.name));
            }
            if !(v.noise >= 0.0) || !(0.0..1.0).contains(&v.missing_rate) {
                return bad(format!("view '{}' has invalid noise or missing rate", v.name));
            }
        }
        if !(self.phenotype_scale > 0.0) {
            return bad("phenotype_scale must be positive".into());
        }
        Ok(())
    }

    fn factor_slice(&self, v: &SynthViewSpec) -> std::ops::Range<usize> {
        let k = self.n_factors as f64;
        let lo = (v.factor_range.0 * k).round() as usize;
        let hi = ((v.factor_range.1 * k).round() as usize).min(self.n_factors);
        lo..hi.max(lo)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CausalSnp {
    pub id: String,
    pub maf: f64,
    /// Phenotype effect per standardized genotype unit, before the affine map.
    pub effect: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewTruth {
    pub name: String,
    pub factors: Vec<usize>,
    /// Share of phenotype variance carried by the signal this view observes.
    pub phenotype_share: f64,
    /// Feature signal-to-noise variance ratio; absent for the genetic view
    /// and for noise-free views.
    pub feature_snr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthTruth {
    pub seed: u64,
    pub spec: SynthSpec,
    pub factor_weights: Vec<f64>,
    pub causal_snps: Vec<CausalSnp>,
    /// Every feature view plus the genetic view.
    pub views: Vec<ViewTruth>,
    pub least_informative_view: String,
}

#[derive(Debug, Clone)]
pub struct SynthCohort {
    /// Feature views and phenotype (the genetic view is not included).
    pub dataset: MultiViewDataset,
    pub genotypes: GenotypeMatrix,
    pub covariate_names: Vec<String>,
    pub covariates: DMatrix<f64>,
    pub truth: SynthTruth,
}

fn normal(rng: &mut Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn normal_matrix(rng: &mut Rng, rows: usize, cols: usize, scale: f64) -> DMatrix<f64> {
    let vals: Vec<f64> = (0..rows * cols).map(|_| normal(rng) * scale).collect();
    DMatrix::from_row_slice(rows, cols, &vals)
}

fn sign(rng: &mut Rng) -> f64 {
    if rng.random_bool(0.5) {
        1.0
    } else {
        -1.0
    }
}

pub fn synth_generate(spec: &SynthSpec, seed: u64) -> Result<SynthCohort> {
    spec.validate()?;
    let n = spec.n_subjects;
    let k = spec.n_factors;
    let width = (n.max(2) - 1).to_string().len().max(4);
    let subject_ids: Vec<String> = (0..n).map(|i| format!("S{i:0width$}")).collect();

    let factors = normal_matrix(&mut rng_for(seed, "synth-factors"), n, k, 1.0);

    let mut views = Vec::with_capacity(spec.views.len());
    let mut presence = vec![Vec::with_capacity(spec.views.len()); n];
    let mut view_truth = Vec::new();
    for (m, vs) in spec.views.iter().enumerate() {
        let mut rng = rng_for(seed, &format!("synth-view-{m}"));
        let slice = spec.factor_slice(vs);
        let ks = slice.len();
        let w1 = normal_matrix(&mut rng, ks, spec.view_hidden, 1.0 / (ks as f64).sqrt());
        let b1: Vec<f64> = (0..spec.view_hidden).map(|_| rng.random_range(-0.5..0.5)).collect();
        let w2 = normal_matrix(&mut rng, spec.view_hidden, vs.dim, 1.0 / (spec.view_hidden as f64).sqrt());
        let offsets: Vec<f64> = (0..vs.dim).map(|_| rng.random_range(-5.0..5.0)).collect();

        let mut hidden = factors.columns(slice.start, ks) * &w1;
        for mut row in hidden.row_iter_mut() {
            for (h, b) in row.iter_mut().zip(&b1) {
                *h = (*h + b).tanh();
            }
        }
        let signal = hidden * w2;
        let mut data = signal.clone();
        let mut noise_rng = rng_for(seed, &format!("synth-view-noise-{m}"));
        let (mut sig_var, mut noise_var) = (0.0, 0.0);
        for j in 0..vs.dim {
            let col = signal.column(j);
            let mean = col.mean();
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
            let sd = var.sqrt();
            sig_var += var;
            noise_var += (vs.noise * sd).powi(2);
            for i in 0..n {
                data[(i, j)] += vs.noise * sd * normal(&mut noise_rng) + offsets[j];
            }
        }
        let mut miss_rng = rng_for(seed, &format!("synth-view-missing-{m}"));
        for p in presence.iter_mut() {
            p.push(!(vs.missing_rate > 0.0 && miss_rng.random_bool(vs.missing_rate)));
        }
        views.push(View {
            name: vs.name.clone(),
            feature_names: (0..vs.dim).map(|j| format!("{}_{j:03}", vs.name)).collect(),
            data,
        });
        view_truth.push(ViewTruth {
            name: vs.name.clone(),
            factors: slice.clone().collect(),
            phenotype_share: spec.factor_share * ks as f64 / k as f64,
            feature_snr: (noise_var > 0.0).then(|| sig_var / noise_var),
        });
    }
    // a subject must keep at least one feature view; restore the first one
    for (i, p) in presence.iter_mut().enumerate() {
        if !p.iter().any(|&b| b) {
            p[0] = true;
        }
        for (m, v) in views.iter_mut().enumerate() {
            if !p[m] {
                v.data.row_mut(i).fill(0.0);
            }
        }
    }

    // genotypes
    let mut grng = rng_for(seed, "synth-genotypes");
    let mafs: Vec<f64> = (0..spec.n_snps).map(|_| grng.random_range(0.05..=0.5)).collect();
    let mut rows: Vec<Vec<Option<u8>>> = vec![Vec::with_capacity(spec.n_snps); n];
    for row in rows.iter_mut() {
        for &p in &mafs {
            let g = u8::from(grng.random_bool(p)) + u8::from(grng.random_bool(p));
            row.push(Some(g));
        }
    }
    if spec.genotype_missing_rate > 0.0 {
        let mut mrng = rng_for(seed, "synth-genotype-missing");
        for row in rows.iter_mut() {
            for g in row.iter_mut() {
                if mrng.random_bool(spec.genotype_missing_rate) {
                    *g = None;
                }
            }
        }
    }
    let n_chrom = 22usize;
    let snp_meta: Vec<SnpMeta> = (0..spec.n_snps)
        .map(|s| {
            let chrom = 1 + s * n_chrom / spec.n_snps.max(1);
            let pos = 10_000 + 1_000 * s as u64;
            SnpMeta::from_id(&format!("{chrom}:{pos}"), s as u64)
        })
        .collect();
    let genotypes = GenotypeMatrix::from_rows(&rows, snp_meta, subject_ids.clone())?;

    // phenotype
    let mut prng = rng_for(seed, "synth-phenotype");
    let factor_weights: Vec<f64> = (0..k)
        .map(|_| sign(&mut prng) * (spec.factor_share / k as f64).sqrt())
        .collect();
    let mut causal_idx: Vec<usize> = (0..spec.n_snps).collect();
    causal_idx.shuffle(&mut prng);
    causal_idx.truncate(spec.n_causal);
    causal_idx.sort_unstable();
    let causal_snps: Vec<CausalSnp> = causal_idx
        .iter()
        .map(|&s| CausalSnp {
            id: genotypes.snp_meta[s].id.clone(),
            maf: mafs[s],
            effect: sign(&mut prng) * (spec.genetic_share / spec.n_causal.max(1) as f64).sqrt(),
        })
        .collect();

    let mut crng = rng_for(seed, "synth-covariates");
    let covariate_names = vec!["age".to_string(), "weight".to_string(), "height".to_string()];
    let mut covariates = DMatrix::zeros(n, 3);
    for i in 0..n {
        covariates[(i, 0)] = crng.random_range(50.0..90.0);
        covariates[(i, 1)] = 70.0 + 12.0 * normal(&mut crng);
        covariates[(i, 2)] = 170.0 + 9.0 * normal(&mut crng);
    }
    // standardized age, Var(U(50, 90)) = 40² / 12
    let age_sd = 40.0 / 12f64.sqrt();

    let noise_share = (1.0 - spec.factor_share - spec.genetic_share - spec.covariate_share).max(0.0);
    let mut nrng = rng_for(seed, "synth-phenotype-noise");
    let phenotype: Vec<f64> = (0..n)
        .map(|i| {
            let mut y0: f64 = (0..k).map(|j| factor_weights[j] * factors[(i, j)]).sum();
            for (c, &s) in causal_snps.iter().zip(&causal_idx) {
                let p = mafs[s];
                let g = rows[i][s].map_or(2.0 * p, f64::from);
                y0 += c.effect * (g - 2.0 * p) / (2.0 * p * (1.0 - p)).sqrt();
            }
            y0 += spec.covariate_share.sqrt() * (covariates[(i, 0)] - 70.0) / age_sd;
            y0 += noise_share.sqrt() * normal(&mut nrng);
            spec.phenotype_center + spec.phenotype_scale * y0
        })
        .collect();

    view_truth.push(ViewTruth {
        name: GENETIC_VIEW.into(),
        factors: Vec::new(),
        phenotype_share: spec.genetic_share,
        feature_snr: None,
    });
    let least_informative_view = view_truth
        .iter()
        .min_by(|a, b| a.phenotype_share.total_cmp(&b.phenotype_share))
        .map(|v| v.name.clone())
        .unwrap_or_default();

    let dataset = MultiViewDataset::new(views, presence, phenotype, subject_ids)?;
    Ok(SynthCohort {
        dataset,
        genotypes,
        covariate_names,
        covariates,
        truth: SynthTruth {
            seed,
            spec: spec.clone(),
            factor_weights,
            causal_snps,
            views: view_truth,
            least_informative_view,
        },
    })
}

impl SynthCohort {
    /// Writes `<view>.csv` per feature view, `genotypes.csv`, `phenotype.csv`,
    /// `covariates.csv` and `truth.json`; returns the paths written.
    pub fn write_to(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let ds = &self.dataset;
        let mut files = Vec::new();
        let mut put = |name: &str, body: String| -> Result<()> {
            let p = dir.join(name);
            std::fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
            files.push(p);
            Ok(())
        };
        for (m, v) in ds.views.iter().enumerate() {
            let mut out = String::from("subject_id");
            for f in &v.feature_names {
                let _ = write!(out, ",{f}");
            }
            out.push('\n');
            for (i, id) in ds.subject_ids.iter().enumerate() {
                out.push_str(id);
                for j in 0..v.dim() {
                    if ds.presence[i][m] {
                        let _ = write!(out, ",{}", v.data[(i, j)]);
                    } else {
                        out.push_str(",NA");
                    }
                }
                out.push('\n');
            }
            put(&format!("{}.csv", v.name), out)?;
        }
        put("genotypes.csv", self.genotypes.to_csv())?;

        let mut pheno = String::from("subject_id,value\n");
        for (id, y) in ds.subject_ids.iter().zip(&ds.phenotype) {
            let _ = writeln!(pheno, "{id},{y}");
        }
        put("phenotype.csv", pheno)?;

        let mut cov = String::from("subject_id");
        for c in &self.covariate_names {
            let _ = write!(cov, ",{c}");
        }
        cov.push('\n');
        for (i, id) in ds.subject_ids.iter().enumerate() {
            cov.push_str(id);
            for c in 0..self.covariates.ncols() {
                let _ = write!(cov, ",{}", self.covariates[(i, c)]);
            }
            cov.push('\n');
        }
        put("covariates.csv", cov)?;
        put("truth.json", serde_json::to_string_pretty(&self.truth)? + "\n")?;
        Ok(files)
    }
}
