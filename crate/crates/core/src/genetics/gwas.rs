use std::fmt::Write as _;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::pca::genotype_pca;
use super::qc::{qc_filter, QcConfig, QcReport};
use super::GenotypeMatrix;
use crate::error::{Error, Result};
use crate::linalg::CovariateProjector;

/// A SNP whose covariate-adjusted dosages keep less than this fraction of
/// their centered sum of squares is treated as collinear with the covariates.
const DEGENERATE_REL_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreTest {
    pub u: f64,
    pub v: f64,
    pub t_score: f64,
    pub p_value: f64,
}

/// Upper tail of the chi-square distribution with one degree of freedom.
pub fn chi2_1_upper_tail(t: f64) -> f64 {
    if t <= 0.0 {
        return 1.0;
    }
    libm::erfc((t / 2.0).sqrt()).clamp(f64::MIN_POSITIVE, 1.0)
}

/// Score test of one SNP given phenotype and genotype residuals against the
/// same covariates.
pub fn score_test(y_resid: &[f64], g_resid: &[f64]) -> Result<ScoreTest> {
    crate::error::ensure_len("score test", y_resid.len(), g_resid.len())?;
    let n = y_resid.len();
    if n == 0 {
        return Err(Error::invalid("score test on zero subjects"));
    }
    let u: f64 = y_resid.iter().zip(g_resid).map(|(y, g)| y * g).sum();
    let syy: f64 = y_resid.iter().map(|y| y * y).sum();
    let sgg: f64 = g_resid.iter().map(|g| g * g).sum();
    let v = syy * sgg / n as f64;
    if !(v > 0.0) || !v.is_finite() {
        return Err(Error::data("degenerate_snp"));
    }
    let t_score = u * u / v;
    Ok(ScoreTest {
        u,
        v,
        t_score,
        p_value: chi2_1_upper_tail(t_score),
    })
}

/// `(v - mean) / sd` with the `N - 1` standard deviation.
pub fn zscore(values: &[f64]) -> Result<Vec<f64>> {
    let n = values.len();
    if n < 2 {
        return Err(Error::invalid("z-score needs at least two values"));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("z-score input contains non-finite values"));
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    if var <= 0.0 {
        return Err(Error::data("z-score of a constant vector"));
    }
    let sd = var.sqrt();
    Ok(values.iter().map(|v| (v - mean) / sd).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GwasConfig {
    pub qc: QcConfig,
    pub threshold: f64,
    pub n_pcs: usize,
    /// When set, select the `k` smallest p-values instead of thresholding.
    pub select_top: Option<usize>,
}

impl Default for GwasConfig {
    fn default() -> Self {
        Self {
            qc: QcConfig::default(),
            threshold: 1e-5,
            n_pcs: 10,
            select_top: None,
        }
    }
}

impl GwasConfig {
    pub fn validate(&self) -> Result<()> {
        self.qc.validate()?;
        if !(self.threshold > 0.0 && self.threshold <= 1.0) {
            return Err(Error::Config(format!(
                "GWAS threshold must lie in (0, 1], got {}",
                self.threshold
            )));
        }
        if self.select_top == Some(0) {
            return Err(Error::Config("select_top must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GwasResult {
    pub snp_id: String,
    pub chrom: String,
    pub pos: u64,
    pub u: f64,
    pub v: f64,
    pub t_score: f64,
    pub p_value: f64,
    pub beta_hat: f64,
    pub selected: bool,
}

#[derive(Debug, Clone)]
pub struct GwasOutput {
    /// One row per tested SNP in (chromosome, position) order.
    pub results: Vec<GwasResult>,
    /// Selected SNP ids in (chromosome, position) order.
    pub selected: Vec<String>,
    /// SNPs that passed QC but had no variance left after adjustment.
    pub degenerate: Vec<String>,
    pub qc_report: QcReport,
    pub pca_excluded: Vec<String>,
    pub n_subjects: usize,
}

impl GwasOutput {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("snp_id,chrom,pos,U,V,t_score,p_value,beta_hat,selected\n");
        for r in &self.results {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{:.5e},{},{}",
                r.snp_id, r.chrom, r.pos, r.u, r.v, r.t_score, r.p_value, r.beta_hat, r.selected
            );
        }
        out
    }

    pub fn selected_text(&self) -> String {
        self.selected.iter().map(|id| format!("{id}\n")).collect()
    }
}

/// QC, ancestry PCs, covariate adjustment and a score test for every SNP.
///
/// `covariates` is N×C (C may be zero) aligned with the genotype rows; the
/// phenotype is expected to be z-scored already. The phenotype residual is
/// computed once and shared by all SNPs.
pub fn run_gwas(
    g: &GenotypeMatrix,
    phenotype: &[f64],
    covariates: &DMatrix<f64>,
    cfg: &GwasConfig,
) -> Result<GwasOutput> {
    cfg.validate()?;
    let n = g.n_subjects();
    crate::error::ensure_len("gwas phenotype", n, phenotype.len())?;
    crate::error::ensure_len("gwas covariate rows", n, covariates.nrows())?;
    if phenotype.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("phenotype contains non-finite values"));
    }

    let qc = qc_filter(g, &cfg.qc)?;
    let kept = &qc.kept_subjects;
    let y: Vec<f64> = kept.iter().map(|&i| phenotype[i]).collect();
    let snp_ids: Vec<String> = qc.genotypes.snp_meta.iter().map(|m| m.id.clone()).collect();
    let pca = genotype_pca(&qc.dosages, &snp_ids, cfg.n_pcs)?;

    let c = covariates.ncols();
    let nk = kept.len();
    let design = DMatrix::from_fn(nk, c + cfg.n_pcs, |i, j| {
        if j < c {
            covariates[(kept[i], j)]
        } else {
            pca.scores[(i, j - c)]
        }
    });
    let projector = CovariateProjector::new(&design)?;
    let y_resid = projector.residualize(&y)?;

    let tested: Vec<Result<Option<GwasResult>>> = (0..qc.genotypes.n_snps())
        .into_par_iter()
        .map(|j| {
            let col = qc.dosages.column(j);
            let mean = col.mean();
            let centered_ss: f64 = col.iter().map(|v| (v - mean).powi(2)).sum();
            let g_resid = projector.residualize(col.as_slice())?;
            let sgg: f64 = g_resid.iter().map(|v| v * v).sum();
            if sgg <= DEGENERATE_REL_TOL * centered_ss || centered_ss == 0.0 {
                return Ok(None);
            }
            let st = match score_test(&y_resid, &g_resid) {
                Ok(st) => st,
                Err(Error::Data(_)) => return Ok(None),
                Err(e) => return Err(e),
            };
            let meta = &qc.genotypes.snp_meta[j];
            Ok(Some(GwasResult {
                snp_id: meta.id.clone(),
                chrom: meta.chrom.clone(),
                pos: meta.pos,
                u: st.u,
                v: st.v,
                t_score: st.t_score,
                p_value: st.p_value,
                beta_hat: st.u / sgg,
                selected: false,
            }))
        })
        .collect();

    let mut results = Vec::with_capacity(tested.len());
    let mut result_snp = Vec::with_capacity(tested.len());
    let mut degenerate = Vec::new();
    for (j, r) in tested.into_iter().enumerate() {
        match r? {
            Some(res) => {
                results.push(res);
                result_snp.push(j);
            }
            None => degenerate.push(qc.genotypes.snp_meta[j].id.clone()),
        }
    }

    match cfg.select_top {
        Some(k) => {
            let mut order: Vec<usize> = (0..results.len()).collect();
            order.sort_by(|&a, &b| {
                results[a]
                    .p_value
                    .total_cmp(&results[b].p_value)
                    .then(a.cmp(&b))
            });
            for &i in order.iter().take(k) {
                results[i].selected = true;
            }
        }
        None => {
            for r in &mut results {
                r.selected = r.p_value < cfg.threshold;
            }
        }
    }

    let mut order: Vec<usize> = (0..results.len()).collect();
    let meta = &qc.genotypes.snp_meta;
    order.sort_by(|&a, &b| meta[result_snp[a]].genomic_cmp(&meta[result_snp[b]]));
    let results: Vec<GwasResult> = order.into_iter().map(|i| results[i].clone()).collect();
    let selected = results
        .iter()
        .filter(|r| r.selected)
        .map(|r| r.snp_id.clone())
        .collect();

    Ok(GwasOutput {
        results,
        selected,
        degenerate,
        qc_report: qc.report,
        pca_excluded: pca.excluded_snps,
        n_subjects: nk,
    })
}
