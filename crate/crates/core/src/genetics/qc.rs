use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::GenotypeMatrix;
use crate::error::{Error, Result};

/// Relative slack when comparing heterozygote-count probabilities against the
/// observed one, so that ties are not split by rounding.
const HWE_TIE_TOL: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QcConfig {
    pub snp_missing_max: f64,
    pub indiv_missing_max: f64,
    pub maf_min: f64,
    pub hwe_p_min: f64,
}

impl Default for QcConfig {
    fn default() -> Self {
        Self {
            snp_missing_max: 0.05,
            indiv_missing_max: 0.20,
            maf_min: 0.01,
            hwe_p_min: 1e-4,
        }
    }
}

impl QcConfig {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            self.snp_missing_max,
            self.indiv_missing_max,
            self.maf_min,
            self.hwe_p_min,
        ];
        if fields.iter().all(|v| (0.0..=1.0).contains(v)) {
            Ok(())
        } else {
            Err(Error::invalid(format!("QC thresholds must lie in [0, 1]: {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum QcReason {
    IndivMissing,
    MissingRate,
    Maf,
    Hwe,
}

impl QcReason {
    pub fn as_str(self) -> &'static str {
        match self {
            QcReason::IndivMissing => "indiv_missing",
            QcReason::MissingRate => "missing_rate",
            QcReason::Maf => "maf",
            QcReason::Hwe => "hwe",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct QcReport {
    pub removed_subjects: Vec<(String, QcReason)>,
    pub removed_snps: Vec<(String, QcReason)>,
}

impl QcReport {
    pub fn count(&self, reason: QcReason) -> usize {
        self.removed_subjects
            .iter()
            .chain(&self.removed_snps)
            .filter(|(_, r)| *r == reason)
            .count()
    }
}

#[derive(Debug, Clone)]
pub struct QcOutcome {
    pub genotypes: GenotypeMatrix,
    /// Retained genotypes as reals with missing entries set to the SNP mean.
    pub dosages: DMatrix<f64>,
    /// Indices into the input matrix of the retained subjects.
    pub kept_subjects: Vec<usize>,
    pub report: QcReport,
}

/// Folded allele frequency `min(f, 1 - f)` over non-missing entries.
pub fn minor_allele_frequency(column: &[Option<u8>]) -> Result<f64> {
    let (sum, count) = column
        .iter()
        .flatten()
        .fold((0u64, 0u64), |(s, c), g| (s + u64::from(*g), c + 1));
    if count == 0 {
        return Err(Error::data("minor allele frequency of an all-missing SNP"));
    }
    let f = sum as f64 / (2 * count) as f64;
    Ok(f.min(1.0 - f))
}

/// Two-sided Hardy-Weinberg exact test: the total probability, under the
/// conditional distribution of heterozygote counts given the allele counts,
/// of all configurations no more probable than the observed one.
pub fn hwe_exact_test(n_hom1: u64, n_het: u64, n_hom2: u64) -> f64 {
    let n = n_hom1 + n_het + n_hom2;
    if n == 0 {
        return 1.0;
    }
    let hom_rare = n_hom1.min(n_hom2);
    let rare = 2 * hom_rare + n_het;
    if rare == 0 {
        return 1.0;
    }
    let rare_u = rare as usize;
    let mut probs = vec![0.0f64; rare_u + 1];

    // start the recurrences near the mode so nothing overflows
    let mut mid = rare * (2 * n - rare) / (2 * n);
    if mid % 2 != rare % 2 {
        mid += 1;
    }
    probs[mid as usize] = 1.0;
    let mut sum = 1.0;

    let mut cur_hom_r = (rare - mid) / 2;
    let mut cur_hom_c = n - mid - cur_hom_r;
    let mut het = mid;
    while het >= 2 {
        let p = probs[het as usize] * (het * (het - 1)) as f64
            / (4.0 * (cur_hom_r + 1) as f64 * (cur_hom_c + 1) as f64);
        probs[(het - 2) as usize] = p;
        sum += p;
        cur_hom_r += 1;
        cur_hom_c += 1;
        het -= 2;
    }

    let mut cur_hom_r = (rare - mid) / 2;
    let mut cur_hom_c = n - mid - cur_hom_r;
    let mut het = mid;
    while het + 2 <= rare {
        let p = probs[het as usize] * 4.0 * cur_hom_r as f64 * cur_hom_c as f64
            / ((het + 2) as f64 * (het + 1) as f64);
        probs[(het + 2) as usize] = p;
        sum += p;
        cur_hom_r -= 1;
        cur_hom_c -= 1;
        het += 2;
    }

    let observed = probs[n_het as usize];
    let cutoff = observed * (1.0 + HWE_TIE_TOL);
    // entries of the wrong parity are zero and drop out of the sum
    let tail: f64 = probs.iter().filter(|&&p| p <= cutoff).sum();
    (tail / sum).clamp(f64::MIN_POSITIVE, 1.0)
}

/// Removes subjects by missing rate first, then SNPs by missing rate, MAF and
/// HWE (first failing check is the recorded reason), then mean-imputes the
/// remaining missing genotypes.
pub fn qc_filter(g: &GenotypeMatrix, cfg: &QcConfig) -> Result<QcOutcome> {
    cfg.validate()?;
    let n = g.n_subjects();
    let s = g.n_snps();
    let mut report = QcReport::default();

    let mut kept_subjects = Vec::with_capacity(n);
    for i in 0..n {
        let missing = (0..s).filter(|&j| g.get(i, j).is_none()).count();
        let rate = if s == 0 { 0.0 } else { missing as f64 / s as f64 };
        if rate > cfg.indiv_missing_max {
            report
                .removed_subjects
                .push((g.subject_ids[i].clone(), QcReason::IndivMissing));
        } else {
            kept_subjects.push(i);
        }
    }
    if kept_subjects.is_empty() {
        return Err(Error::data("QC removed every subject"));
    }

    let mut kept_snps = Vec::with_capacity(s);
    for j in 0..s {
        let col: Vec<Option<u8>> = kept_subjects.iter().map(|&i| g.get(i, j)).collect();
        match snp_failure(&col, cfg) {
            Some(reason) => report.removed_snps.push((g.snp_meta[j].id.clone(), reason)),
            None => kept_snps.push(j),
        }
    }
    if kept_snps.is_empty() {
        return Err(Error::data("QC removed every SNP"));
    }

    let genotypes = g.select(&kept_subjects, &kept_snps);
    let nk = genotypes.n_subjects();
    let mut dosages = DMatrix::zeros(nk, genotypes.n_snps());
    for j in 0..genotypes.n_snps() {
        let col = genotypes.column(j);
        let (sum, cnt) = col
            .iter()
            .flatten()
            .fold((0.0, 0usize), |(s, c), v| (s + f64::from(*v), c + 1));
        let mean = sum / cnt as f64;
        for (i, v) in col.iter().enumerate() {
            dosages[(i, j)] = v.map_or(mean, f64::from);
        }
    }
    Ok(QcOutcome {
        genotypes,
        dosages,
        kept_subjects,
        report,
    })
}

fn snp_failure(col: &[Option<u8>], cfg: &QcConfig) -> Option<QcReason> {
    let missing = col.iter().filter(|v| v.is_none()).count();
    if missing as f64 / col.len() as f64 > cfg.snp_missing_max {
        return Some(QcReason::MissingRate);
    }
    let maf = match minor_allele_frequency(col) {
        Ok(m) => m,
        Err(_) => return Some(QcReason::MissingRate),
    };
    if maf < cfg.maf_min {
        return Some(QcReason::Maf);
    }
    let mut counts = [0u64; 3];
    for g in col.iter().flatten() {
        counts[*g as usize] += 1;
    }
    if hwe_exact_test(counts[0], counts[1], counts[2]) < cfg.hwe_p_min {
        return Some(QcReason::Hwe);
    }
    None
}
