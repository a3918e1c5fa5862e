use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// A SNP whose post-imputation dosages are (numerically) constant.
const ZERO_VARIANCE_TOL: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct PcaResult {
    /// N×k component scores, strongest component first.
    pub scores: DMatrix<f64>,
    /// Sample variance of each score column.
    pub variances: Vec<f64>,
    /// SNP ids left out because they have no variance.
    pub excluded_snps: Vec<String>,
}

/// Principal-component scores of the column-standardized dosage matrix.
///
/// The eigenproblem is solved on whichever of the N×N or S×S Gram matrices is
/// smaller. Each component is signed so that its largest-magnitude SNP
/// loading is positive.
pub fn genotype_pca(dosages: &DMatrix<f64>, snp_ids: &[String], k: usize) -> Result<PcaResult> {
    crate::error::ensure_len("pca snp ids", dosages.ncols(), snp_ids.len())?;
    let n = dosages.nrows();
    if dosages.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("PCA input must be fully imputed and finite"));
    }
    if n < 2 {
        return Err(Error::invalid("PCA needs at least two subjects"));
    }

    let mut kept = Vec::new();
    let mut excluded_snps = Vec::new();
    let mut standardized: Vec<f64> = Vec::with_capacity(dosages.len());
    for (j, id) in snp_ids.iter().enumerate() {
        let col = dosages.column(j);
        let mean = col.mean();
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        if var <= ZERO_VARIANCE_TOL {
            excluded_snps.push(id.clone());
            continue;
        }
        let sd = var.sqrt();
        kept.push(j);
        standardized.extend(col.iter().map(|v| (v - mean) / sd));
    }
    let s = kept.len();
    if k == 0 {
        return Ok(PcaResult {
            scores: DMatrix::zeros(n, 0),
            variances: Vec::new(),
            excluded_snps,
        });
    }
    if k > n.min(s) {
        return Err(Error::invalid(format!(
            "requested {k} principal components but only {n} subjects and {s} usable SNPs"
        )));
    }
    let x = DMatrix::from_column_slice(n, s, &standardized);

    let mut loadings = top_loadings(&x, k, n <= s);
    for c in 0..k {
        let mut col = loadings.column_mut(c);
        let lead = col.iter().copied().fold(0.0f64, |best, v| if v.abs() > best.abs() { v } else { best });
        if lead < 0.0 {
            col.neg_mut();
        }
    }
    let scores = &x * &loadings;
    let variances = (0..k)
        .map(|c| scores.column(c).norm_squared() / (n - 1) as f64)
        .collect();
    Ok(PcaResult {
        scores,
        variances,
        excluded_snps,
    })
}

/// S×k leading right singular vectors of `x`, from the eigenvectors of
/// either `x xᵀ` (`via_rows`) or `xᵀ x`.
fn top_loadings(x: &DMatrix<f64>, k: usize, via_rows: bool) -> DMatrix<f64> {
    if via_rows {
        let (vals, vecs) = sorted_eigen(x * x.transpose());
        let mut l = DMatrix::zeros(x.ncols(), k);
        for (c, val) in vals.iter().take(k).enumerate() {
            let sv = val.max(0.0).sqrt();
            if sv > 0.0 {
                l.set_column(c, &(x.tr_mul(&vecs.column(c)) / sv));
            }
        }
        l
    } else {
        let (_, vecs) = sorted_eigen(x.tr_mul(x));
        vecs.columns(0, k).into_owned()
    }
}

/// Eigenpairs of a symmetric matrix, eigenvalues descending (ties by index).
fn sorted_eigen(m: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = m.symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .total_cmp(&eig.eigenvalues[a])
            .then(a.cmp(&b))
    });
    let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = DMatrix::from_fn(eig.eigenvectors.nrows(), order.len(), |r, c| {
        eig.eigenvectors[(r, order[c])]
    });
    (vals, vecs)
}
