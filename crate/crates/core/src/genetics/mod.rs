//! Genotype QC, population-structure PCA and the per-SNP score-test GWAS used
//! to pick the genetic features.

mod gwas;
mod pca;
mod qc;

use std::cmp::Ordering;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

pub use gwas::{
    chi2_1_upper_tail, run_gwas, score_test, zscore, GwasConfig, GwasOutput, GwasResult, ScoreTest,
};
pub use pca::{genotype_pca, PcaResult};
pub use qc::{hwe_exact_test, minor_allele_frequency, qc_filter, QcConfig, QcOutcome, QcReason, QcReport};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SnpMeta {
    pub id: String,
    pub chrom: String,
    pub pos: u64,
}

impl SnpMeta {
    /// Parses ids of the form `[chr]<chrom>:<pos>[:...]`. Anything else is
    /// placed on chromosome `.` at `fallback_pos`, i.e. kept in file order.
    pub fn from_id(id: &str, fallback_pos: u64) -> Self {
        let mut parts = id.split(':');
        if let (Some(c), Some(p)) = (parts.next(), parts.next()) {
            if let Ok(pos) = p.parse::<u64>() {
                let chrom = c.strip_prefix("chr").unwrap_or(c);
                if !chrom.is_empty() {
                    return Self {
                        id: id.to_string(),
                        chrom: chrom.to_string(),
                        pos,
                    };
                }
            }
        }
        Self {
            id: id.to_string(),
            chrom: ".".to_string(),
            pos: fallback_pos,
        }
    }

    /// Autosomes numerically, then X, Y, MT, then anything else lexically.
    pub fn genomic_cmp(&self, other: &Self) -> Ordering {
        chrom_key(&self.chrom)
            .cmp(&chrom_key(&other.chrom))
            .then(self.pos.cmp(&other.pos))
            .then_with(|| self.id.cmp(&other.id))
    }
}

fn chrom_key(c: &str) -> (u8, u64, &str) {
    if let Ok(n) = c.parse::<u64>() {
        return (0, n, "");
    }
    match c {
        "X" => (1, 0, ""),
        "Y" => (2, 0, ""),
        "MT" | "M" => (3, 0, ""),
        other => (4, 0, other),
    }
}

/// `N × S` additive genotype codes (minor-allele counts), stored SNP-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GenotypeMatrix {
    n_subjects: usize,
    // value -1 marks missing
    codes: Vec<i8>,
    pub snp_meta: Vec<SnpMeta>,
    pub subject_ids: Vec<String>,
}

const MISSING: i8 = -1;

impl GenotypeMatrix {
    /// `rows[i][s]` is subject `i`'s genotype at SNP `s`.
    pub fn from_rows(
        rows: &[Vec<Option<u8>>],
        snp_meta: Vec<SnpMeta>,
        subject_ids: Vec<String>,
    ) -> Result<Self> {
        let n = subject_ids.len();
        let s = snp_meta.len();
        crate::error::ensure_len("genotype rows", n, rows.len())?;
        let mut codes = vec![MISSING; n * s];
        for (i, row) in rows.iter().enumerate() {
            crate::error::ensure_len("genotype row width", s, row.len())?;
            for (j, g) in row.iter().enumerate() {
                codes[j * n + i] = match g {
                    None => MISSING,
                    Some(v @ 0..=2) => *v as i8,
                    Some(v) => {
                        return Err(Error::data(format!(
                            "genotype {v} for subject '{}' at '{}' is not 0/1/2",
                            subject_ids[i], snp_meta[j].id
                        )))
                    }
                };
            }
        }
        Ok(Self {
            n_subjects: n,
            codes,
            snp_meta,
            subject_ids,
        })
    }

    pub fn n_subjects(&self) -> usize {
        self.n_subjects
    }

    pub fn n_snps(&self) -> usize {
        self.snp_meta.len()
    }

    pub fn get(&self, subject: usize, snp: usize) -> Option<u8> {
        let v = self.codes[snp * self.n_subjects + subject];
        (v != MISSING).then_some(v as u8)
    }

    pub fn column(&self, snp: usize) -> Vec<Option<u8>> {
        (0..self.n_subjects).map(|i| self.get(i, snp)).collect()
    }

    pub fn snp_index(&self, id: &str) -> Option<usize> {
        self.snp_meta.iter().position(|m| m.id == id)
    }

    pub fn select(&self, subjects: &[usize], snps: &[usize]) -> Self {
        let n = subjects.len();
        let mut codes = Vec::with_capacity(n * snps.len());
        for &s in snps {
            for &i in subjects {
                codes.push(self.codes[s * self.n_subjects + i]);
            }
        }
        Self {
            n_subjects: n,
            codes,
            snp_meta: snps.iter().map(|&s| self.snp_meta[s].clone()).collect(),
            subject_ids: subjects.iter().map(|&i| self.subject_ids[i].clone()).collect(),
        }
    }

    /// `subject_id,<snp>...` with `0|1|2|NA` cells.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("subject_id");
        for m in &self.snp_meta {
            out.push(',');
            out.push_str(&m.id);
        }
        out.push('\n');
        for i in 0..self.n_subjects {
            out.push_str(&self.subject_ids[i]);
            for s in 0..self.n_snps() {
                match self.get(i, s) {
                    Some(g) => {
                        let _ = write!(out, ",{g}");
                    }
                    None => out.push_str(",NA"),
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_path(path)
            .map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
        let headers = rdr.headers()?.clone();
        if headers.get(0) != Some("subject_id") {
            return Err(Error::data(format!(
                "{}: first column must be subject_id",
                path.display()
            )));
        }
        let snp_meta: Vec<SnpMeta> = headers
            .iter()
            .skip(1)
            .enumerate()
            .map(|(j, id)| SnpMeta::from_id(id, j as u64))
            .collect();
        let mut subject_ids = Vec::new();
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let id = rec.get(0).unwrap_or("").to_string();
            let row = rec
                .iter()
                .skip(1)
                .map(|c| match c.trim() {
                    "NA" => Ok(None),
                    "0" => Ok(Some(0)),
                    "1" => Ok(Some(1)),
                    "2" => Ok(Some(2)),
                    other => Err(Error::data(format!(
                        "{}: subject '{id}' has invalid genotype '{other}'",
                        path.display()
                    ))),
                })
                .collect::<Result<Vec<_>>>()?;
            subject_ids.push(id);
            rows.push(row);
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = subject_ids.iter().find(|id| !seen.insert(id.as_str())) {
            return Err(Error::data(format!("duplicate subject id '{dup}' in genotypes")));
        }
        Self::from_rows(&rows, snp_meta, subject_ids)
    }
}
