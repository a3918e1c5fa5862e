use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::genetics::GenotypeMatrix;

/// One feature block ("view") for every subject of a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct View {
    pub name: String,
    pub feature_names: Vec<String>,
    /// `N × d`; rows of absent subjects are zero-filled and must be ignored.
    pub data: DMatrix<f64>,
}

impl View {
    pub fn dim(&self) -> usize {
        self.data.ncols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiViewDataset {
    pub views: Vec<View>,
    /// `presence[i][m]`: subject `i` has view `m`.
    pub presence: Vec<Vec<bool>>,
    pub phenotype: Vec<f64>,
    pub subject_ids: Vec<String>,
}

/// Row subset of the views plus the availability mask, as consumed by the model.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiViewBatch {
    pub views: Vec<DMatrix<f64>>,
    pub mask: Vec<Vec<bool>>,
}

impl MultiViewBatch {
    pub fn len(&self) -> usize {
        self.mask.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mask.is_empty()
    }

    /// Marks view `m` absent for every row.
    pub fn drop_view(&mut self, m: usize) {
        for row in &mut self.mask {
            row[m] = false;
        }
    }
}

impl MultiViewDataset {
    pub fn new(
        views: Vec<View>,
        presence: Vec<Vec<bool>>,
        phenotype: Vec<f64>,
        subject_ids: Vec<String>,
    ) -> Result<Self> {
        let n = subject_ids.len();
        if phenotype.len() != n || presence.len() != n {
            return Err(Error::invalid("dataset rows are not aligned"));
        }
        if views.iter().any(|v| v.data.nrows() != n) {
            return Err(Error::invalid("view row counts differ from subject count"));
        }
        if presence.iter().any(|p| p.len() != views.len()) {
            return Err(Error::invalid("presence mask width differs from view count"));
        }
        let mut seen = HashSet::new();
        if let Some(dup) = subject_ids.iter().find(|id| !seen.insert(id.as_str())) {
            return Err(Error::data(format!("duplicate subject id '{dup}'")));
        }
        Ok(Self {
            views,
            presence,
            phenotype,
            subject_ids,
        })
    }

    pub fn len(&self) -> usize {
        self.subject_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subject_ids.is_empty()
    }

    pub fn n_views(&self) -> usize {
        self.views.len()
    }

    pub fn view_dims(&self) -> Vec<usize> {
        self.views.iter().map(View::dim).collect()
    }

    pub fn view_names(&self) -> Vec<String> {
        self.views.iter().map(|v| v.name.clone()).collect()
    }

    pub fn view_index(&self, name: &str) -> Option<usize> {
        self.views.iter().position(|v| v.name == name)
    }

    pub fn batch(&self, rows: &[usize]) -> MultiViewBatch {
        MultiViewBatch {
            views: self.views.iter().map(|v| v.data.select_rows(rows)).collect(),
            mask: rows.iter().map(|&r| self.presence[r].clone()).collect(),
        }
    }

    pub fn full_batch(&self) -> MultiViewBatch {
        let rows: Vec<usize> = (0..self.len()).collect();
        self.batch(&rows)
    }

    pub fn subset(&self, rows: &[usize]) -> Self {
        Self {
            views: self
                .views
                .iter()
                .map(|v| View {
                    name: v.name.clone(),
                    feature_names: v.feature_names.clone(),
                    data: v.data.select_rows(rows),
                })
                .collect(),
            presence: rows.iter().map(|&r| self.presence[r].clone()).collect(),
            phenotype: rows.iter().map(|&r| self.phenotype[r]).collect(),
            subject_ids: rows.iter().map(|&r| self.subject_ids[r].clone()).collect(),
        }
    }

    /// Keeps only the views flagged in `keep` and drops subjects left with no view.
    pub fn select_views(&self, keep: &[bool]) -> Result<Self> {
        crate::error::ensure_len("view selection", self.n_views(), keep.len())?;
        let idx: Vec<usize> = (0..self.n_views()).filter(|&m| keep[m]).collect();
        if idx.is_empty() {
            return Err(Error::invalid("view selection is empty"));
        }
        let rows: Vec<usize> = (0..self.len())
            .filter(|&i| idx.iter().any(|&m| self.presence[i][m]))
            .collect();
        let base = self.subset(&rows);
        Ok(Self {
            views: idx.iter().map(|&m| base.views[m].clone()).collect(),
            presence: base
                .presence
                .iter()
                .map(|p| idx.iter().map(|&m| p[m]).collect())
                .collect(),
            phenotype: base.phenotype,
            subject_ids: base.subject_ids,
        })
    }

    /// Appends a view; subjects absent from `rows_by_id` get presence false.
    pub fn with_view(
        mut self,
        name: &str,
        feature_names: Vec<String>,
        rows_by_id: &HashMap<String, Vec<f64>>,
    ) -> Result<Self> {
        let d = feature_names.len();
        let mut data = DMatrix::zeros(self.len(), d);
        for (i, id) in self.subject_ids.iter().enumerate() {
            let present = match rows_by_id.get(id) {
                Some(row) => {
                    crate::error::ensure_len("view row width", d, row.len())?;
                    for (j, v) in row.iter().enumerate() {
                        data[(i, j)] = *v;
                    }
                    true
                }
                None => false,
            };
            self.presence[i].push(present);
        }
        self.views.push(View {
            name: name.to_string(),
            feature_names,
            data,
        });
        Ok(self)
    }
}

/// A parsed `subject_id,<feature>...` table. `None` marks a row that is `NA`
/// in every cell (whole view absent for that subject).
pub struct FeatureTable {
    pub feature_names: Vec<String>,
    pub rows: Vec<(String, Option<Vec<f64>>)>,
}

pub fn read_feature_table(path: &Path) -> Result<FeatureTable> {
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
    let feature_names: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
    let mut rows = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let id = rec.get(0).unwrap_or("").to_string();
        let cells: Vec<&str> = rec.iter().skip(1).collect();
        if cells.len() != feature_names.len() {
            return Err(Error::data(format!(
                "{} row {}: expected {} values, found {}",
                path.display(),
                line + 2,
                feature_names.len(),
                cells.len()
            )));
        }
        let n_na = cells.iter().filter(|c| c.trim() == "NA").count();
        if n_na == cells.len() && !cells.is_empty() {
            rows.push((id, None));
            continue;
        }
        if n_na > 0 {
            return Err(Error::data(format!(
                "{} subject '{id}': partial NA within a present view",
                path.display()
            )));
        }
        let vals = cells
            .iter()
            .map(|c| {
                c.trim().parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| {
                    Error::data(format!(
                        "{} subject '{id}': non-numeric cell '{c}'",
                        path.display()
                    ))
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push((id, Some(vals)));
    }
    Ok(FeatureTable {
        feature_names,
        rows,
    })
}

/// Reads a `subject_id,value` phenotype file.
pub fn read_phenotype(path: &Path) -> Result<Vec<(String, f64)>> {
    let table = read_feature_table(path)?;
    if table.feature_names.len() != 1 {
        return Err(Error::data(format!(
            "{}: phenotype file must have exactly one value column",
            path.display()
        )));
    }
    table
        .rows
        .into_iter()
        .map(|(id, v)| match v {
            Some(v) => Ok((id, v[0])),
            None => Err(Error::data(format!("{}: missing phenotype for '{id}'", path.display()))),
        })
        .collect()
}

/// Joins view files onto the subjects of the phenotype file, sorted by id.
/// Subjects missing from a view file (or `NA` rows) get presence false;
/// subjects with no view at all are dropped.
pub fn load_dataset(view_files: &[(String, &Path)], phenotype_file: &Path) -> Result<MultiViewDataset> {
    let pheno = read_phenotype(phenotype_file)?;
    let mut pheno_by_id = BTreeMap::new();
    for (id, v) in pheno {
        if pheno_by_id.insert(id.clone(), v).is_some() {
            return Err(Error::data(format!("duplicate subject id '{id}' in phenotype file")));
        }
    }
    join_views(view_files, &pheno_by_id)
}

/// Like [`load_dataset`] without a phenotype: every subject with at least one
/// view is kept and the phenotype is NaN.
pub fn load_views(view_files: &[(String, &Path)]) -> Result<MultiViewDataset> {
    let mut ids = BTreeMap::new();
    for (_, path) in view_files {
        for (id, _) in read_feature_table(path)?.rows {
            ids.insert(id, f64::NAN);
        }
    }
    join_views(view_files, &ids)
}

fn join_views(view_files: &[(String, &Path)], pheno_by_id: &BTreeMap<String, f64>) -> Result<MultiViewDataset> {
    let mut tables = Vec::with_capacity(view_files.len());
    for (name, path) in view_files {
        let table = read_feature_table(path)?;
        let mut by_id: HashMap<String, Option<Vec<f64>>> = HashMap::new();
        for (id, row) in table.rows {
            if by_id.insert(id.clone(), row).is_some() {
                return Err(Error::data(format!(
                    "duplicate subject id '{id}' in view '{name}'"
                )));
            }
        }
        tables.push((name.clone(), table.feature_names, by_id));
    }

    let ids: Vec<String> = pheno_by_id
        .keys()
        .filter(|id| {
            tables
                .iter()
                .any(|(_, _, rows)| matches!(rows.get(*id), Some(Some(_))))
        })
        .cloned()
        .collect();
    if ids.is_empty() {
        return Err(Error::data("no subjects overlap between phenotype and view files"));
    }

    let n = ids.len();
    let mut presence = vec![Vec::with_capacity(tables.len()); n];
    let mut views = Vec::with_capacity(tables.len());
    for (name, feature_names, rows) in tables {
        let mut data = DMatrix::zeros(n, feature_names.len());
        for (i, id) in ids.iter().enumerate() {
            match rows.get(id) {
                Some(Some(vals)) => {
                    for (j, v) in vals.iter().enumerate() {
                        data[(i, j)] = *v;
                    }
                    presence[i].push(true);
                }
                _ => presence[i].push(false),
            }
        }
        views.push(View {
            name,
            feature_names,
            data,
        });
    }
    let phenotype = ids.iter().map(|id| pheno_by_id[id]).collect();
    MultiViewDataset::new(views, presence, phenotype, ids)
}

/// Subject ids plus one dosage row per subject.
pub type GenotypeRows = (Vec<String>, HashMap<String, Vec<f64>>);

/// Dosage rows of the listed SNPs keyed by subject id, for use with
/// [`MultiViewDataset::with_view`]. Missing genotypes take the SNP mean.
pub fn genotype_view_rows(
    g: &GenotypeMatrix,
    snp_ids: &[String],
) -> Result<GenotypeRows> {
    let cols = snp_ids
        .iter()
        .map(|id| {
            g.snp_index(id)
                .ok_or_else(|| Error::data(format!("selected SNP '{id}' is not in the genotype file")))
        })
        .collect::<Result<Vec<_>>>()?;
    let means: Vec<f64> = cols
        .iter()
        .map(|&s| {
            let (sum, cnt) = g
                .column(s)
                .iter()
                .flatten()
                .fold((0.0, 0usize), |(a, c), v| (a + f64::from(*v), c + 1));
            if cnt == 0 {
                0.0
            } else {
                sum / cnt as f64
            }
        })
        .collect();
    let rows = g
        .subject_ids
        .iter()
        .enumerate()
        .map(|(i, id)| {
            let row = cols
                .iter()
                .zip(&means)
                .map(|(&s, &mean)| g.get(i, s).map_or(mean, f64::from))
                .collect();
            (id.clone(), row)
        })
        .collect();
    Ok((snp_ids.to_vec(), rows))
}
