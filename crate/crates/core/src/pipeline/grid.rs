use std::fmt::Write as _;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::dataset::MultiViewDataset;
use super::experiment::{run_experiment, ExperimentConfig};
use super::metrics::MetricsReport;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSpec {
    pub layers: Vec<usize>,
    pub latent: Vec<usize>,
    pub hidden: Vec<usize>,
    /// View subsets to evaluate; `None` means every nonempty subset.
    pub view_subsets: Option<Vec<Vec<bool>>>,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            layers: vec![2, 3, 4, 5],
            latent: vec![2, 8, 32],
            hidden: vec![3, 16, 32, 128],
            view_subsets: None,
        }
    }
}

impl GridSpec {
    /// `(layers, latent, hidden)` triples in nested order.
    pub fn architectures(&self) -> Vec<(usize, usize, usize)> {
        let mut out = Vec::new();
        for &l in &self.layers {
            for &d in &self.latent {
                for &h in &self.hidden {
                    out.push((l, d, h));
                }
            }
        }
        out
    }
}

/// Every nonempty subset of `m` views, single views first, all views last.
pub fn view_subsets(m: usize) -> Vec<Vec<bool>> {
    let mut subsets: Vec<Vec<bool>> = (1u32..(1 << m))
        .map(|bits| (0..m).map(|v| bits & (1 << v) != 0).collect())
        .collect();
    subsets.sort_by_key(|s| s.iter().filter(|&&b| b).count());
    subsets
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridResult {
    pub layers: usize,
    pub latent_dim: usize,
    pub hidden: usize,
    pub views: Vec<bool>,
    pub metrics: Option<MetricsReport>,
    pub error: Option<String>,
    pub wall_seconds: f64,
}

impl GridResult {
    fn r2(&self) -> f64 {
        self.metrics.map_or(f64::NEG_INFINITY, |m| m.r2)
    }
}

/// Trains and scores one model per (architecture, view subset). All subsets
/// of one architecture share its seed, `seed ^ architecture_index`. Rows come
/// back sorted by descending test R², failed runs last.
pub fn grid_search(
    train_raw: &MultiViewDataset,
    test_raw: &MultiViewDataset,
    spec: &GridSpec,
    base: &ExperimentConfig,
    seed: u64,
) -> Result<Vec<GridResult>> {
    let archs = spec.architectures();
    let subsets = spec
        .view_subsets
        .clone()
        .unwrap_or_else(|| view_subsets(train_raw.n_views()));
    if archs.is_empty() || subsets.is_empty() {
        return Err(Error::Config("grid has no points".into()));
    }
    if let Some(s) = subsets.iter().find(|s| s.len() != train_raw.n_views()) {
        return Err(Error::Config(format!(
            "view subset {s:?} does not match the {} views",
            train_raw.n_views()
        )));
    }
    let points: Vec<(usize, usize)> = (0..archs.len())
        .flat_map(|a| (0..subsets.len()).map(move |s| (a, s)))
        .collect();

    let mut rows: Vec<GridResult> = points
        .par_iter()
        .map(|&(a, s)| {
            let (layers, latent_dim, hidden) = archs[a];
            let start = Instant::now();
            let mut cfg = base.clone();
            cfg.model.layers = layers;
            cfg.model.latent_dim = latent_dim;
            cfg.model.hidden = hidden;
            cfg.train.seed = seed ^ a as u64;
            let outcome = train_raw
                .select_views(&subsets[s])
                .and_then(|tr| Ok((tr, test_raw.select_views(&subsets[s])?)))
                .and_then(|(tr, te)| run_experiment(&tr, &te, &cfg));
            let (metrics, error) = match outcome {
                Ok(o) => (Some(o.test.metrics), None),
                Err(e) => (None, Some(e.to_string())),
            };
            GridResult {
                layers,
                latent_dim,
                hidden,
                views: subsets[s].clone(),
                metrics,
                error,
                wall_seconds: start.elapsed().as_secs_f64(),
            }
        })
        .collect();
    rows.sort_by(|a, b| b.r2().total_cmp(&a.r2()));
    Ok(rows)
}

/// Table with one Y/N column per view. Wall time is left out so reruns are
/// byte-identical.
pub fn grid_to_csv(rows: &[GridResult], view_names: &[String]) -> String {
    let mut out = String::from("layers,latent_dim,hidden");
    for name in view_names {
        let _ = write!(out, ",{name}");
    }
    out.push_str(",mae,mape,rmse,r2,error\n");
    for r in rows {
        let _ = write!(out, "{},{},{}", r.layers, r.latent_dim, r.hidden);
        for &v in &r.views {
            out.push_str(if v { ",Y" } else { ",N" });
        }
        match &r.metrics {
            Some(m) => {
                let _ = writeln!(out, ",{},{},{},{},", m.mae, m.mape, m.rmse, m.r2);
            }
            None => {
                let msg = r.error.as_deref().unwrap_or("").replace([',', '\n', '"'], " ");
                let _ = writeln!(out, ",,,,,{msg}");
            }
        }
    }
    out
}

pub fn grid_to_json(rows: &[GridResult], view_names: &[String]) -> Result<String> {
    let runs: Vec<serde_json::Value> = rows
        .iter()
        .map(|r| {
            let views: serde_json::Map<String, serde_json::Value> = view_names
                .iter()
                .zip(&r.views)
                .map(|(n, &v)| (n.clone(), json!(v)))
                .collect();
            json!({
                "config": {
                    "layers": r.layers,
                    "latent_dim": r.latent_dim,
                    "hidden": r.hidden,
                    "views": views,
                },
                "metrics": r.metrics,
                "error": r.error,
            })
        })
        .collect();
    Ok(serde_json::to_string_pretty(&json!({ "runs": runs }))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn subsets_of_three_views() {
        let s = view_subsets(3);
        assert_eq!(s.len(), 7);
        assert_eq!(s[0], vec![true, false, false]);
        assert_eq!(s[6], vec![true, true, true]);
    }

    #[test]
    fn default_grid_size() {
        assert_eq!(GridSpec::default().architectures().len(), 48);
    }
}
