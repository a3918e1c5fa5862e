//! The `mvfuse` command line: `synth`, `gwas`, `train`, `eval`, `grid` and
//! `predict`, all driven by one TOML config whose fields are optional.
//!
//! Every random choice derives from the root seed through
//! [`derive_seed`](crate::seed::derive_seed) with a fixed tag per purpose
//! (`synth`, `split`, `train`, `permute`); `grid` reuses the `train` seed.
//! Progress is reported as `key=value` lines on stdout; failures go to
//! stderr with exit code 1 (usage/config), 2 (data) or 3 (numerical).

use std::collections::{HashMap, HashSet};
use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::genetics::{run_gwas, zscore, GenotypeMatrix, GwasConfig, QcReason};
use crate::mvvae::{MvvaeModel, TrainConfig};
use crate::pipeline::dataset::{genotype_view_rows, load_dataset, load_views, read_feature_table, read_phenotype};
use crate::pipeline::experiment::{evaluate, latents_with_dropped, run_experiment, ExperimentConfig, ModelShape};
use crate::pipeline::grid::{grid_search, grid_to_csv, grid_to_json, GridSpec};
use crate::pipeline::head::LinearHead;
use crate::pipeline::metrics::MetricsReport;
use crate::pipeline::scale::DatasetScaler;
use crate::pipeline::split::{split_subjects, SplitManifest};
use crate::pipeline::synth::{synth_generate, SynthSpec, GENETIC_VIEW};
use crate::pipeline::MultiViewDataset;
use crate::seed::{derive_seed, rng_for};

pub const MODEL_FILE: &str = "model.ckpt";
pub const SCALE_FILE: &str = "scale.json";
pub const SPLIT_FILE: &str = "split.json";
pub const HEAD_FILE: &str = "head.json";
pub const HISTORY_FILE: &str = "history.csv";
pub const METRICS_FILE: &str = "metrics.json";
pub const GWAS_FILE: &str = "gwas_results.csv";
pub const SELECTED_FILE: &str = "selected_snps.txt";

#[derive(Debug, Parser)]
#[command(name = "mvfuse", version, about = "Multi-view VAE fusion pipeline")]
struct Cli {
    /// TOML run configuration; every field is optional.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (overrides the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic cohort.
    Synth,
    /// QC, covariate-adjusted score tests and SNP selection.
    Gwas {
        /// Shuffle the phenotype across subjects first (null run).
        #[arg(long)]
        permute_phenotype: bool,
    },
    /// Train the model and regression head on the training split.
    Train,
    /// Score a trained model on a split, optionally with views removed.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// View to treat as missing for every subject (repeatable).
        #[arg(long = "drop-view")]
        drop_view: Vec<String>,
        /// Which side of the split to score.
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Hyperparameter and view-subset sweep.
    Grid,
    /// Predict the phenotype for every subject in the view files.
    Predict {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewFile {
    pub name: String,
    pub path: PathBuf,
}

/// Input locations. Unset paths default to the files `synth` writes into the
/// output directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub views: Vec<ViewFile>,
    pub phenotype: Option<PathBuf>,
    pub genotypes: Option<PathBuf>,
    pub covariates: Option<PathBuf>,
    pub selected_snps: Option<PathBuf>,
    /// Add the selected SNPs as a view when a selection file exists.
    pub genetic_view: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitConfig {
    pub test_fraction: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self { test_fraction: 0.2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GwasRunConfig {
    #[serde(flatten)]
    pub gwas: GwasConfig,
    /// Restrict the association scan to training-split subjects.
    pub train_only: bool,
}

impl Default for GwasRunConfig {
    fn default() -> Self {
        Self {
            gwas: GwasConfig::default(),
            train_only: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub data: DataConfig,
    pub synth: SynthSpec,
    pub gwas: GwasRunConfig,
    pub split: SplitConfig,
    pub model: ModelShape,
    pub train: TrainConfig,
    pub grid: GridSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: PathBuf::from("mvfuse-out"),
            data: DataConfig {
                genetic_view: true,
                ..DataConfig::default()
            },
            synth: SynthSpec::default(),
            gwas: GwasRunConfig::default(),
            split: SplitConfig::default(),
            model: ModelShape::default(),
            train: TrainConfig::default(),
            grid: GridSpec::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    fn out_file(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    fn phenotype_path(&self) -> PathBuf {
        self.data.phenotype.clone().unwrap_or_else(|| self.out_file("phenotype.csv"))
    }

    fn genotype_path(&self) -> PathBuf {
        self.data.genotypes.clone().unwrap_or_else(|| self.out_file("genotypes.csv"))
    }

    fn covariate_path(&self) -> Option<PathBuf> {
        match &self.data.covariates {
            Some(p) => Some(p.clone()),
            None => Some(self.out_file("covariates.csv")).filter(|p| p.exists()),
        }
    }

    fn selected_path(&self) -> PathBuf {
        self.data.selected_snps.clone().unwrap_or_else(|| self.out_file(SELECTED_FILE))
    }

    fn view_files(&self) -> Vec<ViewFile> {
        if !self.data.views.is_empty() {
            return self.data.views.clone();
        }
        self.synth
            .views
            .iter()
            .map(|v| ViewFile {
                name: v.name.clone(),
                path: self.out_file(&format!("{}.csv", v.name)),
            })
            .collect()
    }

    /// Range checks beyond what the types enforce.
    pub fn validate(&self) -> Result<()> {
        self.gwas.gwas.validate()?;
        if !(self.split.test_fraction > 0.0 && self.split.test_fraction < 1.0) {
            return Err(Error::Config("split.test_fraction must lie in (0, 1)".into()));
        }
        if self.train.batch_size == 0 || self.train.latent_samples == 0 {
            return Err(Error::Config("train.batch_size and train.latent_samples must be positive".into()));
        }
        self.train.optimizer.validate().map_err(|e| Error::Config(e.to_string()))?;
        if self.model.layers == 0 || self.model.latent_dim == 0 || self.model.hidden == 0 {
            return Err(Error::Config("model.layers, latent_dim and hidden must be positive".into()));
        }
        let mut names = HashSet::new();
        for v in &self.data.views {
            if !names.insert(v.name.as_str()) || v.name == GENETIC_VIEW {
                return Err(Error::Config(format!("view name '{}' is duplicated or reserved", v.name)));
            }
        }
        Ok(())
    }

    fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: derive_seed(self.seed, "train"),
            ..self.train.clone()
        }
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error={}", e.to_string().replace('\n', " "));
            e.exit_code()
        }
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| match e.kind() {
                std::io::ErrorKind::NotFound => Error::Config(format!("config file {} not found", p.display())),
                _ => Error::io(p, e),
            })?;
            RunConfig::from_toml(&text)?
        }
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out_dir = o.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn dispatch(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli)?;
    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
    let verb = match &cli.command {
        Command::Synth => "synth",
        Command::Gwas { .. } => "gwas",
        Command::Train => "train",
        Command::Eval { .. } => "eval",
        Command::Grid => "grid",
        Command::Predict { .. } => "predict",
    };
    write(&cfg.out_file(&format!("{verb}.config.toml")), &cfg.to_toml()?)?;
    match cli.command {
        Command::Synth => cmd_synth(&cfg),
        Command::Gwas { permute_phenotype } => cmd_gwas(&cfg, permute_phenotype),
        Command::Train => cmd_train(&cfg),
        Command::Eval {
            checkpoint,
            drop_view,
            split,
        } => cmd_eval(&cfg, checkpoint.as_deref(), &drop_view, &split),
        Command::Grid => cmd_grid(&cfg),
        Command::Predict { checkpoint } => cmd_predict(&cfg, checkpoint.as_deref()),
    }
}

fn write(path: &Path, body: &str) -> Result<()> {
    std::fs::write(path, body).map_err(|e| Error::io(path, e))
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn cmd_synth(cfg: &RunConfig) -> Result<()> {
    let cohort = synth_generate(&cfg.synth, derive_seed(cfg.seed, "synth"))?;
    let files = cohort.write_to(&cfg.out_dir)?;
    println!(
        "synth subjects={} views={} snps={} causal={} files={}",
        cohort.dataset.len(),
        cohort.dataset.n_views(),
        cohort.genotypes.n_snps(),
        cohort.truth.causal_snps.len(),
        files.len()
    );
    Ok(())
}

/// The subject split used by every command: a function of the phenotype
/// file's subject set, the test fraction and the root seed.
fn subject_split(cfg: &RunConfig) -> Result<SplitManifest> {
    let ids: Vec<String> = read_phenotype(&cfg.phenotype_path())?
        .into_iter()
        .map(|(id, _)| id)
        .collect();
    split_subjects(&ids, cfg.split.test_fraction, derive_seed(cfg.seed, "split"))
}

pub fn cmd_gwas(cfg: &RunConfig, permute_phenotype: bool) -> Result<()> {
    let g = GenotypeMatrix::read_csv(&cfg.genotype_path())?;
    let pheno: HashMap<String, f64> = read_phenotype(&cfg.phenotype_path())?.into_iter().collect();
    let covariates: Option<HashMap<String, Vec<f64>>> = match cfg.covariate_path() {
        Some(p) => {
            let table = read_feature_table(&p)?;
            let mut map = HashMap::new();
            for (id, row) in table.rows {
                if let Some(r) = row {
                    map.insert(id, r);
                }
            }
            Some(map)
        }
        None => None,
    };
    let allowed: Option<HashSet<String>> = if cfg.gwas.train_only {
        Some(subject_split(cfg)?.train_ids.into_iter().collect())
    } else {
        None
    };

    let rows: Vec<usize> = (0..g.n_subjects())
        .filter(|&i| {
            let id = &g.subject_ids[i];
            pheno.contains_key(id)
                && covariates.as_ref().is_none_or(|c| c.contains_key(id))
                && allowed.as_ref().is_none_or(|a| a.contains(id))
        })
        .collect();
    if rows.is_empty() {
        return Err(Error::data("no subject has genotypes, phenotype and covariates"));
    }
    let all_snps: Vec<usize> = (0..g.n_snps()).collect();
    let g = g.select(&rows, &all_snps);
    let mut y: Vec<f64> = g.subject_ids.iter().map(|id| pheno[id]).collect();
    if permute_phenotype {
        y.shuffle(&mut rng_for(cfg.seed, "permute"));
    }
    let y = zscore(&y)?;
    let cov = match &covariates {
        Some(c) => {
            let width = c.values().next().map_or(0, Vec::len);
            DMatrix::from_fn(g.n_subjects(), width, |i, j| c[&g.subject_ids[i]][j])
        }
        None => DMatrix::zeros(g.n_subjects(), 0),
    };

    let out = run_gwas(&g, &y, &cov, &cfg.gwas.gwas)?;
    write(&cfg.out_file(GWAS_FILE), &out.to_csv())?;
    write(&cfg.selected_path(), &out.selected_text())?;
    let count = |r| out.qc_report.count(r);
    println!(
        "gwas subjects={} snps_in={} tested={} removed_indiv_missing={} removed_missing_rate={} removed_maf={} removed_hwe={} degenerate={} selected={}",
        out.n_subjects,
        g.n_snps(),
        out.results.len(),
        count(QcReason::IndivMissing),
        count(QcReason::MissingRate),
        count(QcReason::Maf),
        count(QcReason::Hwe),
        out.degenerate.len(),
        out.selected.len()
    );
    Ok(())
}

fn read_selected(path: &Path) -> Result<Vec<String>> {
    Ok(read(path)?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect())
}

fn attach_genetic_view(cfg: &RunConfig, ds: MultiViewDataset) -> Result<MultiViewDataset> {
    let sel_path = cfg.selected_path();
    if !cfg.data.genetic_view || !sel_path.exists() {
        return Ok(ds);
    }
    let selected = read_selected(&sel_path)?;
    if selected.is_empty() {
        return Ok(ds);
    }
    let g = GenotypeMatrix::read_csv(&cfg.genotype_path())?;
    let (names, rows) = genotype_view_rows(&g, &selected)?;
    ds.with_view(GENETIC_VIEW, names, &rows)
}

/// Feature views, plus the genetic view when configured, joined on the
/// phenotype file's subjects.
fn load_cohort(cfg: &RunConfig) -> Result<MultiViewDataset> {
    let files = cfg.view_files();
    let pairs: Vec<(String, &Path)> = files.iter().map(|v| (v.name.clone(), v.path.as_path())).collect();
    let ds = load_dataset(&pairs, &cfg.phenotype_path())?;
    attach_genetic_view(cfg, ds)
}

fn metrics_json(split: &str, dropped: &[String], n: usize, m: &MetricsReport) -> Result<String> {
    let doc = serde_json::json!({
        "split": split,
        "dropped_views": dropped,
        "n_subjects": n,
        "metrics": m,
    });
    Ok(serde_json::to_string_pretty(&doc)? + "\n")
}

pub fn cmd_train(cfg: &RunConfig) -> Result<()> {
    let ds = load_cohort(cfg)?;
    let manifest = subject_split(cfg)?;
    let (train, test) = manifest.partition(&ds);
    let exp = ExperimentConfig {
        model: cfg.model.clone(),
        train: cfg.train_config(),
    };
    let outcome = run_experiment(&train, &test, &exp)?;

    outcome.model.save(&cfg.out_file(MODEL_FILE))?;
    write(&cfg.out_file(SCALE_FILE), &(outcome.scaler.to_json()? + "\n"))?;
    write(&cfg.out_file(SPLIT_FILE), &(manifest.to_json()? + "\n"))?;
    write(&cfg.out_file(HISTORY_FILE), &outcome.history.to_csv())?;
    write(
        &cfg.out_file(HEAD_FILE),
        &(serde_json::to_string_pretty(&outcome.head)? + "\n"),
    )?;
    write(
        &cfg.out_file(METRICS_FILE),
        &metrics_json("test", &[], outcome.test.subject_ids.len(), &outcome.test.metrics)?,
    )?;
    println!(
        "train subjects_train={} subjects_test={} views={} epochs={} final_loss={}",
        train.len(),
        test.len(),
        ds.view_names().join("+"),
        outcome.history.len(),
        outcome.history.total.last().copied().unwrap_or(f64::NAN)
    );
    println!("{}", outcome.train_metrics.log_line("train_metrics"));
    println!("{}", outcome.test.metrics.log_line("test_metrics"));
    Ok(())
}

struct Trained {
    model: MvvaeModel,
    scaler: DatasetScaler,
    head: LinearHead,
}

fn load_trained(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<Trained> {
    let ckpt = checkpoint.map_or_else(|| cfg.out_file(MODEL_FILE), Path::to_path_buf);
    let model = MvvaeModel::load(&ckpt)?;
    let scaler = DatasetScaler::from_json(&read(&cfg.out_file(SCALE_FILE))?)?;
    let head: LinearHead = serde_json::from_str(&read(&cfg.out_file(HEAD_FILE))?)?;
    if scaler.view_names != model.config().view_names {
        return Err(Error::data("scale parameters do not match the checkpoint's views"));
    }
    if head.dim() != model.latent_dim() {
        return Err(Error::data("regression head does not match the checkpoint's latent size"));
    }
    Ok(Trained { model, scaler, head })
}

fn check_views_match(model: &MvvaeModel, ds: &MultiViewDataset) -> Result<()> {
    let mc = model.config();
    if ds.view_names() != mc.view_names || ds.view_dims() != mc.view_dims {
        return Err(Error::data(format!(
            "data views {:?} with dims {:?} do not match the checkpoint's {:?} with dims {:?}",
            ds.view_names(),
            ds.view_dims(),
            mc.view_names,
            mc.view_dims
        )));
    }
    Ok(())
}

pub fn cmd_eval(cfg: &RunConfig, checkpoint: Option<&Path>, drop: &[String], split: &str) -> Result<()> {
    let t = load_trained(cfg, checkpoint)?;
    let ds = load_cohort(cfg)?;
    check_views_match(&t.model, &ds)?;
    let manifest = SplitManifest::from_json(&read(&cfg.out_file(SPLIT_FILE))?)?;
    let (train, test) = manifest.partition(&ds);
    let target = match split {
        "test" => test,
        "train" => train,
        other => return Err(Error::Config(format!("unknown split '{other}' (expected test or train)"))),
    };
    let drop_idx = drop
        .iter()
        .map(|name| {
            ds.view_index(name)
                .ok_or_else(|| Error::Config(format!("unknown view '{name}' in --drop-view")))
        })
        .collect::<Result<Vec<_>>>()?;
    let ev = evaluate(&t.model, &t.scaler, &t.head, &target, &drop_idx)?;

    let mut name = format!("eval_{split}");
    for d in drop {
        let _ = write!(name, "_without_{d}");
    }
    write(
        &cfg.out_file(&format!("{name}.json")),
        &metrics_json(split, drop, ev.subject_ids.len(), &ev.metrics)?,
    )?;
    println!(
        "eval split={split} dropped={} scored={} skipped={}",
        if drop.is_empty() { "none".to_string() } else { drop.join("+") },
        ev.subject_ids.len(),
        ev.skipped.len()
    );
    println!("{}", ev.metrics.log_line("metrics"));
    Ok(())
}

pub fn cmd_grid(cfg: &RunConfig) -> Result<()> {
    let ds = load_cohort(cfg)?;
    let manifest = subject_split(cfg)?;
    let (train, test) = manifest.partition(&ds);
    let base = ExperimentConfig {
        model: cfg.model.clone(),
        train: cfg.train_config(),
    };
    // Same sub-seed as `train`, so the first architecture's all-views row
    // reproduces the `train` run when the shapes agree.
    let rows = grid_search(&train, &test, &cfg.grid, &base, base.train.seed)?;
    let names = ds.view_names();
    write(&cfg.out_file("grid.csv"), &grid_to_csv(&rows, &names))?;
    write(&cfg.out_file("grid.json"), &(grid_to_json(&rows, &names)? + "\n"))?;
    for r in &rows {
        eprintln!(
            "grid_run layers={} latent_dim={} hidden={} views={} wall_seconds={:.3}",
            r.layers,
            r.latent_dim,
            r.hidden,
            r.views.iter().map(|&b| if b { 'Y' } else { 'N' }).collect::<String>(),
            r.wall_seconds
        );
    }
    let failed = rows.iter().filter(|r| r.metrics.is_none()).count();
    println!(
        "grid runs={} failed={} best_r2={}",
        rows.len(),
        failed,
        rows.first().and_then(|r| r.metrics).map_or(f64::NAN, |m| m.r2)
    );
    if failed == rows.len() {
        let first = rows.first().and_then(|r| r.error.clone()).unwrap_or_default();
        return Err(Error::numerical(format!("every grid run failed; first error: {first}")));
    }
    Ok(())
}

pub fn cmd_predict(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<()> {
    let t = load_trained(cfg, checkpoint)?;
    let files = cfg.view_files();
    let pairs: Vec<(String, &Path)> = files.iter().map(|v| (v.name.clone(), v.path.as_path())).collect();
    let ds = attach_genetic_view(cfg, load_views(&pairs)?)?;
    check_views_match(&t.model, &ds)?;
    let (rows, z) = latents_with_dropped(&t.model, &t.scaler, &ds, &[])?;
    let preds = t.head.predict(&z)?;
    let mut out = String::from("subject_id,prediction\n");
    for (&i, p) in rows.iter().zip(&preds) {
        let _ = writeln!(out, "{},{}", ds.subject_ids[i], p);
    }
    write(&cfg.out_file("predictions.csv"), &out)?;
    println!("predict subjects={}", preds.len());
    Ok(())
}
