mod common;

use std::collections::HashSet;

use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::Rng;

use mvfuse::genetics::{run_gwas, zscore, GwasConfig};
use mvfuse::mvvae::{train, MvvaeConfig, MvvaeModel, TrainConfig};
use mvfuse::pipeline::audit::{self, PhenotypeUse};
use mvfuse::pipeline::{
    compute_metrics, genotype_view_rows, grid_search, run_experiment, synth_generate, DatasetScaler,
    ExperimentConfig, GridSpec, LinearHead, ModelShape, MultiViewDataset, SynthCohort, SynthSpec, SynthViewSpec,
    GENETIC_VIEW,
};
use mvfuse::pipeline::split::train_test_split;
use mvfuse::seed::rng_for;

fn small_spec(n: usize) -> SynthSpec {
    SynthSpec {
        n_subjects: n,
        n_factors: 4,
        views: vec![
            SynthViewSpec {
                name: "dxa".into(),
                dim: 30,
                factor_range: (0.0, 0.75),
                ..SynthViewSpec::default()
            },
            SynthViewSpec {
                name: "clinical".into(),
                dim: 15,
                factor_range: (0.5, 1.0),
                ..SynthViewSpec::default()
            },
        ],
        n_snps: 150,
        n_causal: 6,
        ..SynthSpec::default()
    }
}

fn split(ds: &MultiViewDataset, seed: u64) -> (MultiViewDataset, MultiViewDataset) {
    let (tr, te) = train_test_split(ds.len(), 0.2, seed).unwrap();
    (ds.subset(&tr), ds.subset(&te))
}

fn with_genetic_view(c: &SynthCohort, snps: &[String]) -> MultiViewDataset {
    let (names, rows) = genotype_view_rows(&c.genotypes, snps).unwrap();
    c.dataset.clone().with_view(GENETIC_VIEW, names, &rows).unwrap()
}

fn small_experiment(epochs: usize, seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        model: ModelShape {
            latent_dim: 4,
            hidden: 16,
            ..ModelShape::default()
        },
        train: TrainConfig {
            epochs,
            batch_size: 16,
            seed,
            ..TrainConfig::default()
        },
    }
}

#[test]
fn training_loss_falls_on_three_view_cohort() {
    let cohort = synth_generate(&small_spec(300), 7).unwrap();
    let causal: Vec<String> = cohort.truth.causal_snps.iter().map(|s| s.id.clone()).collect();
    let ds = with_genetic_view(&cohort, &causal);
    assert_eq!(ds.n_views(), 3);
    let scaled = DatasetScaler::fit(&ds).unwrap().transform(&ds).unwrap();
    let cfg = MvvaeConfig::uniform(ds.view_names(), ds.view_dims(), 4, 2, 16);
    let tc = TrainConfig {
        epochs: 50,
        seed: 7,
        ..TrainConfig::default()
    };
    let (_, history) = train(MvvaeModel::new(cfg, 7).unwrap(), &scaled, &tc).unwrap();
    assert_eq!(history.len(), 50);
    assert!(history.total[49] < history.total[0], "{:?}", history.total);
    assert!(history.kl.iter().all(|&k| k >= 0.0));
}

#[test]
fn noise_free_single_factor_is_recovered() {
    let view = |name: &str, dim| SynthViewSpec {
        name: name.into(),
        dim,
        factor_range: (0.0, 1.0),
        noise: 0.0,
        ..SynthViewSpec::default()
    };
    let spec = SynthSpec {
        n_subjects: 400,
        n_factors: 1,
        views: vec![view("dxa", 20), view("clinical", 10)],
        n_snps: 20,
        n_causal: 0,
        factor_share: 1.0,
        genetic_share: 0.0,
        covariate_share: 0.0,
        ..SynthSpec::default()
    };
    let cohort = synth_generate(&spec, 11).unwrap();
    let (tr, te) = split(&cohort.dataset, 11);
    let mut cfg = small_experiment(300, 11);
    cfg.model.latent_dim = 2;
    let out = run_experiment(&tr, &te, &cfg).unwrap();
    assert!(out.test.metrics.r2 >= 0.95, "test R² {}", out.test.metrics.r2);
}

#[test]
fn generated_mafs_match_allele_counts() {
    let mut spec = small_spec(2000);
    spec.n_snps = 200;
    let cohort = synth_generate(&spec, 3).unwrap();
    let g = &cohort.genotypes;
    let two_n = 2.0 * g.n_subjects() as f64;
    for s in 0..g.n_snps() {
        let count: f64 = g.column(s).iter().map(|v| f64::from(v.unwrap())).sum();
        let freq = count / two_n;
        // the coded allele is the minor one by construction, up to sampling error
        let se = (0.25 / two_n).sqrt();
        assert!(freq >= 0.05 - 4.0 * se && freq <= 0.5 + 4.0 * se, "SNP {s}: frequency {freq}");
    }
    for c in &cohort.truth.causal_snps {
        let s = g.snp_index(&c.id).unwrap();
        let count: f64 = g.column(s).iter().map(|v| f64::from(v.unwrap())).sum();
        let se = (c.maf * (1.0 - c.maf) / two_n).sqrt();
        assert!((count / two_n - c.maf).abs() <= 4.0 * se, "{}: {} vs {}", c.id, count / two_n, c.maf);
    }
}

#[test]
fn same_seed_same_cohort() {
    let a = synth_generate(&small_spec(80), 5).unwrap();
    let b = synth_generate(&small_spec(80), 5).unwrap();
    assert_eq!(a.dataset, b.dataset);
    assert_eq!(a.genotypes.to_csv(), b.genotypes.to_csv());
    assert_eq!(a.truth, b.truth);
    let c = synth_generate(&small_spec(80), 6).unwrap();
    assert_ne!(a.dataset.phenotype, c.dataset.phenotype);
}

#[test]
fn phenotype_reads_stay_on_their_side_of_the_split() {
    let cohort = synth_generate(&small_spec(200), 9).unwrap();
    let (tr, te) = split(&cohort.dataset, 9);
    audit::start();
    let out = run_experiment(&tr, &te, &small_experiment(3, 9)).unwrap();
    let log = audit::finish();
    let train_ids: HashSet<&String> = tr.subject_ids.iter().collect();
    let test_ids: HashSet<&String> = te.subject_ids.iter().collect();
    assert!(log.iter().any(|(u, _)| *u == PhenotypeUse::Fit));
    assert!(log.iter().any(|(u, _)| *u == PhenotypeUse::Evaluate));
    for (usage, id) in &log {
        match usage {
            PhenotypeUse::Fit => assert!(train_ids.contains(id), "fit read test subject {id}"),
            PhenotypeUse::Evaluate => assert!(test_ids.contains(id), "evaluation read training subject {id}"),
        }
    }
    // scaling statistics come from the training rows alone
    assert_eq!(out.scaler, DatasetScaler::fit(&tr).unwrap());
}

#[test]
fn test_rows_outside_training_range_are_clipped() {
    let cohort = synth_generate(&small_spec(120), 4).unwrap();
    let (tr, mut te) = split(&cohort.dataset, 4);
    te.views[0].data[(0, 0)] = 1e9;
    te.views[0].data[(1, 0)] = -1e9;
    let scaled = DatasetScaler::fit(&tr).unwrap().transform(&te).unwrap();
    assert_eq!(scaled.views[0].data[(0, 0)], 1.0);
    assert_eq!(scaled.views[0].data[(1, 0)], 0.0);
    assert!(scaled.views.iter().all(|v| v.data.iter().all(|x| (0.0..=1.0).contains(x))));
}

#[test]
fn grid_is_reproducible_and_sorted() {
    let cohort = synth_generate(&small_spec(120), 2).unwrap();
    let (tr, te) = split(&cohort.dataset, 2);
    let spec = GridSpec {
        layers: vec![2, 3],
        latent: vec![2],
        hidden: vec![8],
        view_subsets: None,
    };
    let base = small_experiment(3, 0);
    let strip = |rows: Vec<mvfuse::pipeline::GridResult>| {
        rows.into_iter()
            .map(|r| (r.layers, r.latent_dim, r.hidden, r.views, r.metrics, r.error))
            .collect::<Vec<_>>()
    };
    let a = strip(grid_search(&tr, &te, &spec, &base, 21).unwrap());
    let b = strip(grid_search(&tr, &te, &spec, &base, 21).unwrap());
    assert_eq!(a.len(), 2 * 3);
    assert_eq!(a, b);
    let r2: Vec<f64> = a.iter().map(|r| r.4.map_or(f64::NEG_INFINITY, |m| m.r2)).collect();
    assert!(r2.windows(2).all(|w| w[0] >= w[1]), "{r2:?}");
}

#[test]
fn selected_panel_beats_random_panel() {
    let mut spec = small_spec(500);
    spec.n_snps = 300;
    spec.n_causal = 8;
    spec.factor_share = 0.4;
    spec.genetic_share = 0.4;
    let cohort = synth_generate(&spec, 13).unwrap();
    let (tr_rows, _) = train_test_split(cohort.dataset.len(), 0.2, 13).unwrap();

    // the training subjects' genotypes drive selection
    let all_snps: Vec<usize> = (0..cohort.genotypes.n_snps()).collect();
    let g_train = cohort.genotypes.select(&tr_rows, &all_snps);
    let y = zscore(&tr_rows.iter().map(|&i| cohort.dataset.phenotype[i]).collect::<Vec<_>>()).unwrap();
    let cfg = GwasConfig {
        n_pcs: 2,
        select_top: Some(16),
        ..GwasConfig::default()
    };
    let gwas = run_gwas(&g_train, &y, &DMatrix::zeros(tr_rows.len(), 0), &cfg).unwrap();
    assert_eq!(gwas.selected.len(), 16);

    let mut rng = rng_for(13, "random-panel");
    let mut ids: Vec<String> = cohort.genotypes.snp_meta.iter().map(|m| m.id.clone()).collect();
    rand::seq::SliceRandom::shuffle(ids.as_mut_slice(), &mut rng);
    let random_panel: Vec<String> = ids.into_iter().take(16).collect();

    let score = |panel: &[String]| {
        let ds = with_genetic_view(&cohort, panel);
        let (tr, te) = split(&ds, 13);
        run_experiment(&tr, &te, &small_experiment(40, 13)).unwrap().test.metrics.r2
    };
    let selected = score(&gwas.selected);
    let random = score(&random_panel);
    assert!(selected > random, "selected {selected} vs random {random}");
}

#[test]
fn head_matches_normal_equations() {
    let mut rng = rng_for(1, "head-oracle");
    let (n, d) = (60, 4);
    let z = DMatrix::from_fn(n, d, |_, _| rng.random_range(-2.0..2.0));
    let y: Vec<f64> = (0..n).map(|i| 3.0 + z[(i, 0)] - 2.0 * z[(i, 3)] + rng.random_range(-0.5..0.5)).collect();
    let head = LinearHead::fit(&z, &y).unwrap();
    let fitted = head.predict(&z).unwrap();
    let resid = common::ols_residuals(&y, &z);
    for i in 0..n {
        assert!((y[i] - fitted[i] - resid[i]).abs() < 1e-8);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn head_never_loses_to_the_mean_on_training_data(
        seed in any::<u64>(),
        n in 8usize..40,
        d in 1usize..5,
    ) {
        prop_assume!(n > d + 1);
        let mut rng = rng_for(seed, "head-prop");
        let z = DMatrix::from_fn(n, d, |_, _| rng.random_range(-3.0..3.0));
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(1.0..10.0)).collect();
        let head = LinearHead::fit(&z, &y).unwrap();
        let m = compute_metrics(&y, &head.predict(&z).unwrap()).unwrap();
        prop_assert!(m.r2 >= -1e-12, "R² {}", m.r2);
    }

    #[test]
    fn rmse_never_below_mae(
        pairs in prop::collection::vec((0.1f64..1e3, -1e3f64..1e3), 2..50),
    ) {
        let y: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let y_hat: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        prop_assume!(y.iter().any(|&v| v != y[0]));
        let m = compute_metrics(&y, &y_hat).unwrap();
        prop_assert!(m.rmse >= m.mae * (1.0 - 1e-15));
    }
}
