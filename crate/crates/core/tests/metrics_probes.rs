//! Alignment, probes and the collapse / suppression verdicts.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use spectral_cl::config::ExperimentConfig;
use spectral_cl::covariance::build_covariances;
use spectral_cl::data::{generate_dataset, generate_testset, Dataset};
use spectral_cl::error::Error;
use spectral_cl::metrics::{
    collapse_report, embed, feature_alignment, fit_probe, separation_ratio, subclass_silhouette, suppression_report,
    LabelKind, ProbeMode, ProbeSet,
};
use spectral_cl::objective::{LinearModel, LossKind};
use spectral_cl::rng::{stream, Purpose};
use spectral_cl::solver::{gram_to_model, min_norm_for, noncollapse_gram};
use spectral_cl::spectral::TieRule;
use spectral_cl::trainer::{train, TrainOptions};

fn min_norm_scl(cfg: &ExperimentConfig) -> LinearModel {
    let cov = build_covariances(&generate_dataset(cfg).unwrap()).unwrap();
    let g = min_norm_for(&cov, LossKind::Scl, cfg.p, TieRule::LowestIndex).unwrap().swap_remove(0);
    gram_to_model(&g, cfg.p).unwrap()
}

fn testset(cfg: &ExperimentConfig, size: usize) -> Dataset {
    generate_testset(cfg, size, &mut stream(cfg.seed, Purpose::TestSet, 0)).unwrap()
}

fn probe_set(z: DMatrix<f64>, labels: Vec<i8>, classes: Vec<i8>) -> ProbeSet {
    ProbeSet { embeddings: z, labels, classes }
}

#[test]
fn alignment_reads_weight_columns() {
    let mut w = DMatrix::zeros(3, 6);
    for i in 0..3 {
        w[(i, i + 1)] = 1.0;
    }
    w[(0, 5)] = 3.0;
    w[(1, 5)] = 4.0;
    let model = LinearModel::new(w).unwrap();
    assert_eq!(feature_alignment(&model, 1).unwrap(), 1.0);
    assert_eq!(feature_alignment(&model, 4).unwrap(), 0.0);
    assert_eq!(feature_alignment(&model, 5).unwrap(), 5.0);
    assert!(matches!(feature_alignment(&model, 0), Err(Error::IndexOutOfRange { .. })));
    assert!(matches!(feature_alignment(&model, 6), Err(Error::IndexOutOfRange { index: 6, max: 5 })));
    assert_eq!(feature_alignment(&LinearModel::zeros(2, 6), 3).unwrap(), 0.0);
}

#[test]
fn alignment_squared_is_the_gram_quadratic_form() {
    let mut rng = stream(3, Purpose::Oracle, 0);
    for _ in 0..10 {
        let model = LinearModel::new(DMatrix::from_fn(4, 9, |_, _| rng.random::<f64>() - 0.5)).unwrap();
        let gram = model.w.transpose() * &model.w;
        for k in 1..9 {
            let a = feature_alignment(&model, k).unwrap();
            assert!((a * a - gram[(k, k)]).abs() < 1e-14);
        }
    }
}

#[test]
fn identity_like_weights_embed_leading_coordinates() {
    let cfg = ExperimentConfig::c0();
    let ds = generate_dataset(&cfg).unwrap();
    let w = DMatrix::from_fn(3, cfg.dim(), |i, j| if i == j { 1.0 } else { 0.0 });
    let z = embed(&LinearModel::new(w).unwrap(), ds.examples(), &cfg);
    let x = ds.materialize_all();
    for (i, _) in ds.examples().iter().enumerate() {
        for c in 0..3 {
            assert_eq!(z[(i, c)], x[(c, i)]);
        }
    }
    assert_eq!(embed(&LinearModel::zeros(3, cfg.dim()), ds.examples(), &cfg).amax(), 0.0);
}

#[test]
fn separable_embeddings_probe_perfectly() {
    let mut rng = stream(1, Purpose::Probe, 0);
    let n = 200;
    let labels: Vec<i8> = (0..n).map(|i| if i % 2 == 0 { 1 } else { -1 }).collect();
    let classes: Vec<i8> = (0..n).map(|i| if i % 4 < 2 { 1 } else { -1 }).collect();
    let z = DMatrix::from_fn(n, 3, |i, j| {
        let noise = rng.random::<f64>() - 0.5;
        if j == 0 { labels[i] as f64 * 2.0 + 0.3 * noise } else { noise }
    });
    let set = probe_set(z, labels, classes);
    let r = fit_probe(&set, &set, &ProbeMode::Lsq).unwrap();
    assert_eq!(r.accuracy, 1.0);
    assert_eq!(r.conditional.len(), 2);
    assert!(r.conditional.iter().all(|c| c.1 == 1.0));
    let dir = fit_probe(&set, &set, &ProbeMode::Direction(DVector::from_vec(vec![1.0, 0.0, 0.0]))).unwrap();
    assert_eq!(dir.accuracy, 1.0);
    assert_eq!(dir.intercept, 0.0);
}

#[test]
fn random_labels_probe_near_chance() {
    let mut rng = stream(2, Purpose::Probe, 0);
    let n = 4000;
    let mut draw = |n: usize| {
        let z = DMatrix::from_fn(n, 3, |_, _| rng.random::<f64>() - 0.5);
        let labels: Vec<i8> = (0..n).map(|_| if rng.random::<bool>() { 1 } else { -1 }).collect();
        probe_set(z, labels, vec![1; n])
    };
    let fit = draw(n);
    let eval = draw(n);
    let r = fit_probe(&fit, &eval, &ProbeMode::Lsq).unwrap();
    assert!((r.accuracy - 0.5).abs() < 3.0 / (n as f64).sqrt(), "{}", r.accuracy);
}

#[test]
fn probe_rejects_degenerate_labels() {
    let set = probe_set(DMatrix::zeros(5, 2), vec![1, 1, 1, 1, -1], vec![1; 5]);
    assert!(matches!(fit_probe(&set, &set, &ProbeMode::Lsq), Err(Error::DegenerateLabels(_))));
}

#[test]
fn probe_accuracy_is_scale_invariant() {
    let cfg = ExperimentConfig::fig1();
    let mut rng = stream(0, Purpose::Oracle, 1);
    let model = LinearModel::new(DMatrix::from_fn(cfg.p, cfg.dim(), |_, _| rng.random::<f64>() - 0.5)).unwrap();
    let test = testset(&cfg, 600);
    let ds = generate_dataset(&cfg).unwrap();
    for kind in [LabelKind::Class, LabelKind::Subclass] {
        let fit = ProbeSet::from_dataset(&model, &ds, kind);
        let eval = ProbeSet::from_dataset(&model, &test, kind);
        let base = fit_probe(&fit, &eval, &ProbeMode::Lsq).unwrap();
        for c in [1e-3, 7.0] {
            let scaled = fit_probe(&fit_scaled(&fit, c), &fit_scaled(&eval, c), &ProbeMode::Lsq).unwrap();
            assert_eq!(base.accuracy, scaled.accuracy, "{kind:?} scale {c}");
        }
    }
}

fn fit_scaled(set: &ProbeSet, c: f64) -> ProbeSet {
    ProbeSet { embeddings: &set.embeddings * c, ..set.clone() }
}

#[test]
fn min_norm_without_subclass_offset_collapses_exactly() {
    let cfg = ExperimentConfig::c0();
    let model = min_norm_scl(&cfg);
    let rep = collapse_report(&model, &cfg, &testset(&cfg, 2000)).unwrap();
    assert!(rep.align_v2 < 1e-12);
    assert!(rep.ratio < 1e-10);
    assert!(rep.asymptotic_collapse);
    assert!(rep.exact_collapse, "{rep:?}");
    assert!((rep.band - 3.0 / 1000f64.sqrt()).abs() < 1e-15);
}

#[test]
fn min_norm_with_subclass_offset_collapses_asymptotically() {
    let mut cfg = ExperimentConfig::c0();
    cfg.mu2 = 1.0;
    for seed in 0..3 {
        let cfg = cfg.clone().with_seed(seed);
        let rep = collapse_report(&min_norm_scl(&cfg), &cfg, &testset(&cfg, 2000)).unwrap();
        assert!(rep.ratio <= 2.0, "{rep:?}");
        assert!(rep.asymptotic_collapse, "{rep:?}");
        assert_eq!(rep.c, 2.0);
        // the W v2 direction is at chance, but the residual O(σ/√(mn)) signal is
        // still readable by a fitted probe, so the exact flag stays off
        assert!((rep.direction_subclass_accuracy - 0.5).abs() <= rep.band, "{rep:?}");
        assert!(rep.lsq_subclass_accuracy > 0.5 + rep.band, "{rep:?}");
        assert!(!rep.exact_collapse);
    }
}

#[test]
fn noncollapse_minimizer_is_flagged_neither_way() {
    let mut cfg = ExperimentConfig::c0();
    cfg.d = 4096;
    let cov = build_covariances(&generate_dataset(&cfg).unwrap()).unwrap();
    let model = gram_to_model(&noncollapse_gram(&cov, &cfg).unwrap(), cfg.p).unwrap();
    let rep = collapse_report(&model, &cfg, &testset(&cfg, 2000)).unwrap();
    assert!(!rep.asymptotic_collapse, "{rep:?}");
    assert!(!rep.exact_collapse, "{rep:?}");
    assert!(rep.conditional_subclass_accuracy > 1.0 - cfg.n_aug() as f64 / cfg.d as f64 - 0.01);
}

#[test]
fn suppression_tuple_and_rank() {
    let cfg = ExperimentConfig::fig4(3, 0.9);
    let zero = LinearModel::zeros(3, cfg.dim());
    let rep = suppression_report(&zero, &cfg).unwrap();
    let expect = [1.0, 0.64, 1.0, 0.81];
    assert_eq!(rep.tuple.len(), 4);
    for (a, b) in rep.tuple.iter().zip(expect) {
        assert!((a - b).abs() < 1e-12);
    }
    assert_eq!(rep.rank_phi1, 4);
    assert!(rep.suppressed);

    let cfg = ExperimentConfig::fig4(3, 0.7);
    let cov = build_covariances(&generate_dataset(&cfg).unwrap()).unwrap();
    let g = min_norm_for(&cov, LossKind::Ucl, cfg.p, TieRule::LowestIndex).unwrap().swap_remove(0);
    let rep = suppression_report(&gram_to_model(&g, cfg.p).unwrap(), &cfg).unwrap();
    assert_eq!(rep.rank_phi1, 3);
    assert!(!rep.suppressed);
    assert!(rep.align_v1 > 1.2);
}

#[test]
fn separation_and_silhouette_on_synthetic_clusters() {
    let cfg = ExperimentConfig::fig1();
    let test = testset(&cfg, 400);
    let ex = test.examples();
    let mut rng = stream(5, Purpose::Oracle, 2);
    let mut cluster = |gap: f64| {
        DMatrix::from_fn(ex.len(), 3, |i, j| {
            let e = &ex[i];
            let jitter = 0.1 * (rng.random::<f64>() - 0.5);
            match j {
                0 => e.y as f64 + jitter,
                1 => gap * e.y_sub as f64 + jitter,
                _ => jitter,
            }
        })
    };
    let four = cluster(1.0);
    let two = cluster(0.0);
    assert!(separation_ratio(&four, ex) > 10.0);
    assert!(separation_ratio(&two, ex) < 1.0);
    assert!(subclass_silhouette(&four, ex) > 0.5);
    assert!(subclass_silhouette(&two, ex).abs() < 0.1);
}

#[test]
fn subclass_clusters_form_then_merge_during_training() {
    let cfg = ExperimentConfig::fig1();
    let test = testset(&cfg, 500);
    let mut snaps = Vec::new();
    let opts = TrainOptions { gamma: false, ..TrainOptions::default() };
    train(&cfg, LossKind::Scl, 100, &opts, &mut |e, m| {
        if e == 45 || e == 100 {
            snaps.push(embed(m, test.examples(), &test.config));
        }
    })
    .unwrap();
    let s45 = subclass_silhouette(&snaps[0], test.examples());
    let s100 = subclass_silhouette(&snaps[1], test.examples());
    assert!(s45 > 0.0, "{s45}");
    assert!(s100 < s45, "{s100} vs {s45}");
}
