//! Gradient-descent dynamics: initialization scale, fixed points, early
//! growth of the class direction, monotone loss and row-space invariance.

use spectral_cl::config::ExperimentConfig;
use spectral_cl::covariance::{build_covariances, CovarianceSet};
use spectral_cl::data::generate_dataset;
use spectral_cl::error::Error;
use spectral_cl::objective::{loss_trace, LinearModel, LossKind};
use spectral_cl::rng::{stream, Purpose};
use spectral_cl::solver::{gram_to_model, min_norm_for};
use spectral_cl::spectral::{pinv, TieRule, DEFAULT_REL_TOL};
use spectral_cl::trainer::{gamma_diagnostics, gd_step, init_weights, train, train_from, TrainOptions};

fn cov_of(cfg: &ExperimentConfig) -> CovarianceSet {
    build_covariances(&generate_dataset(cfg).unwrap()).unwrap()
}

fn quiet() -> TrainOptions {
    TrainOptions { gamma: false, ..TrainOptions::default() }
}

#[test]
fn init_scale_matches_chi_mean() {
    let cfg = ExperimentConfig::fig1();
    let expect = cfg.sigma_0 * (cfg.p as f64 / cfg.d as f64).sqrt();
    let draws = 100;
    let mut total = 0.0;
    for i in 0..draws {
        let w = init_weights(&cfg, &mut stream(i, Purpose::Init, 0));
        assert_eq!((w.p(), w.dim()), (cfg.p, cfg.d + 1));
        total += w.w.column(2).norm();
    }
    let mean = total / draws as f64;
    assert!((mean / expect - 1.0).abs() < 0.2, "mean {mean} vs {expect}");

    for seed in 0..5 {
        let w = init_weights(&cfg, &mut stream(seed, Purpose::Init, 0));
        assert!(w.w.column(2).norm() < 10.0 * expect);
        assert!(w.w.column(2).norm() < 4e-4);
    }
}

#[test]
fn step_is_identity_at_a_global_minimizer() {
    let cfg = ExperimentConfig::c0();
    let cov = cov_of(&cfg);
    for kind in [LossKind::Scl, LossKind::Ucl] {
        let p = if kind == LossKind::Scl { cfg.p } else { 40 };
        let g = min_norm_for(&cov, kind, p, TieRule::LowestIndex).unwrap().swap_remove(0);
        let model = gram_to_model(&g, p).unwrap();
        let next = gd_step(&model, &cov, kind, cfg.eta).unwrap();
        assert!((&next.w - &model.w).amax() < 1e-7, "{kind:?}");
    }
}

#[test]
fn class_direction_grows_at_the_predicted_rate() {
    let cfg = ExperimentConfig::fig1();
    let cov = cov_of(&cfg);
    let a1 = 1.0 + cfg.mu2 * cfg.mu2 + cfg.sigma_xi.powi(2) / cfg.n_aug() as f64;
    let rate = 1.0 + 4.0 * cfg.eta * a1;

    let w0 = init_weights(&cfg, &mut stream(cfg.seed, Purpose::Init, 0));
    let w1 = gd_step(&w0, &cov, LossKind::Scl, cfg.eta).unwrap();
    let g0 = gamma_diagnostics(&w0, &cov).unwrap().gamma1;
    let g1 = gamma_diagnostics(&w1, &cov).unwrap().gamma1;
    let step = g1 / g0;
    assert!(step >= 0.99 * rate && step < 1.1 * rate, "one-step factor {step} vs {rate}");

    let (_, trace) =
        train_from(w0, &cov, LossKind::Scl, cfg.eta, 20, &TrainOptions::default(), None, &mut |_, _| {}).unwrap();
    let g = |t: usize| trace.records[t].gamma.unwrap().gamma1.ln();
    let slope = (g(20) - g(1)) / 19.0;
    let ratio = slope / rate.ln();
    assert!((ratio - 1.0).abs() < 0.1, "log-growth {slope} vs {}", rate.ln());
}

#[test]
fn loss_is_monotone_on_the_collapse_config() {
    for mu in [0.0, 1.0] {
        let mut cfg = ExperimentConfig::c0();
        cfg.mu2 = mu;
        let (_, trace) = train(&cfg, LossKind::Scl, 300, &quiet(), &mut |_, _| {}).unwrap();
        for w in trace.records.windows(2) {
            assert!(w[1].loss <= w[0].loss + 1e-12, "epoch {}: {} > {}", w[1].epoch, w[1].loss, w[0].loss);
        }
        assert!(trace.last().loss < -1.9);
        let epochs: Vec<usize> = trace.records.iter().map(|r| r.epoch).collect();
        assert_eq!(epochs, (0..=300).collect::<Vec<_>>());
    }
}

#[test]
fn updates_stay_in_the_data_row_space() {
    let mut cfg = ExperimentConfig::c2();
    cfg.sigma_0 = 1.0;
    let cov = cov_of(&cfg);
    let w0 = init_weights(&cfg, &mut stream(0, Purpose::Init, 0));
    let (w, _) = train_from(w0.clone(), &cov, LossKind::Joint(0.5), 0.05, 20, &quiet(), None, &mut |_, _| {}).unwrap();
    let delta = &w.w - &w0.w;
    assert!(delta.norm() > 1e-3);
    let db = cov.basis().right_apply(&delta);
    // no component outside the basis
    assert!((delta.norm_squared() - db.norm_squared()).abs() < 1e-10 * delta.norm_squared());
    // and inside the basis, only on the column space of M
    let proj = pinv(&cov.m, DEFAULT_REL_TOL).unwrap().as_matrix() * cov.m.as_matrix();
    let resid = &db - &db * proj;
    assert!(resid.norm() < 1e-8 * db.norm(), "{}", resid.norm());
}

#[test]
fn divergence_reports_the_epoch() {
    let mut cfg = ExperimentConfig::c0();
    cfg.eta = 10.0;
    cfg.sigma_0 = 1.0;
    match train(&cfg, LossKind::Scl, 100, &quiet(), &mut |_, _| {}) {
        Err(Error::Divergence { epoch, max_abs }) => {
            assert!((1..=100).contains(&epoch));
            assert!(max_abs > 1e12);
        }
        other => panic!("expected divergence, got {:?}", other.map(|_| ())),
    }
}

#[test]
fn observer_sees_every_iterate() {
    let cfg = ExperimentConfig::c0();
    let cov = cov_of(&cfg);
    let w0 = init_weights(&cfg, &mut stream(0, Purpose::Init, 0)).scaled(100.0);
    let mut seen = Vec::new();
    let (last, trace) = train_from(w0, &cov, LossKind::Ucl, cfg.eta, 7, &quiet(), None, &mut |e, m: &LinearModel| {
        seen.push((e, loss_trace(m, &cov, LossKind::Ucl).unwrap()))
    })
    .unwrap();
    assert_eq!(seen.len(), 8);
    for (r, (e, l)) in trace.records.iter().zip(&seen) {
        assert_eq!(r.epoch, *e);
        assert!((r.loss - l).abs() < 1e-12);
    }
    assert!((loss_trace(&last, &cov, LossKind::Ucl).unwrap() - seen[7].1).abs() < 1e-12);
    assert!(matches!(
        train_from(last, &cov, LossKind::Ucl, cfg.eta, 0, &quiet(), None, &mut |_, _| {}),
        Err(Error::InvalidConfig(_))
    ));
}
