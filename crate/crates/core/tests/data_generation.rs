use std::collections::HashSet;

use nalgebra::{DMatrix, DVector};
use spectral_cl::config::{AugMode, ExperimentConfig};
use spectral_cl::data::{augment, generate_dataset, generate_testset, materialize, noise_directions, LatentExample};
use spectral_cl::error::Error;
use spectral_cl::rng::{stream, Purpose};

fn example(y: i8, y_sub: i8, k: usize, rho: i8, noise_index: usize) -> LatentExample {
    LatentExample { origin_id: 0, y, y_sub, k, rho, noise_index, extra_noise: None, zeta1: 0.0, zeta2: 0.0 }
}

#[test]
fn c0_enumerates_every_combination_once() {
    let ds = generate_dataset(&ExperimentConfig::c0()).unwrap();
    assert_eq!(ds.originals.len(), 16);
    assert_eq!(ds.augmented.len(), 32);
    let combos: HashSet<(i8, i8, usize, i8)> = ds.originals.iter().map(|e| (e.y, e.y_sub, e.k, e.rho)).collect();
    assert_eq!(combos.len(), 16);
    let noise: HashSet<usize> = ds.augmented.iter().map(|e| e.noise_index).collect();
    assert_eq!(noise.len(), 32);
    assert!(noise.iter().all(|&i| (5..=64).contains(&i)));
}

#[test]
fn distinct_noise_is_orthogonal_to_everything_else() {
    let cfg = ExperimentConfig::c1();
    let ds = generate_dataset(&cfg).unwrap();
    let x = ds.materialize_all();
    let kk = cfg.k_features;
    for (i, a) in ds.augmented.iter().enumerate() {
        assert!(a.noise_index > kk);
        for b in &ds.augmented[i + 1..] {
            assert_ne!(a.noise_index, b.noise_index);
        }
    }
    // noise coordinates carry only σ_ξ: each column has one nonzero beyond K
    for j in 0..x.ncols() {
        let tail = x.column(j).rows(kk + 1, cfg.d - kk).iter().filter(|v| **v != 0.0).count();
        assert_eq!(tail, 1);
    }
}

#[test]
fn zero_noise_gives_identical_augmentations() {
    let mut cfg = ExperimentConfig::c0();
    cfg.sigma_xi = 0.0;
    let ds = generate_dataset(&cfg).unwrap();
    for g in ds.groups() {
        let first = materialize(&ds.augmented[g.start], &cfg);
        for i in g {
            assert_eq!(materialize(&ds.augmented[i], &cfg), first);
        }
    }
}

#[test]
fn fig1_has_5000_augmented_examples() {
    let ds = generate_dataset(&ExperimentConfig::fig1()).unwrap();
    assert_eq!(ds.originals.len(), 1000);
    assert_eq!(ds.augmented.len(), 5000);
}

#[test]
fn perfect_augmentation_moves_one_noise_coordinate() {
    let cfg = ExperimentConfig::c0();
    let ds = generate_dataset(&cfg).unwrap();
    let orig = &ds.originals[3];
    let mut rng = stream(9, Purpose::Augmentation, 123);
    for _ in 0..20 {
        let aug = augment(orig, &cfg, &mut rng).unwrap();
        let diff = materialize(&aug, &cfg) - materialize(orig, &cfg);
        let changed: Vec<usize> = (0..diff.len()).filter(|&i| diff[i] != 0.0).collect();
        assert_eq!(changed, {
            let mut v = vec![orig.noise_index, aug.noise_index];
            v.sort();
            v
        });
        assert_eq!(diff[orig.noise_index], -0.5);
        assert_eq!(diff[aug.noise_index], 0.5);
    }
}

#[test]
fn imperfect_perturbation_covariance_matches_its_definition() {
    let cfg = ExperimentConfig::c2();
    let AugMode::Imperfect { sigma_zeta1, sigma_zeta2, noise_cov_scale, .. } = cfg.aug_mode else {
        unreachable!()
    };
    let ds = generate_dataset(&cfg).unwrap();
    let orig = &ds.originals[2];
    let base = materialize(orig, &cfg);
    let u = noise_directions(&cfg, orig.origin_id);
    assert!(u.rows(0, cfg.k_features).amax() == 0.0, "directions avoid the feature span");

    let draws = 10_000;
    let dim = cfg.dim();
    let mut rng = stream(5, Purpose::Augmentation, 77);
    let mut deltas = DMatrix::zeros(dim, draws);
    for t in 0..draws {
        let a = augment(orig, &cfg, &mut rng).unwrap();
        assert_eq!(a.noise_index, orig.noise_index);
        deltas.set_column(t, &(materialize(&a, &cfg) - &base));
    }
    let mean = deltas.column_mean();
    let cov = &deltas * deltas.transpose() / draws as f64;

    let mut expect = DMatrix::zeros(dim, dim);
    expect[(1, 1)] = sigma_zeta1 * sigma_zeta1;
    expect[(2, 2)] = sigma_zeta2 * sigma_zeta2;
    let mut shifted = DMatrix::zeros(dim, u.ncols());
    shifted.rows_mut(1, cfg.d).copy_from(&u);
    expect += &shifted * shifted.transpose() * (noise_cov_scale * noise_cov_scale);

    let scale = expect.norm();
    // standard error of the mean is sqrt(tr Σ / draws)
    let se = (expect.trace() / draws as f64).sqrt();
    assert!(mean.norm() < 5.0 * se, "mean {} vs standard error {se}", mean.norm());
    let rel = (&cov - &expect).norm() / scale;
    assert!(rel < 0.1, "relative covariance error {rel}");

    // independent augmentations of the same original are uncorrelated
    let half = draws / 2;
    let cross = deltas.columns(0, half) * deltas.columns(half, half).transpose() / half as f64;
    assert!(cross.norm() / scale < 0.1);
}

#[test]
fn augmentations_of_one_original_share_index_and_directions() {
    let cfg = ExperimentConfig::c2();
    let ds = generate_dataset(&cfg).unwrap();
    for g in ds.groups() {
        let first = &ds.augmented[g.start];
        let u = noise_directions(&cfg, first.origin_id);
        for i in g.clone() {
            let a = &ds.augmented[i];
            assert_eq!(a.noise_index, first.noise_index);
            let e = DVector::from_vec(a.extra_noise.clone().unwrap());
            // perturbation lies in the span of the per-origin directions
            let resid = &e - &u * (u.transpose() * &e);
            assert!(resid.norm() < 1e-12 * (1.0 + e.norm()));
        }
        assert_ne!(ds.augmented[g.start].zeta1, ds.augmented[g.start + 1].zeta1);
    }
}

#[test]
fn materialize_examples() {
    let mut cfg = ExperimentConfig::fig1();
    let x = materialize(&example(1, 1, 3, 1, 10), &cfg);
    let mut expect = DVector::zeros(cfg.dim());
    expect[0] = 1.0;
    expect[1] = 1.0;
    expect[2] = 2.0;
    expect[3] = 1.0;
    expect[10] = 2.0;
    assert_eq!(x, expect);

    cfg.phi = vec![0.0; 4];
    cfg.mu2 = 0.0;
    cfg.sigma_xi = 0.0;
    let x = materialize(&example(-1, 1, 4, 1, 7), &cfg);
    assert_eq!(x.iter().filter(|v| **v != 0.0).count(), 1);
    assert_eq!(x[0], 1.0);

    let c0 = ExperimentConfig::c0();
    let x = materialize(&example(-1, -1, 4, -1, 20), &c0);
    assert_eq!(&x.as_slice()[..5], &[1.0, -1.0, -1.0, 0.0, -1.0]);
    assert_eq!(x[20], 0.5);
}

#[test]
fn materialized_norms_follow_the_formula() {
    let mut cfg = ExperimentConfig::c1();
    cfg.mu2 = 0.3;
    let ds = generate_dataset(&cfg).unwrap();
    for e in &ds.augmented {
        let x = materialize(e, &cfg);
        let expect = 1.0
            + cfg.phi_k(1).powi(2)
            + (e.y_sub as f64 * cfg.phi_k(2) + cfg.mu2).powi(2)
            + cfg.phi_k(e.k).powi(2)
            + cfg.sigma_xi.powi(2);
        assert!((x.norm_squared() - expect).abs() < 1e-12);
    }
}

#[test]
fn testset_structure_and_balance() {
    let cfg = ExperimentConfig::fig1();
    let mut rng = stream(0, Purpose::TestSet, 0);
    assert!(matches!(generate_testset(&cfg, 0, &mut rng), Err(Error::InvalidConfig(_))));
    for seed in 0..3 {
        let ts = generate_testset(&cfg, 4000, &mut stream(seed, Purpose::TestSet, 0)).unwrap();
        let ex = ts.examples();
        assert_eq!(ex.len(), 4000);
        for e in ex {
            let x = materialize(e, &ts.config);
            let noise_free = |k: usize| x[k] - if k == e.noise_index { cfg.sigma_xi } else { 0.0 };
            let nonzero: Vec<usize> = (3..=cfg.k_features).filter(|&k| noise_free(k) != 0.0).collect();
            assert_eq!(nonzero, vec![e.k]);
        }
        let band = 3.0 / (4000f64).sqrt();
        let fy = ex.iter().filter(|e| e.y > 0).count() as f64 / 4000.0;
        let fs = ex.iter().filter(|e| e.y_sub > 0).count() as f64 / 4000.0;
        assert!((fy - 0.5).abs() < band && (fs - 0.5).abs() < band);
    }
}

#[test]
fn generation_is_deterministic_and_seed_sensitive() {
    let cfg = ExperimentConfig::c2();
    let (mut a, mut b, mut c) = (Vec::new(), Vec::new(), Vec::new());
    generate_dataset(&cfg).unwrap().write_csv(&mut a).unwrap();
    generate_dataset(&cfg).unwrap().write_csv(&mut b).unwrap();
    generate_dataset(&cfg.clone().with_seed(1)).unwrap().write_csv(&mut c).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn infeasible_configs_are_rejected() {
    let mut cfg = ExperimentConfig::c0();
    cfg.n = 15;
    assert!(matches!(generate_dataset(&cfg), Err(Error::BalanceInfeasible { .. })));
    let mut cfg = ExperimentConfig::c0();
    cfg.d = 30;
    assert!(matches!(generate_dataset(&cfg), Err(Error::DimensionTooSmall { .. })));
    let mut cfg = ExperimentConfig::c2();
    cfg.n = 300;
    assert!(generate_dataset(&cfg).is_err());
    let mut cfg = ExperimentConfig::c2();
    cfg.aug_mode = AugMode::Imperfect { sigma_zeta1: 0.1, sigma_zeta2: 0.1, noise_cov_rank: 3, noise_cov_scale: 0.1 };
    assert!(matches!(generate_dataset(&cfg), Err(Error::RankViolation { rank: 3, max: 2 })));
}
