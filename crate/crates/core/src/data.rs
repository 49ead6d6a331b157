//! Synthetic originals, augmentations and test sets.
//!
//! Examples are kept symbolic (`LatentExample`) and materialized on demand in
//! the effective space of dimension `d + 1`, whose coordinate 0 is the
//! constant feature and coordinate `j ≥ 1` is the ambient direction `v_j`.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::config::{AugMode, BalanceMode, ExperimentConfig, IrrelevantMode, NoiseMode};
use crate::error::{Error, Result};
use crate::rng::{stream, Purpose};

#[derive(Clone, Debug, PartialEq)]
pub struct LatentExample {
    pub origin_id: usize,
    pub y: i8,
    pub y_sub: i8,
    /// Irrelevant feature index in `3..=K`.
    pub k: usize,
    pub rho: i8,
    /// Ambient index in `1..=d` carrying the one-hot noise.
    pub noise_index: usize,
    /// Dense ambient perturbation (entry `j` belongs to `v_{j+1}`), imperfect
    /// augmentation only.
    pub extra_noise: Option<Vec<f64>>,
    pub zeta1: f64,
    pub zeta2: f64,
}

impl LatentExample {
    /// Nonzero coordinates of the effective vector (duplicates merged).
    pub fn entries(&self, cfg: &ExperimentConfig) -> Vec<(usize, f64)> {
        let mut out: Vec<(usize, f64)> = Vec::with_capacity(5);
        let mut push = |idx: usize, val: f64| {
            if val == 0.0 {
                return;
            }
            match out.iter_mut().find(|(i, _)| *i == idx) {
                Some(slot) => slot.1 += val,
                None => out.push((idx, val)),
            }
        };
        push(0, 1.0);
        push(1, f64::from(self.y) * cfg.phi_k(1) + self.zeta1);
        push(2, f64::from(self.y_sub) * cfg.phi_k(2) + cfg.mu2 + self.zeta2);
        push(self.k, f64::from(self.rho) * cfg.phi_k(self.k));
        push(self.noise_index, cfg.sigma_xi);
        if let Some(extra) = &self.extra_noise {
            let base = out.len();
            for (j, &v) in extra.iter().enumerate() {
                if v == 0.0 {
                    continue;
                }
                match out[..base].iter_mut().find(|(i, _)| *i == j + 1) {
                    Some(slot) => slot.1 += v,
                    None => out.push((j + 1, v)),
                }
            }
        }
        out
    }
}

/// Effective vector of length `d + 1`.
pub fn materialize(example: &LatentExample, cfg: &ExperimentConfig) -> DVector<f64> {
    let mut x = DVector::zeros(cfg.dim());
    for (i, v) in example.entries(cfg) {
        x[i] += v;
    }
    x
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub config: ExperimentConfig,
    pub originals: Vec<LatentExample>,
    /// `m` consecutive augmentations per original, in origin order.
    pub augmented: Vec<LatentExample>,
    /// Indices into [`Dataset::examples`] with `y = +1` / `y = -1`.
    pub class_plus: Vec<usize>,
    pub class_minus: Vec<usize>,
}

impl Dataset {
    /// The examples the losses are defined over: the augmented set, or the
    /// originals for a test set without augmentations.
    pub fn examples(&self) -> &[LatentExample] {
        if self.augmented.is_empty() {
            &self.originals
        } else {
            &self.augmented
        }
    }

    /// Index ranges of augmentation groups within [`Dataset::examples`].
    pub fn groups(&self) -> Vec<std::ops::Range<usize>> {
        let ex = self.examples();
        let mut out = Vec::new();
        let mut start = 0;
        for i in 1..=ex.len() {
            if i == ex.len() || ex[i].origin_id != ex[start].origin_id {
                out.push(start..i);
                start = i;
            }
        }
        out
    }

    pub fn materialize_all(&self) -> DMatrix<f64> {
        let ex = self.examples();
        let mut x = DMatrix::zeros(self.config.dim(), ex.len());
        for (j, e) in ex.iter().enumerate() {
            for (i, v) in e.entries(&self.config) {
                x[(i, j)] += v;
            }
        }
        x
    }

    /// One row per example: origin_id, y, y_sub, k, rho, noise_index, then the
    /// `d + 1` effective coordinates.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        write!(w, "origin_id,y,y_sub,k,rho,noise_index")?;
        for i in 0..self.config.dim() {
            write!(w, ",x{i}")?;
        }
        writeln!(w)?;
        for e in self.examples() {
            write!(w, "{},{},{},{},{},{}", e.origin_id, e.y, e.y_sub, e.k, e.rho, e.noise_index)?;
            for v in materialize(e, &self.config).iter() {
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

fn sign(bit: usize) -> i8 {
    if bit == 0 {
        1
    } else {
        -1
    }
}

fn random_sign(rng: &mut ChaCha8Rng) -> i8 {
    if rng.random::<bool>() {
        1
    } else {
        -1
    }
}

fn partitions(examples: &[LatentExample]) -> (Vec<usize>, Vec<usize>) {
    let plus = examples.iter().enumerate().filter(|(_, e)| e.y > 0).map(|(i, _)| i).collect();
    let minus = examples.iter().enumerate().filter(|(_, e)| e.y < 0).map(|(i, _)| i).collect();
    (plus, minus)
}

/// `r` orthonormal ambient directions (columns, length `d`) supported on
/// `v_{K+1}..v_d`, fixed per original.
pub fn noise_directions(cfg: &ExperimentConfig, origin_id: usize) -> DMatrix<f64> {
    let r = match cfg.aug_mode {
        AugMode::Imperfect { noise_cov_rank, .. } => noise_cov_rank,
        AugMode::Perfect => 0,
    };
    let mut rng = stream(cfg.seed, Purpose::NoiseDirections, origin_id as u32);
    let k = cfg.k_features;
    let mut out = DMatrix::zeros(cfg.d, r);
    if r == 0 {
        return out;
    }
    let mut g = DMatrix::zeros(cfg.d - k, r);
    for j in 0..r {
        for i in 0..cfg.d - k {
            g[(i, j)] = rng.sample::<f64, _>(StandardNormal);
        }
    }
    // orthonormalize the complement block only, so feature rows stay exactly zero
    out.rows_mut(k, cfg.d - k).copy_from(&g.qr().q());
    out
}

/// One augmentation of `example`.
///
/// Perfect mode resamples the noise index (`Iid`: uniform over `1..=d`;
/// `Distinct`: uniform over `K+1..=d` minus the current index). Imperfect mode
/// keeps the index and draws `zeta1`, `zeta2` and the low-rank perturbation.
pub fn augment(
    example: &LatentExample,
    cfg: &ExperimentConfig,
    rng: &mut ChaCha8Rng,
) -> Result<LatentExample> {
    augment_with_index(example, cfg, rng, None)
}

fn augment_with_index(
    example: &LatentExample,
    cfg: &ExperimentConfig,
    rng: &mut ChaCha8Rng,
    forced: Option<usize>,
) -> Result<LatentExample> {
    let mut out = example.clone();
    match cfg.aug_mode {
        AugMode::Perfect => {
            out.extra_noise = None;
            out.zeta1 = 0.0;
            out.zeta2 = 0.0;
            out.noise_index = match (forced, cfg.noise_mode) {
                (Some(i), _) => i,
                (None, NoiseMode::Iid) => rng.random_range(1..=cfg.d),
                (None, NoiseMode::Distinct) => {
                    let lo = cfg.k_features + 1;
                    let cur = example.noise_index;
                    if cfg.d > lo && (lo..=cfg.d).contains(&cur) {
                        let j = rng.random_range(lo..cfg.d);
                        if j >= cur {
                            j + 1
                        } else {
                            j
                        }
                    } else {
                        rng.random_range(lo..=cfg.d)
                    }
                }
            };
        }
        AugMode::Imperfect {
            sigma_zeta1,
            sigma_zeta2,
            noise_cov_rank,
            noise_cov_scale,
        } => {
            if noise_cov_rank > cfg.m / 2 {
                return Err(Error::RankViolation { rank: noise_cov_rank, max: cfg.m / 2 });
            }
            let n1 = Normal::new(0.0, sigma_zeta1).map_err(|e| Error::InvalidConfig(e.to_string()))?;
            let n2 = Normal::new(0.0, sigma_zeta2).map_err(|e| Error::InvalidConfig(e.to_string()))?;
            let ng = Normal::new(0.0, noise_cov_scale)
                .map_err(|e| Error::InvalidConfig(e.to_string()))?;
            out.zeta1 = n1.sample(rng);
            out.zeta2 = n2.sample(rng);
            let u = noise_directions(cfg, example.origin_id);
            let g = DVector::from_fn(noise_cov_rank, |_, _| ng.sample(rng));
            let extra = &u * g;
            out.extra_noise = Some(extra.as_slice().to_vec());
        }
    }
    Ok(out)
}

fn draw_labels(cfg: &ExperimentConfig, rng: &mut ChaCha8Rng) -> Vec<(i8, i8, usize, i8)> {
    let n = cfg.n;
    let kk = cfg.k_features;
    match cfg.irrelevant_mode {
        IrrelevantMode::Balanced => (0..n)
            .map(|i| match cfg.balance_mode {
                BalanceMode::Exact => {
                    let c = i % cfg.combos();
                    (sign((c >> 2) & 1), sign((c >> 1) & 1), 3 + c / 8, sign(c & 1))
                }
                BalanceMode::Sampled => {
                    let y = random_sign(rng);
                    let ys = random_sign(rng);
                    let k = rng.random_range(3..=kk);
                    (y, ys, k, random_sign(rng))
                }
            })
            .collect(),
        IrrelevantMode::Unique => {
            let ks: Vec<usize> = sample(rng, kk - 2, n).into_iter().map(|j| j + 3).collect();
            ks.into_iter()
                .enumerate()
                .map(|(i, k)| match cfg.balance_mode {
                    BalanceMode::Exact => {
                        let c = i % 8;
                        (sign((c >> 2) & 1), sign((c >> 1) & 1), k, sign(c & 1))
                    }
                    BalanceMode::Sampled => {
                        let y = random_sign(rng);
                        let ys = random_sign(rng);
                        (y, ys, k, random_sign(rng))
                    }
                })
                .collect()
        }
    }
}

/// Originals and their augmentations; bit-identical for identical configs.
pub fn generate_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    cfg.validate()?;
    let n = cfg.n;
    let m = cfg.m;
    let kk = cfg.k_features;
    let mut label_rng = stream(cfg.seed, Purpose::Originals, 0);
    let mut noise_rng = stream(cfg.seed, Purpose::Originals, 1);
    let labels = draw_labels(cfg, &mut label_rng);

    let imperfect = matches!(cfg.aug_mode, AugMode::Imperfect { .. });
    let pool = cfg.d - kk;
    let mut original_noise: Vec<usize> = Vec::with_capacity(n);
    let mut aug_noise: Option<Vec<usize>> = None;
    match cfg.noise_mode {
        NoiseMode::Iid => {
            for _ in 0..n {
                original_noise.push(noise_rng.random_range(1..=cfg.d));
            }
        }
        NoiseMode::Distinct if imperfect => {
            original_noise = sample(&mut noise_rng, pool, n).into_iter().map(|j| j + kk + 1).collect();
        }
        NoiseMode::Distinct => {
            if pool >= n * (m + 1) {
                let all: Vec<usize> =
                    sample(&mut noise_rng, pool, n * (m + 1)).into_iter().map(|j| j + kk + 1).collect();
                original_noise = all[..n].to_vec();
                aug_noise = Some(all[n..].to_vec());
            } else {
                aug_noise = Some(
                    sample(&mut noise_rng, pool, n * m).into_iter().map(|j| j + kk + 1).collect(),
                );
                for _ in 0..n {
                    original_noise.push(noise_rng.random_range(kk + 1..=cfg.d));
                }
            }
        }
    }

    let originals: Vec<LatentExample> = labels
        .into_iter()
        .zip(original_noise)
        .enumerate()
        .map(|(i, ((y, y_sub, k, rho), noise_index))| LatentExample {
            origin_id: i,
            y,
            y_sub,
            k,
            rho,
            noise_index,
            extra_noise: None,
            zeta1: 0.0,
            zeta2: 0.0,
        })
        .collect();

    let mut augmented = Vec::with_capacity(n * m);
    for o in &originals {
        let mut rng = stream(cfg.seed, Purpose::Augmentation, o.origin_id as u32);
        for j in 0..m {
            let forced = aug_noise.as_ref().map(|a| a[o.origin_id * m + j]);
            augmented.push(augment_with_index(o, cfg, &mut rng, forced)?);
        }
    }
    let (class_plus, class_minus) = partitions(&augmented);
    Ok(Dataset { config: cfg.clone(), originals, augmented, class_plus, class_minus })
}

/// `n_test` fresh originals with IID noise and sampled labels, no
/// augmentations.
pub fn generate_testset(
    cfg: &ExperimentConfig,
    n_test: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Dataset> {
    if n_test == 0 {
        return Err(Error::InvalidConfig("n_test must be positive".into()));
    }
    let mut snap = cfg.clone();
    snap.n = n_test;
    snap.noise_mode = NoiseMode::Iid;
    snap.balance_mode = BalanceMode::Sampled;
    snap.irrelevant_mode = IrrelevantMode::Balanced;
    snap.aug_mode = AugMode::Perfect;
    let originals: Vec<LatentExample> = (0..n_test)
        .map(|i| {
            let y = random_sign(rng);
            let y_sub = random_sign(rng);
            let k = rng.random_range(3..=cfg.k_features);
            let rho = random_sign(rng);
            LatentExample {
                origin_id: i,
                y,
                y_sub,
                k,
                rho,
                noise_index: rng.random_range(1..=cfg.d),
                extra_noise: None,
                zeta1: 0.0,
                zeta2: 0.0,
            }
        })
        .collect();
    let (class_plus, class_minus) = partitions(&originals);
    Ok(Dataset { config: snap, originals, augmented: Vec::new(), class_plus, class_minus })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::{HashMap, HashSet};

    fn example(y: i8, y_sub: i8, k: usize, rho: i8, noise_index: usize) -> LatentExample {
        LatentExample {
            origin_id: 0,
            y,
            y_sub,
            k,
            rho,
            noise_index,
            extra_noise: None,
            zeta1: 0.0,
            zeta2: 0.0,
        }
    }

    #[test]
    fn materialize_follows_the_generative_formula() {
        let mut cfg = ExperimentConfig::fig1();
        cfg.mu2 = 1.0;
        cfg.sigma_xi = 2.0;
        let x = materialize(&example(1, 1, 3, 1, 10), &cfg);
        assert_eq!(&x.as_slice()[..5], &[1.0, 1.0, 2.0, 1.0, 0.0]);
        assert_eq!(x[10], 2.0);
        assert_eq!(x.iter().filter(|v| **v != 0.0).count(), 5);

        let c0 = ExperimentConfig::c0();
        let x = materialize(&example(-1, -1, 4, -1, 7), &c0);
        assert_eq!(&x.as_slice()[..5], &[1.0, -1.0, -1.0, 0.0, -1.0]);
        assert_eq!(x[7], 0.5);

        let mut zero = ExperimentConfig::c0();
        zero.phi = vec![0.0; 4];
        zero.sigma_xi = 0.0;
        let x = materialize(&example(1, -1, 3, 1, 9), &zero);
        assert_eq!(x[0], 1.0);
        assert_eq!(x.iter().map(|v| v.abs()).sum::<f64>(), 1.0);
    }

    #[test]
    fn c0_is_exactly_balanced_with_distinct_noise() {
        let ds = generate_dataset(&ExperimentConfig::c0()).unwrap();
        assert_eq!(ds.originals.len(), 16);
        assert_eq!(ds.augmented.len(), 32);
        let combos: HashSet<_> = ds.originals.iter().map(|e| (e.y, e.y_sub, e.k, e.rho)).collect();
        assert_eq!(combos.len(), 16);
        let idx: HashSet<_> = ds.augmented.iter().map(|e| e.noise_index).collect();
        assert_eq!(idx.len(), 32);
        assert!(idx.iter().all(|&i| (5..=64).contains(&i)));
        let mut per_origin: HashMap<usize, usize> = HashMap::new();
        for e in &ds.augmented {
            *per_origin.entry(e.origin_id).or_default() += 1;
            let o = &ds.originals[e.origin_id];
            assert_eq!((o.y, o.y_sub, o.k, o.rho), (e.y, e.y_sub, e.k, e.rho));
        }
        assert!(per_origin.values().all(|&c| c == 2));
        assert_eq!(ds.groups().len(), 16);
    }

    #[test]
    fn noise_free_augmentations_coincide() {
        let mut cfg = ExperimentConfig::c0();
        cfg.sigma_xi = 0.0;
        let ds = generate_dataset(&cfg).unwrap();
        for g in ds.groups() {
            let a = materialize(&ds.augmented[g.start], &cfg);
            let b = materialize(&ds.augmented[g.start + 1], &cfg);
            assert_eq!(a, b);
        }
    }

    #[test]
    fn perfect_augmentation_moves_only_the_noise() {
        let cfg = ExperimentConfig::c0();
        let ds = generate_dataset(&cfg).unwrap();
        let o = &ds.originals[3];
        let mut rng = stream(99, Purpose::Augmentation, 0);
        let a = augment(o, &cfg, &mut rng).unwrap();
        let diff = materialize(&a, &cfg) - materialize(o, &cfg);
        let nz: Vec<(usize, f64)> =
            diff.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(i, v)| (i, *v)).collect();
        assert_eq!(nz.len(), 2);
        assert!(nz.contains(&(o.noise_index, -0.5)));
        assert!(nz.contains(&(a.noise_index, 0.5)));
    }

    #[test]
    fn fig1_sizes() {
        let ds = generate_dataset(&ExperimentConfig::fig1()).unwrap();
        assert_eq!(ds.augmented.len(), 5000);
        assert_eq!(ds.class_plus.len() + ds.class_minus.len(), 5000);
    }

    #[test]
    fn deterministic_given_config() {
        let cfg = ExperimentConfig::c2();
        assert_eq!(generate_dataset(&cfg).unwrap(), generate_dataset(&cfg).unwrap());
        let other = generate_dataset(&cfg.clone().with_seed(1)).unwrap();
        assert_ne!(generate_dataset(&cfg).unwrap(), other);
    }

    #[test]
    fn unique_mode_gives_distinct_irrelevant_features() {
        let ds = generate_dataset(&ExperimentConfig::c2()).unwrap();
        let ks: HashSet<_> = ds.originals.iter().map(|e| e.k).collect();
        assert_eq!(ks.len(), 8);
        for g in ds.groups() {
            let idx: HashSet<_> = ds.augmented[g].iter().map(|e| e.noise_index).collect();
            assert_eq!(idx.len(), 1);
        }
    }

    #[test]
    fn testset_structure() {
        let cfg = ExperimentConfig::fig1();
        let mut rng = stream(0, Purpose::TestSet, 0);
        assert!(generate_testset(&cfg, 0, &mut rng).is_err());
        let ts = generate_testset(&cfg, 4000, &mut rng).unwrap();
        assert_eq!(ts.examples().len(), 4000);
        for e in ts.examples() {
            let x = materialize(e, &cfg);
            let active = (3..=cfg.k_features).filter(|&k| {
                let noise = if k == e.noise_index { cfg.sigma_xi } else { 0.0 };
                x[k] - noise != 0.0
            });
            assert_eq!(active.count(), 1);
        }
    }
}
