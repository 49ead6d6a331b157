//! Empirical covariances of a dataset and the closed-form reference spectrum.
//!
//! All matrices share one orthonormal basis: the coordinates touched by any
//! example (always including `v0..vK`) plus, for imperfect augmentation, an
//! orthonormalized span of the dense perturbations. Cores are stored in that
//! basis, so nothing of size `(d+1)²` is formed unless the data occupy it.

use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::config::{AugMode, BalanceMode, ExperimentConfig, IrrelevantMode, NoiseMode};
use crate::data::{Dataset, LatentExample};
use crate::error::{Error, Result};
use crate::spectral::{sym_eig, Basis, FactoredPsd, SymMatrix};

type Sparse = Vec<(usize, f64)>;

#[derive(Clone, Debug)]
pub struct CovarianceSet {
    basis: Basis,
    /// Second moment of all augmented examples.
    pub m: SymMatrix,
    /// `½ Σ_c c cᵀ` over the two class centers.
    pub mplus: SymMatrix,
    /// Second moment of the augmentation centers.
    pub mtilde: SymMatrix,
    /// Class centers (`y = +1`, `y = -1`) in basis coordinates.
    pub centers: [DVector<f64>; 2],
    pub n_examples: usize,
    pub n_groups: usize,
}

fn merge(into: &mut Sparse, from: &[(usize, f64)], scale: f64) {
    for &(i, v) in from {
        match into.iter_mut().find(|(j, _)| *j == i) {
            Some(slot) => slot.1 += scale * v,
            None => into.push((i, scale * v)),
        }
    }
}

fn add_outer(acc: &mut DMatrix<f64>, y: &[(usize, f64)], scale: f64) {
    for &(i, a) in y {
        for &(j, b) in y {
            acc[(i, j)] += scale * a * b;
        }
    }
}

impl CovarianceSet {
    pub fn basis(&self) -> &Basis {
        &self.basis
    }

    pub fn dim(&self) -> usize {
        self.basis.dim()
    }

    pub fn m_psd(&self) -> FactoredPsd {
        FactoredPsd::new(self.basis.clone(), self.m.clone()).expect("shapes agree")
    }

    pub fn mplus_psd(&self) -> FactoredPsd {
        FactoredPsd::new(self.basis.clone(), self.mplus.clone()).expect("shapes agree")
    }

    pub fn mtilde_psd(&self) -> FactoredPsd {
        FactoredPsd::new(self.basis.clone(), self.mtilde.clone()).expect("shapes agree")
    }

    /// Basis coordinates of the unit vector `v_j` (coordinate `j` of the
    /// effective space).
    pub fn unit(&self, j: usize) -> DVector<f64> {
        let mut e = DVector::zeros(self.dim());
        e[j] = 1.0;
        self.basis.restrict(&e)
    }

    /// The two leading eigenpairs `(a1, l1), (a2, l2)` of `M⁺`, in basis
    /// coordinates, computed from the 2×2 Gram of the class centers.
    pub fn mplus_eigenpairs(&self) -> Result<[(f64, DVector<f64>); 2]> {
        let a = DMatrix::from_columns(&[self.centers[0].clone(), self.centers[1].clone()]) * std::f64::consts::FRAC_1_SQRT_2;
        let small = sym_eig(&SymMatrix::symmetrize(a.transpose() * &a))?;
        let pair = |i: usize| {
            let s = small.values[i].max(0.0);
            let mut l = &a * small.vectors.column(i);
            if s > 0.0 {
                l /= s.sqrt();
            }
            (s, l)
        };
        Ok([pair(0), pair(1)])
    }
}

fn sparse_coords(ex: &LatentExample, cfg: &ExperimentConfig, basis: &Basis) -> Sparse {
    let nc = basis.coords().len();
    let mut y: Sparse = ex
        .entries(cfg)
        .into_iter()
        .filter_map(|(i, v)| basis.position(i).map(|p| (p, v)))
        .collect();
    if let Some(extra) = &ex.extra_noise {
        let dense = basis.dense();
        for t in 0..dense.ncols() {
            let col = dense.column(t);
            let c: f64 = extra.iter().enumerate().map(|(j, v)| col[j + 1] * v).sum();
            if c != 0.0 {
                y.push((nc + t, c));
            }
        }
    }
    y
}

/// Builds `M`, `M⁺`, `M̃` over [`Dataset::examples`].
pub fn build_covariances(ds: &Dataset) -> Result<CovarianceSet> {
    let cfg = &ds.config;
    let ex = ds.examples();
    if ds.class_plus.is_empty() {
        return Err(Error::EmptyClass(1));
    }
    if ds.class_minus.is_empty() {
        return Err(Error::EmptyClass(-1));
    }
    let dim = cfg.dim();
    let mut coords: Vec<usize> = (0..=cfg.k_features).collect();
    let mut extras: Vec<&Vec<f64>> = Vec::new();
    for e in ex {
        coords.extend([1, 2, e.k, e.noise_index]);
        if let Some(x) = &e.extra_noise {
            extras.push(x);
        }
    }
    let extra = if extras.is_empty() {
        DMatrix::zeros(dim, 0)
    } else {
        DMatrix::from_fn(dim, extras.len(), |i, j| if i == 0 { 0.0 } else { extras[j][i - 1] })
    };
    let basis = Basis::with_dense(dim, coords, extra)?;
    let r = basis.rank();

    let ys: Vec<Sparse> = ex.iter().map(|e| sparse_coords(e, cfg, &basis)).collect();
    let n = ex.len() as f64;
    let mut m = DMatrix::zeros(r, r);
    for y in &ys {
        add_outer(&mut m, y, 1.0 / n);
    }

    let center = |idx: &[usize]| {
        let mut c = DVector::zeros(r);
        for &i in idx {
            for &(p, v) in &ys[i] {
                c[p] += v;
            }
        }
        c / idx.len() as f64
    };
    let centers = [center(&ds.class_plus), center(&ds.class_minus)];
    let a = DMatrix::from_columns(&[centers[0].clone(), centers[1].clone()]);
    let mplus = SymMatrix::gram_of_columns(&a).scale(0.5);

    let groups = ds.groups();
    let mut mtilde = DMatrix::zeros(r, r);
    for g in &groups {
        let mut mean: Sparse = Vec::new();
        let w = 1.0 / g.len() as f64;
        for i in g.clone() {
            merge(&mut mean, &ys[i], w);
        }
        add_outer(&mut mtilde, &mean, 1.0 / groups.len() as f64);
    }

    Ok(CovarianceSet {
        basis,
        m: SymMatrix::symmetrize(m),
        mplus,
        mtilde: SymMatrix::symmetrize(mtilde),
        centers,
        n_examples: ex.len(),
        n_groups: groups.len(),
    })
}

/// `β·M⁺ + (1−β)·M̃` (core coordinates).
pub fn build_mbar(cov: &CovarianceSet, beta: f64) -> Result<SymMatrix> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::InvalidConfig(format!("beta = {beta} not in [0, 1]")));
    }
    Ok(cov.mtilde.lerp(&cov.mplus, beta))
}

/// The `mn` nonzero eigenvalues of `M` predicted in the exact regime
/// (perfect augmentation, distinct noise, exact balance), descending.
pub fn reference_spectrum(cfg: &ExperimentConfig) -> Result<Vec<f64>> {
    if cfg.aug_mode != AugMode::Perfect
        || cfg.noise_mode != NoiseMode::Distinct
        || cfg.balance_mode != BalanceMode::Exact
        || cfg.irrelevant_mode != IrrelevantMode::Balanced
    {
        return Err(Error::ModeUnsupported(
            "reference spectrum needs perfect augmentation, distinct noise and exact balance".into(),
        ));
    }
    let mn = cfg.n_aug();
    let kk = cfg.k_features;
    if mn < kk + 1 {
        return Err(Error::ModeUnsupported(format!("m*n = {mn} < K+1 = {}", kk + 1)));
    }
    let noise = cfg.sigma_xi * cfg.sigma_xi / mn as f64;
    let mu = cfg.mu2;
    let p2 = cfg.phi_k(2).powi(2);
    // second moment on (v0, v2): [[1, mu], [mu, phi2² + mu²]]
    let (a, b, c) = (1.0, mu, p2 + mu * mu);
    let mid = 0.5 * (a + c);
    let rad = (0.25 * (a - c).powi(2) + b * b).sqrt();
    let mut out = vec![mid + rad + noise, mid - rad + noise, cfg.phi_k(1).powi(2) + noise];
    for k in 3..=kk {
        out.push(cfg.phi_k(k).powi(2) / (kk - 2) as f64 + noise);
    }
    out.extend(std::iter::repeat_n(noise, mn - (kk + 1)));
    out.sort_by(|x, y| y.total_cmp(x));
    Ok(out)
}

/// `index,eigenvalue` rows.
pub fn write_spectrum_csv<W: Write>(values: &[f64], mut w: W) -> std::io::Result<()> {
    writeln!(w, "index,eigenvalue")?;
    for (i, v) in values.iter().enumerate() {
        writeln!(w, "{i},{v}")?;
    }
    Ok(())
}
