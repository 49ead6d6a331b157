//! Spectral contrastive losses in trace, sampled and matrix-factorization
//! form, and their gradients.
//!
//! With `G = WᵀW` every loss reads `−2 Tr(P G) + Tr(Q G Q G)` for a pair
//! `(P, Q)` of covariances; the supervised loss uses `P = M⁺`, the
//! unsupervised one `P = M̃`, the joint loss their `β`-mix, and `Q = M`
//! throughout.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::covariance::{build_mbar, CovarianceSet};
use crate::data::{Dataset, LatentExample};
use crate::error::{Error, Result};
use crate::spectral::SymMatrix;

/// Effective weights `p × (d+1)`; column 0 acts as the bias.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearModel {
    pub w: DMatrix<f64>,
}

impl LinearModel {
    pub fn new(w: DMatrix<f64>) -> Result<Self> {
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::ShapeMismatch("weights contain non-finite entries".into()));
        }
        Ok(Self { w })
    }

    pub fn zeros(p: usize, dim: usize) -> Self {
        Self { w: DMatrix::zeros(p, dim) }
    }

    pub fn p(&self) -> usize {
        self.w.nrows()
    }

    pub fn dim(&self) -> usize {
        self.w.ncols()
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self { w: &self.w * c }
    }

    /// `W x` for one example without materializing `x`.
    pub fn embed_example(&self, ex: &LatentExample, cfg: &ExperimentConfig) -> DVector<f64> {
        let mut z = DVector::zeros(self.p());
        for (i, v) in ex.entries(cfg) {
            z.axpy(v, &self.w.column(i), 1.0);
        }
        z
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Scl,
    Ucl,
    /// `β·SCL + (1−β)·UCL`.
    Joint(f64),
}

impl LossKind {
    /// `P` in basis coordinates.
    pub fn target(&self, cov: &CovarianceSet) -> Result<SymMatrix> {
        match *self {
            LossKind::Scl => Ok(cov.mplus.clone()),
            LossKind::Ucl => Ok(cov.mtilde.clone()),
            LossKind::Joint(beta) => build_mbar(cov, beta),
        }
    }

    pub fn name(&self) -> String {
        match self {
            LossKind::Scl => "scl".into(),
            LossKind::Ucl => "ucl".into(),
            LossKind::Joint(b) => format!("joint({b})"),
        }
    }
}

fn check_shape(model: &LinearModel, cov: &CovarianceSet) -> Result<()> {
    if model.dim() != cov.dim() {
        return Err(Error::ShapeMismatch(format!(
            "model has {} columns, covariances live in dimension {}",
            model.dim(),
            cov.dim()
        )));
    }
    Ok(())
}

/// Loss and gradient pieces in basis coordinates for a fixed `(P, Q)`.
pub(crate) struct Pieces {
    /// `W B P`
    pub wp: DMatrix<f64>,
    /// `(W Q Wᵀ)(W B Q)`
    pub cubic: DMatrix<f64>,
    pub loss: f64,
}

pub(crate) fn pieces(wb: &DMatrix<f64>, p: &SymMatrix, q: &SymMatrix) -> Pieces {
    let wp = wb * p.as_matrix();
    let wq = wb * q.as_matrix();
    let s = &wq * wb.transpose();
    let linear = wp.dot(wb);
    let loss = -2.0 * linear + s.norm_squared();
    let cubic = &s * wq;
    Pieces { wp, cubic, loss }
}

/// Trace form `−2 Tr(P WᵀW) + Tr(Q WᵀW Q WᵀW)`.
pub fn loss_trace(model: &LinearModel, cov: &CovarianceSet, kind: LossKind) -> Result<f64> {
    check_shape(model, cov)?;
    let p = kind.target(cov)?;
    let wb = cov.basis().right_apply(&model.w);
    Ok(pieces(&wb, &p, &cov.m).loss)
}

/// Analytic gradient `−4 W P + 4 W Q Wᵀ W Q`.
pub fn grad(model: &LinearModel, cov: &CovarianceSet, kind: LossKind) -> Result<DMatrix<f64>> {
    check_shape(model, cov)?;
    let p = kind.target(cov)?;
    let wb = cov.basis().right_apply(&model.w);
    let pc = pieces(&wb, &p, &cov.m);
    Ok(cov.basis().right_transpose(&((pc.cubic - pc.wp) * 4.0)))
}

/// Frobenius norms of `4 W P` and `4 W Q Wᵀ W Q`.
pub fn grad_term_norms(model: &LinearModel, cov: &CovarianceSet, kind: LossKind) -> Result<(f64, f64)> {
    check_shape(model, cov)?;
    let p = kind.target(cov)?;
    let wb = cov.basis().right_apply(&model.w);
    let pc = pieces(&wb, &p, &cov.m);
    Ok((4.0 * pc.wp.norm(), 4.0 * pc.cubic.norm()))
}

fn embeddings(model: &LinearModel, ds: &Dataset) -> DMatrix<f64> {
    let ex = ds.examples();
    let mut z = DMatrix::zeros(model.p(), ex.len());
    for (j, e) in ex.iter().enumerate() {
        z.set_column(j, &model.embed_example(e, &ds.config));
    }
    z
}

fn mean_pair_inner(z: &DMatrix<f64>, idx: &[usize]) -> f64 {
    let mut s = DVector::zeros(z.nrows());
    for &i in idx {
        s += z.column(i);
    }
    s.norm_squared() / (idx.len() * idx.len()) as f64
}

/// Empirical loss over explicit pairs, self-pairs included.
///
/// Positives: for the supervised loss a class is drawn uniformly, then both
/// views uniformly from it; for the unsupervised loss an original is drawn
/// uniformly, then both views uniformly from its augmentations. Negatives are
/// two independent uniform draws from all examples.
pub fn loss_sampled(model: &LinearModel, ds: &Dataset, kind: LossKind) -> Result<f64> {
    if model.dim() != ds.config.dim() {
        return Err(Error::ShapeMismatch("model and dataset dimensions differ".into()));
    }
    let z = embeddings(model, ds);
    let n = z.ncols();
    let gram = z.transpose() * &z;
    let negative = gram.norm_squared() / (n * n) as f64;
    let scl = || {
        if ds.class_plus.is_empty() || ds.class_minus.is_empty() {
            return Err(Error::EmptyClass(if ds.class_plus.is_empty() { 1 } else { -1 }));
        }
        Ok(0.5 * (mean_pair_inner(&z, &ds.class_plus) + mean_pair_inner(&z, &ds.class_minus)))
    };
    let ucl = || {
        let groups = ds.groups();
        groups
            .iter()
            .map(|g| mean_pair_inner(&z, &g.clone().collect::<Vec<_>>()))
            .sum::<f64>()
            / groups.len() as f64
    };
    let positive = match kind {
        LossKind::Scl => scl()?,
        LossKind::Ucl => ucl(),
        LossKind::Joint(beta) => beta * scl()? + (1.0 - beta) * ucl(),
    };
    Ok(-2.0 * positive + negative)
}

/// `(1/N²) Σ_ij (x_iᵀ WᵀW x_j − a_ij)²` with `a_ij = 2` for same-class pairs.
pub fn loss_matrix_fac(model: &LinearModel, ds: &Dataset) -> Result<f64> {
    if model.dim() != ds.config.dim() {
        return Err(Error::ShapeMismatch("model and dataset dimensions differ".into()));
    }
    let z = embeddings(model, ds);
    let ex = ds.examples();
    let n = ex.len();
    let gram = z.transpose() * &z;
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            let a = if ex[i].y == ex[j].y { 2.0 } else { 0.0 };
            total += (gram[(i, j)] - a).powi(2);
        }
    }
    Ok(total / (n * n) as f64)
}
