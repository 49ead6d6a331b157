//! Closed-form global minimizers of `−2 Tr(P G) + Tr(Q G Q G)` over Gram
//! matrices `G = WᵀW` of rank at most `p`.
//!
//! Global minimizers satisfy `G Q = [Q†P]_p`. Whitening by `Q = V Λ Vᵀ` turns
//! the problem into choosing a top-`p` eigenspace of `T = Λ^{-1/2} Vᵀ P V
//! Λ^{-1/2}`; among equivalent choices the minimum-norm one is picked, which
//! means preferring directions with large `Q`-eigenvalues inside tied groups.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::covariance::CovarianceSet;
use crate::error::{Error, Result};
use crate::objective::{LinearModel, LossKind};
use crate::spectral::{
    psd_factor, select_top, sym_eig, weighted_projector, Basis, SymMatrix, TieRule, DEFAULT_REL_TOL,
};

const COLSP_TOL: f64 = 1e-8;
const KERNEL_TOL: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    MinNorm,
    Generic,
    Constructed,
}

/// `WᵀW` stored as a core in an orthonormal basis.
#[derive(Clone, Debug)]
pub struct GramMatrix {
    basis: Basis,
    pub core: SymMatrix,
    pub rank: usize,
    pub provenance: Provenance,
}

impl GramMatrix {
    pub fn new(basis: Basis, core: SymMatrix, provenance: Provenance) -> Result<Self> {
        if basis.rank() != core.dim() {
            return Err(Error::ShapeMismatch(format!(
                "basis rank {} does not match core dimension {}",
                basis.rank(),
                core.dim()
            )));
        }
        let rank = sym_eig(&core)?.rank;
        Ok(Self { basis, core, rank, provenance })
    }

    pub fn basis(&self) -> &Basis {
        &self.basis
    }

    pub fn to_dense(&self) -> SymMatrix {
        let b = self.basis.to_dense();
        SymMatrix::symmetrize(&b * self.core.as_matrix() * b.transpose())
    }

    /// `‖G‖_F`; also `‖W‖_F²` is `Tr(G)`.
    pub fn frobenius(&self) -> f64 {
        self.core.frobenius()
    }

    /// `‖W v_j‖ = sqrt(v_jᵀ G v_j)`.
    pub fn alignment(&self, j: usize) -> f64 {
        let mut e = DVector::zeros(self.basis.dim());
        e[j] = 1.0;
        self.core.quad(&self.basis.restrict(&e)).max(0.0).sqrt()
    }
}

/// `−2 Tr(P G) + Tr(Q G Q G)` for matrices sharing one coordinate system.
pub fn loss_of_gram(g: &SymMatrix, p: &SymMatrix, q: &SymMatrix) -> f64 {
    let qg = q.as_matrix() * g.as_matrix();
    -2.0 * p.as_matrix().dot(g.as_matrix()) + qg.dot(&qg.transpose())
}

struct Whitened {
    /// `V Λ^{-1/2}` (`n × s`).
    root_inv: DMatrix<f64>,
    inv_lambda: DVector<f64>,
    /// Orthonormal basis of `colsp(Q)`.
    range: DMatrix<f64>,
}

fn whiten(q: &SymMatrix) -> Result<Whitened> {
    let e = sym_eig(q)?;
    let s = e.positive(DEFAULT_REL_TOL);
    let range = e.vectors.columns(0, s).into_owned();
    let mut root_inv = range.clone();
    for (j, mut col) in root_inv.column_iter_mut().enumerate() {
        col /= e.values[j].sqrt();
    }
    let inv_lambda = DVector::from_fn(s, |j, _| 1.0 / e.values[j]);
    Ok(Whitened { root_inv, inv_lambda, range })
}

fn check_colsp(p: &SymMatrix, w: &Whitened) -> Result<()> {
    let pn = p.frobenius();
    if pn == 0.0 {
        return Ok(());
    }
    let proj = &w.range * (w.range.transpose() * p.as_matrix());
    let residual = (p.as_matrix() - proj).norm() / pn;
    if residual > COLSP_TOL {
        return Err(Error::ColspViolation { residual });
    }
    Ok(())
}

fn check_dims(p: &SymMatrix, q: &SymMatrix) -> Result<()> {
    if p.dim() != q.dim() {
        return Err(Error::ShapeMismatch(format!("P is {0}x{0}, Q is {1}x{1}", p.dim(), q.dim())));
    }
    Ok(())
}

fn min_norm_core(p: &SymMatrix, q: &SymMatrix, p_dim: usize) -> Result<SymMatrix> {
    check_dims(p, q)?;
    let rank = sym_eig(p)?.rank;
    if rank > p_dim {
        return Err(Error::RankTooLarge { rank, p: p_dim });
    }
    let w = whiten(q)?;
    check_colsp(p, &w)?;
    // Q† P Q† = (VΛ^{-1/2}) T (VΛ^{-1/2})ᵀ with T = Λ^{-1/2}VᵀPVΛ^{-1/2}
    let t = p.congruence(&w.root_inv);
    Ok(t.congruence(&w.root_inv.transpose()))
}

fn rank_limited_cores(
    p: &SymMatrix,
    q: &SymMatrix,
    p_dim: usize,
    tie_rule: TieRule,
) -> Result<Vec<SymMatrix>> {
    check_dims(p, q)?;
    let w = whiten(q)?;
    check_colsp(p, &w)?;
    let t = p.congruence(&w.root_inv);
    let te = sym_eig(&t)?;
    let sets = select_top(&te.values, &te.vectors, p_dim, &w.inv_lambda, &w.root_inv, tie_rule)?;
    Ok(sets
        .into_iter()
        .map(|picks| {
            let h = weighted_projector(t.dim(), &picks);
            h.congruence(&w.root_inv.transpose())
        })
        .collect())
}

/// Minimum-norm global minimizer `Q† P Q†` (requires `rank(P) ≤ p`).
pub fn min_norm_gram(p: &SymMatrix, q: &SymMatrix, p_dim: usize) -> Result<GramMatrix> {
    let core = min_norm_core(p, q, p_dim)?;
    GramMatrix::new(Basis::identity(p.dim()), core, Provenance::MinNorm)
}

/// Minimum-norm global minimizer(s) when the embedding dimension may be
/// smaller than `rank(P)`. `EnumerateBoth` returns every tie-equivalent
/// choice; `LowestIndex` returns exactly one.
pub fn min_norm_gram_rank_limited(
    p: &SymMatrix,
    q: &SymMatrix,
    p_dim: usize,
    tie_rule: TieRule,
) -> Result<Vec<GramMatrix>> {
    rank_limited_cores(p, q, p_dim, tie_rule)?
        .into_iter()
        .map(|c| GramMatrix::new(Basis::identity(p.dim()), c, Provenance::MinNorm))
        .collect()
}

/// Minimum-norm minimizer(s) of a loss on a covariance set, using the
/// full-rank formula when it applies and the rank-limited selection
/// otherwise.
pub fn min_norm_for(
    cov: &CovarianceSet,
    kind: LossKind,
    p_dim: usize,
    tie_rule: TieRule,
) -> Result<Vec<GramMatrix>> {
    let p = kind.target(cov)?;
    let cores = match min_norm_core(&p, &cov.m, p_dim) {
        Ok(c) => vec![c],
        Err(Error::RankTooLarge { .. }) => rank_limited_cores(&p, &cov.m, p_dim, tie_rule)?,
        Err(e) => return Err(e),
    };
    cores
        .into_iter()
        .map(|c| GramMatrix::new(cov.basis().clone(), c, Provenance::MinNorm))
        .collect()
}

/// A supervised-loss minimizer that keeps the subclass feature:
/// `M† M⁺ M† + a aᵀ` with `a = (mn/σ_ξ²)·l⊥` and `l⊥` the projection of `v2`
/// onto the kernel of `M`.
pub fn noncollapse_gram(cov: &CovarianceSet, cfg: &ExperimentConfig) -> Result<GramMatrix> {
    if cfg.sigma_xi <= 0.0 {
        return Err(Error::DegenerateKernel { norm: 0.0 });
    }
    let base = min_norm_core(&cov.mplus, &cov.m, cfg.p)?;
    let m_psd = cov.m_psd();
    let mut v2 = DVector::zeros(cov.dim());
    v2[2] = 1.0;
    let l_perp = m_psd.kernel_project(&v2, DEFAULT_REL_TOL)?;
    let norm = l_perp.norm();
    if norm < KERNEL_TOL {
        return Err(Error::DegenerateKernel { norm });
    }
    let a = cov.basis().restrict(&l_perp) * (cov.n_examples as f64 / (cfg.sigma_xi * cfg.sigma_xi));
    let core = base.add(&SymMatrix::symmetrize(&a * a.transpose()));
    GramMatrix::new(cov.basis().clone(), core, Provenance::Constructed)
}

/// Weights `W` (`p × (d+1)`) with `WᵀW = G`.
pub fn gram_to_model(gram: &GramMatrix, p: usize) -> Result<LinearModel> {
    let f = psd_factor(&gram.core, p)?;
    LinearModel::new(gram.basis.right_transpose(&f))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn identity_pair() {
        let g = min_norm_gram(&SymMatrix::identity(3), &SymMatrix::identity(3), 3).unwrap();
        assert!((g.core.as_matrix() - DMatrix::identity(3, 3)).amax() < 1e-12);
        assert_eq!(g.rank, 3);
    }

    #[test]
    fn errors() {
        assert!(matches!(
            min_norm_gram(&SymMatrix::identity(4), &SymMatrix::identity(4), 3),
            Err(Error::RankTooLarge { rank: 4, p: 3 })
        ));
        let p = SymMatrix::from_diagonal(&[1.0, 1.0]);
        let q = SymMatrix::from_diagonal(&[1.0, 0.0]);
        assert!(matches!(min_norm_gram(&p, &q, 3), Err(Error::ColspViolation { .. })));
    }

    #[test]
    fn rank_limited_prefers_large_q_eigenvalues() {
        // Q†P = identity on a 3-dim range: every choice of 2 directions is a
        // minimizer, the cheapest ones sit on the largest Q-eigenvalues.
        let q = SymMatrix::from_diagonal(&[1.0, 4.0, 2.0]);
        let g = min_norm_gram_rank_limited(&q, &q, 2, TieRule::LowestIndex).unwrap();
        assert_eq!(g.len(), 1);
        let c = g[0].core.as_matrix();
        assert_relative_eq!(c[(1, 1)], 0.25, epsilon = 1e-12);
        assert_relative_eq!(c[(2, 2)], 0.5, epsilon = 1e-12);
        assert!(c[(0, 0)].abs() < 1e-12);
    }

    #[test]
    fn rank_limited_matches_full_rank_when_it_fits() {
        let p = SymMatrix::from_diagonal(&[2.0, 1.0, 0.0]);
        let q = SymMatrix::from_diagonal(&[1.0, 2.0, 3.0]);
        let full = min_norm_gram(&p, &q, 3).unwrap();
        let lim = min_norm_gram_rank_limited(&p, &q, 3, TieRule::LowestIndex).unwrap();
        assert!((full.core.as_matrix() - lim[0].core.as_matrix()).amax() < 1e-12);
    }

    #[test]
    fn enumerates_residual_ties() {
        let q = SymMatrix::from_diagonal(&[1.0, 2.0, 2.0]);
        let g = min_norm_gram_rank_limited(&q, &q, 2, TieRule::EnumerateBoth).unwrap();
        // the 2.0-eigenspace is the unique cheapest pair; no residual tie
        assert_eq!(g.len(), 1);
        let g = min_norm_gram_rank_limited(&q, &q, 1, TieRule::EnumerateBoth).unwrap();
        assert_eq!(g.len(), 2);
        assert_relative_eq!(g[0].alignment(1), 0.5f64.sqrt(), epsilon = 1e-12);
        assert_relative_eq!(g[1].alignment(2), 0.5f64.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn model_reproduces_gram() {
        let p = SymMatrix::from_diagonal(&[2.0, 1.0, 0.0, 0.0]);
        let q = SymMatrix::from_diagonal(&[1.0, 2.0, 3.0, 0.0]);
        let g = min_norm_gram(&p, &q, 3).unwrap();
        let w = gram_to_model(&g, 3).unwrap();
        assert!((w.w.transpose() * &w.w - g.to_dense().as_matrix()).amax() < 1e-12);
    }
}
