//! Symmetric eigendecomposition, pseudoinverse, spectral truncation, PSD
//! factorization and kernel projection, over dense matrices and over factored
//! `B C Bᵀ` representations.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Default relative eigenvalue cut (relative to the largest eigenvalue).
pub const DEFAULT_REL_TOL: f64 = 1e-10;

const SYMMETRY_TOL: f64 = 1e-12;
const TIE_TOL: f64 = 1e-8;
const MAX_ENUMERATED: usize = 256;

/// Resolution of eigenvalue ties when a selection has to split a tied eigenspace.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum TieRule {
    /// Prefer directions reached first by the standard basis `e0, e1, ...`.
    #[default]
    LowestIndex,
    /// Return every tie-equivalent choice.
    EnumerateBoth,
}

/// Dense symmetric matrix. Symmetry is checked on construction and then
/// enforced exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct SymMatrix(DMatrix<f64>);

impl SymMatrix {
    pub fn new(a: DMatrix<f64>) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(Error::ShapeMismatch(format!(
                "expected a square matrix, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        let asym = (&a - a.transpose()).amax();
        if asym > SYMMETRY_TOL * a.norm() {
            return Err(Error::NotSymmetric(asym));
        }
        Ok(Self::symmetrize(a))
    }

    /// Averages `a` with its transpose; for results that are symmetric up to
    /// rounding by construction.
    pub(crate) fn symmetrize(a: DMatrix<f64>) -> Self {
        let t = a.transpose();
        SymMatrix((a + t) * 0.5)
    }

    pub fn zeros(n: usize) -> Self {
        SymMatrix(DMatrix::zeros(n, n))
    }

    pub fn identity(n: usize) -> Self {
        SymMatrix(DMatrix::identity(n, n))
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        SymMatrix(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    /// `Σ a_i a_iᵀ` over the columns of `a`.
    pub fn gram_of_columns(a: &DMatrix<f64>) -> Self {
        Self::symmetrize(a * a.transpose())
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn frobenius(&self) -> f64 {
        self.0.norm()
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    pub fn scale(&self, c: f64) -> Self {
        SymMatrix(&self.0 * c)
    }

    pub fn add(&self, other: &SymMatrix) -> Self {
        SymMatrix(&self.0 + &other.0)
    }

    /// Convex combination `(1-t)·self + t·other`.
    pub fn lerp(&self, other: &SymMatrix, t: f64) -> Self {
        SymMatrix(&self.0 * (1.0 - t) + &other.0 * t)
    }

    /// `Xᵀ A X`.
    pub fn congruence(&self, x: &DMatrix<f64>) -> Self {
        Self::symmetrize(x.transpose() * &self.0 * x)
    }

    /// `vᵀ A v`.
    pub fn quad(&self, v: &DVector<f64>) -> f64 {
        v.dot(&(&self.0 * v))
    }
}

/// Eigenvalues in descending order with matching orthonormal eigenvectors
/// (columns).
#[derive(Clone, Debug)]
pub struct EigenDecomp {
    pub values: Vec<f64>,
    pub vectors: DMatrix<f64>,
    /// Number of eigenvalues above `DEFAULT_REL_TOL · λmax`.
    pub rank: usize,
}

impl EigenDecomp {
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let lam = DMatrix::from_diagonal(&DVector::from_column_slice(&self.values));
        &self.vectors * lam * self.vectors.transpose()
    }

    /// Indices of eigenvalues above `rel_tol · λmax`.
    pub fn positive(&self, rel_tol: f64) -> usize {
        let cut = rel_tol * self.values.first().copied().unwrap_or(0.0).max(0.0);
        self.values.iter().take_while(|&&v| v > cut && v > 0.0).count()
    }
}

fn flip_to_convention(v: &mut DVector<f64>) {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i].abs() > v[best].abs() * (1.0 + 1e-12) {
            best = i;
        }
    }
    if !v.is_empty() && v[best] < 0.0 {
        v.neg_mut();
    }
}

/// Full symmetric eigendecomposition with a deterministic sign convention:
/// the largest-magnitude coordinate of every eigenvector is positive.
pub fn sym_eig(a: &SymMatrix) -> Result<EigenDecomp> {
    let n = a.dim();
    if n == 0 {
        return Ok(EigenDecomp { values: vec![], vectors: DMatrix::zeros(0, 0), rank: 0 });
    }
    let eig = SymmetricEigen::try_new(a.0.clone(), f64::EPSILON, 100 * n.max(10))
        .ok_or(Error::ConvergenceFailure)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]).then(i.cmp(&j)));
    let values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = DMatrix::zeros(n, n);
    for (c, &i) in order.iter().enumerate() {
        let mut v = eig.eigenvectors.column(i).into_owned();
        flip_to_convention(&mut v);
        vectors.set_column(c, &v);
    }
    let mut out = EigenDecomp { values, vectors, rank: 0 };
    out.rank = out.positive(DEFAULT_REL_TOL);
    Ok(out)
}

/// Moore–Penrose pseudoinverse of a PSD matrix; eigenvalues below
/// `rel_tol · λmax` are treated as zero.
pub fn pinv(a: &SymMatrix, rel_tol: f64) -> Result<SymMatrix> {
    let eig = sym_eig(a)?;
    let r = eig.positive(rel_tol);
    let mut u = eig.vectors.columns(0, r).into_owned();
    for (j, mut col) in u.column_iter_mut().enumerate() {
        col /= eig.values[j].sqrt();
    }
    Ok(SymMatrix::gram_of_columns(&u))
}

/// Sum of the top-`p` eigencomponents (`[A]_p`). With `EnumerateBoth` the first
/// alternative is returned; see [`truncate_top_p_all`].
pub fn truncate_top_p(a: &SymMatrix, p: usize, tie_rule: TieRule) -> Result<SymMatrix> {
    Ok(truncate_top_p_all(a, p, tie_rule)?.swap_remove(0))
}

/// All tie-equivalent top-`p` truncations.
pub fn truncate_top_p_all(a: &SymMatrix, p: usize, tie_rule: TieRule) -> Result<Vec<SymMatrix>> {
    let n = a.dim();
    let eig = sym_eig(a)?;
    let cost = DVector::from_element(n, 1.0);
    let embed = DMatrix::identity(n, n);
    let sets = select_top(&eig.values, &eig.vectors, p, &cost, &embed, tie_rule)?;
    Ok(sets.into_iter().map(|picks| weighted_projector(n, &picks)).collect())
}

pub(crate) fn weighted_projector(n: usize, picks: &[(f64, DVector<f64>)]) -> SymMatrix {
    let mut out = DMatrix::zeros(n, n);
    for (w, v) in picks {
        out.ger(*w, v, v, 1.0);
    }
    SymMatrix::symmetrize(out)
}

/// Greedy top-`slots` selection among the positive eigenpairs `(values,
/// vectors)` of a working space.
///
/// Whole tie groups are taken while they fit. A group that straddles the slot
/// boundary is split by minimizing `cost` (a diagonal quadratic form in the
/// working coordinates); directions still tied under `cost` are resolved by
/// `tie_rule`, with lowest-index preference measured after mapping through
/// `embed`. Returns one or more alternatives, each a list of `(value, unit
/// working vector)`.
pub(crate) fn select_top(
    values: &[f64],
    vectors: &DMatrix<f64>,
    slots: usize,
    cost: &DVector<f64>,
    embed: &DMatrix<f64>,
    tie_rule: TieRule,
) -> Result<Vec<Vec<(f64, DVector<f64>)>>> {
    let n = values.len();
    let top = values.first().copied().unwrap_or(0.0).max(0.0);
    let pos_cut = DEFAULT_REL_TOL * top;
    let tie_tol = TIE_TOL * top.max(1.0);
    let mut fixed: Vec<(f64, DVector<f64>)> = Vec::new();
    let mut remaining = slots;
    let mut i = 0;
    while i < n && remaining > 0 && values[i] > pos_cut {
        let mut j = i + 1;
        while j < n && values[j] > pos_cut && (values[i] - values[j]).abs() <= tie_tol {
            j += 1;
        }
        let g = j - i;
        if g <= remaining {
            for l in i..j {
                fixed.push((values[l], vectors.column(l).into_owned()));
            }
            remaining -= g;
            i = j;
            continue;
        }
        let tau = values[i..j].iter().sum::<f64>() / g as f64;
        let e = vectors.columns(i, g).into_owned();
        let mut weighted = e.clone();
        for (r, mut row) in weighted.row_iter_mut().enumerate() {
            row *= cost[r];
        }
        let c = SymMatrix::symmetrize(e.transpose() * weighted);
        let ce = sym_eig(&c)?;
        // ascending cost order
        let asc: Vec<usize> = (0..g).rev().collect();
        let a: Vec<f64> = asc.iter().map(|&l| ce.values[l]).collect();
        let k = remaining;
        let ctol = TIE_TOL * a.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        let pivot = a[k - 1];
        let lo = (0..k).find(|&l| (a[l] - pivot).abs() <= ctol).unwrap_or(k - 1);
        let hi = (k..g).take_while(|&l| (a[l] - pivot).abs() <= ctol).last().map_or(k, |l| l + 1);
        for &l in &asc[..lo] {
            let h = &e * ce.vectors.column(l);
            fixed.push((tau, h));
        }
        if hi - lo == k - lo {
            for &l in &asc[lo..hi] {
                fixed.push((tau, &e * ce.vectors.column(l)));
            }
            return Ok(vec![fixed]);
        }
        let mut tied = DMatrix::zeros(e.nrows(), hi - lo);
        for (c_idx, &l) in asc[lo..hi].iter().enumerate() {
            tied.set_column(c_idx, &(&e * ce.vectors.column(l)));
        }
        let choices = residual_choices(&tied, embed, k - lo, tie_rule)?;
        return Ok(choices
            .into_iter()
            .map(|set| {
                let mut picks = fixed.clone();
                picks.extend(set.into_iter().map(|h| (tau, h)));
                picks
            })
            .collect());
    }
    Ok(vec![fixed])
}

/// Chooses `k` directions inside the span of the orthonormal working columns
/// `tied`, preferring directions reached first by the standard basis after
/// mapping through `embed`.
fn residual_choices(
    tied: &DMatrix<f64>,
    embed: &DMatrix<f64>,
    k: usize,
    tie_rule: TieRule,
) -> Result<Vec<Vec<DVector<f64>>>> {
    let t = tied.ncols();
    let ra = embed * tied;
    let svd = ra.clone().svd(true, true);
    let u = svd.u.as_ref().expect("requested U");
    let vt = svd.v_t.as_ref().expect("requested V^T");
    let smax = svd.singular_values.max();
    // greedy Gram–Schmidt on the projections of e_0, e_1, ...
    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(t);
    for j in 0..u.nrows() {
        if basis.len() == t {
            break;
        }
        let mut y = u.row(j).transpose();
        for b in &basis {
            let c = b.dot(&y);
            y.axpy(-c, b, 1.0);
        }
        let norm = y.norm();
        if norm > 1e-8 {
            basis.push(y / norm);
        }
    }
    // back to working coordinates: ambient U b = ra c  =>  c = V Σ⁻¹ b
    let working: Vec<DVector<f64>> = basis
        .iter()
        .map(|b| {
            let mut s = b.clone();
            for (i, v) in s.iter_mut().enumerate() {
                let sv = svd.singular_values[i];
                *v = if sv > 1e-12 * smax { *v / sv } else { 0.0 };
            }
            tied * (vt.transpose() * s)
        })
        .collect();
    match tie_rule {
        TieRule::LowestIndex => Ok(vec![orthonormalize(&working[..k.min(working.len())])]),
        TieRule::EnumerateBoth => {
            let combos = combinations(working.len(), k);
            if combos.len() > MAX_ENUMERATED {
                return Err(Error::ModeUnsupported(format!(
                    "{} tie-equivalent choices exceed the enumeration limit {MAX_ENUMERATED}",
                    combos.len()
                )));
            }
            Ok(combos
                .into_iter()
                .map(|idx| {
                    let vs: Vec<DVector<f64>> = idx.iter().map(|&i| working[i].clone()).collect();
                    orthonormalize(&vs)
                })
                .collect())
        }
    }
}

fn orthonormalize(vs: &[DVector<f64>]) -> Vec<DVector<f64>> {
    let mut out: Vec<DVector<f64>> = Vec::with_capacity(vs.len());
    for v in vs {
        let mut y = v.clone();
        for b in &out {
            let c = b.dot(&y);
            y.axpy(-c, b, 1.0);
        }
        let norm = y.norm();
        if norm > 1e-12 {
            out.push(y / norm);
        }
    }
    out
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            if out.len() > MAX_ENUMERATED {
                return;
            }
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n, k, &mut Vec::new(), &mut out);
    out
}

/// Weights `W` (`p × n`) with `WᵀW = A`: row `i` is `√λ_i u_iᵀ`, rows beyond
/// the rank are zero.
pub fn psd_factor(a: &SymMatrix, p: usize) -> Result<DMatrix<f64>> {
    let eig = sym_eig(a)?;
    let r = eig.positive(DEFAULT_REL_TOL);
    if r > p {
        return Err(Error::RankExceedsP { rank: r, p });
    }
    let mut w = DMatrix::zeros(p, a.dim());
    for i in 0..r {
        let row = eig.vectors.column(i) * eig.values[i].sqrt();
        w.set_row(i, &row.transpose());
    }
    Ok(w)
}

/// Component of `v` orthogonal to the column space of the PSD matrix `a`.
pub fn kernel_project(a: &SymMatrix, v: &DVector<f64>, rel_tol: f64) -> Result<DVector<f64>> {
    let eig = sym_eig(a)?;
    let r = eig.positive(rel_tol);
    let u = eig.vectors.columns(0, r);
    Ok(v - u * (u.transpose() * v))
}

/// Orthonormal basis made of selected standard coordinates followed by dense
/// columns that vanish on those coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct Basis {
    dim: usize,
    coords: Vec<usize>,
    dense: DMatrix<f64>,
}

impl Basis {
    pub fn identity(dim: usize) -> Self {
        Self { dim, coords: (0..dim).collect(), dense: DMatrix::zeros(dim, 0) }
    }

    /// Coordinate selectors; `coords` is sorted and deduplicated.
    pub fn coordinates(dim: usize, coords: impl IntoIterator<Item = usize>) -> Result<Self> {
        Self::with_dense(dim, coords, DMatrix::zeros(dim, 0))
    }

    /// Coordinate selectors plus the orthonormalized remainder of `extra`
    /// after removing its components on those coordinates. Columns that
    /// become (numerically) dependent are dropped.
    pub fn with_dense(
        dim: usize,
        coords: impl IntoIterator<Item = usize>,
        extra: DMatrix<f64>,
    ) -> Result<Self> {
        let mut coords: Vec<usize> = coords.into_iter().collect();
        coords.sort_unstable();
        coords.dedup();
        if let Some(&c) = coords.last() {
            if c >= dim {
                return Err(Error::IndexOutOfRange { index: c, max: dim - 1 });
            }
        }
        if extra.nrows() != dim {
            return Err(Error::ShapeMismatch(format!(
                "dense basis block has {} rows, expected {dim}",
                extra.nrows()
            )));
        }
        let mut cols: Vec<DVector<f64>> = Vec::new();
        for col in extra.column_iter() {
            let mut v = col.into_owned();
            let scale = v.norm();
            for &c in &coords {
                v[c] = 0.0;
            }
            for b in &cols {
                let c = b.dot(&v);
                v.axpy(-c, b, 1.0);
            }
            // second pass for numerical orthogonality
            for b in &cols {
                let c = b.dot(&v);
                v.axpy(-c, b, 1.0);
            }
            let norm = v.norm();
            if norm > 1e-10 * scale.max(1e-300) {
                cols.push(v / norm);
            }
        }
        let dense = if cols.is_empty() {
            DMatrix::zeros(dim, 0)
        } else {
            DMatrix::from_columns(&cols)
        };
        Ok(Self { dim, coords, dense })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rank(&self) -> usize {
        self.coords.len() + self.dense.ncols()
    }

    pub fn coords(&self) -> &[usize] {
        &self.coords
    }

    pub fn dense(&self) -> &DMatrix<f64> {
        &self.dense
    }

    /// Position of coordinate `c` among the selectors.
    pub fn position(&self, c: usize) -> Option<usize> {
        self.coords.binary_search(&c).ok()
    }

    /// Whether coordinate `c` lies in the support of some basis vector.
    pub fn touches(&self, c: usize) -> bool {
        self.position(c).is_some() || self.dense.row(c).iter().any(|v| *v != 0.0)
    }

    /// `Bᵀ v`.
    pub fn restrict(&self, v: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.rank());
        for (i, &c) in self.coords.iter().enumerate() {
            out[i] = v[c];
        }
        if self.dense.ncols() > 0 {
            let tail = self.dense.transpose() * v;
            out.rows_mut(self.coords.len(), self.dense.ncols()).copy_from(&tail);
        }
        out
    }

    /// `B y`.
    pub fn extend(&self, y: &DVector<f64>) -> DVector<f64> {
        let nc = self.coords.len();
        let mut out = if self.dense.ncols() > 0 {
            &self.dense * y.rows(nc, self.dense.ncols())
        } else {
            DVector::zeros(self.dim)
        };
        for (i, &c) in self.coords.iter().enumerate() {
            out[c] += y[i];
        }
        out
    }

    /// `W B` for a matrix with `dim` columns.
    pub fn right_apply(&self, w: &DMatrix<f64>) -> DMatrix<f64> {
        let nc = self.coords.len();
        let mut out = DMatrix::zeros(w.nrows(), self.rank());
        for (i, &c) in self.coords.iter().enumerate() {
            out.set_column(i, &w.column(c));
        }
        if self.dense.ncols() > 0 {
            let tail = w * &self.dense;
            out.columns_mut(nc, self.dense.ncols()).copy_from(&tail);
        }
        out
    }

    /// `W += Y Bᵀ` for `Y` with `rank` columns.
    pub fn add_right_transpose(&self, w: &mut DMatrix<f64>, y: &DMatrix<f64>) {
        let nc = self.coords.len();
        for (i, &c) in self.coords.iter().enumerate() {
            let mut col = w.column_mut(c);
            col += y.column(i);
        }
        if self.dense.ncols() > 0 {
            w.gemm(1.0, &y.columns(nc, self.dense.ncols()), &self.dense.transpose(), 1.0);
        }
    }

    /// `Y Bᵀ` as a fresh matrix.
    pub fn right_transpose(&self, y: &DMatrix<f64>) -> DMatrix<f64> {
        let mut w = DMatrix::zeros(y.nrows(), self.dim);
        self.add_right_transpose(&mut w, y);
        w
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        self.right_transpose(&DMatrix::identity(self.rank(), self.rank())).transpose()
    }
}

/// `B C Bᵀ` with orthonormal `B` (`dim × r`) and symmetric PSD core `C`.
#[derive(Clone, Debug)]
pub struct FactoredPsd {
    basis: Basis,
    core: SymMatrix,
}

impl FactoredPsd {
    pub fn new(basis: Basis, core: SymMatrix) -> Result<Self> {
        if basis.rank() != core.dim() {
            return Err(Error::ShapeMismatch(format!(
                "basis rank {} does not match core dimension {}",
                basis.rank(),
                core.dim()
            )));
        }
        Ok(Self { basis, core })
    }

    pub fn basis(&self) -> &Basis {
        &self.basis
    }

    pub fn core(&self) -> &SymMatrix {
        &self.core
    }

    pub fn dim(&self) -> usize {
        self.basis.dim()
    }

    pub fn to_dense(&self) -> SymMatrix {
        let b = self.basis.to_dense();
        SymMatrix::symmetrize(&b * self.core.as_matrix() * b.transpose())
    }

    /// `A v`.
    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        self.basis.extend(&(self.core.as_matrix() * self.basis.restrict(v)))
    }

    /// Thin decomposition: `r` eigenpairs, the remaining `dim - r` eigenvalues
    /// are zero.
    pub fn eig(&self) -> Result<EigenDecomp> {
        let e = sym_eig(&self.core)?;
        let vectors = self.basis.right_transpose(&e.vectors.transpose()).transpose();
        Ok(EigenDecomp { values: e.values, vectors, rank: e.rank })
    }

    pub fn pinv(&self, rel_tol: f64) -> Result<FactoredPsd> {
        Ok(Self { basis: self.basis.clone(), core: pinv(&self.core, rel_tol)? })
    }

    /// Component of `v` orthogonal to the column space.
    pub fn kernel_project(&self, v: &DVector<f64>, rel_tol: f64) -> Result<DVector<f64>> {
        let e = sym_eig(&self.core)?;
        let r = e.positive(rel_tol);
        let u = e.vectors.columns(0, r);
        let coeff = u.transpose() * self.basis.restrict(v);
        Ok(v - self.basis.extend(&(u * coeff)))
    }
}
