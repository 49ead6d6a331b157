//! Feature alignment, embeddings, linear probes and the collapse /
//! suppression verdicts.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::data::{Dataset, LatentExample};
use crate::error::{Error, Result};
use crate::objective::LinearModel;

const RIDGE: f64 = 1e-6;

/// `‖W v_k‖`, the norm of column `k` of the effective weights.
pub fn feature_alignment(model: &LinearModel, k: usize) -> Result<f64> {
    let d = model.dim() - 1;
    if k == 0 || k > d {
        return Err(Error::IndexOutOfRange { index: k, max: d });
    }
    Ok(model.w.column(k).norm())
}

/// Embeddings `W x`, one row per example.
pub fn embed(model: &LinearModel, examples: &[LatentExample], cfg: &ExperimentConfig) -> DMatrix<f64> {
    let mut z = DMatrix::zeros(examples.len(), model.p());
    for (i, e) in examples.iter().enumerate() {
        z.set_row(i, &model.embed_example(e, cfg).transpose());
    }
    z
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelKind {
    Class,
    Subclass,
}

#[derive(Clone, Debug)]
pub enum ProbeMode {
    /// Ridge least squares on standardized embeddings, `±1` targets.
    Lsq,
    /// Fixed direction in embedding space, zero intercept.
    Direction(DVector<f64>),
}

/// Embeddings with the label to predict and the class used for conditioning.
#[derive(Clone, Debug)]
pub struct ProbeSet {
    pub embeddings: DMatrix<f64>,
    pub labels: Vec<i8>,
    pub classes: Vec<i8>,
}

impl ProbeSet {
    pub fn from_dataset(model: &LinearModel, ds: &Dataset, kind: LabelKind) -> Self {
        Self::from_examples(model, ds.examples(), &ds.config, kind)
    }

    pub fn from_examples(
        model: &LinearModel,
        examples: &[LatentExample],
        cfg: &ExperimentConfig,
        kind: LabelKind,
    ) -> Self {
        let labels = examples
            .iter()
            .map(|e| match kind {
                LabelKind::Class => e.y,
                LabelKind::Subclass => e.y_sub,
            })
            .collect();
        Self {
            embeddings: embed(model, examples, cfg),
            labels,
            classes: examples.iter().map(|e| e.y).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn subset(&self, keep: impl Fn(usize) -> bool) -> Self {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| keep(i)).collect();
        Self {
            embeddings: self.embeddings.select_rows(idx.iter()),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            classes: idx.iter().map(|&i| self.classes[i]).collect(),
        }
    }

    fn check_labels(&self) -> Result<()> {
        let pos = self.labels.iter().filter(|&&l| l > 0).count();
        let neg = self.labels.len() - pos;
        if pos < 2 || neg < 2 {
            return Err(Error::DegenerateLabels(format!(
                "need at least two examples per label value, got {pos} positive and {neg} negative"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ProbeResult {
    /// Weights on the raw embedding coordinates.
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub accuracy: f64,
    /// `(class, accuracy within that class)` over nonempty classes.
    pub conditional: Vec<(i8, f64)>,
}

impl ProbeResult {
    pub fn min_conditional(&self) -> f64 {
        self.conditional.iter().map(|c| c.1).fold(f64::INFINITY, f64::min)
    }
}

fn predict_sign(score: f64) -> i8 {
    if score > 0.0 {
        1
    } else if score < 0.0 {
        -1
    } else {
        0
    }
}

fn fit_lsq(fit: &ProbeSet) -> Result<(DVector<f64>, f64)> {
    fit.check_labels()?;
    let z = &fit.embeddings;
    let (n, p) = z.shape();
    let mean = DVector::from_fn(p, |j, _| z.column(j).mean());
    let scale = DVector::from_fn(p, |j, _| {
        let s = (z.column(j).add_scalar(-mean[j])).norm() / (n as f64).sqrt();
        if s > 0.0 {
            s
        } else {
            1.0
        }
    });
    let mut a = DMatrix::from_element(n, p + 1, 1.0);
    for j in 0..p {
        for i in 0..n {
            a[(i, j)] = (z[(i, j)] - mean[j]) / scale[j];
        }
    }
    let y = DVector::from_fn(n, |i, _| f64::from(fit.labels[i]));
    let mut ata = a.transpose() * &a;
    for j in 0..=p {
        ata[(j, j)] += RIDGE;
    }
    let aty = a.transpose() * y;
    let sol = match ata.clone().cholesky() {
        Some(ch) => ch.solve(&aty),
        None => ata
            .svd(true, true)
            .solve(&aty, 1e-14)
            .map_err(|e| Error::DegenerateLabels(e.to_string()))?,
    };
    let w = DVector::from_fn(p, |j, _| sol[j] / scale[j]);
    let b = sol[p] - w.dot(&mean);
    Ok((w, b))
}

/// Fits (or fixes) a linear classifier on `fit` and scores it on `eval`.
pub fn fit_probe(fit: &ProbeSet, eval: &ProbeSet, mode: &ProbeMode) -> Result<ProbeResult> {
    if eval.is_empty() {
        return Err(Error::DegenerateLabels("empty evaluation set".into()));
    }
    let (w, b) = match mode {
        ProbeMode::Lsq => fit_lsq(fit)?,
        ProbeMode::Direction(beta) => {
            if beta.len() != eval.embeddings.ncols() {
                return Err(Error::ShapeMismatch("probe direction length differs from p".into()));
            }
            eval.check_labels()?;
            (beta.clone(), 0.0)
        }
    };
    let scores = &eval.embeddings * &w;
    let correct: Vec<bool> = (0..eval.len())
        .map(|i| predict_sign(scores[i] + b) == eval.labels[i])
        .collect();
    let acc = |idx: &mut dyn Iterator<Item = usize>| {
        let (mut hit, mut tot) = (0usize, 0usize);
        for i in idx {
            tot += 1;
            hit += correct[i] as usize;
        }
        (tot > 0).then(|| hit as f64 / tot as f64)
    };
    let accuracy = acc(&mut (0..eval.len())).unwrap_or(0.0);
    let conditional = [1i8, -1]
        .into_iter()
        .filter_map(|c| acc(&mut (0..eval.len()).filter(|&i| eval.classes[i] == c)).map(|a| (c, a)))
        .collect();
    Ok(ProbeResult { weights: w.as_slice().to_vec(), intercept: b, accuracy, conditional })
}

#[derive(Clone, Debug, Serialize)]
pub struct CollapseReport {
    pub align_v2: f64,
    /// `σ_ξ / √(mn)`.
    pub threshold: f64,
    pub ratio: f64,
    pub c: f64,
    pub asymptotic_collapse: bool,
    pub lsq_subclass_accuracy: f64,
    pub direction_subclass_accuracy: f64,
    /// Best of the two probes, worst class.
    pub conditional_subclass_accuracy: f64,
    pub band: f64,
    pub exact_collapse: bool,
}

/// Collapse verdicts for `model` on a fresh test set: the asymptotic flag
/// compares `‖W v2‖` with `c·σ_ξ/√(mn)` (`c = 2`); the exact flag requires both
/// the fitted probe and the `W v2` direction to stay within `3/√n` of chance.
pub fn collapse_report(model: &LinearModel, cfg: &ExperimentConfig, testset: &Dataset) -> Result<CollapseReport> {
    collapse_report_with(model, cfg, testset, 2.0)
}

pub fn collapse_report_with(
    model: &LinearModel,
    cfg: &ExperimentConfig,
    testset: &Dataset,
    c: f64,
) -> Result<CollapseReport> {
    let align_v2 = feature_alignment(model, 2)?;
    let threshold = cfg.sigma_xi / (cfg.n_aug() as f64).sqrt();
    let ratio = if threshold > 0.0 { align_v2 / threshold } else { f64::INFINITY };
    let all = ProbeSet::from_dataset(model, testset, LabelKind::Subclass);
    let fit = all.subset(|i| i % 2 == 0);
    let eval = all.subset(|i| i % 2 == 1);
    let lsq = fit_probe(&fit, &eval, &ProbeMode::Lsq)?;
    let beta = model.w.column(2).into_owned();
    let dir = fit_probe(&fit, &eval, &ProbeMode::Direction(beta))?;
    let band = 3.0 / (eval.len() as f64).sqrt();
    let best = lsq.accuracy.max(dir.accuracy);
    Ok(CollapseReport {
        align_v2,
        threshold,
        ratio,
        c,
        asymptotic_collapse: ratio <= c,
        lsq_subclass_accuracy: lsq.accuracy,
        direction_subclass_accuracy: dir.accuracy,
        conditional_subclass_accuracy: lsq.min_conditional().max(dir.min_conditional()),
        band,
        exact_collapse: best <= 0.5 + band,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct SuppressionReport {
    pub align_v1: f64,
    /// `[1, φ1², φ2², φ3²/(K−2), …, φK²/(K−2)]`.
    pub tuple: Vec<f64>,
    /// 1-based rank of `φ1²` within the tuple (ties count in its favour).
    pub rank_phi1: usize,
    pub suppressed: bool,
}

pub fn suppression_report(model: &LinearModel, cfg: &ExperimentConfig) -> Result<SuppressionReport> {
    let kk = cfg.k_features;
    let mut tuple = vec![1.0, cfg.phi_k(1).powi(2), cfg.phi_k(2).powi(2)];
    for k in 3..=kk {
        tuple.push(cfg.phi_k(k).powi(2) / (kk - 2) as f64);
    }
    let p1 = tuple[1];
    let rank_phi1 = 1 + tuple.iter().enumerate().filter(|&(i, &v)| i != 1 && v > p1).count();
    let align_v1 = feature_alignment(model, 1)?;
    Ok(SuppressionReport { align_v1, tuple, rank_phi1, suppressed: align_v1 < 1e-6 })
}

/// Group label `(y, y_sub)` mapped to `0..4`.
fn group_of(e: &LatentExample) -> usize {
    ((e.y > 0) as usize) * 2 + (e.y_sub > 0) as usize
}

/// Mean distance between the two subclass centroids of each class divided by
/// the mean RMS spread of the four `(y, y_sub)` groups around their centroids.
pub fn separation_ratio(z: &DMatrix<f64>, examples: &[LatentExample]) -> f64 {
    let p = z.ncols();
    let mut sums = vec![DVector::zeros(p); 4];
    let mut counts = [0usize; 4];
    for (i, e) in examples.iter().enumerate() {
        let g = group_of(e);
        sums[g] += z.row(i).transpose();
        counts[g] += 1;
    }
    let cents: Vec<DVector<f64>> =
        sums.iter().zip(counts).map(|(s, c)| s / c.max(1) as f64).collect();
    let mut spread = [0.0f64; 4];
    for (i, e) in examples.iter().enumerate() {
        let g = group_of(e);
        spread[g] += (z.row(i).transpose() - &cents[g]).norm_squared();
    }
    let intra = (0..4)
        .filter(|&g| counts[g] > 0)
        .map(|g| (spread[g] / counts[g] as f64).sqrt())
        .sum::<f64>()
        / counts.iter().filter(|&&c| c > 0).count().max(1) as f64;
    let inter = 0.5 * ((&cents[0] - &cents[1]).norm() + (&cents[2] - &cents[3]).norm());
    if intra > 0.0 {
        inter / intra
    } else {
        f64::INFINITY
    }
}

/// Mean silhouette of the subclass split within each class (clusters are the
/// two subclasses of the example's own class).
pub fn subclass_silhouette(z: &DMatrix<f64>, examples: &[LatentExample]) -> f64 {
    let n = examples.len();
    let mut total = 0.0;
    let mut used = 0usize;
    for i in 0..n {
        let (mut own, mut own_n, mut other, mut other_n) = (0.0, 0usize, 0.0, 0usize);
        for j in 0..n {
            if i == j || examples[j].y != examples[i].y {
                continue;
            }
            let d = (z.row(i) - z.row(j)).norm();
            if examples[j].y_sub == examples[i].y_sub {
                own += d;
                own_n += 1;
            } else {
                other += d;
                other_n += 1;
            }
        }
        if own_n == 0 || other_n == 0 {
            continue;
        }
        let a = own / own_n as f64;
        let b = other / other_n as f64;
        let m = a.max(b);
        total += if m > 0.0 { (b - a) / m } else { 0.0 };
        used += 1;
    }
    if used == 0 {
        0.0
    } else {
        total / used as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn alignment_basics() {
        let mut w = DMatrix::zeros(3, 6);
        w[(0, 1)] = 1.0;
        w[(1, 2)] = 1.0;
        w[(2, 3)] = 1.0;
        let m = LinearModel::new(w).unwrap();
        assert_eq!(feature_alignment(&m, 1).unwrap(), 1.0);
        assert_eq!(feature_alignment(&LinearModel::zeros(3, 6), 1).unwrap(), 0.0);
        assert!(matches!(feature_alignment(&m, 6), Err(Error::IndexOutOfRange { .. })));
        assert!(matches!(feature_alignment(&m, 0), Err(Error::IndexOutOfRange { .. })));
    }

    fn set(points: &[(f64, f64)], labels: &[i8]) -> ProbeSet {
        ProbeSet {
            embeddings: DMatrix::from_fn(points.len(), 2, |i, j| if j == 0 { points[i].0 } else { points[i].1 }),
            labels: labels.to_vec(),
            classes: vec![1; labels.len()],
        }
    }

    #[test]
    fn separable_data_is_probed_perfectly() {
        let pts = [(1.0, 0.2), (2.0, -0.1), (1.5, 0.0), (-1.0, 0.3), (-2.0, 0.1), (-1.2, -0.2)];
        let s = set(&pts, &[1, 1, 1, -1, -1, -1]);
        let r = fit_probe(&s, &s, &ProbeMode::Lsq).unwrap();
        assert_eq!(r.accuracy, 1.0);
        let r = fit_probe(&s, &s, &ProbeMode::Direction(DVector::from_vec(vec![1.0, 0.0]))).unwrap();
        assert_eq!(r.accuracy, 1.0);
    }

    #[test]
    fn degenerate_labels_rejected() {
        let s = set(&[(1.0, 0.0), (2.0, 0.0), (3.0, 0.0)], &[1, 1, -1]);
        assert!(matches!(fit_probe(&s, &s, &ProbeMode::Lsq), Err(Error::DegenerateLabels(_))));
    }

    #[test]
    fn random_labels_sit_near_chance() {
        let mut rng = crate::rng::stream(3, crate::rng::Purpose::Oracle, 0);
        let n = 4000;
        let mk = |rng: &mut rand_chacha::ChaCha8Rng| ProbeSet {
            embeddings: DMatrix::from_fn(n, 3, |_, _| rng.random::<f64>() - 0.5),
            labels: (0..n).map(|_| if rng.random::<bool>() { 1 } else { -1 }).collect(),
            classes: vec![1; n],
        };
        let fit = mk(&mut rng);
        let eval = mk(&mut rng);
        let r = fit_probe(&fit, &eval, &ProbeMode::Lsq).unwrap();
        assert!((r.accuracy - 0.5).abs() < 3.0 / (n as f64).sqrt());
    }

    #[test]
    fn suppression_tuple_arithmetic() {
        let mut cfg = ExperimentConfig::fig4(3, 0.9);
        cfg.phi = vec![0.8, 1.0, 0.9];
        let r = suppression_report(&LinearModel::zeros(3, cfg.dim()), &cfg).unwrap();
        let expect = [1.0, 0.64, 1.0, 0.81];
        for (a, b) in r.tuple.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(r.rank_phi1, 4);
        assert!(r.suppressed);
    }
}
