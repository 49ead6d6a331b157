//! Full-batch gradient descent with per-epoch diagnostics.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::covariance::{build_covariances, CovarianceSet};
use crate::data::{generate_dataset, generate_testset, Dataset};
use crate::error::{Error, Result};
use crate::metrics::{fit_probe, LabelKind, ProbeMode, ProbeSet};
use crate::objective::{pieces, LinearModel, LossKind};
use crate::rng::{stream, Purpose};
use crate::spectral::SymMatrix;

const DIVERGENCE_LIMIT: f64 = 1e12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Gamma {
    pub gamma1: f64,
    pub gamma2: f64,
    pub gamma_perp: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub align_v1: f64,
    pub align_v2: f64,
    /// `(k, ‖W v_k‖)` for the extra features requested in the options.
    pub align_extra: Vec<(usize, f64)>,
    pub term1_norm: f64,
    pub term2_norm: f64,
    pub gamma: Option<Gamma>,
    pub probe_sub_acc: Option<f64>,
    pub probe_class_acc: Option<f64>,
}

impl EpochRecord {
    pub fn term_ratio(&self) -> f64 {
        self.term1_norm / self.term2_norm
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct TrainTrace {
    pub records: Vec<EpochRecord>,
}

impl TrainTrace {
    /// Epoch and value of the largest `‖W v2‖`.
    pub fn peak_v2(&self) -> (usize, f64) {
        self.records
            .iter()
            .fold((0, f64::NEG_INFINITY), |acc, r| if r.align_v2 > acc.1 { (r.epoch, r.align_v2) } else { acc })
    }

    /// First epoch whose gradient-term ratio drops below `level`.
    pub fn ratio_crossing(&self, level: f64) -> Option<usize> {
        self.records.iter().find(|r| r.term_ratio() < level).map(|r| r.epoch)
    }

    pub fn last(&self) -> &EpochRecord {
        self.records.last().expect("trace has at least the initial record")
    }

    /// CSV with columns epoch, loss, align_v1, align_v2, term1_norm,
    /// term2_norm, gamma1, gamma2, gamma_perp, probe_sub_acc,
    /// probe_class_acc (blank where not sampled).
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(
            w,
            "epoch,loss,align_v1,align_v2,term1_norm,term2_norm,gamma1,gamma2,gamma_perp,probe_sub_acc,probe_class_acc"
        )?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.records {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{},{}",
                r.epoch,
                r.loss,
                r.align_v1,
                r.align_v2,
                r.term1_norm,
                r.term2_norm,
                opt(r.gamma.map(|g| g.gamma1)),
                opt(r.gamma.map(|g| g.gamma2)),
                opt(r.gamma.map(|g| g.gamma_perp)),
                opt(r.probe_sub_acc),
                opt(r.probe_class_acc),
            )?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct TrainOptions {
    /// Record Γ-diagnostics every epoch.
    pub gamma: bool,
    /// Probe cadence in epochs; `None` disables probing.
    pub probe_every: Option<usize>,
    pub probe_test_size: usize,
    /// Extra feature indices whose alignment is recorded.
    pub extra_alignments: Vec<usize>,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self { gamma: true, probe_every: None, probe_test_size: 1000, extra_alignments: Vec::new() }
    }
}

/// Train/test examples used for the in-training probes.
pub struct ProbeData<'a> {
    pub train: &'a Dataset,
    pub test: &'a Dataset,
}

/// `W0` with i.i.d. `N(0, σ0²/d)` entries.
pub fn init_weights(cfg: &ExperimentConfig, rng: &mut ChaCha8Rng) -> LinearModel {
    let sd = cfg.sigma_0 / (cfg.d as f64).sqrt();
    let w = DMatrix::from_fn(cfg.p, cfg.dim(), |_, _| sd * rng.sample::<f64, _>(StandardNormal));
    LinearModel { w }
}

fn check_divergence(wb: &DMatrix<f64>, epoch: usize) -> Result<()> {
    let mut max_abs = 0.0f64;
    for v in wb.iter() {
        if !v.is_finite() {
            return Err(Error::Divergence { epoch, max_abs: f64::INFINITY });
        }
        max_abs = max_abs.max(v.abs());
    }
    if max_abs > DIVERGENCE_LIMIT {
        return Err(Error::Divergence { epoch, max_abs });
    }
    Ok(())
}

/// One update `W ← W + η(4WP − 4WQWᵀWQ)`.
pub fn gd_step(model: &LinearModel, cov: &CovarianceSet, kind: LossKind, eta: f64) -> Result<LinearModel> {
    let g = crate::objective::grad(model, cov, kind)?;
    let w = &model.w - g * eta;
    check_divergence(&w, 1)?;
    Ok(LinearModel { w })
}

/// Directions used by the Γ-diagnostics, in basis coordinates.
pub struct GammaDirections {
    l1: DVector<f64>,
    l2: DVector<f64>,
    l_perp: DVector<f64>,
}

impl GammaDirections {
    /// `l1⁺`, `l2⁺`: leading eigenvectors of `M⁺`; `l⊥`: unit vector in
    /// `span{v2, l1⁺}` orthogonal to `l1⁺`.
    pub fn new(cov: &CovarianceSet) -> Result<Self> {
        let [(_, l1), (_, l2)] = cov.mplus_eigenpairs()?;
        let v2 = cov.unit(2);
        let mut perp = &v2 - &l1 * l1.dot(&v2);
        let n = perp.norm();
        if n > 1e-12 {
            perp /= n;
        } else {
            perp.fill(0.0);
        }
        Ok(Self { l1, l2, l_perp: perp })
    }

    fn measure(&self, wb: &DMatrix<f64>) -> Gamma {
        Gamma {
            gamma1: (wb * &self.l1).norm(),
            gamma2: (wb * &self.l2).norm(),
            gamma_perp: (wb * &self.l_perp).norm(),
        }
    }

    pub fn l1(&self) -> &DVector<f64> {
        &self.l1
    }
}

/// `‖W l1⁺‖`, `‖W l2⁺‖`, `‖W l⊥‖`.
pub fn gamma_diagnostics(model: &LinearModel, cov: &CovarianceSet) -> Result<Gamma> {
    let dirs = GammaDirections::new(cov)?;
    Ok(dirs.measure(&cov.basis().right_apply(&model.w)))
}

/// Runs `epochs` full-batch updates from `init`, recording epochs
/// `0..=epochs`. `observer` sees every iterate (including the initial one)
/// and may snapshot it.
pub fn train_from(
    init: LinearModel,
    cov: &CovarianceSet,
    kind: LossKind,
    eta: f64,
    epochs: usize,
    opts: &TrainOptions,
    probes: Option<&ProbeData>,
    observer: &mut dyn FnMut(usize, &LinearModel),
) -> Result<(LinearModel, TrainTrace)> {
    if epochs == 0 {
        return Err(Error::InvalidConfig("epochs must be positive".into()));
    }
    if init.dim() != cov.dim() {
        return Err(Error::ShapeMismatch("initial weights do not match the covariance dimension".into()));
    }
    let basis = cov.basis();
    let p_mat: SymMatrix = kind.target(cov)?;
    let dirs = if opts.gamma { Some(GammaDirections::new(cov)?) } else { None };
    let pos = |j: usize| basis.position(j);
    let mut model = init;
    let mut wb = basis.right_apply(&model.w);
    let mut trace = TrainTrace::default();
    for epoch in 0..=epochs {
        let pc = pieces(&wb, &p_mat, &cov.m);
        let col_norm = |j: usize| match pos(j) {
            Some(c) => wb.column(c).norm(),
            None => model.w.column(j).norm(),
        };
        let (probe_sub_acc, probe_class_acc) = match (probes, opts.probe_every) {
            (Some(pd), Some(every)) if every > 0 && epoch % every == 0 => {
                let sync = sync_model(&model, &wb, basis);
                let sub = probe_accuracy(&sync, pd, LabelKind::Subclass)?;
                let cls = probe_accuracy(&sync, pd, LabelKind::Class)?;
                (Some(sub), Some(cls))
            }
            _ => (None, None),
        };
        trace.records.push(EpochRecord {
            epoch,
            loss: pc.loss,
            align_v1: col_norm(1),
            align_v2: col_norm(2),
            align_extra: opts.extra_alignments.iter().map(|&k| (k, col_norm(k))).collect(),
            term1_norm: 4.0 * pc.wp.norm(),
            term2_norm: 4.0 * pc.cubic.norm(),
            gamma: dirs.as_ref().map(|d| d.measure(&wb)),
            probe_sub_acc,
            probe_class_acc,
        });
        let synced = sync_model(&model, &wb, basis);
        observer(epoch, &synced);
        model = synced;
        if epoch == epochs {
            break;
        }
        let delta = (pc.wp - pc.cubic) * (4.0 * eta);
        wb += &delta;
        check_divergence(&wb, epoch + 1)?;
    }
    Ok((model, trace))
}

/// Writes the basis-coordinate weights back into the ambient model. The
/// complement of the basis never changes during training.
fn sync_model(model: &LinearModel, wb: &DMatrix<f64>, basis: &crate::spectral::Basis) -> LinearModel {
    let old = basis.right_apply(&model.w);
    let mut w = model.w.clone();
    basis.add_right_transpose(&mut w, &(wb - old));
    LinearModel { w }
}

fn probe_accuracy(model: &LinearModel, pd: &ProbeData, kind: LabelKind) -> Result<f64> {
    let fit = ProbeSet::from_dataset(model, pd.train, kind);
    let eval = ProbeSet::from_dataset(model, pd.test, kind);
    Ok(fit_probe(&fit, &eval, &ProbeMode::Lsq)?.accuracy)
}

/// Generates the dataset and test set of `cfg`, initializes from the seed and
/// trains for `epochs`.
pub fn train(
    cfg: &ExperimentConfig,
    kind: LossKind,
    epochs: usize,
    opts: &TrainOptions,
    observer: &mut dyn FnMut(usize, &LinearModel),
) -> Result<(LinearModel, TrainTrace)> {
    let ds = generate_dataset(cfg)?;
    let cov = build_covariances(&ds)?;
    let test = match opts.probe_every {
        Some(_) => Some(generate_testset(
            cfg,
            opts.probe_test_size,
            &mut stream(cfg.seed, Purpose::TestSet, 0),
        )?),
        None => None,
    };
    let probes = test.as_ref().map(|t| ProbeData { train: &ds, test: t });
    let init = init_weights(cfg, &mut stream(cfg.seed, Purpose::Init, 0));
    train_from(init, &cov, kind, cfg.eta, epochs, opts, probes.as_ref(), observer)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objective::{grad, loss_trace};

    #[test]
    fn zero_is_a_fixed_point() {
        let ds = generate_dataset(&ExperimentConfig::c0()).unwrap();
        let cov = build_covariances(&ds).unwrap();
        let w = LinearModel::zeros(3, 65);
        let next = gd_step(&w, &cov, LossKind::Scl, 0.05).unwrap();
        assert_eq!(next.w.amax(), 0.0);
        let g = gamma_diagnostics(&w, &cov).unwrap();
        assert_eq!((g.gamma1, g.gamma2, g.gamma_perp), (0.0, 0.0, 0.0));
    }

    #[test]
    fn tiny_init_scale_gives_tiny_weights() {
        let mut cfg = ExperimentConfig::c0();
        cfg.sigma_0 = 1e-300;
        let w = init_weights(&cfg, &mut stream(0, Purpose::Init, 0));
        assert!(w.w.amax() < 1e-290);
    }

    #[test]
    fn train_matches_repeated_steps() {
        let cfg = ExperimentConfig::c0();
        let ds = generate_dataset(&cfg).unwrap();
        let cov = build_covariances(&ds).unwrap();
        let init = init_weights(&cfg, &mut stream(0, Purpose::Init, 0)).scaled(300.0);
        let (last, trace) =
            train_from(init.clone(), &cov, LossKind::Scl, 0.05, 5, &TrainOptions::default(), None, &mut |_, _| {})
                .unwrap();
        let mut w = init;
        for _ in 0..5 {
            w = gd_step(&w, &cov, LossKind::Scl, 0.05).unwrap();
        }
        assert!((&last.w - &w.w).amax() < 1e-12);
        assert_eq!(trace.records.len(), 6);
        assert!((trace.last().loss - loss_trace(&w, &cov, LossKind::Scl).unwrap()).abs() < 1e-12);
        let _ = grad(&w, &cov, LossKind::Scl).unwrap();
    }

    #[test]
    fn huge_step_diverges() {
        let mut cfg = ExperimentConfig::c0();
        cfg.eta = 10.0;
        cfg.sigma_0 = 1.0;
        let err = train(&cfg, LossKind::Scl, 200, &TrainOptions::default(), &mut |_, _| {}).unwrap_err();
        assert!(matches!(err, Error::Divergence { .. }));
    }

    #[test]
    fn mu_zero_makes_l_perp_equal_v2() {
        let ds = generate_dataset(&ExperimentConfig::c0()).unwrap();
        let cov = build_covariances(&ds).unwrap();
        let dirs = GammaDirections::new(&cov).unwrap();
        let v2 = cov.unit(2);
        assert!(dirs.l1().dot(&v2).abs() < 1e-12);
        assert!((dirs.l_perp.clone() - v2).norm() < 1e-12);
    }
}
