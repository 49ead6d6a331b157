//! The theorem-check suite: every closed-form and training claim of the
//! laboratory, measured on the canonical configurations and reported with a
//! pass flag per check.

use std::collections::BTreeMap;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{AugMode, ExperimentConfig};
use crate::covariance::{build_covariances, reference_spectrum, CovarianceSet};
use crate::data::{generate_dataset, generate_testset, Dataset};
use crate::error::{Error, Result};
use crate::metrics::{fit_probe, LabelKind, ProbeMode, ProbeSet};
use crate::objective::{grad, loss_matrix_fac, loss_sampled, loss_trace, LinearModel, LossKind};
use crate::rng::{stream, Purpose};
use crate::solver::{gram_to_model, loss_of_gram, min_norm_for, min_norm_gram, noncollapse_gram, GramMatrix};
use crate::spectral::{pinv, sym_eig, SymMatrix, TieRule, DEFAULT_REL_TOL};
use crate::trainer::{train, TrainOptions, TrainTrace};

#[derive(Clone, Debug, Serialize)]
pub struct CheckRecord {
    pub name: String,
    /// The claim being checked, in words.
    pub paper_ref: String,
    pub values: BTreeMap<String, f64>,
    pub thresholds: BTreeMap<String, f64>,
    pub pass: bool,
    #[serde(skip)]
    pub runtime_s: f64,
}

impl CheckRecord {
    fn new(name: &str, claim: &str) -> Self {
        Self {
            name: name.into(),
            paper_ref: claim.into(),
            values: BTreeMap::new(),
            thresholds: BTreeMap::new(),
            pass: true,
            runtime_s: 0.0,
        }
    }

    fn value(&mut self, key: &str, v: f64) -> &mut Self {
        self.values.insert(key.into(), v);
        self
    }

    fn threshold(&mut self, key: &str, v: f64) -> &mut Self {
        self.thresholds.insert(key.into(), v);
        self
    }

    /// Records a condition; the check passes only if every condition holds.
    fn require(&mut self, ok: bool) -> &mut Self {
        self.pass &= ok;
        self
    }

    pub fn line(&self) -> String {
        let vals: Vec<String> = self.values.iter().map(|(k, v)| format!("{k}={v:.4e}")).collect();
        format!("{} {} [{}]", if self.pass { "PASS" } else { "FAIL" }, self.name, vals.join(", "))
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct TheoremReport {
    pub config_hash: String,
    pub seed: u64,
    pub checks: Vec<CheckRecord>,
    pub pass: bool,
}

impl TheoremReport {
    pub fn new(config_hash: String, seed: u64, checks: Vec<CheckRecord>) -> Self {
        let pass = checks.iter().all(|c| c.pass);
        Self { config_hash, seed, checks, pass }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Per-check wall-clock seconds (kept out of the report so reruns are
    /// byte-identical).
    pub fn timings_json(&self) -> String {
        let map: BTreeMap<&str, f64> = self.checks.iter().map(|c| (c.name.as_str(), c.runtime_s)).collect();
        serde_json::to_string_pretty(&map).expect("timings serialize")
    }
}

/// The canonical configurations.
#[derive(Clone, Debug, PartialEq)]
pub struct ConfigBundle {
    pub c0: ExperimentConfig,
    pub c1: ExperimentConfig,
    pub c2: ExperimentConfig,
    pub fig1: ExperimentConfig,
}

impl Default for ConfigBundle {
    fn default() -> Self {
        Self {
            c0: ExperimentConfig::c0(),
            c1: ExperimentConfig::c1(),
            c2: ExperimentConfig::c2(),
            fig1: ExperimentConfig::fig1(),
        }
    }
}

impl ConfigBundle {
    /// Either a bundle with `[c0]`, `[c1]`, `[c2]`, `[fig1]` tables (missing
    /// ones fall back to the presets) or a single configuration used as `c0`.
    /// Overrides address the bundle (`c1.beta=1`) or the single config.
    pub fn from_toml_with_overrides(text: &str, overrides: &[String]) -> Result<Self> {
        let table: toml::Table =
            text.parse().map_err(|e: toml::de::Error| Error::InvalidConfig(e.to_string()))?;
        let keys = ["c0", "c1", "c2", "fig1"];
        let is_bundle = table.keys().any(|k| keys.contains(&k.as_str()));
        if !is_bundle {
            let c0 = ExperimentConfig::from_toml_with_overrides(text, overrides)?;
            return Ok(Self { c0, ..Self::default() });
        }
        let mut out = Self::default();
        for (name, slot) in [
            ("c0", &mut out.c0),
            ("c1", &mut out.c1),
            ("c2", &mut out.c2),
            ("fig1", &mut out.fig1),
        ] {
            let own: Vec<String> = overrides
                .iter()
                .filter_map(|o| o.strip_prefix(&format!("{name}.")).map(str::to_string))
                .collect();
            let base = match table.get(name) {
                Some(toml::Value::Table(t)) => toml::to_string(t).map_err(|e| Error::InvalidConfig(e.to_string()))?,
                Some(_) => return Err(Error::InvalidConfig(format!("[{name}] must be a table"))),
                None => slot.to_toml_string(),
            };
            *slot = ExperimentConfig::from_toml_with_overrides(&base, &own)?;
        }
        Ok(out)
    }

    pub fn to_toml_string(&self) -> String {
        let mut out = String::new();
        for (name, c) in [("c0", &self.c0), ("c1", &self.c1), ("c2", &self.c2), ("fig1", &self.fig1)] {
            let mut t = toml::Table::new();
            t.insert(name.into(), toml::Value::Table(c.to_toml_string().parse().expect("config serializes")));
            out.push_str(&toml::to_string(&t).expect("bundle serializes"));
            out.push('\n');
        }
        out
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        for c in [&mut self.c0, &mut self.c1, &mut self.c2, &mut self.fig1] {
            c.seed = seed;
        }
        self
    }

    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for c in [&self.c0, &self.c1, &self.c2, &self.fig1] {
            h.update(c.to_toml_string().as_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Clone, Debug)]
pub struct CheckOptions {
    /// Seeds for the closed-form checks.
    pub seeds: Vec<u64>,
    /// Seeds for the gradient-descent checks.
    pub train_seeds: Vec<u64>,
    pub train_epochs: usize,
    /// Skip the gradient-descent checks.
    pub skip_training: bool,
}

impl Default for CheckOptions {
    fn default() -> Self {
        Self { seeds: (0..5).collect(), train_seeds: (0..3).collect(), train_epochs: 300, skip_training: false }
    }
}

fn timed(f: impl FnOnce() -> Result<CheckRecord>) -> Result<CheckRecord> {
    let t = Instant::now();
    let mut r = f()?;
    r.runtime_s = t.elapsed().as_secs_f64();
    Ok(r)
}

fn seeded(cfg: &ExperimentConfig, seed: u64) -> ExperimentConfig {
    cfg.clone().with_seed(seed)
}

struct Solved {
    ds: Dataset,
    cov: CovarianceSet,
    gram: GramMatrix,
    model: LinearModel,
}

fn solve_min_norm(cfg: &ExperimentConfig, kind: LossKind) -> Result<Solved> {
    let ds = generate_dataset(cfg)?;
    let cov = build_covariances(&ds)?;
    let gram = min_norm_for(&cov, kind, cfg.p, TieRule::LowestIndex)?.swap_remove(0);
    let model = gram_to_model(&gram, cfg.p)?;
    Ok(Solved { ds, cov, gram, model })
}

/// Largest distance between embeddings of same-class training examples.
pub fn same_class_spread(model: &LinearModel, ds: &Dataset) -> f64 {
    let ex = ds.examples();
    let mut worst = 0.0f64;
    for idx in [&ds.class_plus, &ds.class_minus] {
        let z: Vec<DVector<f64>> = idx.iter().map(|&i| model.embed_example(&ex[i], &ds.config)).collect();
        for a in &z {
            for b in &z {
                worst = worst.max((a - b).norm());
            }
        }
    }
    worst
}

// ---------------------------------------------------------------------------
// Minimizer oracle on random (P, Q)

/// One random instance: `Q` PSD of rank `rq ≤ d`, `P = Q^{1/2} S Q^{1/2}` with
/// `S` PSD of rank `rp ≤ rq`, so that `colsp(P) ⊆ colsp(Q)`.
pub fn random_pq(seed: u64, index: u32) -> (SymMatrix, SymMatrix, usize) {
    let mut rng = stream(seed, Purpose::Oracle, index);
    let d = rng.random_range(3..=12);
    let rq = rng.random_range(2..=d);
    let rp = rng.random_range(1..=rq.min(4));
    let basis = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal)).qr().q();
    let lam: Vec<f64> = (0..rq).map(|_| rng.random_range(0.4..1.0)).collect();
    let mut root = DMatrix::zeros(d, d);
    for (j, l) in lam.iter().enumerate() {
        let u = basis.column(j);
        root += u * u.transpose() * l.sqrt();
    }
    let q = SymMatrix::gram_of_columns(&root);
    let f = DMatrix::from_fn(d, rp, |_, _| rng.sample::<f64, _>(StandardNormal) * 0.5);
    let s = SymMatrix::gram_of_columns(&f);
    let p = s.congruence(&root);
    let p_dim = rp + (index as usize % 2);
    (p, q, p_dim)
}

/// Plain gradient descent on `−2 Tr(P WᵀW) + Tr(Q WᵀW Q WᵀW)` from `w`.
pub fn descend(p: &SymMatrix, q: &SymMatrix, mut w: DMatrix<f64>, max_iter: usize) -> (DMatrix<f64>, f64) {
    let pm = p.as_matrix();
    let qm = q.as_matrix();
    let scale = sym_eig(q).map(|e| e.values[0]).unwrap_or(1.0).max(1e-12);
    let eta = 0.02 / (scale * scale);
    for _ in 0..max_iter {
        let wq = &w * qm;
        let g = (&wq * w.transpose() * &wq - &w * pm) * 4.0;
        if g.norm() < 1e-11 {
            break;
        }
        w -= g * eta;
    }
    let g = SymMatrix::gram_of_columns(&w.transpose());
    (w, loss_of_gram(&g, p, q))
}

pub fn check_minimizer_oracle(seed: u64, pairs: u32, inits: u32) -> Result<CheckRecord> {
    timed(|| {
        let mut rec = CheckRecord::new(
            "min_norm_minimizer_oracle",
            "minimum-norm Gram Q†PQ† attains the global minimum −Σλ² and has the smallest norm among minimizers",
        );
        let rows: Vec<Result<(f64, f64, f64, usize)>> = (0..pairs)
            .into_par_iter()
            .map(|i| {
                let (p, q, p_dim) = random_pq(seed, i);
                let d = p.dim();
                let g = min_norm_gram(&p, &q, p_dim)?;
                let closed_loss = loss_of_gram(&g.core, &p, &q);
                let closed_norm = g.core.trace().max(0.0).sqrt();
                let mut best = f64::INFINITY;
                let mut runs = Vec::new();
                let mut rng = stream(seed, Purpose::Oracle, 1000 + i);
                for _ in 0..inits {
                    let w0 = DMatrix::from_fn(p_dim, d, |_, _| rng.sample::<f64, _>(StandardNormal) * 0.3);
                    let (w, loss) = descend(&p, &q, w0, 20_000);
                    best = best.min(loss);
                    runs.push((loss, w.norm()));
                }
                // extra minimizers: min-norm weights plus kernel components of Q
                let w_star = crate::spectral::psd_factor(&g.core, p_dim)?;
                let ker = {
                    let e = sym_eig(&q)?;
                    let r = e.positive(DEFAULT_REL_TOL);
                    e.vectors.columns(r, d - r).into_owned()
                };
                for _ in 0..10 {
                    if ker.ncols() == 0 {
                        break;
                    }
                    let c = DMatrix::from_fn(p_dim, ker.ncols(), |_, _| rng.sample::<f64, _>(StandardNormal));
                    let w = &w_star + c * ker.transpose();
                    let gg = SymMatrix::gram_of_columns(&w.transpose());
                    runs.push((loss_of_gram(&gg, &p, &q), w.norm()));
                }
                let tol = 1e-8 * (1.0 + best.abs());
                let minimizers: Vec<f64> = runs.iter().filter(|r| r.0 <= best + tol).map(|r| r.1).collect();
                let norm_gap = minimizers.iter().map(|n| closed_norm - n).fold(f64::NEG_INFINITY, f64::max);
                Ok((closed_loss - best, norm_gap, closed_norm, minimizers.len()))
            })
            .collect();
        let mut worst_loss_gap = f64::NEG_INFINITY;
        let mut worst_norm_gap = f64::NEG_INFINITY;
        let mut min_minimizers = usize::MAX;
        for r in rows {
            let (lg, ng, _, count) = r?;
            worst_loss_gap = worst_loss_gap.max(lg);
            worst_norm_gap = worst_norm_gap.max(ng);
            min_minimizers = min_minimizers.min(count);
        }
        rec.value("max_loss_minus_best_descent", worst_loss_gap)
            .value("max_norm_minus_sampled_norm", worst_norm_gap)
            .value("min_sampled_minimizers", min_minimizers as f64)
            .threshold("loss_slack", 1e-6)
            .threshold("norm_slack", 1e-6);
        rec.require(worst_loss_gap <= 1e-6).require(worst_norm_gap <= 1e-6).require(min_minimizers > 0);
        Ok(rec)
    })
}

// ---------------------------------------------------------------------------
// Collapse

pub fn check_class_collapse(c0: &ExperimentConfig, seeds: &[u64]) -> Result<CheckRecord> {
    timed(|| {
        let mut rec = CheckRecord::new(
            "class_collapse_min_norm_mu0",
            "with μ = 0 the minimum-norm supervised minimizer has no alignment with the subclass feature",
        );
        let rows: Vec<Result<(f64, f64, f64, f64)>> = seeds
            .par_iter()
            .map(|&s| {
                let mut cfg = seeded(c0, s);
                cfg.mu2 = 0.0;
                let sol = solve_min_norm(&cfg, LossKind::Scl)?;
                let loss = loss_trace(&sol.model, &sol.cov, LossKind::Scl)?;
                let gn = grad(&sol.model, &sol.cov, LossKind::Scl)?.norm();
                Ok((sol.gram.alignment(2), sol.gram.alignment(1), loss, gn))
            })
            .collect();
        let (mut v2, mut v1, mut loss_dev, mut gmax) = (0.0f64, f64::INFINITY, 0.0f64, 0.0f64);
        for r in rows {
            let (a2, a1, l, g) = r?;
            v2 = v2.max(a2);
            v1 = v1.min(a1);
            loss_dev = loss_dev.max((l + 2.0).abs());
            gmax = gmax.max(g);
        }
        rec.value("max_align_v2", v2)
            .value("min_align_v1", v1)
            .value("max_abs_loss_plus_2", loss_dev)
            .value("max_grad_norm", gmax)
            .threshold("align_v2", 1e-8)
            .threshold("align_v1", 0.5);
        rec.require(v2 < 1e-8).require(v1 > 0.5);
        Ok(rec)
    })
}

pub fn check_noncollapse(c0: &ExperimentConfig) -> Result<CheckRecord> {
    timed(|| {
        let mut rec = CheckRecord::new(
            "noncollapse_minimizer_exists",
            "a supervised global minimizer with constant subclass alignment exists and a linear classifier separates subclasses",
        );
        let mut cfg = c0.clone();
        cfg.d = 4096;
        cfg.mu2 = 0.0;
        let ds = generate_dataset(&cfg)?;
        let cov = build_covariances(&ds)?;
        let min_g = min_norm_for(&cov, LossKind::Scl, cfg.p, TieRule::LowestIndex)?.swap_remove(0);
        let nc = noncollapse_gram(&cov, &cfg)?;
        let m = cov.m.clone();
        let l_min = loss_of_gram(&min_g.core, &cov.mplus, &m);
        let l_nc = loss_of_gram(&nc.core, &cov.mplus, &m);
        let model = gram_to_model(&nc, cfg.p)?;
        let test = generate_testset(&cfg, 2000, &mut stream(cfg.seed, Purpose::TestSet, 1))?;
        let eval = ProbeSet::from_dataset(&model, &test, LabelKind::Subclass);
        let beta = model.w.column(2).into_owned();
        let probe = fit_probe(&eval, &eval, &ProbeMode::Direction(beta))?;
        let spread = same_class_spread(&model, &ds);
        rec.value("loss_gap", (l_nc - l_min).abs())
            .value("align_v2", nc.alignment(2))
            .value("conditional_subclass_accuracy", probe.min_conditional())
            .value("accuracy_bound", 1.0 - cfg.n_aug() as f64 / cfg.d as f64)
            .value("same_class_spread", spread)
            .threshold("loss_gap", 1e-7)
            .threshold("align_v2", 0.5)
            .threshold("conditional_subclass_accuracy", 0.99);
        rec.require((l_nc - l_min).abs() < 1e-7)
            .require(nc.alignment(2) > 0.5)
            .require(probe.min_conditional() >= 0.99);
        Ok(rec)
    })
}

pub fn check_asymptotic_collapse(c0: &ExperimentConfig, seeds: &[u64]) -> Result<CheckRecord> {
    timed(|| {
        let mut rec = CheckRecord::new(
            "asymptotic_collapse_min_norm_mu1",
            "with μ ≠ 0 the minimum-norm supervised minimizer has subclass alignment O(σ_ξ/√(mn))",
        );
        let rows: Vec<Result<(f64, f64, f64)>> = seeds
            .par_iter()
            .map(|&s| {
                let mut cfg = seeded(c0, s);
                cfg.mu2 = 1.0;
                let sol = solve_min_norm(&cfg, LossKind::Scl)?;
                let bound = 2.0 * cfg.sigma_xi / (cfg.n_aug() as f64).sqrt();
                Ok((sol.gram.alignment(2), bound, sol.gram.alignment(1)))
            })
            .collect();
        let (mut worst, mut bound, mut v1) = (0.0f64, 0.0, f64::INFINITY);
        for r in rows {
            let (a, b, a1) = r?;
            worst = worst.max(a);
            bound = b;
            v1 = v1.min(a1);
        }
        rec.value("max_align_v2", worst).value("min_align_v1", v1).threshold("align_v2", bound);
        rec.require(worst <= bound);
        Ok(rec)
    })
}

// ---------------------------------------------------------------------------
// Training dynamics

pub fn fig1_trace(fig1: &ExperimentConfig, seed: u64, epochs: usize) -> Result<TrainTrace> {
    let cfg = seeded(fig1, seed);
    let opts = TrainOptions { gamma: true, probe_every: Some(1), probe_test_size: 1000, extra_alignments: vec![] };
    Ok(train(&cfg, LossKind::Scl, epochs, &opts, &mut |_, _| {})?.1)
}

pub fn learn_then_unlearn(rec: &mut CheckRecord, trace: &TrainTrace, tag: &str) {
    let (peak_epoch, peak) = trace.peak_v2();
    let early = trace.records.iter().filter(|r| r.epoch <= 150).map(|r| r.align_v2).fold(0.0, f64::max);
    let probe_peak = trace.records.iter().filter_map(|r| r.probe_sub_acc).fold(0.0, f64::max);
    let last = trace.last();
    let v1_max = trace.records.iter().map(|r| r.align_v1).fold(0.0, f64::max);
    rec.value(&format!("{tag}peak_align_v2"), peak)
        .value(&format!("{tag}peak_epoch"), peak_epoch as f64)
        .value(&format!("{tag}max_align_v2_by_150"), early)
        .value(&format!("{tag}peak_probe_sub_acc"), probe_peak)
        .value(&format!("{tag}final_over_peak_v2"), last.align_v2 / peak)
        .value(&format!("{tag}final_over_max_v1"), last.align_v1 / v1_max);
    rec.require(early > 0.3)
        .require(probe_peak >= 0.95)
        .require(last.align_v2 < 0.3 * peak)
        .require(last.align_v1 >= 0.9 * v1_max);
}

pub fn term_transition(rec: &mut CheckRecord, trace: &TrainTrace, tag: &str) {
    let (peak_epoch, _) = trace.peak_v2();
    let r0 = trace.records[0].term_ratio();
    let rf = trace.last().term_ratio();
    let cross = trace.ratio_crossing(1.5);
    let rel = cross.map_or(f64::INFINITY, |c| (c as f64 - peak_epoch as f64).abs() / peak_epoch.max(1) as f64);
    rec.value(&format!("{tag}initial_ratio"), r0)
        .value(&format!("{tag}final_ratio"), rf)
        .value(&format!("{tag}crossing_epoch"), cross.map_or(-1.0, |c| c as f64))
        .value(&format!("{tag}peak_epoch"), peak_epoch as f64)
        .value(&format!("{tag}crossing_offset_rel"), rel);
    rec.require(r0 > 10.0).require((0.5..=2.0).contains(&rf)).require(rel <= 0.25);
}

pub fn check_training(fig1: &ExperimentConfig, seeds: &[u64], epochs: usize) -> Result<Vec<CheckRecord>> {
    let t = Instant::now();
    let traces: Vec<Result<TrainTrace>> = seeds.par_iter().map(|&s| fig1_trace(fig1, s, epochs)).collect();
    let elapsed = t.elapsed().as_secs_f64();
    let mut a = CheckRecord::new(
        "learn_then_unlearn_subclass",
        "gradient descent first learns the subclass feature to Ω(1), then unlearns it while keeping the class feature",
    );
    let mut b = CheckRecord::new(
        "gradient_term_phase_transition",
        "the ratio of the two gradient-term norms falls to about 1 when the subclass alignment peaks",
    );
    a.threshold("align_v2_by_150", 0.3)
        .threshold("peak_probe_sub_acc", 0.95)
        .threshold("final_over_peak_v2", 0.3)
        .threshold("final_over_max_v1", 0.9);
    b.threshold("initial_ratio", 10.0)
        .threshold("final_ratio_low", 0.5)
        .threshold("final_ratio_high", 2.0)
        .threshold("crossing_offset_rel", 0.25);
    for (s, tr) in seeds.iter().zip(traces) {
        let tr = tr?;
        let tag = format!("seed{s}_");
        learn_then_unlearn(&mut a, &tr, &tag);
        term_transition(&mut b, &tr, &tag);
    }
    a.runtime_s = elapsed;
    b.runtime_s = elapsed;
    Ok(vec![a, b])
}

// ---------------------------------------------------------------------------
// Feature suppression

/// Min-norm unsupervised alignment(s) with `v1` for one sweep point.
pub fn fs_point(cfg: &ExperimentConfig, tie_rule: TieRule) -> Result<Vec<f64>> {
    let ds = generate_dataset(cfg)?;
    let cov = build_covariances(&ds)?;
    Ok(min_norm_for(&cov, LossKind::Ucl, cfg.p, tie_rule)?.iter().map(|g| g.alignment(1)).collect())
}

pub fn check_suppression_limited(seed: u64) -> Result<CheckRecord> {
    timed(|| {
        let mut rec = CheckRecord::new(
            "feature_suppression_limited_dimension",
            "with p = K the minimum-norm unsupervised minimizer drops v1 exactly when φ1² is not among the p largest tuple entries",
        );
        let expect = 1.0 / 0.8;
        let k3: Vec<(f64, f64)> = [0.6, 0.7, 0.79, 0.81, 0.9, 1.0]
            .par_iter()
            .map(|&phi| {
                let cfg = ExperimentConfig::fig4(3, phi).with_seed(seed);
                fs_point(&cfg, TieRule::LowestIndex).map(|a| (phi, a[0]))
            })
            .collect::<Result<_>>()?;
        let mut below_err = 0.0f64;
        let mut above = 0.0f64;
        for (phi, a) in &k3 {
            if *phi < 0.8 {
                below_err = below_err.max((a - expect).abs() / expect);
            } else {
                above = above.max(*a);
            }
        }
        let both = fs_point(&ExperimentConfig::fig4(3, 0.8).with_seed(seed), TieRule::EnumerateBoth)?;
        let learned = both.iter().any(|&a| (a - expect).abs() / expect < 0.1);
        let dropped = both.iter().any(|&a| a < 1e-8);

        let s48 = 48f64.sqrt();
        let k50: Vec<f64> = [0.7 * s48, 0.9 * s48]
            .par_iter()
            .map(|&phi| fs_point(&ExperimentConfig::fig4(50, phi).with_seed(seed), TieRule::LowestIndex).map(|a| a[0]))
            .collect::<Result<_>>()?;
        let k50_below_err = (k50[0] - expect).abs() / expect;

        rec.value("k3_max_rel_err_below", below_err)
            .value("k3_max_align_above", above)
            .value("k3_threshold_choices", both.len() as f64)
            .value("k3_threshold_learns", learned as u8 as f64)
            .value("k3_threshold_drops", dropped as u8 as f64)
            .value("k50_rel_err_below", k50_below_err)
            .value("k50_align_above", k50[1])
            .threshold("rel_err_below", 0.1)
            .threshold("align_above", 1e-8);
        rec.require(below_err < 0.1)
            .require(above < 1e-8)
            .require(learned && dropped)
            .require(k50_below_err < 0.1)
            .require(k50[1] < 1e-8);
        Ok(rec)
    })
}

pub fn check_suppression_imperfect(c2: &ExperimentConfig, seeds: &[u64]) -> Result<CheckRecord> {
    timed(|| {
        let mut rec = CheckRecord::new(
            "feature_suppression_imperfect_augmentation",
            "with many unique irrelevant features and imperfect augmentation the minimum-norm unsupervised minimizer drops v1 even when p ≥ rank(M̃)",
        );
        let rows: Vec<Result<(f64, f64, f64)>> = seeds
            .par_iter()
            .map(|&s| {
                let cfg = seeded(c2, s);
                let sol = solve_min_norm(&cfg, LossKind::Ucl)?;
                let rank = sym_eig(&sol.cov.mtilde)?.rank as f64;
                let mut ctrl = cfg.clone();
                ctrl.aug_mode = AugMode::Perfect;
                let c = solve_min_norm(&ctrl, LossKind::Ucl)?;
                Ok((sol.gram.alignment(1), rank, c.gram.alignment(1)))
            })
            .collect();
        let (mut worst, mut max_rank, mut ctrl_min) = (0.0f64, 0.0f64, f64::INFINITY);
        for r in rows {
            let (a, rank, c) = r?;
            worst = worst.max(a);
            max_rank = max_rank.max(rank);
            ctrl_min = ctrl_min.min(c);
        }
        rec.value("max_align_v1", worst)
            .value("max_rank_mtilde", max_rank)
            .value("p", c2.p as f64)
            .value("perfect_control_min_align_v1", ctrl_min)
            .threshold("align_v1", 1e-3)
            .threshold("control_align_v1", 0.1);
        rec.require(worst < 1e-3).require(max_rank <= c2.p as f64).require(ctrl_min > 0.1);
        Ok(rec)
    })
}

// ---------------------------------------------------------------------------
// Joint loss

pub fn joint_alignments(cfg: &ExperimentConfig) -> Result<[(f64, f64); 3]> {
    let ds = generate_dataset(cfg)?;
    let cov = build_covariances(&ds)?;
    let mut out = [(0.0, 0.0); 3];
    for (slot, kind) in out.iter_mut().zip([LossKind::Scl, LossKind::Ucl, LossKind::Joint(cfg.beta)]) {
        let g = min_norm_for(&cov, kind, cfg.p, TieRule::LowestIndex)?.swap_remove(0);
        *slot = (g.alignment(1), g.alignment(2));
    }
    Ok(out)
}

pub fn check_joint(c1: &ExperimentConfig, seeds: &[u64]) -> Result<CheckRecord> {
    timed(|| {
        let mut rec = CheckRecord::new(
            "joint_loss_keeps_both_features",
            "the joint loss minimizer aligns with both v1 and v2 while each single loss loses one of them",
        );
        let rows: Vec<Result<[(f64, f64); 3]>> = seeds.par_iter().map(|&s| joint_alignments(&seeded(c1, s))).collect();
        let (mut scl_v2, mut ucl_v1, mut j_v1, mut j_v2) = (0.0f64, 0.0f64, f64::INFINITY, f64::INFINITY);
        for r in rows {
            let [scl, ucl, joint] = r?;
            scl_v2 = scl_v2.max(scl.1);
            ucl_v1 = ucl_v1.max(ucl.0);
            j_v1 = j_v1.min(joint.0);
            j_v2 = j_v2.min(joint.1);
        }
        rec.value("scl_max_align_v2", scl_v2)
            .value("ucl_max_align_v1", ucl_v1)
            .value("joint_min_align_v1", j_v1)
            .value("joint_min_align_v2", j_v2)
            .value("beta", c1.beta)
            .threshold("single_loss_align", 1e-8)
            .threshold("joint_align", 0.3);
        rec.require(scl_v2 < 1e-8).require(ucl_v1 < 1e-8).require(j_v1 > 0.3).require(j_v2 > 0.3);
        Ok(rec)
    })
}

pub fn check_joint_beta_one(c1: &ExperimentConfig, seed: u64) -> Result<CheckRecord> {
    timed(|| {
        let mut rec = CheckRecord::new(
            "joint_loss_at_beta_one_reduces_to_supervised",
            "at β = 1 the joint loss is the supervised loss and loses the subclass feature",
        );
        let mut cfg = seeded(c1, seed);
        cfg.beta = 1.0;
        let [scl, _, joint] = joint_alignments(&cfg)?;
        rec.value("joint_align_v2", joint.1).value("scl_align_v2", scl.1).threshold("align_v2", 1e-8);
        rec.require(joint.1 < 1e-8);
        Ok(rec)
    })
}

// ---------------------------------------------------------------------------
// Property suite

pub fn fd_gradient_error(cov: &CovarianceSet, kind: LossKind, model: &LinearModel, h: f64) -> Result<f64> {
    let g = grad(model, cov, kind)?;
    let mut fd = DMatrix::zeros(g.nrows(), g.ncols());
    for j in 0..g.ncols() {
        if !cov.basis().touches(j) {
            continue;
        }
        for i in 0..g.nrows() {
            let mut plus = model.clone();
            plus.w[(i, j)] += h;
            let mut minus = model.clone();
            minus.w[(i, j)] -= h;
            fd[(i, j)] = (loss_trace(&plus, cov, kind)? - loss_trace(&minus, cov, kind)?) / (2.0 * h);
        }
    }
    Ok((&fd - &g).norm() / g.norm().max(1e-300))
}

pub fn random_model(p: usize, dim: usize, scale: f64, rng: &mut rand_chacha::ChaCha8Rng) -> LinearModel {
    LinearModel { w: DMatrix::from_fn(p, dim, |_, _| rng.sample::<f64, _>(StandardNormal) * scale) }
}

pub fn check_properties(c0: &ExperimentConfig) -> Result<CheckRecord> {
    timed(|| {
        let mut rec = CheckRecord::new(
            "property_suite",
            "gradient, trace/sampled identity, matrix-factorization offset, block spectrum, M†M̃ identity, kernel projection, same-class embedding equality, determinism",
        );
        let mut cfg = c0.clone();
        cfg.mu2 = 0.0;
        let ds = generate_dataset(&cfg)?;
        let cov = build_covariances(&ds)?;
        let mut rng = stream(cfg.seed, Purpose::Oracle, 77);

        let mut fd_err = 0.0f64;
        for i in 0..10 {
            let kind = [LossKind::Scl, LossKind::Ucl, LossKind::Joint(cfg.beta)][i % 3];
            let m = random_model(cfg.p, cfg.dim(), 0.3, &mut rng);
            fd_err = fd_err.max(fd_gradient_error(&cov, kind, &m, 1e-5)?);
        }

        let mut sampled_gap = 0.0f64;
        let mut offset_dev = 0.0f64;
        for _ in 0..5 {
            let m = random_model(cfg.p, cfg.dim(), 0.3, &mut rng);
            for kind in [LossKind::Scl, LossKind::Ucl, LossKind::Joint(cfg.beta)] {
                let lt = loss_trace(&m, &cov, kind)?;
                let ls = loss_sampled(&m, &ds, kind)?;
                sampled_gap = sampled_gap.max((lt - ls).abs() / (1.0 + lt.abs()));
            }
            let off = loss_matrix_fac(&m, &ds)? - loss_trace(&m, &cov, LossKind::Scl)?;
            offset_dev = offset_dev.max((off - 2.0).abs());
        }

        let reference = reference_spectrum(&cfg)?;
        let eig = sym_eig(&cov.m)?;
        let mut spec_err = 0.0f64;
        for (i, v) in eig.values.iter().enumerate() {
            let r = reference.get(i).copied().unwrap_or(0.0);
            spec_err = spec_err.max((v - r).abs());
        }

        let mt_pinv = pinv(&cov.mtilde, DEFAULT_REL_TOL)?;
        let m_pinv = pinv(&cov.m, DEFAULT_REL_TOL)?;
        let a4 = (m_pinv.as_matrix() * cov.mtilde.as_matrix() - mt_pinv.as_matrix() * cov.mtilde.as_matrix()).amax();
        let mt_eig = sym_eig(&cov.mtilde)?;
        let kk = cfg.k_features;
        let top_match = (0..=kk).map(|i| (mt_eig.values[i] - eig.values[i]).abs()).fold(0.0, f64::max);

        let mut v2 = DVector::zeros(cfg.dim());
        v2[2] = 1.0;
        let kp = cov.m_psd().kernel_project(&v2, DEFAULT_REL_TOL)?.norm();
        let r = cfg.sigma_xi / ((cfg.n_aug() as f64).sqrt() * cfg.phi_k(2));
        let kp_err = (kp - r / (1.0 + r * r).sqrt()).abs();

        let mut spread = 0.0f64;
        let mut cert = 0.0f64;
        for mu in [0.0, 1.0] {
            let mut c = cfg.clone();
            c.mu2 = mu;
            let sol = solve_min_norm(&c, LossKind::Scl)?;
            spread = spread.max(same_class_spread(&sol.model, &sol.ds));
            cert = cert.max(grad(&sol.model, &sol.cov, LossKind::Scl)?.norm());
        }
        let nc_model = gram_to_model(&noncollapse_gram(&cov, &cfg)?, cfg.p)?;
        spread = spread.max(same_class_spread(&nc_model, &ds));
        cert = cert.max(grad(&nc_model, &cov, LossKind::Scl)?.norm());

        let deterministic = {
            let mut a = Vec::new();
            let mut b = Vec::new();
            generate_dataset(&cfg)?.write_csv(&mut a)?;
            generate_dataset(&cfg)?.write_csv(&mut b)?;
            let opts = TrainOptions::default();
            let mut ta = Vec::new();
            let mut tb = Vec::new();
            train(&cfg, LossKind::Scl, 20, &opts, &mut |_, _| {})?.1.write_csv(&mut ta)?;
            train(&cfg, LossKind::Scl, 20, &opts, &mut |_, _| {})?.1.write_csv(&mut tb)?;
            a == b && ta == tb
        };

        rec.value("grad_fd_rel_err", fd_err)
            .value("sampled_vs_trace", sampled_gap)
            .value("matrix_fac_offset_dev", offset_dev)
            .value("reference_spectrum_err", spec_err)
            .value("pinv_identity_err", a4)
            .value("top_eigen_match_err", top_match)
            .value("kernel_projection_err", kp_err)
            .value("same_class_spread", spread)
            .value("minimizer_grad_norm", cert)
            .value("deterministic", deterministic as u8 as f64)
            .threshold("grad_fd_rel_err", 1e-5)
            .threshold("sampled_vs_trace", 1e-10)
            .threshold("matrix_fac_offset_dev", 1e-10)
            .threshold("reference_spectrum_err", 1e-10)
            .threshold("pinv_identity_err", 1e-8)
            .threshold("kernel_projection_err", 1e-8)
            .threshold("same_class_spread", 1e-6)
            .threshold("minimizer_grad_norm", 1e-7);
        rec.require(fd_err < 1e-5)
            .require(sampled_gap <= 1e-10)
            .require(offset_dev <= 1e-10)
            .require(spec_err <= 1e-10)
            .require(a4 <= 1e-8)
            .require(top_match <= 1e-8)
            .require(kp_err <= 1e-8)
            .require(spread < 1e-6)
            .require(cert < 1e-7)
            .require(deterministic);
        Ok(rec)
    })
}

/// Runs every check and assembles the report.
pub fn recipe_check_theorems(bundle: &ConfigBundle, opts: &CheckOptions) -> Result<TheoremReport> {
    let seed = bundle.c0.seed;
    let mut checks = vec![
        check_minimizer_oracle(seed, 20, 50)?,
        check_class_collapse(&bundle.c0, &opts.seeds)?,
        check_noncollapse(&bundle.c0)?,
        check_asymptotic_collapse(&bundle.c0, &opts.seeds)?,
        check_suppression_limited(seed)?,
        check_suppression_imperfect(&bundle.c2, &opts.seeds)?,
        check_joint(&bundle.c1, &opts.seeds)?,
        check_joint_beta_one(&bundle.c1, seed)?,
        check_properties(&bundle.c0)?,
    ];
    if !opts.skip_training {
        checks.extend(check_training(&bundle.fig1, &opts.train_seeds, opts.train_epochs)?);
    }
    Ok(TheoremReport::new(bundle.fingerprint(), seed, checks))
}
