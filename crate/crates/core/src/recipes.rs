//! Figure recipes: each returns its data and has a writer that emits the CSV
//! (canonical) and an SVG rendered from exactly the CSV columns.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::config::ExperimentConfig;
use crate::data::{generate_dataset, generate_testset, Dataset};
use crate::covariance::build_covariances;
use crate::error::Result;
use crate::metrics::{embed, separation_ratio};
use crate::objective::LossKind;
use crate::rng::{stream, Purpose};
use crate::solver::min_norm_for;
use crate::spectral::TieRule;
use crate::svg::{Axis, LinePlot, Scatter3, Series};
use crate::trainer::{init_weights, train, train_from, TrainOptions, TrainTrace};

pub const SNAPSHOT_EPOCHS: [usize; 4] = [0, 45, 60, 100];
pub const TEST_SIZE: usize = 1000;

pub(crate) fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn write_string(path: &Path, s: &str) -> Result<()> {
    let mut f = create(path)?;
    f.write_all(s.as_bytes())?;
    f.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------

pub struct Snapshot {
    pub epoch: usize,
    /// Test-set embeddings, one row per example.
    pub z: DMatrix<f64>,
    pub separation: f64,
}

pub struct EmbeddingsResult {
    pub testset: Dataset,
    pub snapshots: Vec<Snapshot>,
}

/// Trains the supervised loss and snapshots test-set embeddings at `epochs`.
pub fn recipe_fig_embeddings(cfg: &ExperimentConfig, epochs: &[usize]) -> Result<EmbeddingsResult> {
    let testset = generate_testset(cfg, TEST_SIZE, &mut stream(cfg.seed, Purpose::TestSet, 0))?;
    let last = epochs.iter().copied().max().unwrap_or(0).max(1);
    let opts = TrainOptions { gamma: false, ..TrainOptions::default() };
    let mut snapshots = Vec::new();
    train(cfg, LossKind::Scl, last, &opts, &mut |epoch, model| {
        if epochs.contains(&epoch) {
            let z = embed(model, testset.examples(), &testset.config);
            let separation = separation_ratio(&z, testset.examples());
            snapshots.push(Snapshot { epoch, z, separation });
        }
    })?;
    Ok(EmbeddingsResult { testset, snapshots })
}

fn group_name(g: usize) -> &'static str {
    ["y=-1, sub=-1", "y=-1, sub=+1", "y=+1, sub=-1", "y=+1, sub=+1"][g]
}

pub fn write_fig_embeddings(res: &EmbeddingsResult, out: &Path) -> Result<()> {
    let ex = res.testset.examples();
    for s in &res.snapshots {
        let mut f = create(&out.join(format!("embeddings_epoch{}.csv", s.epoch)))?;
        let p = s.z.ncols();
        let cols: Vec<String> = (1..=p).map(|j| format!("z_{j}")).collect();
        writeln!(f, "example_id,y,y_sub,{}", cols.join(","))?;
        for (i, e) in ex.iter().enumerate() {
            let zs: Vec<String> = (0..p).map(|j| format!("{:e}", s.z[(i, j)])).collect();
            writeln!(f, "{},{},{},{}", e.origin_id, e.y, e.y_sub, zs.join(","))?;
        }
        f.flush()?;
        if p == 3 {
            let plot = Scatter3 {
                title: format!("test embeddings, epoch {}", s.epoch),
                points: ex
                    .iter()
                    .enumerate()
                    .map(|(i, e)| {
                        let g = ((e.y > 0) as usize) * 2 + (e.y_sub > 0) as usize;
                        ([s.z[(i, 0)], s.z[(i, 1)], s.z[(i, 2)]], g)
                    })
                    .collect(),
                legend: (0..4).map(|g| group_name(g).to_string()).collect(),
            };
            write_string(&out.join(format!("embeddings_epoch{}.svg", s.epoch)), &plot.render())?;
        }
    }
    let mut f = create(&out.join("separation.csv"))?;
    writeln!(f, "epoch,separation_ratio")?;
    for s in &res.snapshots {
        writeln!(f, "{},{:e}", s.epoch, s.separation)?;
    }
    f.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------

/// Supervised training trace with per-epoch probes.
pub fn recipe_fig_alignment(cfg: &ExperimentConfig, epochs: usize) -> Result<TrainTrace> {
    let opts = TrainOptions { probe_every: Some(1), probe_test_size: TEST_SIZE, ..TrainOptions::default() };
    Ok(train(cfg, LossKind::Scl, epochs, &opts, &mut |_, _| {})?.1)
}

fn trace_series(trace: &TrainTrace, name: &str, axis: Axis, f: impl Fn(&crate::trainer::EpochRecord) -> Option<f64>) -> Series {
    Series {
        name: name.into(),
        points: trace.records.iter().filter_map(|r| f(r).map(|v| (r.epoch as f64, v))).collect(),
        axis,
    }
}

pub fn write_fig_alignment(trace: &TrainTrace, out: &Path) -> Result<()> {
    let mut f = create(&out.join("alignment.csv"))?;
    trace.write_csv(&mut f)?;
    f.flush()?;
    let plot = LinePlot {
        title: "feature alignment during supervised training".into(),
        x_label: "epoch".into(),
        left_label: "alignment".into(),
        right_label: "probe accuracy".into(),
        left_log: false,
        series: vec![
            trace_series(trace, "|W v1|", Axis::Left, |r| Some(r.align_v1)),
            trace_series(trace, "|W v2|", Axis::Left, |r| Some(r.align_v2)),
            trace_series(trace, "subclass probe", Axis::Right, |r| r.probe_sub_acc),
        ],
    };
    write_string(&out.join("alignment.svg"), &plot.render())
}

// ---------------------------------------------------------------------------

/// Supervised training trace of the two gradient-term norms.
pub fn recipe_grad_ratio(cfg: &ExperimentConfig, epochs: usize) -> Result<TrainTrace> {
    let opts = TrainOptions { gamma: false, ..TrainOptions::default() };
    Ok(train(cfg, LossKind::Scl, epochs, &opts, &mut |_, _| {})?.1)
}

pub fn write_grad_ratio(trace: &TrainTrace, out: &Path) -> Result<()> {
    let mut f = create(&out.join("grad_ratio.csv"))?;
    trace.write_csv(&mut f)?;
    f.flush()?;
    let plot = LinePlot {
        title: "gradient-term ratio and subclass alignment".into(),
        x_label: "epoch".into(),
        left_label: "|4WP| / |4WQW'WQ|".into(),
        right_label: "|W v2|".into(),
        left_log: true,
        series: vec![
            trace_series(trace, "term ratio", Axis::Left, |r| Some(r.term_ratio())),
            trace_series(trace, "|W v2|", Axis::Right, |r| Some(r.align_v2)),
        ],
    };
    write_string(&out.join("grad_ratio.svg"), &plot.render())
}

// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub phi_k: f64,
    pub seed: u64,
    /// Index among the minimizers returned at a tie (0 otherwise).
    pub choice: usize,
    pub align_v1_minnorm: f64,
    pub align_v1_gd: Option<f64>,
}

/// Threshold of the last irrelevant feature: `φ1 √(K−2)`.
pub fn fs_threshold(cfg: &ExperimentConfig) -> f64 {
    cfg.phi_k(1) * ((cfg.k_features - 2) as f64).sqrt()
}

/// 13 points from 0.625× to 1.375× the threshold, the threshold included.
pub fn default_fs_grid(cfg: &ExperimentConfig) -> Vec<f64> {
    let t = fs_threshold(cfg);
    (0..=12).map(|i| t * (50 + 5 * i) as f64 / 80.0).collect()
}

/// Sweeps the last irrelevant feature's scale. At the exact threshold every
/// tied minimizer is reported. With `gd_epochs`, the unsupervised loss is
/// also trained from the seeded init.
pub fn recipe_fs_sweep(
    base: &ExperimentConfig,
    grid: &[f64],
    seeds: &[u64],
    gd_epochs: Option<usize>,
) -> Result<Vec<SweepRow>> {
    if grid.is_empty() {
        return Err(crate::error::Error::InvalidConfig("sweep grid is empty".into()));
    }
    let t = fs_threshold(base);
    let jobs: Vec<(f64, u64)> = grid.iter().flat_map(|&g| seeds.iter().map(move |&s| (g, s))).collect();
    let rows: Vec<Result<Vec<SweepRow>>> = jobs
        .par_iter()
        .map(|&(phi, seed)| {
            let mut cfg = base.clone().with_seed(seed);
            let k = cfg.k_features;
            cfg.phi[k - 1] = phi;
            let ds = generate_dataset(&cfg)?;
            let cov = build_covariances(&ds)?;
            let rule = if (phi - t).abs() <= 1e-12 * t { TieRule::EnumerateBoth } else { TieRule::LowestIndex };
            let grams = min_norm_for(&cov, LossKind::Ucl, cfg.p, rule)?;
            let gd = match gd_epochs {
                Some(e) => {
                    let init = init_weights(&cfg, &mut stream(seed, Purpose::Init, 0));
                    let opts = TrainOptions { gamma: false, ..TrainOptions::default() };
                    let (model, _) = train_from(init, &cov, LossKind::Ucl, cfg.eta, e, &opts, None, &mut |_, _| {})?;
                    Some(model.w.column(1).norm())
                }
                None => None,
            };
            Ok(grams
                .iter()
                .enumerate()
                .map(|(choice, g)| SweepRow { phi_k: phi, seed, choice, align_v1_minnorm: g.alignment(1), align_v1_gd: gd })
                .collect())
        })
        .collect();
    let mut out = Vec::new();
    for r in rows {
        out.extend(r?);
    }
    Ok(out)
}

/// Per-grid-point means `(phi_K, mean min-norm, mean GD)`; at a tie every
/// choice counts as a separate sample.
pub fn sweep_means(rows: &[SweepRow]) -> Vec<(f64, f64, Option<f64>)> {
    let mut phis: Vec<f64> = rows.iter().map(|r| r.phi_k).collect();
    phis.sort_by(f64::total_cmp);
    phis.dedup();
    phis.into_iter()
        .map(|phi| {
            let sel: Vec<&SweepRow> = rows.iter().filter(|r| r.phi_k == phi).collect();
            let mn = sel.iter().map(|r| r.align_v1_minnorm).sum::<f64>() / sel.len() as f64;
            let gd: Vec<f64> = sel.iter().filter_map(|r| r.align_v1_gd).collect();
            let gd = (!gd.is_empty()).then(|| gd.iter().sum::<f64>() / gd.len() as f64);
            (phi, mn, gd)
        })
        .collect()
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:e}")).unwrap_or_default()
}

pub fn write_fs_sweep(rows: &[SweepRow], cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let mut f = create(&out.join("fs_sweep.csv"))?;
    writeln!(f, "phi_K,seed,align_v1_minnorm,align_v1_gd,choice")?;
    for r in rows {
        writeln!(f, "{:e},{},{:e},{},{}", r.phi_k, r.seed, r.align_v1_minnorm, opt(r.align_v1_gd), r.choice)?;
    }
    f.flush()?;
    let means = sweep_means(rows);
    let mut f = create(&out.join("fs_sweep_means.csv"))?;
    writeln!(f, "phi_K,mean_align_v1_minnorm,mean_align_v1_gd")?;
    for (phi, mn, gd) in &means {
        writeln!(f, "{phi:e},{mn:e},{}", opt(*gd))?;
    }
    f.flush()?;
    let mut series = vec![Series {
        name: "min-norm".into(),
        points: rows.iter().map(|r| (r.phi_k, r.align_v1_minnorm)).collect(),
        axis: Axis::Left,
    }];
    if rows.iter().any(|r| r.align_v1_gd.is_some()) {
        series.push(Series {
            name: "gradient descent".into(),
            points: means.iter().filter_map(|(p, _, g)| g.map(|g| (*p, g))).collect(),
            axis: Axis::Left,
        });
    }
    series[0].points.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.1.total_cmp(&a.1)));
    let plot = LinePlot {
        title: format!("alignment with v1, K = {}, threshold {:.4}", cfg.k_features, fs_threshold(cfg)),
        x_label: "phi_K".into(),
        left_label: "|W v1|".into(),
        right_label: String::new(),
        left_log: false,
        series,
    };
    write_string(&out.join("fs_sweep.svg"), &plot.render())
}
