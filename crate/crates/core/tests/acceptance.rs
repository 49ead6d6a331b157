//! Acceptance run: one PASS/FAIL line per criterion, with the measured values
//! and the wall-clock budget each check has to meet.

use spectral_cl::checks::{
    check_asymptotic_collapse, check_class_collapse, check_joint, check_joint_beta_one, check_minimizer_oracle,
    check_noncollapse, check_properties, check_suppression_imperfect, check_suppression_limited, check_training,
    CheckRecord, ConfigBundle,
};

struct Outcome {
    id: usize,
    name: &'static str,
    pass: bool,
    detail: String,
}

fn judge(id: usize, name: &'static str, records: &[&CheckRecord], budget_s: f64) -> Outcome {
    let runtime: f64 = records.iter().map(|r| r.runtime_s).sum();
    let in_budget = runtime < budget_s;
    let pass = in_budget && records.iter().all(|r| r.pass);
    let mut detail: Vec<String> = records.iter().map(|r| r.line()).collect();
    detail.push(format!("runtime {runtime:.2}s (budget {budget_s:.0}s{})", if in_budget { "" } else { ", exceeded" }));
    Outcome { id, name, pass, detail: detail.join("; ") }
}

#[test]
fn acceptance_criteria() {
    let b = ConfigBundle::default();
    let seeds: Vec<u64> = (0..5).collect();
    let train_seeds = [0u64, 1, 2];
    let mut out = Vec::new();

    let r = check_minimizer_oracle(b.c0.seed, 20, 50).unwrap();
    out.push(judge(1, "min_norm_oracle", &[&r], 30.0));

    let r = check_class_collapse(&b.c0, &seeds).unwrap();
    out.push(judge(2, "class_collapse", &[&r], 5.0));

    let r = check_noncollapse(&b.c0).unwrap();
    out.push(judge(3, "noncollapse_minimizer", &[&r], 60.0));

    // no budget is stated; the generous one only guards against hangs
    let r = check_asymptotic_collapse(&b.c0, &seeds).unwrap();
    out.push(judge(4, "asymptotic_collapse", &[&r], 600.0));

    // both training criteria come from the same runs
    let training = check_training(&b.fig1, &train_seeds, 300).unwrap();
    out.push(judge(5, "learn_then_unlearn", &[&training[0]], 600.0 * train_seeds.len() as f64));

    let r = check_suppression_limited(b.c0.seed).unwrap();
    out.push(judge(6, "suppression_limited_embedding", &[&r], 120.0));

    let r = check_suppression_imperfect(&b.c2, &seeds).unwrap();
    out.push(judge(7, "suppression_imperfect_augmentation", &[&r], 30.0));

    let joint = check_joint(&b.c1, &seeds).unwrap();
    let beta_one = check_joint_beta_one(&b.c1, b.c1.seed).unwrap();
    out.push(judge(8, "joint_loss", &[&joint, &beta_one], 30.0));

    out.push(judge(9, "gradient_term_phase_transition", &[&training[1]], 600.0 * train_seeds.len() as f64));

    let r = check_properties(&b.c0).unwrap();
    out.push(judge(10, "property_suite", &[&r], 300.0));

    for o in &out {
        println!("{} criterion {} {}: {}", if o.pass { "PASS" } else { "FAIL" }, o.id, o.name, o.detail);
    }
    let failed: Vec<usize> = out.iter().filter(|o| !o.pass).map(|o| o.id).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
