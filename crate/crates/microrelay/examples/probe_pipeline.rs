use std::time::Instant;

use microrelay::cart::{fit, Target, TrainConfig};
use microrelay::config::MicrogridConfig;
use microrelay::features::{assemble_dataset, split_dataset, FeatureSet};
use microrelay::relay::{evaluate_pair, ModelPair};
use microrelay::scenario::{run_grid, LoadPolicy, ScenarioGrid};

fn main() {
    let cfg = MicrogridConfig::default();
    let grid = ScenarioGrid::default();
    let policy = LoadPolicy::default();

    let t0 = Instant::now();
    let (runs, manifest) = run_grid(&cfg, &grid, &policy, 7, 0).unwrap();
    println!(
        "batch: {} runs in {:.1} s ({} failed)",
        runs.len(),
        t0.elapsed().as_secs_f64(),
        manifest.failed.len()
    );
    let worst_resid = runs.iter().map(|r| r.diag.max_kcl_residual).fold(0.0, f64::max);
    let worst_excess = runs
        .iter()
        .map(|r| r.diag.max_current_excess)
        .fold(f64::NEG_INFINITY, f64::max);
    let worst_integ = runs
        .iter()
        .map(|r| r.diag.integ_delta_at_start)
        .fold(0.0, f64::max);
    let unconverged = runs.iter().filter(|r| !r.diag.converged).count();
    let relock_bad = runs.iter().filter(|r| !r.diag.pll_relock_ok).count();
    let worst_vq = runs.iter().map(|r| r.diag.max_vq_after_relock).fold(0.0, f64::max);
    println!("worst KCL residual: {worst_resid:.3e}");
    println!("worst current excess: {worst_excess:.3e}");
    println!("worst integ delta at start: {worst_integ:.3e} (unconverged: {unconverged})");
    println!("relock violations: {relock_bad} (worst vq {worst_vq:.2e})");

    let t1 = Instant::now();
    let full = assemble_dataset(&runs, FeatureSet::IVPQ).unwrap();
    println!("dataset: {} rows in {:.2} s", full.n_rows(), t1.elapsed().as_secs_f64());

    for fs in FeatureSet::ALL {
        let ds = full.project(fs).unwrap();
        let (train, val) = split_dataset(&ds, 0.8, 20, true).unwrap();
        let t2 = Instant::now();
        let detect = fit(&train, Target::Detect, &TrainConfig::default()).unwrap();
        let t_detect = t2.elapsed().as_secs_f64();
        let t3 = Instant::now();
        let fault_type = fit(&train, Target::Type, &TrainConfig::default()).unwrap();
        let t_type = t3.elapsed().as_secs_f64();
        let models = ModelPair {
            feature_set: fs,
            detect,
            fault_type,
        };
        let row = evaluate_pair(&models, &val).unwrap();
        let sd = models.detect.stats();
        let st = models.fault_type.stats();
        println!(
            "{:<6} detect {:6.2}% ({}d/{}l, {:.2}s)  type {:6.2}% ({}d/{}l, {:.2}s)",
            fs.name(),
            row.detect_accuracy_pct,
            sd.depth,
            sd.leaves,
            t_detect,
            row.type_accuracy_pct,
            st.depth,
            st.leaves,
            t_type
        );
    }
}
