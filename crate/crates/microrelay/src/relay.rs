//! Relay evaluation: feature-ablation accuracy tables, per-case replays
//! with detection/clearance delays, delay statistics by fault resistance,
//! and deterministic JSON/text reports.

use serde::{Deserialize, Serialize};

use crate::cart::{Tree, TreeStats};
use crate::config::MicrogridConfig;
use crate::error::{Error, Result};
use crate::features::{extract_features, Dataset, FeatureSet, Sample};
use crate::scenario::{run_scenario, FaultScenario};

/// Confusion matrix with `counts[true][predicted]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub classes: usize,
    pub counts: Vec<Vec<u64>>,
}

impl Confusion {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            counts: vec![vec![0; classes]; classes],
        }
    }

    pub fn add(&mut self, truth: u8, predicted: u8) {
        self.counts[truth as usize][predicted as usize] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn correct(&self) -> u64 {
        (0..self.classes).map(|c| self.counts[c][c]).sum()
    }

    pub fn accuracy_pct(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        100.0 * self.correct() as f64 / total as f64
    }

    /// Per-true-class row sums (the validation counts per class).
    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }
}

/// Detection and type trees trained on one feature set.
#[derive(Debug, Clone)]
pub struct ModelPair {
    pub feature_set: FeatureSet,
    pub detect: Tree,
    pub fault_type: Tree,
}

impl ModelPair {
    fn check(&self, ds: &Dataset) -> Result<()> {
        if self.detect.n_features() != ds.n_features()
            || self.fault_type.n_features() != ds.n_features()
        {
            return Err(Error::Arity {
                expected: self.detect.n_features(),
                got: ds.n_features(),
            });
        }
        for tree in [&self.detect, &self.fault_type] {
            if !tree.provenance.is_empty()
                && !ds.provenance.is_empty()
                && tree.provenance != ds.provenance
            {
                return Err(Error::Provenance(format!(
                    "tree trained on batch {} but dataset comes from {}",
                    tree.provenance, ds.provenance
                )));
            }
        }
        Ok(())
    }
}

/// Sample-level accuracies of one model pair on a validation set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub feature_set: String,
    pub detect_accuracy_pct: f64,
    pub type_accuracy_pct: f64,
    pub detect_confusion: Confusion,
    pub type_confusion: Confusion,
}

/// Evaluate one model pair against its validation split.
pub fn evaluate_pair(models: &ModelPair, validation: &Dataset) -> Result<AblationRow> {
    models.check(validation)?;
    if validation.is_empty() {
        return Err(Error::Argument("validation set is empty".into()));
    }
    let mut detect_confusion = Confusion::new(2);
    let mut type_confusion = Confusion::new(8);
    for r in 0..validation.n_rows() {
        let row = validation.row(r);
        detect_confusion.add(validation.label_detect[r], models.detect.predict_label(row)?);
        type_confusion.add(validation.label_type[r], models.fault_type.predict_label(row)?);
    }
    Ok(AblationRow {
        feature_set: models.feature_set.display_label().to_string(),
        detect_accuracy_pct: detect_confusion.accuracy_pct(),
        type_accuracy_pct: type_confusion.accuracy_pct(),
        detect_confusion,
        type_confusion,
    })
}

/// Evaluate every provided feature-set variant on its matching validation
/// projection, in canonical feature-set order.
pub fn evaluate(models: &[ModelPair], validation_full: &Dataset) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::with_capacity(models.len());
    for pair in models {
        let val = validation_full.project(pair.feature_set)?;
        rows.push(evaluate_pair(pair, &val)?);
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Case replay
// ---------------------------------------------------------------------------

/// Streaming replay of one scenario through the trained trees.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CaseReplay {
    pub scenario_index: u32,
    pub fault_type: u8,
    pub bus: usize,
    pub rf_ohm: f64,
    pub window_ms: (u32, u32),
    pub t_ms: Vec<u32>,
    pub true_detect: Vec<u8>,
    pub pred_detect: Vec<u8>,
    pub true_type: Vec<u8>,
    pub pred_type: Vec<u8>,
    /// First positive detection at/after inception, relative to inception.
    /// `None` when the fault is never flagged inside its window.
    pub inception_delay_ms: Option<u32>,
    /// First negative detection at/after clearance, relative to clearance.
    pub clearance_delay_ms: Option<u32>,
    /// In-window timestamps where the type prediction was wrong.
    pub misclassified_type_ms: Vec<u32>,
    /// Detection-trace transitions beyond the ideal two (pickup/dropout).
    pub chatter: u32,
}

/// Predict every sample of a scenario in time order and derive the delay
/// and chatter metrics.
pub fn replay_samples(
    scenario: &FaultScenario,
    samples: &[Sample],
    models: &ModelPair,
) -> Result<CaseReplay> {
    let (start_ms, end_ms) = scenario.window_ms();
    let faulted = scenario.fault_type.code() != 0;
    let cols = models.feature_set.columns();
    let mut row = vec![0.0; cols.len()];

    let n = samples.len();
    let mut t_ms = Vec::with_capacity(n);
    let mut true_detect = Vec::with_capacity(n);
    let mut pred_detect = Vec::with_capacity(n);
    let mut true_type = Vec::with_capacity(n);
    let mut pred_type = Vec::with_capacity(n);
    for s in samples {
        let full = s.full_row();
        for (k, c) in cols.iter().enumerate() {
            row[k] = full[c.index()];
        }
        t_ms.push(s.t_ms);
        true_detect.push(s.label_detect);
        true_type.push(s.label_type);
        pred_detect.push(models.detect.predict_label(&row)?);
        pred_type.push(models.fault_type.predict_label(&row)?);
    }

    let mut inception_delay_ms = None;
    let mut clearance_delay_ms = None;
    let mut misclassified_type_ms = Vec::new();
    if faulted {
        for (k, &t) in t_ms.iter().enumerate() {
            let in_window = t >= start_ms && t < end_ms;
            if in_window && inception_delay_ms.is_none() && pred_detect[k] == 1 {
                inception_delay_ms = Some(t - start_ms);
            }
            if t >= end_ms && clearance_delay_ms.is_none() && pred_detect[k] == 0 {
                clearance_delay_ms = Some(t - end_ms);
            }
            if in_window && pred_type[k] != true_type[k] {
                misclassified_type_ms.push(t);
            }
        }
    }
    let transitions = pred_detect.windows(2).filter(|w| w[0] != w[1]).count() as u32;
    let ideal = if faulted { 2 } else { 0 };
    let chatter = transitions.saturating_sub(ideal);

    Ok(CaseReplay {
        scenario_index: scenario.index,
        fault_type: scenario.fault_type.code(),
        bus: scenario.bus,
        rf_ohm: scenario.rf_ohm,
        window_ms: (start_ms, end_ms),
        t_ms,
        true_detect,
        pred_detect,
        true_type,
        pred_type,
        inception_delay_ms,
        clearance_delay_ms,
        misclassified_type_ms,
        chatter,
    })
}

/// Simulate a scenario and replay it through the trees.
pub fn replay_case(
    cfg: &MicrogridConfig,
    scenario: &FaultScenario,
    models: &ModelPair,
) -> Result<CaseReplay> {
    let run = run_scenario(cfg, scenario)?;
    let samples = extract_features(&run)?;
    replay_samples(scenario, &samples, models)
}

/// `k`-of-`n` debounce of a binary trace: output 1 where at least `k` of
/// the trailing `n` raw samples (inclusive) are 1.
pub fn debounce(trace: &[u8], k: usize, n: usize) -> Vec<u8> {
    assert!(n >= 1 && k >= 1 && k <= n, "need 1 ≤ k ≤ n");
    let mut out = Vec::with_capacity(trace.len());
    for i in 0..trace.len() {
        let lo = (i + 1).saturating_sub(n);
        let ones = trace[lo..=i].iter().filter(|&&b| b == 1).count();
        out.push(u8::from(ones >= k));
    }
    out
}

// ---------------------------------------------------------------------------
// Delay statistics
// ---------------------------------------------------------------------------

/// Median/maximum inception delay for one fault-resistance bucket.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelayBucket {
    pub rf_ohm: f64,
    pub replays: usize,
    pub detected: usize,
    pub median_delay_ms: Option<f64>,
    pub max_delay_ms: Option<u32>,
    /// Replays whose inception delay exceeded 5 ms.
    pub over_5ms: usize,
    /// True when this resistance is in the training grid.
    pub trained: bool,
}

/// Delay distribution across replays, bucketed by fault resistance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelaySummary {
    pub buckets: Vec<DelayBucket>,
    /// Every trained-resistance replay was detected within 5 ms.
    pub trained_within_5ms: bool,
    pub undetected: usize,
}

/// Summarize inception delays by fault-resistance bucket. `trained`
/// lists the resistances present in the training grid; violations of the
/// 5 ms target are flagged per bucket.
pub fn detection_delay_summary(replays: &[CaseReplay], trained: &[f64]) -> Result<DelaySummary> {
    if replays.is_empty() {
        return Err(Error::Argument("no replays to summarize".into()));
    }
    let mut by_rf: Vec<(u64, Vec<&CaseReplay>)> = Vec::new();
    for r in replays {
        let key = r.rf_ohm.to_bits();
        match by_rf.iter_mut().find(|(k, _)| *k == key) {
            Some((_, v)) => v.push(r),
            None => by_rf.push((key, vec![r])),
        }
    }
    by_rf.sort_by(|a, b| f64::from_bits(a.0).total_cmp(&f64::from_bits(b.0)));

    let mut buckets = Vec::with_capacity(by_rf.len());
    let mut undetected = 0;
    for (key, group) in by_rf {
        let rf_ohm = f64::from_bits(key);
        let mut delays: Vec<u32> = group.iter().filter_map(|r| r.inception_delay_ms).collect();
        undetected += group.len() - delays.len();
        delays.sort_unstable();
        let median = if delays.is_empty() {
            None
        } else if delays.len() % 2 == 1 {
            Some(delays[delays.len() / 2] as f64)
        } else {
            Some((delays[delays.len() / 2 - 1] as f64 + delays[delays.len() / 2] as f64) / 2.0)
        };
        buckets.push(DelayBucket {
            rf_ohm,
            replays: group.len(),
            detected: delays.len(),
            median_delay_ms: median,
            max_delay_ms: delays.last().copied(),
            over_5ms: delays.iter().filter(|&&d| d > 5).count(),
            trained: trained.iter().any(|t| t.to_bits() == key),
        });
    }
    let trained_within_5ms = buckets
        .iter()
        .filter(|b| b.trained)
        .all(|b| b.detected == b.replays && b.over_5ms == 0);
    Ok(DelaySummary {
        buckets,
        trained_within_5ms,
        undetected,
    })
}

// ---------------------------------------------------------------------------
// Report
// ---------------------------------------------------------------------------

/// Structural and timing record for one trained tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeReport {
    pub feature_set: String,
    pub target: String,
    pub depth: usize,
    pub leaves: usize,
    pub nodes: usize,
    pub train_seconds: f64,
}

impl TreeReport {
    pub fn new(feature_set: FeatureSet, target: &str, stats: TreeStats, train_seconds: f64) -> Self {
        Self {
            feature_set: feature_set.name().to_string(),
            target: target.to_string(),
            depth: stats.depth,
            leaves: stats.leaves,
            nodes: stats.nodes,
            train_seconds,
        }
    }
}

/// The full evaluation report (serialized deterministically as JSON).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset_provenance: String,
    pub rows_total: usize,
    pub rows_train: usize,
    pub rows_validation: usize,
    pub ablation: Vec<AblationRow>,
    /// Same accuracies under a scenario-level split, when computed.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scenario_split_ablation: Option<Vec<AblationRow>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delays: Option<DelaySummary>,
    pub chatter_total: u64,
    pub chatter_debounced_total: u64,
    pub tree_reports: Vec<TreeReport>,
    /// Detection accuracy with all features is no worse than with currents
    /// alone, minus half a percentage point.
    pub weak_monotonicity_ok: bool,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str, origin: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse {
            path: origin.to_string(),
            line: 0,
            msg: e.to_string(),
        })
    }

    /// Check the weak ablation-monotonicity property from the table rows.
    pub fn weak_monotonicity(ablation: &[AblationRow]) -> bool {
        let find = |label: &str| {
            ablation
                .iter()
                .find(|r| r.feature_set == label)
                .map(|r| r.detect_accuracy_pct)
        };
        match (find("I"), find("I,V,P,Q")) {
            (Some(i), Some(ivpq)) => ivpq >= i - 0.5,
            _ => true,
        }
    }

    /// Aligned-text rendering of the ablation table and delay buckets.
    pub fn to_table(&self) -> String {
        use std::fmt::Write;
        let mut out = String::new();
        let _ = writeln!(out, "rows: total {}  train {}  validation {}", self.rows_total, self.rows_train, self.rows_validation);
        let _ = writeln!(out, "provenance: {}", self.dataset_provenance);
        let _ = writeln!(out);
        let _ = writeln!(out, "{:<10} {:>18} {:>24}", "inputs", "detect accuracy", "type accuracy");
        for row in &self.ablation {
            let _ = writeln!(
                out,
                "{:<10} {:>17.2}% {:>23.2}%",
                row.feature_set, row.detect_accuracy_pct, row.type_accuracy_pct
            );
        }
        if let Some(rows) = &self.scenario_split_ablation {
            let _ = writeln!(out);
            let _ = writeln!(out, "scenario-level split:");
            for row in rows {
                let _ = writeln!(
                    out,
                    "{:<10} {:>17.2}% {:>23.2}%",
                    row.feature_set, row.detect_accuracy_pct, row.type_accuracy_pct
                );
            }
        }
        if let Some(delays) = &self.delays {
            let _ = writeln!(out);
            let _ = writeln!(
                out,
                "{:>10} {:>8} {:>9} {:>11} {:>9} {:>8} {:>8}",
                "Rf (ohm)", "replays", "detected", "median(ms)", "max(ms)", ">5ms", "trained"
            );
            for b in &delays.buckets {
                let median = b
                    .median_delay_ms
                    .map_or("-".to_string(), |m| format!("{m:.1}"));
                let max = b.max_delay_ms.map_or("-".to_string(), |m| m.to_string());
                let _ = writeln!(
                    out,
                    "{:>10} {:>8} {:>9} {:>11} {:>9} {:>8} {:>8}",
                    b.rf_ohm,
                    b.replays,
                    b.detected,
                    median,
                    max,
                    b.over_5ms,
                    if b.trained { "yes" } else { "no" }
                );
            }
            let _ = writeln!(
                out,
                "trained resistances within 5 ms: {}",
                if delays.trained_within_5ms { "yes" } else { "no" }
            );
        }
        let _ = writeln!(out);
        let _ = writeln!(
            out,
            "{:<10} {:<8} {:>6} {:>8} {:>8} {:>10}",
            "inputs", "target", "depth", "leaves", "nodes", "train(s)"
        );
        for t in &self.tree_reports {
            let _ = writeln!(
                out,
                "{:<10} {:<8} {:>6} {:>8} {:>8} {:>10.3}",
                t.feature_set, t.target, t.depth, t.leaves, t.nodes, t.train_seconds
            );
        }
        let _ = writeln!(
            out,
            "chatter: raw {}  debounced(2-of-3) {}",
            self.chatter_total, self.chatter_debounced_total
        );
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cart::{fit, Target, TrainConfig};
    use crate::features::{assemble_dataset, FeatureSet};
    use crate::scenario::FaultType;

    fn tiny_dataset(labels: &[(u8, u8)]) -> Dataset {
        // One feature column; the feature value equals the type label so
        // trees can fit perfectly.
        let mut ds = Dataset {
            feature_set: FeatureSet::I,
            features: Vec::new(),
            label_detect: Vec::new(),
            label_type: Vec::new(),
            scenario_id: Vec::new(),
            t_ms: Vec::new(),
            provenance: String::new(),
        };
        for (k, (d, t)) in labels.iter().enumerate() {
            ds.features.extend_from_slice(&[*t as f64, 0.0, 0.0]);
            ds.label_detect.push(*d);
            ds.label_type.push(*t);
            ds.scenario_id.push(0);
            ds.t_ms.push(k as u32);
        }
        ds
    }

    fn models_for(ds: &Dataset) -> ModelPair {
        ModelPair {
            feature_set: ds.feature_set,
            detect: fit(ds, Target::Detect, &TrainConfig::default()).unwrap(),
            fault_type: fit(ds, Target::Type, &TrainConfig::default()).unwrap(),
        }
    }

    #[test]
    fn constant_predictor_on_constant_validation_is_100_pct() {
        let train = tiny_dataset(&[(0, 0), (0, 0), (0, 0)]);
        let models = models_for(&train);
        let row = evaluate_pair(&models, &train).unwrap();
        assert_eq!(row.detect_accuracy_pct, 100.0);
        assert_eq!(row.type_accuracy_pct, 100.0);
        assert_eq!(row.detect_confusion.row_sums(), vec![3, 0]);
    }

    #[test]
    fn duplicating_validation_rows_keeps_accuracy() {
        let train = tiny_dataset(&[(0, 0), (1, 1), (1, 2), (0, 0), (1, 3)]);
        let models = models_for(&train);
        let once = evaluate_pair(&models, &train).unwrap();
        let doubled_rows: Vec<usize> = (0..train.n_rows()).chain(0..train.n_rows()).collect();
        let doubled = train.select(&doubled_rows);
        let twice = evaluate_pair(&models, &doubled).unwrap();
        assert_eq!(once.detect_accuracy_pct, twice.detect_accuracy_pct);
        assert_eq!(once.type_accuracy_pct, twice.type_accuracy_pct);
    }

    #[test]
    fn confusion_rows_sum_to_class_counts() {
        let train = tiny_dataset(&[(0, 0), (1, 1), (1, 1), (1, 5)]);
        let models = models_for(&train);
        let row = evaluate_pair(&models, &train).unwrap();
        assert_eq!(row.type_confusion.row_sums()[0], 1);
        assert_eq!(row.type_confusion.row_sums()[1], 2);
        assert_eq!(row.type_confusion.row_sums()[5], 1);
    }

    #[test]
    fn arity_mismatch_is_reported() {
        let train = tiny_dataset(&[(0, 0), (1, 1)]);
        let models = models_for(&train);
        let mut wide = train.clone();
        wide.feature_set = FeatureSet::IVPQ;
        wide.features = vec![0.0; wide.n_rows() * 8];
        assert!(matches!(
            evaluate_pair(&models, &wide),
            Err(Error::Arity { .. })
        ));
    }

    fn replay_fixture() -> (FaultScenario, Vec<Sample>) {
        let scenario = FaultScenario {
            index: 9,
            fault_type: FaultType::Ag,
            bus: 1,
            rf_ohm: 1.0,
            t_start: 0.01,
            duration: 0.005,
            sim_length: 0.02,
            load_p: 0.35,
            load_q: 0.035,
            seed: 0,
        };
        // Window in ms: [10, 15). Ia jumps to 5.0 inside the window.
        let samples: Vec<Sample> = (0..20u32)
            .map(|t| {
                let inside = (10..15).contains(&t);
                Sample {
                    scenario_id: 9,
                    t_ms: t,
                    ia: if inside { 5.0 } else { 0.3 },
                    ib: 0.3,
                    ic: 0.3,
                    va: 1.0,
                    vb: 1.0,
                    vc: 1.0,
                    p: 0.3,
                    q: 0.0,
                    label_detect: u8::from(inside),
                    label_type: if inside { 1 } else { 0 },
                }
            })
            .collect();
        (scenario, samples)
    }

    #[test]
    fn replay_computes_zero_delays_for_a_perfect_tree() {
        let (scenario, samples) = replay_fixture();
        let mut ds = Dataset {
            feature_set: FeatureSet::I,
            features: Vec::new(),
            label_detect: Vec::new(),
            label_type: Vec::new(),
            scenario_id: Vec::new(),
            t_ms: Vec::new(),
            provenance: String::new(),
        };
        for s in &samples {
            ds.features.extend_from_slice(&[s.ia, s.ib, s.ic]);
            ds.label_detect.push(s.label_detect);
            ds.label_type.push(s.label_type);
            ds.scenario_id.push(s.scenario_id);
            ds.t_ms.push(s.t_ms);
        }
        let models = models_for(&ds);
        let replay = replay_samples(&scenario, &samples, &models).unwrap();
        assert_eq!(replay.inception_delay_ms, Some(0));
        assert_eq!(replay.clearance_delay_ms, Some(0));
        assert!(replay.misclassified_type_ms.is_empty());
        assert_eq!(replay.chatter, 0);
        assert_eq!(replay.window_ms, (10, 15));
    }

    #[test]
    fn delay_summary_single_and_uniform() {
        let (scenario, samples) = replay_fixture();
        let ds = {
            let mut ds = tiny_dataset(&[]);
            for s in &samples {
                ds.features.extend_from_slice(&[s.ia, s.ib, s.ic]);
                ds.label_detect.push(s.label_detect);
                ds.label_type.push(s.label_type);
                ds.scenario_id.push(s.scenario_id);
                ds.t_ms.push(s.t_ms);
            }
            ds
        };
        let models = models_for(&ds);
        let mut replay = replay_samples(&scenario, &samples, &models).unwrap();
        replay.inception_delay_ms = Some(3);
        let summary = detection_delay_summary(std::slice::from_ref(&replay), &[1.0]).unwrap();
        assert_eq!(summary.buckets.len(), 1);
        assert_eq!(summary.buckets[0].median_delay_ms, Some(3.0));
        assert_eq!(summary.buckets[0].max_delay_ms, Some(3));
        assert!(summary.buckets[0].trained);
        assert!(summary.trained_within_5ms);

        // All delays equal: zero spread between median and max.
        let replays = vec![replay.clone(), replay.clone(), replay];
        let s2 = detection_delay_summary(&replays, &[1.0]).unwrap();
        assert_eq!(s2.buckets[0].median_delay_ms, Some(3.0));
        assert_eq!(s2.buckets[0].max_delay_ms, Some(3));
    }

    #[test]
    fn debounce_two_of_three() {
        assert_eq!(debounce(&[0, 1, 0, 1, 1, 0, 0], 2, 3), vec![0, 0, 0, 1, 1, 1, 0]);
        // A single isolated spike never fires the debounced trace.
        assert_eq!(debounce(&[0, 0, 1, 0, 0], 2, 3), vec![0, 0, 0, 0, 0]);
    }

    #[test]
    fn report_json_is_deterministic() {
        let train = tiny_dataset(&[(0, 0), (1, 1), (1, 2), (0, 0)]);
        let models = models_for(&train);
        let ab = evaluate_pair(&models, &train).unwrap();
        let report = EvalReport {
            dataset_provenance: "p".into(),
            rows_total: 4,
            rows_train: 3,
            rows_validation: 1,
            ablation: vec![ab],
            scenario_split_ablation: None,
            delays: None,
            chatter_total: 0,
            chatter_debounced_total: 0,
            tree_reports: vec![],
            weak_monotonicity_ok: true,
        };
        let a = report.to_json();
        let b = report.to_json();
        assert_eq!(a, b);
        let back = EvalReport::from_json(&a, "mem").unwrap();
        assert_eq!(back, report);
        assert!(!report.to_table().is_empty());
    }
}
