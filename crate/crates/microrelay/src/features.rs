//! Feature extraction and dataset assembly.
//!
//! Every raw run becomes one labeled row per millisecond: per-phase RMS
//! current and voltage (phasor magnitudes), real and reactive power at the
//! relay, a binary detection label, and the fault type number. Datasets are
//! column subsets of the full (I, V, P, Q) row and round-trip bit-exactly
//! through CSV.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scenario::RawRun;

/// One 1 ms labeled feature row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub scenario_id: u32,
    pub t_ms: u32,
    pub ia: f64,
    pub ib: f64,
    pub ic: f64,
    pub va: f64,
    pub vb: f64,
    pub vc: f64,
    pub p: f64,
    pub q: f64,
    /// 1 while the fault is applied, else 0.
    pub label_detect: u8,
    /// Fault type number 0–7; 0 outside the fault window.
    pub label_type: u8,
}

impl Sample {
    pub fn full_row(&self) -> [f64; 8] {
        [
            self.ia, self.ib, self.ic, self.va, self.vb, self.vc, self.p, self.q,
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.full_row().iter().all(|x| x.is_finite())
    }
}

/// Feature-column identifiers in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Column {
    Ia,
    Ib,
    Ic,
    Va,
    Vb,
    Vc,
    P,
    Q,
}

impl Column {
    pub const ALL: [Column; 8] = [
        Column::Ia,
        Column::Ib,
        Column::Ic,
        Column::Va,
        Column::Vb,
        Column::Vc,
        Column::P,
        Column::Q,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Column::Ia => "Ia",
            Column::Ib => "Ib",
            Column::Ic => "Ic",
            Column::Va => "Va",
            Column::Vb => "Vb",
            Column::Vc => "Vc",
            Column::P => "P",
            Column::Q => "Q",
        }
    }

    /// Position in the canonical 8-column order.
    pub fn index(self) -> usize {
        Column::ALL.iter().position(|c| *c == self).unwrap()
    }
}

/// The four studied input-feature combinations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum FeatureSet {
    /// Three-phase current only.
    I,
    /// Current and voltage.
    IV,
    /// Current and power.
    IPQ,
    /// Current, voltage, and power.
    IVPQ,
}

impl FeatureSet {
    pub const ALL: [FeatureSet; 4] = [
        FeatureSet::I,
        FeatureSet::IV,
        FeatureSet::IPQ,
        FeatureSet::IVPQ,
    ];

    pub fn columns(self) -> &'static [Column] {
        match self {
            FeatureSet::I => &[Column::Ia, Column::Ib, Column::Ic],
            FeatureSet::IV => &[
                Column::Ia,
                Column::Ib,
                Column::Ic,
                Column::Va,
                Column::Vb,
                Column::Vc,
            ],
            FeatureSet::IPQ => &[Column::Ia, Column::Ib, Column::Ic, Column::P, Column::Q],
            FeatureSet::IVPQ => &[
                Column::Ia,
                Column::Ib,
                Column::Ic,
                Column::Va,
                Column::Vb,
                Column::Vc,
                Column::P,
                Column::Q,
            ],
        }
    }

    pub fn n_features(self) -> usize {
        self.columns().len()
    }

    pub fn name(self) -> &'static str {
        match self {
            FeatureSet::I => "I",
            FeatureSet::IV => "IV",
            FeatureSet::IPQ => "IPQ",
            FeatureSet::IVPQ => "IVPQ",
        }
    }

    /// Human-oriented label, e.g. `I,V,P,Q`.
    pub fn display_label(self) -> &'static str {
        match self {
            FeatureSet::I => "I",
            FeatureSet::IV => "I,V",
            FeatureSet::IPQ => "I,P,Q",
            FeatureSet::IVPQ => "I,V,P,Q",
        }
    }
}

impl std::str::FromStr for FeatureSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let up: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_uppercase();
        FeatureSet::ALL
            .into_iter()
            .find(|f| f.name() == up)
            .ok_or_else(|| Error::Argument(format!("unknown feature set '{s}'")))
    }
}

/// Turn a completed run into its per-millisecond labeled samples. RMS
/// values are the phasor magnitudes at the sample instant.
pub fn extract_features(run: &RawRun) -> Result<Vec<Sample>> {
    if let Some(t_ms) = run.diag.failed_at_ms {
        return Err(Error::Simulation {
            t_ms,
            reason: "cannot extract features from a failed run".into(),
        });
    }
    let (start_ms, end_ms) = run.scenario.window_ms();
    let type_code = run.scenario.fault_type.code();
    let mut out = Vec::with_capacity(run.records.len());
    for r in &run.records {
        let [ia, ib, ic] = r.i.magnitudes();
        let [va, vb, vc] = r.v.magnitudes();
        let in_window = type_code != 0 && r.t_ms >= start_ms && r.t_ms < end_ms;
        let sample = Sample {
            scenario_id: run.scenario.index,
            t_ms: r.t_ms,
            ia,
            ib,
            ic,
            va,
            vb,
            vc,
            p: r.p,
            q: r.q,
            label_detect: u8::from(in_window),
            label_type: if in_window { type_code } else { 0 },
        };
        if !sample.is_finite() {
            return Err(Error::Simulation {
                t_ms: r.t_ms,
                reason: "non-finite feature value".into(),
            });
        }
        out.push(sample);
    }
    Ok(out)
}

/// A labeled feature matrix for one feature set.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub feature_set: FeatureSet,
    /// Row-major feature values, `n_rows × feature_set.n_features()`.
    pub features: Vec<f64>,
    pub label_detect: Vec<u8>,
    pub label_type: Vec<u8>,
    pub scenario_id: Vec<u32>,
    pub t_ms: Vec<u32>,
    /// Batch config hash the rows were generated from.
    pub provenance: String,
}

impl Dataset {
    pub fn n_rows(&self) -> usize {
        self.label_detect.len()
    }

    pub fn n_features(&self) -> usize {
        self.feature_set.n_features()
    }

    pub fn is_empty(&self) -> bool {
        self.n_rows() == 0
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.n_features();
        &self.features[i * w..(i + 1) * w]
    }

    fn push_sample(&mut self, s: &Sample) {
        let full = s.full_row();
        for col in self.feature_set.columns() {
            self.features.push(full[col.index()]);
        }
        self.label_detect.push(s.label_detect);
        self.label_type.push(s.label_type);
        self.scenario_id.push(s.scenario_id);
        self.t_ms.push(s.t_ms);
    }

    fn empty(feature_set: FeatureSet, provenance: &str) -> Self {
        Self {
            feature_set,
            features: Vec::new(),
            label_detect: Vec::new(),
            label_type: Vec::new(),
            scenario_id: Vec::new(),
            t_ms: Vec::new(),
            provenance: provenance.to_string(),
        }
    }

    /// Select a subset of rows, in the given order.
    pub fn select(&self, rows: &[usize]) -> Dataset {
        let mut out = Dataset::empty(self.feature_set, &self.provenance);
        let w = self.n_features();
        for &r in rows {
            out.features.extend_from_slice(&self.features[r * w..(r + 1) * w]);
            out.label_detect.push(self.label_detect[r]);
            out.label_type.push(self.label_type[r]);
            out.scenario_id.push(self.scenario_id[r]);
            out.t_ms.push(self.t_ms[r]);
        }
        out
    }

    /// Project onto a smaller feature set (shared columns keep their values).
    pub fn project(&self, fs: FeatureSet) -> Result<Dataset> {
        let own = self.feature_set.columns();
        let mut col_idx = Vec::with_capacity(fs.n_features());
        for c in fs.columns() {
            let at = own.iter().position(|o| o == c).ok_or_else(|| {
                Error::Argument(format!(
                    "feature set {} is not a subset of {}",
                    fs.name(),
                    self.feature_set.name()
                ))
            })?;
            col_idx.push(at);
        }
        let w = self.n_features();
        let mut out = Dataset::empty(fs, &self.provenance);
        out.label_detect = self.label_detect.clone();
        out.label_type = self.label_type.clone();
        out.scenario_id = self.scenario_id.clone();
        out.t_ms = self.t_ms.clone();
        out.features.reserve(self.n_rows() * col_idx.len());
        for r in 0..self.n_rows() {
            for &c in &col_idx {
                out.features.push(self.features[r * w + c]);
            }
        }
        Ok(out)
    }
}

/// Assemble a dataset from runs of one batch, in (scenario index, t) order.
pub fn assemble_dataset(runs: &[RawRun], fs: FeatureSet) -> Result<Dataset> {
    let provenance = runs.first().map(|r| r.provenance.clone()).unwrap_or_default();
    let mut ds = Dataset::empty(fs, &provenance);
    for run in runs {
        if run.provenance != provenance {
            return Err(Error::Provenance(format!(
                "run {} comes from a different batch",
                run.scenario.index
            )));
        }
        for s in extract_features(run)? {
            ds.push_sample(&s);
        }
    }
    Ok(ds)
}

/// Row-level shuffled split into `(train, validation)`. `train` gets
/// `round(train_fraction · N)` rows; together the parts partition the
/// dataset. With `shuffle` off the split is a plain prefix/suffix cut.
pub fn split_dataset(
    ds: &Dataset,
    train_fraction: f64,
    seed: u64,
    shuffle: bool,
) -> Result<(Dataset, Dataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Argument(format!(
            "train_fraction {train_fraction} outside (0, 1)"
        )));
    }
    if ds.is_empty() {
        return Err(Error::Argument("cannot split an empty dataset".into()));
    }
    let n = ds.n_rows();
    let mut order: Vec<usize> = (0..n).collect();
    if shuffle {
        shuffle_indices(&mut order, seed);
    }
    let n_train = (train_fraction * n as f64).round() as usize;
    let n_train = n_train.clamp(1, n - 1);
    Ok((
        ds.select(&order[..n_train]),
        ds.select(&order[n_train..]),
    ))
}

/// Scenario-level split: whole scenarios are assigned to one side, which
/// removes the near-duplicate-row leakage of the row-level split.
pub fn split_dataset_by_scenario(
    ds: &Dataset,
    train_fraction: f64,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Argument(format!(
            "train_fraction {train_fraction} outside (0, 1)"
        )));
    }
    if ds.is_empty() {
        return Err(Error::Argument("cannot split an empty dataset".into()));
    }
    let mut ids: Vec<u32> = ds.scenario_id.clone();
    ids.sort_unstable();
    ids.dedup();
    shuffle_ids(&mut ids, seed);
    let n_train_ids = ((train_fraction * ids.len() as f64).round() as usize).clamp(1, ids.len().saturating_sub(1).max(1));
    let train_ids: std::collections::HashSet<u32> = ids[..n_train_ids].iter().copied().collect();
    let mut train_rows = Vec::new();
    let mut val_rows = Vec::new();
    for r in 0..ds.n_rows() {
        if train_ids.contains(&ds.scenario_id[r]) {
            train_rows.push(r);
        } else {
            val_rows.push(r);
        }
    }
    Ok((ds.select(&train_rows), ds.select(&val_rows)))
}

fn shuffle_indices(order: &mut [usize], seed: u64) {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in (1..order.len()).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
}

fn shuffle_ids(ids: &mut [u32], seed: u64) {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in (1..ids.len()).rev() {
        let j = rng.random_range(0..=i);
        ids.swap(i, j);
    }
}

// ---------------------------------------------------------------------------
// CSV exchange
// ---------------------------------------------------------------------------

/// Format a float with 17 significant digits so the text round-trips to the
/// identical bit pattern.
pub fn format_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Write a dataset as CSV: a provenance comment, a header naming the id,
/// feature, and label columns, then one row per millisecond sample.
pub fn export_csv(ds: &Dataset, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    writeln!(w, "# provenance={}", ds.provenance)?;
    let mut header = String::from("scenario_id,t_ms");
    for c in ds.feature_set.columns() {
        let _ = write!(header, ",{}", c.name());
    }
    header.push_str(",label_detect,label_type");
    writeln!(w, "{header}")?;
    let width = ds.n_features();
    let mut line = String::with_capacity(width * 26 + 32);
    for r in 0..ds.n_rows() {
        line.clear();
        let _ = write!(line, "{},{}", ds.scenario_id[r], ds.t_ms[r]);
        for v in ds.row(r) {
            let _ = write!(line, ",{}", format_f64(*v));
        }
        let _ = write!(line, ",{},{}", ds.label_detect[r], ds.label_type[r]);
        writeln!(w, "{line}")?;
        let _ = width;
    }
    w.flush()?;
    Ok(())
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        msg: msg.into(),
    }
}

/// Read a dataset back; the feature set is inferred from the header and the
/// header must match one of the known layouts exactly.
pub fn import_csv(path: &Path) -> Result<Dataset> {
    let file = std::fs::File::open(path)?;
    let mut reader = BufReader::new(file);

    let mut first = String::new();
    reader.read_line(&mut first)?;
    let first = first.trim_end_matches('\n');
    let provenance = first
        .strip_prefix("# provenance=")
        .ok_or_else(|| parse_err(path, 1, "missing provenance comment line"))?
        .to_string();

    let mut header = String::new();
    reader.read_line(&mut header)?;
    let header = header.trim_end_matches('\n');
    let fs = FeatureSet::ALL
        .into_iter()
        .find(|fs| expected_header(*fs) == header)
        .ok_or_else(|| parse_err(path, 2, format!("unrecognized header '{header}'")))?;

    let width = fs.n_features();
    let mut ds = Dataset::empty(fs, &provenance);
    let mut seen = std::collections::HashSet::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let lineno = lineno + 3;
        let mut fields = line.split(',');
        let mut next = |what: &str| {
            fields
                .next()
                .ok_or_else(|| parse_err(path, lineno, format!("missing field {what}")))
        };
        let scenario_id: u32 = next("scenario_id")?
            .parse()
            .map_err(|e| parse_err(path, lineno, format!("scenario_id: {e}")))?;
        let t_ms: u32 = next("t_ms")?
            .parse()
            .map_err(|e| parse_err(path, lineno, format!("t_ms: {e}")))?;
        for k in 0..width {
            let v: f64 = next(fs.columns()[k].name())?
                .parse()
                .map_err(|e| parse_err(path, lineno, format!("feature {k}: {e}")))?;
            ds.features.push(v);
        }
        let label_detect: u8 = next("label_detect")?
            .parse()
            .map_err(|e| parse_err(path, lineno, format!("label_detect: {e}")))?;
        let label_type: u8 = next("label_type")?
            .parse()
            .map_err(|e| parse_err(path, lineno, format!("label_type: {e}")))?;
        if fields.next().is_some() {
            return Err(parse_err(path, lineno, "too many fields"));
        }
        if label_detect > 1 || label_type > 7 {
            return Err(parse_err(path, lineno, "label out of range"));
        }
        if !seen.insert((scenario_id, t_ms)) {
            return Err(parse_err(
                path,
                lineno,
                format!("duplicate (scenario_id={scenario_id}, t_ms={t_ms})"),
            ));
        }
        ds.scenario_id.push(scenario_id);
        ds.t_ms.push(t_ms);
        ds.label_detect.push(label_detect);
        ds.label_type.push(label_type);
    }
    Ok(ds)
}

fn expected_header(fs: FeatureSet) -> String {
    let mut h = String::from("scenario_id,t_ms");
    for c in fs.columns() {
        let _ = write!(h, ",{}", c.name());
    }
    h.push_str(",label_detect,label_type");
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::MicrogridConfig;
    use crate::scenario::{run_scenario, FaultScenario, FaultType};
    use proptest::prelude::*;

    fn short_run(fault_type: FaultType) -> RawRun {
        let cfg = MicrogridConfig::default();
        let scenario = FaultScenario {
            index: 3,
            fault_type,
            bus: 1,
            rf_ohm: 0.01,
            t_start: 0.05,
            duration: 0.05,
            sim_length: 0.15,
            load_p: 0.35,
            load_q: 0.035,
            seed: 0,
        };
        run_scenario(&cfg, &scenario).unwrap()
    }

    #[test]
    fn labels_follow_the_fault_window() {
        let run = short_run(FaultType::Ag);
        let samples = extract_features(&run).unwrap();
        assert_eq!(samples.len(), 150);
        for s in &samples {
            let expect = s.t_ms >= 50 && s.t_ms < 100;
            assert_eq!(s.label_detect == 1, expect, "at t = {}", s.t_ms);
            assert_eq!(s.label_type, if expect { 1 } else { 0 });
            assert_eq!(s.label_detect == 1, s.label_type != 0);
        }
        // Boundary: sample at 49 ms is pre-fault.
        assert_eq!(samples[49].label_detect, 0);
        assert_eq!(samples[50].label_detect, 1);
        assert_eq!(samples[99].label_detect, 1);
        assert_eq!(samples[100].label_detect, 0);
    }

    #[test]
    fn no_fault_run_has_no_positive_labels() {
        let run = short_run(FaultType::None);
        let samples = extract_features(&run).unwrap();
        assert!(samples.iter().all(|s| s.label_detect == 0 && s.label_type == 0));
        // Balanced pre-fault voltages: per-phase RMS matches magnitude 1.
        let s = &samples[120];
        assert!((s.va - s.vb).abs() < 1e-9 && (s.vb - s.vc).abs() < 1e-9);
    }

    #[test]
    fn dataset_assembly_orders_and_projects() {
        let run = short_run(FaultType::Acg);
        let full = assemble_dataset(std::slice::from_ref(&run), FeatureSet::IVPQ).unwrap();
        assert_eq!(full.n_rows(), 150);
        assert_eq!(full.n_features(), 8);
        let i_only = assemble_dataset(std::slice::from_ref(&run), FeatureSet::I).unwrap();
        assert_eq!(i_only.n_features(), 3);
        // Projection of the full dataset equals direct assembly.
        let projected = full.project(FeatureSet::I).unwrap();
        assert_eq!(projected, i_only);
        // And IPQ keeps P/Q columns aligned.
        let ipq = full.project(FeatureSet::IPQ).unwrap();
        for r in 0..ipq.n_rows() {
            assert_eq!(ipq.row(r)[3], full.row(r)[6]);
            assert_eq!(ipq.row(r)[4], full.row(r)[7]);
        }
    }

    #[test]
    fn empty_run_list_is_a_valid_empty_dataset() {
        let ds = assemble_dataset(&[], FeatureSet::IVPQ).unwrap();
        assert!(ds.is_empty());
    }

    #[test]
    fn mixed_provenance_rejected() {
        let mut a = short_run(FaultType::Ag);
        let mut b = short_run(FaultType::Bg);
        a.provenance = "batch-one".into();
        b.provenance = "batch-two".into();
        b.scenario.index = 4;
        assert!(matches!(
            assemble_dataset(&[a, b], FeatureSet::I),
            Err(Error::Provenance(_))
        ));
    }

    #[test]
    fn split_partitions_ten_rows_8_2() {
        let run = short_run(FaultType::Ag);
        let ds = assemble_dataset(std::slice::from_ref(&run), FeatureSet::I).unwrap();
        let small = ds.select(&(0..10).collect::<Vec<_>>());
        let (train, val) = split_dataset(&small, 0.8, 20, true).unwrap();
        assert_eq!(train.n_rows(), 8);
        assert_eq!(val.n_rows(), 2);
        let mut all: Vec<u32> = train.t_ms.iter().chain(val.t_ms.iter()).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<u32>>());
    }

    #[test]
    fn split_is_reproducible_and_seed_sensitive() {
        let run = short_run(FaultType::Ag);
        let ds = assemble_dataset(std::slice::from_ref(&run), FeatureSet::IVPQ).unwrap();
        let (t1, v1) = split_dataset(&ds, 0.8, 20, true).unwrap();
        let (t2, v2) = split_dataset(&ds, 0.8, 20, true).unwrap();
        assert_eq!(t1, t2);
        assert_eq!(v1, v2);
        // Different seed, different permutation (N = 150 rows here; the
        // chance of an identical shuffle is negligible).
        let (t3, _) = split_dataset(&ds, 0.8, 21, true).unwrap();
        assert_ne!(t1.t_ms, t3.t_ms);
    }

    #[test]
    fn scenario_split_keeps_scenarios_whole() {
        let mut runs = Vec::new();
        for (k, ft) in [FaultType::Ag, FaultType::Bg, FaultType::Cg, FaultType::Abg, FaultType::Acg]
            .into_iter()
            .enumerate()
        {
            let mut run = short_run(ft);
            run.scenario.index = k as u32;
            runs.push(run);
        }
        let ds = assemble_dataset(&runs, FeatureSet::I).unwrap();
        let (train, val) = split_dataset_by_scenario(&ds, 0.8, 20).unwrap();
        let train_ids: std::collections::HashSet<u32> = train.scenario_id.iter().copied().collect();
        let val_ids: std::collections::HashSet<u32> = val.scenario_id.iter().copied().collect();
        assert!(train_ids.is_disjoint(&val_ids));
        assert_eq!(train_ids.len() + val_ids.len(), 5);
    }

    #[test]
    fn invalid_fraction_rejected() {
        let run = short_run(FaultType::Ag);
        let ds = assemble_dataset(std::slice::from_ref(&run), FeatureSet::I).unwrap();
        assert!(matches!(split_dataset(&ds, 0.0, 20, true), Err(Error::Argument(_))));
        assert!(matches!(split_dataset(&ds, 1.0, 20, true), Err(Error::Argument(_))));
    }

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let run = short_run(FaultType::Acg);
        let ds = assemble_dataset(std::slice::from_ref(&run), FeatureSet::IVPQ).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.csv");
        export_csv(&ds, &path).unwrap();
        let back = import_csv(&path).unwrap();
        assert_eq!(ds, back);
    }

    #[test]
    fn header_mismatch_is_a_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(
            &path,
            "# provenance=x\nscenario_id,t_ms,Ia,Ib,label_detect,label_type\n",
        )
        .unwrap();
        assert!(matches!(import_csv(&path), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn malformed_row_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(
            &path,
            "# provenance=x\nscenario_id,t_ms,Ia,Ib,Ic,label_detect,label_type\n0,0,1.0,2.0,oops,0,0\n",
        )
        .unwrap();
        match import_csv(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    proptest! {
        #[test]
        fn f64_text_round_trip(bits in any::<u64>()) {
            let x = f64::from_bits(bits);
            prop_assume!(x.is_finite());
            let s = format_f64(x);
            let back: f64 = s.parse().unwrap();
            prop_assert_eq!(back.to_bits(), x.to_bits());
        }
    }
}
