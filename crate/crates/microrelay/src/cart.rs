//! From-scratch CART training on Gini impurity, prediction, and a
//! versioned text serialization. No external ML dependency.
//!
//! Splits route `feature ≤ threshold` to the left child; candidate
//! thresholds are midpoints of consecutive distinct sorted feature values;
//! ties between equal-impurity splits break toward the lower feature index,
//! then the lower threshold, so training is deterministic across runs and
//! platforms.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::Dataset;

/// Which label column a tree predicts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    /// Binary fault detection (2 classes).
    Detect,
    /// Fault type number (8 classes).
    Type,
}

impl Target {
    pub fn n_classes(self) -> usize {
        match self {
            Target::Detect => 2,
            Target::Type => 8,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Target::Detect => "detect",
            Target::Type => "type",
        }
    }

    pub fn labels<'a>(self, ds: &'a Dataset) -> &'a [u8] {
        match self {
            Target::Detect => &ds.label_detect,
            Target::Type => &ds.label_type,
        }
    }
}

impl std::str::FromStr for Target {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "detect" => Ok(Target::Detect),
            "type" => Ok(Target::Type),
            other => Err(Error::Argument(format!("unknown target '{other}'"))),
        }
    }
}

/// Gini impurity `1 − Σ pᵢ²` of a class-count vector.
pub fn gini(counts: &[u64]) -> Result<f64> {
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Err(Error::Argument("gini of an empty count vector".into()));
    }
    Ok(gini_unchecked(counts, total))
}

#[inline]
fn gini_unchecked(counts: &[u64], total: u64) -> f64 {
    let n = total as f64;
    let ssq: f64 = counts.iter().map(|&c| (c as f64) * (c as f64)).sum();
    1.0 - ssq / (n * n)
}

/// Training hyper-parameters. `seed` is recorded for provenance; the
/// trainer itself is fully deterministic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub max_depth: usize,
    pub min_samples_split: usize,
    pub min_impurity_decrease: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_depth: 43,
            min_samples_split: 2,
            min_impurity_decrease: 0.0,
            seed: 20,
        }
    }
}

/// Tree nodes stored in preorder; `root = 0`.
#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: u32,
        right: u32,
    },
    Leaf {
        counts: Vec<u64>,
        majority: u8,
    },
}

/// A trained classification tree.
#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    nodes: Vec<Node>,
    pub target: Target,
    pub n_classes: usize,
    pub feature_names: Vec<String>,
    pub provenance: String,
}

/// Structural counts of a tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeStats {
    pub depth: usize,
    pub leaves: usize,
    pub nodes: usize,
}

/// A chosen split: the routing rule and the weighted child impurity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Split {
    pub feature: usize,
    pub threshold: f64,
    pub weighted_gini: f64,
}

struct Trainer<'a> {
    features: &'a [f64],
    width: usize,
    labels: &'a [u8],
    n_classes: usize,
    cfg: TrainConfig,
    nodes: Vec<Node>,
}

/// Weighted child impurity `(n_L·G_L + n_R·G_R)/n` evaluated from exact
/// integer squared-count sums, so equal-count candidates tie bit-exactly.
#[inline]
pub fn weighted_child_gini(left_ssq: u64, n_left: u64, right_ssq: u64, n_right: u64) -> f64 {
    let nl = n_left as f64;
    let nr = n_right as f64;
    ((nl - left_ssq as f64 / nl) + (nr - right_ssq as f64 / nr)) / (nl + nr)
}

/// Midpoint threshold between two consecutive distinct values; falls back
/// to the lower value if rounding lands the midpoint on the upper one, so
/// `x ≤ threshold` always separates the pair.
#[inline]
pub fn midpoint_threshold(lo: f64, hi: f64) -> f64 {
    let thr = lo / 2.0 + hi / 2.0;
    if thr >= hi {
        lo
    } else {
        thr
    }
}

/// Per-feature best split for the rows in `idx`: sort the (value, label)
/// pairs, then scan boundaries between distinct values with incremental
/// class counts. Returns `(weighted child gini, threshold)`.
fn best_split_for_feature(
    values: &mut Vec<(f64, u8)>,
    n_classes: usize,
) -> Option<(f64, f64)> {
    let n = values.len();
    values.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
    let mut left = vec![0u64; n_classes];
    let mut right = vec![0u64; n_classes];
    for &(_, l) in values.iter() {
        right[l as usize] += 1;
    }
    let mut left_ssq = 0u64;
    let mut right_ssq: u64 = right.iter().map(|&c| c * c).sum();
    let mut best: Option<(f64, f64)> = None;
    for i in 1..n {
        let l = values[i - 1].1 as usize;
        // Move sample i-1 from the right to the left partition; the sums of
        // squared counts update incrementally and stay exact integers.
        left_ssq += 2 * left[l] + 1;
        right_ssq -= 2 * right[l] - 1;
        left[l] += 1;
        right[l] -= 1;

        let (lo, hi) = (values[i - 1].0, values[i].0);
        if hi <= lo {
            continue;
        }
        let weighted = weighted_child_gini(left_ssq, i as u64, right_ssq, (n - i) as u64);
        if best.map_or(true, |(w, _)| weighted < w) {
            best = Some((weighted, midpoint_threshold(lo, hi)));
        }
    }
    best
}

/// Best split over all features for the rows in `idx`, or `None` when the
/// node is pure, too small, or no boundary reduces impurity by at least
/// `min_impurity_decrease`.
pub fn best_split(
    features: &[f64],
    width: usize,
    labels: &[u8],
    idx: &[u32],
    n_classes: usize,
    cfg: &TrainConfig,
) -> Option<Split> {
    let n = idx.len();
    if n < cfg.min_samples_split.max(2) {
        return None;
    }
    let mut counts = vec![0u64; n_classes];
    for &r in idx {
        counts[labels[r as usize] as usize] += 1;
    }
    let parent = gini_unchecked(&counts, n as u64);
    if parent <= 0.0 {
        return None;
    }

    let per_feature: Vec<Option<(f64, f64)>> = if n >= 8192 {
        (0..width)
            .into_par_iter()
            .map(|f| {
                let mut vals: Vec<(f64, u8)> = idx
                    .iter()
                    .map(|&r| (features[r as usize * width + f], labels[r as usize]))
                    .collect();
                best_split_for_feature(&mut vals, n_classes)
            })
            .collect()
    } else {
        let mut out = Vec::with_capacity(width);
        let mut vals: Vec<(f64, u8)> = Vec::with_capacity(n);
        for f in 0..width {
            vals.clear();
            vals.extend(
                idx.iter()
                    .map(|&r| (features[r as usize * width + f], labels[r as usize])),
            );
            out.push(best_split_for_feature(&mut vals, n_classes));
        }
        out
    };

    let mut best: Option<Split> = None;
    for (f, cand) in per_feature.into_iter().enumerate() {
        if let Some((weighted, threshold)) = cand {
            let better = match &best {
                None => true,
                Some(b) => weighted < b.weighted_gini,
            };
            if better {
                best = Some(Split {
                    feature: f,
                    threshold,
                    weighted_gini: weighted,
                });
            }
        }
    }
    let split = best?;
    // Zero-gain splits are accepted (the gate is non-strict); the 1e-12
    // slack absorbs float noise between the two impurity computations.
    if parent - split.weighted_gini >= cfg.min_impurity_decrease - 1e-12 {
        Some(split)
    } else {
        None
    }
}

impl<'a> Trainer<'a> {
    fn leaf(&mut self, idx: &[u32]) -> u32 {
        let mut counts = vec![0u64; self.n_classes];
        for &r in idx {
            counts[self.labels[r as usize] as usize] += 1;
        }
        let majority = counts
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
            .map(|(c, _)| c as u8)
            .unwrap_or(0);
        let id = self.nodes.len() as u32;
        self.nodes.push(Node::Leaf { counts, majority });
        id
    }

    fn grow(&mut self, idx: &mut [u32], depth: usize) -> u32 {
        if depth >= self.cfg.max_depth || idx.len() < self.cfg.min_samples_split {
            return self.leaf(idx);
        }
        let split = match best_split(
            self.features,
            self.width,
            self.labels,
            idx,
            self.n_classes,
            &self.cfg,
        ) {
            Some(s) => s,
            None => return self.leaf(idx),
        };

        // Partition in place: `≤ threshold` first.
        let mut mid = 0usize;
        for i in 0..idx.len() {
            if self.features[idx[i] as usize * self.width + split.feature] <= split.threshold {
                idx.swap(i, mid);
                mid += 1;
            }
        }
        debug_assert!(mid > 0 && mid < idx.len());

        let id = self.nodes.len() as u32;
        self.nodes.push(Node::Split {
            feature: split.feature,
            threshold: split.threshold,
            left: 0,
            right: 0,
        });
        let (l_idx, r_idx) = idx.split_at_mut(mid);
        let left = self.grow(l_idx, depth + 1);
        let right = self.grow(r_idx, depth + 1);
        if let Node::Split {
            left: l, right: r, ..
        } = &mut self.nodes[id as usize]
        {
            *l = left;
            *r = right;
        }
        id
    }
}

/// Train a tree on a dataset for the given target.
pub fn fit(ds: &Dataset, target: Target, cfg: &TrainConfig) -> Result<Tree> {
    if ds.is_empty() {
        return Err(Error::Argument("cannot fit on an empty dataset".into()));
    }
    if cfg.max_depth == 0 {
        return Err(Error::Argument("max_depth must be at least 1".into()));
    }
    let labels = target.labels(ds);
    let n_classes = target.n_classes();
    if let Some(&bad) = labels.iter().find(|&&l| (l as usize) >= n_classes) {
        return Err(Error::Argument(format!(
            "label {bad} out of range for target {}",
            target.name()
        )));
    }
    let mut trainer = Trainer {
        features: &ds.features,
        width: ds.n_features(),
        labels,
        n_classes,
        cfg: *cfg,
        nodes: Vec::new(),
    };
    let mut idx: Vec<u32> = (0..ds.n_rows() as u32).collect();
    trainer.grow(&mut idx, 0);
    Ok(Tree {
        nodes: trainer.nodes,
        target,
        n_classes,
        feature_names: ds
            .feature_set
            .columns()
            .iter()
            .map(|c| c.name().to_string())
            .collect(),
        provenance: ds.provenance.clone(),
    })
}

impl Tree {
    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    fn check_arity(&self, row: &[f64]) -> Result<()> {
        if row.len() != self.n_features() {
            return Err(Error::Arity {
                expected: self.n_features(),
                got: row.len(),
            });
        }
        Ok(())
    }

    /// Root-to-leaf traversal; `feature ≤ threshold` routes left.
    pub fn predict_label(&self, row: &[f64]) -> Result<u8> {
        self.check_arity(row)?;
        Ok(self.leaf_for(row).1)
    }

    /// Predicted class plus the normalized class distribution at the leaf.
    pub fn predict(&self, row: &[f64]) -> Result<(u8, Vec<f64>)> {
        self.check_arity(row)?;
        let (counts, majority) = self.leaf_for(row);
        let total: u64 = counts.iter().sum();
        let dist = counts
            .iter()
            .map(|&c| c as f64 / total as f64)
            .collect();
        Ok((majority, dist))
    }

    fn leaf_for(&self, row: &[f64]) -> (&Vec<u64>, u8) {
        let mut at = 0u32;
        loop {
            match &self.nodes[at as usize] {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    at = if row[*feature] <= *threshold {
                        *left
                    } else {
                        *right
                    };
                }
                Node::Leaf { counts, majority } => return (counts, *majority),
            }
        }
    }

    /// Exact structural counts: a single leaf has depth 0.
    pub fn stats(&self) -> TreeStats {
        fn walk(nodes: &[Node], at: u32) -> (usize, usize) {
            match &nodes[at as usize] {
                Node::Leaf { .. } => (0, 1),
                Node::Split { left, right, .. } => {
                    let (dl, ll) = walk(nodes, *left);
                    let (dr, lr) = walk(nodes, *right);
                    (dl.max(dr) + 1, ll + lr)
                }
            }
        }
        let (depth, leaves) = walk(&self.nodes, 0);
        TreeStats {
            depth,
            leaves,
            nodes: self.nodes.len(),
        }
    }

    // -- text format --------------------------------------------------------

    const FORMAT_VERSION: &'static str = "microrelay-tree v1";

    /// Line-oriented text form: header, then one preorder node record per
    /// line (`S feature threshold left right` or `L majority counts…`),
    /// closed by `end`.
    pub fn serialize(&self) -> String {
        use std::fmt::Write;
        let mut out = String::new();
        let _ = writeln!(out, "{}", Self::FORMAT_VERSION);
        let _ = writeln!(out, "target {}", self.target.name());
        let _ = writeln!(out, "classes {}", self.n_classes);
        let _ = writeln!(out, "features {}", self.feature_names.join(" "));
        let _ = writeln!(
            out,
            "provenance {}",
            if self.provenance.is_empty() {
                "-"
            } else {
                &self.provenance
            }
        );
        let _ = writeln!(out, "nodes {}", self.nodes.len());
        for node in &self.nodes {
            match node {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    let _ = writeln!(out, "S {feature} {threshold:.16e} {left} {right}");
                }
                Node::Leaf { counts, majority } => {
                    let _ = write!(out, "L {majority}");
                    for c in counts {
                        let _ = write!(out, " {c}");
                    }
                    out.push('\n');
                }
            }
        }
        out.push_str("end\n");
        out
    }

    pub fn deserialize(text: &str) -> Result<Tree> {
        let mut lines = text.lines();
        let mut expect = |what: &str| {
            lines
                .next()
                .ok_or_else(|| Error::Model(format!("truncated file: missing {what}")))
        };
        let version = expect("version")?;
        if version != Self::FORMAT_VERSION {
            return Err(Error::Model(format!("unsupported version '{version}'")));
        }
        let target: Target = expect("target")?
            .strip_prefix("target ")
            .ok_or_else(|| Error::Model("missing target line".into()))?
            .parse()?;
        let n_classes: usize = expect("classes")?
            .strip_prefix("classes ")
            .ok_or_else(|| Error::Model("missing classes line".into()))?
            .parse()
            .map_err(|e| Error::Model(format!("classes: {e}")))?;
        if n_classes != target.n_classes() {
            return Err(Error::Model(format!(
                "class count {n_classes} does not match target {}",
                target.name()
            )));
        }
        let feature_names: Vec<String> = expect("features")?
            .strip_prefix("features ")
            .ok_or_else(|| Error::Model("missing features line".into()))?
            .split_whitespace()
            .map(str::to_string)
            .collect();
        if feature_names.is_empty() {
            return Err(Error::Model("empty feature list".into()));
        }
        let provenance = expect("provenance")?
            .strip_prefix("provenance ")
            .ok_or_else(|| Error::Model("missing provenance line".into()))?;
        let provenance = if provenance == "-" {
            String::new()
        } else {
            provenance.to_string()
        };
        let n_nodes: usize = expect("nodes")?
            .strip_prefix("nodes ")
            .ok_or_else(|| Error::Model("missing nodes line".into()))?
            .parse()
            .map_err(|e| Error::Model(format!("nodes: {e}")))?;
        if n_nodes == 0 {
            return Err(Error::Model("tree has no nodes".into()));
        }

        let mut nodes = Vec::with_capacity(n_nodes);
        for k in 0..n_nodes {
            let line = expect(&format!("node {k}"))?;
            let mut parts = line.split_whitespace();
            match parts.next() {
                Some("S") => {
                    let mut num = |what: &str| -> Result<String> {
                        parts
                            .next()
                            .map(str::to_string)
                            .ok_or_else(|| Error::Model(format!("node {k}: missing {what}")))
                    };
                    let feature: usize = num("feature")?
                        .parse()
                        .map_err(|e| Error::Model(format!("node {k} feature: {e}")))?;
                    let threshold: f64 = num("threshold")?
                        .parse()
                        .map_err(|e| Error::Model(format!("node {k} threshold: {e}")))?;
                    let left: u32 = num("left")?
                        .parse()
                        .map_err(|e| Error::Model(format!("node {k} left: {e}")))?;
                    let right: u32 = num("right")?
                        .parse()
                        .map_err(|e| Error::Model(format!("node {k} right: {e}")))?;
                    if feature >= feature_names.len()
                        || left as usize >= n_nodes
                        || right as usize >= n_nodes
                        || left as usize <= k
                        || right as usize <= k
                    {
                        return Err(Error::Model(format!("node {k}: invalid references")));
                    }
                    nodes.push(Node::Split {
                        feature,
                        threshold,
                        left,
                        right,
                    });
                }
                Some("L") => {
                    let fields: Vec<&str> = parts.collect();
                    if fields.len() != n_classes + 1 {
                        return Err(Error::Model(format!(
                            "node {k}: expected majority plus {n_classes} counts"
                        )));
                    }
                    let majority: u8 = fields[0]
                        .parse()
                        .map_err(|e| Error::Model(format!("node {k} majority: {e}")))?;
                    let counts: Vec<u64> = fields[1..]
                        .iter()
                        .map(|f| f.parse::<u64>())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|e| Error::Model(format!("node {k} counts: {e}")))?;
                    if (majority as usize) >= n_classes || counts.iter().sum::<u64>() == 0 {
                        return Err(Error::Model(format!("node {k}: invalid leaf")));
                    }
                    nodes.push(Node::Leaf { counts, majority });
                }
                other => {
                    return Err(Error::Model(format!("node {k}: bad record {other:?}")));
                }
            }
        }
        if lines.next() != Some("end") {
            return Err(Error::Model("truncated file: missing end marker".into()));
        }
        Ok(Tree {
            nodes,
            target,
            n_classes,
            feature_names,
            provenance,
        })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.serialize())?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Tree> {
        let text = std::fs::read_to_string(path)?;
        Tree::deserialize(&text)
    }
}
