//! Multi-view instance features and dataset handling.
//!
//! A dataset is a list of instances; every instance carries one feature
//! vector per view, and every instance covers the same view set. View order
//! is canonicalized lexicographically so all downstream iteration is
//! deterministic regardless of input order. Record order is file order.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance for the unit-norm checks at API boundaries (bank writes,
/// contrastive batches). Loose enough for one normalize pass in f64.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-6;

/// Name of a feature view (e.g. "rgb", "flow"). Nonempty, no tabs or
/// newlines so it survives the line-oriented file format.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ViewId(String);

impl ViewId {
    pub fn new(name: impl Into<String>) -> Result<Self> {
        let name = name.into();
        if name.is_empty() {
            return Err(Error::InvalidInput("view name must be nonempty".into()));
        }
        if name.contains(['\t', '\n', '\r']) {
            return Err(Error::InvalidInput(format!(
                "view name {name:?} contains whitespace control characters"
            )));
        }
        Ok(ViewId(name))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ViewId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Identifier of one instance. Unique within a dataset; slots in the memory
/// bank are tagged with it.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct InstanceId(String);

impl InstanceId {
    pub fn new(id: impl Into<String>) -> Result<Self> {
        let id = id.into();
        if id.is_empty() {
            return Err(Error::InvalidInput("instance id must be nonempty".into()));
        }
        if id.contains(['\t', '\n', '\r']) {
            return Err(Error::InvalidInput(format!(
                "instance id {id:?} contains whitespace control characters"
            )));
        }
        Ok(InstanceId(id))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for InstanceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Dense feature vector. Entries are always finite; dimension is fixed at
/// construction and must be at least 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureVec(Vec<f64>);

impl FeatureVec {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidInput("feature vector must be nonempty".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "feature vector".into(),
            });
        }
        Ok(FeatureVec(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    /// Plain sequential dot product. Kept free of fused or reordered
    /// arithmetic so independent reimplementations produce identical bits.
    pub fn dot(&self, other: &FeatureVec) -> f64 {
        debug_assert_eq!(self.dim(), other.dim(), "dot on mismatched dims");
        let mut acc = 0.0;
        for (a, b) in self.0.iter().zip(other.0.iter()) {
            acc += a * b;
        }
        acc
    }

    pub fn l2_norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    /// L2-normalized copy. A zero vector has no direction and is rejected.
    pub fn normalized(&self) -> Result<FeatureVec> {
        let norm = self.l2_norm();
        if !norm.is_finite() {
            return Err(Error::NonFinite {
                context: "feature norm".into(),
            });
        }
        if norm == 0.0 {
            return Err(Error::DegenerateFeature {
                context: "normalize".into(),
            });
        }
        Ok(FeatureVec(self.0.iter().map(|v| v / norm).collect()))
    }

    pub fn is_unit_norm(&self) -> bool {
        (self.l2_norm() - 1.0).abs() <= UNIT_NORM_TOLERANCE
    }

    /// Scaled copy, used by tests probing scale invariance of mining.
    pub fn scaled(&self, factor: f64) -> Result<FeatureVec> {
        FeatureVec::new(self.0.iter().map(|v| v * factor).collect())
    }
}

/// One instance: id, optional integer class label, and one feature vector
/// per view.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub id: InstanceId,
    pub class_label: Option<i64>,
    pub features: BTreeMap<ViewId, FeatureVec>,
}

impl InstanceRecord {
    pub fn feature(&self, view: &ViewId) -> Result<&FeatureVec> {
        self.features.get(view).ok_or_else(|| Error::MissingView {
            view: view.to_string(),
            context: format!("instance {}", self.id),
        })
    }
}

/// Validated collection of instances sharing one view set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    views: Vec<ViewId>,
    dims: BTreeMap<ViewId, usize>,
    records: Vec<InstanceRecord>,
}

impl Dataset {
    /// Validates structural invariants: nonempty, unique ids, every record
    /// covering exactly the same views, consistent dimension per view.
    pub fn new(records: Vec<InstanceRecord>) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::InvalidInput("dataset has no records".into()));
        }
        let views: Vec<ViewId> = records[0].features.keys().cloned().collect();
        if views.is_empty() {
            return Err(Error::InvalidInput("dataset records carry no views".into()));
        }
        let mut dims = BTreeMap::new();
        for (view, feat) in &records[0].features {
            dims.insert(view.clone(), feat.dim());
        }
        let mut seen: BTreeSet<&InstanceId> = BTreeSet::new();
        for rec in &records {
            if !seen.insert(&rec.id) {
                return Err(Error::DuplicateId(rec.id.to_string()));
            }
            for view in &views {
                let feat = rec.features.get(view).ok_or_else(|| Error::MissingView {
                    view: view.to_string(),
                    context: format!("instance {}", rec.id),
                })?;
                let expected = dims[view];
                if feat.dim() != expected {
                    return Err(Error::DimMismatch {
                        context: format!("instance {} view {view}", rec.id),
                        expected,
                        got: feat.dim(),
                    });
                }
            }
            for view in rec.features.keys() {
                if !dims.contains_key(view) {
                    return Err(Error::UnknownView {
                        view: view.to_string(),
                        context: format!("instance {}", rec.id),
                    });
                }
            }
        }
        Ok(Dataset {
            views,
            dims,
            records,
        })
    }

    /// Views in canonical (lexicographic) order.
    pub fn views(&self) -> &[ViewId] {
        &self.views
    }

    pub fn dim(&self, view: &ViewId) -> Result<usize> {
        self.dims.get(view).copied().ok_or_else(|| Error::UnknownView {
            view: view.to_string(),
            context: "dataset".into(),
        })
    }

    pub fn view_dims(&self) -> &BTreeMap<ViewId, usize> {
        &self.dims
    }

    pub fn records(&self) -> &[InstanceRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: &InstanceId) -> Option<&InstanceRecord> {
        self.records.iter().find(|r| &r.id == id)
    }

    pub fn is_fully_labeled(&self) -> bool {
        self.records.iter().all(|r| r.class_label.is_some())
    }

    /// Map from instance id to class label, labeled records only.
    pub fn labels(&self) -> BTreeMap<InstanceId, i64> {
        self.records
            .iter()
            .filter_map(|r| r.class_label.map(|c| (r.id.clone(), c)))
            .collect()
    }

    /// Number of labeled instances per class.
    pub fn class_sizes(&self) -> BTreeMap<i64, usize> {
        let mut sizes = BTreeMap::new();
        for rec in &self.records {
            if let Some(c) = rec.class_label {
                *sizes.entry(c).or_insert(0) += 1;
            }
        }
        sizes
    }

    /// Splits per class in record order: the first `train_per_class`
    /// records of each class go to the first dataset, the rest to the
    /// second. Requires full labels and enough records in every class.
    pub fn split_per_class(&self, train_per_class: usize) -> Result<(Dataset, Dataset)> {
        if !self.is_fully_labeled() {
            return Err(Error::InvalidInput(
                "per-class split requires a fully labeled dataset".into(),
            ));
        }
        if train_per_class == 0 {
            return Err(Error::InvalidInput("train_per_class must be >= 1".into()));
        }
        let mut taken: BTreeMap<i64, usize> = BTreeMap::new();
        let mut train = Vec::new();
        let mut rest = Vec::new();
        for rec in &self.records {
            let class = rec.class_label.expect("checked above");
            let count = taken.entry(class).or_insert(0);
            if *count < train_per_class {
                *count += 1;
                train.push(rec.clone());
            } else {
                rest.push(rec.clone());
            }
        }
        for (class, size) in self.class_sizes() {
            if size <= train_per_class {
                return Err(Error::InvalidInput(format!(
                    "class {class} has {size} records, need more than {train_per_class} to split"
                )));
            }
        }
        Ok((Dataset::new(train)?, Dataset::new(rest)?))
    }

    /// Loads the line-oriented feature file format. Vectors already
    /// unit-norm within tolerance are kept bit-exact (so save/load round
    /// trips and repeated ingestion are stable); anything else is
    /// L2-normalized. Format, one line per (instance, view):
    ///
    /// ```text
    /// id<TAB>label<TAB>view<TAB>v1,v2,...,vD
    /// ```
    ///
    /// `label` is a decimal integer or `-` for unlabeled. Lines starting
    /// with `#` and blank lines are skipped. All lines of one id must agree
    /// on the label; record order is order of first appearance.
    pub fn load(path: impl AsRef<Path>) -> Result<Dataset> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(Error::io(path))?;
        let parse_err = |line: usize, msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };

        let mut order: Vec<InstanceId> = Vec::new();
        let mut labels: BTreeMap<InstanceId, Option<i64>> = BTreeMap::new();
        let mut feats: BTreeMap<InstanceId, BTreeMap<ViewId, FeatureVec>> = BTreeMap::new();

        for (idx, raw) in text.lines().enumerate() {
            let lineno = idx + 1;
            let line = raw.trim_end();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 4 {
                return Err(parse_err(
                    lineno,
                    format!("expected 4 tab-separated fields, got {}", fields.len()),
                ));
            }
            let id = InstanceId::new(fields[0])
                .map_err(|e| parse_err(lineno, e.to_string()))?;
            let label = if fields[1] == "-" {
                None
            } else {
                Some(fields[1].parse::<i64>().map_err(|e| {
                    parse_err(lineno, format!("bad label {:?}: {e}", fields[1]))
                })?)
            };
            let view = ViewId::new(fields[2])
                .map_err(|e| parse_err(lineno, e.to_string()))?;
            let mut values = Vec::new();
            for piece in fields[3].split(',') {
                let v = piece.trim().parse::<f64>().map_err(|e| {
                    parse_err(lineno, format!("bad feature value {piece:?}: {e}"))
                })?;
                values.push(v);
            }
            let feat = FeatureVec::new(values)
                .and_then(|f| if f.is_unit_norm() { Ok(f) } else { f.normalized() })
                .map_err(|e| parse_err(lineno, e.to_string()))?;

            match labels.get(&id) {
                None => {
                    order.push(id.clone());
                    labels.insert(id.clone(), label);
                }
                Some(existing) if *existing != label => {
                    return Err(parse_err(
                        lineno,
                        format!("label for {id} disagrees with an earlier line"),
                    ));
                }
                Some(_) => {}
            }
            let entry = feats.entry(id.clone()).or_default();
            if entry.insert(view.clone(), feat).is_some() {
                return Err(parse_err(
                    lineno,
                    format!("duplicate line for instance {id} view {view}"),
                ));
            }
        }

        let mut records = Vec::with_capacity(order.len());
        for id in order {
            let features = feats.remove(&id).expect("populated with labels");
            let class_label = labels[&id];
            records.push(InstanceRecord {
                id,
                class_label,
                features,
            });
        }
        Dataset::new(records)
    }

    /// Writes the same format `load` reads. Floats are printed with Rust's
    /// shortest round-trip formatting, so save/load preserves exact bits.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::new();
        for rec in &self.records {
            let label = match rec.class_label {
                Some(c) => c.to_string(),
                None => "-".into(),
            };
            for (view, feat) in &rec.features {
                let values: Vec<String> =
                    feat.values().iter().map(|v| format!("{v}")).collect();
                out.push_str(&format!(
                    "{}\t{}\t{}\t{}\n",
                    rec.id,
                    label,
                    view,
                    values.join(",")
                ));
            }
        }
        fs::write(path, out).map_err(Error::io(path))
    }
}
