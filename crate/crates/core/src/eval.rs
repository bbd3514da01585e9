//! Mining-quality and retrieval metrics.
//!
//! Mining metrics score what the cascade dug up against ground-truth
//! class labels: the fraction of mined positives that share the query's
//! class (per query), whether the top-ranked mined slot does (per query),
//! and per class the fraction of its instances that were ever mined
//! correctly by a same-class query across an epoch. Retrieval recall@k
//! scores raw embedding quality by nearest-neighbor class agreement and
//! needs no mining at all.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature::{FeatureVec, InstanceId};
use crate::miner::{MiningResult, QueryTrace};

pub type ClassLabel = i64;

/// Fraction of mined positive slots whose label equals the query class.
/// The query's own enqueued variant is excluded from mining upstream, so
/// it never inflates this.
pub fn positive_mining_recall(
    result: &MiningResult,
    query_class: ClassLabel,
    slot_labels: &BTreeMap<usize, ClassLabel>,
) -> Result<f64> {
    if result.positives.is_empty() {
        return Err(Error::InvalidInput("mined positive set is empty".into()));
    }
    let mut tp = 0usize;
    for slot in &result.positives {
        let label = slot_labels.get(slot).ok_or(Error::SlotOutOfRange {
            slot: *slot,
            occupied: slot_labels.len(),
        })?;
        if *label == query_class {
            tp += 1;
        }
    }
    Ok(tp as f64 / result.positives.len() as f64)
}

/// Same computation from resolved instance ids instead of live slots.
pub fn pmr_from_ids(
    positive_ids: &[InstanceId],
    query_class: ClassLabel,
    labels: &BTreeMap<InstanceId, ClassLabel>,
) -> Result<f64> {
    if positive_ids.is_empty() {
        return Err(Error::InvalidInput("mined positive set is empty".into()));
    }
    let mut tp = 0usize;
    for id in positive_ids {
        let label = labels
            .get(id)
            .ok_or_else(|| Error::UnknownInstance(id.to_string()))?;
        if *label == query_class {
            tp += 1;
        }
    }
    Ok(tp as f64 / positive_ids.len() as f64)
}

/// Whether the best-ranked mined slot shares the query's class.
pub fn mining_recall_at_1(
    result: &MiningResult,
    query_class: ClassLabel,
    slot_labels: &BTreeMap<usize, ClassLabel>,
) -> Result<bool> {
    let top = result
        .top_ranked()
        .ok_or_else(|| Error::InvalidInput("mined positive set is empty".into()))?;
    let label = slot_labels.get(&top).ok_or(Error::SlotOutOfRange {
        slot: top,
        occupied: slot_labels.len(),
    })?;
    Ok(*label == query_class)
}

/// Per-class coverage row: how many distinct instances of the class were
/// mined as true positives by same-class queries, over the class size.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassRecallRow {
    pub tp_count: usize,
    pub class_size: usize,
    pub recall: f64,
}

/// Class-level mining recall over a set of traces (typically one epoch).
/// A mined instance counts for class c only when the *query* has class c
/// and the mined instance really is class c; each instance counts once no
/// matter how many queries found it. Every class in `class_sizes` gets a
/// row, mined or not.
pub fn class_mining_recall(
    traces: &[QueryTrace],
    labels: &BTreeMap<InstanceId, ClassLabel>,
    class_sizes: &BTreeMap<ClassLabel, usize>,
) -> Result<BTreeMap<ClassLabel, ClassRecallRow>> {
    for (class, size) in class_sizes {
        if *size == 0 {
            return Err(Error::InvalidInput(format!("class {class} has size 0")));
        }
    }
    let mut tp_sets: BTreeMap<ClassLabel, BTreeSet<&InstanceId>> = BTreeMap::new();
    for trace in traces {
        let query_class = *labels
            .get(&trace.query_id)
            .ok_or_else(|| Error::UnknownInstance(trace.query_id.to_string()))?;
        if !class_sizes.contains_key(&query_class) {
            return Err(Error::UnknownClass(query_class));
        }
        for id in &trace.positive_ids {
            let label = *labels
                .get(id)
                .ok_or_else(|| Error::UnknownInstance(id.to_string()))?;
            if label == query_class {
                tp_sets.entry(query_class).or_default().insert(id);
            }
        }
    }
    let mut rows = BTreeMap::new();
    for (class, size) in class_sizes {
        let tp_count = tp_sets.get(class).map_or(0, |s| s.len());
        rows.insert(
            *class,
            ClassRecallRow {
                tp_count,
                class_size: *size,
                recall: tp_count as f64 / *size as f64,
            },
        );
    }
    Ok(rows)
}

/// Median of a nonempty slice (mean of the two middles for even length).
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let n = sorted.len();
    if n % 2 == 1 {
        Some(sorted[n / 2])
    } else {
        Some((sorted[n / 2 - 1] + sorted[n / 2]) / 2.0)
    }
}

/// Per-query mining metrics averaged over an epoch of traces.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMiningMetrics {
    pub pmr_mean: f64,
    pub recall_at_1: f64,
}

pub fn epoch_mining_metrics(
    traces: &[QueryTrace],
    labels: &BTreeMap<InstanceId, ClassLabel>,
) -> Result<EpochMiningMetrics> {
    if traces.is_empty() {
        return Err(Error::InvalidInput("no traces in epoch".into()));
    }
    let mut pmr_sum = 0.0;
    let mut hits = 0usize;
    for trace in traces {
        let query_class = *labels
            .get(&trace.query_id)
            .ok_or_else(|| Error::UnknownInstance(trace.query_id.to_string()))?;
        pmr_sum += pmr_from_ids(&trace.positive_ids, query_class, labels)?;
        let top = trace
            .positive_ids
            .first()
            .ok_or_else(|| Error::InvalidInput("mined positive set is empty".into()))?;
        let top_label = *labels
            .get(top)
            .ok_or_else(|| Error::UnknownInstance(top.to_string()))?;
        if top_label == query_class {
            hits += 1;
        }
    }
    Ok(EpochMiningMetrics {
        pmr_mean: pmr_sum / traces.len() as f64,
        recall_at_1: hits as f64 / traces.len() as f64,
    })
}

/// Fraction of test embeddings whose k nearest train embeddings (cosine)
/// include at least one of the same class, for each requested k. Ties in
/// similarity go to the lower train index; k larger than the train set
/// just means "anywhere".
pub fn retrieval_recall(
    test: &[(ClassLabel, FeatureVec)],
    train: &[(ClassLabel, FeatureVec)],
    ks: &[usize],
) -> Result<BTreeMap<usize, f64>> {
    if test.is_empty() || train.is_empty() {
        return Err(Error::InvalidInput(
            "retrieval needs nonempty train and test sets".into(),
        ));
    }
    if ks.iter().any(|&k| k == 0) {
        return Err(Error::InvalidInput("recall@k needs k >= 1".into()));
    }
    let dim = train[0].1.dim();
    for (_, f) in test.iter().chain(train.iter()) {
        if f.dim() != dim {
            return Err(Error::DimMismatch {
                context: "retrieval embeddings".into(),
                expected: dim,
                got: f.dim(),
            });
        }
    }
    let mut first_match_ranks = Vec::with_capacity(test.len());
    for (label, feat) in test {
        let qn = feat.l2_norm();
        let mut scored: Vec<(usize, f64)> = train
            .iter()
            .enumerate()
            .map(|(i, (_, t))| (i, feat.dot(t) / (qn * t.l2_norm())))
            .collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let rank = scored
            .iter()
            .position(|(i, _)| train[*i].0 == *label)
            .map(|p| p + 1);
        first_match_ranks.push(rank);
    }
    let mut out = BTreeMap::new();
    for &k in ks {
        let hits = first_match_ranks
            .iter()
            .filter(|r| matches!(r, Some(rank) if *rank <= k))
            .count();
        out.insert(k, hits as f64 / test.len() as f64);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::miner::MiningResult;

    fn id(s: &str) -> InstanceId {
        InstanceId::new(s).unwrap()
    }

    fn unit(values: Vec<f64>) -> FeatureVec {
        FeatureVec::new(values).unwrap().normalized().unwrap()
    }

    fn result_with(positives: Vec<usize>, negatives: &[usize]) -> MiningResult {
        MiningResult {
            positives,
            negatives: negatives.iter().copied().collect(),
            stages: vec![],
        }
    }

    fn trace(query: &str, mined: &[&str]) -> QueryTrace {
        QueryTrace {
            query_id: id(query),
            positive_ids: mined.iter().map(|m| id(m)).collect(),
            result: result_with((0..mined.len()).collect(), &[]),
        }
    }

    #[test]
    fn pmr_counts_query_class_matches() {
        let labels: BTreeMap<usize, i64> = [(1, 7), (3, 4)].into();
        let result = result_with(vec![1, 3], &[]);
        assert_eq!(positive_mining_recall(&result, 7, &labels).unwrap(), 0.5);
        assert_eq!(positive_mining_recall(&result, 4, &labels).unwrap(), 0.5);
        assert_eq!(positive_mining_recall(&result, 9, &labels).unwrap(), 0.0);
    }

    #[test]
    fn recall_at_1_looks_only_at_the_top_slot() {
        let labels: BTreeMap<usize, i64> = [(1, 7), (3, 4)].into();
        let result = result_with(vec![1, 3], &[]);
        assert!(mining_recall_at_1(&result, 7, &labels).unwrap());
        assert!(!mining_recall_at_1(&result, 4, &labels).unwrap());
        // With a single mined slot the two metrics agree numerically.
        let single = result_with(vec![3], &[]);
        let pmr = positive_mining_recall(&single, 4, &labels).unwrap();
        let r1 = mining_recall_at_1(&single, 4, &labels).unwrap();
        assert_eq!(pmr, if r1 { 1.0 } else { 0.0 });
    }

    #[test]
    fn unlabeled_slot_is_an_error() {
        let labels: BTreeMap<usize, i64> = [(1, 7)].into();
        let result = result_with(vec![1, 9], &[]);
        assert!(positive_mining_recall(&result, 7, &labels).is_err());
    }

    #[test]
    fn class_recall_counts_distinct_instances_once() {
        // Class 0 = {qA, qB, qC}, class 1 = {qD, qE}. Class 0 gets full
        // coverage (qA, qB, qC all mined by same-class queries, duplicates
        // collapsing); class 1 only recovers qE.
        let labels: BTreeMap<InstanceId, i64> = [
            (id("qA"), 0),
            (id("qB"), 0),
            (id("qC"), 0),
            (id("qD"), 1),
            (id("qE"), 1),
        ]
        .into();
        let class_sizes: BTreeMap<i64, usize> = [(0, 3), (1, 2)].into();
        let traces = vec![
            trace("qA", &["qB", "qD"]),
            trace("qB", &["qA", "qC"]),
            trace("qC", &["qB", "qA"]),
            trace("qD", &["qE", "qA"]),
            trace("qE", &["qA"]),
        ];
        let rows = class_mining_recall(&traces, &labels, &class_sizes).unwrap();
        assert_eq!(rows[&0].tp_count, 3);
        assert_eq!(rows[&0].recall, 1.0);
        assert_eq!(rows[&1].tp_count, 1);
        assert_eq!(rows[&1].recall, 0.5);
        let values: Vec<f64> = rows.values().map(|r| r.recall).collect();
        assert_eq!(median(&values), Some(0.75));
    }

    #[test]
    fn class_recall_gives_unmined_classes_a_zero_row() {
        let labels: BTreeMap<InstanceId, i64> = [(id("qA"), 0), (id("qZ"), 5)].into();
        let class_sizes: BTreeMap<i64, usize> = [(0, 1), (5, 1)].into();
        let traces = vec![trace("qA", &["qZ"])];
        let rows = class_mining_recall(&traces, &labels, &class_sizes).unwrap();
        assert_eq!(rows[&0].tp_count, 0);
        assert_eq!(rows[&5].tp_count, 0, "cross-class mining is not a TP");
        assert_eq!(rows.len(), 2);
    }

    #[test]
    fn query_class_missing_from_sizes_is_an_error() {
        let labels: BTreeMap<InstanceId, i64> = [(id("qA"), 3), (id("qB"), 3)].into();
        let class_sizes: BTreeMap<i64, usize> = [(0, 1)].into();
        let traces = vec![trace("qA", &["qB"])];
        let err = class_mining_recall(&traces, &labels, &class_sizes).unwrap_err();
        assert!(err.to_string().contains("unknown class 3"), "{err}");
    }

    #[test]
    fn median_handles_even_and_odd() {
        assert_eq!(median(&[]), None);
        assert_eq!(median(&[0.3]), Some(0.3));
        assert_eq!(median(&[1.0, 0.5]), Some(0.75));
        assert_eq!(median(&[0.9, 0.1, 0.5]), Some(0.5));
    }

    #[test]
    fn epoch_metrics_average_per_query() {
        let labels: BTreeMap<InstanceId, i64> =
            [(id("a"), 0), (id("b"), 0), (id("c"), 1)].into();
        let traces = vec![
            trace("a", &["b", "c"]), // pmr 0.5, top hit
            trace("b", &["c", "a"]), // pmr 0.5, top miss
        ];
        let m = epoch_mining_metrics(&traces, &labels).unwrap();
        assert_eq!(m.pmr_mean, 0.5);
        assert_eq!(m.recall_at_1, 0.5);
    }

    #[test]
    fn retrieval_recall_fixture() {
        // Planar points by angle; neighbor order is angle distance. Train
        // classes sit in blocks: class 0 at 0 and 10 degrees, class 1 at
        // 20 and 30. Test points at 2 (class 0), 12 (class 1), 2 (class 1)
        // have their first same-class neighbor at ranks 1, 2, and 3, so
        // recall is 1/3 at k=1, 2/3 at k=2, 1 from k=3 on.
        let at = |deg: f64| {
            let r = deg.to_radians();
            unit(vec![r.cos(), r.sin()])
        };
        let train = vec![(0, at(0.0)), (0, at(10.0)), (1, at(20.0)), (1, at(30.0))];
        let test = vec![(0, at(2.0)), (1, at(12.0)), (1, at(2.0))];
        let ks = vec![1, 2, 3, 4, 100];
        let got = retrieval_recall(&test, &train, &ks).unwrap();
        let expect: BTreeMap<usize, f64> = [
            (1, 1.0 / 3.0),
            (2, 2.0 / 3.0),
            (3, 1.0),
            (4, 1.0),
            (100, 1.0),
        ]
        .into();
        assert_eq!(got, expect);
    }

    #[test]
    fn retrieval_recall_is_monotone_in_k() {
        let train = vec![
            (0, unit(vec![1.0, 0.0, 0.2])),
            (1, unit(vec![0.0, 1.0, -0.3])),
            (2, unit(vec![0.5, 0.5, 0.9])),
            (0, unit(vec![-1.0, 0.2, 0.0])),
        ];
        let test = vec![
            (2, unit(vec![0.9, 0.1, 0.1])),
            (0, unit(vec![0.1, 0.9, 0.0])),
        ];
        let ks = vec![1, 2, 3, 4];
        let got = retrieval_recall(&test, &train, &ks).unwrap();
        let values: Vec<f64> = got.values().copied().collect();
        for w in values.windows(2) {
            assert!(w[1] >= w[0], "recall@k decreased: {values:?}");
        }
    }

    #[test]
    fn retrieval_validates_inputs() {
        let a = (0, unit(vec![1.0, 0.0]));
        assert!(retrieval_recall(&[], &[a.clone()], &[1]).is_err());
        assert!(retrieval_recall(&[a.clone()], &[], &[1]).is_err());
        assert!(retrieval_recall(&[a.clone()], &[a.clone()], &[0]).is_err());
        let bad = (0, unit(vec![1.0, 0.0, 0.0]));
        assert!(retrieval_recall(&[a.clone()], &[a, bad], &[1]).is_err());
    }
}
