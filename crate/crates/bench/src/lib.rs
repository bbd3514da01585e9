//! Shared input builders for the criterion benches: deterministic random
//! banks, queries, and contrastive batches at benchmark scale.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use casmine_core::bank::{BankEntry, MemoryBank};
use casmine_core::feature::{FeatureVec, InstanceId, ViewId};
use casmine_core::loss::ContrastiveBatch;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn views(n: usize) -> Vec<ViewId> {
    (0..n)
        .map(|i| ViewId::new(format!("view{i}")).unwrap())
        .collect()
}

pub fn unit_vec(rng: &mut ChaCha8Rng, dim: usize) -> FeatureVec {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        if let Ok(u) = FeatureVec::new(v).unwrap().normalized() {
            return u;
        }
    }
}

/// A fully occupied bank with independent random unit features per view.
pub fn random_bank(
    rng: &mut ChaCha8Rng,
    views: &[ViewId],
    slots: usize,
    dim: usize,
) -> MemoryBank {
    let dims: BTreeMap<ViewId, usize> = views.iter().map(|v| (v.clone(), dim)).collect();
    let mut bank = MemoryBank::new(&dims, slots).unwrap();
    for i in 0..slots {
        let features: BTreeMap<ViewId, FeatureVec> = views
            .iter()
            .map(|v| (v.clone(), unit_vec(rng, dim)))
            .collect();
        let id = InstanceId::new(format!("i{i:06}")).unwrap();
        bank.update(&[BankEntry::new(id, features)]).unwrap();
    }
    bank
}

pub fn random_query(
    rng: &mut ChaCha8Rng,
    views: &[ViewId],
    dim: usize,
) -> BTreeMap<ViewId, FeatureVec> {
    views
        .iter()
        .map(|v| (v.clone(), unit_vec(rng, dim)))
        .collect()
}

pub fn random_batch(
    rng: &mut ChaCha8Rng,
    dim: usize,
    n_pos: usize,
    n_neg: usize,
    temperature: f64,
) -> ContrastiveBatch {
    let query = unit_vec(rng, dim);
    let positives: Vec<FeatureVec> = (0..n_pos).map(|_| unit_vec(rng, dim)).collect();
    let negatives: Vec<FeatureVec> = (0..n_neg).map(|_| unit_vec(rng, dim)).collect();
    ContrastiveBatch::new(query, positives, negatives, temperature).unwrap()
}

/// Labeled unit embeddings, `per_class` per class, lightly clustered so
/// retrieval has real structure to rank.
pub fn labeled_embeddings(
    rng: &mut ChaCha8Rng,
    classes: usize,
    per_class: usize,
    dim: usize,
) -> Vec<(i64, FeatureVec)> {
    let prototypes: Vec<FeatureVec> = (0..classes).map(|_| unit_vec(rng, dim)).collect();
    let mut out = Vec::with_capacity(classes * per_class);
    for (c, proto) in prototypes.iter().enumerate() {
        for _ in 0..per_class {
            let jitter = unit_vec(rng, dim);
            let mixed: Vec<f64> = proto
                .values()
                .iter()
                .zip(jitter.values())
                .map(|(p, j)| p + 0.5 * j)
                .collect();
            let f = FeatureVec::new(mixed).unwrap().normalized().unwrap();
            out.push((c as i64, f));
        }
    }
    out
}
