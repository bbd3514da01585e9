//! Synthetic multi-view data with controlled confusability.
//!
//! Each class gets one unit-norm prototype per view; instances are noisy
//! normalized copies of their class prototype. A confusability map lists
//! class pairs that share a prototype in one view, i.e. are
//! indistinguishable there. Sharing is transitive within a view (shared
//! prototypes merge into groups), and the generator refuses maps where two
//! classes end up indistinguishable in every view: the whole point of the
//! construction is that some other view can always tell them apart.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature::{Dataset, FeatureVec, InstanceId, InstanceRecord, ViewId};

/// Two classes that share a prototype (are confusable) in one view.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfusablePair {
    pub class_a: usize,
    pub class_b: usize,
    pub view: ViewId,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub instances_per_class: usize,
    /// Embedding dimension per view; dimensions of at least 2 keep random
    /// prototypes from colliding.
    pub view_dims: BTreeMap<ViewId, usize>,
    /// Standard deviation of the gaussian perturbation before
    /// re-normalization. Zero makes same-class instances identical.
    pub noise_scale: f64,
    pub confusable: Vec<ConfusablePair>,
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, x: usize) -> usize {
        if self.parent[x] != x {
            let root = self.find(self.parent[x]);
            self.parent[x] = root;
        }
        self.parent[x]
    }

    fn union(&mut self, a: usize, b: usize) {
        let ra = self.find(a);
        let rb = self.find(b);
        if ra != rb {
            self.parent[rb] = ra;
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 {
            return Err(Error::InvalidConfig("num_classes must be >= 1".into()));
        }
        if self.instances_per_class == 0 {
            return Err(Error::InvalidConfig(
                "instances_per_class must be >= 1".into(),
            ));
        }
        if self.view_dims.is_empty() {
            return Err(Error::InvalidConfig("need at least one view".into()));
        }
        for (view, dim) in &self.view_dims {
            if *dim < 2 {
                return Err(Error::InvalidConfig(format!(
                    "view {view} has dimension {dim}, need >= 2"
                )));
            }
        }
        if !(self.noise_scale.is_finite() && self.noise_scale >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "noise_scale must be finite and >= 0, got {}",
                self.noise_scale
            )));
        }
        for pair in &self.confusable {
            for class in [pair.class_a, pair.class_b] {
                if class >= self.num_classes {
                    return Err(Error::InconsistentConfusability(format!(
                        "class {class} is out of range (have {} classes)",
                        self.num_classes
                    )));
                }
            }
            if pair.class_a == pair.class_b {
                return Err(Error::InconsistentConfusability(format!(
                    "class {} is paired with itself",
                    pair.class_a
                )));
            }
            if !self.view_dims.contains_key(&pair.view) {
                return Err(Error::InconsistentConfusability(format!(
                    "view {} is not in the view set",
                    pair.view
                )));
            }
        }
        // Classes sharing a group in every view are indistinguishable
        // everywhere, which defeats the construction.
        let groups = self.view_groups();
        for a in 0..self.num_classes {
            for b in (a + 1)..self.num_classes {
                let everywhere = groups.values().all(|roots| roots[a] == roots[b]);
                if everywhere && !groups.is_empty() {
                    return Err(Error::InconsistentConfusability(format!(
                        "classes {a} and {b} are confusable in every view"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Per view: the prototype-sharing group of each class, named by the
    /// smallest class in the group.
    fn view_groups(&self) -> BTreeMap<ViewId, Vec<usize>> {
        let mut groups = BTreeMap::new();
        for view in self.view_dims.keys() {
            let mut uf = UnionFind::new(self.num_classes);
            for pair in &self.confusable {
                if &pair.view == view {
                    uf.union(pair.class_a, pair.class_b);
                }
            }
            let mut min_member: BTreeMap<usize, usize> = BTreeMap::new();
            for class in 0..self.num_classes {
                let root = uf.find(class);
                let entry = min_member.entry(root).or_insert(class);
                if class < *entry {
                    *entry = class;
                }
            }
            let reps = (0..self.num_classes)
                .map(|c| min_member[&uf.find(c)])
                .collect();
            groups.insert(view.clone(), reps);
        }
        groups
    }
}

fn gaussian_vec(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim)
        .map(|_| {
            let g: f64 = StandardNormal.sample(rng);
            g
        })
        .collect()
}

/// Generates the dataset: one unit prototype per (view, group), then
/// `normalize(prototype + noise_scale * gaussian)` per instance and view.
/// Instance ids are `c{class}_i{index}`; everything is deterministic in
/// the seed.
pub fn generate(spec: &SyntheticSpec, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let groups = spec.view_groups();

    // Prototypes, drawn in view order then class order; group members
    // reuse the representative's draw, so the RNG stream is consumed only
    // for representatives.
    let mut prototypes: BTreeMap<ViewId, Vec<FeatureVec>> = BTreeMap::new();
    for (view, dim) in &spec.view_dims {
        let reps = &groups[view];
        let mut protos: Vec<Option<FeatureVec>> = vec![None; spec.num_classes];
        for class in 0..spec.num_classes {
            let rep = reps[class];
            if rep == class {
                let proto = FeatureVec::new(gaussian_vec(&mut rng, *dim))?.normalized()?;
                protos[class] = Some(proto);
            } else {
                let proto = protos[rep].clone().expect("representative drawn first");
                protos[class] = Some(proto);
            }
        }
        prototypes.insert(
            view.clone(),
            protos.into_iter().map(|p| p.expect("filled")).collect(),
        );
    }

    let mut records = Vec::with_capacity(spec.num_classes * spec.instances_per_class);
    for class in 0..spec.num_classes {
        for idx in 0..spec.instances_per_class {
            let id = InstanceId::new(format!("c{class:03}_i{idx:03}"))?;
            let mut features = BTreeMap::new();
            for (view, dim) in &spec.view_dims {
                let proto = &prototypes[view][class];
                let noise = gaussian_vec(&mut rng, *dim);
                let values: Vec<f64> = proto
                    .values()
                    .iter()
                    .zip(&noise)
                    .map(|(p, n)| p + spec.noise_scale * n)
                    .collect();
                let feat = FeatureVec::new(values)?.normalized().map_err(|e| match e {
                    Error::DegenerateFeature { .. } => Error::DegenerateFeature {
                        context: format!("synthetic instance {id} view {view}"),
                    },
                    other => other,
                })?;
                features.insert(view.clone(), feat);
            }
            records.push(InstanceRecord {
                id,
                class_label: Some(class as i64),
                features,
            });
        }
    }
    Dataset::new(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn view(name: &str) -> ViewId {
        ViewId::new(name).unwrap()
    }

    fn two_view_spec() -> SyntheticSpec {
        let mut view_dims = BTreeMap::new();
        view_dims.insert(view("rgb"), 8);
        view_dims.insert(view("flow"), 8);
        SyntheticSpec {
            num_classes: 10,
            instances_per_class: 18,
            view_dims,
            noise_scale: 0.2,
            confusable: vec![
                ConfusablePair { class_a: 0, class_b: 1, view: view("flow") },
                ConfusablePair { class_a: 2, class_b: 3, view: view("flow") },
                ConfusablePair { class_a: 6, class_b: 7, view: view("rgb") },
            ],
        }
    }

    #[test]
    fn record_count_and_labels() {
        let ds = generate(&two_view_spec(), 11).unwrap();
        assert_eq!(ds.len(), 180);
        let sizes = ds.class_sizes();
        assert_eq!(sizes.len(), 10);
        assert!(sizes.values().all(|&n| n == 18));
        assert!(ds.is_fully_labeled());
        assert_eq!(ds.records()[0].id.as_str(), "c000_i000");
        for rec in ds.records() {
            for feat in rec.features.values() {
                assert!(feat.is_unit_norm());
            }
        }
    }

    #[test]
    fn same_seed_same_data_different_seed_different() {
        let spec = two_view_spec();
        let a = generate(&spec, 5).unwrap();
        let b = generate(&spec, 5).unwrap();
        let c = generate(&spec, 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn zero_noise_collapses_instances_onto_prototypes() {
        let mut spec = two_view_spec();
        spec.noise_scale = 0.0;
        spec.instances_per_class = 3;
        let ds = generate(&spec, 3).unwrap();
        let first = &ds.records()[0];
        let second = &ds.records()[1];
        assert_eq!(first.class_label, second.class_label);
        assert_eq!(first.features, second.features);

        // Classes 0 and 1 share the flow prototype but not the rgb one.
        let c0 = ds.records().iter().find(|r| r.class_label == Some(0)).unwrap();
        let c1 = ds.records().iter().find(|r| r.class_label == Some(1)).unwrap();
        assert_eq!(c0.features[&view("flow")], c1.features[&view("flow")]);
        assert_ne!(c0.features[&view("rgb")], c1.features[&view("rgb")]);
    }

    #[test]
    fn confusable_everywhere_is_rejected_including_transitively() {
        let mut spec = two_view_spec();
        spec.num_classes = 3;
        spec.confusable = vec![
            ConfusablePair { class_a: 0, class_b: 1, view: view("rgb") },
            ConfusablePair { class_a: 1, class_b: 2, view: view("rgb") },
            ConfusablePair { class_a: 0, class_b: 2, view: view("flow") },
            ConfusablePair { class_a: 1, class_b: 2, view: view("flow") },
        ];
        // Groups: rgb {0,1,2}; flow {0,1,2} via 0-2 and 1-2. Classes 0 and
        // 1 never separate even though no line names them in flow.
        let err = generate(&spec, 1).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("inconsistent confusability map"), "{msg}");
        assert!(msg.contains("0") && msg.contains("1"), "{msg}");
    }

    #[test]
    fn out_of_range_class_named_in_error() {
        let mut spec = two_view_spec();
        spec.num_classes = 3;
        spec.confusable = vec![ConfusablePair {
            class_a: 0,
            class_b: 7,
            view: view("rgb"),
        }];
        let err = spec.validate().unwrap_err();
        assert!(err.to_string().contains("class 7"), "{err}");
    }

    #[test]
    fn self_pair_and_unknown_view_rejected() {
        let mut spec = two_view_spec();
        spec.confusable = vec![ConfusablePair {
            class_a: 2,
            class_b: 2,
            view: view("rgb"),
        }];
        assert!(spec.validate().is_err());
        spec.confusable = vec![ConfusablePair {
            class_a: 0,
            class_b: 1,
            view: view("depth"),
        }];
        assert!(spec.validate().is_err());
    }

    #[test]
    fn moderate_noise_keeps_classes_separable_in_some_view() {
        let mut spec = two_view_spec();
        spec.noise_scale = 0.1;
        spec.instances_per_class = 4;
        let ds = generate(&spec, 42).unwrap();
        // For the confusable pair (0, 1) in flow, rgb must still separate:
        // each class-0 instance is closer to a class-0 mate than to any
        // class-1 instance in rgb.
        let c0: Vec<_> = ds.records().iter().filter(|r| r.class_label == Some(0)).collect();
        let c1: Vec<_> = ds.records().iter().filter(|r| r.class_label == Some(1)).collect();
        for a in &c0 {
            let own = c0
                .iter()
                .filter(|r| r.id != a.id)
                .map(|r| a.features[&view("rgb")].dot(&r.features[&view("rgb")]))
                .fold(f64::NEG_INFINITY, f64::max);
            let other = c1
                .iter()
                .map(|r| a.features[&view("rgb")].dot(&r.features[&view("rgb")]))
                .fold(f64::NEG_INFINITY, f64::max);
            assert!(own > other, "class 0 instance closer to class 1 in rgb");
        }
    }
}
