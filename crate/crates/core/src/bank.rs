//! Index-aligned per-view feature memory.
//!
//! The bank keeps one FIFO ring of unit-norm feature vectors per view. All
//! views share the slot index space and the slot id array: slot `s` holds
//! features of the same instance in every view, written atomically by
//! `update`. A single write cursor advances over batches; once the ring is
//! full the oldest slots are overwritten first.
//!
//! Reads take `&self` and writes `&mut self`, so the borrow checker
//! enforces the single-writer, multi-reader access model. Mining during a
//! training step reads a bank snapshot that only changes at batch
//! boundaries.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature::{FeatureVec, InstanceId, ViewId};

/// One enqueue unit: an instance id plus its feature in every bank view.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BankEntry {
    pub id: InstanceId,
    pub features: BTreeMap<ViewId, FeatureVec>,
}

impl BankEntry {
    pub fn new(id: InstanceId, features: BTreeMap<ViewId, FeatureVec>) -> Self {
        BankEntry { id, features }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemoryBank {
    views: Vec<ViewId>,
    dims: BTreeMap<ViewId, usize>,
    capacity: usize,
    slots: BTreeMap<ViewId, Vec<FeatureVec>>,
    slot_ids: Vec<InstanceId>,
    cursor: usize,
}

impl MemoryBank {
    /// Empty bank over the given views. Capacity is the fixed ring size.
    pub fn new(view_dims: &BTreeMap<ViewId, usize>, capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidConfig("bank capacity must be >= 1".into()));
        }
        if view_dims.is_empty() {
            return Err(Error::InvalidConfig("bank needs at least one view".into()));
        }
        for (view, dim) in view_dims {
            if *dim == 0 {
                return Err(Error::InvalidConfig(format!(
                    "view {view} has dimension 0"
                )));
            }
        }
        let views: Vec<ViewId> = view_dims.keys().cloned().collect();
        let slots = views
            .iter()
            .map(|v| (v.clone(), Vec::with_capacity(capacity)))
            .collect();
        Ok(MemoryBank {
            views,
            dims: view_dims.clone(),
            capacity,
            slots,
            slot_ids: Vec::with_capacity(capacity),
            cursor: 0,
        })
    }

    pub fn views(&self) -> &[ViewId] {
        &self.views
    }

    pub fn dim(&self, view: &ViewId) -> Result<usize> {
        self.dims.get(view).copied().ok_or_else(|| Error::UnknownView {
            view: view.to_string(),
            context: "bank".into(),
        })
    }

    pub fn view_dims(&self) -> &BTreeMap<ViewId, usize> {
        &self.dims
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Number of occupied slots (equals capacity once the ring has wrapped).
    pub fn len(&self) -> usize {
        self.slot_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slot_ids.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.slot_ids.len() == self.capacity
    }

    /// Next slot index that `update` will write.
    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn occupied_slots(&self) -> BTreeSet<usize> {
        (0..self.slot_ids.len()).collect()
    }

    pub fn slot_id(&self, slot: usize) -> Result<&InstanceId> {
        self.slot_ids.get(slot).ok_or(Error::SlotOutOfRange {
            slot,
            occupied: self.slot_ids.len(),
        })
    }

    /// Slots currently holding the given instance id. An instance enqueued
    /// in several epochs can occupy several slots until the ring wraps.
    pub fn slots_with_id(&self, id: &InstanceId) -> BTreeSet<usize> {
        self.slot_ids
            .iter()
            .enumerate()
            .filter(|(_, sid)| *sid == id)
            .map(|(s, _)| s)
            .collect()
    }

    pub fn feature(&self, view: &ViewId, slot: usize) -> Result<&FeatureVec> {
        let ring = self.slots.get(view).ok_or_else(|| Error::UnknownView {
            view: view.to_string(),
            context: "bank".into(),
        })?;
        ring.get(slot).ok_or(Error::SlotOutOfRange {
            slot,
            occupied: self.slot_ids.len(),
        })
    }

    /// Drops all contents and rewinds the cursor; capacity and views stay.
    pub fn clear(&mut self) {
        for ring in self.slots.values_mut() {
            ring.clear();
        }
        self.slot_ids.clear();
        self.cursor = 0;
    }

    /// Enqueues a batch. Every entry must carry exactly the bank's views,
    /// with matching dimensions and unit-norm features. The whole batch is
    /// validated before any slot is touched, so a failed update leaves the
    /// bank unchanged; each slot is then written in all views together with
    /// its id.
    pub fn update(&mut self, batch: &[BankEntry]) -> Result<()> {
        if batch.len() > self.capacity {
            return Err(Error::BatchExceedsCapacity {
                batch: batch.len(),
                capacity: self.capacity,
            });
        }
        for entry in batch {
            for view in &self.views {
                let feat = entry.features.get(view).ok_or_else(|| Error::MissingView {
                    view: view.to_string(),
                    context: format!("bank update entry {}", entry.id),
                })?;
                let expected = self.dims[view];
                if feat.dim() != expected {
                    return Err(Error::DimMismatch {
                        context: format!("bank update entry {} view {view}", entry.id),
                        expected,
                        got: feat.dim(),
                    });
                }
                if !feat.is_unit_norm() {
                    return Err(Error::NotUnitNorm {
                        context: format!("bank update entry {} view {view}", entry.id),
                        norm: feat.l2_norm(),
                    });
                }
            }
            for view in entry.features.keys() {
                if !self.dims.contains_key(view) {
                    return Err(Error::UnknownView {
                        view: view.to_string(),
                        context: format!("bank update entry {}", entry.id),
                    });
                }
            }
        }
        for entry in batch {
            self.write_slot(entry);
        }
        Ok(())
    }

    fn write_slot(&mut self, entry: &BankEntry) {
        let slot = self.cursor;
        if slot == self.slot_ids.len() {
            self.slot_ids.push(entry.id.clone());
            for view in &self.views {
                let feat = entry.features[view].clone();
                self.slots.get_mut(view).expect("view exists").push(feat);
            }
        } else {
            self.slot_ids[slot] = entry.id.clone();
            for view in &self.views {
                let feat = entry.features[view].clone();
                self.slots.get_mut(view).expect("view exists")[slot] = feat;
            }
        }
        self.cursor = (slot + 1) % self.capacity;
    }

    /// Dot products of a unit-norm query against the candidate slots in one
    /// view, ordered by descending score; exact score ties go to the lower
    /// slot index. Ordering uses the IEEE total order, so results are
    /// deterministic to the bit.
    pub fn similarities(
        &self,
        query: &FeatureVec,
        view: &ViewId,
        candidates: &BTreeSet<usize>,
    ) -> Result<Vec<(usize, f64)>> {
        let ring = self.slots.get(view).ok_or_else(|| Error::UnknownView {
            view: view.to_string(),
            context: "bank".into(),
        })?;
        let expected = self.dims[view];
        if query.dim() != expected {
            return Err(Error::DimMismatch {
                context: format!("similarity query in view {view}"),
                expected,
                got: query.dim(),
            });
        }
        if !query.is_unit_norm() {
            return Err(Error::NotUnitNorm {
                context: format!("similarity query in view {view}"),
                norm: query.l2_norm(),
            });
        }
        let mut scored = Vec::with_capacity(candidates.len());
        for &slot in candidates {
            let feat = ring.get(slot).ok_or(Error::SlotOutOfRange {
                slot,
                occupied: self.slot_ids.len(),
            })?;
            scored.push((slot, query.dot(feat)));
        }
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        Ok(scored)
    }

    /// Structural invariants, checked when loading persisted state.
    pub fn validate(&self) -> Result<()> {
        let len = self.slot_ids.len();
        let ok_cursor = if len < self.capacity {
            self.cursor == len
        } else {
            self.cursor < self.capacity
        };
        if self.capacity == 0 || len > self.capacity || !ok_cursor {
            return Err(Error::Checkpoint(
                "bank cursor/capacity invariants violated".into(),
            ));
        }
        if self.views.len() != self.dims.len()
            || !self.views.windows(2).all(|w| w[0] < w[1])
            || !self.views.iter().all(|v| self.dims.contains_key(v))
        {
            return Err(Error::Checkpoint("bank view table corrupt".into()));
        }
        for view in &self.views {
            let ring = self
                .slots
                .get(view)
                .ok_or_else(|| Error::Checkpoint(format!("bank ring missing view {view}")))?;
            if ring.len() != len {
                return Err(Error::Checkpoint(format!(
                    "bank ring for view {view} out of step with slot ids"
                )));
            }
            for feat in ring {
                if feat.dim() != self.dims[view] || !feat.is_unit_norm() {
                    return Err(Error::Checkpoint(format!(
                        "bank slot in view {view} violates dim/norm invariants"
                    )));
                }
            }
        }
        Ok(())
    }
}
