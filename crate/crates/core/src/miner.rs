//! Staged positive mining over the memory bank.
//!
//! A cascade runs a fixed number of stages over a shrinking candidate set.
//! Every stage except the last keeps the top `ceil(selection_ratio * n)`
//! candidates by similarity in its scheduled view; the last stage keeps the
//! top `final_top_k`. The last stage's selection is the positive set, and
//! everything else that was eligible becomes a negative. Each stage can use
//! a different view, so candidates must look similar from several angles to
//! survive.
//!
//! With a single stage the cascade degenerates to plain top-k over the full
//! candidate set, and a selection ratio of 1.0 makes the early stages
//! no-ops; both facts are pinned by tests.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::bank::MemoryBank;
use crate::error::{Error, Result};
use crate::feature::{FeatureVec, InstanceId, ViewId};

/// Cascade shape: number of stages, per-stage keep ratio, the view used at
/// each stage, and the final top-k.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CascadeConfig {
    pub stages: usize,
    pub selection_ratio: f64,
    pub view_schedule: Vec<ViewId>,
    pub final_top_k: usize,
}

impl CascadeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stages == 0 {
            return Err(Error::InvalidConfig("cascade needs at least one stage".into()));
        }
        if !(self.selection_ratio > 0.0 && self.selection_ratio <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "selection_ratio must be in (0, 1], got {}",
                self.selection_ratio
            )));
        }
        if self.final_top_k == 0 {
            return Err(Error::InvalidConfig("final_top_k must be >= 1".into()));
        }
        if self.view_schedule.len() != self.stages {
            return Err(Error::InvalidConfig(format!(
                "view schedule has {} entries for {} stages",
                self.view_schedule.len(),
                self.stages
            )));
        }
        Ok(())
    }

    /// Schedule that cycles through the other views first and comes back to
    /// the query view, repeating until `stages` entries exist. With views
    /// {flow, rgb} and query view rgb this yields flow, rgb, flow, ... so
    /// cross-view evidence is consulted before same-view evidence.
    pub fn alternating(
        views: &[ViewId],
        query_view: &ViewId,
        stages: usize,
        selection_ratio: f64,
        final_top_k: usize,
    ) -> Result<Self> {
        if !views.contains(query_view) {
            return Err(Error::UnknownView {
                view: query_view.to_string(),
                context: "alternating schedule".into(),
            });
        }
        let mut rotation: Vec<ViewId> =
            views.iter().filter(|v| *v != query_view).cloned().collect();
        rotation.push(query_view.clone());
        let view_schedule = (0..stages)
            .map(|s| rotation[s % rotation.len()].clone())
            .collect();
        let cfg = CascadeConfig {
            stages,
            selection_ratio,
            view_schedule,
            final_top_k,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// What one stage saw and kept, for audit and metrics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageTrace {
    /// Stage number, 1-based.
    pub stage: usize,
    pub view: ViewId,
    /// Candidates entering this stage.
    pub candidate_count: usize,
    /// Kept slots in rank order (best first).
    pub selected: Vec<usize>,
    /// True when the final stage had fewer candidates than requested.
    pub underfilled: bool,
}

/// Outcome of one cascade run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MiningResult {
    /// Final-stage selection in rank order; these become positives.
    pub positives: Vec<usize>,
    /// Every eligible slot that was not selected.
    pub negatives: BTreeSet<usize>,
    pub stages: Vec<StageTrace>,
}

impl MiningResult {
    pub fn positive_set(&self) -> BTreeSet<usize> {
        self.positives.iter().copied().collect()
    }

    /// Best-ranked mined slot.
    pub fn top_ranked(&self) -> Option<usize> {
        self.positives.first().copied()
    }
}

/// A mining trace bound to the querying instance, with slot ids resolved to
/// instance ids at mining time (slots are recycled later, the trace is not).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryTrace {
    pub query_id: InstanceId,
    /// Instance ids of `result.positives`, same order.
    pub positive_ids: Vec<InstanceId>,
    pub result: MiningResult,
}

/// Number of candidates a ratio stage keeps. The computation is the plain
/// f64 expression `ceil(ratio * n)`; every independent reimplementation
/// must use the same expression so float rounding cannot diverge.
pub fn ratio_keep_count(ratio: f64, candidates: usize) -> usize {
    ((ratio * candidates as f64).ceil() as usize).min(candidates)
}

/// Keeps the top `ceil(ratio * |candidates|)` slots by similarity in one
/// view, rank ordered.
pub fn select(
    query: &FeatureVec,
    bank: &MemoryBank,
    view: &ViewId,
    candidates: &BTreeSet<usize>,
    ratio: f64,
) -> Result<Vec<usize>> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "selection_ratio must be in (0, 1], got {ratio}"
        )));
    }
    let ranked = bank.similarities(query, view, candidates)?;
    let keep = ratio_keep_count(ratio, ranked.len());
    Ok(ranked.into_iter().take(keep).map(|(s, _)| s).collect())
}

/// Keeps the top `k` slots by similarity in one view, rank ordered. Fewer
/// than `k` candidates keep them all.
pub fn top_k(
    query: &FeatureVec,
    bank: &MemoryBank,
    view: &ViewId,
    candidates: &BTreeSet<usize>,
    k: usize,
) -> Result<Vec<usize>> {
    if k == 0 {
        return Err(Error::InvalidConfig("top_k needs k >= 1".into()));
    }
    let ranked = bank.similarities(query, view, candidates)?;
    Ok(ranked.into_iter().take(k).map(|(s, _)| s).collect())
}

/// Runs the cascade for one query. `query_feats` must hold the query's
/// features in every scheduled view; `exclude` removes slots (typically the
/// query's own) from eligibility entirely, so they are neither positives
/// nor negatives.
pub fn mine(
    query_feats: &BTreeMap<ViewId, FeatureVec>,
    bank: &MemoryBank,
    cfg: &CascadeConfig,
    exclude: &BTreeSet<usize>,
) -> Result<MiningResult> {
    cfg.validate()?;
    for view in &cfg.view_schedule {
        if !query_feats.contains_key(view) {
            return Err(Error::MissingView {
                view: view.to_string(),
                context: "mining query".into(),
            });
        }
    }

    let eligible: BTreeSet<usize> = bank
        .occupied_slots()
        .difference(exclude)
        .copied()
        .collect();
    if eligible.is_empty() {
        return Err(Error::EmptyCandidates);
    }

    let mut candidates = eligible.clone();
    let mut stages = Vec::with_capacity(cfg.stages);
    for (i, view) in cfg.view_schedule.iter().enumerate() {
        let stage = i + 1;
        let query = &query_feats[view];
        let last = stage == cfg.stages;
        let (selected, underfilled) = if last {
            let picked = top_k(query, bank, view, &candidates, cfg.final_top_k)?;
            (picked, candidates.len() < cfg.final_top_k)
        } else {
            let picked = select(query, bank, view, &candidates, cfg.selection_ratio)?;
            (picked, false)
        };
        stages.push(StageTrace {
            stage,
            view: view.clone(),
            candidate_count: candidates.len(),
            selected: selected.clone(),
            underfilled,
        });
        candidates = selected.into_iter().collect();
    }

    let positives = stages.last().expect("at least one stage").selected.clone();
    let positive_set: BTreeSet<usize> = positives.iter().copied().collect();
    let negatives = eligible.difference(&positive_set).copied().collect();
    Ok(MiningResult {
        positives,
        negatives,
        stages,
    })
}

/// One audit line per stage: query id, stage number, view, candidate
/// count, then the kept slot ids in rank order.
pub fn format_trace_lines(trace: &QueryTrace) -> Vec<String> {
    trace
        .result
        .stages
        .iter()
        .map(|st| {
            let slots: Vec<String> = st.selected.iter().map(|s| s.to_string()).collect();
            format!(
                "{}\t{}\t{}\t{}\t{}",
                trace.query_id,
                st.stage,
                st.view,
                st.candidate_count,
                slots.join(",")
            )
        })
        .collect()
}
