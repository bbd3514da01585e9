//! Progressive contrastive training loop.
//!
//! Training runs in cycles; each cycle fixes which view is being trained,
//! a final top-k for the miner, and a number of epochs. Within a batch,
//! every query is encoded by the live encoder of the train view; its
//! enqueue variant is encoded by the EMA encoder in the train view and by
//! frozen snapshots (taken at cycle start) in the other views. Mining runs
//! against the bank as it stood at the start of the batch, the
//! multi-positive loss couples the query to its own variant plus the mined
//! slots against everything else eligible, the averaged gradient steps the
//! live encoder, the EMA trails it, and the enqueue variants are written
//! to the bank. Growing the final top-k across cycles widens the mined
//! positive set as the embedding earns trust; alternating the train view
//! across cycles co-trains the views against each other.
//!
//! Per-cycle snapshots mean cross-view mining evidence is stable within a
//! cycle and refreshed between cycles. The memory bank persists across
//! cycle boundaries unless `reset_bank_between_cycles` asks for a refill.
//!
//! Batch order is one seeded permutation drawn at run start, used for the
//! initial bank fill and for every epoch. Reusing the order makes the
//! bank's ring trajectory replay identically whenever the encoders are
//! frozen, so diagnostics like the zero-learning-rate flat-trajectory
//! check hold exactly instead of up to ring-mixing noise.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bank::{BankEntry, MemoryBank};
use crate::encoder::{ema_update, ToyEncoder};
use crate::error::{Error, Result};
use crate::eval::{class_mining_recall, epoch_mining_metrics, median, ClassRecallRow};
use crate::feature::{Dataset, FeatureVec, InstanceId, ViewId};
use crate::loss::{mil_nce, mil_nce_grad, ContrastiveBatch};
use crate::miner::{mine, CascadeConfig, QueryTrace};

/// One training cycle: how long, how wide the mined positive set is, and
/// which view's encoder learns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CycleSpec {
    pub epochs: usize,
    pub final_top_k: usize,
    pub train_view: ViewId,
}

/// How the miner walks the views within one cascade.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ViewSchedule {
    /// Cycle through the non-train views first, then the train view,
    /// repeating as needed.
    Alternating,
    /// Exact per-stage view list (must match the stage count).
    Explicit(Vec<ViewId>),
}

/// Cascade shape reused across cycles; the final top-k comes from the
/// cycle, everything else from here.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MiningPlan {
    pub stages: usize,
    pub selection_ratio: f64,
    pub schedule: ViewSchedule,
}

impl MiningPlan {
    pub fn resolve(
        &self,
        views: &[ViewId],
        train_view: &ViewId,
        final_top_k: usize,
    ) -> Result<CascadeConfig> {
        let cfg = match &self.schedule {
            ViewSchedule::Alternating => CascadeConfig::alternating(
                views,
                train_view,
                self.stages,
                self.selection_ratio,
                final_top_k,
            )?,
            ViewSchedule::Explicit(schedule) => {
                for view in schedule {
                    if !views.contains(view) {
                        return Err(Error::UnknownView {
                            view: view.to_string(),
                            context: "mining plan schedule".into(),
                        });
                    }
                }
                let cfg = CascadeConfig {
                    stages: self.stages,
                    selection_ratio: self.selection_ratio,
                    view_schedule: schedule.clone(),
                    final_top_k,
                };
                cfg.validate()?;
                cfg
            }
        };
        Ok(cfg)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSchedule {
    pub cycles: Vec<CycleSpec>,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub ema_momentum: f64,
    pub temperature: f64,
    pub bank_capacity: usize,
    /// Refill the bank with fresh EMA encodings at every cycle boundary
    /// instead of letting old features age out through the ring.
    pub reset_bank_between_cycles: bool,
    /// Output dimension of the encoders. None keeps the input dimension
    /// and identity-initializes (a stand-in for starting from pretrained
    /// features); Some(d) draws seeded gaussian weights.
    pub embedding_dim: Option<usize>,
}

/// Per-epoch scalars for logs and comparisons. Metrics needing labels are
/// None on unlabeled data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    /// 1-based cycle index.
    pub cycle: usize,
    /// 1-based epoch index, global across cycles.
    pub epoch: usize,
    pub final_top_k: usize,
    pub loss_mean: f64,
    pub pmr_mean: Option<f64>,
    pub recall_at_1: Option<f64>,
    pub cmr_median: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub encoders: BTreeMap<ViewId, ToyEncoder>,
    pub ema_encoders: BTreeMap<ViewId, ToyEncoder>,
    pub bank: MemoryBank,
    pub epoch_stats: Vec<EpochStats>,
    /// Mining traces of the final epoch, query order = shuffled batch order.
    pub last_epoch_traces: Vec<QueryTrace>,
    /// Per-class mining recall of the final epoch (labeled data only).
    pub last_epoch_cmr: Option<BTreeMap<i64, ClassRecallRow>>,
}

/// Hook points for tests that need to watch the loop from outside.
#[derive(Clone, Debug)]
pub enum TrainEvent<'a> {
    BatchEnqueued {
        cycle: usize,
        epoch: usize,
        ids: &'a [InstanceId],
    },
    EpochEnd {
        cycle: usize,
        epoch: usize,
    },
}

pub fn train(
    dataset: &Dataset,
    plan: &MiningPlan,
    schedule: &TrainSchedule,
    seed: u64,
) -> Result<TrainOutcome> {
    train_observed(dataset, plan, schedule, seed, &mut |_| {})
}

/// `train` with an observer called at batch enqueue and epoch end.
pub fn train_observed(
    dataset: &Dataset,
    plan: &MiningPlan,
    schedule: &TrainSchedule,
    seed: u64,
    observer: &mut dyn FnMut(&TrainEvent),
) -> Result<TrainOutcome> {
    validate_inputs(dataset, plan, schedule)?;
    let views = dataset.views().to_vec();

    // Encoder init, one per view. Seeds are derived per view index so the
    // views start decorrelated but reproducible.
    let mut encoders: BTreeMap<ViewId, ToyEncoder> = BTreeMap::new();
    for (vi, view) in views.iter().enumerate() {
        let in_dim = dataset.dim(view)?;
        let enc = match schedule.embedding_dim {
            None => ToyEncoder::identity(in_dim),
            Some(d) => ToyEncoder::seeded(
                in_dim,
                d,
                seed.wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(vi as u64 + 1)),
            ),
        };
        encoders.insert(view.clone(), enc);
    }
    let mut ema_encoders = encoders.clone();

    let bank_dims: BTreeMap<ViewId, usize> = views
        .iter()
        .map(|v| (v.clone(), encoders[v].out_dim()))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut rng);

    let mut bank = MemoryBank::new(&bank_dims, schedule.bank_capacity)?;
    fill_bank(&mut bank, dataset, &order, &ema_encoders, schedule.batch_size)?;

    let labels = dataset.labels();
    let fully_labeled = dataset.is_fully_labeled();
    let class_sizes = dataset.class_sizes();

    let mut epoch_stats = Vec::new();
    let mut last_epoch_traces = Vec::new();
    let mut last_epoch_cmr = None;
    let mut global_epoch = 0usize;

    for (ci, cycle) in schedule.cycles.iter().enumerate() {
        let cycle_no = ci + 1;
        if schedule.reset_bank_between_cycles && ci > 0 {
            bank.clear();
            fill_bank(&mut bank, dataset, &order, &ema_encoders, schedule.batch_size)?;
        }
        // Cross-view mining evidence is pinned for the whole cycle.
        let frozen = encoders.clone();
        let cascade = plan.resolve(&views, &cycle.train_view, cycle.final_top_k)?;
        let tv = &cycle.train_view;

        for _ in 0..cycle.epochs {
            global_epoch += 1;
            let mut epoch_traces: Vec<QueryTrace> = Vec::with_capacity(dataset.len());
            let mut loss_sum = 0.0;

            for batch_idx in order.chunks(schedule.batch_size) {
                let mut grad_sum = encoders[tv].zero_grad();
                let mut entries: Vec<BankEntry> = Vec::with_capacity(batch_idx.len());
                let mut enqueued_ids: Vec<InstanceId> = Vec::with_capacity(batch_idx.len());

                for &idx in batch_idx {
                    let rec = &dataset.records()[idx];
                    let (query, trace) = encoders[tv].encode_traced(rec.feature(tv)?)?;

                    // Enqueue variant: EMA in the train view, frozen
                    // snapshots elsewhere.
                    let mut variant: BTreeMap<ViewId, FeatureVec> = BTreeMap::new();
                    for view in &views {
                        let enc = if view == tv { &ema_encoders[tv] } else { &frozen[view] };
                        variant.insert(view.clone(), enc.encode(rec.feature(view)?)?);
                    }

                    let exclude = bank.slots_with_id(&rec.id);
                    let mined = mine(&variant, &bank, &cascade, &exclude)?;

                    let mut positives = Vec::with_capacity(mined.positives.len() + 1);
                    positives.push(variant[tv].clone());
                    for &slot in &mined.positives {
                        positives.push(bank.feature(tv, slot)?.clone());
                    }
                    let negatives: Vec<FeatureVec> = mined
                        .negatives
                        .iter()
                        .map(|&slot| bank.feature(tv, slot).cloned())
                        .collect::<Result<_>>()?;

                    let batch = ContrastiveBatch::new(
                        query.clone(),
                        positives,
                        negatives,
                        schedule.temperature,
                    )?;
                    loss_sum += mil_nce(&batch)?;
                    let gq = mil_nce_grad(&batch)?;
                    let grad = encoders[tv].param_grad(rec.feature(tv)?, &trace, &gq)?;
                    grad_sum.add_assign(&grad)?;

                    let positive_ids = mined
                        .positives
                        .iter()
                        .map(|&slot| bank.slot_id(slot).cloned())
                        .collect::<Result<Vec<_>>>()?;
                    epoch_traces.push(QueryTrace {
                        query_id: rec.id.clone(),
                        positive_ids,
                        result: mined,
                    });
                    enqueued_ids.push(rec.id.clone());
                    entries.push(BankEntry::new(rec.id.clone(), variant));
                }

                grad_sum.scale(1.0 / batch_idx.len() as f64);
                let live = encoders.get_mut(tv).expect("train view exists");
                live.apply_step(&grad_sum, schedule.learning_rate)?;
                let live_snapshot = live.clone();
                ema_update(
                    ema_encoders.get_mut(tv).expect("train view exists"),
                    &live_snapshot,
                    schedule.ema_momentum,
                )?;
                observer(&TrainEvent::BatchEnqueued {
                    cycle: cycle_no,
                    epoch: global_epoch,
                    ids: &enqueued_ids,
                });
                bank.update(&entries)?;
            }

            let loss_mean = loss_sum / dataset.len() as f64;
            let (pmr_mean, recall_at_1, cmr_median, cmr_rows) = if fully_labeled {
                let m = epoch_mining_metrics(&epoch_traces, &labels)?;
                let rows = class_mining_recall(&epoch_traces, &labels, &class_sizes)?;
                let recalls: Vec<f64> = rows.values().map(|r| r.recall).collect();
                (
                    Some(m.pmr_mean),
                    Some(m.recall_at_1),
                    median(&recalls),
                    Some(rows),
                )
            } else {
                (None, None, None, None)
            };
            epoch_stats.push(EpochStats {
                cycle: cycle_no,
                epoch: global_epoch,
                final_top_k: cycle.final_top_k,
                loss_mean,
                pmr_mean,
                recall_at_1,
                cmr_median,
            });
            observer(&TrainEvent::EpochEnd {
                cycle: cycle_no,
                epoch: global_epoch,
            });
            last_epoch_traces = epoch_traces;
            last_epoch_cmr = cmr_rows;
        }
    }

    Ok(TrainOutcome {
        encoders,
        ema_encoders,
        bank,
        epoch_stats,
        last_epoch_traces,
        last_epoch_cmr,
    })
}

fn validate_inputs(dataset: &Dataset, plan: &MiningPlan, schedule: &TrainSchedule) -> Result<()> {
    if dataset.views().len() < 2 {
        return Err(Error::InvalidInput(
            "training needs at least two views for cross-view mining".into(),
        ));
    }
    if dataset.len() < 2 {
        return Err(Error::InvalidInput(
            "training needs at least two instances".into(),
        ));
    }
    if schedule.cycles.is_empty() {
        return Err(Error::InvalidConfig("no training cycles".into()));
    }
    if schedule.batch_size == 0 {
        return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
    }
    if schedule.batch_size > schedule.bank_capacity {
        return Err(Error::InvalidConfig(format!(
            "batch_size {} exceeds bank capacity {}",
            schedule.batch_size, schedule.bank_capacity
        )));
    }
    if schedule.bank_capacity < 2 {
        return Err(Error::InvalidConfig(
            "bank capacity below 2 leaves nothing to mine after self-exclusion".into(),
        ));
    }
    if !(schedule.learning_rate.is_finite() && schedule.learning_rate >= 0.0) {
        return Err(Error::InvalidConfig(format!(
            "learning rate must be finite and >= 0, got {}",
            schedule.learning_rate
        )));
    }
    if !(schedule.ema_momentum.is_finite() && (0.0..1.0).contains(&schedule.ema_momentum)) {
        return Err(Error::InvalidConfig(format!(
            "ema momentum must be in [0, 1), got {}",
            schedule.ema_momentum
        )));
    }
    if !(schedule.temperature.is_finite() && schedule.temperature > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "temperature must be finite and > 0, got {}",
            schedule.temperature
        )));
    }
    if let Some(d) = schedule.embedding_dim {
        if d == 0 {
            return Err(Error::InvalidConfig("embedding_dim must be >= 1".into()));
        }
    }
    for cycle in &schedule.cycles {
        if cycle.epochs == 0 {
            return Err(Error::InvalidConfig("cycle with zero epochs".into()));
        }
        if cycle.final_top_k == 0 {
            return Err(Error::InvalidConfig("cycle final_top_k must be >= 1".into()));
        }
        if !dataset.views().contains(&cycle.train_view) {
            return Err(Error::UnknownView {
                view: cycle.train_view.to_string(),
                context: "cycle train_view".into(),
            });
        }
        plan.resolve(dataset.views(), &cycle.train_view, cycle.final_top_k)?;
    }
    Ok(())
}

/// One pass over the dataset in the run's batch order, enqueueing EMA
/// encodings. Filling in the same order as the epochs keeps the ring
/// trajectory periodic when the encoders are not moving.
fn fill_bank(
    bank: &mut MemoryBank,
    dataset: &Dataset,
    order: &[usize],
    encoders: &BTreeMap<ViewId, ToyEncoder>,
    batch_size: usize,
) -> Result<()> {
    let views: Vec<ViewId> = bank.views().to_vec();
    for chunk in order.chunks(batch_size) {
        let mut entries = Vec::with_capacity(chunk.len());
        for &idx in chunk {
            let rec = &dataset.records()[idx];
            let mut features = BTreeMap::new();
            for view in &views {
                features.insert(view.clone(), encoders[view].encode(rec.feature(view)?)?);
            }
            entries.push(BankEntry::new(rec.id.clone(), features));
        }
        bank.update(&entries)?;
    }
    Ok(())
}

pub const CHECKPOINT_VERSION: u32 = 1;

/// Persisted trainer state: encoders, their EMA twins, and the bank.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub encoders: BTreeMap<ViewId, ToyEncoder>,
    pub ema_encoders: BTreeMap<ViewId, ToyEncoder>,
    pub bank: MemoryBank,
    pub cycles_completed: usize,
    pub epochs_completed: usize,
}

impl Checkpoint {
    pub fn from_outcome(outcome: &TrainOutcome, schedule: &TrainSchedule) -> Self {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            encoders: outcome.encoders.clone(),
            ema_encoders: outcome.ema_encoders.clone(),
            bank: outcome.bank.clone(),
            cycles_completed: schedule.cycles.len(),
            epochs_completed: outcome.epoch_stats.len(),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Checkpoint(format!("serialize: {e}")))?;
        fs::write(path, json).map_err(Error::io(path))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(Error::io(path))?;
        let ckpt: Checkpoint = serde_json::from_str(&text)
            .map_err(|e| Error::Checkpoint(format!("parse {}: {e}", path.display())))?;
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
                ckpt.version
            )));
        }
        ckpt.bank.validate()?;
        Ok(ckpt)
    }
}
