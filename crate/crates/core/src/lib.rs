//! Staged multi-view positive mining with contrastive training.
//!
//! The crate implements the full loop: multi-view datasets and feature
//! handling ([`feature`]), an index-aligned FIFO memory bank ([`bank`]),
//! the staged mining cascade ([`miner`]), single- and multi-positive
//! contrastive losses with analytic gradients ([`loss`]), linear toy
//! encoders ([`encoder`]), synthetic complementary-view data ([`synth`]),
//! a progressive training loop ([`trainer`]), mining-quality and retrieval
//! metrics ([`eval`]), and deterministic plain-text reports ([`report`]).
//!
//! Everything is f64 and deterministic: seeded ChaCha RNG, ordered maps,
//! and a fixed tie-break (lower slot index) wherever scores can collide.

pub mod bank;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod feature;
pub mod loss;
pub mod miner;
pub mod report;
pub mod synth;
pub mod trainer;

pub use bank::{BankEntry, MemoryBank};
pub use encoder::{ema_update, ToyEncoder};
pub use error::{Error, Result};
pub use eval::{retrieval_recall, ClassLabel};
pub use feature::{Dataset, FeatureVec, InstanceId, InstanceRecord, ViewId};
pub use loss::{info_nce, mil_nce, mil_nce_grad, ContrastiveBatch};
pub use miner::{mine, CascadeConfig, MiningResult, QueryTrace, StageTrace};
pub use report::MetricsReport;
pub use synth::{ConfusablePair, SyntheticSpec};
pub use trainer::{
    train, Checkpoint, CycleSpec, EpochStats, MiningPlan, TrainOutcome, TrainSchedule,
    ViewSchedule,
};
