//! Desk-scale end-to-end run: synthesize a two-view dataset, train with a
//! progressive top-k schedule, and print per-epoch stats plus a final
//! report to stdout.
//!
//!     cargo run -p casmine-core --example pipeline

use std::collections::BTreeMap;

use casmine_core::report::{render_report, render_run_log, MetricsReport};
use casmine_core::synth::{ConfusablePair, SyntheticSpec};
use casmine_core::trainer::{train, CycleSpec, MiningPlan, TrainSchedule, ViewSchedule};
use casmine_core::{retrieval_recall, ViewId};

fn main() {
    let rgb = ViewId::new("rgb").unwrap();
    let flow = ViewId::new("flow").unwrap();
    let mut view_dims = BTreeMap::new();
    view_dims.insert(rgb.clone(), 8);
    view_dims.insert(flow.clone(), 8);
    let spec = SyntheticSpec {
        num_classes: 4,
        instances_per_class: 12,
        view_dims,
        noise_scale: 0.25,
        confusable: vec![
            ConfusablePair { class_a: 0, class_b: 1, view: rgb.clone() },
            ConfusablePair { class_a: 2, class_b: 3, view: flow.clone() },
        ],
    };
    let dataset = casmine_core::synth::generate(&spec, 7).unwrap();
    let (train_set, holdout) = dataset.split_per_class(9).unwrap();

    let plan = MiningPlan {
        stages: 3,
        selection_ratio: 0.4,
        schedule: ViewSchedule::Alternating,
    };
    let schedule = TrainSchedule {
        cycles: (1..=3)
            .map(|k| CycleSpec {
                epochs: 2,
                final_top_k: k,
                train_view: if k % 2 == 1 { rgb.clone() } else { flow.clone() },
            })
            .collect(),
        batch_size: 6,
        learning_rate: 0.5,
        ema_momentum: 0.99,
        temperature: 0.07,
        bank_capacity: train_set.len(),
        reset_bank_between_cycles: false,
        embedding_dim: None,
    };

    let outcome = train(&train_set, &plan, &schedule, 42).unwrap();
    print!("{}", render_run_log(&outcome.epoch_stats));

    // Holdout retrieval in the rgb view with the trained encoder.
    let enc = &outcome.encoders[&rgb];
    let embed = |ds: &casmine_core::Dataset| {
        ds.records()
            .iter()
            .map(|r| {
                (
                    r.class_label.unwrap(),
                    enc.encode(r.feature(&rgb).unwrap()).unwrap(),
                )
            })
            .collect::<Vec<_>>()
    };
    let recall = retrieval_recall(&embed(&holdout), &embed(&train_set), &[1, 5, 10]).unwrap();

    let report = MetricsReport::from_outcome(&outcome, recall);
    print!(
        "{}",
        render_report(
            "{\"example\":\"pipeline\",\"seed\":42}",
            &report,
            &[String::from("synthetic two-view desk run")],
        )
    );
}
