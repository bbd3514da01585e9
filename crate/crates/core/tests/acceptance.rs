//! Acceptance gate. Each test covers one numbered criterion and prints a
//! single `criterion N (name): pass` line (visible under --nocapture or
//! on failure). Oracles here are written independently of the library
//! internals they check: brute-force mining, double-double loss sums,
//! central finite differences, and hand-enumerated fixtures.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use casmine_core::bank::{BankEntry, MemoryBank};
use casmine_core::eval::{
    class_mining_recall, mining_recall_at_1, positive_mining_recall, retrieval_recall,
};
use casmine_core::feature::{FeatureVec, InstanceId, ViewId};
use casmine_core::loss::{info_nce, mil_nce, mil_nce_grad, ContrastiveBatch};
use casmine_core::miner::{mine, top_k, CascadeConfig, MiningResult, QueryTrace};
use casmine_core::report::{render_report, MetricsReport};
use casmine_core::synth::{ConfusablePair, SyntheticSpec};
use casmine_core::trainer::{train, CycleSpec, MiningPlan, TrainSchedule, ViewSchedule};

fn view(name: &str) -> ViewId {
    ViewId::new(name).unwrap()
}

fn iid(n: usize) -> InstanceId {
    InstanceId::new(format!("i{n:04}")).unwrap()
}

fn conclude(criterion: usize, name: &str, ok: bool, detail: &str) {
    let verdict = if ok { "pass" } else { "FAIL" };
    println!("criterion {criterion} ({name}): {verdict} [{detail}]");
    assert!(ok, "criterion {criterion} ({name}) failed: {detail}");
}

fn unit_vec(rng: &mut ChaCha8Rng, dim: usize) -> FeatureVec {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let f = FeatureVec::new(v).unwrap();
        if let Ok(u) = f.normalized() {
            return u;
        }
    }
}

/// Fully occupied bank over the given views.
fn random_bank(rng: &mut ChaCha8Rng, views: &[ViewId], slots: usize, dim: usize) -> MemoryBank {
    let dims: BTreeMap<ViewId, usize> = views.iter().map(|v| (v.clone(), dim)).collect();
    let mut bank = MemoryBank::new(&dims, slots).unwrap();
    for i in 0..slots {
        let features: BTreeMap<ViewId, FeatureVec> = views
            .iter()
            .map(|v| (v.clone(), unit_vec(rng, dim)))
            .collect();
        bank.update(&[BankEntry::new(iid(i), features)]).unwrap();
    }
    bank
}

// Criterion 1. Brute-force mining oracle: an independent reimplementation
// of the cascade (own dot products, own sort, own rounding expression)
// must agree exactly on 200 random instances.

/// Reference cascade. Shares nothing with the library implementation
/// beyond read access to the stored features. The keep-count expression
/// is written out literally: every reimplementation must use this exact
/// f64 expression so float rounding cannot diverge.
fn brute_force_mine(
    query: &BTreeMap<ViewId, FeatureVec>,
    bank: &MemoryBank,
    schedule: &[ViewId],
    ratio: f64,
    final_top_k: usize,
    exclude: &BTreeSet<usize>,
) -> (Vec<usize>, BTreeSet<usize>) {
    let eligible: Vec<usize> = (0..bank.len()).filter(|s| !exclude.contains(s)).collect();
    let mut candidates = eligible.clone();
    let mut kept: Vec<usize> = Vec::new();
    for (si, v) in schedule.iter().enumerate() {
        let q = &query[v];
        let mut scored: Vec<(usize, f64)> = candidates
            .iter()
            .map(|&slot| {
                let feat = bank.feature(v, slot).unwrap();
                let dot: f64 = q
                    .values()
                    .iter()
                    .zip(feat.values())
                    .map(|(a, b)| a * b)
                    .sum();
                (slot, dot)
            })
            .collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let keep = if si + 1 == schedule.len() {
            final_top_k.min(scored.len())
        } else {
            let n = scored.len();
            ((ratio * n as f64).ceil() as usize).min(n)
        };
        kept = scored.into_iter().take(keep).map(|(s, _)| s).collect();
        candidates = kept.clone();
    }
    let kept_set: BTreeSet<usize> = kept.iter().copied().collect();
    let negatives: BTreeSet<usize> = eligible
        .into_iter()
        .filter(|s| !kept_set.contains(s))
        .collect();
    (kept, negatives)
}

#[test]
fn criterion_1_mining_matches_brute_force_oracle() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xC1);
    let stage_counts = [1usize, 3, 5, 7];
    let ratios = [0.5, 0.8];
    let mut checked = 0;
    for case in 0..200 {
        let slots = rng.random_range(8..=64);
        let dim = rng.random_range(2..=16);
        let nviews = rng.random_range(2..=3);
        let views: Vec<ViewId> = (0..nviews).map(|i| view(&format!("v{i}"))).collect();
        let bank = random_bank(&mut rng, &views, slots, dim);
        let query: BTreeMap<ViewId, FeatureVec> = views
            .iter()
            .map(|v| (v.clone(), unit_vec(&mut rng, dim)))
            .collect();
        let stages = stage_counts[case % stage_counts.len()];
        let ratio = ratios[case % ratios.len()];
        let k = rng.random_range(1..=8);
        let schedule: Vec<ViewId> = (0..stages).map(|s| views[s % nviews].clone()).collect();
        let mut exclude = BTreeSet::new();
        for _ in 0..rng.random_range(0..4) {
            exclude.insert(rng.random_range(0..slots));
        }
        if exclude.len() == slots {
            exclude.clear();
        }

        let cfg = CascadeConfig {
            stages,
            selection_ratio: ratio,
            view_schedule: schedule.clone(),
            final_top_k: k,
        };
        let got = mine(&query, &bank, &cfg, &exclude).unwrap();
        let (want_pos, want_neg) = brute_force_mine(&query, &bank, &schedule, ratio, k, &exclude);
        assert_eq!(
            got.positives, want_pos,
            "case {case}: positives diverged (slots={slots} dim={dim} n={stages} r={ratio} k={k})"
        );
        assert_eq!(got.negatives, want_neg, "case {case}: negatives diverged");
        checked += 1;
    }
    let elapsed = start.elapsed();
    conclude(
        1,
        "mining equals brute-force oracle",
        checked == 200 && elapsed.as_secs() < 10,
        &format!("{checked}/200 exact matches in {elapsed:.2?} (budget 10s)"),
    );
}

// Criterion 2. Single-stage degeneracy: one stage equals plain top-k over
// the whole candidate set, and ratio 1.0 makes depth irrelevant.

#[test]
fn criterion_2_single_stage_degeneracy() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC2);
    let views = [view("a"), view("b")];
    let mut ok = true;
    let mut detail = String::new();
    for case in 0..50 {
        let slots = rng.random_range(6..=40);
        let dim = rng.random_range(2..=8);
        let bank = random_bank(&mut rng, &views, slots, dim);
        let query: BTreeMap<ViewId, FeatureVec> = views
            .iter()
            .map(|v| (v.clone(), unit_vec(&mut rng, dim)))
            .collect();
        let k = rng.random_range(1..=6);

        let one = CascadeConfig {
            stages: 1,
            selection_ratio: 0.5,
            view_schedule: vec![view("b")],
            final_top_k: k,
        };
        let res_one = mine(&query, &bank, &one, &BTreeSet::new()).unwrap();
        let all: BTreeSet<usize> = (0..slots).collect();
        let direct = top_k(&query[&view("b")], &bank, &view("b"), &all, k).unwrap();
        if res_one.positives != direct {
            ok = false;
            detail = format!("case {case}: n=1 != top-k");
            break;
        }

        let stages = rng.random_range(2..=6);
        let mut schedule: Vec<ViewId> = (0..stages)
            .map(|s| views[s % views.len()].clone())
            .collect();
        *schedule.last_mut().unwrap() = view("b");
        let deep = CascadeConfig {
            stages,
            selection_ratio: 1.0,
            view_schedule: schedule,
            final_top_k: k,
        };
        let res_deep = mine(&query, &bank, &deep, &BTreeSet::new()).unwrap();
        if res_deep.positives != res_one.positives || res_deep.negatives != res_one.negatives {
            ok = false;
            detail = format!("case {case}: r=1.0 depth {stages} != n=1");
            break;
        }
    }
    if ok {
        detail = "50/50 exact on both degeneracies".into();
    }
    conclude(2, "one-stage degeneracy", ok, &detail);
}

// Criterion 3. Loss against a double-double transcription of the
// definitions: L = -ln(sum_p exp(l_p) / (sum_p exp(l_p) + sum_n exp(l_n)))
// with compensated sums, evaluated as ln_1p of the ratio to keep relative
// accuracy for small losses.

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bv = s - a;
    (s, (a - (s - bv)) + (b - bv))
}

#[derive(Clone, Copy)]
struct DoubleDouble {
    hi: f64,
    lo: f64,
}

impl DoubleDouble {
    fn zero() -> Self {
        DoubleDouble { hi: 0.0, lo: 0.0 }
    }

    fn add(self, x: f64) -> Self {
        let (s, e) = two_sum(self.hi, x);
        DoubleDouble { hi: s, lo: self.lo + e }
    }

    fn value(self) -> f64 {
        self.hi + self.lo
    }
}

fn oracle_loss(batch: &ContrastiveBatch) -> f64 {
    let tau = batch.temperature();
    let q = batch.query();
    let sum_exp = |feats: &[FeatureVec]| {
        feats
            .iter()
            .fold(DoubleDouble::zero(), |acc, f| {
                let dot: f64 = q
                    .values()
                    .iter()
                    .zip(f.values())
                    .map(|(a, b)| a * b)
                    .sum();
                acc.add((dot / tau).exp())
            })
            .value()
    };
    let s_pos = sum_exp(batch.positives());
    let s_neg = sum_exp(batch.negatives());
    (s_neg / s_pos).ln_1p()
}

fn random_batch(
    rng: &mut ChaCha8Rng,
    dim: usize,
    n_pos: usize,
    n_neg: usize,
    tau: f64,
) -> ContrastiveBatch {
    let q = unit_vec(rng, dim);
    let pos: Vec<FeatureVec> = (0..n_pos).map(|_| unit_vec(rng, dim)).collect();
    let neg: Vec<FeatureVec> = (0..n_neg).map(|_| unit_vec(rng, dim)).collect();
    ContrastiveBatch::new(q, pos, neg, tau).unwrap()
}

#[test]
fn criterion_3_loss_matches_extended_precision_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC3);
    let mut worst_oracle = 0.0f64;
    let mut worst_singleton = 0.0f64;
    for case in 0..100 {
        let dim = rng.random_range(4..=32);
        let n_neg = rng.random_range(1..=128);
        let singleton = case % 2 == 0;
        let n_pos = if singleton { 1 } else { rng.random_range(2..=8) };
        let batch = random_batch(&mut rng, dim, n_pos, n_neg, 0.07);

        let got = mil_nce(&batch).unwrap();
        let want = oracle_loss(&batch);
        let rel = (got - want).abs() / want.abs().max(f64::MIN_POSITIVE);
        worst_oracle = worst_oracle.max(rel);
        assert!(
            rel <= 1e-10,
            "case {case}: oracle disagreement rel={rel:.3e} (got {got}, want {want})"
        );

        if singleton {
            let single = info_nce(&batch).unwrap();
            let rel1 = (got - single).abs() / single.abs().max(f64::MIN_POSITIVE);
            worst_singleton = worst_singleton.max(rel1);
            assert!(rel1 <= 1e-12, "case {case}: singleton rel={rel1:.3e}");
            let single_rel = (single - want).abs() / want.abs().max(f64::MIN_POSITIVE);
            assert!(single_rel <= 1e-10, "case {case}: single-positive oracle rel={single_rel:.3e}");
        }
    }
    conclude(
        3,
        "loss equals extended-precision oracle",
        true,
        &format!(
            "100 batches at tau=0.07; worst oracle rel {worst_oracle:.2e} (tol 1e-10), \
             worst singleton rel {worst_singleton:.2e} (tol 1e-12)"
        ),
    );
}

// Criterion 4. Analytic query gradient vs central finite differences
// through the normalization, 100 random batches.

#[test]
fn criterion_4_gradient_matches_finite_differences() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xC4);
    let h = 1e-5;
    let mut worst = 0.0f64;
    for case in 0..100 {
        let dim = rng.random_range(4..=32);
        let n_pos = rng.random_range(1..=8);
        let n_neg = rng.random_range(1..=128);
        let batch = random_batch(&mut rng, dim, n_pos, n_neg, 0.07);
        let grad = mil_nce_grad(&batch).unwrap();

        let q0 = batch.query().values().to_vec();
        let mut fd = vec![0.0; dim];
        for i in 0..dim {
            let eval = |delta: f64| -> f64 {
                let mut q = q0.clone();
                q[i] += delta;
                let qn = FeatureVec::new(q).unwrap().normalized().unwrap();
                let b = ContrastiveBatch::new(
                    qn,
                    batch.positives().to_vec(),
                    batch.negatives().to_vec(),
                    batch.temperature(),
                )
                .unwrap();
                mil_nce(&b).unwrap()
            };
            fd[i] = (eval(h) - eval(-h)) / (2.0 * h);
        }
        let num = |xs: &[f64]| xs.iter().map(|x| x * x).sum::<f64>().sqrt();
        let diff: Vec<f64> = fd.iter().zip(grad.iter()).map(|(a, b)| a - b).collect();
        let rel = num(&diff) / num(&fd).max(f64::MIN_POSITIVE);
        worst = worst.max(rel);
        assert!(rel <= 1e-4, "case {case}: fd rel={rel:.3e}");
    }
    let elapsed = start.elapsed();
    conclude(
        4,
        "gradient matches central differences",
        elapsed.as_secs() < 30,
        &format!("100 batches, worst normwise rel {worst:.2e} (tol 1e-4), {elapsed:.2?} (budget 30s)"),
    );
}

// Criterion 5. Hand-enumerated fixtures for every metric. The mining
// fixture is a 20-slot two-view bank built from planar angles, walked by
// hand below; the recall fixtures enumerate each rank.

fn angle_vec(deg: f64) -> FeatureVec {
    let r = deg.to_radians();
    FeatureVec::new(vec![r.cos(), r.sin()]).unwrap()
}

#[test]
fn criterion_5_metric_fixtures() {
    // Bank: 20 slots. In flow, slot t sits at 5 + 3t degrees from the
    // query, so flow rank order is 0,1,2,...,19. In rgb, slots 0..9 sit at
    // [40,10,50,20,70,15,80,25,90,12] degrees and slots 10..19 far away at
    // 130..149 degrees.
    let flow = view("flow");
    let rgb = view("rgb");
    let rgb_near = [40.0, 10.0, 50.0, 20.0, 70.0, 15.0, 80.0, 25.0, 90.0, 12.0];
    let mut dims = BTreeMap::new();
    dims.insert(flow.clone(), 2);
    dims.insert(rgb.clone(), 2);
    let mut bank = MemoryBank::new(&dims, 20).unwrap();
    for t in 0..20 {
        let rgb_deg = if t < 10 { rgb_near[t] } else { 130.0 + t as f64 };
        let mut features = BTreeMap::new();
        features.insert(flow.clone(), angle_vec(5.0 + 3.0 * t as f64));
        features.insert(rgb.clone(), angle_vec(rgb_deg));
        bank.update(&[BankEntry::new(iid(t), features)]).unwrap();
    }
    let mut query = BTreeMap::new();
    query.insert(flow.clone(), angle_vec(0.0));
    query.insert(rgb.clone(), angle_vec(0.0));

    // Cascade [flow, rgb, flow], r=0.5, k=2 by hand:
    //   stage 1 keeps ceil(20/2) = 10 nearest in flow -> slots 0..9;
    //   stage 2 keeps ceil(10/2) = 5 nearest in rgb -> 10,12,15,20,25 deg
    //     -> slots [1, 9, 5, 3, 7];
    //   stage 3 takes top 2 in flow (8,32,20,14,26 deg) -> slots [1, 3].
    let cfg = CascadeConfig {
        stages: 3,
        selection_ratio: 0.5,
        view_schedule: vec![flow.clone(), rgb.clone(), flow.clone()],
        final_top_k: 2,
    };
    let result = mine(&query, &bank, &cfg, &BTreeSet::new()).unwrap();
    assert_eq!(result.stages[0].selected, (0..10).collect::<Vec<_>>());
    assert_eq!(result.stages[1].selected, vec![1, 9, 5, 3, 7]);
    assert_eq!(result.positives, vec![1, 3]);
    assert_eq!(result.negatives.len(), 18);

    // Labels: the query is class 7; slot 1 is class 7, slot 3 is class 4.
    // PMR = 1/2 exactly; the top-ranked slot matches, so R@1 is true.
    let mut slot_labels: BTreeMap<usize, i64> = (0..20).map(|s| (s, s as i64 % 3)).collect();
    slot_labels.insert(1, 7);
    slot_labels.insert(3, 4);
    let pmr = positive_mining_recall(&result, 7, &slot_labels).unwrap();
    assert_eq!(pmr, 0.5, "hand-enumerated PMR");
    assert!(mining_recall_at_1(&result, 7, &slot_labels).unwrap());

    // Class mining recall over 20 instances in 4 classes of 5. Class c
    // owns ids 5c..5c+4. Queries mine distinct same-class ids: class 0
    // gets all 5, class 1 gets 4, class 2 gets 3, class 3 gets 2, so the
    // recalls are 1.0, 0.8, 0.6, 0.4 and the median is (0.6+0.8)/2 = 0.7.
    let labels: BTreeMap<InstanceId, i64> = (0..20).map(|i| (iid(i), (i / 5) as i64)).collect();
    let sizes: BTreeMap<i64, usize> = (0..4).map(|c| (c, 5)).collect();
    let trace = |q: usize, mined: Vec<usize>| QueryTrace {
        query_id: iid(q),
        positive_ids: mined.iter().map(|&m| iid(m)).collect(),
        result: MiningResult {
            positives: (0..mined.len()).collect(),
            negatives: BTreeSet::new(),
            stages: vec![],
        },
    };
    let traces = vec![
        trace(0, vec![1, 2, 6]),     // class 0: TPs {1, 2}
        trace(1, vec![0, 3, 4, 2]),  // class 0: TPs {0, 3, 4} -> all 5 seen
        trace(5, vec![6, 7, 0]),     // class 1: TPs {6, 7}
        trace(6, vec![8, 9, 9]),     // class 1: TPs {8, 9} -> 4 distinct
        trace(10, vec![11, 12, 13]), // class 2: 3 distinct
        trace(15, vec![16, 17]),     // class 3: 2 distinct
    ];
    let rows = class_mining_recall(&traces, &labels, &sizes).unwrap();
    let recalls: Vec<f64> = (0..4).map(|c| rows[&c].recall).collect();
    assert_eq!(recalls, vec![1.0, 0.8, 0.6, 0.4]);
    assert_eq!(casmine_core::eval::median(&recalls), Some(0.7));

    // Retrieval: 20 train items, class 0 at 0..9 degrees, class 1 at
    // 50..59. Four test queries with hand-computed first-match ranks:
    //   2.0 deg class 0 -> nearest is class 0           -> rank 1
    //   30.2 deg class 0 -> 50, 51 (class 1) beat 9 deg  -> rank 3
    //   55.3 deg class 1 -> nearest is class 1           -> rank 1
    //   45.1 deg class 0 -> all ten class-1 items first  -> rank 11
    // R@1 = 2/4, R@2 = 2/4, R@3..10 = 3/4, R@11+ = 1.
    let train_set: Vec<(i64, FeatureVec)> = (0..20)
        .map(|i| {
            let class = (i / 10) as i64;
            let deg = if i < 10 { i as f64 } else { 50.0 + (i - 10) as f64 };
            (class, angle_vec(deg))
        })
        .collect();
    let tests = vec![
        (0, angle_vec(2.0)),
        (0, angle_vec(30.2)),
        (1, angle_vec(55.3)),
        (0, angle_vec(45.1)),
    ];
    let ks: Vec<usize> = (1..=20).collect();
    let recall = retrieval_recall(&tests, &train_set, &ks).unwrap();
    assert_eq!(recall[&1], 0.5);
    assert_eq!(recall[&2], 0.5);
    assert_eq!(recall[&3], 0.75);
    assert_eq!(recall[&10], 0.75);
    assert_eq!(recall[&11], 1.0);
    assert_eq!(recall[&20], 1.0);
    let mut prev = 0.0;
    for k in &ks {
        assert!(recall[k] >= prev, "R@k not monotone at k={k}");
        prev = recall[k];
    }

    conclude(
        5,
        "metric fixtures",
        true,
        "PMR 0.5, R@1 true, CMR [1.0, 0.8, 0.6, 0.4] median 0.7, R@k steps 0.5/0.75/1.0 all exact",
    );
}

// Criteria 6 and 7 share this synthetic family: two views, confusable
// class pairs in each view, so single-view mining confuses four classes
// that cross-view agreement can separate.

fn trend_spec(instances_per_class: usize, noise_scale: f64) -> SyntheticSpec {
    let mut view_dims = BTreeMap::new();
    view_dims.insert(view("rgb"), 12);
    view_dims.insert(view("flow"), 12);
    SyntheticSpec {
        num_classes: 10,
        instances_per_class,
        view_dims,
        noise_scale,
        confusable: vec![
            ConfusablePair { class_a: 0, class_b: 1, view: view("rgb") },
            ConfusablePair { class_a: 2, class_b: 3, view: view("rgb") },
            ConfusablePair { class_a: 4, class_b: 5, view: view("flow") },
            ConfusablePair { class_a: 6, class_b: 7, view: view("flow") },
        ],
    }
}

fn trend_schedule(cycles: Vec<CycleSpec>, learning_rate: f64) -> TrainSchedule {
    TrainSchedule {
        cycles,
        batch_size: 18,
        learning_rate,
        ema_momentum: 0.9,
        temperature: 0.07,
        bank_capacity: 180,
        reset_bank_between_cycles: false,
        embedding_dim: None,
    }
}

#[test]
fn criterion_6_deeper_cascades_mine_better_positives() {
    let start = Instant::now();
    let seeds = [1u64, 2, 3, 4, 5];
    let mut pmr = BTreeMap::new();
    for &stages in &[1usize, 3, 7] {
        let per_seed: Vec<f64> = seeds
            .iter()
            .map(|&seed| {
                let dataset = casmine_core::synth::generate(&trend_spec(18, 0.45), seed).unwrap();
                let plan = MiningPlan {
                    stages,
                    selection_ratio: 0.5,
                    schedule: ViewSchedule::Alternating,
                };
                let schedule = trend_schedule(
                    vec![
                        CycleSpec { epochs: 2, final_top_k: 3, train_view: view("rgb") },
                        CycleSpec { epochs: 2, final_top_k: 3, train_view: view("flow") },
                    ],
                    0.3,
                );
                let out = train(&dataset, &plan, &schedule, seed).unwrap();
                out.epoch_stats.last().unwrap().pmr_mean.unwrap()
            })
            .collect();
        pmr.insert(stages, per_seed);
    }
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    let m1 = mean(&pmr[&1]);
    let m3 = mean(&pmr[&3]);
    let m7 = mean(&pmr[&7]);
    let wins_3_over_1 = pmr[&3]
        .iter()
        .zip(&pmr[&1])
        .filter(|(a, b)| a > b)
        .count();
    let wins_7_over_3 = pmr[&7]
        .iter()
        .zip(&pmr[&3])
        .filter(|(a, b)| a >= b)
        .count();
    let elapsed = start.elapsed();
    let ok = m3 > m1 && m7 >= m3 && wins_3_over_1 >= 4 && wins_7_over_3 >= 4
        && elapsed.as_secs() < 300;
    conclude(
        6,
        "cascade depth improves PMR",
        ok,
        &format!(
            "mean last-epoch PMR n1={m1:.4} n3={m3:.4} n7={m7:.4}; \
             n3>n1 in {wins_3_over_1}/5 seeds, n7>=n3 in {wins_7_over_3}/5; {elapsed:.2?} (budget 5min)"
        ),
    );
}

#[test]
fn criterion_7_progressive_topk_holds_up_on_holdout() {
    let seeds = [1u64, 2, 3, 4, 5];
    let rgb = view("rgb");
    let mut progressive_wins = 0usize;
    let mut detail_pairs = Vec::new();
    for &seed in &seeds {
        let full = casmine_core::synth::generate(&trend_spec(24, 0.55), seed).unwrap();
        let (train_set, holdout) = full.split_per_class(18).unwrap();
        let plan = MiningPlan {
            stages: 3,
            selection_ratio: 0.5,
            schedule: ViewSchedule::Alternating,
        };
        let cycles = |ks: [usize; 5]| -> Vec<CycleSpec> {
            ks.iter()
                .enumerate()
                .map(|(i, &k)| CycleSpec {
                    epochs: 2,
                    final_top_k: k,
                    train_view: if i % 2 == 0 { view("rgb") } else { view("flow") },
                })
                .collect()
        };
        let r1_of = |ks: [usize; 5]| -> f64 {
            let out = train(&train_set, &plan, &trend_schedule(cycles(ks), 0.6), seed).unwrap();
            let enc = &out.encoders[&rgb];
            let embed = |ds: &casmine_core::Dataset| {
                ds.records()
                    .iter()
                    .map(|r| (r.class_label.unwrap(), enc.encode(r.feature(&rgb).unwrap()).unwrap()))
                    .collect::<Vec<_>>()
            };
            retrieval_recall(&embed(&holdout), &embed(&train_set), &[1]).unwrap()[&1]
        };
        let prog = r1_of([1, 2, 3, 4, 5]);
        let fixed = r1_of([5, 5, 5, 5, 5]);
        if prog >= fixed {
            progressive_wins += 1;
        }
        detail_pairs.push(format!("seed{seed}: {prog:.3} vs {fixed:.3}"));
    }
    conclude(
        7,
        "progressive top-k at least matches fixed",
        progressive_wins >= 3,
        &format!(
            "holdout R@1 progressive vs fixed-5: {} -> {progressive_wins}/5 seeds",
            detail_pairs.join(", ")
        ),
    );
}

// Criterion 8. Determinism and invariances: byte-identical reports from
// identical runs; slot relabeling permutes results consistently; scaling
// raw features by powers of two changes nothing.

#[test]
fn criterion_8_determinism_and_invariances() {
    // Byte-identical reports.
    let dataset = casmine_core::synth::generate(&trend_spec(18, 0.45), 3).unwrap();
    let plan = MiningPlan {
        stages: 3,
        selection_ratio: 0.5,
        schedule: ViewSchedule::Alternating,
    };
    let schedule = trend_schedule(
        vec![CycleSpec {
            epochs: 2,
            final_top_k: 3,
            train_view: view("rgb"),
        }],
        0.3,
    );
    let render = || {
        let out = train(&dataset, &plan, &schedule, 11).unwrap();
        let report = MetricsReport::from_outcome(&out, BTreeMap::new());
        render_report("{\"criterion\":8}", &report, &[])
    };
    let bytes_equal = render() == render();

    // Slot relabeling: enqueue the same entries in permuted order.
    let mut rng = ChaCha8Rng::seed_from_u64(0xC8);
    let views = [view("a"), view("b")];
    let n = 16;
    let entries: Vec<BTreeMap<ViewId, FeatureVec>> = (0..n)
        .map(|_| {
            views
                .iter()
                .map(|v| (v.clone(), unit_vec(&mut rng, 4)))
                .collect()
        })
        .collect();
    let query: BTreeMap<ViewId, FeatureVec> = views
        .iter()
        .map(|v| (v.clone(), unit_vec(&mut rng, 4)))
        .collect();
    let build = |order: &[usize]| {
        let dims: BTreeMap<ViewId, usize> = views.iter().map(|v| (v.clone(), 4)).collect();
        let mut bank = MemoryBank::new(&dims, n).unwrap();
        for &i in order {
            bank.update(&[BankEntry::new(iid(i), entries[i].clone())]).unwrap();
        }
        bank
    };
    let ident: Vec<usize> = (0..n).collect();
    let mut perm = ident.clone();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(99));
    let mut inv = vec![0usize; n];
    for (j, &orig) in perm.iter().enumerate() {
        inv[orig] = j;
    }
    let cfg = CascadeConfig {
        stages: 3,
        selection_ratio: 0.5,
        view_schedule: vec![view("b"), view("a"), view("b")],
        final_top_k: 3,
    };
    let res_a = mine(&query, &build(&ident), &cfg, &BTreeSet::new()).unwrap();
    let res_b = mine(&query, &build(&perm), &cfg, &BTreeSet::new()).unwrap();
    let mapped: Vec<usize> = res_a.positives.iter().map(|&s| inv[s]).collect();
    let relabel_ok = mapped == res_b.positives
        && res_a.negatives.iter().map(|&s| inv[s]).collect::<BTreeSet<_>>() == res_b.negatives;

    // Power-of-two scaling before normalization is absorbed exactly.
    let mut scale_ok = true;
    for &scale in &[0.125f64, 0.5, 4.0, 8.0] {
        let scaled_entries: Vec<BTreeMap<ViewId, FeatureVec>> = entries
            .iter()
            .map(|m| {
                m.iter()
                    .map(|(v, f)| {
                        let raw: Vec<f64> = f.values().iter().map(|x| x * scale).collect();
                        (v.clone(), FeatureVec::new(raw).unwrap().normalized().unwrap())
                    })
                    .collect()
            })
            .collect();
        let dims: BTreeMap<ViewId, usize> = views.iter().map(|v| (v.clone(), 4)).collect();
        let mut bank = MemoryBank::new(&dims, n).unwrap();
        for (i, feats) in scaled_entries.iter().enumerate() {
            bank.update(&[BankEntry::new(iid(i), feats.clone())]).unwrap();
        }
        let res_scaled = mine(&query, &bank, &cfg, &BTreeSet::new()).unwrap();
        if res_scaled != res_a {
            scale_ok = false;
        }
    }

    conclude(
        8,
        "determinism and invariances",
        bytes_equal && relabel_ok && scale_ok,
        &format!(
            "reports byte-identical: {bytes_equal}; relabeling permutes exactly: {relabel_ok}; \
             power-of-two scale invariant: {scale_ok}"
        ),
    );
}
