//! Subcommand bodies. Every command prints the resolved config first on
//! a dry run and otherwise writes artifacts under the output directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use casmine_core::eval::retrieval_recall;
use casmine_core::feature::{Dataset, FeatureVec, InstanceId, ViewId};
use casmine_core::miner::{format_trace_lines, mine as cascade_mine, QueryTrace};
use casmine_core::report::{
    parse_report, render_report, write_report, write_run_log, MetricsReport,
};
use casmine_core::trainer::{train as run_training, Checkpoint};
use casmine_core::Error as CoreError;

use crate::config::{ResolvedConfig, SweepRun};
use crate::CliError;

pub fn synth(cfg: &ResolvedConfig, dry_run: bool) -> Result<(), CliError> {
    let spec = cfg.synthetic_spec()?;
    spec.validate().map_err(CliError::from)?;
    let section = cfg.config.synthetic.as_ref().expect("checked by synthetic_spec");
    if dry_run {
        println!("config {}", cfg.provenance_line());
        println!(
            "dry run: would write {} and {}",
            cfg.train_path().display(),
            if section.holdout_per_class > 0 {
                cfg.holdout_path().display().to_string()
            } else {
                "no holdout file".into()
            }
        );
        return Ok(());
    }

    let dataset = casmine_core::synth::generate(&spec, cfg.seed).map_err(CliError::from)?;
    fs::create_dir_all(&cfg.out_dir)
        .map_err(|e| CliError::runtime(format!("create {}: {e}", cfg.out_dir.display())))?;
    if section.holdout_per_class > 0 {
        let (train_set, holdout) = dataset
            .split_per_class(section.instances_per_class)
            .map_err(CliError::from)?;
        train_set.save(cfg.train_path()).map_err(CliError::from)?;
        holdout.save(cfg.holdout_path()).map_err(CliError::from)?;
        println!(
            "wrote {} ({} records) and {} ({} records)",
            cfg.train_path().display(),
            train_set.len(),
            cfg.holdout_path().display(),
            holdout.len()
        );
    } else {
        dataset.save(cfg.train_path()).map_err(CliError::from)?;
        println!(
            "wrote {} ({} records)",
            cfg.train_path().display(),
            dataset.len()
        );
    }
    Ok(())
}

pub fn ingest(cfg: &ResolvedConfig, dry_run: bool) -> Result<(), CliError> {
    let source = cfg.config.data.source.as_ref().ok_or_else(|| {
        CliError::validation("ingest needs data.source pointing at the input feature file")
    })?;
    if dry_run {
        println!("config {}", cfg.provenance_line());
        println!(
            "dry run: would ingest {} into {}",
            source.display(),
            cfg.train_path().display()
        );
        return Ok(());
    }
    let dataset = Dataset::load(source).map_err(CliError::from)?;
    fs::create_dir_all(&cfg.out_dir)
        .map_err(|e| CliError::runtime(format!("create {}: {e}", cfg.out_dir.display())))?;
    dataset.save(cfg.train_path()).map_err(CliError::from)?;
    let labeled = dataset
        .records()
        .iter()
        .filter(|r| r.class_label.is_some())
        .count();
    let dims: Vec<String> = dataset
        .view_dims()
        .iter()
        .map(|(v, d)| format!("{v}:{d}"))
        .collect();
    println!(
        "ingested {} records, {} views ({}), {labeled}/{} labeled",
        dataset.len(),
        dataset.views().len(),
        dims.join(" "),
        dataset.len()
    );
    println!("wrote {}", cfg.train_path().display());
    Ok(())
}

pub fn train(cfg: &ResolvedConfig, dry_run: bool) -> Result<(), CliError> {
    let runs = cfg.expand_sweep()?;
    if dry_run {
        println!("config {}", cfg.provenance_line());
        for run in &runs {
            println!("dry run: would train into {}", run.dir.display());
        }
        return Ok(());
    }
    // Sweep runs share the base config's data files; artifacts go to the
    // per-run directory.
    let dataset = Dataset::load(cfg.train_path()).map_err(CliError::from)?;
    for run in &runs {
        train_one(&dataset, run)?;
    }
    Ok(())
}

fn train_one(dataset: &Dataset, run: &SweepRun) -> Result<(), CliError> {
    let cfg = &run.resolved;
    let plan = cfg.mining_plan()?;
    let schedule = cfg.train_schedule()?;
    let outcome = run_training(dataset, &plan, &schedule, cfg.seed).map_err(CliError::from)?;

    fs::create_dir_all(&run.dir)
        .map_err(|e| CliError::runtime(format!("create {}: {e}", run.dir.display())))?;
    Checkpoint::from_outcome(&outcome, &schedule)
        .save(cfg.checkpoint_path())
        .map_err(CliError::from)?;
    write_run_log(run.dir.join("run.log"), &outcome.epoch_stats).map_err(CliError::from)?;
    write_traces(&run.dir.join("traces.tsv"), &outcome.last_epoch_traces)?;
    let report = MetricsReport::from_outcome(&outcome, BTreeMap::new());
    write_report(&run.dir, &cfg.provenance_line(), &report, &[]).map_err(CliError::from)?;

    let last = outcome.epoch_stats.last().expect("at least one epoch");
    let opt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.6}"));
    println!(
        "run {}: epochs={} loss={:.6} pmr={} r1={} cmr_median={}",
        run.dir.display(),
        outcome.epoch_stats.len(),
        last.loss_mean,
        opt(last.pmr_mean),
        opt(last.recall_at_1),
        opt(last.cmr_median)
    );
    Ok(())
}

fn write_traces(path: &Path, traces: &[QueryTrace]) -> Result<(), CliError> {
    let mut text = String::from("query\tstage\tview\tcandidates\tselected\n");
    for trace in traces {
        for line in format_trace_lines(trace) {
            text.push_str(&line);
            text.push('\n');
        }
    }
    fs::write(path, text).map_err(|e| CliError::runtime(format!("write {}: {e}", path.display())))
}

pub fn eval(cfg: &ResolvedConfig, dry_run: bool) -> Result<(), CliError> {
    if dry_run {
        println!("config {}", cfg.provenance_line());
        println!(
            "dry run: would eval checkpoint {} into {}",
            cfg.checkpoint_path().display(),
            cfg.out_dir.join("report.txt").display()
        );
        return Ok(());
    }
    let checkpoint = Checkpoint::load(cfg.checkpoint_path()).map_err(CliError::from)?;
    let gallery_set = Dataset::load(cfg.train_path()).map_err(CliError::from)?;
    let holdout_exists = cfg.holdout_path().is_file();
    let (query_set, split) = if holdout_exists {
        (Dataset::load(cfg.holdout_path()).map_err(CliError::from)?, "holdout")
    } else {
        (gallery_set.clone(), "train")
    };

    // Embed in the view trained last; the first checkpoint view is the
    // fallback when the config carries no training section.
    let view = match cfg.config.training.as_ref().and_then(|t| t.cycles.last()) {
        Some(c) => crate::config::view_id(&c.train_view)?,
        None => checkpoint
            .encoders
            .keys()
            .next()
            .cloned()
            .ok_or_else(|| CliError::validation("checkpoint holds no encoders"))?,
    };
    let encoder = checkpoint
        .encoders
        .get(&view)
        .ok_or_else(|| CliError::validation(format!("checkpoint has no encoder for view {view}")))?;

    let embed = |ds: &Dataset| -> Result<Vec<(i64, FeatureVec)>, CliError> {
        ds.records()
            .iter()
            .map(|r| {
                let label = r.class_label.ok_or_else(|| {
                    CoreError::InvalidInput(format!("instance {} has no label", r.id))
                })?;
                Ok((label, encoder.encode(r.feature(&view)?)?))
            })
            .collect::<Result<_, CoreError>>()
            .map_err(CliError::from)
    };
    let retrieval = retrieval_recall(&embed(&query_set)?, &embed(&gallery_set)?, &cfg.config.eval.ks)
        .map_err(CliError::from)?;

    let report_path = cfg.out_dir.join("report.txt");
    let parsed = parse_report(&report_path).map_err(CliError::from)?;
    let mut notes = parsed.notes.clone();
    let ks: Vec<String> = cfg.config.eval.ks.iter().map(|k| k.to_string()).collect();
    let eval_note = format!("retrieval view={view} split={split} ks={}", ks.join(","));
    if !notes.contains(&eval_note) {
        notes.push(eval_note);
    }
    if !holdout_exists {
        let sanity = String::from("sanity: train=test, R@1 trivially 1.0");
        if !notes.contains(&sanity) {
            notes.push(sanity);
        }
    }
    let mut updated = parsed.report.clone();
    updated.retrieval = retrieval;
    write_report(&cfg.out_dir, &parsed.config_line, &updated, &notes).map_err(CliError::from)?;

    for (k, v) in &updated.retrieval {
        println!("retrieval k={k} value={v:.6}");
    }
    if !holdout_exists {
        println!("sanity: train=test, R@1 trivially 1.0");
    }
    println!("updated {}", report_path.display());
    Ok(())
}

pub fn mine(cfg: &ResolvedConfig, dry_run: bool) -> Result<(), CliError> {
    if dry_run {
        println!("config {}", cfg.provenance_line());
        println!(
            "dry run: would mine against checkpoint {}",
            cfg.checkpoint_path().display()
        );
        return Ok(());
    }
    let checkpoint = Checkpoint::load(cfg.checkpoint_path()).map_err(CliError::from)?;
    let dataset = Dataset::load(cfg.train_path()).map_err(CliError::from)?;
    let views: Vec<ViewId> = checkpoint.encoders.keys().cloned().collect();
    let (query_name, cascade) = cfg.mine_cascade(&views)?;
    let query_id = InstanceId::new(query_name.clone()).map_err(CliError::from)?;
    let record = dataset
        .get(&query_id)
        .ok_or_else(|| CoreError::UnknownInstance(query_name.clone()))
        .map_err(CliError::from)?;

    // Queries are encoded with the EMA encoders, matching how bank
    // entries were produced during training.
    let mut query_feats = BTreeMap::new();
    for view in &views {
        let enc = checkpoint
            .ema_encoders
            .get(view)
            .ok_or_else(|| CliError::validation(format!("checkpoint has no encoder for view {view}")))?;
        query_feats.insert(view.clone(), enc.encode(record.feature(view)?).map_err(CliError::from)?);
    }
    let exclude = checkpoint.bank.slots_with_id(&query_id);
    let result = cascade_mine(&query_feats, &checkpoint.bank, &cascade, &exclude)
        .map_err(CliError::from)?;
    let positive_ids = result
        .positives
        .iter()
        .map(|&slot| checkpoint.bank.slot_id(slot).cloned())
        .collect::<Result<Vec<_>, CoreError>>()
        .map_err(CliError::from)?;
    let trace = QueryTrace {
        query_id,
        positive_ids,
        result,
    };

    for line in format_trace_lines(&trace) {
        println!("{line}");
    }
    for (rank, (slot, id)) in trace
        .result
        .positives
        .iter()
        .zip(&trace.positive_ids)
        .enumerate()
    {
        println!("positive rank={} slot={slot} id={id}", rank + 1);
    }
    fs::create_dir_all(&cfg.out_dir)
        .map_err(|e| CliError::runtime(format!("create {}: {e}", cfg.out_dir.display())))?;
    let file = cfg.out_dir.join(format!("mine_{}.tsv", sanitize(&query_name)));
    write_traces(&file, std::slice::from_ref(&trace))?;
    println!("wrote {}", file.display());
    Ok(())
}

pub fn report(cfg: &ResolvedConfig) -> Result<(), CliError> {
    let path = cfg.out_dir.join("report.txt");
    let parsed = parse_report(&path).map_err(CliError::from)?;
    print!(
        "{}",
        render_report(&parsed.config_line, &parsed.report, &parsed.notes)
    );
    Ok(())
}

/// Artifact-name-safe version of an instance id.
fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}
