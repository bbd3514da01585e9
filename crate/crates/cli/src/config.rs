//! Run configuration: a sectioned TOML file validated up front.
//! Unknown keys are rejected everywhere so a typo cannot silently fall
//! back to a default. Paths inside the file resolve against the output
//! directory, except `data.source` which names an external input.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use casmine_core::feature::ViewId;
use casmine_core::miner::CascadeConfig;
use casmine_core::synth::{ConfusablePair, SyntheticSpec};
use casmine_core::trainer::{CycleSpec, MiningPlan, TrainSchedule, ViewSchedule};

use crate::CliError;

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SynthSection>,
    #[serde(default)]
    pub data: DataSection,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cascade: Option<CascadeSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub training: Option<TrainingSection>,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mine: Option<MineSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSection {
    pub classes: usize,
    pub instances_per_class: usize,
    /// Extra instances per class written to the holdout file.
    #[serde(default)]
    pub holdout_per_class: usize,
    pub noise_scale: f64,
    pub view_dims: BTreeMap<String, usize>,
    #[serde(default)]
    pub confusable: Vec<ConfusableSection>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfusableSection {
    pub class_a: usize,
    pub class_b: usize,
    pub view: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    /// Training feature file, relative to the output directory.
    pub train: PathBuf,
    /// Holdout feature file, relative to the output directory; used by
    /// eval when present on disk.
    pub holdout: PathBuf,
    /// External feature file for `ingest`, resolved as given.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub source: Option<PathBuf>,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            train: PathBuf::from("train.tsv"),
            holdout: PathBuf::from("holdout.tsv"),
            source: None,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CascadeSection {
    pub stages: usize,
    pub selection_ratio: f64,
    /// Per-stage view names; omitted means alternate other views first,
    /// then the train view.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub schedule: Option<Vec<String>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSection {
    pub cycles: Vec<CycleSection>,
    pub batch_size: usize,
    pub learning_rate: f64,
    #[serde(default = "default_momentum")]
    pub ema_momentum: f64,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_bank_capacity")]
    pub bank_capacity: usize,
    #[serde(default)]
    pub reset_bank_between_cycles: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub embedding_dim: Option<usize>,
}

fn default_momentum() -> f64 {
    0.999
}

fn default_temperature() -> f64 {
    0.07
}

fn default_bank_capacity() -> usize {
    2048
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CycleSection {
    pub epochs: usize,
    pub final_top_k: usize,
    pub train_view: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub ks: Vec<usize>,
    /// Checkpoint file, relative to the output directory.
    pub checkpoint: PathBuf,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            ks: vec![1, 5, 10, 20],
            checkpoint: PathBuf::from("checkpoint.json"),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MineSection {
    /// Instance id to mine for.
    pub query: String,
    /// Final-stage width; defaults to the last training cycle's value.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub top_k: Option<usize>,
}

/// Ablation grid. Every listed axis replaces the base value; the cross
/// product expands to one run directory per combination.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    #[serde(default)]
    pub stages: Vec<usize>,
    #[serde(default)]
    pub selection_ratios: Vec<f64>,
    #[serde(default)]
    pub seeds: Vec<u64>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::runtime(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text)
            .map_err(|e| CliError::validation(format!("config {}: {e}", path.display())))
    }

    /// Applies flag overrides and checks cross-field consistency. The
    /// returned config has concrete seed and output directory.
    pub fn resolve(
        mut self,
        seed_flag: Option<u64>,
        out_flag: Option<PathBuf>,
    ) -> Result<ResolvedConfig, CliError> {
        if let Some(s) = seed_flag {
            self.seed = Some(s);
        }
        if let Some(o) = out_flag {
            self.out_dir = Some(o);
        }
        let seed = self.seed.unwrap_or(0);
        self.seed = Some(seed);
        let out_dir = self
            .out_dir
            .clone()
            .ok_or_else(|| CliError::validation("no output directory: set out_dir or pass --out"))?;

        if let Some(synth) = &self.synthetic {
            if synth.classes == 0 || synth.instances_per_class == 0 {
                return Err(CliError::validation(
                    "synthetic: classes and instances_per_class must be >= 1",
                ));
            }
            for pair in &synth.confusable {
                if !synth.view_dims.contains_key(&pair.view) {
                    return Err(CliError::validation(format!(
                        "synthetic: confusable pair references unknown view {}",
                        pair.view
                    )));
                }
            }
        }
        if let Some(sweep) = &self.sweep {
            if sweep.stages.len() > 1 {
                if let Some(c) = &self.cascade {
                    if c.schedule.is_some() {
                        return Err(CliError::validation(
                            "sweep over stages requires an alternating schedule \
                             (drop cascade.schedule)",
                        ));
                    }
                }
            }
        }
        Ok(ResolvedConfig {
            seed,
            out_dir,
            config: self,
        })
    }
}

/// A config with seed and output directory pinned.
#[derive(Clone, Debug)]
pub struct ResolvedConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub config: RunConfig,
}

impl ResolvedConfig {
    pub fn train_path(&self) -> PathBuf {
        self.out_dir.join(&self.config.data.train)
    }

    pub fn holdout_path(&self) -> PathBuf {
        self.out_dir.join(&self.config.data.holdout)
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.out_dir.join(&self.config.eval.checkpoint)
    }

    /// Single-line JSON of the resolved config, embedded in reports.
    pub fn provenance_line(&self) -> String {
        serde_json::to_string(&self.config).expect("config serializes")
    }

    pub fn synthetic_spec(&self) -> Result<SyntheticSpec, CliError> {
        let synth = self
            .config
            .synthetic
            .as_ref()
            .ok_or_else(|| CliError::validation("config has no [synthetic] section"))?;
        let mut view_dims = BTreeMap::new();
        for (name, dim) in &synth.view_dims {
            view_dims.insert(view_id(name)?, *dim);
        }
        let confusable = synth
            .confusable
            .iter()
            .map(|p| {
                Ok(ConfusablePair {
                    class_a: p.class_a,
                    class_b: p.class_b,
                    view: view_id(&p.view)?,
                })
            })
            .collect::<Result<Vec<_>, CliError>>()?;
        Ok(SyntheticSpec {
            num_classes: synth.classes,
            instances_per_class: synth.instances_per_class + synth.holdout_per_class,
            view_dims,
            noise_scale: synth.noise_scale,
            confusable,
        })
    }

    pub fn mining_plan(&self) -> Result<MiningPlan, CliError> {
        let c = self
            .config
            .cascade
            .as_ref()
            .ok_or_else(|| CliError::validation("config has no [cascade] section"))?;
        let schedule = match &c.schedule {
            None => ViewSchedule::Alternating,
            Some(names) => {
                if names.len() != c.stages {
                    return Err(CliError::validation(format!(
                        "cascade.schedule has {} entries for {} stages",
                        names.len(),
                        c.stages
                    )));
                }
                ViewSchedule::Explicit(
                    names
                        .iter()
                        .map(|n| view_id(n))
                        .collect::<Result<Vec<_>, CliError>>()?,
                )
            }
        };
        Ok(MiningPlan {
            stages: c.stages,
            selection_ratio: c.selection_ratio,
            schedule,
        })
    }

    pub fn train_schedule(&self) -> Result<TrainSchedule, CliError> {
        let t = self
            .config
            .training
            .as_ref()
            .ok_or_else(|| CliError::validation("config has no [training] section"))?;
        let cycles = t
            .cycles
            .iter()
            .map(|c| {
                Ok(CycleSpec {
                    epochs: c.epochs,
                    final_top_k: c.final_top_k,
                    train_view: view_id(&c.train_view)?,
                })
            })
            .collect::<Result<Vec<_>, CliError>>()?;
        Ok(TrainSchedule {
            cycles,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            ema_momentum: t.ema_momentum,
            temperature: t.temperature,
            bank_capacity: t.bank_capacity,
            reset_bank_between_cycles: t.reset_bank_between_cycles,
            embedding_dim: t.embedding_dim,
        })
    }

    /// Cascade for one-shot mining, widened to `mine.top_k` when set.
    pub fn mine_cascade(&self, views: &[ViewId]) -> Result<(String, CascadeConfig), CliError> {
        let m = self
            .config
            .mine
            .as_ref()
            .ok_or_else(|| CliError::validation("config has no [mine] section"))?;
        let top_k = match m.top_k {
            Some(k) => k,
            None => self
                .config
                .training
                .as_ref()
                .and_then(|t| t.cycles.last())
                .map(|c| c.final_top_k)
                .ok_or_else(|| {
                    CliError::validation("mine.top_k missing and no training cycles to default from")
                })?,
        };
        let plan = self.mining_plan()?;
        let query_view = match &plan.schedule {
            ViewSchedule::Explicit(s) => s.last().expect("validated nonempty").clone(),
            ViewSchedule::Alternating => {
                // Alternating needs an anchor; use the last cycle's train
                // view, matching how training resolved it.
                self.config
                    .training
                    .as_ref()
                    .and_then(|t| t.cycles.last())
                    .map(|c| view_id(&c.train_view))
                    .transpose()?
                    .ok_or_else(|| {
                        CliError::validation(
                            "alternating mine schedule needs [training] cycles for the anchor view",
                        )
                    })?
            }
        };
        let cascade = plan
            .resolve(views, &query_view, top_k)
            .map_err(CliError::from)?;
        Ok((m.query.clone(), cascade))
    }

    /// Expands the sweep grid. Without a [sweep] section this is one run
    /// in the output directory itself.
    pub fn expand_sweep(&self) -> Result<Vec<SweepRun>, CliError> {
        let base_cascade = self.config.cascade.as_ref();
        let Some(sweep) = &self.config.sweep else {
            return Ok(vec![SweepRun {
                dir: self.out_dir.clone(),
                resolved: self.clone(),
            }]);
        };
        let c = base_cascade
            .ok_or_else(|| CliError::validation("[sweep] needs a base [cascade] section"))?;
        let stages = if sweep.stages.is_empty() { vec![c.stages] } else { sweep.stages.clone() };
        let ratios = if sweep.selection_ratios.is_empty() {
            vec![c.selection_ratio]
        } else {
            sweep.selection_ratios.clone()
        };
        let seeds = if sweep.seeds.is_empty() { vec![self.seed] } else { sweep.seeds.clone() };

        let mut runs = Vec::new();
        for &n in &stages {
            for &r in &ratios {
                for &s in &seeds {
                    let mut cfg = self.config.clone();
                    cfg.sweep = None;
                    cfg.seed = Some(s);
                    if let Some(cas) = cfg.cascade.as_mut() {
                        cas.stages = n;
                        cas.selection_ratio = r;
                    }
                    let dir = self.out_dir.join(format!("s{n}_r{r}_seed{s}"));
                    cfg.out_dir = Some(dir.clone());
                    runs.push(SweepRun {
                        dir: dir.clone(),
                        resolved: ResolvedConfig {
                            seed: s,
                            out_dir: dir,
                            config: cfg,
                        },
                    });
                }
            }
        }
        Ok(runs)
    }
}

pub struct SweepRun {
    pub dir: PathBuf,
    pub resolved: ResolvedConfig,
}

pub fn view_id(name: &str) -> Result<ViewId, CliError> {
    ViewId::new(name).map_err(CliError::from)
}
