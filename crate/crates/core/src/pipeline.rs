//! End-to-end runs: ingest → forge → pseudo-label → render → filter → split.
//!
//! Every stage reads its inputs from the run directory and writes its outputs
//! there, so stages run standalone or in sequence with the same results.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::{Path, PathBuf};

use crate::corpus::{InstructionRecord, RawSample, TaskSpec};
use crate::forge::{self, Catalog, TransformPlan};
use crate::ingest::{self, DatasetManifest, Registry};
use crate::ndjson;
use crate::pseudo::{self, ClientConfig, PseudoCache};
use crate::quality::{self, FilterPolicy, HeuristicJudge};
use crate::render;
use crate::seed;
use crate::split::{self, DEFAULT_TEST_CAP, DEFAULT_TRAIN_CAP};
use crate::stats::TaskCatalogFile;

pub const INGEST_SAMPLES: &str = "01_ingest/samples.jsonl";
pub const INGEST_DIAGNOSTICS: &str = "01_ingest/diagnostics.jsonl";
pub const FORGE_SAMPLES: &str = "02_forge/samples.jsonl";
pub const FORGE_PLAN: &str = "02_forge/plan.toml";
pub const FORGE_DIAGNOSTICS: &str = "02_forge/diagnostics.jsonl";
pub const PSEUDO_SAMPLES: &str = "03_pseudo/samples.jsonl";
pub const PSEUDO_DIAGNOSTICS: &str = "03_pseudo/diagnostics.jsonl";
pub const RENDER_RECORDS: &str = "04_render/records.jsonl";
pub const TASKS_FILE: &str = "04_render/tasks.toml";
pub const FILTER_RECORDS: &str = "05_filter/records.jsonl";
pub const FILTER_VERDICTS: &str = "05_filter/verdicts.jsonl";
pub const FILTER_FLAGGED: &str = "05_filter/flagged.jsonl";
pub const REVIEW_MANIFEST: &str = "05_filter/review_manifest.jsonl";
pub const TRAIN_FILE: &str = "06_split/train.jsonl";
pub const TEST_FILE: &str = "06_split/test.jsonl";
pub const SPLIT_MANIFEST: &str = "06_split/split_manifest.toml";
pub const RUN_MANIFEST: &str = "run_manifest.toml";

pub const STAGES: [&str; 6] = ["ingest", "forge", "pseudo_label", "render", "filter", "split"];

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("config error: {0}")]
    Config(String),
    #[error("stage {stage} failed: {message}")]
    Stage { stage: &'static str, message: String },
}

impl PipelineError {
    /// 2 for configuration errors, 1 for stage failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::Stage { .. } => 1,
        }
    }
}

fn stage_err(stage: &'static str) -> impl Fn(String) -> PipelineError {
    move |message| PipelineError::Stage { stage, message }
}

fn default_workers() -> usize {
    4
}
fn default_train_cap() -> usize {
    DEFAULT_TRAIN_CAP
}
fn default_test_cap() -> usize {
    DEFAULT_TEST_CAP
}
fn default_review() -> usize {
    20
}

/// The run configuration document. Relative paths resolve against the
/// config file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    /// Dataset manifest document.
    pub datasets: PathBuf,
    /// Documents of `[[task]]` specs for the source datasets.
    #[serde(default)]
    pub task_specs: Vec<PathBuf>,
    /// Atomic-task catalog; the built-in one when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub catalog: Option<PathBuf>,
    #[serde(default)]
    pub test_tasks: Vec<String>,
    #[serde(default = "default_train_cap")]
    pub train_cap: usize,
    #[serde(default = "default_test_cap")]
    pub test_cap: usize,
    /// Records per dataset in the manual review manifest.
    #[serde(default = "default_review")]
    pub review_per_dataset: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pseudo_cache: Option<PathBuf>,
    #[serde(default)]
    pub filter: FilterPolicy,
    #[serde(default)]
    pub judge: HeuristicJudge,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pseudo: Option<ClientConfig>,
}

#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub out: Option<PathBuf>,
    pub pseudo_cache: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    /// SHA-256 of the effective config, output locations and worker count excluded.
    pub config_hash: String,
    #[serde(with = "crate::seed::decimal")]
    pub seed: u64,
    /// Decimal strings.
    pub stage_seeds: BTreeMap<String, String>,
    #[serde(default)]
    pub counts: BTreeMap<String, BTreeMap<String, u64>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
struct Diagnostic<'a> {
    dataset_id: &'a str,
    line: usize,
    severity: &'a str,
    message: &'a str,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
struct PlanFile {
    #[serde(default)]
    plan: Vec<TransformPlan>,
}

/// Reads a `[[task]]` document.
pub fn read_task_file(path: &Path) -> Result<Vec<TaskSpec>, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let f: TaskCatalogFile = toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(f.tasks)
}

/// Task specs keyed by task id.
pub fn task_map(specs: Vec<TaskSpec>) -> BTreeMap<String, TaskSpec> {
    specs.into_iter().map(|s| (s.task_id.clone(), s)).collect()
}

fn write_ndjson<T: Serialize>(dir: &Path, rel: &str, items: &[T], stage: &'static str) -> Result<(), PipelineError> {
    ndjson::write_file(&dir.join(rel), items).map_err(|e| stage_err(stage)(format!("{rel}: {e}")))
}

fn read_ndjson<T: serde::de::DeserializeOwned>(dir: &Path, rel: &str, stage: &'static str) -> Result<Vec<T>, PipelineError> {
    ndjson::read_file(&dir.join(rel)).map_err(|e| stage_err(stage)(format!("missing or unreadable input: {e}")))
}

fn write_toml<T: Serialize>(dir: &Path, rel: &str, value: &T, stage: &'static str) -> Result<(), PipelineError> {
    let path = dir.join(rel);
    let text = toml::to_string(value).map_err(|e| stage_err(stage)(format!("{rel}: {e}")))?;
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| stage_err(stage)(format!("{rel}: {e}")))?;
    }
    std::fs::write(&path, text).map_err(|e| stage_err(stage)(format!("{rel}: {e}")))
}

/// A prepared run: config parsed and every input validated.
pub struct Run {
    pub config: RunConfig,
    pub out: PathBuf,
    manifests: Vec<DatasetManifest>,
    registry: Registry,
    source_specs: Vec<TaskSpec>,
    catalog: Catalog,
    config_hash: String,
    pool: rayon::ThreadPool,
}

impl Run {
    /// Parses and validates the config and all referenced inputs. Nothing is
    /// written; every problem here is a configuration error.
    pub fn prepare(config_path: &Path, overrides: &Overrides) -> Result<Run, PipelineError> {
        let cfg_err = |m: String| PipelineError::Config(m);
        let text = std::fs::read_to_string(config_path)
            .map_err(|e| cfg_err(format!("cannot read {}: {e}", config_path.display())))?;
        let mut config: RunConfig =
            toml::from_str(&text).map_err(|e| cfg_err(format!("{}: {e}", config_path.display())))?;
        let base = config_path.parent().unwrap_or(Path::new(".")).to_path_buf();
        if let Some(s) = overrides.seed {
            config.seed = s;
        }
        if let Some(w) = overrides.workers {
            config.workers = w;
        }
        let out = match (&overrides.out, &config.out) {
            (Some(o), _) => o.clone(),
            (None, Some(o)) => base.join(o),
            (None, None) => return Err(cfg_err("no output directory: set `out` or pass --out".into())),
        };
        if let Some(c) = &overrides.pseudo_cache {
            config.pseudo_cache = Some(c.clone());
        } else if let Some(c) = &config.pseudo_cache {
            config.pseudo_cache = Some(base.join(c));
        }
        if config.workers == 0 {
            return Err(cfg_err("workers must be at least 1".into()));
        }
        if config.train_cap == 0 || config.test_cap == 0 {
            return Err(cfg_err("train_cap and test_cap must be positive".into()));
        }
        config.filter.validate().map_err(cfg_err)?;

        let mut hashed = config.clone();
        hashed.out = None;
        hashed.pseudo_cache = None;
        hashed.workers = 0;
        let config_hash = hex::encode(Sha256::digest(
            serde_json::to_string(&hashed).expect("config serializes").as_bytes(),
        ));

        let manifests = ingest::read_manifest_file(&base.join(&config.datasets)).map_err(|e| cfg_err(e.to_string()))?;
        let mut registry = Registry::new();
        for m in &manifests {
            if !m.source.is_file() {
                return Err(cfg_err(format!(
                    "dataset {}: source file {} not found",
                    m.dataset_id,
                    m.source.display()
                )));
            }
            registry.register_dataset(m.clone()).map_err(|e| cfg_err(e.to_string()))?;
        }
        let dataset_ids: BTreeSet<&str> = manifests.iter().map(|m| m.dataset_id.as_str()).collect();

        let mut source_specs = Vec::new();
        for p in &config.task_specs {
            source_specs.extend(read_task_file(&base.join(p)).map_err(cfg_err)?);
        }
        let mut task_ids = HashSet::new();
        for s in &source_specs {
            let problems = s.validate();
            if !problems.is_empty() {
                return Err(cfg_err(format!("task {}: {}", s.task_id, problems.join("; "))));
            }
            if !dataset_ids.contains(s.dataset_id.as_str()) {
                return Err(cfg_err(format!("task {}: unknown dataset {:?}", s.task_id, s.dataset_id)));
            }
            if !task_ids.insert(s.task_id.clone()) {
                return Err(cfg_err(format!("duplicate task id {:?}", s.task_id)));
            }
        }
        for t in &config.test_tasks {
            if !task_ids.contains(t) {
                return Err(cfg_err(format!("test task {t:?} is not a configured source task")));
            }
        }

        let catalog = match &config.catalog {
            Some(p) => {
                let path = base.join(p);
                let text = std::fs::read_to_string(&path).map_err(|e| cfg_err(format!("{}: {e}", path.display())))?;
                Catalog::from_toml(&text).map_err(|e| cfg_err(e.to_string()))?
            }
            None => Catalog::builtin(),
        };

        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.workers)
            .build()
            .map_err(|e| cfg_err(e.to_string()))?;
        let run = Run {
            config,
            out,
            manifests,
            registry,
            source_specs,
            catalog,
            config_hash,
            pool,
        };

        let mut needs_pseudo = false;
        for m in run.forgeable() {
            for spec in forge::derived_specs(m, &run.catalog) {
                if !task_ids.insert(spec.task_id.clone()) {
                    return Err(cfg_err(format!("derived task id {:?} collides with another task", spec.task_id)));
                }
            }
            needs_pseudo |= forge::plan_atomic_tasks(m, &run.catalog).contains(forge::PSEUDO_LABEL);
        }
        if needs_pseudo {
            if let Some(p) = &run.config.pseudo {
                p.validate().map_err(|e| cfg_err(e.to_string()))?;
                p.credential().map_err(|e| cfg_err(e.to_string()))?;
            }
        }
        Ok(run)
    }

    pub fn stage_seed(&self, stage: &str) -> u64 {
        seed::derive(self.config.seed, stage)
    }

    fn test_datasets(&self) -> BTreeSet<&str> {
        let tests: BTreeSet<&str> = self.config.test_tasks.iter().map(String::as_str).collect();
        self.source_specs
            .iter()
            .filter(|s| tests.contains(s.task_id.as_str()))
            .map(|s| s.dataset_id.as_str())
            .collect()
    }

    /// Datasets whose atomic tasks are derived: all but those feeding a test task.
    fn forgeable(&self) -> impl Iterator<Item = &DatasetManifest> {
        let tests = self.test_datasets();
        self.manifests
            .iter()
            .filter(move |m| !tests.contains(m.dataset_id.as_str()))
    }

    /// Source specs followed by derived specs, sorted by task id.
    pub fn all_specs(&self) -> Vec<TaskSpec> {
        let mut specs = self.source_specs.clone();
        for m in self.forgeable() {
            specs.extend(forge::derived_specs(m, &self.catalog));
        }
        specs.sort_by(|a, b| a.task_id.cmp(&b.task_id));
        specs
    }

    fn record_counts(&self, stage: &str, counts: &[(&str, usize)]) -> Result<(), PipelineError> {
        let path = self.out.join(RUN_MANIFEST);
        let mut manifest = std::fs::read_to_string(&path)
            .ok()
            .and_then(|t| toml::from_str::<RunManifest>(&t).ok())
            .filter(|m| m.config_hash == self.config_hash)
            .unwrap_or_default();
        manifest.config_hash = self.config_hash.clone();
        manifest.seed = self.config.seed;
        manifest.stage_seeds = STAGES.iter().map(|s| (s.to_string(), self.stage_seed(s).to_string())).collect();
        manifest.counts.insert(
            stage.to_string(),
            counts.iter().map(|(k, v)| (k.to_string(), *v as u64)).collect(),
        );
        let stage_name: &'static str = STAGES.iter().find(|s| **s == stage).copied().unwrap_or("manifest");
        write_toml(&self.out, RUN_MANIFEST, &manifest, stage_name)
    }

    pub fn ingest(&self) -> Result<(), PipelineError> {
        const STAGE: &str = "ingest";
        let mut samples = Vec::new();
        let mut rows = Vec::new();
        for handle in self.registry.handles() {
            let outcome = self.registry.load_samples(&handle).map_err(|e| stage_err(STAGE)(e.to_string()))?;
            for (severity, list) in [("error", &outcome.errors), ("warning", &outcome.warnings)] {
                for d in list {
                    rows.push((d.dataset_id.clone(), d.line, severity, d.message.clone()));
                }
            }
            log::info!("ingest {}: {} samples, {} rejected lines", handle.id(), outcome.samples.len(), outcome.errors.len());
            samples.extend(outcome.samples);
        }
        rows.sort_by(|a, b| (&a.0, a.1).cmp(&(&b.0, b.1)));
        let diags: Vec<Diagnostic> = rows
            .iter()
            .map(|(d, l, s, m)| Diagnostic {
                dataset_id: d,
                line: *l,
                severity: s,
                message: m,
            })
            .collect();
        write_ndjson(&self.out, INGEST_SAMPLES, &samples, STAGE)?;
        write_ndjson(&self.out, INGEST_DIAGNOSTICS, &diags, STAGE)?;
        let errors = rows.iter().filter(|r| r.2 == "error").count();
        self.record_counts(
            STAGE,
            &[("samples", samples.len()), ("errors", errors), ("warnings", rows.len() - errors)],
        )
    }

    fn by_dataset(samples: &[RawSample]) -> BTreeMap<&str, Vec<RawSample>> {
        let mut out: BTreeMap<&str, Vec<RawSample>> = BTreeMap::new();
        for s in samples {
            out.entry(s.dataset_id.as_str()).or_default().push(s.clone());
        }
        out
    }

    pub fn forge(&self) -> Result<(), PipelineError> {
        const STAGE: &str = "forge";
        let source: Vec<RawSample> = read_ndjson(&self.out, INGEST_SAMPLES, STAGE)?;
        let grouped = Self::by_dataset(&source);
        let seed_value = self.stage_seed(STAGE);
        let mut plans = Vec::new();
        let mut derived = Vec::new();
        let mut diagnostics = Vec::new();
        for m in self.forgeable() {
            let plan = forge::plan_atomic_tasks(m, &self.catalog);
            let samples = grouped.get(m.dataset_id.as_str()).map(Vec::as_slice).unwrap_or(&[]);
            let mut outcome = forge::apply_plan(&plan, samples, seed::derive(seed_value, &m.dataset_id));
            derived.append(&mut outcome.samples);
            diagnostics.append(&mut outcome.diagnostics);
            plans.push(plan);
        }
        write_toml(&self.out, FORGE_PLAN, &PlanFile { plan: plans }, STAGE)?;
        write_ndjson(&self.out, FORGE_SAMPLES, &derived, STAGE)?;
        write_ndjson(&self.out, FORGE_DIAGNOSTICS, &diagnostics, STAGE)?;
        log::info!("forge: {} derived samples", derived.len());
        self.record_counts(STAGE, &[("derived", derived.len()), ("diagnostics", diagnostics.len())])
    }

    pub fn pseudo_label(&self) -> Result<(), PipelineError> {
        const STAGE: &str = "pseudo_label";
        let fail = stage_err(STAGE);
        let source: Vec<RawSample> = read_ndjson(&self.out, INGEST_SAMPLES, STAGE)?;
        let plan_text =
            std::fs::read_to_string(self.out.join(FORGE_PLAN)).map_err(|e| fail(format!("{FORGE_PLAN}: {e}")))?;
        let plans: PlanFile = toml::from_str(&plan_text).map_err(|e| fail(format!("{FORGE_PLAN}: {e}")))?;
        let grouped = Self::by_dataset(&source);
        let specs = task_map(self.all_specs());

        let mut labelled = Vec::new();
        let mut diagnostics = Vec::new();
        let mut stats = pseudo::PseudoStats::default();
        let steps: Vec<_> = plans
            .plan
            .iter()
            .flat_map(|p| p.steps.iter().map(move |s| (p.dataset_id.as_str(), s)))
            .filter(|(_, s)| s.transform == forge::PSEUDO_LABEL)
            .collect();
        match (&self.config.pseudo, steps.is_empty()) {
            (_, true) => {}
            (None, false) => diagnostics.push(format!(
                "no pseudo-label service configured; {} steps skipped",
                steps.len()
            )),
            (Some(client), false) => {
                let client = ClientConfig {
                    max_concurrent: client.max_concurrent.min(self.config.workers),
                    ..client.clone()
                };
                let transport = pseudo::transport_for(&client).map_err(|e| fail(e.to_string()))?;
                let mut cache = match &self.config.pseudo_cache {
                    Some(p) => PseudoCache::open(p).map_err(|e| fail(e.to_string()))?,
                    None => {
                        log::warn!("no pseudo_cache configured; completions are not persisted");
                        PseudoCache::in_memory()
                    }
                };
                let clock = pseudo::SystemClock::default();
                for (dataset_id, step) in steps {
                    let spec = specs
                        .get(&step.task_id)
                        .ok_or_else(|| fail(format!("no spec for planned task {}", step.task_id)))?;
                    let samples = grouped.get(dataset_id).map(Vec::as_slice).unwrap_or(&[]);
                    let mut out =
                        pseudo::generate_pseudo_labels_with(samples, spec, &client, &mut cache, transport.as_ref(), &clock)
                            .map_err(|e| fail(e.to_string()))?;
                    log::info!(
                        "pseudo {}: {} labelled, {} requests, {} cache hits",
                        step.task_id,
                        out.stats.labelled,
                        out.stats.requests,
                        out.stats.cache_hits
                    );
                    stats.labelled += out.stats.labelled;
                    stats.skipped_empty += out.stats.skipped_empty;
                    stats.failed += out.stats.failed;
                    labelled.append(&mut out.samples);
                    diagnostics.append(&mut out.diagnostics);
                }
            }
        }
        write_ndjson(&self.out, PSEUDO_SAMPLES, &labelled, STAGE)?;
        write_ndjson(&self.out, PSEUDO_DIAGNOSTICS, &diagnostics, STAGE)?;
        // Request and cache-hit counts depend on cache state, so they stay out
        // of the run directory.
        self.record_counts(
            STAGE,
            &[
                ("labelled", stats.labelled),
                ("skipped_empty", stats.skipped_empty),
                ("failed", stats.failed),
            ],
        )
    }

    pub fn render(&self) -> Result<(), PipelineError> {
        const STAGE: &str = "render";
        let fail = stage_err(STAGE);
        let mut samples: Vec<RawSample> = read_ndjson(&self.out, INGEST_SAMPLES, STAGE)?;
        samples.extend(read_ndjson::<RawSample>(&self.out, FORGE_SAMPLES, STAGE)?);
        samples.extend(read_ndjson::<RawSample>(&self.out, PSEUDO_SAMPLES, STAGE)?);
        let specs = self.all_specs();
        let mut by_dataset: BTreeMap<&str, Vec<&TaskSpec>> = BTreeMap::new();
        for s in &specs {
            by_dataset.entry(s.dataset_id.as_str()).or_default().push(s);
        }
        let jobs: Vec<(&RawSample, &TaskSpec)> = samples
            .iter()
            .flat_map(|s| {
                by_dataset
                    .get(s.dataset_id.as_str())
                    .into_iter()
                    .flatten()
                    .map(move |spec| (s, *spec))
            })
            .collect();
        let seed_value = self.stage_seed(STAGE);
        let rendered: Vec<Result<InstructionRecord, render::RenderError>> = self.pool.install(|| {
            jobs.par_iter()
                .map(|(s, spec)| {
                    let k = render::choose_prompt(spec, seed::derive(seed_value, &format!("{}/{}", spec.task_id, s.id)));
                    render::render(s, spec, k)
                })
                .collect()
        });
        let records: Vec<InstructionRecord> = rendered
            .into_iter()
            .collect::<Result<_, _>>()
            .map_err(|e| fail(e.to_string()))?;
        let mut seen = HashSet::new();
        for r in &records {
            if !seen.insert(r.record_id.as_str()) {
                return Err(fail(format!("duplicate record_id {}", r.record_id)));
            }
        }
        write_ndjson(&self.out, RENDER_RECORDS, &records, STAGE)?;
        write_toml(&self.out, TASKS_FILE, &TaskCatalogFile { tasks: specs.clone() }, STAGE)?;
        log::info!("render: {} records over {} tasks", records.len(), specs.len());
        self.record_counts(STAGE, &[("records", records.len()), ("tasks", specs.len())])
    }

    pub fn filter(&self) -> Result<(), PipelineError> {
        const STAGE: &str = "filter";
        let mut records: Vec<InstructionRecord> = read_ndjson(&self.out, RENDER_RECORDS, STAGE)?;
        self.pool.install(|| records.par_iter_mut().for_each(quality::normalize_record));
        let total = records.len();
        let (kept, verdicts) = quality::rule_filter(records, &self.config.filter);
        let judged = quality::model_filter(kept, &self.config.judge);
        for (id, msg) in &judged.diagnostics {
            log::warn!("judge failed on {id}: {msg}");
        }
        let review = quality::sample_review_manifest(&judged.kept, self.config.review_per_dataset, self.stage_seed(STAGE));
        write_ndjson(&self.out, FILTER_RECORDS, &judged.kept, STAGE)?;
        write_ndjson(&self.out, FILTER_VERDICTS, &verdicts, STAGE)?;
        write_ndjson(&self.out, FILTER_FLAGGED, &judged.flagged, STAGE)?;
        write_ndjson(&self.out, REVIEW_MANIFEST, &review, STAGE)?;
        let rejected = total - judged.kept.len() - judged.flagged.len();
        log::info!("filter: kept {}, rejected {rejected}, flagged {}", judged.kept.len(), judged.flagged.len());
        self.record_counts(
            STAGE,
            &[("kept", judged.kept.len()), ("rejected", rejected), ("flagged", judged.flagged.len())],
        )
    }

    pub fn split(&self) -> Result<(), PipelineError> {
        const STAGE: &str = "split";
        let fail = stage_err(STAGE);
        let records: Vec<InstructionRecord> = read_ndjson(&self.out, FILTER_RECORDS, STAGE)?;
        let tests: BTreeSet<String> = self.config.test_tasks.iter().cloned().collect();
        let s = split::split(&records, &tests, self.config.train_cap, self.config.test_cap, self.stage_seed(STAGE))
            .map_err(|e| fail(e.to_string()))?;
        write_ndjson(&self.out, TRAIN_FILE, &s.train, STAGE)?;
        write_ndjson(&self.out, TEST_FILE, &s.test, STAGE)?;
        write_toml(&self.out, SPLIT_MANIFEST, &s.manifest, STAGE)?;
        self.record_counts(STAGE, &[("train", s.train.len()), ("test", s.test.len())])?;
        if !s.manifest.leakage.is_empty() {
            return Err(fail(format!(
                "{} training records share sources with the test set (see {SPLIT_MANIFEST})",
                s.manifest.leakage.len()
            )));
        }
        log::info!("split: {} train, {} test", s.train.len(), s.test.len());
        Ok(())
    }

    pub fn run_stage(&self, stage: &str) -> Result<(), PipelineError> {
        match stage {
            "ingest" => self.ingest(),
            "forge" => self.forge(),
            "pseudo_label" => self.pseudo_label(),
            "render" => self.render(),
            "filter" => self.filter(),
            "split" => self.split(),
            other => Err(PipelineError::Config(format!("unknown stage {other:?}"))),
        }
    }

    pub fn run_all(&self) -> Result<RunManifest, PipelineError> {
        for stage in STAGES {
            self.run_stage(stage)?;
        }
        let text = std::fs::read_to_string(self.out.join(RUN_MANIFEST))
            .map_err(|e| stage_err("split")(format!("{RUN_MANIFEST}: {e}")))?;
        toml::from_str(&text).map_err(|e| stage_err("split")(format!("{RUN_MANIFEST}: {e}")))
    }
}

/// Prepares and runs every stage.
pub fn run_pipeline(config_path: &Path, overrides: &Overrides) -> Result<RunManifest, PipelineError> {
    Run::prepare(config_path, overrides)?.run_all()
}
