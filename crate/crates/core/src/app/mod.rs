//! Commands binding the modules into reproducible runs.
//!
//! Every command reads a [`RunConfig`], writes its artifacts into the output
//! directory, and records a [`RunManifest`] next to them. All model traffic
//! goes through gateways sharing one on-disk response cache, so repeating a
//! command with unchanged inputs makes no model calls and rewrites identical
//! bytes.

mod config;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::eval::{self, EvalError, RunSummary};
use crate::gateway::{
    Backend, CallRecord, FileCache, Gateway, GatewayError, HttpBackend, HttpConfig, InFlightCap, ResponseCache,
    ScriptedBackend, Throttle, Transcript,
};
use crate::hierarchy::{classify_hierarchical_batch, HierarchicalOutcome, HierarchyError};
use crate::imaging::{ImagePatch, ImagingError, Manifest};
use crate::pipeline::{
    describe_patch, from_jsonl, patch_image, to_jsonl, Backends, Description, PipelineError, PredictionRecord,
};
use crate::taxonomy::{
    build_hierarchy, class_set, deserialize_taxonomy, serialize_taxonomy, ClassLabel, ClusterSpec, Taxonomy,
    TaxonomyError,
};
use crate::exec;

pub use config::{BackendSpec, BackendsConfig, ClusterSection, ConfigError, EvaluateSection, Limits, Role, RunConfig};

pub const DESCRIPTIONS_FILE: &str = "descriptions.jsonl";
pub const PREDICTIONS_FILE: &str = "predictions.jsonl";
pub const HIERARCHICAL_FILE: &str = "hierarchical.jsonl";
pub const TAXONOMY_FILE: &str = "taxonomy.json";
pub const REPORT_DIR: &str = "report";

#[derive(Debug, thiserror::Error)]
pub enum AppError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Imaging(#[from] ImagingError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Hierarchy(#[from] HierarchyError),
    #[error(transparent)]
    Taxonomy(#[from] TaxonomyError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}, line {line}: {message}")]
    Record { path: String, line: usize, message: String },
    #[error("{0}: nothing to evaluate (no {PREDICTIONS_FILE} or {HIERARCHICAL_FILE})")]
    NothingToEvaluate(String),
}

impl AppError {
    /// Transport-level exhaustion of a model backend.
    pub fn is_exhaustion(&self) -> bool {
        match self {
            AppError::Pipeline(e) => e.is_exhaustion(),
            AppError::Hierarchy(e) => e.is_exhaustion(),
            AppError::Taxonomy(TaxonomyError::Backend(e)) | AppError::Gateway(e) => e.is_exhaustion(),
            _ => false,
        }
    }

    /// 2 for configuration errors, 3 for backend exhaustion, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Config(_) => 2,
            e if e.is_exhaustion() => 3,
            _ => 1,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> AppError + '_ {
    move |source| AppError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Identity of the settings that shaped a run, used for comparison tables.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunInfo {
    pub vision_model: String,
    pub classifier: String,
    pub embedder: String,
    pub include_classes: bool,
    pub include_geo_context: bool,
    pub hierarchical: bool,
}

/// What a command did: enough to replay a scripted run and check its outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_digest: String,
    pub seed: u64,
    pub run: RunInfo,
    /// Role to backend identity (scripted ids embed the transcript digest).
    pub backends: BTreeMap<String, String>,
    /// Calls that reached a backend, cache hits excluded.
    pub backend_calls: u64,
    /// Role to call log, sorted by fingerprint.
    pub calls: BTreeMap<String, Vec<CallRecord>>,
    /// Output file name to SHA-256 of its bytes.
    pub outputs: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn file_name(command: &str) -> String {
        format!("{command}.manifest.json")
    }

    pub fn load(path: &Path) -> Result<Self, AppError> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        serde_json::from_str(&text).map_err(|e| AppError::Record {
            path: path.display().to_string(),
            line: e.line(),
            message: e.to_string(),
        })
    }
}

/// Result of one command, for callers that want more than the files.
#[derive(Clone, Debug)]
pub struct CommandOutput {
    pub outputs: Vec<PathBuf>,
    pub manifest_path: PathBuf,
    pub manifest: RunManifest,
    pub records: usize,
}

fn run_info(cfg: &RunConfig, hierarchical: bool) -> RunInfo {
    let p = &cfg.pipeline;
    RunInfo {
        vision_model: p.describer_model.clone(),
        classifier: p.classifier_model.clone(),
        embedder: p.embedder_model.clone(),
        include_classes: p.prompt.include_classes,
        include_geo_context: p.prompt.include_geo_context,
        hierarchical,
    }
}

/// Gateways for the roles a command needs, all sharing one cache and one
/// in-flight cap.
struct Gateways {
    by_role: BTreeMap<Role, Gateway>,
}

impl Gateways {
    fn open(cfg: &RunConfig, roles: &[Role]) -> Result<Self, AppError> {
        let cache_dir = cfg.cache_dir();
        let cache: Arc<dyn ResponseCache> = Arc::new(FileCache::new(&cache_dir).map_err(io_err(&cache_dir))?);
        let in_flight = cfg.limits.max_in_flight.map(InFlightCap::new);
        let mut transcripts: BTreeMap<PathBuf, Transcript> = BTreeMap::new();
        let mut by_role = BTreeMap::new();
        for &role in roles {
            let (spec, field) = cfg.backends.for_role(role)?;
            let backend: Arc<dyn Backend> = match spec {
                BackendSpec::Scripted { transcript } => {
                    let path = cfg.resolve(transcript);
                    if !transcripts.contains_key(&path) {
                        let t = Transcript::load(&path).map_err(|e| {
                            ConfigError::new(format!("{field}.transcript"), format!("{}: {e}", path.display()))
                        })?;
                        transcripts.insert(path.clone(), t);
                    }
                    Arc::new(ScriptedBackend::new(transcripts[&path].clone()))
                }
                BackendSpec::Openai { base_url, timeout_secs } => {
                    if base_url.trim().is_empty() {
                        return Err(ConfigError::new(format!("{field}.base_url"), "must not be empty").into());
                    }
                    let mut http = HttpConfig::new(base_url.clone());
                    http.timeout_secs = *timeout_secs;
                    Arc::new(HttpBackend::new(http))
                }
            };
            let gateway = Gateway::new(backend)
                .with_retry(cfg.limits.retry)
                .with_throttle(Throttle::new(cfg.limits.requests_per_second, in_flight.clone()))
                .with_cache(cache.clone());
            by_role.insert(role, gateway);
        }
        Ok(Self { by_role })
    }

    fn get(&self, role: Role) -> &Gateway {
        &self.by_role[&role]
    }

    fn backends(&self) -> Backends<'_> {
        Backends {
            describer: self.get(Role::Describer),
            classifier: self.get(Role::Classifier),
            embedder: self.get(Role::Embedder),
        }
    }

    fn backend_calls(&self) -> u64 {
        self.by_role.values().map(Gateway::backend_calls).sum()
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes the artifacts and the manifest describing them.
fn finish(
    cfg: &RunConfig,
    command: &str,
    hierarchical: bool,
    gateways: Option<&Gateways>,
    files: Vec<(PathBuf, Vec<u8>)>,
    records: usize,
) -> Result<CommandOutput, AppError> {
    let out_dir = cfg.out_dir();
    let mut outputs = Vec::new();
    let mut digests = BTreeMap::new();
    for (path, bytes) in files {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(io_err(parent))?;
        }
        std::fs::write(&path, &bytes).map_err(io_err(&path))?;
        let name = path.strip_prefix(&out_dir).unwrap_or(&path).display().to_string();
        digests.insert(name, sha256_hex(&bytes));
        outputs.push(path);
    }
    let mut backends = BTreeMap::new();
    let mut calls = BTreeMap::new();
    if let Some(g) = gateways {
        for (role, gw) in &g.by_role {
            backends.insert(role.as_str().to_owned(), gw.backend_id());
            calls.insert(role.as_str().to_owned(), gw.call_log());
        }
    }
    let manifest = RunManifest {
        command: command.to_owned(),
        config_digest: cfg.digest(),
        seed: cfg.seed,
        run: run_info(cfg, hierarchical),
        backends,
        backend_calls: gateways.map_or(0, Gateways::backend_calls),
        calls,
        outputs: digests,
    };
    std::fs::create_dir_all(&out_dir).map_err(io_err(&out_dir))?;
    let manifest_path = out_dir.join(RunManifest::file_name(command));
    let mut body = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    body.push('\n');
    std::fs::write(&manifest_path, body).map_err(io_err(&manifest_path))?;
    log::info!(
        "{command}: {records} records, {} backend calls, outputs in {}",
        manifest.backend_calls,
        out_dir.display()
    );
    Ok(CommandOutput {
        outputs,
        manifest_path,
        manifest,
        records,
    })
}

fn load_taxonomy(cfg: &RunConfig) -> Result<Option<Taxonomy>, AppError> {
    let Some(rel) = &cfg.taxonomy else {
        return Ok(None);
    };
    let path = cfg.resolve(rel);
    let text = std::fs::read_to_string(&path)
        .map_err(|e| ConfigError::new("taxonomy", format!("{}: {e}", path.display())))?;
    let taxonomy =
        deserialize_taxonomy(&text).map_err(|e| ConfigError::new("taxonomy", format!("{}: {e}", path.display())))?;
    Ok(Some(taxonomy))
}

/// The flat class list: `classes`, or the leaves of `taxonomy`.
pub fn active_classes(cfg: &RunConfig) -> Result<Vec<ClassLabel>, AppError> {
    if let Some(classes) = &cfg.classes {
        return class_set(classes).map_err(|e| ConfigError::new("classes", e.to_string()).into());
    }
    let taxonomy = load_taxonomy(cfg)?.expect("validated: classes or taxonomy");
    Ok(taxonomy.leaves().into_iter().cloned().collect())
}

/// Loads the selected scene version of every scene and tiles it.
pub fn load_patches(cfg: &RunConfig) -> Result<Vec<ImagePatch>, AppError> {
    let rel = cfg
        .manifest
        .as_ref()
        .ok_or_else(|| ConfigError::new("manifest", "required by this command"))?;
    let path = cfg.resolve(rel);
    let manifest = Manifest::load(&path).map_err(|e| ConfigError::new("manifest", e.to_string()))?;
    let rows = manifest.select(cfg.split.as_deref(), cfg.seed);
    let grid = (cfg.grid[0], cfg.grid[1]);
    let per_scene = exec::try_map(&rows, |row| manifest.load_patches(row, grid))?;
    Ok(per_scene.into_iter().flatten().collect())
}

fn workers<R: Send>(cfg: &RunConfig, f: impl FnOnce() -> R + Send) -> R {
    exec::with_workers(cfg.limits.workers, f)
}

/// Describes every patch into `descriptions.jsonl`. Patches whose describer
/// answers stay empty are logged and left out.
pub fn cmd_describe(cfg: &RunConfig) -> Result<CommandOutput, AppError> {
    let classes = active_classes(cfg)?;
    let patches = load_patches(cfg)?;
    let gateways = Gateways::open(cfg, &[Role::Describer])?;
    let describer = gateways.get(Role::Describer);
    let described: Vec<Option<Description>> = workers(cfg, || {
        exec::try_map(&patches, |p| describe_patch(p, &patch_image(p), &classes, &cfg.pipeline, describer))
    })?;
    let records: Vec<Description> = described
        .into_iter()
        .zip(&patches)
        .filter_map(|(d, p)| {
            if d.is_none() {
                log::warn!("{}: describer returned nothing", p.id());
            }
            d
        })
        .collect();
    let body = to_jsonl(&records);
    let path = cfg.out_dir().join(DESCRIPTIONS_FILE);
    finish(cfg, "describe", false, Some(&gateways), vec![(path, body.into_bytes())], records.len())
}

/// Flat classification into `predictions.jsonl`.
pub fn cmd_classify(cfg: &RunConfig) -> Result<CommandOutput, AppError> {
    let classes = active_classes(cfg)?;
    let patches = load_patches(cfg)?;
    let gateways = Gateways::open(cfg, &[Role::Describer, Role::Classifier, Role::Embedder])?;
    let outcomes = workers(cfg, || {
        crate::pipeline::classify_patches(&patches, &classes, &cfg.pipeline, gateways.backends())
    })?;
    let records: Vec<PredictionRecord> = patches
        .iter()
        .zip(&outcomes)
        .map(|(p, o)| PredictionRecord::new(p, o))
        .collect();
    let body = to_jsonl(&records);
    let path = cfg.out_dir().join(PREDICTIONS_FILE);
    finish(cfg, "classify", false, Some(&gateways), vec![(path, body.into_bytes())], records.len())
}

/// Builds a taxonomy from `classes` following `cluster.sizes` (or `spec`
/// when given) and writes `taxonomy.json`.
pub fn cmd_cluster(cfg: &RunConfig, spec: Option<&ClusterSpec>) -> Result<CommandOutput, AppError> {
    let classes = match &cfg.classes {
        Some(_) => active_classes(cfg)?,
        None => return Err(ConfigError::new("classes", "clustering needs a flat class list").into()),
    };
    let spec = match spec {
        Some(s) => s.clone(),
        None => ClusterSpec::new(cfg.cluster.sizes.clone()).map_err(|e| ConfigError::new("cluster.sizes", e.to_string()))?,
    };
    let gateways = Gateways::open(cfg, &[Role::Clusterer])?;
    let taxonomy = workers(cfg, || {
        build_hierarchy(&classes, &spec, gateways.get(Role::Clusterer), &cfg.cluster.settings)
    })?;
    let body = serialize_taxonomy(&taxonomy);
    let path = cfg.out_dir().join(TAXONOMY_FILE);
    finish(cfg, "cluster", true, Some(&gateways), vec![(path, body.into_bytes())], taxonomy.leaves().len())
}

/// Routed classification over `taxonomy` into `hierarchical.jsonl`.
pub fn cmd_run_hierarchical(cfg: &RunConfig) -> Result<CommandOutput, AppError> {
    let taxonomy = load_taxonomy(cfg)?
        .ok_or_else(|| ConfigError::new("taxonomy", "hierarchical runs need a taxonomy file"))?;
    let patches = load_patches(cfg)?;
    let gateways = Gateways::open(cfg, &[Role::Describer, Role::Classifier, Role::Embedder])?;
    let outcomes = workers(cfg, || {
        classify_hierarchical_batch(&patches, &taxonomy, &cfg.pipeline, gateways.backends())
    })?;
    let body = to_jsonl(&outcomes);
    let path = cfg.out_dir().join(HIERARCHICAL_FILE);
    finish(cfg, "run-hier", true, Some(&gateways), vec![(path, body.into_bytes())], outcomes.len())
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, AppError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    from_jsonl(&text).map_err(|(line, e)| AppError::Record {
        path: path.display().to_string(),
        line,
        message: e.to_string(),
    })
}

fn csv_bytes(rows: &[Vec<String>]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.write_record(row).expect("writing to memory");
    }
    w.into_inner().expect("writing to memory")
}

fn report_files(report: &eval::EvaluationReport, dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    vec![
        (dir.join("oa_summary.csv"), csv_bytes(&eval::oa_summary_rows(report))),
        (dir.join("confusion.csv"), csv_bytes(&eval::confusion_rows(&report.confusion))),
    ]
}

fn info_for(run_dir: &Path, command: &str, fallback: &RunInfo) -> RunInfo {
    let path = run_dir.join(RunManifest::file_name(command));
    match RunManifest::load(&path) {
        Ok(m) => m.run,
        Err(e) => {
            log::warn!("{e}; labelling the run with the current config");
            fallback.clone()
        }
    }
}

/// Scores the predictions found in each run directory and writes reports
/// under `<out_dir>/report/`, plus `comparison.csv` across runs.
pub fn cmd_evaluate(cfg: &RunConfig) -> Result<CommandOutput, AppError> {
    let out_dir = cfg.out_dir();
    let runs: Vec<PathBuf> = if cfg.evaluate.runs.is_empty() {
        vec![out_dir.clone()]
    } else {
        cfg.evaluate.runs.iter().map(|r| cfg.resolve(r)).collect()
    };
    let report_root = out_dir.join(REPORT_DIR);
    let mut files = Vec::new();
    let mut summaries = Vec::new();
    let mut scored = 0;
    for (i, run_dir) in runs.iter().enumerate() {
        let target = if runs.len() == 1 {
            report_root.clone()
        } else {
            let name = run_dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            report_root.join(format!("{i:02}_{name}"))
        };
        let mut found = false;

        let flat_path = run_dir.join(PREDICTIONS_FILE);
        if flat_path.exists() {
            found = true;
            let records: Vec<PredictionRecord> = read_jsonl(&flat_path)?;
            let classes = active_classes(cfg)?;
            let pairs = records
                .iter()
                .enumerate()
                .map(|(index, r)| {
                    r.truth
                        .as_deref()
                        .map(|t| (t, r.label.as_str()))
                        .ok_or(EvalError::MissingTruth { index })
                })
                .collect::<Result<Vec<_>, _>>()?;
            let mut report = eval::score(&pairs, &classes)?;
            report.run_manifest = Some(run_dir.join(RunManifest::file_name("classify")).display().to_string());
            files.extend(report_files(&report, &target.join("flat")));
            let info = info_for(run_dir, "classify", &run_info(cfg, false));
            summaries.push(RunSummary {
                vision_model: info.vision_model,
                classifier: info.classifier,
                include_classes: info.include_classes,
                include_geo_context: info.include_geo_context,
                depth: None,
                accuracy: report.overall,
            });
            scored += records.len();
        }

        let hier_path = run_dir.join(HIERARCHICAL_FILE);
        if hier_path.exists() {
            found = true;
            let outcomes: Vec<HierarchicalOutcome> = read_jsonl(&hier_path)?;
            let taxonomy = load_taxonomy(cfg)?
                .ok_or_else(|| ConfigError::new("taxonomy", "scoring hierarchical runs needs the taxonomy"))?;
            let mut report = eval::hierarchical_report(&outcomes, &taxonomy)?;
            report.run_manifest = Some(run_dir.join(RunManifest::file_name("run-hier")).display().to_string());
            files.extend(report_files(&report, &target.join("hier")));
            let info = info_for(run_dir, "run-hier", &run_info(cfg, true));
            for (d, accuracy) in report.per_depth.iter().flatten().enumerate() {
                summaries.push(RunSummary {
                    vision_model: info.vision_model.clone(),
                    classifier: info.classifier.clone(),
                    include_classes: info.include_classes,
                    include_geo_context: info.include_geo_context,
                    depth: Some(d),
                    accuracy: *accuracy,
                });
            }
            scored += outcomes.len();
        }

        if !found {
            return Err(AppError::NothingToEvaluate(run_dir.display().to_string()));
        }
    }
    files.push((report_root.join("comparison.csv"), csv_bytes(&eval::comparison_rows(&summaries))));
    finish(cfg, "evaluate", false, None, files, scored)
}
