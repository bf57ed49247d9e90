//! Experiment configuration, content-addressed manifests and the staged
//! pipeline: simulate, features, classify, cluster, stylized, reproduce.
//!
//! Every stage has a manifest whose hash is derived from its own parameters
//! and the hashes of its inputs. Artifacts are named by that hash, so a
//! downstream stage run in a later process finds its inputs by recomputing
//! the upstream hash from the same configuration.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::agents::Strategy;
use crate::cluster::{self, ClusterError, ClusterModel, ClusterReport, KDiagnostics, Linkage, Points};
use crate::diagnostics::{self, DiagError, StylizedReport};
use crate::eventlog::{self, EventLog, LogIoError};
use crate::features::{self, Dataset, DatasetSplit, FeatureError, FeatureWindows, MergeMap, MergeMode};
use crate::kernel::mix_seed;
use crate::scenario::{self, ConfigError, Scenario};
use crate::svm::{self, ClassificationReport, GridResult, OvoSvm, SolverOptions, SvmError, SvmHyperParams};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

const MERGE_STREAM: u64 = 0x6d65_7267_6500;
const SPLIT_STREAM: u64 = 0x7370_6c69_7400;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Scenario(#[from] ConfigError),
    #[error("missing {what} for manifest {hash} (expected {path}); run `lobsim {command}` with the same configuration first")]
    Missing { what: &'static str, hash: String, path: PathBuf, command: &'static str },
    #[error(transparent)]
    Log(#[from] LogIoError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Svm(#[from] SvmError),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error(transparent)]
    Diagnostics(#[from] DiagError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {reason}")]
    Corrupt { path: PathBuf, reason: String },
}

/// Coarse failure classes, used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    Data,
    Solver,
}

impl PipelineError {
    pub fn category(&self) -> ErrorCategory {
        match self {
            PipelineError::Config(_) | PipelineError::Scenario(_) => ErrorCategory::Config,
            PipelineError::Svm(SvmError::BadHyperParams) => ErrorCategory::Config,
            PipelineError::Svm(_) | PipelineError::Cluster(_) => ErrorCategory::Solver,
            _ => ErrorCategory::Data,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Scenario file; the canonical population when absent.
    pub scenario: Option<PathBuf>,
    pub seed: u64,
    pub runs: u32,
    /// Trading horizon in time units. The scenario's own when absent.
    pub horizon: Option<f64>,
    pub merge: MergeMode,
    /// Feature view, 9 or 18.
    pub features: usize,
    pub split: [f64; 3],
    pub svm: SvmHyperParams,
    /// Pick hyperparameters by validation accuracy over the full grid.
    pub grid: bool,
    pub linkage: Linkage,
    pub k: Vec<usize>,
    /// Largest k scanned by the silhouette and elbow diagnostics.
    pub k_max: usize,
    pub max_lag: usize,
}

impl Default for ExperimentConfig {
    fn default() -> ExperimentConfig {
        ExperimentConfig {
            scenario: None,
            seed: 42,
            runs: 40,
            horizon: None,
            merge: MergeMode::None,
            features: 18,
            split: [0.6, 0.1, 0.3],
            svm: SvmHyperParams::linear(1.0),
            grid: false,
            linkage: Linkage::Ward,
            k: vec![9, 15],
            k_max: 16,
            max_lag: diagnostics::DEFAULT_MAX_LAG,
        }
    }
}

impl ExperimentConfig {
    /// Eight runs of four hours.
    pub fn desk() -> ExperimentConfig {
        ExperimentConfig { runs: 8, horizon: Some(144_000.0), ..ExperimentConfig::default() }
    }

    pub fn from_toml(text: &str) -> Result<ExperimentConfig, PipelineError> {
        let c: ExperimentConfig = toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    /// Reads a config file. A relative scenario path is resolved against
    /// the file's directory.
    pub fn load(path: &Path) -> Result<ExperimentConfig, PipelineError> {
        let text = fs::read_to_string(path).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        let mut c = ExperimentConfig::from_toml(&text)?;
        if let (Some(s), Some(dir)) = (&c.scenario, path.parent()) {
            if s.is_relative() {
                c.scenario = Some(dir.join(s));
            }
        }
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: &str| Err(PipelineError::Config(m.to_string()));
        if self.runs == 0 {
            return bad("runs must be at least 1");
        }
        if !matches!(self.features, 9 | 18) {
            return bad("features must be 9 or 18");
        }
        if self.horizon.is_some_and(|h| !(h > 0.0 && h.is_finite())) {
            return bad("horizon must be positive");
        }
        if self.split.iter().any(|f| !(*f >= 0.0)) || (self.split.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad("split fractions must be non-negative and sum to 1");
        }
        if self.k.is_empty() || self.k.iter().any(|&k| k < 2) {
            return bad("every k must be at least 2");
        }
        if self.k_max < 2 {
            return bad("k_max must be at least 2");
        }
        if self.max_lag == 0 {
            return bad("max_lag must be positive");
        }
        if self.svm.validate().is_err() {
            return bad("svm hyperparameters must be positive");
        }
        Ok(())
    }

    /// The scenario with the horizon override applied, and the SHA-256 of
    /// its normalized text.
    pub fn load_scenario(&self) -> Result<(Scenario, String), PipelineError> {
        let base = match &self.scenario {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| PipelineError::Config(format!("{}: {e}", p.display())))?;
                Scenario::from_toml(&text)?
            }
            None => Scenario::canonical(),
        };
        let sha = hex::encode(Sha256::digest(base.to_toml().as_bytes()));
        let sc = match self.horizon {
            Some(h) => base.with_horizon(h),
            None => base,
        };
        sc.validate()?;
        Ok((sc, sha))
    }

    fn split_tuple(&self) -> (f64, f64, f64) {
        (self.split[0], self.split[1], self.split[2])
    }
}

/// Everything that determines an experiment's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentManifest {
    pub tool_version: String,
    pub scenario_sha256: String,
    pub seed: u64,
    pub runs: u32,
    pub horizon: f64,
    pub merge: MergeMode,
    pub features: usize,
    pub split: [f64; 3],
    pub svm: SvmHyperParams,
    pub grid: bool,
    pub linkage: Linkage,
    pub k: Vec<usize>,
    pub k_max: usize,
    pub max_lag: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Simulate,
    Features,
    Classify,
    Cluster,
    Stylized,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Simulate => "simulate",
            Stage::Features => "features",
            Stage::Classify => "classify",
            Stage::Cluster => "cluster",
            Stage::Stylized => "stylized",
        }
    }
}

/// One stage's slice of the experiment, content-addressed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageManifest {
    pub stage: String,
    pub hash: String,
    pub tool_version: String,
    pub inputs: Vec<String>,
    pub params: serde_json::Value,
}

impl StageManifest {
    pub fn new(stage: &str, inputs: Vec<String>, params: serde_json::Value) -> StageManifest {
        let body = json!({ "stage": stage, "tool_version": TOOL_VERSION, "inputs": inputs, "params": params });
        let digest = Sha256::digest(serde_json::to_vec(&body).expect("manifest serializes"));
        StageManifest {
            stage: stage.to_string(),
            hash: hex::encode(digest)[..16].to_string(),
            tool_version: TOOL_VERSION.to_string(),
            inputs,
            params,
        }
    }

    /// Comment line heading every delimited artifact.
    pub fn header(&self) -> String {
        let inputs = if self.inputs.is_empty() { "-".to_string() } else { self.inputs.join(",") };
        format!("# lobsim {} stage={} manifest={} inputs={inputs}\n", self.tool_version, self.stage, self.hash)
    }
}

impl ExperimentManifest {
    pub fn stage(&self, stage: Stage) -> StageManifest {
        let sim = || self.stage(Stage::Simulate).hash;
        let feat = || self.stage(Stage::Features).hash;
        let (inputs, params) = match stage {
            Stage::Simulate => (
                Vec::new(),
                json!({ "scenario_sha256": self.scenario_sha256, "seed": self.seed, "runs": self.runs, "horizon": self.horizon }),
            ),
            Stage::Features => (
                vec![sim()],
                json!({ "merge": self.merge, "features": self.features, "split": self.split, "seed": self.seed }),
            ),
            Stage::Classify => (vec![feat()], json!({ "svm": self.svm, "grid": self.grid })),
            Stage::Cluster => (vec![feat()], json!({ "linkage": self.linkage, "k": self.k, "k_max": self.k_max })),
            Stage::Stylized => (vec![sim()], json!({ "max_lag": self.max_lag })),
        };
        StageManifest::new(stage.as_str(), inputs, params)
    }
}

/// `out-dir/{logs,datasets,models,reports}` with hash-prefixed names.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Layout {
        Layout { root: root.into() }
    }

    pub fn dir(&self, kind: &str) -> PathBuf {
        self.root.join(kind)
    }

    pub fn create(&self) -> Result<(), PipelineError> {
        for kind in ["logs", "datasets", "models", "reports"] {
            let d = self.dir(kind);
            fs::create_dir_all(&d).map_err(io_err(&d))?;
        }
        Ok(())
    }

    pub fn log_stem(&self, hash: &str, run: u32) -> PathBuf {
        self.dir("logs").join(format!("{hash}-run{run:03}"))
    }

    pub fn dataset(&self, hash: &str) -> PathBuf {
        self.dir("datasets").join(format!("{hash}-dataset.tsv"))
    }

    pub fn split(&self, hash: &str) -> PathBuf {
        self.dir("datasets").join(format!("{hash}-split.tsv"))
    }

    pub fn model(&self, hash: &str) -> PathBuf {
        self.dir("models").join(format!("{hash}-svm.json"))
    }

    pub fn dendrogram(&self, hash: &str) -> PathBuf {
        self.dir("models").join(format!("{hash}-dendrogram.txt"))
    }

    pub fn report(&self, hash: &str, name: &str) -> PathBuf {
        self.dir("reports").join(format!("{hash}-{name}.tsv"))
    }

    pub fn manifest(&self, kind: &str, hash: &str) -> PathBuf {
        self.dir(kind).join(format!("{hash}-manifest.json"))
    }
}

fn write_text(path: &Path, text: &str) -> Result<(), PipelineError> {
    fs::write(path, text).map_err(io_err(path))
}

fn write_manifest(layout: &Layout, kind: &str, stage: &StageManifest, full: &ExperimentManifest) -> Result<PathBuf, PipelineError> {
    let path = layout.manifest(kind, &stage.hash);
    let body = json!({ "stage": stage, "experiment": full });
    write_text(&path, &(serde_json::to_string_pretty(&body).expect("manifest serializes") + "\n"))?;
    Ok(path)
}

#[derive(Debug, Clone)]
pub struct ClassifyOutcome {
    pub model: OvoSvm,
    pub report: ClassificationReport,
    pub grid: Option<Vec<GridResult>>,
    pub manifest: StageManifest,
}

#[derive(Debug, Clone)]
pub struct ClusterOutcome {
    pub diagnostics: KDiagnostics,
    pub models: Vec<ClusterModel>,
    pub reports: Vec<ClusterReport>,
    pub manifest: StageManifest,
}

impl ClusterOutcome {
    pub fn at(&self, k: usize) -> Option<(&ClusterModel, &ClusterReport)> {
        self.models.iter().zip(&self.reports).find(|(m, _)| m.k == k)
    }
}

/// A resolved configuration bound to an output directory.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub scenario: Scenario,
    pub manifest: ExperimentManifest,
    pub layout: Layout,
}

impl Experiment {
    pub fn new(config: ExperimentConfig, out_dir: impl Into<PathBuf>) -> Result<Experiment, PipelineError> {
        config.validate()?;
        let (scenario, scenario_sha256) = config.load_scenario()?;
        let manifest = ExperimentManifest {
            tool_version: TOOL_VERSION.to_string(),
            scenario_sha256,
            seed: config.seed,
            runs: config.runs,
            horizon: scenario.horizon,
            merge: config.merge,
            features: config.features,
            split: config.split,
            svm: config.svm,
            grid: config.grid,
            linkage: config.linkage,
            k: config.k.clone(),
            k_max: config.k_max,
            max_lag: config.max_lag,
        };
        Ok(Experiment { config, scenario, manifest, layout: Layout::new(out_dir) })
    }

    pub fn stage(&self, stage: Stage) -> StageManifest {
        self.manifest.stage(stage)
    }

    pub fn class_label(&self, class: u8) -> String {
        self.scenario.class_name(class).map_or_else(|| format!("class {class}"), str::to_string)
    }

    /// Runs the batch and writes one log per run.
    pub fn simulate(&self) -> Result<Vec<EventLog>, PipelineError> {
        self.layout.create()?;
        let m = self.stage(Stage::Simulate);
        let logs = scenario::run_batch(&self.scenario, self.config.runs, self.config.seed)?;
        for log in &logs {
            eventlog::write_log(log, &self.layout.log_stem(&m.hash, log.run_id), &m.hash)?;
        }
        write_manifest(&self.layout, "logs", &m, &self.manifest)?;
        Ok(logs)
    }

    pub fn load_logs(&self) -> Result<Vec<EventLog>, PipelineError> {
        let m = self.stage(Stage::Simulate);
        (0..self.config.runs)
            .map(|run| {
                let stem = self.layout.log_stem(&m.hash, run);
                let (events, _, _) = eventlog::stem_paths(&stem);
                if !events.exists() {
                    return Err(PipelineError::Missing {
                        what: "simulation log",
                        hash: m.hash.clone(),
                        path: events,
                        command: "simulate",
                    });
                }
                Ok(eventlog::read_log(&stem)?)
            })
            .collect()
    }

    fn split_of(&self, ds: &Dataset) -> Result<DatasetSplit, PipelineError> {
        Ok(features::split_dataset(&ds.labels, self.config.split_tuple(), mix_seed(self.config.seed, SPLIT_STREAM))?)
    }

    /// Extracts the configured feature view and writes it with its split.
    pub fn build_features(&self, logs: &[EventLog]) -> Result<Dataset, PipelineError> {
        self.layout.create()?;
        let m = self.stage(Stage::Features);
        let first = logs.first().ok_or_else(|| PipelineError::Config("no simulation runs".into()))?;
        let agents: Vec<(u32, u8)> = first.agents.iter().map(|a| (a.agent_id, a.class_id)).collect();
        let map = MergeMap::build(&agents, self.config.merge, mix_seed(self.config.seed, MERGE_STREAM))?;
        let windows = FeatureWindows::for_horizon(self.scenario.horizon);
        let ds = features::build_dataset(logs, &map, &self.scenario.event_times(), &windows).view(self.config.features)?;
        let split = self.split_of(&ds)?;
        write_text(&self.layout.dataset(&m.hash), &(m.header() + &ds.to_tsv()))?;
        write_text(&self.layout.split(&m.hash), &(m.header() + &split.to_tsv(&ds)))?;
        write_manifest(&self.layout, "datasets", &m, &self.manifest)?;
        Ok(ds)
    }

    pub fn load_dataset(&self) -> Result<Dataset, PipelineError> {
        let m = self.stage(Stage::Features);
        let path = self.layout.dataset(&m.hash);
        if !path.exists() {
            return Err(PipelineError::Missing { what: "feature dataset", hash: m.hash, path, command: "features" });
        }
        let ds = Dataset::read_tsv(&path)?;
        if ds.dim() != self.config.features {
            return Err(PipelineError::Corrupt {
                reason: format!("expected {} features, found {}", self.config.features, ds.dim()),
                path,
            });
        }
        Ok(ds)
    }

    /// Trains the OVO model on the training part and scores the test part.
    pub fn classify(&self, ds: &Dataset) -> Result<ClassifyOutcome, PipelineError> {
        self.layout.create()?;
        let m = self.stage(Stage::Classify);
        let split = self.split_of(ds)?;
        let (train, rest, scaler) = features::standardize(&ds.subset(&split.train), &[&ds.subset(&split.val), &ds.subset(&split.test)]);
        let (val, test) = (&rest[0], &rest[1]);
        let opts = SolverOptions::default();
        let (params, grid) = if self.config.grid {
            let (best, results) = svm::grid_search((&train.x, &train.labels), (&val.x, &val.labels), &svm::full_grid(), &opts)?;
            (best, Some(results))
        } else {
            (self.config.svm, None)
        };
        let mut model = svm::train_ovo(&train.x, &train.labels, &params, &opts)?;
        model.feature_names = ds.names.clone();
        model.scaler = Some(scaler);
        model.provenance = Some(m.inputs.join(","));
        let report = svm::evaluate(&model, &test.x, &test.labels)?;

        let names = |c: u8| self.class_label(c);
        model.save(&self.layout.model(&m.hash))?;
        write_text(&self.layout.report(&m.hash, "classification"), &(m.header() + &report.to_tsv(&names)))?;
        write_text(&self.layout.report(&m.hash, "confusion"), &(m.header() + &report.confusion_tsv()))?;
        if let Ok(w) = svm::explain_weights(&model) {
            write_text(&self.layout.report(&m.hash, "weights"), &(m.header() + &w.to_tsv()))?;
        }
        if let Some(results) = &grid {
            let mut s = m.header() + "params\tval_accuracy\tconverged\n";
            for r in results {
                writeln!(s, "{}\t{:.6}\t{}", r.params.label(), r.val_accuracy, r.converged).expect("string write");
            }
            write_text(&self.layout.report(&m.hash, "grid"), &s)?;
        }
        write_manifest(&self.layout, "models", &m, &self.manifest)?;
        Ok(ClassifyOutcome { model, report, grid, manifest: m })
    }

    /// Clusters the training and validation parts together, then assigns
    /// the test part to the nearest centroid for each configured k.
    pub fn cluster(&self, ds: &Dataset) -> Result<ClusterOutcome, PipelineError> {
        self.layout.create()?;
        let m = self.stage(Stage::Cluster);
        let split = self.split_of(ds)?;
        let mut fit_rows: Vec<usize> = split.train.iter().chain(&split.val).copied().collect();
        fit_rows.sort_unstable();
        let (fit, rest, _) = features::standardize(&ds.subset(&fit_rows), &[&ds.subset(&split.test)]);
        let test = &rest[0];
        let points = Points::new(&fit.x)?;
        let dendrogram = cluster::agglomerate_points(&points, self.config.linkage)?;
        let k_max = self.config.k_max.min(points.n.saturating_sub(1)).max(2);
        let sil_ks: Vec<usize> = (2..=k_max).collect();
        let wcss_ks: Vec<usize> = (1..=k_max).collect();
        let diag = cluster::k_diagnostics(&points, &dendrogram, &sil_ks, &wcss_ks)?;
        let mut models = Vec::new();
        let mut reports = Vec::new();
        for &k in &self.config.k {
            let model = ClusterModel::fit(&points, &dendrogram, k, &fit.labels, self.config.linkage)?;
            reports.push(cluster::assign_test(&model, &test.x, &test.labels));
            models.push(model);
        }

        let names = |c: u8| self.class_label(c);
        dendrogram.save(&self.layout.dendrogram(&m.hash), Some(&m.header()))?;
        let mut s = m.header() + "k\tsilhouette\twcss\n";
        for &(k, w) in &diag.wcss {
            let sil = diag.silhouette.iter().find(|p| p.0 == k).map_or(String::from("-"), |p| format!("{:.6}", p.1));
            writeln!(s, "{k}\t{sil}\t{w:.6}").expect("string write");
        }
        writeln!(s, "# silhouette_peak={} elbow={} cophenetic={:.6}", diag.silhouette_peak, diag.elbow, diag.cophenetic)
            .expect("string write");
        write_text(&self.layout.report(&m.hash, "kdiag"), &s)?;
        for r in &reports {
            write_text(&self.layout.report(&m.hash, &format!("cluster-k{}", r.k)), &(m.header() + &r.to_tsv(&names)))?;
        }
        write_manifest(&self.layout, "models", &m, &self.manifest)?;
        Ok(ClusterOutcome { diagnostics: diag, models, reports, manifest: m })
    }

    pub fn stylized(&self, logs: &[EventLog]) -> Result<StylizedReport, PipelineError> {
        self.layout.create()?;
        let m = self.stage(Stage::Stylized);
        let rep = diagnostics::stylized_report(logs, self.config.max_lag)?;
        write_text(&self.layout.report(&m.hash, "stylized"), &(m.header() + &rep.summary_tsv()))?;
        write_text(&self.layout.report(&m.hash, "hist-1s"), &(m.header() + &StylizedReport::histogram_tsv(&rep.second)))?;
        write_text(&self.layout.report(&m.hash, "hist-1min"), &(m.header() + &StylizedReport::histogram_tsv(&rep.minute)))?;
        write_text(&self.layout.report(&m.hash, "acf"), &(m.header() + &rep.acf_tsv()))?;
        let mut s = m.header() + "run_id\ttrades_per_hour\n";
        for log in logs {
            writeln!(s, "{}\t{:.2}", log.run_id, diagnostics::activity_summary(log).trades_per_hour).expect("string write");
        }
        write_text(&self.layout.report(&m.hash, "activity"), &s)?;
        write_manifest(&self.layout, "reports", &m, &self.manifest)?;
        Ok(rep)
    }
}

/// Tables that `reproduce` can rebuild.
pub const REFERENCE_TABLES: [u8; 6] = [1, 2, 5, 6, 7, 8];

/// One reference value against the obtained value.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verdict {
    pub table: u8,
    pub quantity: String,
    pub reference: String,
    pub obtained: String,
    pub tolerance: String,
    pub pass: bool,
    /// Informational rows carry no tolerance and never fail.
    pub gated: bool,
}

impl Verdict {
    pub fn status(&self) -> &'static str {
        match (self.gated, self.pass) {
            (false, _) => "INFO",
            (true, true) => "PASS",
            (true, false) => "FAIL",
        }
    }

    pub fn line(&self) -> String {
        format!(
            "table {} | {} | reference {} | obtained {} | tolerance {} | {}",
            self.table,
            self.quantity,
            self.reference,
            self.obtained,
            self.tolerance,
            self.status()
        )
    }
}

#[derive(Debug, Clone)]
pub struct TableOutcome {
    pub table: u8,
    pub verdicts: Vec<Verdict>,
    pub report: PathBuf,
}

/// Absolute tolerance for cells with no gate of their own.
pub const CELL_TOLERANCE: f64 = 0.10;

type Setting = (MergeMode, usize);

/// Runs the pipeline for reference tables, sharing simulations, datasets
/// and fitted models between tables.
pub struct Reproduction {
    base: ExperimentConfig,
    out_dir: PathBuf,
    logs: Option<Vec<EventLog>>,
    datasets: BTreeMap<(u8, usize), Dataset>,
    classified: BTreeMap<(u8, usize), ClassifyOutcome>,
    clustered: BTreeMap<(u8, usize, Vec<usize>), ClusterOutcome>,
}

fn mode_key(m: MergeMode) -> u8 {
    m.noise_per_sample() as u8
}

fn f4(v: f64) -> String {
    format!("{v:.4}")
}

impl Reproduction {
    pub fn new(base: ExperimentConfig, out_dir: impl Into<PathBuf>) -> Result<Reproduction, PipelineError> {
        base.validate()?;
        Ok(Reproduction {
            base,
            out_dir: out_dir.into(),
            logs: None,
            datasets: BTreeMap::new(),
            classified: BTreeMap::new(),
            clustered: BTreeMap::new(),
        })
    }

    fn experiment(&self, setting: Setting, k: &[usize]) -> Result<Experiment, PipelineError> {
        let config =
            ExperimentConfig { merge: setting.0, features: setting.1, k: k.to_vec(), ..self.base.clone() };
        Experiment::new(config, &self.out_dir)
    }

    fn logs(&mut self) -> Result<&[EventLog], PipelineError> {
        if self.logs.is_none() {
            let e = self.experiment((MergeMode::None, 18), &[2])?;
            self.logs = Some(e.simulate()?);
        }
        Ok(self.logs.as_deref().expect("logs present"))
    }

    fn dataset(&mut self, setting: Setting) -> Result<Dataset, PipelineError> {
        let key = (mode_key(setting.0), setting.1);
        if !self.datasets.contains_key(&key) {
            let e = self.experiment(setting, &[2])?;
            let ds = e.build_features(self.logs()?)?;
            self.datasets.insert(key, ds);
        }
        Ok(self.datasets[&key].clone())
    }

    pub fn classification(&mut self, setting: Setting) -> Result<ClassifyOutcome, PipelineError> {
        let key = (mode_key(setting.0), setting.1);
        if !self.classified.contains_key(&key) {
            let ds = self.dataset(setting)?;
            let out = self.experiment(setting, &[2])?.classify(&ds)?;
            self.classified.insert(key, out);
        }
        Ok(self.classified[&key].clone())
    }

    pub fn clustering(&mut self, setting: Setting, k: &[usize]) -> Result<ClusterOutcome, PipelineError> {
        let key = (mode_key(setting.0), setting.1, k.to_vec());
        if !self.clustered.contains_key(&key) {
            let ds = self.dataset(setting)?;
            let out = self.experiment(setting, k)?.cluster(&ds)?;
            self.clustered.insert(key.clone(), out);
        }
        Ok(self.clustered[&key].clone())
    }

    fn scenario(&self) -> Result<Scenario, PipelineError> {
        Ok(self.base.load_scenario()?.0)
    }

    fn classes_where(&self, pred: impl Fn(&Strategy) -> bool) -> Result<Vec<(u8, String)>, PipelineError> {
        Ok(self
            .scenario()?
            .classes
            .iter()
            .filter(|c| pred(&c.strategy))
            .map(|c| (c.class_id, c.name.clone()))
            .collect())
    }

    /// Rebuilds one table, writes its verdict report and returns it.
    pub fn table(&mut self, table: u8) -> Result<TableOutcome, PipelineError> {
        let (verdicts, inputs) = match table {
            1 => self.table_classification_18()?,
            2 => self.table_classification_9()?,
            5 => self.table_clustering(5, (MergeMode::None, 18), [0.9439, 0.7533], 15)?,
            6 => self.table_clustering(6, (MergeMode::TwoThirds, 18), [0.6321, 0.9097], 14)?,
            7 => self.table_clustering(7, (MergeMode::None, 9), [0.7443, 0.7640], 15)?,
            8 => self.table_clustering(8, (MergeMode::TwoThirds, 9), [0.6200, 0.5583], 14)?,
            _ => {
                return Err(PipelineError::Config(format!(
                    "unknown table {table}; available: {REFERENCE_TABLES:?}"
                )))
            }
        };
        let m = StageManifest::new("reproduce", inputs, json!({ "table": table }));
        let mut s = m.header() + "quantity\treference\tobtained\ttolerance\tverdict\n";
        for v in &verdicts {
            writeln!(
                s,
                "{}\t{}\t{}\t{}\t{}",
                v.quantity,
                v.reference,
                v.obtained,
                v.tolerance,
                v.status()
            )
            .expect("string write");
        }
        let layout = Layout::new(&self.out_dir);
        layout.create()?;
        let report = layout.report(&m.hash, &format!("table{table}"));
        write_text(&report, &s)?;
        Ok(TableOutcome { table, verdicts, report })
    }

    fn table_classification_18(&mut self) -> Result<(Vec<Verdict>, Vec<String>), PipelineError> {
        let clean = self.classification((MergeMode::None, 18))?;
        let half = self.classification((MergeMode::Half, 18))?;
        let heavy = self.classification((MergeMode::TwoThirds, 18))?;
        let mut v = Vec::new();
        let acc = clean.report.accuracy;
        v.push(verdict(1, "overall accuracy, no noise", "0.99", f4(acc), ">= 0.95", acc >= 0.95));
        let f1 = |r: &ClassificationReport, c: u8| r.metrics(c).map_or(0.0, |m| m.f1);
        for (c, name) in self.classes_where(|s| matches!(s, Strategy::MarketMaker(_)))? {
            let f = f1(&clean.report, c);
            v.push(verdict(1, &format!("F1 {name}, no noise"), "1.00", f4(f), ">= 0.98", f >= 0.98));
        }
        for (c, name) in self.classes_where(|s| matches!(s, Strategy::MarketTaker(_)))? {
            let f = f1(&clean.report, c);
            v.push(verdict(1, &format!("F1 {name}, no noise"), "1.00", f4(f), ">= 0.95", f >= 0.95));
        }
        let (a50, a66) = (half.report.accuracy, heavy.report.accuracy);
        v.push(verdict(1, "overall accuracy, 50% noise", "0.96", f4(a50), "<= no noise - 0.01", acc - a50 >= 0.01));
        v.push(verdict(1, "overall accuracy, 66.6% noise", "0.91", f4(a66), "<= 50% noise - 0.01", a50 - a66 >= 0.01));
        let inputs = vec![clean.manifest.hash, half.manifest.hash, heavy.manifest.hash];
        Ok((v, inputs))
    }

    fn table_classification_9(&mut self) -> Result<(Vec<Verdict>, Vec<String>), PipelineError> {
        let clean = self.classification((MergeMode::None, 9))?;
        let heavy = self.classification((MergeMode::TwoThirds, 9))?;
        let full = self.classification((MergeMode::None, 18))?;
        let mut v = Vec::new();
        let acc = clean.report.accuracy;
        v.push(verdict(2, "overall accuracy, no noise", "0.85", f4(acc), "in [0.75, 0.92]", (0.75..=0.92).contains(&acc)));
        let f1 = |c: u8| clean.report.metrics(c).map_or(0.0, |m| m.f1);
        for (c, name) in self.classes_where(|s| matches!(s, Strategy::Fundamentalist(_)))? {
            let f = f1(c);
            v.push(verdict(2, &format!("F1 {name}, no noise"), "0.00", f4(f), "<= 0.10", f <= 0.10));
        }
        let chartist_ref = ["0.46", "0.66", "0.46", "0.69"];
        for (i, (c, name)) in self.classes_where(|s| matches!(s, Strategy::Chartist(_)))?.into_iter().enumerate() {
            let f = f1(c);
            let r = chartist_ref.get(i).copied().unwrap_or("-");
            v.push(verdict(2, &format!("F1 {name}, no noise"), r, f4(f), "in [0.30, 0.80]", (0.3..=0.8).contains(&f)));
        }
        let a66 = heavy.report.accuracy;
        v.push(verdict(2, "overall accuracy, 66.6% noise", "0.58", f4(a66), "< no noise", a66 < acc));
        let gap = full.report.accuracy - acc;
        v.push(verdict(2, "accuracy gap, 18 vs 9 features", "0.14", f4(gap), ">= 0.08", gap >= 0.08));
        let inputs = vec![clean.manifest.hash, heavy.manifest.hash, full.manifest.hash];
        Ok((v, inputs))
    }

    fn table_clustering(
        &mut self,
        table: u8,
        setting: Setting,
        reference: [f64; 2],
        k_fine: usize,
    ) -> Result<(Vec<Verdict>, Vec<String>), PipelineError> {
        // k=7 is reported for the clean settings but has no reference value
        let ks: Vec<usize> = if setting.0 == MergeMode::None { vec![7, 9, k_fine] } else { vec![9, k_fine] };
        let out = self.clustering(setting, &ks)?;
        let (model9, rep9) = out.at(9).expect("k=9 fitted");
        let (_, rep_fine) = out.at(k_fine).expect("fine k fitted");
        let mut v = Vec::new();
        let mut inputs = vec![out.manifest.hash.clone()];
        let within = |obtained: f64, r: f64| (obtained - r).abs() <= CELL_TOLERANCE;
        let tol = format!("+/- {CELL_TOLERANCE:.2}");

        if table == 5 {
            let acc = rep9.accuracy;
            v.push(verdict(5, "clustering accuracy, k=9", "0.9439", f4(acc), ">= 0.85", acc >= 0.85));
            let funds: Vec<u8> = self.classes_where(|s| matches!(s, Strategy::Fundamentalist(_)))?.iter().map(|c| c.0).collect();
            let groups: Vec<Option<usize>> = funds.iter().map(|&c| model9.group_of_class(c)).collect();
            let single = groups.first().is_some_and(|g| g.is_some() && groups.iter().all(|x| x == g));
            v.push(verdict(5, "fundamentalists share one cluster group, k=9", "yes", yes_no(single), "yes", single));
            let mut seen = Vec::new();
            for (c, name) in self.classes_where(|s| matches!(s, Strategy::MarketMaker(_)))? {
                let Some(g) = rep9.group_with(c) else {
                    v.push(verdict(5, &format!("F1 group of {name}, k=9"), "0.99", "-".into(), ">= 0.95", false));
                    continue;
                };
                if seen.contains(&g.clusters) {
                    continue;
                }
                seen.push(g.clusters.clone());
                let names: Vec<String> = g.classes.iter().map(|&c| self.scenario_name(c)).collect();
                let q = format!("F1 group [{}], k=9", names.join(", "));
                v.push(verdict(5, &q, "0.99", f4(g.f1), ">= 0.95", g.f1 >= 0.95));
            }
            let noise = self.classes_where(|s| matches!(s, Strategy::Noise(_)))?;
            let takers = self.classes_where(|s| matches!(s, Strategy::MarketTaker(_)))?;
            let shared = noise.first().is_some_and(|(n, _)| {
                let g = model9.group_of_class(*n);
                g.is_some() && takers.iter().all(|(t, _)| model9.group_of_class(*t) == g)
            });
            v.push(verdict(5, "market takers share the noise cluster group, k=9", "yes", yes_no(shared), "yes", shared));
            let cls = self.classification(setting)?;
            inputs.push(cls.manifest.hash.clone());
            let gap = cls.report.accuracy - rep_fine.accuracy;
            v.push(verdict(5, "clustering accuracy, k=15", "0.7533", f4(rep_fine.accuracy), "-", true));
            if let Some((_, rep7)) = out.at(7) {
                v.push(verdict(5, "clustering accuracy, k=7", "-", f4(rep7.accuracy), "-", true));
            }
            v.push(verdict(5, "classification minus clustering accuracy, k=15", "0.2367", f4(gap), ">= 0.10", gap >= 0.10));
            let d = &out.diagnostics;
            v.push(verdict(5, "silhouette peak k", "9", d.silhouette_peak.to_string(), "in {8, 9, 10}", (8..=10).contains(&d.silhouette_peak)));
            v.push(verdict(5, "elbow k", "7", d.elbow.to_string(), "in {6, 7, 8}", (6..=8).contains(&d.elbow)));
            v.push(verdict(5, "cophenetic correlation", "0.70", f4(d.cophenetic), "0.70 +/- 0.10", (d.cophenetic - 0.70).abs() <= 0.10));
        } else {
            if let Some((_, rep7)) = out.at(7) {
                v.push(verdict(table, "clustering accuracy, k=7", "-", f4(rep7.accuracy), "-", true));
            }
            v.push(verdict(table, "clustering accuracy, k=9", &f4(reference[0]), f4(rep9.accuracy), &tol, within(rep9.accuracy, reference[0])));
            let q = format!("clustering accuracy, k={k_fine}");
            v.push(verdict(table, &q, &f4(reference[1]), f4(rep_fine.accuracy), &tol, within(rep_fine.accuracy, reference[1])));
        }
        Ok((v, inputs))
    }

    fn scenario_name(&self, class: u8) -> String {
        self.scenario()
            .ok()
            .and_then(|s| s.class_name(class).map(str::to_string))
            .unwrap_or_else(|| format!("class {class}"))
    }
}

fn yes_no(b: bool) -> String {
    if b { "yes" } else { "no" }.to_string()
}

fn verdict(table: u8, quantity: &str, reference: &str, obtained: String, tolerance: &str, pass: bool) -> Verdict {
    Verdict {
        table,
        quantity: quantity.to_string(),
        reference: reference.to_string(),
        obtained,
        tolerance: tolerance.to_string(),
        pass,
        gated: tolerance != "-",
    }
}
