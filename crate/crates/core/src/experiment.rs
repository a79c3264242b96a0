//! End-to-end runs: load or generate traces, evaluate every series with the
//! configured models and write the report directory.
//!
//! An experiment directory holds:
//!
//! ```text
//! report.csv                 per-series metrics
//! summary.csv                per (app, split, model) aggregates
//! split.csv                  every sample with its partition
//! heatmap_<app>_<model>.csv  predicted vs actual raw counts
//! kde_<key>_<model>.csv      count densities of the test set
//! models/<key>_<model>.json  fitted models
//! manifest.json              config, seed and input digests
//! ```
//!
//! A sweep directory holds `curve_<key>_<model>.csv`, `curve_summary.csv` and
//! `manifest.json`.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::cfg::{family, generate_dataset, CfgError, GridSpec, Interpreter, DEFAULT_STEP_BUDGET, FAMILY_NAMES};
use crate::eval::{
    self, accuracy_percent, evaluate_series, heatmap_data, kde, kde_at, learning_curve, write_curve, CurvePoint,
    EvalError, EvalReport, Failure, ModelChoice, ModelKind, ModelSettings, SeriesError, SeriesEval, TrainedModel,
};
use crate::trace::{self, BbSeries, Normalizer, SeriesKey, SplitManifestWriter, SplitMode, SplitSpec, TraceWriter};

pub const MODEL_DOC_VERSION: u32 = 1;
pub const MANIFEST_NAME: &str = "manifest.json";
pub const DEFAULT_HEATMAP_BINS: usize = 20;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("unknown family {name:?}; valid families: {}", FAMILY_NAMES.join(", "))]
    UnknownFamily { name: String },
    #[error("no inputs: give trace files or family names")]
    NoInputs,
    #[error("{} already exists; pass --force to overwrite", .0.display())]
    Exists(PathBuf),
    #[error("all {0} series evaluations failed")]
    AllFailed(usize),
    #[error("{path}: {source}")]
    Input { path: String, source: trace::TraceError },
    #[error("model expects {expected} parameters, got {found}")]
    Arity { expected: usize, found: usize },
    #[error("model document version {0} is not supported")]
    Version(u32),
    #[error(transparent)]
    Cfg(#[from] CfgError),
    #[error(transparent)]
    Trace(#[from] trace::TraceError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Series(#[from] SeriesError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("thread pool: {0}")]
    Pool(#[from] rayon::ThreadPoolBuildError),
}

pub type Result<T, E = ExperimentError> = std::result::Result<T, E>;

/// Everything that determines the contents of an output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub traces: Vec<PathBuf>,
    pub families: Vec<String>,
    /// Replaces every family's default grid.
    pub grid: Option<GridSpec>,
    pub split: SplitMode,
    pub fraction: f64,
    pub seed: u64,
    pub model: ModelChoice,
    pub settings: ModelSettings,
    /// Hidden width of the regularized network; families otherwise use their
    /// own default and trace files use `settings.br.hidden`.
    pub br_hidden: Option<usize>,
    pub step_budget: u64,
    pub heatmap_bins: usize,
    /// Training fractions of a sweep.
    pub fractions: Vec<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            traces: Vec::new(),
            families: Vec::new(),
            grid: None,
            split: SplitMode::HighLow,
            fraction: SplitSpec::DEFAULT_FRACTION,
            seed: 0,
            model: ModelChoice::Both,
            settings: ModelSettings::default(),
            br_hidden: None,
            step_budget: DEFAULT_STEP_BUDGET,
            heatmap_bins: DEFAULT_HEATMAP_BINS,
            fractions: (1..=9).map(|i| i as f64 / 10.0).collect(),
        }
    }
}

impl RunConfig {
    pub fn split_spec(&self) -> Result<SplitSpec> {
        Ok(SplitSpec::new(self.split, self.fraction, self.seed)?)
    }
}

/// A trace source and the series read from it.
#[derive(Debug, Clone)]
pub struct Input {
    pub name: String,
    pub sha256: String,
    pub series: Vec<BbSeries>,
    pub br_hidden: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputDigest {
    pub name: String,
    pub sha256: String,
    pub series: usize,
}

fn hex_digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Generates the trace CSV of a builtin family in memory.
pub fn family_trace(name: &str, grid: Option<&GridSpec>, step_budget: u64) -> Result<(Vec<u8>, usize)> {
    let fam = family(name).ok_or_else(|| ExperimentError::UnknownFamily { name: name.to_string() })?;
    let grid = grid.unwrap_or(&fam.default_grid);
    let mut buf = Vec::new();
    let mut sink = TraceWriter::new(&mut buf, fam.program.arity())?;
    let records = generate_dataset(&fam.program, grid, &Interpreter::with_budget(step_budget), &mut sink)?;
    drop(sink);
    Ok((buf, records))
}

pub fn load_inputs(cfg: &RunConfig) -> Result<Vec<Input>> {
    if cfg.traces.is_empty() && cfg.families.is_empty() {
        return Err(ExperimentError::NoInputs);
    }
    let mut inputs = Vec::new();
    for path in &cfg.traces {
        let bytes = fs::read(path)?;
        let name = path.display().to_string();
        let ingested =
            trace::ingest(bytes.as_slice()).map_err(|source| ExperimentError::Input { path: name.clone(), source })?;
        inputs.push(Input {
            name,
            sha256: hex_digest(&bytes),
            series: ingested.series,
            br_hidden: cfg.br_hidden.unwrap_or(cfg.settings.br.hidden),
        });
    }
    for name in &cfg.families {
        let fam = family(name).ok_or_else(|| ExperimentError::UnknownFamily { name: name.clone() })?;
        let (bytes, _) = family_trace(name, cfg.grid.as_ref(), cfg.step_budget)?;
        let grid = cfg.grid.as_ref().unwrap_or(&fam.default_grid);
        inputs.push(Input {
            name: format!("family:{name}@{grid}"),
            sha256: hex_digest(&bytes),
            series: trace::ingest(bytes.as_slice())?.series,
            br_hidden: cfg.br_hidden.unwrap_or(fam.br_hidden),
        });
    }
    Ok(inputs)
}

/// Refuses to reuse a non-empty directory unless `force` is set.
pub fn prepare_out_dir(out: &Path, force: bool) -> Result<()> {
    if out.exists() {
        let occupied = !out.is_dir() || fs::read_dir(out)?.next().is_some();
        if occupied && !force {
            return Err(ExperimentError::Exists(out.to_path_buf()));
        }
    }
    fs::create_dir_all(out)?;
    Ok(())
}

fn pool(workers: Option<usize>) -> Result<rayon::ThreadPool> {
    Ok(rayon::ThreadPoolBuilder::new().num_threads(workers.unwrap_or(0)).build()?)
}

struct Job<'a> {
    series: &'a BbSeries,
    kind: ModelKind,
    settings: ModelSettings,
}

fn jobs<'a>(inputs: &'a [Input], cfg: &RunConfig) -> Vec<Job<'a>> {
    let mut out = Vec::new();
    for input in inputs {
        let mut settings = cfg.settings;
        settings.br.hidden = input.br_hidden;
        for series in &input.series {
            for &kind in cfg.model.kinds() {
                out.push(Job { series, kind, settings });
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    pub config: RunConfig,
    pub inputs: Vec<InputDigest>,
    /// Digest over the per-input digests, in input order.
    pub input_digest: String,
    pub workers: Option<usize>,
    pub wall_time_secs: f64,
    pub evaluations: usize,
    pub failures: usize,
    pub outputs: Vec<String>,
}

impl Manifest {
    fn new(command: &str, cfg: &RunConfig, inputs: &[Input], workers: Option<usize>) -> Self {
        let digests: Vec<InputDigest> = inputs
            .iter()
            .map(|i| InputDigest { name: i.name.clone(), sha256: i.sha256.clone(), series: i.series.len() })
            .collect();
        let joined: String = digests.iter().map(|d| d.sha256.as_str()).collect::<Vec<_>>().join("\n");
        Manifest {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            seed: cfg.seed,
            config: cfg.clone(),
            inputs: digests,
            input_digest: hex_digest(joined.as_bytes()),
            workers,
            wall_time_secs: 0.0,
            evaluations: 0,
            failures: 0,
            outputs: Vec::new(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&fs::read(path)?)?)
    }
}

/// A persisted model with everything needed to predict raw counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDoc {
    pub version: u32,
    pub key: SeriesKey,
    pub model: ModelKind,
    pub seed: u64,
    pub split: SplitSpec,
    pub config: ModelSettings,
    pub normalizer: Normalizer,
    #[serde(flatten)]
    pub trained: TrainedModel,
}

impl ModelDoc {
    pub fn from_eval(e: &SeriesEval, split: &SplitSpec, settings: &ModelSettings) -> Self {
        let mut config = *settings;
        config.pnn.seed = e.seed;
        config.br.seed = e.seed;
        ModelDoc {
            version: MODEL_DOC_VERSION,
            key: e.key.clone(),
            model: e.model,
            seed: e.seed,
            split: SplitSpec { seed: e.seed, ..*split },
            config,
            normalizer: e.normalizer.clone(),
            trained: e.trained.clone(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let doc: ModelDoc = serde_json::from_slice(&fs::read(path)?)?;
        if doc.version != MODEL_DOC_VERSION {
            return Err(ExperimentError::Version(doc.version));
        }
        Ok(doc)
    }

    /// Raw-count prediction for one parameter vector.
    pub fn predict(&self, params: &[i64]) -> Result<f64> {
        let expected = self.normalizer.feature_min.len();
        if params.len() != expected {
            return Err(ExperimentError::Arity { expected, found: params.len() });
        }
        let scaled = self.trained.predict(&self.normalizer.features(params))?;
        Ok(self.normalizer.invert_target(scaled))
    }
}

fn file_safe(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' }).collect()
}

struct Outputs<'a> {
    dir: &'a Path,
    written: BTreeSet<String>,
}

impl<'a> Outputs<'a> {
    fn create(&mut self, name: &str) -> Result<BufWriter<File>> {
        let path = self.dir.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        self.written.insert(name.to_string());
        Ok(BufWriter::new(File::create(path)?))
    }

    fn finish(self, mut manifest: Manifest, started: Instant) -> Result<Manifest> {
        manifest.outputs = self.written.into_iter().collect();
        manifest.wall_time_secs = started.elapsed().as_secs_f64();
        let mut w = BufWriter::new(File::create(self.dir.join(MANIFEST_NAME))?);
        serde_json::to_writer_pretty(&mut w, &manifest)?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(manifest)
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub report: EvalReport,
    pub evals: Vec<SeriesEval>,
    pub manifest: Manifest,
}

/// Evaluates every series with every configured model and writes the report
/// directory. Per-series failures are recorded; the run fails only when
/// nothing could be evaluated.
pub fn run_experiment(cfg: &RunConfig, out: &Path, workers: Option<usize>) -> Result<ExperimentOutcome> {
    let started = Instant::now();
    let split = cfg.split_spec()?;
    let inputs = load_inputs(cfg)?;
    let jobs = jobs(&inputs, cfg);
    let results: Vec<Result<SeriesEval, SeriesError>> = pool(workers)?
        .install(|| jobs.par_iter().map(|j| evaluate_series(j.series, &split, j.kind, &j.settings)).collect());

    let mut report = EvalReport::default();
    let mut evals = Vec::new();
    for (job, result) in jobs.iter().zip(results) {
        match result {
            Ok(e) => {
                report.records.push(e.record());
                evals.push(e);
            }
            Err(err) => report.failures.push(Failure {
                key: job.series.key.clone(),
                split: split.mode,
                model: job.kind,
                reason: err.to_string(),
            }),
        }
    }
    if !jobs.is_empty() && evals.is_empty() {
        return Err(ExperimentError::AllFailed(jobs.len()));
    }

    let mut files = Outputs { dir: out, written: BTreeSet::new() };
    report.write_records(files.create("report.csv")?)?;
    report.write_summary(files.create("summary.csv")?)?;
    write_failures(&report.failures, files.create("failures.csv")?)?;
    write_split(&jobs, &evals, &mut files)?;
    write_heatmaps(&evals, cfg.heatmap_bins, &mut files)?;
    write_kdes(&evals, &mut files)?;
    let settings_of: BTreeMap<(&SeriesKey, ModelKind), &ModelSettings> =
        jobs.iter().map(|j| ((&j.series.key, j.kind), &j.settings)).collect();
    for e in &evals {
        let doc = ModelDoc::from_eval(e, &split, settings_of[&(&e.key, e.model)]);
        let mut w = files.create(&format!("models/{}_{}.json", e.key, e.model))?;
        serde_json::to_writer_pretty(&mut w, &doc)?;
        w.write_all(b"\n")?;
        w.flush()?;
    }

    let mut manifest = Manifest::new("experiment", cfg, &inputs, workers);
    manifest.evaluations = evals.len();
    manifest.failures = report.failures.len();
    let manifest = files.finish(manifest, started)?;
    Ok(ExperimentOutcome { report, evals, manifest })
}

fn write_failures<W: Write>(failures: &[Failure], w: W) -> Result<()> {
    let mut out = trace::csv_writer(w);
    out.write_record(["app", "kernel_id", "bb_id", "split", "model", "reason"])?;
    for f in failures {
        out.write_record([
            f.key.app.clone(),
            f.key.kernel_id.to_string(),
            f.key.bb_id.to_string(),
            f.split.as_str().to_string(),
            f.model.to_string(),
            f.reason.clone(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// One block of samples per series; both models share a series' split.
fn write_split(jobs: &[Job<'_>], evals: &[SeriesEval], files: &mut Outputs<'_>) -> Result<()> {
    let arity = jobs.iter().map(|j| j.series.arity()).max().unwrap_or(1);
    let mut w = SplitManifestWriter::new(files.create("split.csv")?, arity)?;
    let mut seen = BTreeSet::new();
    let series: BTreeMap<&SeriesKey, &BbSeries> = jobs.iter().map(|j| (&j.series.key, j.series)).collect();
    for e in evals {
        if seen.insert(&e.key) {
            w.write(series[&e.key], &e.assignment)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn write_heatmaps(evals: &[SeriesEval], bins: usize, files: &mut Outputs<'_>) -> Result<()> {
    let mut groups: BTreeMap<(&str, ModelKind), (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for e in evals {
        let g = groups.entry((e.key.app.as_str(), e.model)).or_default();
        g.0.extend(&e.predicted);
        g.1.extend(&e.actual);
    }
    for ((app, model), (pred, actual)) in groups {
        let map = heatmap_data(&pred, &actual, bins)?;
        map.write_csv(files.create(&format!("heatmap_{}_{model}.csv", file_safe(app)))?)?;
    }
    Ok(())
}

/// Density of actual and predicted test counts on the grid of the actual
/// counts. Series whose test counts do not vary have no bandwidth and are
/// skipped.
fn write_kdes(evals: &[SeriesEval], files: &mut Outputs<'_>) -> Result<()> {
    for e in evals {
        let Ok(curve) = kde(&e.actual, None) else { continue };
        let mut out = trace::csv_writer(files.create(&format!("kde_{}_{}.csv", e.key, e.model))?);
        out.write_record(["x", "actual", "predicted"])?;
        for (x, d) in curve.x.iter().zip(&curve.density) {
            let p = kde_at(&e.predicted, curve.bandwidth, *x);
            out.write_record([x.to_string(), d.to_string(), p.to_string()])?;
        }
        out.flush()?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub key: SeriesKey,
    pub model: ModelKind,
    pub points: Vec<CurvePoint>,
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub curves: Vec<Curve>,
    pub manifest: Manifest,
}

/// Learning curves over `cfg.fractions` for every series and model.
pub fn run_sweep(cfg: &RunConfig, out: &Path, workers: Option<usize>) -> Result<SweepOutcome> {
    let started = Instant::now();
    eval::check_fractions(&cfg.fractions)?;
    let inputs = load_inputs(cfg)?;
    let jobs = jobs(&inputs, cfg);
    let curves: Vec<Curve> = pool(workers)?.install(|| {
        jobs.par_iter()
            .map(|j| {
                learning_curve(j.series, j.kind, &j.settings, &cfg.fractions, cfg.seed)
                    .map(|points| Curve { key: j.series.key.clone(), model: j.kind, points })
            })
            .collect::<Result<_, _>>()
    })?;
    let scored = curves.iter().flat_map(|c| &c.points).filter(|p| p.mse.is_some()).count();
    if !jobs.is_empty() && scored == 0 {
        return Err(ExperimentError::AllFailed(jobs.len()));
    }

    let mut files = Outputs { dir: out, written: BTreeSet::new() };
    for c in &curves {
        write_curve(&c.points, files.create(&format!("curve_{}_{}.csv", c.key, c.model))?)?;
    }
    write_curve_summary(&curves, &cfg.fractions, files.create("curve_summary.csv")?)?;
    let mut manifest = Manifest::new("sweep", cfg, &inputs, workers);
    manifest.evaluations = scored;
    manifest.failures = curves.iter().flat_map(|c| &c.points).filter(|p| p.skipped.is_some()).count();
    let manifest = files.finish(manifest, started)?;
    Ok(SweepOutcome { curves, manifest })
}

/// Per (app, model, fraction): mean MSE over series with a varying training
/// target.
fn write_curve_summary<W: Write>(curves: &[Curve], fractions: &[f64], w: W) -> Result<()> {
    let mut out = trace::csv_writer(w);
    out.write_record(["app", "model", "fraction", "n_scored", "n_skipped", "avg_mse_varying", "accuracy_varying"])?;
    let mut groups: BTreeMap<(&str, ModelKind), Vec<&Curve>> = BTreeMap::new();
    for c in curves {
        groups.entry((c.key.app.as_str(), c.model)).or_default().push(c);
    }
    for ((app, model), cs) in groups {
        for (i, f) in fractions.iter().enumerate() {
            let points: Vec<&CurvePoint> = cs.iter().map(|c| &c.points[i]).collect();
            let varying: Vec<f64> = points.iter().filter(|p| !p.constant_target).filter_map(|p| p.mse).collect();
            let skipped = points.iter().filter(|p| p.skipped.is_some()).count();
            let avg = (!varying.is_empty()).then(|| varying.iter().sum::<f64>() / varying.len() as f64);
            out.write_record([
                app.to_string(),
                model.to_string(),
                f.to_string(),
                (points.len() - skipped).to_string(),
                skipped.to_string(),
                avg.map_or_else(|| eval::UNDEFINED.to_string(), |v| v.to_string()),
                avg.map_or_else(|| eval::UNDEFINED.to_string(), |v| accuracy_percent(v).to_string()),
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}
