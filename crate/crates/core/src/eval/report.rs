use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::{accuracy_percent, mse, pearson, spearman, EvalError};
use crate::brbpnn::{self, BrConfig, BrbpnnModel};
use crate::pnn::{self, PnnModel, TrainConfig};
use crate::trace::{self, csv_writer, BbSeries, Normalizer, Partition, SeriesKey, SplitMode, SplitSpec, TraceError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Pnn,
    Brbpnn,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Pnn => "pnn",
            ModelKind::Brbpnn => "brbpnn",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Which models an experiment trains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelChoice {
    Pnn,
    Brbpnn,
    #[default]
    Both,
}

impl ModelChoice {
    pub fn kinds(self) -> &'static [ModelKind] {
        match self {
            ModelChoice::Pnn => &[ModelKind::Pnn],
            ModelChoice::Brbpnn => &[ModelKind::Brbpnn],
            ModelChoice::Both => &[ModelKind::Pnn, ModelKind::Brbpnn],
        }
    }
}

impl FromStr for ModelChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "pnn" => Ok(ModelChoice::Pnn),
            "brbpnn" => Ok(ModelChoice::Brbpnn),
            "both" => Ok(ModelChoice::Both),
            other => Err(format!("unknown model {other:?}; expected pnn, brbpnn or both")),
        }
    }
}

/// Training settings for both models. Seeds in here are ignored; every
/// series gets its own from [`series_seed`].
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSettings {
    pub pnn: TrainConfig,
    pub br: BrConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "arch", rename_all = "lowercase")]
pub enum TrainedModel {
    Pnn(PnnModel),
    Brbpnn(BrbpnnModel),
    /// Stands in for a series whose training target never varied.
    Constant,
}

impl TrainedModel {
    /// Prediction in normalized target space.
    pub fn predict(&self, x: &[f64]) -> Result<f64, SeriesError> {
        Ok(match self {
            TrainedModel::Pnn(m) => m.forward(x)?,
            TrainedModel::Brbpnn(m) => m.forward(x)?,
            TrainedModel::Constant => 0.0,
        })
    }
}

#[derive(Debug, Error)]
pub enum SeriesError {
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error("pnn: {0}")]
    Pnn(#[from] pnn::PnnError),
    #[error("brbpnn: {0}")]
    Brbpnn(#[from] brbpnn::BrError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Mixes the run seed with a digest of the series key, so every series has
/// an independent stream that does not depend on processing order.
pub fn series_seed(seed: u64, key: &SeriesKey) -> u64 {
    let digest = Sha256::digest(format!("{}\0{}\0{}", key.app, key.kernel_id, key.bb_id).as_bytes());
    seed ^ u64::from_le_bytes(digest[..8].try_into().expect("digest length"))
}

/// Outcome of splitting, training and scoring one series with one model.
#[derive(Debug, Clone)]
pub struct SeriesEval {
    pub key: SeriesKey,
    pub model: ModelKind,
    pub split: SplitMode,
    pub seed: u64,
    pub n_train: usize,
    pub n_discarded: usize,
    pub mse: f64,
    pub pearson: Option<f64>,
    pub spearman: Option<f64>,
    pub constant_target: bool,
    pub pinned: bool,
    pub normalizer: Normalizer,
    pub trained: TrainedModel,
    pub assignment: Vec<Partition>,
    pub test_params: Vec<Vec<i64>>,
    pub actual: Vec<f64>,
    /// Raw-count predictions aligned with `actual`.
    pub predicted: Vec<f64>,
}

impl SeriesEval {
    pub fn n_test(&self) -> usize {
        self.actual.len()
    }

    pub fn record(&self) -> BbRecord {
        BbRecord {
            app: self.key.app.clone(),
            kernel_id: self.key.kernel_id,
            bb_id: self.key.bb_id,
            split: self.split,
            model: self.model,
            seed: self.seed,
            n_train: self.n_train,
            n_test: self.n_test(),
            n_discarded: self.n_discarded,
            mse: self.mse,
            pearson: self.pearson,
            spearman: self.spearman,
            constant_target: self.constant_target,
            pinned: self.pinned,
        }
    }
}

pub fn evaluate_series(
    series: &BbSeries,
    split: &SplitSpec,
    kind: ModelKind,
    settings: &ModelSettings,
) -> Result<SeriesEval, SeriesError> {
    let seed = series_seed(split.seed, &series.key);
    let parts = trace::split(series, &SplitSpec { seed, ..*split })?;
    let normalizer = Normalizer::fit(&parts.train)?;
    let train = normalizer.dataset(&parts.train);
    let test = normalizer.dataset(&parts.test);
    let constant_target = normalizer.constant_target();

    let trained = match (constant_target, kind) {
        (true, _) => TrainedModel::Constant,
        (false, ModelKind::Pnn) => TrainedModel::Pnn(pnn::train(&train, &TrainConfig { seed, ..settings.pnn })?.model),
        (false, ModelKind::Brbpnn) => {
            TrainedModel::Brbpnn(brbpnn::train(&train, &BrConfig { seed, ..settings.br })?.model)
        }
    };
    let scaled: Vec<f64> = test.x.iter().map(|x| trained.predict(x)).collect::<Result<_, _>>()?;
    let pinned = matches!(&trained, TrainedModel::Brbpnn(m) if m.pinned);

    Ok(SeriesEval {
        key: series.key.clone(),
        model: kind,
        split: split.mode,
        seed,
        n_train: parts.train.len(),
        n_discarded: parts.assignment.iter().filter(|p| **p == Partition::Discarded).count(),
        mse: mse(&scaled, &test.y)?,
        pearson: pearson(&scaled, &test.y)?,
        spearman: spearman(&scaled, &test.y)?,
        constant_target,
        pinned,
        predicted: scaled.iter().map(|&s| normalizer.invert_target(s)).collect(),
        actual: parts.test.counts.iter().map(|&c| c as f64).collect(),
        test_params: parts.test.params,
        normalizer,
        trained,
        assignment: parts.assignment,
    })
}

/// One row of `report.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BbRecord {
    pub app: String,
    pub kernel_id: u32,
    pub bb_id: u32,
    pub split: SplitMode,
    pub model: ModelKind,
    pub seed: u64,
    pub n_train: usize,
    pub n_test: usize,
    pub n_discarded: usize,
    pub mse: f64,
    pub pearson: Option<f64>,
    pub spearman: Option<f64>,
    pub constant_target: bool,
    pub pinned: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub key: SeriesKey,
    pub split: SplitMode,
    pub model: ModelKind,
    pub reason: String,
}

/// Per (app, split, model) aggregate; one row of `summary.csv`.
///
/// `avg_mse` averages every scored series. The `varying` columns leave out
/// series whose training target was constant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub app: String,
    pub split: SplitMode,
    pub model: ModelKind,
    pub n_series: usize,
    pub n_varying: usize,
    pub n_failed: usize,
    pub avg_mse: f64,
    pub accuracy_percent: f64,
    pub avg_mse_varying: Option<f64>,
    pub accuracy_varying: Option<f64>,
    pub mean_pearson: Option<f64>,
    pub mean_spearman: Option<f64>,
    pub n_constant_target: usize,
    pub n_pinned: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub records: Vec<BbRecord>,
    pub failures: Vec<Failure>,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Empty cell for an undefined value.
pub const UNDEFINED: &str = "NA";

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| UNDEFINED.to_string(), |v| v.to_string())
}

impl EvalReport {
    pub fn aggregates(&self) -> Vec<Aggregate> {
        let mut groups: BTreeMap<(String, &'static str, ModelKind), (SplitMode, Vec<&BbRecord>, usize)> =
            BTreeMap::new();
        for r in &self.records {
            groups.entry((r.app.clone(), r.split.as_str(), r.model)).or_insert((r.split, Vec::new(), 0)).1.push(r);
        }
        for f in &self.failures {
            groups.entry((f.key.app.clone(), f.split.as_str(), f.model)).or_insert((f.split, Vec::new(), 0)).2 += 1;
        }
        groups
            .into_iter()
            .map(|((app, _, model), (split, rs, n_failed))| {
                let avg_mse = mean(rs.iter().map(|r| r.mse)).unwrap_or(0.0);
                let avg_mse_varying = mean(rs.iter().filter(|r| !r.constant_target).map(|r| r.mse));
                Aggregate {
                    app,
                    split,
                    model,
                    n_series: rs.len(),
                    n_varying: rs.iter().filter(|r| !r.constant_target).count(),
                    n_failed,
                    avg_mse,
                    accuracy_percent: accuracy_percent(avg_mse),
                    avg_mse_varying,
                    accuracy_varying: avg_mse_varying.map(accuracy_percent),
                    mean_pearson: mean(rs.iter().filter_map(|r| r.pearson)),
                    mean_spearman: mean(rs.iter().filter_map(|r| r.spearman)),
                    n_constant_target: rs.iter().filter(|r| r.constant_target).count(),
                    n_pinned: rs.iter().filter(|r| r.pinned).count(),
                }
            })
            .collect()
    }

    pub fn write_records<W: Write>(&self, w: W) -> csv::Result<()> {
        let mut out = csv_writer(w);
        out.write_record([
            "app",
            "kernel_id",
            "bb_id",
            "split",
            "model",
            "seed",
            "n_train",
            "n_test",
            "n_discarded",
            "mse",
            "pearson",
            "spearman",
            "constant_target",
            "pinned_hyperparams",
        ])?;
        for r in &self.records {
            out.write_record([
                r.app.clone(),
                r.kernel_id.to_string(),
                r.bb_id.to_string(),
                r.split.as_str().to_string(),
                r.model.to_string(),
                r.seed.to_string(),
                r.n_train.to_string(),
                r.n_test.to_string(),
                r.n_discarded.to_string(),
                r.mse.to_string(),
                cell(r.pearson),
                cell(r.spearman),
                r.constant_target.to_string(),
                r.pinned.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn write_summary<W: Write>(&self, w: W) -> csv::Result<()> {
        let mut out = csv_writer(w);
        out.write_record([
            "app",
            "split",
            "model",
            "n_series",
            "n_varying",
            "n_failed",
            "avg_mse",
            "accuracy_percent",
            "avg_mse_varying",
            "accuracy_varying",
            "mean_pearson",
            "mean_spearman",
            "n_constant_target",
            "n_pinned",
        ])?;
        for a in self.aggregates() {
            out.write_record([
                a.app,
                a.split.as_str().to_string(),
                a.model.to_string(),
                a.n_series.to_string(),
                a.n_varying.to_string(),
                a.n_failed.to_string(),
                a.avg_mse.to_string(),
                a.accuracy_percent.to_string(),
                cell(a.avg_mse_varying),
                cell(a.accuracy_varying),
                cell(a.mean_pearson),
                cell(a.mean_spearman),
                a.n_constant_target.to_string(),
                a.n_pinned.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub fraction: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub mse: Option<f64>,
    pub accuracy_percent: Option<f64>,
    /// Why the point was not scored.
    pub skipped: Option<String>,
    pub constant_target: bool,
}

pub fn check_fractions(fractions: &[f64]) -> Result<(), EvalError> {
    if fractions.is_empty() {
        return Err(EvalError::Fractions("no fractions given".into()));
    }
    if let Some(f) = fractions.iter().find(|f| !(**f > 0.0 && **f < 1.0)) {
        return Err(EvalError::Fractions(format!("{f} is outside (0, 1)")));
    }
    if fractions.windows(2).any(|w| w[1] <= w[0]) {
        return Err(EvalError::Fractions("fractions must be strictly increasing".into()));
    }
    Ok(())
}

/// Random-split evaluation at each training fraction with a shared seed.
/// A fraction whose split or training fails yields a skipped point.
pub fn learning_curve(
    series: &BbSeries,
    kind: ModelKind,
    settings: &ModelSettings,
    fractions: &[f64],
    seed: u64,
) -> Result<Vec<CurvePoint>, EvalError> {
    check_fractions(fractions)?;
    Ok(fractions
        .iter()
        .map(|&fraction| {
            let spec = SplitSpec { mode: SplitMode::Random, fraction, seed };
            match evaluate_series(series, &spec, kind, settings) {
                Ok(e) => CurvePoint {
                    fraction,
                    n_train: e.n_train,
                    n_test: e.n_test(),
                    mse: Some(e.mse),
                    accuracy_percent: Some(accuracy_percent(e.mse)),
                    skipped: None,
                    constant_target: e.constant_target,
                },
                Err(err) => {
                    let n_train = trace::train_size(series.len(), fraction).min(series.len());
                    CurvePoint {
                        fraction,
                        n_train,
                        n_test: series.len() - n_train,
                        mse: None,
                        accuracy_percent: None,
                        skipped: Some(err.to_string()),
                        constant_target: false,
                    }
                }
            }
        })
        .collect())
}

pub fn write_curve<W: Write>(points: &[CurvePoint], w: W) -> csv::Result<()> {
    let mut out = csv_writer(w);
    out.write_record(["fraction", "n_train", "n_test", "mse", "accuracy_percent", "constant_target", "skipped"])?;
    for p in points {
        out.write_record([
            p.fraction.to_string(),
            p.n_train.to_string(),
            p.n_test.to_string(),
            cell(p.mse),
            cell(p.accuracy_percent),
            p.constant_target.to_string(),
            p.skipped.clone().unwrap_or_default(),
        ])?;
    }
    out.flush()?;
    Ok(())
}
