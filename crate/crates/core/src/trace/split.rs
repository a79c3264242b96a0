use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{csv_writer, header, padded, BbSeries, Result, TraceError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitMode {
    /// Train on samples low in every feature, test on samples high in every
    /// feature; mixed samples are discarded.
    HighLow,
    /// As `HighLow`, with mixed samples added to the training set.
    MixedHighLow,
    Random,
}

impl SplitMode {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitMode::HighLow => "high-low",
            SplitMode::MixedHighLow => "mixed-high-low",
            SplitMode::Random => "random",
        }
    }
}

impl fmt::Display for SplitMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SplitMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "high-low" => Ok(SplitMode::HighLow),
            "mixed-high-low" => Ok(SplitMode::MixedHighLow),
            "random" => Ok(SplitMode::Random),
            _ => Err(format!("unknown split mode `{s}` (expected high-low, mixed-high-low or random)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub mode: SplitMode,
    pub fraction: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub const DEFAULT_FRACTION: f64 = 0.7;

    pub fn new(mode: SplitMode, fraction: f64, seed: u64) -> Result<Self> {
        if !(fraction > 0.0 && fraction < 1.0) {
            return Err(TraceError::Fraction(fraction));
        }
        Ok(SplitSpec { mode, fraction, seed })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Region {
    Low,
    High,
    Mixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Partition {
    Train,
    Test,
    Discarded,
}

impl Partition {
    pub fn as_str(self) -> &'static str {
        match self {
            Partition::Train => "train",
            Partition::Test => "test",
            Partition::Discarded => "discarded",
        }
    }
}

impl fmt::Display for Partition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone)]
pub struct SplitResult {
    pub train: BbSeries,
    pub test: BbSeries,
    /// Partition of every sample of the input series, by index.
    pub assignment: Vec<Partition>,
}

/// Per-feature cut `min + fraction * (max - min)` over the whole series.
pub fn thresholds(series: &BbSeries, fraction: f64) -> Result<Vec<f64>> {
    if series.is_empty() {
        return Err(TraceError::Empty);
    }
    series
        .feature_ranges()
        .into_iter()
        .enumerate()
        .map(|(index, (lo, hi))| {
            if hi <= lo {
                return Err(TraceError::ConstantFeature { index });
            }
            Ok(lo as f64 + fraction * (hi - lo) as f64)
        })
        .collect()
}

/// Values within this relative distance of a threshold count as equal to it.
const TIE_TOLERANCE: f64 = 1e-9;

/// LOW if every feature is at or below its threshold, HIGH if every feature
/// is above it, MIXED otherwise.
pub fn classify(params: &[i64], thresholds: &[f64]) -> Region {
    let mut low = 0;
    for (&p, &t) in params.iter().zip(thresholds) {
        if p as f64 <= t + TIE_TOLERANCE * t.abs().max(1.0) {
            low += 1;
        }
    }
    match low {
        0 => Region::High,
        l if l == params.len() => Region::Low,
        _ => Region::Mixed,
    }
}

/// `ceil(fraction * n)`, with products within 1e-9 of an integer taken as
/// that integer.
pub fn train_size(n: usize, fraction: f64) -> usize {
    let x = fraction * n as f64;
    let r = x.round();
    if (x - r).abs() < 1e-9 {
        r as usize
    } else {
        x.ceil() as usize
    }
}

pub fn split(series: &BbSeries, spec: &SplitSpec) -> Result<SplitResult> {
    if series.is_empty() {
        return Err(TraceError::Empty);
    }
    let assignment: Vec<Partition> = match spec.mode {
        SplitMode::HighLow | SplitMode::MixedHighLow => {
            let cuts = thresholds(series, spec.fraction)?;
            series
                .params
                .iter()
                .map(|p| match (classify(p, &cuts), spec.mode) {
                    (Region::Low, _) => Partition::Train,
                    (Region::High, _) => Partition::Test,
                    (Region::Mixed, SplitMode::MixedHighLow) => Partition::Train,
                    (Region::Mixed, _) => Partition::Discarded,
                })
                .collect()
        }
        SplitMode::Random => {
            let mut order: Vec<usize> = (0..series.len()).collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
            let mut assignment = vec![Partition::Test; series.len()];
            for &i in &order[..train_size(series.len(), spec.fraction)] {
                assignment[i] = Partition::Train;
            }
            assignment
        }
    };

    let pick = |want: Partition| -> Vec<usize> {
        assignment.iter().enumerate().filter(|(_, &p)| p == want).map(|(i, _)| i).collect()
    };
    let train = series.subset(&pick(Partition::Train));
    let test = series.subset(&pick(Partition::Test));
    if train.is_empty() {
        return Err(TraceError::DegenerateSplit { partition: Partition::Train });
    }
    if test.is_empty() {
        return Err(TraceError::DegenerateSplit { partition: Partition::Test });
    }
    Ok(SplitResult { train, test, assignment })
}

/// Trace CSV rows with an extra `partition` column.
pub struct SplitManifestWriter<W: Write> {
    inner: csv::Writer<W>,
    arity: usize,
}

impl<W: Write> SplitManifestWriter<W> {
    pub fn new(w: W, arity: usize) -> csv::Result<Self> {
        let mut inner = csv_writer(w);
        let mut h = header(arity);
        h.push("partition".into());
        inner.write_record(h)?;
        Ok(SplitManifestWriter { inner, arity })
    }

    pub fn write(&mut self, series: &BbSeries, assignment: &[Partition]) -> csv::Result<()> {
        for ((params, count), part) in series.params.iter().zip(&series.counts).zip(assignment) {
            let mut row = vec![series.key.app.clone(), series.key.kernel_id.to_string(), series.key.bb_id.to_string()];
            row.extend(padded(params, self.arity)?);
            row.push(count.to_string());
            row.push(part.to_string());
            self.inner.write_record(row)?;
        }
        Ok(())
    }

    pub fn flush(&mut self) -> std::io::Result<()> {
        self.inner.flush()
    }
}
