//! Trace records, per-block sample series, train/test splits and min-max
//! scaling.
//!
//! Trace CSV schema: `app,kernel_id,bb_id,p0,...,pK,count`, one row per
//! (parameter assignment, kernel, block). Rows of apps with fewer parameters
//! than the file header are zero-padded.

mod ingest;
mod normalize;
mod split;

use std::fmt;
use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cfg::CountTrace;

pub use ingest::{ingest, ingest_path, Ingested};
pub use normalize::{Dataset, Normalizer};
pub use split::{
    classify, split, thresholds, train_size, Partition, Region, SplitManifestWriter, SplitMode, SplitResult,
    SplitSpec,
};

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("line {line}: {reason}")]
    Parse { line: u64, reason: String },
    #[error("schema: {0}")]
    Schema(String),
    #[error("degenerate split: {partition} partition is empty")]
    DegenerateSplit { partition: Partition },
    #[error("feature p{index} is constant over the series; range splits need max > min")]
    ConstantFeature { index: usize },
    #[error("split fraction {0} must lie strictly between 0 and 1")]
    Fraction(f64),
    #[error("empty series")]
    Empty,
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] io::Error),
}

pub type Result<T, E = TraceError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub app: String,
    pub kernel_id: u32,
    pub bb_id: u32,
    pub params: Vec<i64>,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SeriesKey {
    pub app: String,
    pub kernel_id: u32,
    pub bb_id: u32,
}

impl fmt::Display for SeriesKey {
    /// Filename-safe form, e.g. `gemm_k0_bb3`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let app: String =
            self.app.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' }).collect();
        write!(f, "{app}_k{}_bb{}", self.kernel_id, self.bb_id)
    }
}

/// All samples of one basic block: parameter vectors and their counts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BbSeries {
    pub key: SeriesKey,
    pub params: Vec<Vec<i64>>,
    pub counts: Vec<u64>,
}

impl BbSeries {
    pub fn new(key: SeriesKey) -> Self {
        BbSeries { key, params: Vec::new(), counts: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn arity(&self) -> usize {
        self.params.first().map_or(0, Vec::len)
    }

    pub fn push(&mut self, params: Vec<i64>, count: u64) {
        self.params.push(params);
        self.counts.push(count);
    }

    /// Samples at `indices`, in the given order.
    pub fn subset(&self, indices: &[usize]) -> BbSeries {
        BbSeries {
            key: self.key.clone(),
            params: indices.iter().map(|&i| self.params[i].clone()).collect(),
            counts: indices.iter().map(|&i| self.counts[i]).collect(),
        }
    }

    /// Per-feature `(min, max)`.
    pub fn feature_ranges(&self) -> Vec<(i64, i64)> {
        (0..self.arity())
            .map(|f| {
                let col = self.params.iter().map(|p| p[f]);
                (col.clone().min().unwrap_or(0), col.max().unwrap_or(0))
            })
            .collect()
    }
}

fn header(arity: usize) -> Vec<String> {
    let mut h = vec!["app".to_string(), "kernel_id".into(), "bb_id".into()];
    h.extend((0..arity).map(|i| format!("p{i}")));
    h.push("count".into());
    h
}

pub(crate) fn csv_writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w)
}

fn padded(params: &[i64], arity: usize) -> csv::Result<Vec<String>> {
    if params.len() > arity {
        return Err(io::Error::new(
            io::ErrorKind::InvalidInput,
            format!("{} parameters exceed the file arity {arity}", params.len()),
        )
        .into());
    }
    let mut out: Vec<String> = params.iter().map(i64::to_string).collect();
    out.resize(arity, "0".into());
    Ok(out)
}

/// Writes the trace CSV header on creation, then rows.
pub struct TraceWriter<W: Write> {
    inner: csv::Writer<W>,
    arity: usize,
}

impl<W: Write> TraceWriter<W> {
    pub fn new(w: W, arity: usize) -> csv::Result<Self> {
        let mut inner = csv_writer(w);
        inner.write_record(header(arity))?;
        Ok(TraceWriter { inner, arity })
    }

    pub fn write_record(&mut self, r: &TraceRecord) -> csv::Result<()> {
        let mut row = vec![r.app.clone(), r.kernel_id.to_string(), r.bb_id.to_string()];
        row.extend(padded(&r.params, self.arity)?);
        row.push(r.count.to_string());
        self.inner.write_record(row)
    }

    /// One row per block of the trace; returns the number of rows.
    pub fn write_trace(&mut self, trace: &CountTrace) -> csv::Result<usize> {
        let params = padded(&trace.param_values, self.arity)?;
        for (&(kernel, bb), &count) in &trace.counts {
            let mut row = vec![trace.program_name.clone(), kernel.to_string(), bb.to_string()];
            row.extend(params.iter().cloned());
            row.push(count.to_string());
            self.inner.write_record(row)?;
        }
        Ok(trace.counts.len())
    }

    pub fn flush(&mut self) -> io::Result<()> {
        self.inner.flush()
    }
}
