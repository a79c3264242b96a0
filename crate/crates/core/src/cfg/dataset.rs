use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{CfgError, CfgProgram, Interpreter, Result};
use crate::trace::TraceWriter;

/// Values taken by one parameter in a sweep.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Axis {
    /// `k` evenly spaced integers across the declared range, deduplicated.
    Points(usize),
    /// Inclusive arithmetic progression.
    Stepped { start: i64, end: i64, step: i64 },
    Values(Vec<i64>),
}

/// Cartesian parameter grid, one axis per program parameter.
///
/// Text form: axes joined by `x`, each axis is `K` (K evenly spaced points),
/// `A:B:S` (A to B inclusive by S) or a comma list `v1,v2,...` (a single
/// explicit value is written `v,`). Example: `4x4x4`, `10,20,30`, `8x1:64:8`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct GridSpec {
    axes: Vec<Axis>,
}

impl GridSpec {
    pub fn new(axes: Vec<Axis>) -> Self {
        GridSpec { axes }
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    /// All assignments in row-major order (last parameter varies fastest).
    pub fn assignments(&self, program: &CfgProgram) -> Result<Vec<Vec<i64>>> {
        if self.axes.len() != program.arity() {
            return Err(CfgError::Grid(format!(
                "{} axes given for {} parameters of `{}`",
                self.axes.len(),
                program.arity(),
                program.name()
            )));
        }
        let mut values = Vec::with_capacity(self.axes.len());
        for (axis, decl) in self.axes.iter().zip(program.params()) {
            let vals = match axis {
                Axis::Points(k) => evenly_spaced(decl.min, decl.max, *k),
                Axis::Stepped { start, end, step } => {
                    if *step <= 0 {
                        return Err(CfgError::Grid(format!("non-positive step {step}")));
                    }
                    (*start..=*end).step_by(*step as usize).collect()
                }
                Axis::Values(v) => v.clone(),
            };
            if vals.is_empty() {
                return Err(CfgError::Grid(format!("axis for `{}` is empty", decl.name)));
            }
            values.push(vals);
        }

        let mut out = vec![Vec::new()];
        for vals in &values {
            out = out
                .into_iter()
                .flat_map(|prefix| {
                    vals.iter().map(move |&v| {
                        let mut next = prefix.clone();
                        next.push(v);
                        next
                    })
                })
                .collect();
        }
        Ok(out)
    }
}

fn evenly_spaced(min: i64, max: i64, k: usize) -> Vec<i64> {
    match k {
        0 => Vec::new(),
        1 => vec![min],
        _ => {
            let span = (max - min) as f64;
            let mut v: Vec<i64> =
                (0..k).map(|i| min + (span * i as f64 / (k - 1) as f64).round() as i64).collect();
            v.dedup();
            v
        }
    }
}

impl FromStr for GridSpec {
    type Err = CfgError;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.is_empty() {
            return Err(CfgError::Grid("empty grid".into()));
        }
        let bad = |what: &str| CfgError::Grid(format!("cannot parse axis `{what}`"));
        let mut axes = Vec::new();
        for part in s.split('x') {
            let part = part.trim();
            let axis = if part.contains(':') {
                let nums: Vec<i64> =
                    part.split(':').map(|t| t.trim().parse()).collect::<Result<_, _>>().map_err(|_| bad(part))?;
                match nums[..] {
                    [start, end] => Axis::Stepped { start, end, step: 1 },
                    [start, end, step] => Axis::Stepped { start, end, step },
                    _ => return Err(bad(part)),
                }
            } else if part.contains(',') {
                let vals = part
                    .split(',')
                    .map(str::trim)
                    .filter(|t| !t.is_empty())
                    .map(str::parse)
                    .collect::<Result<Vec<i64>, _>>()
                    .map_err(|_| bad(part))?;
                Axis::Values(vals)
            } else {
                let k: usize = part.parse().map_err(|_| bad(part))?;
                if k == 0 {
                    return Err(CfgError::Grid("axis with zero points".into()));
                }
                Axis::Points(k)
            };
            if matches!(&axis, Axis::Values(v) if v.is_empty()) {
                return Err(CfgError::Grid("axis with no values".into()));
            }
            axes.push(axis);
        }
        Ok(GridSpec { axes })
    }
}

impl fmt::Display for GridSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .axes
            .iter()
            .map(|a| match a {
                Axis::Points(k) => k.to_string(),
                Axis::Stepped { start, end, step } => format!("{start}:{end}:{step}"),
                Axis::Values(v) if v.len() == 1 => format!("{},", v[0]),
                Axis::Values(v) => v.iter().map(i64::to_string).collect::<Vec<_>>().join(","),
            })
            .collect();
        f.write_str(&parts.join("x"))
    }
}

impl TryFrom<String> for GridSpec {
    type Error = CfgError;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<GridSpec> for String {
    fn from(g: GridSpec) -> String {
        g.to_string()
    }
}

/// Interprets `program` at every grid point and writes one record per
/// `(assignment, kernel, block)`. Interpretation runs in parallel; records are
/// written in grid order. Returns the number of records written.
pub fn generate_dataset<W: Write>(
    program: &CfgProgram,
    grid: &GridSpec,
    interpreter: &Interpreter,
    sink: &mut TraceWriter<W>,
) -> Result<usize> {
    let assignments = grid.assignments(program)?;
    let traces: Vec<_> =
        assignments.par_iter().map(|params| interpreter.run(program, params)).collect::<Result<_>>()?;
    let mut written = 0;
    for trace in &traces {
        written += sink.write_trace(trace)?;
    }
    sink.flush()?;
    Ok(written)
}
