use serde::{Deserialize, Serialize};

use super::{BbSeries, Result, TraceError};

/// Min-max scaling fitted on a training series.
///
/// A dimension whose training values are all equal keeps its offset and uses
/// unit scale, so training values map to 0 and the inverse of 0 is the
/// constant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub feature_min: Vec<f64>,
    pub feature_max: Vec<f64>,
    pub target_min: f64,
    pub target_max: f64,
}

/// Scaled features and targets, row-aligned.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<f64>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.x.first().map_or(0, Vec::len)
    }
}

fn scale(min: f64, max: f64) -> f64 {
    if max > min {
        max - min
    } else {
        1.0
    }
}

impl Normalizer {
    pub fn fit(train: &BbSeries) -> Result<Self> {
        if train.is_empty() {
            return Err(TraceError::Empty);
        }
        let (feature_min, feature_max) =
            train.feature_ranges().into_iter().map(|(lo, hi)| (lo as f64, hi as f64)).unzip();
        let target_min = train.counts.iter().copied().min().unwrap_or(0) as f64;
        let target_max = train.counts.iter().copied().max().unwrap_or(0) as f64;
        Ok(Normalizer { feature_min, feature_max, target_min, target_max })
    }

    pub fn constant_target(&self) -> bool {
        self.target_max <= self.target_min
    }

    /// Scaled features; values outside the training range are not clamped.
    pub fn features(&self, params: &[i64]) -> Vec<f64> {
        params
            .iter()
            .zip(self.feature_min.iter().zip(&self.feature_max))
            .map(|(&p, (&lo, &hi))| (p as f64 - lo) / scale(lo, hi))
            .collect()
    }

    pub fn target(&self, count: f64) -> f64 {
        (count - self.target_min) / scale(self.target_min, self.target_max)
    }

    pub fn invert_target(&self, scaled: f64) -> f64 {
        scaled * scale(self.target_min, self.target_max) + self.target_min
    }

    pub fn dataset(&self, series: &BbSeries) -> Dataset {
        Dataset {
            x: series.params.iter().map(|p| self.features(p)).collect(),
            y: series.counts.iter().map(|&c| self.target(c as f64)).collect(),
        }
    }
}
