//! Prediction metrics and plot-data artifacts.
//!
//! Errors are measured in min-max-normalized target space. Correlations are
//! `None` when undefined (fewer than two points or a constant vector).

mod report;

use std::io::Write;

pub use report::{
    check_fractions, evaluate_series, learning_curve, series_seed, write_curve, Aggregate, BbRecord, CurvePoint,
    EvalReport, Failure, ModelChoice, ModelKind, ModelSettings, SeriesError, SeriesEval, TrainedModel, UNDEFINED,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("length mismatch: {left} vs {right}")]
    Shape { left: usize, right: usize },
    #[error("empty input")]
    Empty,
    #[error("bandwidth: {0}")]
    Bandwidth(&'static str),
    #[error("heatmap needs at least 2 bins, got {0}")]
    Bins(usize),
    #[error("fractions: {0}")]
    Fractions(String),
}

pub type Result<T, E = EvalError> = std::result::Result<T, E>;

fn same_len(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(EvalError::Shape { left: a.len(), right: b.len() });
    }
    Ok(())
}

pub fn mse(pred: &[f64], actual: &[f64]) -> Result<f64> {
    same_len(pred, actual)?;
    if pred.is_empty() {
        return Err(EvalError::Empty);
    }
    Ok(pred.iter().zip(actual).map(|(p, a)| (a - p).powi(2)).sum::<f64>() / pred.len() as f64)
}

/// `100 * (1 - avg_mse)`, clamped to `[0, 100]`.
pub fn accuracy_percent(avg_mse: f64) -> f64 {
    (100.0 * (1.0 - avg_mse)).clamp(0.0, 100.0)
}

pub fn pearson(a: &[f64], b: &[f64]) -> Result<Option<f64>> {
    same_len(a, b)?;
    if a.len() < 2 {
        return Ok(None);
    }
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Ok(None);
    }
    Ok(Some((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0)))
}

/// 1-based ranks with ties sharing the mean of their positions.
pub fn ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
    let mut out = vec![0.0; v.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && v[order[end]] == v[order[start]] {
            end += 1;
        }
        let rank = (start + end + 1) as f64 / 2.0;
        for &i in &order[start..end] {
            out[i] = rank;
        }
        start = end;
    }
    out
}

pub fn spearman(a: &[f64], b: &[f64]) -> Result<Option<f64>> {
    same_len(a, b)?;
    pearson(&ranks(a), &ranks(b))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KdeCurve {
    pub bandwidth: f64,
    pub x: Vec<f64>,
    pub density: Vec<f64>,
}

pub const KDE_POINTS: usize = 256;

/// Scott's rule, `n^(-1/5) * sample standard deviation`.
pub fn scott_bandwidth(values: &[f64]) -> Result<f64> {
    if values.len() < 2 {
        return Err(EvalError::Bandwidth("need at least two values to estimate spread"));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    if var <= 0.0 {
        return Err(EvalError::Bandwidth("zero variance; pass an explicit bandwidth"));
    }
    Ok(n.powf(-0.2) * var.sqrt())
}

/// Gaussian kernel density of `values` evaluated at `x`.
pub fn kde_at(values: &[f64], bandwidth: f64, x: f64) -> f64 {
    let norm = 1.0 / (values.len() as f64 * bandwidth * (2.0 * std::f64::consts::PI).sqrt());
    values.iter().map(|v| (-0.5 * ((x - v) / bandwidth).powi(2)).exp()).sum::<f64>() * norm
}

/// Density on [`KDE_POINTS`] evenly spaced points over
/// `[min - 3h, max + 3h]`.
pub fn kde(values: &[f64], bandwidth: Option<f64>) -> Result<KdeCurve> {
    if values.is_empty() {
        return Err(EvalError::Empty);
    }
    let h = match bandwidth {
        Some(h) if h > 0.0 && h.is_finite() => h,
        Some(_) => return Err(EvalError::Bandwidth("must be positive and finite")),
        None => scott_bandwidth(values)?,
    };
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min) - 3.0 * h;
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max) + 3.0 * h;
    let step = (hi - lo) / (KDE_POINTS - 1) as f64;
    let x: Vec<f64> = (0..KDE_POINTS).map(|i| lo + step * i as f64).collect();
    let density = x.iter().map(|&x| kde_at(values, h, x)).collect();
    Ok(KdeCurve { bandwidth: h, x, density })
}

/// Joint histogram of `(actual, predicted)` raw counts on a square grid over
/// `[0, max]^2`. `cells[i][j]` holds points with actual in bin `i` and
/// prediction in bin `j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    pub bins: usize,
    pub max: f64,
    pub cells: Vec<Vec<u64>>,
}

impl Heatmap {
    pub fn bin_width(&self) -> f64 {
        if self.max > 0.0 {
            self.max / self.bins as f64
        } else {
            1.0
        }
    }

    pub fn bin_of(&self, v: f64) -> usize {
        ((v.max(0.0) / self.bin_width()) as usize).min(self.bins - 1)
    }

    pub fn total(&self) -> u64 {
        self.cells.iter().flatten().sum()
    }

    pub fn diagonal(&self) -> u64 {
        (0..self.bins).map(|i| self.cells[i][i]).sum()
    }

    /// Columns `actual_bin,pred_bin,actual_lo,actual_hi,pred_lo,pred_hi,count,diagonal`.
    pub fn write_csv<W: Write>(&self, w: W) -> csv::Result<()> {
        let mut out = crate::trace::csv_writer(w);
        out.write_record(["actual_bin", "pred_bin", "actual_lo", "actual_hi", "pred_lo", "pred_hi", "count", "diagonal"])?;
        let width = self.bin_width();
        for (i, row) in self.cells.iter().enumerate() {
            for (j, &count) in row.iter().enumerate() {
                out.write_record([
                    i.to_string(),
                    j.to_string(),
                    (width * i as f64).to_string(),
                    (width * (i + 1) as f64).to_string(),
                    (width * j as f64).to_string(),
                    (width * (j + 1) as f64).to_string(),
                    count.to_string(),
                    u8::from(i == j).to_string(),
                ])?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

/// Negative predictions land in the first bin.
pub fn heatmap_data(pred: &[f64], actual: &[f64], bins: usize) -> Result<Heatmap> {
    same_len(pred, actual)?;
    if pred.is_empty() {
        return Err(EvalError::Empty);
    }
    if bins < 2 {
        return Err(EvalError::Bins(bins));
    }
    let max = pred.iter().chain(actual).copied().filter(|v| v.is_finite()).fold(0.0, f64::max);
    let mut map = Heatmap { bins, max, cells: vec![vec![0; bins]; bins] };
    for (&p, &a) in pred.iter().zip(actual) {
        let (i, j) = (map.bin_of(a), map.bin_of(p));
        map.cells[i][j] += 1;
    }
    Ok(map)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn mse_examples() {
        assert_eq!(mse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mse(&[0.0, 0.0], &[1.0, 1.0]).unwrap(), 1.0);
        assert_eq!(mse(&[1.0, 3.0], &[2.0, 5.0]).unwrap(), 2.5);
        assert_eq!(mse(&[1.0], &[1.0, 2.0]), Err(EvalError::Shape { left: 1, right: 2 }));
        assert_eq!(mse(&[], &[]), Err(EvalError::Empty));
    }

    #[test]
    fn accuracy_is_clamped() {
        assert_eq!(accuracy_percent(0.065), 93.5);
        assert_eq!(accuracy_percent(1.7), 0.0);
        assert_eq!(accuracy_percent(0.0), 100.0);
    }

    #[test]
    fn pearson_examples() {
        let a = [1.0, 2.0, 3.0, 4.0];
        let b: Vec<f64> = a.iter().map(|x| 3.0 * x + 1.0).collect();
        assert!((pearson(&a, &b).unwrap().unwrap() - 1.0).abs() < 1e-15);
        let neg: Vec<f64> = a.iter().map(|x| -x).collect();
        assert!((pearson(&a, &neg).unwrap().unwrap() + 1.0).abs() < 1e-15);
        let r = pearson(&[1.0, 2.0, 3.0], &[1.0, 2.0, 4.0]).unwrap().unwrap();
        assert!((r - 0.981_980_506_061_965_7).abs() < 1e-12);
        assert_eq!(pearson(&[1.0, 1.0], &[1.0, 2.0]).unwrap(), None);
        assert_eq!(pearson(&[1.0], &[1.0]).unwrap(), None);
        assert!(pearson(&[1.0, 2.0], &[1.0]).is_err());
    }

    #[test]
    fn spearman_examples() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0];
        let cubed: Vec<f64> = a.iter().map(|x: &f64| x.powi(3)).collect();
        assert!((spearman(&a, &cubed).unwrap().unwrap() - 1.0).abs() < 1e-15);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 1.0, 2.0]).unwrap().unwrap() + 0.5).abs() < 1e-15);
        assert_eq!(spearman(&[2.0, 2.0, 2.0], &[1.0, 2.0, 3.0]).unwrap(), None);
    }

    #[test]
    fn ties_get_average_ranks() {
        assert_eq!(ranks(&[10.0, 20.0, 10.0, 30.0]), vec![1.5, 3.0, 1.5, 4.0]);
        assert_eq!(ranks(&[5.0, 5.0, 5.0]), vec![2.0, 2.0, 2.0]);
    }

    #[test]
    fn kde_single_point_peak() {
        let curve = kde(&[4.0], Some(1.0)).unwrap();
        assert_eq!(curve.x.len(), KDE_POINTS);
        assert!((kde_at(&[4.0], 1.0, 4.0) - 0.398_942_280_401_432_7).abs() < 1e-12);
        let peak = curve.density.iter().copied().fold(0.0, f64::max);
        // Grid points straddle x0; the nearest lies within half a step of it.
        assert!((peak - 0.398_942_280_401_432_7).abs() < 1e-3);
        assert_eq!((curve.x[0], curve.x[KDE_POINTS - 1]), (1.0, 7.0));
    }

    #[test]
    fn kde_integrates_to_one() {
        let values: Vec<f64> = (0..40).map(|i| (i as f64 * 0.37).sin() * 10.0 + i as f64).collect();
        let curve = kde(&values, None).unwrap();
        let area: f64 = curve.x.windows(2).zip(curve.density.windows(2)).map(|(x, d)| (x[1] - x[0]) * (d[0] + d[1]) / 2.0).sum();
        assert!((area - 1.0).abs() < 1e-3, "{area}");
    }

    #[test]
    fn kde_symmetric_input_gives_symmetric_curve() {
        let curve = kde(&[-2.5, 2.5], None).unwrap();
        for i in 0..KDE_POINTS {
            let j = KDE_POINTS - 1 - i;
            assert!((curve.x[i] + curve.x[j]).abs() < 1e-12);
            assert!((curve.density[i] - curve.density[j]).abs() < 1e-15);
        }
    }

    #[test]
    fn kde_bandwidth_errors() {
        assert!(matches!(kde(&[3.0, 3.0], None), Err(EvalError::Bandwidth(_))));
        assert!(matches!(kde(&[3.0], None), Err(EvalError::Bandwidth(_))));
        assert!(matches!(kde(&[3.0], Some(-1.0)), Err(EvalError::Bandwidth(_))));
        assert_eq!(kde(&[], Some(1.0)), Err(EvalError::Empty));
        let h = scott_bandwidth(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert!((h - 4f64.powf(-0.2) * (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn heatmap_identity_is_diagonal() {
        let v = [0.0, 10.0, 35.0, 99.0, 100.0];
        let map = heatmap_data(&v, &v, 10).unwrap();
        assert_eq!(map.total(), 5);
        assert_eq!(map.diagonal(), 5);
    }

    #[test]
    fn heatmap_conserves_mass_and_bins_by_hand() {
        // max = 8, two bins of width 4: actual 1 -> bin 0, prediction 6 -> bin 1.
        let map = heatmap_data(&[6.0, 1.0, 3.0, 8.0], &[1.0, 2.0, 7.0, 8.0], 2).unwrap();
        assert_eq!(map.total(), 4);
        assert_eq!(map.cells, vec![vec![1, 1], vec![1, 1]]);
        assert_eq!(map.cells[0][1], 1);
        assert_eq!(heatmap_data(&[], &[], 2), Err(EvalError::Empty));
        assert_eq!(heatmap_data(&[1.0], &[1.0], 1), Err(EvalError::Bins(1)));
        assert!(heatmap_data(&[1.0], &[1.0, 2.0], 2).is_err());
    }

    #[test]
    fn heatmap_csv_layout() {
        let map = heatmap_data(&[1.0, 2.0], &[1.0, 2.0], 2).unwrap();
        let mut buf = Vec::new();
        map.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 5);
        assert_eq!(lines[0], "actual_bin,pred_bin,actual_lo,actual_hi,pred_lo,pred_hi,count,diagonal");
        assert_eq!(lines[1], "0,0,0,1,0,1,0,1");
        assert_eq!(lines[4], "1,1,1,2,1,2,2,1");
        assert!(!text.contains('\r'));
    }

    proptest! {
        #[test]
        fn spearman_is_invariant_under_increasing_maps(
            a in prop::collection::vec(-50.0f64..50.0, 2..30),
            b in prop::collection::vec(-50.0f64..50.0, 2..30),
        ) {
            let n = a.len().min(b.len());
            let (a, b) = (&a[..n], &b[..n]);
            let mapped: Vec<f64> = b.iter().map(|x| x.exp() * 0.5 + 3.0 * x).collect();
            prop_assert_eq!(spearman(a, b).unwrap(), spearman(a, &mapped).unwrap());
        }
    }
}
