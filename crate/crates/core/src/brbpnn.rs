//! Bayesian-regularized backpropagation network.
//!
//! A tansig hidden layer with linear output, fitted by Levenberg-Marquardt on
//! `F = beta * E_D + alpha * E_W`, where `E_D` is the sum of squared residuals
//! and `E_W` the sum of squared parameters. After every accepted step the
//! coefficients are re-estimated with the evidence approximation:
//!
//! ```text
//! gamma = N - alpha * tr((beta J'J + alpha I)^-1)
//! alpha = gamma / (2 E_W)
//! beta  = (n - gamma) / (2 E_D)
//! ```

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::Mlp;
use crate::trace::Dataset;

pub const HYPER_MIN: f64 = 1e-12;
pub const HYPER_MAX: f64 = 1e12;
pub const DEFAULT_EPOCHS: usize = 1000;

#[derive(Debug, Error, PartialEq)]
pub enum BrError {
    #[error("damped normal equations are singular")]
    Singular,
    #[error("input has {found} features, model expects {expected}")]
    Shape { expected: usize, found: usize },
    #[error("empty training set")]
    Empty,
    #[error("non-finite objective at epoch {epoch}")]
    NonFinite { epoch: usize },
}

pub type Result<T, E = BrError> = std::result::Result<T, E>;

/// `2 / (1 + exp(-2x)) - 1`.
pub fn tansig(x: f64) -> f64 {
    2.0 / (1.0 + (-2.0 * x).exp()) - 1.0
}

/// A differentiable scalar regressor whose parameters Levenberg-Marquardt
/// can adjust.
pub trait ResidualModel {
    fn params(&self) -> Vec<f64>;
    fn set_params(&mut self, params: &[f64]);
    fn predict(&self, x: &[f64]) -> f64;
    /// Writes `d prediction / d params` into `row` and returns the prediction.
    fn gradient_row(&self, x: &[f64], row: &mut [f64]) -> f64;

    fn num_params(&self) -> usize {
        self.params().len()
    }
}

/// One-hidden-layer tansig network with a linear output unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BrNet {
    #[serde(flatten)]
    pub net: Mlp,
}

impl BrNet {
    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.net.input_dim() {
            return Err(BrError::Shape { expected: self.net.input_dim(), found: x.len() });
        }
        Ok(self.predict(x))
    }
}

impl ResidualModel for BrNet {
    fn params(&self) -> Vec<f64> {
        self.net.flat()
    }

    fn set_params(&mut self, params: &[f64]) {
        self.net.set_flat(params);
    }

    fn predict(&self, x: &[f64]) -> f64 {
        self.net.hidden_and_output(x, tansig).1
    }

    fn num_params(&self) -> usize {
        self.net.num_params()
    }

    fn gradient_row(&self, x: &[f64], row: &mut [f64]) -> f64 {
        let (h, z) = self.net.hidden_and_output(x, tansig);
        let (hidden, input) = (self.net.hidden_dim(), self.net.input_dim());
        let (b1_at, w2_at) = (hidden * input, hidden * input + hidden);
        for j in 0..hidden {
            let da = self.net.w2[j] * (1.0 - h[j] * h[j]);
            for k in 0..input {
                row[j * input + k] = da * x[k];
            }
            row[b1_at + j] = da;
            row[w2_at + j] = h[j];
        }
        row[w2_at + hidden] = 1.0;
        z
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyper {
    pub alpha: f64,
    pub beta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Objective {
    pub f: f64,
    pub e_d: f64,
    pub e_w: f64,
}

pub fn objective<M: ResidualModel>(model: &M, data: &Dataset, hyper: Hyper) -> Objective {
    let e_d: f64 = data.x.iter().zip(&data.y).map(|(x, y)| (y - model.predict(x)).powi(2)).sum();
    let e_w: f64 = model.params().iter().map(|w| w * w).sum();
    Objective { f: hyper.beta * e_d + hyper.alpha * e_w, e_d, e_w }
}

/// Gauss-Newton quantities at the current parameters, with residuals
/// `e = prediction - target`.
#[derive(Debug, Clone)]
pub struct NormalSystem {
    pub jtj: DMatrix<f64>,
    pub jte: DVector<f64>,
    pub e_d: f64,
    pub e_w: f64,
    pub n_samples: usize,
}

pub fn jacobian<M: ResidualModel>(model: &M, data: &Dataset) -> (DMatrix<f64>, DVector<f64>) {
    let p = model.num_params();
    let mut j = DMatrix::zeros(data.len(), p);
    let mut e = DVector::zeros(data.len());
    let mut row = vec![0.0; p];
    for (i, (x, y)) in data.x.iter().zip(&data.y).enumerate() {
        let pred = model.gradient_row(x, &mut row);
        j.row_mut(i).copy_from_slice(&row);
        e[i] = pred - y;
    }
    (j, e)
}

pub fn normal_system<M: ResidualModel>(model: &M, data: &Dataset) -> NormalSystem {
    let (j, e) = jacobian(model, data);
    let e_w = model.params().iter().map(|w| w * w).sum();
    NormalSystem { jtj: j.tr_mul(&j), jte: j.tr_mul(&e), e_d: e.norm_squared(), e_w, n_samples: data.len() }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LmState {
    pub mu: f64,
    pub mu_inc: f64,
    pub mu_dec: f64,
    pub mu_max: f64,
    pub epoch: usize,
}

impl Default for LmState {
    fn default() -> Self {
        LmState { mu: 0.005, mu_inc: 10.0, mu_dec: 0.1, mu_max: 1e10, epoch: 0 }
    }
}

const MU_FLOOR: f64 = 1e-20;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LmOutcome {
    Accepted { before: Objective, after: Objective },
    /// `mu` passed `mu_max` without finding a decrease; parameters unchanged.
    Stalled { at: Objective },
}

/// Solves `(beta J'J + (mu + alpha) I) d = -(beta J'e + alpha w)`.
pub fn lm_direction(sys: &NormalSystem, params: &[f64], hyper: Hyper, mu: f64) -> Result<DVector<f64>> {
    let p = params.len();
    let w = DVector::from_column_slice(params);
    let a = &sys.jtj * hyper.beta + DMatrix::identity(p, p) * (mu + hyper.alpha);
    let rhs = -(&sys.jte * hyper.beta + w * hyper.alpha);
    if let Some(chol) = a.clone().cholesky() {
        return Ok(chol.solve(&rhs));
    }
    let d = a.lu().solve(&rhs).ok_or(BrError::Singular)?;
    if d.iter().all(|v| v.is_finite()) {
        Ok(d)
    } else {
        Err(BrError::Singular)
    }
}

/// One damped trial at the current `mu`. On a strict decrease of `F` the step
/// is kept and `mu` shrinks; otherwise parameters are left untouched and `mu`
/// grows.
pub fn lm_attempt<M: ResidualModel>(
    model: &mut M,
    state: &mut LmState,
    sys: &NormalSystem,
    data: &Dataset,
    hyper: Hyper,
) -> Result<Option<Objective>> {
    let current = model.params();
    let f_now = hyper.beta * sys.e_d + hyper.alpha * sys.e_w;
    let d = lm_direction(sys, &current, hyper, state.mu)?;
    let trial: Vec<f64> = current.iter().zip(d.iter()).map(|(w, d)| w + d).collect();
    model.set_params(&trial);
    let after = objective(model, data, hyper);
    if after.f.is_finite() && after.f < f_now {
        state.mu = (state.mu * state.mu_dec).max(MU_FLOOR);
        Ok(Some(after))
    } else {
        model.set_params(&current);
        state.mu *= state.mu_inc;
        Ok(None)
    }
}

/// Retries [`lm_attempt`] with growing damping until `F` decreases or `mu`
/// exceeds `mu_max`. Returns the outcome and the system built before the step.
pub fn lm_step<M: ResidualModel>(
    model: &mut M,
    state: &mut LmState,
    data: &Dataset,
    hyper: Hyper,
) -> Result<(LmOutcome, NormalSystem)> {
    let sys = normal_system(model, data);
    let before = Objective { f: hyper.beta * sys.e_d + hyper.alpha * sys.e_w, e_d: sys.e_d, e_w: sys.e_w };
    while state.mu <= state.mu_max {
        if let Some(after) = lm_attempt(model, state, &sys, data, hyper)? {
            return Ok((LmOutcome::Accepted { before, after }, sys));
        }
    }
    Ok((LmOutcome::Stalled { at: before }, sys))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evidence {
    pub alpha: f64,
    pub beta: f64,
    /// Effective number of parameters.
    pub gamma: f64,
    /// A coefficient hit the upper clamp because its error term was zero.
    pub pinned: bool,
}

/// `gamma = N - alpha tr((beta H + alpha I)^-1)`, evaluated on the
/// eigenvalues of `H = J'J` as `sum beta l / (beta l + alpha)`.
pub fn effective_params(jtj: &DMatrix<f64>, hyper: Hyper) -> f64 {
    if hyper.alpha == 0.0 {
        return jtj.nrows() as f64;
    }
    let eig = SymmetricEigen::new(jtj.clone());
    eig.eigenvalues
        .iter()
        .map(|&l| {
            let bl = hyper.beta * l.max(0.0);
            bl / (bl + hyper.alpha)
        })
        .sum()
}

pub fn update_hyperparams(jtj: &DMatrix<f64>, hyper: Hyper, e_d: f64, e_w: f64, n_samples: usize) -> Evidence {
    let gamma = effective_params(jtj, hyper);
    let mut pinned = false;
    let mut coef = |num: f64, err: f64| {
        if err > 0.0 {
            (num / (2.0 * err)).clamp(HYPER_MIN, HYPER_MAX)
        } else {
            pinned = true;
            HYPER_MAX
        }
    };
    let alpha = coef(gamma, e_w);
    let beta = coef(n_samples as f64 - gamma, e_d);
    Evidence { alpha, beta, gamma, pinned }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BrConfig {
    pub hidden: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub lm: LmState,
    /// Holds `alpha` and `beta` fixed instead of re-estimating them.
    pub fixed: Option<Hyper>,
}

impl Default for BrConfig {
    fn default() -> Self {
        BrConfig { hidden: 1, max_epochs: DEFAULT_EPOCHS, seed: 0, lm: LmState::default(), fixed: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub accepted: bool,
    /// `F` before and after the step, both under the coefficients in force
    /// during the step.
    pub f_before: f64,
    pub f_after: f64,
    pub e_d: f64,
    pub e_w: f64,
    /// Coefficients after re-estimation.
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub mu: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    EpochCap,
    MuMax,
    Converged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BrbpnnModel {
    #[serde(flatten)]
    pub net: BrNet,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub mu: f64,
    pub pinned: bool,
}

impl BrbpnnModel {
    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        self.net.forward(x)
    }
}

#[derive(Debug, Clone)]
pub struct BrOutcome {
    pub model: BrbpnnModel,
    pub history: Vec<EpochRecord>,
    pub stop: StopReason,
}

/// Relative change below which an epoch counts as stationary.
const STATIONARY_TOL: f64 = 1e-7;
const STATIONARY_EPOCHS: usize = 5;

fn rel_change(now: f64, before: f64) -> f64 {
    (now - before).abs() / before.abs().max(f64::MIN_POSITIVE)
}

fn initial_hyper(e_d: f64, e_w: f64, n: usize, num_params: usize) -> Hyper {
    let gamma = num_params as f64;
    let beta = if e_d > 0.0 && n as f64 > gamma { (n as f64 - gamma) / (2.0 * e_d) } else { 1.0 };
    let alpha = if e_w > 0.0 { gamma / (2.0 * e_w) } else { 1.0 };
    Hyper { alpha: alpha.clamp(HYPER_MIN, HYPER_MAX), beta: beta.clamp(HYPER_MIN, HYPER_MAX) }
}

/// Full-batch Levenberg-Marquardt with evidence re-estimation after each
/// accepted epoch.
pub fn train(data: &Dataset, cfg: &BrConfig) -> Result<BrOutcome> {
    if data.is_empty() {
        return Err(BrError::Empty);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut net = BrNet { net: Mlp::init_uniform(data.input_dim(), cfg.hidden, &mut rng) };
    let n_params = net.num_params();
    let mut state = cfg.lm;
    let start = objective(&net, data, Hyper { alpha: 0.0, beta: 1.0 });
    let mut hyper = cfg.fixed.unwrap_or_else(|| initial_hyper(start.e_d, start.e_w, data.len(), n_params));
    let mut gamma = n_params as f64;
    let mut pinned = false;
    let mut history: Vec<EpochRecord> = Vec::new();
    let mut stop = StopReason::EpochCap;
    let mut stationary = 0;

    for epoch in 0..cfg.max_epochs {
        state.epoch = epoch;
        let (outcome, sys) = lm_step(&mut net, &mut state, data, hyper)?;
        let (before, after) = match outcome {
            LmOutcome::Accepted { before, after } => (before, after),
            LmOutcome::Stalled { at } => {
                history.push(EpochRecord {
                    epoch,
                    accepted: false,
                    f_before: at.f,
                    f_after: at.f,
                    e_d: at.e_d,
                    e_w: at.e_w,
                    alpha: hyper.alpha,
                    beta: hyper.beta,
                    gamma,
                    mu: state.mu,
                });
                stop = StopReason::MuMax;
                break;
            }
        };
        if !after.f.is_finite() {
            return Err(BrError::NonFinite { epoch });
        }
        if cfg.fixed.is_none() {
            let ev = update_hyperparams(&sys.jtj, hyper, after.e_d, after.e_w, data.len());
            hyper = Hyper { alpha: ev.alpha, beta: ev.beta };
            gamma = ev.gamma;
            pinned |= ev.pinned;
        } else {
            gamma = effective_params(&sys.jtj, hyper);
        }
        let record = EpochRecord {
            epoch,
            accepted: true,
            f_before: before.f,
            f_after: after.f,
            e_d: after.e_d,
            e_w: after.e_w,
            alpha: hyper.alpha,
            beta: hyper.beta,
            gamma,
            mu: state.mu,
        };
        if let Some(prev) = history.last() {
            let still = rel_change(record.gamma, prev.gamma) < STATIONARY_TOL
                && rel_change(record.e_d, prev.e_d) < STATIONARY_TOL
                && rel_change(record.e_w, prev.e_w) < STATIONARY_TOL;
            stationary = if still { stationary + 1 } else { 0 };
        }
        history.push(record);
        if stationary >= STATIONARY_EPOCHS {
            stop = StopReason::Converged;
            break;
        }
    }

    let model = BrbpnnModel { net, alpha: hyper.alpha, beta: hyper.beta, gamma, mu: state.mu, pinned };
    Ok(BrOutcome { model, history, stop })
}
