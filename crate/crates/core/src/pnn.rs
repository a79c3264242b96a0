//! Poisson neural network: tanh hidden layer, softplus rate output, trained
//! on the Poisson negative log-likelihood with Adam.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;
use thiserror::Error;

use crate::nn::Mlp;
use crate::trace::Dataset;

pub const DEFAULT_EPS: f64 = 1e-8;
pub const DEFAULT_HIDDEN: usize = 10;

#[derive(Debug, Error, PartialEq)]
pub enum PnnError {
    #[error("Poisson rate must be positive, got {0}")]
    Domain(f64),
    #[error("non-finite value in loss: input {input}, target {target}")]
    NonFinite { input: f64, target: f64 },
    #[error("input has {found} features, model expects {expected}")]
    Shape { expected: usize, found: usize },
    #[error("non-finite gradient in parameter block {block}")]
    Gradient { block: &'static str },
    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("empty training set")]
    Empty,
}

pub type Result<T, E = PnnError> = std::result::Result<T, E>;

/// `P(Y = j)` for a Poisson variable with mean `lambda`, evaluated in log
/// space.
pub fn poisson_pmf(lambda: f64, j: u64) -> Result<f64> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(PnnError::Domain(lambda));
    }
    let jf = j as f64;
    Ok((jf * lambda.ln() - lambda - ln_gamma(jf + 1.0)).exp())
}

/// `input - target * ln(input + eps)`: the Poisson NLL on a rate (not a
/// log-rate), dropping the `ln(target!)` constant.
pub fn poisson_nll(input: f64, target: f64, eps: f64) -> Result<f64> {
    if !input.is_finite() || !target.is_finite() {
        return Err(PnnError::NonFinite { input, target });
    }
    Ok(input - target * (input + eps).ln())
}

/// Mean of [`poisson_nll`] over a batch.
pub fn batch_nll(inputs: &[f64], targets: &[f64], eps: f64) -> Result<f64> {
    let mut total = 0.0;
    for (&i, &t) in inputs.iter().zip(targets) {
        total += poisson_nll(i, t, eps)?;
    }
    Ok(total / inputs.len().max(1) as f64)
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PnnModel {
    #[serde(flatten)]
    pub net: Mlp,
    pub eps: f64,
}

impl PnnModel {
    pub fn new(net: Mlp, eps: f64) -> Self {
        PnnModel { net, eps }
    }

    /// `softplus(W2 tanh(W1 x + b1) + b2) + eps`, always strictly positive.
    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        self.check(x)?;
        let (_, z) = self.net.hidden_and_output(x, f64::tanh);
        Ok(softplus(z) + self.eps)
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.net.input_dim() {
            return Err(PnnError::Shape { expected: self.net.input_dim(), found: x.len() });
        }
        Ok(())
    }

    /// Mean batch loss and its gradient with respect to every parameter, in
    /// the shape of the network.
    pub fn loss_and_grad(&self, xs: &[&[f64]], ys: &[f64]) -> Result<(f64, Mlp)> {
        let b = xs.len().max(1) as f64;
        let mut grad = Mlp::zeros(self.net.input_dim(), self.net.hidden_dim());
        let mut loss = 0.0;
        for (x, &t) in xs.iter().zip(ys) {
            self.check(x)?;
            let (h, z) = self.net.hidden_and_output(x, f64::tanh);
            let out = softplus(z) + self.eps;
            loss += poisson_nll(out, t, self.eps)?;

            let dz = (1.0 - t / (out + self.eps)) * sigmoid(z) / b;
            grad.b2 += dz;
            for j in 0..h.len() {
                grad.w2[j] += dz * h[j];
                let da = dz * self.net.w2[j] * (1.0 - h[j] * h[j]);
                grad.b1[j] += da;
                for (g, xi) in grad.w1[j].iter_mut().zip(x.iter()) {
                    *g += da * xi;
                }
            }
        }
        Ok((loss / b, grad))
    }
}

/// Bias-corrected Adam over a flat parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(num_params: usize, lr: f64) -> Self {
        AdamState {
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    /// `block_of` names the parameter block of a flat index for error
    /// reporting.
    pub fn step(
        &mut self,
        params: &mut [f64],
        grads: &[f64],
        block_of: impl Fn(usize) -> &'static str,
    ) -> Result<()> {
        assert_eq!(params.len(), self.m.len(), "parameter count");
        assert_eq!(grads.len(), self.m.len(), "gradient count");
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(PnnError::Gradient { block: block_of(i) });
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.epsilon);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub hidden: usize,
    pub eps: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 300,
            batch_size: 10,
            learning_rate: 1e-4,
            hidden: DEFAULT_HIDDEN,
            eps: DEFAULT_EPS,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: PnnModel,
    /// Mean per-sample loss of each epoch, accumulated during the epoch.
    pub history: Vec<f64>,
}

/// Mini-batch Adam on a seeded shuffle per epoch; the last batch of an epoch
/// may be short.
pub fn train(data: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    if data.is_empty() {
        return Err(PnnError::Empty);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let net = Mlp::init_uniform(data.input_dim(), cfg.hidden, &mut rng);
    let mut model = PnnModel::new(net, cfg.eps);
    let mut adam = AdamState::new(model.net.num_params(), cfg.learning_rate);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size.max(1)) {
            let xs: Vec<&[f64]> = batch.iter().map(|&i| data.x[i].as_slice()).collect();
            let ys: Vec<f64> = batch.iter().map(|&i| data.y[i]).collect();
            let (loss, grad) = model.loss_and_grad(&xs, &ys).map_err(|_| PnnError::Diverged { epoch })?;
            if !loss.is_finite() {
                return Err(PnnError::Diverged { epoch });
            }
            total += loss * batch.len() as f64;
            let mut flat = model.net.flat();
            let net = &model.net;
            adam.step(&mut flat, &grad.flat(), |i| net.block_of(i))?;
            model.net.set_flat(&flat);
        }
        let mean = total / data.len() as f64;
        if !mean.is_finite() || !model.net.is_finite() {
            return Err(PnnError::Diverged { epoch });
        }
        history.push(mean);
    }
    Ok(TrainOutcome { model, history })
}
