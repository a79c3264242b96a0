//! One-hidden-layer fully connected network shared by both count models.

use rand::Rng;
use serde::{Deserialize, Serialize};

/// `W1` is `hidden x input`, `W2` is `1 x hidden`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    #[serde(rename = "W1")]
    pub w1: Vec<Vec<f64>>,
    pub b1: Vec<f64>,
    #[serde(rename = "W2")]
    pub w2: Vec<f64>,
    pub b2: f64,
}

/// Names of the parameter blocks in flattening order.
pub const BLOCKS: [&str; 4] = ["W1", "b1", "W2", "b2"];

impl Mlp {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        Mlp { w1: vec![vec![0.0; input]; hidden], b1: vec![0.0; hidden], w2: vec![0.0; hidden], b2: 0.0 }
    }

    /// Each layer uniform in `±1/sqrt(fan_in)`.
    pub fn init_uniform<R: Rng>(input: usize, hidden: usize, rng: &mut R) -> Self {
        let mut net = Mlp::zeros(input, hidden);
        let a1 = 1.0 / (input.max(1) as f64).sqrt();
        let a2 = 1.0 / (hidden.max(1) as f64).sqrt();
        for row in &mut net.w1 {
            for w in row.iter_mut() {
                *w = rng.random_range(-a1..=a1);
            }
        }
        for b in &mut net.b1 {
            *b = rng.random_range(-a1..=a1);
        }
        for w in &mut net.w2 {
            *w = rng.random_range(-a2..=a2);
        }
        net.b2 = rng.random_range(-a2..=a2);
        net
    }

    pub fn input_dim(&self) -> usize {
        self.w1.first().map_or(0, Vec::len)
    }

    pub fn hidden_dim(&self) -> usize {
        self.b1.len()
    }

    pub fn num_params(&self) -> usize {
        self.hidden_dim() * (self.input_dim() + 2) + 1
    }

    /// Which block a flat index falls in.
    pub fn block_of(&self, index: usize) -> &'static str {
        let w1 = self.hidden_dim() * self.input_dim();
        let h = self.hidden_dim();
        match index {
            i if i < w1 => BLOCKS[0],
            i if i < w1 + h => BLOCKS[1],
            i if i < w1 + 2 * h => BLOCKS[2],
            _ => BLOCKS[3],
        }
    }

    /// `[W1 row-major, b1, W2, b2]`.
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for row in &self.w1 {
            out.extend_from_slice(row);
        }
        out.extend_from_slice(&self.b1);
        out.extend_from_slice(&self.w2);
        out.push(self.b2);
        out
    }

    pub fn set_flat(&mut self, values: &[f64]) {
        assert_eq!(values.len(), self.num_params(), "flat parameter length");
        let mut it = values.iter().copied();
        for row in &mut self.w1 {
            for w in row.iter_mut() {
                *w = it.next().unwrap();
            }
        }
        for b in &mut self.b1 {
            *b = it.next().unwrap();
        }
        for w in &mut self.w2 {
            *w = it.next().unwrap();
        }
        self.b2 = it.next().unwrap();
    }

    /// Hidden activations `act(W1 x + b1)` and output pre-activation
    /// `W2 h + b2`.
    pub fn hidden_and_output(&self, x: &[f64], act: impl Fn(f64) -> f64) -> (Vec<f64>, f64) {
        let h: Vec<f64> = self
            .w1
            .iter()
            .zip(&self.b1)
            .map(|(row, b)| act(row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>() + b))
            .collect();
        let z = self.w2.iter().zip(&h).map(|(w, hi)| w * hi).sum::<f64>() + self.b2;
        (h, z)
    }

    pub fn is_finite(&self) -> bool {
        self.flat().iter().all(|v| v.is_finite())
    }
}
