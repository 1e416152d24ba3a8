use serde::{Deserialize, Serialize};

use crate::error::{FaeError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
    Elu,
    Sigmoid,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Elu => {
                if x > 0.0 {
                    x
                } else {
                    x.exp_m1()
                }
            }
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
        }
    }

    /// Derivative from the pre-activation `x` and the output `y = a(x)`.
    #[inline]
    pub fn deriv(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Elu => {
                if x > 0.0 {
                    1.0
                } else {
                    y + 1.0
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
        }
    }
}

/// Architecture and optimisation settings of the autoencoder.
///
/// `layer_widths = [q1, h_1, …, h_k, q̃2, q̃3]`: the encoder's functional
/// layer width, the scalar MLP widths (bottleneck in the middle, the last
/// one feeding the first functional decoder layer), then the widths of the
/// two hidden functional decoder layers. The output layer has one node per
/// data dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    pub layer_widths: Vec<usize>,
    pub latent_dim: usize,
    pub activation: Activation,
    pub net_basis_size: usize,
    /// Dropout keep probability.
    pub tau: f64,
    pub lambda_w: f64,
    pub lambda_c: f64,
    pub alpha: f64,
    pub beta: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            layer_widths: vec![16, 16, 8, 16, 16, 16, 16],
            latent_dim: 8,
            activation: Activation::Tanh,
            net_basis_size: 10,
            tau: 1.0,
            lambda_w: 1e-3,
            lambda_c: 1e-2,
            alpha: 1e-2,
            beta: 0.9,
            batch_size: 32,
            epochs: 60,
            seed: 0,
        }
    }
}

impl NetworkConfig {
    /// Index into `layer_widths` of the latent layer.
    pub fn bottleneck(&self) -> usize {
        1 + (self.layer_widths.len() - 4) / 2
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(FaeError::Config(m));
        let w = &self.layer_widths;
        if w.len() < 5 {
            return bad(format!("layer_widths needs at least 5 entries, got {}", w.len()));
        }
        if w.iter().any(|&v| v == 0) {
            return bad("layer widths must be positive".into());
        }
        if w[self.bottleneck()] != self.latent_dim {
            return bad(format!(
                "latent_dim {} does not match bottleneck width {}",
                self.latent_dim,
                w[self.bottleneck()]
            ));
        }
        if self.net_basis_size < 4 {
            return bad("net_basis_size must be at least 4 for cubic B-splines".into());
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad(format!("tau must lie in (0, 1], got {}", self.tau));
        }
        if !(self.lambda_w >= 0.0 && self.lambda_c >= 0.0) {
            return bad("loss weights must be non-negative".into());
        }
        if !(self.alpha > 0.0) || !(0.0..1.0).contains(&self.beta) {
            return bad("need alpha > 0 and 0 <= beta < 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_w: f64,
    pub lambda_c: f64,
}
