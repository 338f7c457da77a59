//! Dual privacy-preserving GCN training: Wasserstein obfuscation of the
//! sensitive attribute, dynamic structure debiasing of the propagation matrix
//! and an adversarial privacy-utility loop.

pub mod alm;
pub mod dsd;
pub mod simplex;
pub mod sio;
mod train;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::NormalizationKind;
use crate::nn::Activation;

pub use alm::{alm_losses, head_loss, link_loss, sample_link_pairs, AlmGradients, AlmInputs, AlmLosses, LinkPairs};
pub use dsd::{
    dsd_embedding_gradient, dsd_embedding_gradient_sampled, dsd_losses, dsd_step, reconstruct_adjacency,
    reconstruction_backward, DsdLossBreakdown,
};
pub use simplex::{project_row_stochastic, project_simplex};
pub use sio::{new_critic, sio_critic_update, sio_encoder_loss, sio_estimate};
pub use train::{train, train_plain_gcn, Adjacency, EpochRecord, TrainHistory, TrainOutcome};

fn default_sio_weight() -> f64 {
    1.0
}
fn default_adjacency_grad_norm() -> Option<f64> {
    Some(0.2)
}
fn default_utility_train_fraction() -> f64 {
    0.6
}
fn default_hidden() -> usize {
    32
}
fn default_activation() -> Activation {
    Activation::Tanh
}
fn default_normalization() -> NormalizationKind {
    NormalizationKind::LeftStochastic
}
fn default_dense_limit() -> usize {
    4096
}
fn default_sample_pairs() -> usize {
    200_000
}

/// Missing JSON fields take their [`Default`] values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DefenseConfig {
    pub alpha: f64,
    pub mu_link: f64,
    pub lambda_: f64,
    pub eta_encoder: f64,
    pub eta_adjacency: f64,
    pub eta_critic: f64,
    pub eta_adversary: f64,
    pub clip_bound: f64,
    pub epochs: usize,
    pub critic_steps: usize,
    pub adversary_steps: usize,
    pub encoder_steps: usize,
    pub adjacency_steps: usize,
    pub embedding_dim: usize,
    pub seed: u64,
    /// Weight of the critic's group gap in the encoder objective.
    pub sio_weight: f64,
    /// Clip `dL_DSD/dÃ` to this Frobenius norm before the projected step;
    /// `None` uses the raw gradient.
    pub adjacency_grad_norm: Option<f64>,
    pub utility_train_fraction: f64,
    pub critic_hidden: usize,
    pub head_hidden: usize,
    pub activation: Activation,
    /// Initial propagation matrix.
    pub normalization: NormalizationKind,
    /// Above this many nodes the structure losses are estimated from sampled pairs.
    pub dense_limit: usize,
    pub sample_pairs: usize,
    /// Pairs drawn per epoch for the link term, half edges and half
    /// non-edges; `None` draws as many pairs as there are nodes.
    pub link_pairs: Option<usize>,
}

impl Default for DefenseConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            mu_link: 1.0,
            lambda_: 1.0,
            eta_encoder: 1e-4,
            eta_adjacency: 0.2,
            eta_critic: 1e-2,
            eta_adversary: 1e-2,
            clip_bound: 0.05,
            epochs: 200,
            critic_steps: 5,
            adversary_steps: 1,
            encoder_steps: 1,
            adjacency_steps: 1,
            embedding_dim: 16,
            seed: 0,
            sio_weight: default_sio_weight(),
            adjacency_grad_norm: default_adjacency_grad_norm(),
            utility_train_fraction: default_utility_train_fraction(),
            critic_hidden: default_hidden(),
            head_hidden: default_hidden(),
            activation: default_activation(),
            normalization: default_normalization(),
            dense_limit: default_dense_limit(),
            sample_pairs: default_sample_pairs(),
            link_pairs: None,
        }
    }
}

impl DefenseConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Same schedule with every defense component switched off: utility
    /// training of the encoder and head only.
    pub fn undefended(&self) -> Self {
        Self {
            alpha: 0.0,
            lambda_: 0.0,
            critic_steps: 0,
            adversary_steps: 0,
            adjacency_steps: 0,
            ..self.clone()
        }
    }

    pub fn is_undefended(&self) -> bool {
        self.critic_steps == 0 && self.adjacency_steps == 0 && self.lambda_ == 0.0
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("eta_encoder", self.eta_encoder),
            ("eta_adjacency", self.eta_adjacency),
            ("eta_critic", self.eta_critic),
            ("eta_adversary", self.eta_adversary),
            ("clip_bound", self.clip_bound),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [
            ("alpha", self.alpha),
            ("mu_link", self.mu_link),
            ("lambda_", self.lambda_),
            ("sio_weight", self.sio_weight),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::invalid(format!("{name} must be non-negative, got {v}")));
            }
        }
        if let Some(t) = self.adjacency_grad_norm {
            if !(t > 0.0) || !t.is_finite() {
                return Err(Error::invalid("adjacency_grad_norm must be positive"));
            }
        }
        if self.embedding_dim == 0 || self.critic_hidden == 0 || self.head_hidden == 0 {
            return Err(Error::invalid("layer widths must be at least 1"));
        }
        if !(self.utility_train_fraction > 0.0 && self.utility_train_fraction < 1.0) {
            return Err(Error::invalid("utility_train_fraction must lie in (0, 1)"));
        }
        if self.sample_pairs == 0 {
            return Err(Error::invalid("sample_pairs must be at least 1"));
        }
        Ok(())
    }
}
