//! Contextual two-block random graphs with Gaussian features.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::LabeledGraph;

/// Extra feature dimensions carrying a balanced utility label.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UtilityChannel {
    pub k_u: usize,
    pub mu_u: f64,
    /// Edge probabilities are scaled by `1 + homophily` for pairs sharing a
    /// utility label and by `1 − homophily` otherwise; 0 leaves the structure
    /// independent of utility.
    #[serde(default)]
    pub homophily: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeneratorParams {
    pub n: usize,
    /// Intra-link probability.
    pub p: f64,
    /// Inter-link probability.
    pub q: f64,
    /// Sensitive feature dimensions.
    pub k: usize,
    /// Group 0 features are drawn around `-mu_feature`, group 1 around `+mu_feature`.
    pub mu_feature: f64,
    pub seed: u64,
    #[serde(default)]
    pub utility_channel: Option<UtilityChannel>,
}

impl GeneratorParams {
    pub fn new(n: usize, p: f64, q: f64, k: usize, mu_feature: f64, seed: u64) -> Self {
        Self {
            n,
            p,
            q,
            k,
            mu_feature,
            seed,
            utility_channel: None,
        }
    }

    pub fn with_utility(mut self, k_u: usize, mu_u: f64) -> Self {
        self.utility_channel = Some(UtilityChannel {
            k_u,
            mu_u,
            homophily: 0.0,
        });
        self
    }

    /// Requires a utility channel; no-op otherwise.
    pub fn with_utility_homophily(mut self, homophily: f64) -> Self {
        if let Some(ch) = self.utility_channel.as_mut() {
            ch.homophily = homophily;
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::invalid(format!("n must be at least 2, got {}", self.n)));
        }
        for (name, v) in [("p", self.p), ("q", self.q)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::invalid(format!("{name}={v} is not a probability")));
            }
        }
        if self.k == 0 {
            return Err(Error::invalid("k must be at least 1"));
        }
        if !(self.mu_feature >= 0.0) || !self.mu_feature.is_finite() {
            return Err(Error::invalid("mu must be finite and non-negative"));
        }
        if let Some(u) = self.utility_channel {
            if u.k_u == 0 {
                return Err(Error::invalid("k_u must be at least 1"));
            }
            if !u.mu_u.is_finite() {
                return Err(Error::invalid("mu_u must be finite"));
            }
            if !(0.0..=1.0).contains(&u.homophily) {
                return Err(Error::invalid(format!("homophily={} outside [0, 1]", u.homophily)));
            }
            if self.p.max(self.q) * (1.0 + u.homophily) > 1.0 {
                return Err(Error::invalid("homophily pushes an edge probability above 1"));
            }
        }
        Ok(())
    }

    pub fn feature_dim(&self) -> usize {
        self.k + self.utility_channel.map_or(0, |u| u.k_u)
    }
}

fn balanced_labels(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut labels: Vec<usize> = (0..n).map(|i| usize::from(i >= n / 2)).collect();
    labels.shuffle(rng);
    labels
}

pub fn generate(params: &GeneratorParams) -> Result<LabeledGraph> {
    params.validate()?;
    let n = params.n;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);

    let sensitive = balanced_labels(n, &mut rng);
    let utility = params.utility_channel.map(|_| balanced_labels(n, &mut rng));

    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let mut prob = if sensitive[i] == sensitive[j] {
                params.p
            } else {
                params.q
            };
            if let (Some(ch), Some(u)) = (params.utility_channel, utility.as_ref()) {
                prob *= if u[i] == u[j] {
                    1.0 + ch.homophily
                } else {
                    1.0 - ch.homophily
                };
            }
            if rng.random_bool(prob) {
                edges.push((i, j));
            }
        }
    }

    let dim = params.feature_dim();
    let mut features = Array2::zeros((n, dim));
    for v in 0..n {
        let sign = if sensitive[v] == 0 { -1.0 } else { 1.0 };
        for j in 0..params.k {
            let noise: f64 = rng.sample(StandardNormal);
            features[[v, j]] = sign * params.mu_feature + noise;
        }
        if let (Some(ch), Some(u)) = (params.utility_channel, utility.as_ref()) {
            let usign = if u[v] == 0 { -1.0 } else { 1.0 };
            for j in params.k..dim {
                let noise: f64 = rng.sample(StandardNormal);
                features[[v, j]] = usign * ch.mu_u + noise;
            }
        }
    }

    LabeledGraph::new(n, &edges, features, sensitive, utility)
}

/// Expected structural bias `|p − q| / (p + q)` of a generated graph.
pub fn expected_bias(params: &GeneratorParams) -> Result<f64> {
    let s = params.p + params.q;
    if s <= 0.0 {
        return Err(Error::invalid("expected bias undefined for p = q = 0"));
    }
    Ok((params.p - params.q).abs() / s)
}
