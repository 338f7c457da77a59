//! Black-box inference attacks on released node embeddings.
//!
//! Attackers see only the embedding matrix (and, for links, the accessible
//! adjacency); they never touch encoder parameters.

use std::collections::HashSet;

use ndarray::{concatenate, Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::LabeledGraph;
use crate::nn::{argmax, binary_cross_entropy_logit, cross_entropy_batch, sigmoid, Activation, Mlp, OptimState};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub node_train_fraction: f64,
    pub link_train_fraction: f64,
    pub link_valid_fraction: f64,
    pub link_test_fraction: f64,
    pub negative_link_ratio: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            node_train_fraction: 0.6,
            link_train_fraction: 0.85,
            link_valid_fraction: 0.05,
            link_test_fraction: 0.10,
            negative_link_ratio: 1.0,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("node_train_fraction", self.node_train_fraction),
            ("link_train_fraction", self.link_train_fraction),
            ("link_valid_fraction", self.link_valid_fraction),
            ("link_test_fraction", self.link_test_fraction),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::invalid(format!("{name}={v} must lie in (0,1)")));
            }
        }
        let total = self.link_train_fraction + self.link_valid_fraction + self.link_test_fraction;
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("link fractions sum to {total}, not 1")));
        }
        if !(self.negative_link_ratio > 0.0) {
            return Err(Error::invalid("negative_link_ratio must be positive"));
        }
        Ok(())
    }
}

/// Attacker model and optimizer settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackerConfig {
    pub hidden: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    /// Upper bound on positive training links; larger training splits are
    /// uniformly subsampled.
    pub max_link_train_pairs: usize,
}

impl Default for AttackerConfig {
    fn default() -> Self {
        Self {
            hidden: 32,
            learning_rate: 1e-2,
            epochs: 500,
            max_link_train_pairs: 4000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    pub accuracy: f64,
    pub f1: f64,
    pub n_test: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub accuracy: f64,
    pub f1: f64,
}

/// Accuracy with binary F1 (positive class 1) when `classes == 2`, macro F1
/// otherwise.
pub fn metrics(predictions: &[usize], truths: &[usize], classes: usize) -> Result<Metrics> {
    if predictions.len() != truths.len() {
        return Err(Error::dim("predictions and truths differ in length"));
    }
    if truths.is_empty() {
        return Err(Error::invalid("metrics of an empty set"));
    }
    let n = truths.len() as f64;
    let correct = predictions.iter().zip(truths).filter(|(p, t)| p == t).count() as f64;
    let f1_for = |c: usize| {
        let tp = predictions
            .iter()
            .zip(truths)
            .filter(|&(&p, &t)| p == c && t == c)
            .count() as f64;
        let fp = predictions
            .iter()
            .zip(truths)
            .filter(|&(&p, &t)| p == c && t != c)
            .count() as f64;
        let fn_ = predictions
            .iter()
            .zip(truths)
            .filter(|&(&p, &t)| p != c && t == c)
            .count() as f64;
        if tp == 0.0 {
            0.0
        } else {
            2.0 * tp / (2.0 * tp + fp + fn_)
        }
    };
    let f1 = if classes <= 2 {
        f1_for(1)
    } else {
        (0..classes).map(f1_for).sum::<f64>() / classes as f64
    };
    Ok(Metrics {
        accuracy: correct / n,
        f1,
    })
}

/// Column-wise z-scoring over all rows (label free).
pub fn standardize(z: ArrayView2<'_, f64>) -> Array2<f64> {
    let n = z.nrows().max(1) as f64;
    let mean = z.sum_axis(Axis(0)) / n;
    let mut out = &z - &mean;
    let std: Array1<f64> = out.map_axis(Axis(0), |c| (c.iter().map(|v| v * v).sum::<f64>() / n).sqrt());
    for mut row in out.rows_mut() {
        for (v, s) in row.iter_mut().zip(&std) {
            if *s > 1e-12 {
                *v /= s;
            }
        }
    }
    out
}

fn check_finite(z: ArrayView2<'_, f64>) -> Result<()> {
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("embeddings".into()));
    }
    Ok(())
}

/// Full-batch SGD on mean cross-entropy.
pub fn train_classifier(
    x: ArrayView2<'_, f64>,
    labels: &[usize],
    classes: usize,
    cfg: &AttackerConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Mlp> {
    let mut net = Mlp::new(
        &[x.ncols(), cfg.hidden, classes],
        &[Activation::Relu, Activation::Identity],
        rng,
    )?;
    let opt = OptimState::new(cfg.learning_rate);
    let scale = 1.0 / labels.len() as f64;
    for _ in 0..cfg.epochs {
        let cache = net.forward(x)?;
        let (_, mut g) = cross_entropy_batch(cache.output().view(), labels)?;
        g *= scale;
        let (grads, _) = net.backward(&cache, g.view())?;
        net.sgd_step(&grads, &opt)?;
    }
    Ok(net)
}

/// Full-batch SGD on mean binary cross-entropy of a single-logit network.
fn train_binary(x: ArrayView2<'_, f64>, targets: &[f64], cfg: &AttackerConfig, rng: &mut ChaCha8Rng) -> Result<Mlp> {
    let mut net = Mlp::new(
        &[x.ncols(), cfg.hidden, 1],
        &[Activation::Relu, Activation::Identity],
        rng,
    )?;
    let opt = OptimState::new(cfg.learning_rate);
    let scale = 1.0 / targets.len() as f64;
    for _ in 0..cfg.epochs {
        let cache = net.forward(x)?;
        let out = cache.output();
        let g = Array2::from_shape_fn(out.raw_dim(), |(i, _)| {
            binary_cross_entropy_logit(out[[i, 0]], targets[i]).1 * scale
        });
        let (grads, _) = net.backward(&cache, g.view())?;
        net.sgd_step(&grads, &opt)?;
    }
    Ok(net)
}

/// Sensitive-attribute inference: an MLP surrogate trained on a random node
/// split of the embeddings.
pub fn attack_node(
    z: ArrayView2<'_, f64>,
    sensitive: &[usize],
    split: &SplitSpec,
    cfg: &AttackerConfig,
) -> Result<AttackReport> {
    split.validate()?;
    check_finite(z)?;
    let n = z.nrows();
    if sensitive.len() != n {
        return Err(Error::dim("embedding rows differ from label count"));
    }
    let classes = sensitive.iter().copied().max().map_or(0, |m| m + 1).max(2);
    let mut rng = ChaCha8Rng::seed_from_u64(split.seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let n_train = ((n as f64) * split.node_train_fraction).round() as usize;
    let (train, test) = order.split_at(n_train.min(n));
    if test.is_empty() {
        return Err(Error::invalid("empty node test split"));
    }
    for c in 0..classes {
        if !train.iter().any(|&v| sensitive[v] == c) {
            return Err(Error::invalid(format!("class {c} missing from the training split")));
        }
    }

    let zs = standardize(z);
    let x_train = zs.select(Axis(0), train);
    let y_train: Vec<usize> = train.iter().map(|&v| sensitive[v]).collect();
    let net = train_classifier(x_train.view(), &y_train, classes, cfg, &mut rng)?;

    let out = net.predict(zs.select(Axis(0), test).view())?;
    let preds: Vec<usize> = out.rows().into_iter().map(argmax).collect();
    let truths: Vec<usize> = test.iter().map(|&v| sensitive[v]).collect();
    let m = metrics(&preds, &truths, classes)?;
    Ok(AttackReport {
        accuracy: m.accuracy,
        f1: m.f1,
        n_test: test.len(),
    })
}

/// Positive and negative pairs for one link split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LinkSplit {
    pub train_pos: Vec<(usize, usize)>,
    pub valid_pos: Vec<(usize, usize)>,
    pub test_pos: Vec<(usize, usize)>,
    pub train_neg: Vec<(usize, usize)>,
    pub valid_neg: Vec<(usize, usize)>,
    pub test_neg: Vec<(usize, usize)>,
}

/// Splits `edges` into train/valid/test positives and draws uniform
/// non-edge negatives (no self pairs, no repeats across splits).
pub fn split_links(
    node_count: usize,
    edges: &[(usize, usize)],
    split: &SplitSpec,
    max_train: usize,
) -> Result<LinkSplit> {
    split.validate()?;
    if edges.len() < 10 {
        return Err(Error::invalid(format!(
            "link attack needs at least 10 edges, graph has {}",
            edges.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(split.seed ^ 0x5eed_0001);
    let edge_set: HashSet<(usize, usize)> = edges.iter().map(|&(a, b)| (a.min(b), a.max(b))).collect();
    let mut shuffled: Vec<(usize, usize)> = edge_set.iter().copied().collect();
    shuffled.sort_unstable();
    shuffled.shuffle(&mut rng);

    let m = shuffled.len();
    let n_train = ((m as f64) * split.link_train_fraction).round() as usize;
    let n_valid = ((m as f64) * split.link_valid_fraction).round() as usize;
    let n_train = n_train.min(m);
    let n_valid = n_valid.min(m - n_train);
    let test_pos = shuffled[n_train + n_valid..].to_vec();
    let valid_pos = shuffled[n_train..n_train + n_valid].to_vec();
    let mut train_pos = shuffled[..n_train].to_vec();
    train_pos.truncate(max_train.max(1));
    if test_pos.is_empty() {
        return Err(Error::invalid("empty link test split"));
    }

    let total_pairs = node_count * (node_count - 1) / 2;
    let mut taken: HashSet<(usize, usize)> = HashSet::new();
    let mut draw = |count: usize, rng: &mut ChaCha8Rng| -> Result<Vec<(usize, usize)>> {
        if edge_set.len() + taken.len() + count > total_pairs {
            return Err(Error::invalid("graph too dense to sample negative links"));
        }
        let mut out = Vec::with_capacity(count);
        while out.len() < count {
            let a = rng.random_range(0..node_count);
            let b = rng.random_range(0..node_count);
            if a == b {
                continue;
            }
            let key = (a.min(b), a.max(b));
            if edge_set.contains(&key) || !taken.insert(key) {
                continue;
            }
            out.push(key);
        }
        Ok(out)
    };
    let ratio = split.negative_link_ratio;
    let count = |k: usize| ((k as f64) * ratio).round() as usize;
    let train_neg = draw(count(train_pos.len()), &mut rng)?;
    let valid_neg = draw(count(valid_pos.len()), &mut rng)?;
    let test_neg = draw(count(test_pos.len()), &mut rng)?;
    Ok(LinkSplit {
        train_pos,
        valid_pos,
        test_pos,
        train_neg,
        valid_neg,
        test_neg,
    })
}

fn pair_features(z: &Array2<f64>, pairs: &[(usize, usize)], swap: bool) -> Array2<f64> {
    let left: Vec<usize> = pairs.iter().map(|&(a, b)| if swap { b } else { a }).collect();
    let right: Vec<usize> = pairs.iter().map(|&(a, b)| if swap { a } else { b }).collect();
    concatenate(
        Axis(1),
        &[z.select(Axis(0), &left).view(), z.select(Axis(0), &right).view()],
    )
    .expect("row counts agree")
}

/// Link inference from an explicit list of accessible edges.
pub fn attack_link_edges(
    z: ArrayView2<'_, f64>,
    edges: &[(usize, usize)],
    split: &SplitSpec,
    cfg: &AttackerConfig,
) -> Result<AttackReport> {
    check_finite(z)?;
    let n = z.nrows();
    if let Some(&(a, b)) = edges.iter().find(|&&(a, b)| a >= n || b >= n || a == b) {
        return Err(Error::invalid(format!("invalid edge ({a},{b})")));
    }
    let links = split_links(n, edges, split, cfg.max_link_train_pairs)?;
    let zs = standardize(z);

    let mut train_pairs = links.train_pos.clone();
    train_pairs.extend(&links.train_neg);
    let mut targets: Vec<f64> = std::iter::repeat_n(1.0, links.train_pos.len())
        .chain(std::iter::repeat_n(0.0, links.train_neg.len()))
        .collect();
    let x_train = concatenate(
        Axis(0),
        &[
            pair_features(&zs, &train_pairs, false).view(),
            pair_features(&zs, &train_pairs, true).view(),
        ],
    )
    .expect("same width");
    targets.extend(targets.clone());

    let mut rng = ChaCha8Rng::seed_from_u64(split.seed ^ 0x0011_4e70);
    let net = train_binary(x_train.view(), &targets, cfg, &mut rng)?;

    let mut test_pairs = links.test_pos.clone();
    test_pairs.extend(&links.test_neg);
    let truths: Vec<usize> = std::iter::repeat_n(1, links.test_pos.len())
        .chain(std::iter::repeat_n(0, links.test_neg.len()))
        .collect();
    let fwd = net.predict(pair_features(&zs, &test_pairs, false).view())?;
    let bwd = net.predict(pair_features(&zs, &test_pairs, true).view())?;
    let preds: Vec<usize> = (0..test_pairs.len())
        .map(|i| usize::from(0.5 * (sigmoid(fwd[[i, 0]]) + sigmoid(bwd[[i, 0]])) > 0.5))
        .collect();
    let m = metrics(&preds, &truths, 2)?;
    Ok(AttackReport {
        accuracy: m.accuracy,
        f1: m.f1,
        n_test: truths.len(),
    })
}

/// Link-status inference against the raw adjacency of `graph`.
pub fn attack_link(
    z: ArrayView2<'_, f64>,
    graph: &LabeledGraph,
    split: &SplitSpec,
    cfg: &AttackerConfig,
) -> Result<AttackReport> {
    if z.nrows() != graph.node_count() {
        return Err(Error::dim("embedding rows differ from node count"));
    }
    attack_link_edges(z, &graph.edges(), split, cfg)
}

/// The `count` strongest undirected pairs of a learned (possibly asymmetric)
/// adjacency, scored by `W_uv + W_vu`. Used when the attacker observes the
/// learned structure instead of the raw graph.
pub fn edges_from_learned(adjacency: ArrayView2<'_, f64>, count: usize) -> Vec<(usize, usize)> {
    let n = adjacency.nrows();
    let mut scored = Vec::with_capacity(n * (n - 1) / 2);
    for u in 0..n {
        for v in (u + 1)..n {
            let w = adjacency[[u, v]] + adjacency[[v, u]];
            if w > 0.0 {
                scored.push((w, u, v));
            }
        }
    }
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then((a.1, a.2).cmp(&(b.1, b.2))));
    scored.into_iter().take(count).map(|(_, u, v)| (u, v)).collect()
}
