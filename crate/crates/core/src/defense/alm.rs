//! Adversarial privacy-utility losses: an attribute adversary `g_ω`, a
//! parameter-free inner-product link decoder, and the utility head `g_θ`.

use std::collections::HashSet;

use ndarray::{Array2, ArrayView2};
use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{binary_cross_entropy, cross_entropy_batch, sigmoid, Mlp, MlpGradients};

/// Unordered node pairs with link targets in {0, 1}.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinkPairs {
    pub pairs: Vec<(usize, usize)>,
    pub targets: Vec<f64>,
}

/// Positive pairs (every edge, or a uniform subsample of `positives` edges)
/// plus as many distinct non-edges drawn uniformly. Negatives are capped by
/// the number of non-edges available.
pub fn sample_link_pairs<R: Rng + ?Sized>(
    n: usize,
    edges: &[(usize, usize)],
    positives: Option<usize>,
    rng: &mut R,
) -> Result<LinkPairs> {
    let key = |a: usize, b: usize| if a < b { (a, b) } else { (b, a) };
    let edge_set: HashSet<(usize, usize)> = edges.iter().map(|&(a, b)| key(a, b)).collect();
    if edge_set.iter().any(|&(a, b)| a == b || b >= n) {
        return Err(Error::invalid("link pairs need edges between distinct in-range nodes"));
    }
    let mut pairs: Vec<(usize, usize)> = edges.iter().map(|&(a, b)| key(a, b)).collect();
    pairs.sort_unstable();
    pairs.dedup();
    if let Some(k) = positives {
        if k < pairs.len() {
            pairs = pairs.choose_multiple(rng, k).copied().collect();
        }
    }
    let total = n * n.saturating_sub(1) / 2;
    let wanted = pairs.len().min(total - edge_set.len());
    let mut targets = vec![1.0; pairs.len()];
    let mut negatives = HashSet::with_capacity(wanted);
    while negatives.len() < wanted {
        let a = rng.random_range(0..n);
        let b = rng.random_range(0..n);
        if a == b {
            continue;
        }
        let k = key(a, b);
        if !edge_set.contains(&k) && negatives.insert(k) {
            pairs.push(k);
            targets.push(0.0);
        }
    }
    Ok(LinkPairs { pairs, targets })
}

/// `Σ BCE(σ(z_iᵀz_j), t_ij)` and its gradient w.r.t. `Z`.
pub fn link_loss(z: ArrayView2<'_, f64>, links: &LinkPairs) -> Result<(f64, Array2<f64>)> {
    let n = z.nrows();
    if links.pairs.len() != links.targets.len() {
        return Err(Error::dim("link pairs and targets differ in length"));
    }
    let mut value = 0.0;
    let mut dz = Array2::zeros(z.raw_dim());
    for (&(i, j), &t) in links.pairs.iter().zip(&links.targets) {
        if i >= n || j >= n {
            return Err(Error::dim(format!("link pair ({i}, {j}) out of range")));
        }
        let p = sigmoid(z.row(i).dot(&z.row(j)));
        let (l, dp) = binary_cross_entropy(p, t);
        value += l;
        let g = dp * p * (1.0 - p);
        dz.row_mut(i).scaled_add(g, &z.row(j));
        dz.row_mut(j).scaled_add(g, &z.row(i));
    }
    Ok((value, dz))
}

/// Summed cross-entropy of a classifier head over `nodes` (all rows when
/// `None`), with gradients for the head and for `Z`.
pub fn head_loss(
    head: &Mlp,
    z: ArrayView2<'_, f64>,
    labels: &[usize],
    nodes: Option<&[usize]>,
) -> Result<(f64, MlpGradients, Array2<f64>)> {
    if labels.len() != z.nrows() {
        return Err(Error::dim("embedding rows differ from label count"));
    }
    let (x, y): (Array2<f64>, Vec<usize>) = match nodes {
        None => (z.to_owned(), labels.to_vec()),
        Some(idx) => {
            if idx.iter().any(|&i| i >= z.nrows()) {
                return Err(Error::dim("node index out of range"));
            }
            (
                z.select(ndarray::Axis(0), idx),
                idx.iter().map(|&i| labels[i]).collect(),
            )
        }
    };
    let cache = head.forward(x.view())?;
    let (value, g) = cross_entropy_batch(cache.output().view(), &y)?;
    let (grads, dx) = head.backward(&cache, g.view())?;
    let dz = match nodes {
        None => dx,
        Some(idx) => {
            let mut dz = Array2::zeros(z.raw_dim());
            for (r, &i) in idx.iter().enumerate() {
                dz.row_mut(i).scaled_add(1.0, &dx.row(r));
            }
            dz
        }
    };
    Ok((value, grads, dz))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct AlmLosses {
    pub utility: f64,
    pub priv_attr: f64,
    pub link: f64,
    /// `priv_attr + mu_link · link`
    pub privacy: f64,
}

#[derive(Debug, Clone)]
pub struct AlmGradients {
    pub utility_z: Array2<f64>,
    pub privacy_z: Array2<f64>,
    pub adversary: MlpGradients,
    pub utility_head: MlpGradients,
}

pub struct AlmInputs<'a> {
    pub sensitive: &'a [usize],
    pub utility: &'a [usize],
    /// Nodes whose utility labels are visible during training.
    pub utility_nodes: &'a [usize],
    pub links: &'a LinkPairs,
    pub mu_link: f64,
}

pub fn alm_losses(
    z: ArrayView2<'_, f64>,
    adversary: &Mlp,
    utility_head: &Mlp,
    inputs: &AlmInputs<'_>,
) -> Result<(AlmLosses, AlmGradients)> {
    let (priv_attr, adv_grads, attr_z) = head_loss(adversary, z, inputs.sensitive, None)?;
    let (link, link_z) = link_loss(z, inputs.links)?;
    let (utility, util_grads, utility_z) = head_loss(utility_head, z, inputs.utility, Some(inputs.utility_nodes))?;
    let mut privacy_z = attr_z;
    privacy_z.scaled_add(inputs.mu_link, &link_z);
    let losses = AlmLosses {
        utility,
        priv_attr,
        link,
        privacy: priv_attr + inputs.mu_link * link,
    };
    Ok((
        losses,
        AlmGradients {
            utility_z,
            privacy_z,
            adversary: adv_grads,
            utility_head: util_grads,
        },
    ))
}
