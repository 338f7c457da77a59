//! Sensitive-information obfuscation: a weight-clipped critic estimates the
//! Wasserstein-1 gap between sensitive groups through the Kantorovich-Rubinstein
//! dual; the encoder is trained to shrink that estimate.

use ndarray::{Array2, ArrayView2};
use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{Activation, Mlp, OptimState};

/// Critic `M → hidden → 1`, relu then identity, clipped to `[−c, c]` at init.
pub fn new_critic<R: Rng + ?Sized>(embedding_dim: usize, hidden: usize, clip: f64, rng: &mut R) -> Result<Mlp> {
    let mut critic = Mlp::new(
        &[embedding_dim, hidden, 1],
        &[Activation::Relu, Activation::Identity],
        rng,
    )?;
    critic.clip(clip);
    Ok(critic)
}

struct Groups {
    members: Vec<Vec<usize>>,
}

fn groups(labels: &[usize]) -> Result<Groups> {
    let classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut members = vec![Vec::new(); classes];
    for (i, &l) in labels.iter().enumerate() {
        members[l].push(i);
    }
    members.retain(|g| !g.is_empty());
    if members.len() < 2 {
        return Err(Error::invalid(
            "critic needs samples from at least two sensitive groups",
        ));
    }
    Ok(Groups { members })
}

/// Estimate `Σ_{j<k} |E_j f − E_k f|` and its gradient w.r.t. each critic
/// output (one per row).
fn estimate(scores: &Array2<f64>, g: &Groups) -> (f64, Array2<f64>) {
    let means: Vec<f64> = g
        .members
        .iter()
        .map(|m| m.iter().map(|&i| scores[[i, 0]]).sum::<f64>() / m.len() as f64)
        .collect();
    let mut value = 0.0;
    let mut weight = vec![0.0; means.len()];
    for j in 0..means.len() {
        for k in (j + 1)..means.len() {
            let d = means[j] - means[k];
            let sign = if d >= 0.0 { 1.0 } else { -1.0 };
            value += d.abs();
            weight[j] += sign;
            weight[k] -= sign;
        }
    }
    let mut grad = Array2::zeros(scores.raw_dim());
    for (gi, m) in g.members.iter().enumerate() {
        let w = weight[gi] / m.len() as f64;
        for &i in m {
            grad[[i, 0]] = w;
        }
    }
    (value, grad)
}

fn check(z: ArrayView2<'_, f64>, labels: &[usize]) -> Result<()> {
    if z.nrows() != labels.len() {
        return Err(Error::dim("embedding rows differ from label count"));
    }
    Ok(())
}

/// Current dual estimate of the group gap (a Wasserstein estimate scaled by
/// the unknown Lipschitz constant of the clipped critic).
pub fn sio_estimate(critic: &Mlp, z: ArrayView2<'_, f64>, labels: &[usize]) -> Result<f64> {
    check(z, labels)?;
    let g = groups(labels)?;
    Ok(estimate(&critic.predict(z)?, &g).0)
}

/// One gradient-ascent step on the dual estimate followed by clipping every
/// critic parameter to `[−c, c]`. Returns the estimate before the step.
pub fn sio_critic_update(
    critic: &mut Mlp,
    z: ArrayView2<'_, f64>,
    labels: &[usize],
    eta_critic: f64,
    clip: f64,
) -> Result<f64> {
    check(z, labels)?;
    let g = groups(labels)?;
    let cache = critic.forward(z)?;
    let (value, dscore) = estimate(cache.output(), &g);
    let (grads, _) = critic.backward(&cache, dscore.view())?;
    // ascent: step along +∇
    critic.sgd_step(&grads, &OptimState::clipped(-eta_critic, clip))?;
    Ok(value)
}

/// Encoder-side SIO loss: the critic's group gap and its gradient w.r.t. `Z`.
pub fn sio_encoder_loss(critic: &Mlp, z: ArrayView2<'_, f64>, labels: &[usize]) -> Result<(f64, Array2<f64>)> {
    check(z, labels)?;
    let g = groups(labels)?;
    let cache = critic.forward(z)?;
    let (value, dscore) = estimate(cache.output(), &g);
    let (_, dz) = critic.backward(&cache, dscore.view())?;
    Ok((value, dz))
}
