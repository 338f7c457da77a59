//! Dynamic structure debiasing: reconstruct `Â = σ(ZZᵀ)`, measure how much
//! of its mass sits on intra- versus inter-group pairs, and move the
//! propagation matrix so the sensitive gap shrinks while the utility gap grows.

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::simplex::project_row_stochastic;
use crate::error::{Error, Result};
use crate::nn::sigmoid;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct DsdLossBreakdown {
    pub s_intra_s: f64,
    pub s_inter_s: f64,
    pub s_intra_u: f64,
    pub s_inter_u: f64,
    pub l_adj_s: f64,
    pub l_adj_u: f64,
    pub l_dsd: f64,
}

impl DsdLossBreakdown {
    fn from_sums(alpha: f64, s_intra_s: f64, s_inter_s: f64, s_intra_u: f64, s_inter_u: f64) -> Self {
        let l_adj_s = (s_intra_s - s_inter_s).powi(2);
        let l_adj_u = (s_intra_u - s_inter_u).powi(2);
        Self {
            s_intra_s,
            s_inter_s,
            s_intra_u,
            s_inter_u,
            l_adj_s,
            l_adj_u,
            l_dsd: alpha * l_adj_s - l_adj_u,
        }
    }
}

/// `σ(ZZᵀ)`, symmetric with entries in (0, 1).
pub fn reconstruct_adjacency(z: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("embeddings".into()));
    }
    Ok(z.dot(&z.t()).mapv(sigmoid))
}

fn check_labels(n: usize, sensitive: &[usize], utility: Option<&[usize]>) -> Result<()> {
    if sensitive.len() != n || utility.is_some_and(|u| u.len() != n) {
        return Err(Error::dim("label count differs from adjacency size"));
    }
    Ok(())
}

fn intra_inter(a: ArrayView2<'_, f64>, labels: &[usize]) -> (f64, f64) {
    let mut intra = 0.0;
    let mut inter = 0.0;
    for (j, row) in a.rows().into_iter().enumerate() {
        for (k, &v) in row.iter().enumerate() {
            if j == k {
                continue;
            }
            if labels[j] == labels[k] {
                intra += v;
            } else {
                inter += v;
            }
        }
    }
    (intra, inter)
}

/// Loss breakdown and `dL_DSD/dÂ` (zero on the diagonal). Without utility
/// labels the utility term is zero.
pub fn dsd_losses(
    a_hat: ArrayView2<'_, f64>,
    sensitive: &[usize],
    utility: Option<&[usize]>,
    alpha: f64,
) -> Result<(DsdLossBreakdown, Array2<f64>)> {
    let (n, m) = a_hat.dim();
    if n != m {
        return Err(Error::dim("reconstructed adjacency must be square"));
    }
    check_labels(n, sensitive, utility)?;
    if utility.is_none() {
        log::warn!("no utility labels: utility debiasing term is zero");
    }
    let (si_s, se_s) = intra_inter(a_hat, sensitive);
    let (si_u, se_u) = utility.map_or((0.0, 0.0), |u| intra_inter(a_hat, u));
    let b = DsdLossBreakdown::from_sums(alpha, si_s, se_s, si_u, se_u);
    let gs = 2.0 * alpha * (si_s - se_s);
    let gu = 2.0 * (si_u - se_u);
    let grad = Array2::from_shape_fn((n, n), |(j, k)| {
        if j == k {
            return 0.0;
        }
        let s = if sensitive[j] == sensitive[k] { gs } else { -gs };
        let u = match utility {
            Some(u) if u[j] == u[k] => gu,
            Some(_) => -gu,
            None => 0.0,
        };
        s - u
    });
    Ok((b, grad))
}

/// `dL/dZ` for `Â = σ(ZZᵀ)` given `dL/dÂ`.
pub fn reconstruction_backward(
    z: ArrayView2<'_, f64>,
    a_hat: ArrayView2<'_, f64>,
    grad: ArrayView2<'_, f64>,
) -> Array2<f64> {
    let s = Array2::from_shape_fn(a_hat.raw_dim(), |(j, k)| {
        let a = a_hat[[j, k]];
        grad[[j, k]] * a * (1.0 - a)
    });
    let sym = &s + &s.t();
    sym.dot(&z)
}

/// Exact loss breakdown and `dL_DSD/dZ` through the reconstruction.
pub fn dsd_embedding_gradient(
    z: ArrayView2<'_, f64>,
    sensitive: &[usize],
    utility: Option<&[usize]>,
    alpha: f64,
) -> Result<(DsdLossBreakdown, Array2<f64>)> {
    let a_hat = reconstruct_adjacency(z)?;
    let (b, g) = dsd_losses(a_hat.view(), sensitive, utility, alpha)?;
    Ok((b, reconstruction_backward(z, a_hat.view(), g.view())))
}

/// Monte-Carlo version over `pairs` uniformly drawn ordered pairs `j ≠ k`;
/// the sums are rescaled to the full `n(n−1)` population, so the breakdown
/// and gradient are unbiased for the sums but `l_adj` (a square) is not.
pub fn dsd_embedding_gradient_sampled<R: Rng + ?Sized>(
    z: ArrayView2<'_, f64>,
    sensitive: &[usize],
    utility: Option<&[usize]>,
    alpha: f64,
    pairs: usize,
    rng: &mut R,
) -> Result<(DsdLossBreakdown, Array2<f64>)> {
    let n = z.nrows();
    check_labels(n, sensitive, utility)?;
    if n < 2 || pairs == 0 {
        return Err(Error::invalid("sampled estimator needs n ≥ 2 and at least one pair"));
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("embeddings".into()));
    }
    let scale = (n * (n - 1)) as f64 / pairs as f64;
    let mut sampled = Vec::with_capacity(pairs);
    let mut sums = [0.0; 4];
    for _ in 0..pairs {
        let j = rng.random_range(0..n);
        let mut k = rng.random_range(0..n - 1);
        if k >= j {
            k += 1;
        }
        let a = sigmoid(z.row(j).dot(&z.row(k)));
        let same_s = sensitive[j] == sensitive[k];
        sums[usize::from(!same_s)] += a;
        let same_u = utility.map(|u| u[j] == u[k]);
        if let Some(same) = same_u {
            sums[2 + usize::from(!same)] += a;
        }
        sampled.push((j, k, a, same_s, same_u));
    }
    let [a, b, c, d] = sums.map(|s| s * scale);
    let br = DsdLossBreakdown::from_sums(alpha, a, b, c, d);
    let gs = 2.0 * alpha * (a - b);
    let gu = 2.0 * (c - d);
    let mut dz = Array2::zeros(z.raw_dim());
    for (j, k, a, same_s, same_u) in sampled {
        let mut g = if same_s { gs } else { -gs };
        match same_u {
            Some(true) => g -= gu,
            Some(false) => g += gu,
            None => {}
        }
        let c = scale * g * a * (1.0 - a);
        dz.row_mut(j).scaled_add(c, &z.row(k));
        dz.row_mut(k).scaled_add(c, &z.row(j));
    }
    Ok((br, dz))
}

/// `Ã ← Π(Ã − η·G)` with `Π` the row-wise simplex projection.
pub fn dsd_step(
    adjacency: ArrayView2<'_, f64>,
    gradient: ArrayView2<'_, f64>,
    eta_adjacency: f64,
) -> Result<Array2<f64>> {
    if adjacency.dim() != gradient.dim() {
        return Err(Error::dim("adjacency gradient shape"));
    }
    if gradient.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("adjacency gradient".into()));
    }
    let mut next = adjacency.to_owned();
    next.scaled_add(-eta_adjacency, &gradient);
    project_row_stochastic(next.view())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{central_difference, max_relative_error};
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn reconstruction_examples() {
        let a = reconstruct_adjacency(Array2::zeros((3, 2)).view()).unwrap();
        assert!(a.iter().all(|&v| v == 0.5));
        let a = reconstruct_adjacency(array![[1.0, 0.0], [0.0, 2.0]].view()).unwrap();
        assert_eq!(a[[0, 1]], 0.5);
        assert!(a[[0, 0]] > 0.5 && a[[1, 1]] > 0.5);
        let a = reconstruct_adjacency(array![[10.0, 0.0], [10.0, 0.0]].view()).unwrap();
        assert!((a[[0, 1]] - 1.0).abs() < 1e-12);
        assert_eq!(a, a.t());
    }

    #[test]
    fn two_node_hand_enumeration() {
        let a = array![[0.9, 0.5], [0.5, 0.9]];
        let (b, _) = dsd_losses(a.view(), &[0, 1], None, 1.0).unwrap();
        assert_eq!(b.s_intra_s, 0.0);
        assert_eq!(b.s_inter_s, 1.0);
        assert_eq!(b.l_adj_s, 1.0);
    }

    #[test]
    fn all_equal_labels() {
        let a = array![[0.3, 0.2, 0.7], [0.2, 0.1, 0.4], [0.7, 0.4, 0.9]];
        let (b, _) = dsd_losses(a.view(), &[1, 1, 1], Some(&[0, 1, 0]), 2.0).unwrap();
        assert_eq!(b.s_inter_s, 0.0);
        assert!((b.l_adj_s - b.s_intra_s.powi(2)).abs() < 1e-12);
        assert!((b.l_dsd - (2.0 * b.l_adj_s - b.l_adj_u)).abs() < 1e-12);
    }

    #[test]
    fn adjacency_gradient_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = Array2::from_shape_fn((4, 4), |_| rng.random_range(0.05..0.95));
        let s = [0, 1, 1, 0];
        let u = [1, 1, 0, 0];
        let (_, g) = dsd_losses(a.view(), &s, Some(&u), 0.7).unwrap();
        let num = central_difference(a.as_slice().unwrap(), 1e-6, |p| {
            let m = Array2::from_shape_vec((4, 4), p.to_vec()).unwrap();
            dsd_losses(m.view(), &s, Some(&u), 0.7).unwrap().0.l_dsd
        });
        assert!(max_relative_error(g.as_slice().unwrap(), &num) < 1e-4);
    }

    #[test]
    fn embedding_gradient_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let z = Array2::from_shape_fn((6, 3), |_| rng.random_range(-1.0..1.0));
        let s = [0, 1, 1, 0, 1, 0];
        let u = [1, 1, 0, 0, 0, 1];
        let (_, g) = dsd_embedding_gradient(z.view(), &s, Some(&u), 1.3).unwrap();
        let num = central_difference(z.as_slice().unwrap(), 1e-6, |p| {
            let m = Array2::from_shape_vec((6, 3), p.to_vec()).unwrap();
            dsd_embedding_gradient(m.view(), &s, Some(&u), 1.3).unwrap().0.l_dsd
        });
        assert!(max_relative_error(g.as_slice().unwrap(), &num) < 1e-4);
    }

    #[test]
    fn sampled_estimator_tracks_exact_sums() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let z = Array2::from_shape_fn((60, 3), |_| rng.random_range(-1.0..1.0));
        let s: Vec<usize> = (0..60).map(|i| i % 2).collect();
        let u: Vec<usize> = (0..60).map(|i| (i / 2) % 2).collect();
        let (exact, _) = dsd_embedding_gradient(z.view(), &s, Some(&u), 1.0).unwrap();
        let (est, _) = dsd_embedding_gradient_sampled(z.view(), &s, Some(&u), 1.0, 200_000, &mut rng).unwrap();
        for (a, b) in [
            (exact.s_intra_s, est.s_intra_s),
            (exact.s_inter_s, est.s_inter_s),
            (exact.s_intra_u, est.s_intra_u),
            (exact.s_inter_u, est.s_inter_u),
        ] {
            assert!((a - b).abs() / a < 0.02, "{a} vs {b}");
        }
    }

    #[test]
    fn zero_gradient_keeps_stochastic_matrix() {
        let a = array![[0.25, 0.75], [1.0, 0.0]];
        let next = dsd_step(a.view(), Array2::zeros((2, 2)).view(), 0.2).unwrap();
        for (x, y) in a.iter().zip(&next) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn negative_entry_clamps_to_zero() {
        let a = array![[0.1, 0.45, 0.45]];
        let g = array![[1.0, 0.0, 0.0]];
        let next = dsd_step(a.view(), g.view(), 0.2).unwrap();
        assert_eq!(next[[0, 0]], 0.0);
        assert!((next.row(0).sum() - 1.0).abs() < 1e-12);
        assert!(dsd_step(a.view(), array![[f64::NAN, 0.0, 0.0]].view(), 0.2).is_err());
    }
}
