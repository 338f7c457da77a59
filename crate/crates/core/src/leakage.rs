//! Bhattacharyya-distance leakage of the sensitive attribute, in closed form
//! for the contextual two-block model and empirically for any embedding.

use log::warn;
use ndarray::{Array1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synth::{expected_bias, GeneratorParams};

pub const VARIANCE_FLOOR: f64 = 1e-9;

/// Axis-aligned Gaussian.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianSummary {
    pub mean: Array1<f64>,
    pub variance_diag: Array1<f64>,
}

impl GaussianSummary {
    pub fn new(mean: Array1<f64>, variance_diag: Array1<f64>) -> Result<Self> {
        if mean.len() != variance_diag.len() {
            return Err(Error::dim("mean and variance lengths differ"));
        }
        if variance_diag.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(Error::invalid("variances must be strictly positive and finite"));
        }
        Ok(Self { mean, variance_diag })
    }

    pub fn isotropic(mean: Array1<f64>, variance: f64) -> Result<Self> {
        let var = Array1::from_elem(mean.len(), variance);
        Self::new(mean, var)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Bhattacharyya distance between two diagonal Gaussians.
pub fn bhattacharyya_diag(a: &GaussianSummary, b: &GaussianSummary) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::dim(format!("{} vs {} dims", a.dim(), b.dim())));
    }
    let mut quad = 0.0;
    let mut logdet = 0.0;
    for i in 0..a.dim() {
        let (va, vb) = (a.variance_diag[i], b.variance_diag[i]);
        if !(va > 0.0) || !(vb > 0.0) {
            return Err(Error::invalid("non-positive variance"));
        }
        let avg = 0.5 * (va + vb);
        let d = a.mean[i] - b.mean[i];
        quad += d * d / avg;
        // ln(avg) − ½ln(va) − ½ln(vb), computed as a single log of a ratio
        logdet += (avg / (va * vb).sqrt()).ln();
    }
    Ok(quad / 8.0 + 0.5 * logdet)
}

/// Leakage before propagation: `k μ² / 2`.
pub fn closed_form_pl(k: usize, mu: f64) -> f64 {
    k as f64 * mu * mu / 2.0
}

fn mean_degree(params: &GeneratorParams) -> Result<f64> {
    let s = params.p + params.q;
    if s <= 0.0 {
        return Err(Error::invalid("p + q must be positive"));
    }
    Ok(params.n as f64 * s)
}

/// Leakage after one GCN-style propagation under the degree approximation
/// `|N_u| ≈ n(p+q)`:
/// `(k/2) μ² · n(p+q)(np − nq + 1)² / (1 + n(p+q))`.
pub fn closed_form_pl_prime(params: &GeneratorParams) -> Result<f64> {
    let m = mean_degree(params)?;
    let n = params.n as f64;
    let shift = n * params.p - n * params.q + 1.0;
    Ok(closed_form_pl(params.k, params.mu_feature) * m * shift * shift / (1.0 + m))
}

/// Bias level above which propagation increases leakage: the positive root of
/// `m³B² + 2m²B − 1` with `m = n(p+q)`.
pub fn bias_threshold(n: usize, p: f64, q: f64) -> Result<f64> {
    let s = p + q;
    if s <= 0.0 {
        return Err(Error::invalid("p + q must be positive"));
    }
    let m = n as f64 * s;
    // (√(m²+m) − m)/m² rewritten without the cancellation
    Ok(1.0 / (m * ((m * m + m).sqrt() + m)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LeakageReport {
    pub pl: f64,
    pub pl_prime: f64,
    pub delta_pl: f64,
    pub bias: f64,
    pub threshold: f64,
    pub amplified: bool,
}

/// Closed-form leakage report. For `μ > 0` on homophilous parameters
/// (`p ≥ q`) the three amplification criteria are checked to agree.
pub fn analyze(params: &GeneratorParams) -> Result<LeakageReport> {
    params.validate()?;
    let pl = closed_form_pl(params.k, params.mu_feature);
    let pl_prime = closed_form_pl_prime(params)?;
    let bias = expected_bias(params)?;
    let threshold = bias_threshold(params.n, params.p, params.q)?;
    let delta_pl = pl_prime - pl;
    let amplified = delta_pl > 0.0;
    if params.mu_feature > 0.0 && params.p >= params.q && (bias > threshold) != amplified {
        return Err(Error::invalid(format!(
            "inconsistent report: bias {bias} vs threshold {threshold} but ΔPL = {delta_pl}"
        )));
    }
    Ok(LeakageReport {
        pl,
        pl_prime,
        delta_pl,
        bias,
        threshold,
        amplified,
    })
}

/// Per-group diagonal Gaussian fit (sample mean, unbiased variance).
pub fn fit_group(z: ArrayView2<'_, f64>, labels: &[usize], group: usize) -> Result<GaussianSummary> {
    let rows: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == group).collect();
    if rows.len() < 2 {
        return Err(Error::invalid(format!(
            "group {group} has {} samples, need at least 2",
            rows.len()
        )));
    }
    let d = z.ncols();
    let cnt = rows.len() as f64;
    let mut mean = Array1::<f64>::zeros(d);
    for &r in &rows {
        mean += &z.row(r);
    }
    mean /= cnt;
    let mut var = Array1::<f64>::zeros(d);
    for &r in &rows {
        let diff = &z.row(r) - &mean;
        var += &(&diff * &diff);
    }
    var /= cnt - 1.0;
    let mut floored = false;
    var.mapv_inplace(|v| {
        if v < VARIANCE_FLOOR {
            floored = true;
            VARIANCE_FLOOR
        } else {
            v
        }
    });
    if floored {
        warn!("group {group}: variance floored at {VARIANCE_FLOOR}");
    }
    GaussianSummary::new(mean, var)
}

/// Bhattacharyya distance between diagonal Gaussian fits of the two
/// sensitive groups' embeddings.
pub fn empirical_leakage(z: ArrayView2<'_, f64>, sensitive: &[usize]) -> Result<f64> {
    if z.nrows() != sensitive.len() {
        return Err(Error::dim("embedding rows differ from label count"));
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("embeddings".into()));
    }
    if let Some(&bad) = sensitive.iter().find(|&&l| l > 1) {
        return Err(Error::invalid(format!("binary sensitive labels expected, found {bad}")));
    }
    let g0 = fit_group(z, sensitive, 0)?;
    let g1 = fit_group(z, sensitive, 1)?;
    bhattacharyya_diag(&g0, &g1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use ndarray::{array, Array2};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_distr::StandardNormal;

    fn params(n: usize, p: f64, q: f64, k: usize, mu: f64) -> GeneratorParams {
        GeneratorParams::new(n, p, q, k, mu, 0)
    }

    #[test]
    fn bhattacharyya_examples() {
        let a = GaussianSummary::isotropic(array![0.3, -1.0], 2.0).unwrap();
        assert_eq!(bhattacharyya_diag(&a, &a).unwrap(), 0.0);

        let lo = GaussianSummary::isotropic(Array1::from_elem(4, -0.5), 1.0).unwrap();
        let hi = GaussianSummary::isotropic(Array1::from_elem(4, 0.5), 1.0).unwrap();
        assert_abs_diff_eq!(bhattacharyya_diag(&lo, &hi).unwrap(), 0.5, epsilon = 1e-15);

        let one = GaussianSummary::new(array![0.0], array![1.0]).unwrap();
        let two = GaussianSummary::new(array![0.0], array![2.0]).unwrap();
        let expected = 0.5 * (1.5 / 2f64.sqrt()).ln();
        assert_abs_diff_eq!(bhattacharyya_diag(&one, &two).unwrap(), expected, epsilon = 1e-15);
        assert_abs_diff_eq!(expected, 0.0294, epsilon = 1e-4);
    }

    #[test]
    fn bhattacharyya_rejects_mismatch_and_bad_variance() {
        let a = GaussianSummary::isotropic(array![0.0], 1.0).unwrap();
        let b = GaussianSummary::isotropic(array![0.0, 1.0], 1.0).unwrap();
        assert!(bhattacharyya_diag(&a, &b).is_err());
        assert!(GaussianSummary::new(array![0.0], array![0.0]).is_err());
    }

    #[test]
    fn closed_form_examples() {
        assert_eq!(closed_form_pl(4, 0.0), 0.0);
        assert_abs_diff_eq!(closed_form_pl(4, 0.5), 0.5);
        assert_abs_diff_eq!(closed_form_pl(4, 1.0), 2.0);

        assert_eq!(closed_form_pl_prime(&params(1000, 0.08, 0.02, 4, 0.0)).unwrap(), 0.0);
        let flat = closed_form_pl_prime(&params(1000, 0.05, 0.05, 4, 0.5)).unwrap();
        assert_relative_eq!(flat, 0.5 * 100.0 / 101.0, max_relative = 1e-12);
        let biased = closed_form_pl_prime(&params(1000, 0.08, 0.02, 4, 0.5)).unwrap();
        assert_relative_eq!(biased, 0.5 * 100.0 * 61.0 * 61.0 / 101.0, max_relative = 1e-12);
        assert_abs_diff_eq!(biased, 1842.08, epsilon = 5e-3);
        assert!(closed_form_pl_prime(&params(10, 0.0, 0.0, 1, 1.0)).is_err());
    }

    #[test]
    fn threshold_examples() {
        let t = bias_threshold(1000, 0.05, 0.05).unwrap();
        assert_relative_eq!(t, (10100f64.sqrt() - 100.0) / 1e4, max_relative = 1e-9);
        assert_abs_diff_eq!(t, 4.9876e-5, epsilon = 1e-9);
        let m = 100.0;
        assert_abs_diff_eq!(m * m * m * t * t + 2.0 * m * m * t - 1.0, 0.0, epsilon = 1e-9);
        assert!(bias_threshold(1_000_000_000, 0.5, 0.5).unwrap() < 1e-17);
        assert!(bias_threshold(10, 0.0, 0.0).is_err());
    }

    #[test]
    fn analyze_examples() {
        let r = analyze(&params(1000, 0.08, 0.02, 4, 0.5)).unwrap();
        assert!(r.amplified);
        assert_abs_diff_eq!(r.bias, 0.6, epsilon = 1e-12);
        assert!(r.threshold < 5e-5);

        let r = analyze(&params(1000, 0.05, 0.05, 4, 0.5)).unwrap();
        assert!(!r.amplified);
        assert!(r.delta_pl < 0.0);

        let r = analyze(&params(1000, 0.08, 0.02, 4, 0.0)).unwrap();
        assert_eq!(r.delta_pl, 0.0);
        assert!(!r.amplified);
    }

    fn sample_groups(n: usize, mu0: f64, mu1: f64, k: usize, seed: u64) -> (Array2<f64>, Vec<usize>) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let labels: Vec<usize> = (0..2 * n).map(|i| usize::from(i >= n)).collect();
        let z = Array2::from_shape_fn((2 * n, k), |(i, _)| {
            let base = if labels[i] == 0 { mu0 } else { mu1 };
            base + rng.sample::<f64, _>(StandardNormal)
        });
        (z, labels)
    }

    #[test]
    fn empirical_matches_identical_and_shifted_groups() {
        let (z, labels) = sample_groups(100_000, 0.0, 0.0, 4, 1);
        assert!(empirical_leakage(z.view(), &labels).unwrap() < 0.02);
        let (z, labels) = sample_groups(100_000, -0.5, 0.5, 4, 2);
        assert_abs_diff_eq!(empirical_leakage(z.view(), &labels).unwrap(), 0.5, epsilon = 0.02);
    }

    #[test]
    fn empirical_errors() {
        let z = Array2::zeros((3, 2));
        assert!(empirical_leakage(z.view(), &[0, 1, 1]).is_err());
        assert!(empirical_leakage(z.view(), &[0, 0, 2]).is_err());
        // constant dims survive through the floor
        let z = array![[1.0, 0.0], [1.0, 1.0], [1.0, 2.0], [1.0, 3.0]];
        let d = empirical_leakage(z.view(), &[0, 0, 1, 1]).unwrap();
        assert!(d.is_finite() && d > 0.0);
    }

    proptest! {
        #[test]
        fn bhattacharyya_symmetric_and_nonnegative(
            m in proptest::collection::vec(-3.0f64..3.0, 6),
            v in proptest::collection::vec(0.05f64..4.0, 6),
        ) {
            let a = GaussianSummary::new(Array1::from(m[..3].to_vec()), Array1::from(v[..3].to_vec())).unwrap();
            let b = GaussianSummary::new(Array1::from(m[3..].to_vec()), Array1::from(v[3..].to_vec())).unwrap();
            let ab = bhattacharyya_diag(&a, &b).unwrap();
            let ba = bhattacharyya_diag(&b, &a).unwrap();
            prop_assert!((ab - ba).abs() < 1e-12);
            prop_assert!(ab >= 0.0);
            if ab == 0.0 {
                prop_assert_eq!(&a, &b);
            }
        }

        #[test]
        fn threshold_is_polynomial_root(n in 10usize..5000, s in 0.001f64..1.0) {
            let t = bias_threshold(n, s / 2.0, s / 2.0).unwrap();
            let m = n as f64 * s;
            let residual = m * m * m * t * t + 2.0 * m * m * t - 1.0;
            prop_assert!(residual.abs() < 1e-9);
        }
    }
}
