//! One-layer GCN encoder `Z = act(Ã·X·W)` with gradients for the weight, the
//! propagation matrix and the input features.

use ndarray::{Array2, ArrayView2, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::SparseMatrix;
use crate::nn::{glorot_uniform, Activation};

/// Propagation matrix accepted by the encoder.
#[derive(Debug, Clone, Copy)]
pub enum Propagation<'a> {
    Sparse(&'a SparseMatrix),
    Dense(ArrayView2<'a, f64>),
}

impl Propagation<'_> {
    pub fn dim(&self) -> (usize, usize) {
        match self {
            Propagation::Sparse(m) => (m.n_rows(), m.n_cols()),
            Propagation::Dense(m) => m.dim(),
        }
    }

    fn apply(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        match self {
            Propagation::Sparse(m) => m.mul_dense(x),
            Propagation::Dense(m) => Ok(m.dot(&x)),
        }
    }

    fn apply_transpose(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        match self {
            Propagation::Sparse(m) => {
                let mut out = Array2::zeros((m.n_cols(), x.ncols()));
                for r in 0..m.n_rows() {
                    for (c, v) in m.row(r) {
                        out.row_mut(c).scaled_add(v, &x.row(r));
                    }
                }
                out
            }
            Propagation::Dense(m) => m.t().dot(&x),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GcnEncoder {
    pub weight: Array2<f64>,
    pub activation: Activation,
    #[serde(skip)]
    generation: u64,
}

#[derive(Debug, Clone)]
pub struct EncoderCache {
    generation: u64,
    shape: (usize, usize),
    /// `X·W`
    projected: Array2<f64>,
    /// `Ã·X`
    aggregated: Array2<f64>,
    pre: Array2<f64>,
    output: Array2<f64>,
}

impl EncoderCache {
    pub fn output(&self) -> &Array2<f64> {
        &self.output
    }

    pub fn into_output(self) -> Array2<f64> {
        self.output
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderGradients {
    pub weight: Array2<f64>,
    /// Dense `n × n`.
    pub adjacency: Array2<f64>,
    pub input: Array2<f64>,
}

impl GcnEncoder {
    pub fn new(weight: Array2<f64>, activation: Activation) -> Result<Self> {
        if weight.ncols() == 0 {
            return Err(Error::invalid("embedding dimension must be at least 1"));
        }
        if weight.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("encoder weight".into()));
        }
        Ok(Self {
            weight,
            activation,
            generation: 0,
        })
    }

    pub fn random<R: Rng + ?Sized>(
        input_dim: usize,
        embedding_dim: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        Self::new(glorot_uniform(input_dim, embedding_dim, rng), activation)
    }

    pub fn embedding_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn input_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn encode(&self, adjacency: Propagation<'_>, x: ArrayView2<'_, f64>) -> Result<EncoderCache> {
        let (rows, cols) = adjacency.dim();
        if rows != cols || cols != x.nrows() {
            return Err(Error::dim(format!(
                "adjacency {rows}x{cols} with {} feature rows",
                x.nrows()
            )));
        }
        if x.ncols() != self.input_dim() {
            return Err(Error::dim(format!(
                "encoder expects {} features, got {}",
                self.input_dim(),
                x.ncols()
            )));
        }
        let projected = x.dot(&self.weight);
        let aggregated = adjacency.apply(x)?;
        let pre = adjacency.apply(projected.view())?;
        let output = pre.mapv(|v| self.activation.apply(v));
        Ok(EncoderCache {
            generation: self.generation,
            shape: (rows, x.ncols()),
            projected,
            aggregated,
            pre,
            output,
        })
    }

    fn pre_gradient(&self, cache: &EncoderCache, dz: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if cache.generation != self.generation {
            return Err(Error::invalid("stale encoder cache"));
        }
        if dz.dim() != cache.output.dim() {
            return Err(Error::dim("embedding gradient shape"));
        }
        let mut delta = dz.to_owned();
        Zip::from(&mut delta)
            .and(&cache.pre)
            .and(&cache.output)
            .for_each(|d, &x, &y| *d *= self.activation.derivative(x, y));
        Ok(delta)
    }

    /// `dL/dW` only.
    pub fn weight_gradient(&self, cache: &EncoderCache, dz: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let delta = self.pre_gradient(cache, dz)?;
        Ok(cache.aggregated.t().dot(&delta))
    }

    /// `dL/dÃ = δ·(XW)ᵀ` only.
    pub fn adjacency_gradient(&self, cache: &EncoderCache, dz: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let delta = self.pre_gradient(cache, dz)?;
        Ok(delta.dot(&cache.projected.t()))
    }

    /// All three gradients of `L(act(Ã·X·W))` given `dL/dZ`. The adjacency
    /// must be the one passed to [`GcnEncoder::encode`].
    pub fn encode_backward(
        &self,
        cache: &EncoderCache,
        adjacency: Propagation<'_>,
        dz: ArrayView2<'_, f64>,
    ) -> Result<EncoderGradients> {
        if adjacency.dim() != (cache.shape.0, cache.shape.0) {
            return Err(Error::dim("adjacency differs from the encoded one"));
        }
        let delta = self.pre_gradient(cache, dz)?;
        let weight = cache.aggregated.t().dot(&delta);
        let adj = delta.dot(&cache.projected.t());
        let input = adjacency.apply_transpose(delta.view()).dot(&self.weight.t());
        Ok(EncoderGradients {
            weight,
            adjacency: adj,
            input,
        })
    }

    pub fn step(&mut self, weight_grad: ArrayView2<'_, f64>, learning_rate: f64) -> Result<()> {
        if weight_grad.dim() != self.weight.dim() {
            return Err(Error::dim("encoder gradient shape"));
        }
        if weight_grad.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("encoder gradient".into()));
        }
        self.weight.scaled_add(-learning_rate, &weight_grad);
        self.generation += 1;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{central_difference, max_relative_error};
    use crate::graph::{normalize, LabeledGraph, NormalizationKind};
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(r: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
        Array2::from_shape_fn((rows, cols), |_| r.random_range(-1.0..1.0))
    }

    #[test]
    fn zero_weight_gives_zero_embeddings() {
        let x = array![[1.0, 2.0], [3.0, -4.0]];
        let a = Array2::eye(2);
        for act in [Activation::Tanh, Activation::Relu, Activation::Identity] {
            let enc = GcnEncoder::new(Array2::zeros((2, 3)), act).unwrap();
            let z = enc.encode(Propagation::Dense(a.view()), x.view()).unwrap();
            assert!(z.output().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn identity_adjacency_is_linear_map() {
        let x = array![[1.0, 2.0], [3.0, -4.0], [0.5, 0.5]];
        let w = array![[0.1, 0.2, 0.3], [-1.0, 0.0, 2.0]];
        let enc = GcnEncoder::new(w.clone(), Activation::Identity).unwrap();
        let a = Array2::eye(3);
        let z = enc.encode(Propagation::Dense(a.view()), x.view()).unwrap();
        assert_eq!(z.output(), &x.dot(&w));
    }

    #[test]
    fn three_node_dense_oracle() {
        let a = array![[0.0, 0.5, 0.5], [1.0, 0.0, 0.0], [0.25, 0.75, 0.0]];
        let x = array![[1.0, -1.0], [0.5, 2.0], [-0.3, 0.1]];
        let w = array![[0.7, -0.2], [0.4, 0.9]];
        let enc = GcnEncoder::new(w.clone(), Activation::Tanh).unwrap();
        let z = enc.encode(Propagation::Dense(a.view()), x.view()).unwrap();
        // explicit triple loop
        for i in 0..3 {
            for m in 0..2 {
                let mut s = 0.0;
                for j in 0..3 {
                    for d in 0..2 {
                        s += a[[i, j]] * x[[j, d]] * w[[d, m]];
                    }
                }
                assert!((z.output()[[i, m]] - s.tanh()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sparse_and_dense_agree() {
        let mut r = ChaCha8Rng::seed_from_u64(4);
        let g = LabeledGraph::new(
            5,
            &[(0, 1), (1, 2), (2, 3), (3, 4), (0, 4), (1, 3)],
            random_matrix(&mut r, 5, 3),
            vec![0, 1, 0, 1, 0],
            None,
        )
        .unwrap();
        let op = normalize(&g, NormalizationKind::LeftStochastic);
        let dense = op.matrix.to_dense();
        let enc = GcnEncoder::random(3, 4, Activation::Tanh, &mut r).unwrap();
        let zs = enc
            .encode(Propagation::Sparse(&op.matrix), g.features().view())
            .unwrap();
        let zd = enc
            .encode(Propagation::Dense(dense.view()), g.features().view())
            .unwrap();
        for (a, b) in zs.output().iter().zip(zd.output()) {
            assert!((a - b).abs() < 1e-12);
        }
        let dz = random_matrix(&mut r, 5, 4);
        let gs = enc
            .encode_backward(&zs, Propagation::Sparse(&op.matrix), dz.view())
            .unwrap();
        let gd = enc
            .encode_backward(&zd, Propagation::Dense(dense.view()), dz.view())
            .unwrap();
        for (a, b) in gs.input.iter().zip(&gd.input) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_upstream_gradient() {
        let mut r = ChaCha8Rng::seed_from_u64(5);
        let enc = GcnEncoder::random(3, 2, Activation::Tanh, &mut r).unwrap();
        let a = random_matrix(&mut r, 4, 4);
        let x = random_matrix(&mut r, 4, 3);
        let c = enc.encode(Propagation::Dense(a.view()), x.view()).unwrap();
        let g = enc
            .encode_backward(&c, Propagation::Dense(a.view()), Array2::zeros((4, 2)).view())
            .unwrap();
        assert!(g.weight.iter().chain(&g.adjacency).chain(&g.input).all(|&v| v == 0.0));
    }

    #[test]
    fn scalar_adjacency_gradient() {
        let enc = GcnEncoder::new(array![[3.0]], Activation::Identity).unwrap();
        let a = array![[0.5]];
        let x = array![[2.0]];
        let c = enc.encode(Propagation::Dense(a.view()), x.view()).unwrap();
        let g = enc
            .encode_backward(&c, Propagation::Dense(a.view()), array![[1.0]].view())
            .unwrap();
        assert_eq!(g.adjacency[[0, 0]], 6.0);
        assert_eq!(g.weight[[0, 0]], 1.0);
        assert_eq!(g.input[[0, 0]], 1.5);
    }

    #[test]
    fn five_node_finite_differences() {
        let mut r = ChaCha8Rng::seed_from_u64(6);
        let (n, d, m) = (5, 3, 4);
        let enc = GcnEncoder::random(d, m, Activation::Tanh, &mut r).unwrap();
        let a = random_matrix(&mut r, n, n);
        let x = random_matrix(&mut r, n, d);
        let probe = random_matrix(&mut r, n, m);
        let loss = |e: &GcnEncoder, a: &Array2<f64>, x: &Array2<f64>| {
            let c = e.encode(Propagation::Dense(a.view()), x.view()).unwrap();
            (c.output() * &probe).sum()
        };
        let c = enc.encode(Propagation::Dense(a.view()), x.view()).unwrap();
        let g = enc
            .encode_backward(&c, Propagation::Dense(a.view()), probe.view())
            .unwrap();

        let nw = central_difference(enc.weight.as_slice().unwrap(), 1e-5, |p| {
            let e = GcnEncoder::new(Array2::from_shape_vec((d, m), p.to_vec()).unwrap(), Activation::Tanh).unwrap();
            loss(&e, &a, &x)
        });
        assert!(max_relative_error(g.weight.as_slice().unwrap(), &nw) < 1e-4);

        let na = central_difference(a.as_slice().unwrap(), 1e-5, |p| {
            loss(&enc, &Array2::from_shape_vec((n, n), p.to_vec()).unwrap(), &x)
        });
        assert!(max_relative_error(g.adjacency.as_slice().unwrap(), &na) < 1e-4);

        let nx = central_difference(x.as_slice().unwrap(), 1e-5, |p| {
            loss(&enc, &a, &Array2::from_shape_vec((n, d), p.to_vec()).unwrap())
        });
        assert!(max_relative_error(g.input.as_slice().unwrap(), &nx) < 1e-4);
    }

    #[test]
    fn stale_cache_and_dims() {
        let mut r = ChaCha8Rng::seed_from_u64(7);
        let mut enc = GcnEncoder::random(2, 2, Activation::Tanh, &mut r).unwrap();
        let a = Array2::eye(3);
        let x = random_matrix(&mut r, 3, 2);
        let c = enc.encode(Propagation::Dense(a.view()), x.view()).unwrap();
        enc.step(Array2::zeros((2, 2)).view(), 0.1).unwrap();
        assert!(enc.weight_gradient(&c, Array2::zeros((3, 2)).view()).is_err());
        assert!(enc.encode(Propagation::Dense(Array2::eye(2).view()), x.view()).is_err());
    }

    #[test]
    fn permutation_equivariance() {
        let mut r = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..5 {
            let n = 6;
            let mut edges = vec![];
            for i in 0..n {
                for j in (i + 1)..n {
                    if r.random_bool(0.4) {
                        edges.push((i, j));
                    }
                }
            }
            let g = LabeledGraph::new(n, &edges, random_matrix(&mut r, n, 3), vec![0; n], None).unwrap();
            let mut perm: Vec<usize> = (0..n).collect();
            use rand::seq::SliceRandom;
            perm.shuffle(&mut r);
            let gp = g.permuted(&perm).unwrap();
            let enc = GcnEncoder::random(3, 4, Activation::Tanh, &mut r).unwrap();
            let op = normalize(&g, NormalizationKind::LeftStochastic);
            let opp = normalize(&gp, NormalizationKind::LeftStochastic);
            let z = enc
                .encode(Propagation::Sparse(&op.matrix), g.features().view())
                .unwrap();
            let zp = enc
                .encode(Propagation::Sparse(&opp.matrix), gp.features().view())
                .unwrap();
            for (v, &pv) in perm.iter().enumerate() {
                for m in 0..4 {
                    assert!((z.output()[[v, m]] - zp.output()[[pv, m]]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn row_stochastic_bound() {
        let mut r = ChaCha8Rng::seed_from_u64(9);
        let n = 8;
        let mut a = Array2::from_shape_fn((n, n), |_| r.random_range(0.0..1.0));
        for mut row in a.rows_mut() {
            let s = row.sum();
            row /= s;
        }
        let x = random_matrix(&mut r, n, 3);
        let w = random_matrix(&mut r, 3, 5);
        let enc = GcnEncoder::new(w.clone(), Activation::Identity).unwrap();
        let z = enc.encode(Propagation::Dense(a.view()), x.view()).unwrap();
        let x_inf = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        // induced ∞-norm of W as a right operator: max column abs sum
        let w_norm = (0..5)
            .map(|c| w.column(c).iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max);
        let z_inf = z.output().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(z_inf <= x_inf * w_norm + 1e-12);
    }
}
