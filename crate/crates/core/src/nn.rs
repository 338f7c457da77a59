//! Dense feed-forward networks with hand-written reverse-mode gradients.
//!
//! Rows of every input matrix are samples; a layer computes
//! `act(X·W + b)` with `W` stored as `fan_in × fan_out`.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
    Identity,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => sigmoid(x),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the pre-activation `x` and output `y`.
    pub fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Identity => 1.0,
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Glorot-uniform initialization, `U(±√(6/(fan_in+fan_out)))`.
pub fn glorot_uniform<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Array2<f64> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Array2::from_shape_fn((fan_in, fan_out), |_| rng.random_range(-bound..=bound))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    layers: Vec<Layer>,
    #[serde(skip)]
    generation: u64,
}

#[derive(Debug, Clone)]
pub struct MlpCache {
    generation: u64,
    /// Input to each layer followed by the final output.
    inputs: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
}

impl MlpCache {
    pub fn output(&self) -> &Array2<f64> {
        self.inputs.last().expect("cache always holds the output")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpGradients {
    pub layers: Vec<LayerGrad>,
}

impl MlpGradients {
    pub fn flatten(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weight.iter().chain(l.bias.iter()).copied())
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }

    pub fn scale(&mut self, factor: f64) {
        for l in &mut self.layers {
            l.weight *= factor;
            l.bias *= factor;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimState {
    pub learning_rate: f64,
    pub clip_bound: Option<f64>,
}

impl OptimState {
    pub fn new(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            clip_bound: None,
        }
    }

    pub fn clipped(learning_rate: f64, clip_bound: f64) -> Self {
        Self {
            learning_rate,
            clip_bound: Some(clip_bound),
        }
    }
}

impl Mlp {
    /// Builds a network with layer widths `dims` (input first). One activation
    /// per layer, so `activations.len() == dims.len() - 1`.
    pub fn new<R: Rng + ?Sized>(dims: &[usize], activations: &[Activation], rng: &mut R) -> Result<Self> {
        if dims.len() < 2 || activations.len() != dims.len() - 1 {
            return Err(Error::invalid("need one activation per layer and at least one layer"));
        }
        let layers = dims
            .windows(2)
            .zip(activations)
            .map(|(w, &activation)| Layer {
                weight: glorot_uniform(w[0], w[1], rng),
                bias: Array1::zeros(w[1]),
                activation,
            })
            .collect();
        Ok(Self { layers, generation: 0 })
    }

    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("empty network"));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.len() != l.weight.ncols() {
                return Err(Error::dim(format!("layer {i}: bias length differs from width")));
            }
            if i > 0 && layers[i - 1].weight.ncols() != l.weight.nrows() {
                return Err(Error::dim(format!("layer {i} does not chain with layer {}", i - 1)));
            }
        }
        Ok(Self { layers, generation: 0 })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.weight.ncols())
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// Parameters in the same order as [`MlpGradients::flatten`].
    pub fn parameters(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weight.iter().chain(l.bias.iter()).copied())
            .collect()
    }

    pub fn set_parameters(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.parameter_count() {
            return Err(Error::dim("parameter vector length"));
        }
        let mut it = values.iter().copied();
        for l in &mut self.layers {
            for w in l.weight.iter_mut().chain(l.bias.iter_mut()) {
                *w = it.next().unwrap_or_default();
            }
        }
        self.generation += 1;
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.parameters().iter().all(|v| v.is_finite())
    }

    pub fn max_abs_parameter(&self) -> f64 {
        self.parameters().iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn forward(&self, inputs: ArrayView2<'_, f64>) -> Result<MlpCache> {
        if inputs.ncols() != self.input_dim() {
            return Err(Error::dim(format!(
                "network expects {} inputs, got {}",
                self.input_dim(),
                inputs.ncols()
            )));
        }
        if inputs.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("network input".into()));
        }
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        let mut pre = Vec::with_capacity(self.layers.len());
        acts.push(inputs.to_owned());
        for layer in &self.layers {
            let x = acts.last().expect("non-empty");
            let z = x.dot(&layer.weight) + &layer.bias;
            let a = z.mapv(|v| layer.activation.apply(v));
            pre.push(z);
            acts.push(a);
        }
        Ok(MlpCache {
            generation: self.generation,
            inputs: acts,
            pre,
        })
    }

    /// Output only.
    pub fn predict(&self, inputs: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let mut cache = self.forward(inputs)?;
        Ok(cache.inputs.pop().expect("non-empty"))
    }

    pub fn backward(&self, cache: &MlpCache, output_grad: ArrayView2<'_, f64>) -> Result<(MlpGradients, Array2<f64>)> {
        if cache.generation != self.generation || cache.pre.len() != self.layers.len() {
            return Err(Error::invalid("stale forward cache"));
        }
        if output_grad.dim() != cache.output().dim() {
            return Err(Error::dim(format!(
                "output gradient {:?} vs output {:?}",
                output_grad.dim(),
                cache.output().dim()
            )));
        }
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut upstream = output_grad.to_owned();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let mut delta = upstream;
            Zip::from(&mut delta)
                .and(&cache.pre[i])
                .and(&cache.inputs[i + 1])
                .for_each(|d, &x, &y| *d *= layer.activation.derivative(x, y));
            let weight = cache.inputs[i].t().dot(&delta);
            let bias = delta.sum_axis(Axis(0));
            upstream = delta.dot(&layer.weight.t());
            grads.push(LayerGrad { weight, bias });
        }
        grads.reverse();
        Ok((MlpGradients { layers: grads }, upstream))
    }

    /// `θ ← θ − lr·∇`, then clamp every parameter to `[−c, c]` when a clip
    /// bound is set.
    pub fn sgd_step(&mut self, grads: &MlpGradients, opt: &OptimState) -> Result<()> {
        if grads.layers.len() != self.layers.len() {
            return Err(Error::dim("gradient layer count"));
        }
        for (l, g) in self.layers.iter().zip(&grads.layers) {
            if l.weight.dim() != g.weight.dim() || l.bias.dim() != g.bias.dim() {
                return Err(Error::dim("gradient shape"));
            }
        }
        if !grads.is_finite() {
            return Err(Error::NonFinite("gradient".into()));
        }
        for (l, g) in self.layers.iter_mut().zip(&grads.layers) {
            l.weight.scaled_add(-opt.learning_rate, &g.weight);
            l.bias.scaled_add(-opt.learning_rate, &g.bias);
        }
        if let Some(c) = opt.clip_bound {
            self.clip(c);
        }
        self.generation += 1;
        Ok(())
    }

    pub fn clip(&mut self, c: f64) {
        for l in &mut self.layers {
            l.weight.mapv_inplace(|v| v.clamp(-c, c));
            l.bias.mapv_inplace(|v| v.clamp(-c, c));
        }
        self.generation += 1;
    }
}

/// Softmax cross-entropy for one sample; gradient w.r.t. the logits.
pub fn cross_entropy(logits: ArrayView1<'_, f64>, label: usize) -> Result<(f64, Array1<f64>)> {
    if label >= logits.len() {
        return Err(Error::invalid(format!(
            "label {label} out of range for {} classes",
            logits.len()
        )));
    }
    let max = logits.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let exp = logits.mapv(|v| (v - max).exp());
    let sum = exp.sum();
    let value = sum.ln() + max - logits[label];
    let mut grad = exp / sum;
    grad[label] -= 1.0;
    Ok((value, grad))
}

/// Summed cross-entropy over rows; gradient has the logits' shape.
pub fn cross_entropy_batch(logits: ArrayView2<'_, f64>, labels: &[usize]) -> Result<(f64, Array2<f64>)> {
    if logits.nrows() != labels.len() {
        return Err(Error::dim("logit rows differ from label count"));
    }
    let mut total = 0.0;
    let mut grad = Array2::zeros(logits.raw_dim());
    for (i, &y) in labels.iter().enumerate() {
        let (v, g) = cross_entropy(logits.row(i), y)?;
        total += v;
        grad.row_mut(i).assign(&g);
    }
    Ok((total, grad))
}

/// Binary cross-entropy on a probability clamped to `[1e-7, 1 − 1e-7]`;
/// gradient w.r.t. the (unclamped) probability, zero where clamping binds.
pub fn binary_cross_entropy(prob: f64, target: f64) -> (f64, f64) {
    let p = prob.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    let value = -(target * p.ln() + (1.0 - target) * (1.0 - p).ln());
    let grad = if prob == p {
        -target / p + (1.0 - target) / (1.0 - p)
    } else {
        0.0
    };
    (value, grad)
}

/// `BCE(σ(logit), target)` with the same probability clamp; gradient w.r.t.
/// the logit.
pub fn binary_cross_entropy_logit(logit: f64, target: f64) -> (f64, f64) {
    let s = sigmoid(logit);
    let (value, dp) = binary_cross_entropy(s, target);
    (value, dp * s * (1.0 - s))
}

pub fn argmax(row: ArrayView1<'_, f64>) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{central_difference, max_relative_error};
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn zero_network_outputs_zero() {
        let layer = Layer {
            weight: Array2::zeros((3, 2)),
            bias: Array1::zeros(2),
            activation: Activation::Identity,
        };
        let net = Mlp::from_layers(vec![layer]).unwrap();
        let out = net.predict(array![[1.0, -2.0, 3.0]].view()).unwrap();
        assert_eq!(out, array![[0.0, 0.0]]);
    }

    #[test]
    fn identity_layer_passes_input() {
        let net = Mlp::from_layers(vec![Layer {
            weight: Array2::eye(3),
            bias: Array1::zeros(3),
            activation: Activation::Identity,
        }])
        .unwrap();
        let x = array![[0.5, -1.0, 2.0], [3.0, 4.0, 5.0]];
        assert_eq!(net.predict(x.view()).unwrap(), x);
    }

    #[test]
    fn two_layer_hand_computation() {
        let net = Mlp::from_layers(vec![
            Layer {
                weight: array![[1.0, -1.0], [2.0, 0.5]],
                bias: array![0.1, -0.2],
                activation: Activation::Relu,
            },
            Layer {
                weight: array![[0.3], [-2.0]],
                bias: array![1.0],
                activation: Activation::Identity,
            },
        ])
        .unwrap();
        // x = [1, 2]: hidden pre = [1+4+0.1, -1+1-0.2] = [5.1, -0.2] → relu [5.1, 0]
        // out = 0.3·5.1 + 1 = 2.53
        let out = net.predict(array![[1.0, 2.0]].view()).unwrap();
        assert_abs_diff_eq!(out[[0, 0]], 2.53, epsilon = 1e-12);
    }

    #[test]
    fn forward_rejects_bad_input() {
        let net = Mlp::new(&[2, 3], &[Activation::Tanh], &mut rng(0)).unwrap();
        assert!(net.forward(array![[1.0, 2.0, 3.0]].view()).is_err());
        assert!(net.forward(array![[1.0, f64::NAN]].view()).is_err());
    }

    #[test]
    fn zero_output_gradient() {
        let net = Mlp::new(&[3, 4, 2], &[Activation::Tanh, Activation::Identity], &mut rng(1)).unwrap();
        let x = array![[0.2, -0.3, 0.9]];
        let cache = net.forward(x.view()).unwrap();
        let (g, dx) = net.backward(&cache, Array2::zeros((1, 2)).view()).unwrap();
        assert!(g.flatten().iter().all(|&v| v == 0.0));
        assert!(dx.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn scalar_linear_gradient() {
        let net = Mlp::from_layers(vec![Layer {
            weight: array![[1.7]],
            bias: array![0.4],
            activation: Activation::Identity,
        }])
        .unwrap();
        let cache = net.forward(array![[3.0]].view()).unwrap();
        let (g, dx) = net.backward(&cache, array![[1.0]].view()).unwrap();
        assert_eq!(g.layers[0].weight[[0, 0]], 3.0);
        assert_eq!(g.layers[0].bias[0], 1.0);
        assert_eq!(dx[[0, 0]], 1.7);
    }

    #[test]
    fn stale_cache_rejected() {
        let mut net = Mlp::new(&[2, 1], &[Activation::Identity], &mut rng(2)).unwrap();
        let cache = net.forward(array![[1.0, 1.0]].view()).unwrap();
        let (g, _) = net.backward(&cache, array![[1.0]].view()).unwrap();
        net.sgd_step(&g, &OptimState::new(0.1)).unwrap();
        assert!(net.backward(&cache, array![[1.0]].view()).is_err());
    }

    #[test]
    fn three_layer_finite_differences() {
        let mut r = rng(3);
        let net = Mlp::new(
            &[4, 5, 3, 2],
            &[Activation::Tanh, Activation::Sigmoid, Activation::Identity],
            &mut r,
        )
        .unwrap();
        let x = Array2::from_shape_fn((6, 4), |_| r.random_range(-1.0..1.0));
        let w = Array2::from_shape_fn((6, 2), |_| r.random_range(-1.0..1.0));
        let loss = |m: &Mlp, x: ArrayView2<'_, f64>| (m.predict(x).unwrap() * &w).sum();

        let cache = net.forward(x.view()).unwrap();
        let (g, dx) = net.backward(&cache, w.view()).unwrap();

        let numeric = central_difference(&net.parameters(), 1e-5, |p| {
            let mut m = net.clone();
            m.set_parameters(p).unwrap();
            loss(&m, x.view())
        });
        assert!(max_relative_error(&g.flatten(), &numeric) < 1e-4);

        let flat_x: Vec<f64> = x.iter().copied().collect();
        let numeric_x = central_difference(&flat_x, 1e-5, |p| {
            loss(&net, Array2::from_shape_vec((6, 4), p.to_vec()).unwrap().view())
        });
        let analytic_x: Vec<f64> = dx.iter().copied().collect();
        assert!(max_relative_error(&analytic_x, &numeric_x) < 1e-4);
    }

    #[test]
    fn sgd_step_arithmetic_and_clipping() {
        let mut net = Mlp::from_layers(vec![Layer {
            weight: array![[1.0]],
            bias: array![0.0],
            activation: Activation::Identity,
        }])
        .unwrap();
        let zero = MlpGradients {
            layers: vec![LayerGrad {
                weight: array![[0.0]],
                bias: array![0.0],
            }],
        };
        net.sgd_step(&zero, &OptimState::new(0.2)).unwrap();
        assert_eq!(net.layers()[0].weight[[0, 0]], 1.0);

        let g = MlpGradients {
            layers: vec![LayerGrad {
                weight: array![[0.5]],
                bias: array![0.0],
            }],
        };
        net.sgd_step(&g, &OptimState::new(0.2)).unwrap();
        assert_abs_diff_eq!(net.layers()[0].weight[[0, 0]], 0.9, epsilon = 1e-15);

        net.sgd_step(&zero, &OptimState::clipped(0.2, 0.05)).unwrap();
        assert_eq!(net.layers()[0].weight[[0, 0]], 0.05);

        let bad = MlpGradients {
            layers: vec![LayerGrad {
                weight: array![[f64::INFINITY]],
                bias: array![0.0],
            }],
        };
        assert!(net.sgd_step(&bad, &OptimState::new(0.2)).is_err());
        assert_eq!(net.layers()[0].weight[[0, 0]], 0.05);
    }

    #[test]
    fn clipping_is_idempotent() {
        let mut net = Mlp::new(&[3, 8, 1], &[Activation::Relu, Activation::Identity], &mut rng(5)).unwrap();
        net.clip(0.05);
        let once = net.parameters();
        net.clip(0.05);
        assert_eq!(once, net.parameters());
        assert!(net.max_abs_parameter() <= 0.05);
    }

    #[test]
    fn loss_examples() {
        let (v, _) = cross_entropy(array![0.3, 0.3, 0.3, 0.3].view(), 2).unwrap();
        assert_abs_diff_eq!(v, 4f64.ln(), epsilon = 1e-12);
        assert!(cross_entropy(array![0.0, 1.0].view(), 2).is_err());
        assert!(binary_cross_entropy(1.0, 1.0).0 <= 1e-6);
        assert!(binary_cross_entropy(0.0, 0.0).0 <= 1e-6);
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        let logits = [0.3, -1.2, 2.0, 0.7];
        let (_, g) = cross_entropy(ndarray::aview1(&logits), 1).unwrap();
        let numeric = central_difference(&logits, 1e-5, |l| cross_entropy(ndarray::aview1(l), 1).unwrap().0);
        assert!(max_relative_error(g.as_slice().unwrap(), &numeric) < 1e-4);

        for (p, t) in [(0.3, 1.0), (0.8, 0.0), (0.55, 1.0)] {
            let (_, g) = binary_cross_entropy(p, t);
            let n = central_difference(&[p], 1e-5, |x| binary_cross_entropy(x[0], t).0);
            assert!(max_relative_error(&[g], &n) < 1e-4);
            let (_, gl) = binary_cross_entropy_logit(p, t);
            let nl = central_difference(&[p], 1e-5, |x| binary_cross_entropy_logit(x[0], t).0);
            assert!(max_relative_error(&[gl], &nl) < 1e-4);
        }
    }

    #[test]
    fn logistic_sanity_on_separable_data() {
        let mut r = rng(11);
        let n = 200;
        let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
        let x = Array2::from_shape_fn((n, 2), |(i, j)| {
            let shift = if labels[i] == 1 { 1.5 } else { -1.5 };
            let axis = if j == 0 { shift } else { 0.3 * shift };
            axis + r.random_range(-1.0..1.0)
        });
        let mut net = Mlp::new(&[2, 2], &[Activation::Identity], &mut r).unwrap();
        let opt = OptimState::new(0.5);
        for _ in 0..2000 {
            let cache = net.forward(x.view()).unwrap();
            let (_, mut g) = cross_entropy_batch(cache.output().view(), &labels).unwrap();
            g /= n as f64;
            let (grads, _) = net.backward(&cache, g.view()).unwrap();
            net.sgd_step(&grads, &opt).unwrap();
        }
        let out = net.predict(x.view()).unwrap();
        let correct = (0..n).filter(|&i| argmax(out.row(i)) == labels[i]).count();
        assert!(correct as f64 / n as f64 >= 0.99);
    }
}
