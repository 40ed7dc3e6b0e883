//! Fully-connected networks trained with mini-batch SGD.
//!
//! Every `W x`, `x delta^T` and `delta^T W` product goes through a
//! [`MatMulExecutor`], so the same training loop runs on plain local products
//! or on blinded products computed by remote workers. Biases, activations and
//! the loss always stay in the caller's process.

use std::time::{Duration, Instant};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Matrix;

/// How a linear layer's product is distributed across workers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ParallelPolicy {
    /// Split the weight matrix by rows across workers.
    #[default]
    TensorParallel,
    /// Split the batch by columns across workers.
    DataParallel,
    /// Compute in the master without offloading.
    InMaster,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerSpec {
    Linear {
        out_dim: usize,
        in_dim: usize,
        policy: ParallelPolicy,
    },
    Relu,
    Softmax,
}

/// Activation applied to a linear layer's output before the next layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Activation {
    Identity,
    Relu,
    Softmax,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearParams {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<LayerSpec>,
    params: Vec<LinearParams>,
    activations: Vec<Activation>,
}

impl Network {
    /// Builds a network with seeded weights uniform in `[-1/sqrt(n), 1/sqrt(n)]`
    /// and zero biases.
    pub fn new(layers: Vec<LayerSpec>, rng: &mut Rng) -> Result<Self> {
        let activations = validate_layers(&layers)?;
        let params = layers
            .iter()
            .filter_map(|l| match *l {
                LayerSpec::Linear {
                    out_dim, in_dim, ..
                } => {
                    let bound = (1.0 / in_dim as f64).sqrt();
                    Some(LinearParams {
                        weight: Matrix::random_uniform(out_dim, in_dim, -bound, bound, rng),
                        bias: vec![0.0; out_dim],
                    })
                }
                _ => None,
            })
            .collect();
        Ok(Self {
            layers,
            params,
            activations,
        })
    }

    /// Reassembles a network from stored parameters.
    pub fn from_parts(layers: Vec<LayerSpec>, params: Vec<LinearParams>) -> Result<Self> {
        let activations = validate_layers(&layers)?;
        let dims: Vec<(usize, usize)> = layers
            .iter()
            .filter_map(|l| match *l {
                LayerSpec::Linear {
                    out_dim, in_dim, ..
                } => Some((out_dim, in_dim)),
                _ => None,
            })
            .collect();
        if dims.len() != params.len() {
            return Err(Error::Network(format!(
                "{} linear layers but {} parameter sets",
                dims.len(),
                params.len()
            )));
        }
        for (l, ((m, n), p)) in dims.iter().zip(&params).enumerate() {
            if p.weight.shape() != (*m, *n) || p.bias.len() != *m {
                return Err(Error::Network(format!(
                    "layer {l}: parameters do not match declared shape {m}x{n}"
                )));
            }
        }
        Ok(Self {
            layers,
            params,
            activations,
        })
    }

    /// `Linear, ReLU, ..., Linear, Softmax` over the given widths.
    pub fn mlp(widths: &[usize], rng: &mut Rng) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::Network("an MLP needs at least two widths".into()));
        }
        let mut layers = Vec::new();
        for (i, pair) in widths.windows(2).enumerate() {
            if i > 0 {
                layers.push(LayerSpec::Relu);
            }
            layers.push(LayerSpec::Linear {
                out_dim: pair[1],
                in_dim: pair[0],
                policy: ParallelPolicy::default(),
            });
        }
        layers.push(LayerSpec::Softmax);
        Self::new(layers, rng)
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn params(&self) -> &[LinearParams] {
        &self.params
    }

    pub fn n_linear(&self) -> usize {
        self.params.len()
    }

    pub fn input_dim(&self) -> usize {
        self.params[0].weight.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.params[self.params.len() - 1].weight.rows()
    }

    /// Policies of the linear layers, in order.
    pub fn policies(&self) -> Vec<ParallelPolicy> {
        self.layers
            .iter()
            .filter_map(|l| match l {
                LayerSpec::Linear { policy, .. } => Some(*policy),
                _ => None,
            })
            .collect()
    }

    /// Overrides the policy of linear layer `index`.
    pub fn set_policy(&mut self, index: usize, policy: ParallelPolicy) {
        let mut seen = 0;
        for l in &mut self.layers {
            if let LayerSpec::Linear { policy: p, .. } = l {
                if seen == index {
                    *p = policy;
                    return;
                }
                seen += 1;
            }
        }
        panic!("no linear layer {index}");
    }

    fn apply_gradients(&mut self, grads: &[LinearGrad], learning_rate: f64) -> Result<()> {
        let updated = self
            .params
            .iter()
            .zip(grads)
            .map(|(p, g)| {
                Ok(LinearParams {
                    weight: p.weight.sub(&g.weight.scale(learning_rate))?,
                    bias: p
                        .bias
                        .iter()
                        .zip(&g.bias)
                        .map(|(b, gb)| b - learning_rate * gb)
                        .collect(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if updated.iter().any(|p| !p.weight.is_finite()) {
            return Err(Error::Network("weight update produced a non-finite value".into()));
        }
        self.params = updated;
        Ok(())
    }
}

fn validate_layers(layers: &[LayerSpec]) -> Result<Vec<Activation>> {
    let mut activations = Vec::new();
    let mut prev_out: Option<usize> = None;
    let mut after_linear = false;
    for (i, layer) in layers.iter().enumerate() {
        match *layer {
            LayerSpec::Linear {
                out_dim, in_dim, ..
            } => {
                if out_dim == 0 || in_dim == 0 {
                    return Err(Error::Network(format!("layer {i}: empty linear layer")));
                }
                if let Some(prev) = prev_out {
                    if prev != in_dim {
                        return Err(Error::Network(format!(
                            "layer {i}: input width {in_dim} does not match previous output {prev}"
                        )));
                    }
                    if after_linear {
                        activations.push(Activation::Identity);
                    }
                }
                prev_out = Some(out_dim);
                after_linear = true;
            }
            LayerSpec::Relu => {
                if !after_linear {
                    return Err(Error::Network(format!(
                        "layer {i}: ReLU must directly follow a linear layer"
                    )));
                }
                activations.push(Activation::Relu);
                after_linear = false;
            }
            LayerSpec::Softmax => {
                if !after_linear || i + 1 != layers.len() {
                    return Err(Error::Network(
                        "Softmax must be the last layer and follow a linear layer".into(),
                    ));
                }
                activations.push(Activation::Softmax);
                after_linear = false;
            }
        }
    }
    if !matches!(layers.last(), Some(LayerSpec::Softmax)) {
        return Err(Error::Network("the final layer must be Softmax".into()));
    }
    Ok(activations)
}

/// Computes the network's matrix products.
///
/// `multiply_forward` returns `W x`. `multiply_backward` returns
/// `(x delta^T, delta^T W)` for the `W` and `x` of the same layer's most
/// recent forward call; implementations keep whatever they need from the
/// forward call to answer it.
pub trait MatMulExecutor {
    /// Called at the start of every epoch.
    fn begin_epoch(&mut self, _epoch: usize) -> Result<()> {
        Ok(())
    }

    /// `lookahead` is the next linear layer's weight matrix, if any, so an
    /// executor can prepare it while waiting on this layer.
    fn multiply_forward(
        &mut self,
        layer: usize,
        weight: &Matrix,
        input: &Matrix,
        lookahead: Option<&Matrix>,
    ) -> Result<Matrix>;

    fn multiply_backward(&mut self, layer: usize, delta: &Matrix) -> Result<(Matrix, Matrix)>;
}

/// Plain in-process products.
#[derive(Debug, Default)]
pub struct LocalExecutor {
    retained: Vec<Option<(Matrix, Matrix)>>,
}

impl LocalExecutor {
    pub fn new() -> Self {
        Self::default()
    }
}

impl MatMulExecutor for LocalExecutor {
    fn multiply_forward(
        &mut self,
        layer: usize,
        weight: &Matrix,
        input: &Matrix,
        _lookahead: Option<&Matrix>,
    ) -> Result<Matrix> {
        let z = weight.matmul(input)?;
        if self.retained.len() <= layer {
            self.retained.resize(layer + 1, None);
        }
        self.retained[layer] = Some((weight.clone(), input.clone()));
        Ok(z)
    }

    fn multiply_backward(&mut self, layer: usize, delta: &Matrix) -> Result<(Matrix, Matrix)> {
        let (w, x) = self
            .retained
            .get(layer)
            .and_then(|r| r.as_ref())
            .ok_or_else(|| Error::Network(format!("no forward pass retained for layer {layer}")))?;
        let dt = delta.transpose();
        Ok((x.matmul(&dt)?, dt.matmul(w)?))
    }
}

/// Per-layer inputs and pre-activations of the last forward pass.
#[derive(Debug, Clone, Default)]
pub struct ForwardCache {
    pub inputs: Vec<Matrix>,
    pub pre_activations: Vec<Matrix>,
}

/// Column-wise softmax.
pub fn softmax(z: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(z.rows(), z.cols()).into_vec();
    let (rows, cols) = z.shape();
    for c in 0..cols {
        let max = (0..rows).map(|r| z.get(r, c)).fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for r in 0..rows {
            let e = (z.get(r, c) - max).exp();
            out[r * cols + c] = e;
            sum += e;
        }
        for r in 0..rows {
            out[r * cols + c] /= sum;
        }
    }
    Matrix::new(rows, cols, out).expect("softmax of finite logits is finite")
}

/// Forward pass over a batch whose columns are samples. Returns the softmax
/// output and the cache needed by [`backward`].
pub fn forward(
    net: &Network,
    input: &Matrix,
    exec: &mut dyn MatMulExecutor,
) -> Result<(Matrix, ForwardCache)> {
    if input.rows() != net.input_dim() {
        return Err(Error::Network(format!(
            "input has {} features, network expects {}",
            input.rows(),
            net.input_dim()
        )));
    }
    let mut cache = ForwardCache::default();
    let mut x = input.clone();
    for (l, p) in net.params.iter().enumerate() {
        let lookahead = net.params.get(l + 1).map(|next| &next.weight);
        let z = exec
            .multiply_forward(l, &p.weight, &x, lookahead)?
            .add_column_broadcast(&p.bias)?;
        let y = match net.activations[l] {
            Activation::Identity => z.clone(),
            Activation::Relu => z.map(|v| v.max(0.0)),
            Activation::Softmax => softmax(&z),
        };
        cache.inputs.push(x);
        cache.pre_activations.push(z);
        x = y;
    }
    Ok((x, cache))
}

/// Softmax cross-entropy over columns. Returns the mean negative
/// log-likelihood and the fused output gradient `softmax(z) - onehot`.
pub fn cross_entropy_softmax(logits: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    if labels.len() != logits.cols() {
        return Err(Error::Dataset(format!(
            "{} labels for a batch of {}",
            labels.len(),
            logits.cols()
        )));
    }
    let classes = logits.rows();
    if let Some(&label) = labels.iter().find(|l| **l >= classes) {
        return Err(Error::Label { label, classes });
    }
    let probs = softmax(logits);
    let mut loss = 0.0;
    for (c, &label) in labels.iter().enumerate() {
        let max = (0..classes).map(|r| logits.get(r, c)).fold(f64::NEG_INFINITY, f64::max);
        let log_sum: f64 = (0..classes)
            .map(|r| (logits.get(r, c) - max).exp())
            .sum::<f64>()
            .ln();
        loss -= logits.get(label, c) - max - log_sum;
    }
    loss /= labels.len() as f64;
    let delta = Matrix::from_fn(classes, labels.len(), |r, c| {
        probs.get(r, c) - if labels[c] == r { 1.0 } else { 0.0 }
    });
    Ok((loss, delta))
}

/// Gradient of the mean batch loss for one linear layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearGrad {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

/// Backpropagation. Returns the batch loss and per-layer gradients of the mean
/// loss, without modifying the network.
pub fn gradients(
    net: &Network,
    cache: &ForwardCache,
    labels: &[usize],
    exec: &mut dyn MatMulExecutor,
) -> Result<(f64, Vec<LinearGrad>)> {
    let n_layers = net.n_linear();
    if cache.pre_activations.len() != n_layers {
        return Err(Error::Network("forward cache does not match network".into()));
    }
    let (loss, mut delta) = cross_entropy_softmax(&cache.pre_activations[n_layers - 1], labels)?;
    let batch = labels.len() as f64;
    let mut grads = Vec::with_capacity(n_layers);
    for l in (0..n_layers).rev() {
        let (t1, t2) = exec.multiply_backward(l, &delta)?;
        grads.push(LinearGrad {
            weight: t1.transpose().scale(1.0 / batch),
            bias: delta.row_sums().iter().map(|s| s / batch).collect(),
        });
        if l > 0 {
            let z_prev = &cache.pre_activations[l - 1];
            delta = match net.activations[l - 1] {
                Activation::Identity => t2.transpose(),
                Activation::Relu => {
                    let mask = z_prev.map(|v| if v > 0.0 { 1.0 } else { 0.0 });
                    t2.transpose().hadamard(&mask)?
                }
                Activation::Softmax => unreachable!("softmax is only the final activation"),
            };
        }
    }
    grads.reverse();
    Ok((loss, grads))
}

/// One SGD step from a cached forward pass. Weights change only if every
/// product of the backward pass succeeded.
pub fn backward(
    net: &mut Network,
    cache: &ForwardCache,
    labels: &[usize],
    exec: &mut dyn MatMulExecutor,
    learning_rate: f64,
) -> Result<f64> {
    let (loss, grads) = gradients(net, cache, labels, exec)?;
    net.apply_gradients(&grads, learning_rate)?;
    Ok(loss)
}

/// Mean loss of the network on a batch, computed locally.
pub fn loss(net: &Network, input: &Matrix, labels: &[usize]) -> Result<f64> {
    let (_, cache) = forward(net, input, &mut LocalExecutor::new())?;
    Ok(cross_entropy_softmax(&cache.pre_activations[net.n_linear() - 1], labels)?.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochSummary {
    pub epoch: usize,
    pub mean_loss: f64,
    pub wall_clock: Duration,
}

/// Mini-batch SGD. Batches are contiguous chunks of a per-epoch seeded
/// shuffle, the last one possibly short. `on_epoch` sees the network at every
/// epoch boundary.
pub fn train_with(
    net: &mut Network,
    data: &Dataset,
    cfg: &TrainConfig,
    exec: &mut dyn MatMulExecutor,
    mut on_epoch: impl FnMut(&EpochSummary, &Network),
) -> Result<Vec<EpochSummary>> {
    cfg.validate()?;
    if data.len() < cfg.batch_size {
        return Err(Error::Config(format!(
            "dataset has {} samples, fewer than the batch size {}",
            data.len(),
            cfg.batch_size
        )));
    }
    if data.dim() != net.input_dim() || data.n_classes() > net.output_dim() {
        return Err(Error::Config("dataset does not fit the network".into()));
    }
    let mut rng = Rng::new(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut summaries = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        exec.begin_epoch(epoch)?;
        rng.shuffle(&mut order);
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let (x, y) = data.batch(chunk);
            let (_, cache) = forward(net, &x, exec)?;
            total += backward(net, &cache, &y, exec, cfg.learning_rate)?;
            batches += 1;
        }
        let summary = EpochSummary {
            epoch,
            mean_loss: total / batches as f64,
            wall_clock: start.elapsed(),
        };
        log::debug!("epoch {epoch}: loss {:.6}", summary.mean_loss);
        on_epoch(&summary, net);
        summaries.push(summary);
    }
    Ok(summaries)
}

pub fn train(
    net: &mut Network,
    data: &Dataset,
    cfg: &TrainConfig,
    exec: &mut dyn MatMulExecutor,
) -> Result<Vec<EpochSummary>> {
    train_with(net, data, cfg, exec, |_, _| {})
}

/// Predicted class per column.
pub fn predict(net: &Network, input: &Matrix, exec: &mut dyn MatMulExecutor) -> Result<Vec<usize>> {
    Ok(forward(net, input, exec)?.0.argmax_per_column())
}

/// Fraction of samples classified correctly.
pub fn accuracy(net: &Network, data: &Dataset, exec: &mut dyn MatMulExecutor) -> Result<f64> {
    let predictions = predict(net, data.features(), exec)?;
    let correct = predictions
        .iter()
        .zip(data.labels())
        .filter(|(p, l)| p == l)
        .count();
    Ok(correct as f64 / data.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::gen_blobs;

    fn linear(out_dim: usize, in_dim: usize) -> LayerSpec {
        LayerSpec::Linear {
            out_dim,
            in_dim,
            policy: ParallelPolicy::TensorParallel,
        }
    }

    #[test]
    fn identity_linear_passes_input_through() {
        let net = Network::from_parts(
            vec![linear(3, 3), LayerSpec::Softmax],
            vec![LinearParams {
                weight: Matrix::identity(3),
                bias: vec![0.0; 3],
            }],
        )
        .unwrap();
        let x = Matrix::random_normal(3, 4, &mut Rng::new(1));
        let (_, cache) = forward(&net, &x, &mut LocalExecutor::new()).unwrap();
        assert_eq!(cache.pre_activations[0], x);
        assert_eq!(predict(&net, &x, &mut LocalExecutor::new()).unwrap(), x.argmax_per_column());
    }

    #[test]
    fn two_layer_hand_trace() {
        // W1 = [[1,-1],[2,0]], b1 = [0, -1]; W2 = [[1,1],[0,-1]], b2 = [0.5, 0]
        // x = (1, 2): z1 = (-1, 1), y1 = (0, 1), z2 = (1.5, -1)
        let net = Network::from_parts(
            vec![linear(2, 2), LayerSpec::Relu, linear(2, 2), LayerSpec::Softmax],
            vec![
                LinearParams {
                    weight: Matrix::from_rows(&[[1.0, -1.0], [2.0, 0.0]]),
                    bias: vec![0.0, -1.0],
                },
                LinearParams {
                    weight: Matrix::from_rows(&[[1.0, 1.0], [0.0, -1.0]]),
                    bias: vec![0.5, 0.0],
                },
            ],
        )
        .unwrap();
        let x = Matrix::column(&[1.0, 2.0]);
        let (y, cache) = forward(&net, &x, &mut LocalExecutor::new()).unwrap();
        assert_eq!(cache.pre_activations[0], Matrix::column(&[-1.0, 1.0]));
        assert_eq!(cache.inputs[1], Matrix::column(&[0.0, 1.0]));
        assert_eq!(cache.pre_activations[1], Matrix::column(&[1.5, -1.0]));
        let p0 = 1.0 / (1.0 + (-2.5f64).exp());
        assert!((y.get(0, 0) - p0).abs() < 1e-15);
    }

    #[test]
    fn cross_entropy_cases() {
        let (loss, _) = cross_entropy_softmax(&Matrix::zeros(4, 3), &[0, 1, 3]).unwrap();
        assert!((loss - 4f64.ln()).abs() < 1e-12);

        let (loss, delta) =
            cross_entropy_softmax(&Matrix::column(&[1000.0, 0.0, 0.0]), &[0]).unwrap();
        assert!(loss < 1e-12);
        assert!(delta.max_abs() < 1e-12);

        // logits columns (1,2,3) label 2 and (0,0,ln 2) label 0
        let logits = Matrix::from_rows(&[[1.0, 0.0], [2.0, 0.0], [3.0, 2f64.ln()]]);
        let (loss, delta) = cross_entropy_softmax(&logits, &[2, 0]).unwrap();
        let s1 = 1f64.exp() + 2f64.exp() + 3f64.exp();
        let nll1 = -(3f64.exp() / s1).ln();
        let nll2 = -(1.0f64 / 4.0).ln();
        assert!((loss - (nll1 + nll2) / 2.0).abs() < 1e-12);
        assert!((delta.get(0, 1) - (0.25 - 1.0)).abs() < 1e-12);
        assert!((delta.get(2, 1) - 0.5).abs() < 1e-12);
        assert!((delta.get(2, 0) - (3f64.exp() / s1 - 1.0)).abs() < 1e-12);

        assert!(matches!(
            cross_entropy_softmax(&logits, &[3, 0]),
            Err(Error::Label { label: 3, classes: 3 })
        ));
    }

    #[test]
    fn zero_gradient_leaves_weights() {
        // A single sample with a saturated correct logit has zero delta.
        let mut net = Network::from_parts(
            vec![linear(2, 1), LayerSpec::Softmax],
            vec![LinearParams {
                weight: Matrix::from_rows(&[[1000.0], [0.0]]),
                bias: vec![0.0, 0.0],
            }],
        )
        .unwrap();
        let before = net.clone();
        let x = Matrix::column(&[1.0]);
        let mut exec = LocalExecutor::new();
        let (_, cache) = forward(&net, &x, &mut exec).unwrap();
        backward(&mut net, &cache, &[0], &mut exec, 0.1).unwrap();
        assert_eq!(net, before);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = Rng::new(5);
        let net = Network::mlp(&[5, 7, 6, 3], &mut rng).unwrap();
        let x = Matrix::random_normal(5, 8, &mut rng);
        let labels: Vec<usize> = (0..8).map(|i| i % 3).collect();
        let mut exec = LocalExecutor::new();
        let (_, cache) = forward(&net, &x, &mut exec).unwrap();
        let (_, grads) = gradients(&net, &cache, &labels, &mut exec).unwrap();
        let eps = 1e-5;
        for (l, g) in grads.iter().enumerate() {
            let (m, n) = net.params[l].weight.shape();
            for i in 0..m {
                for j in 0..n {
                    let bumped = |delta: f64| {
                        let mut params = net.params.clone();
                        let mut w = params[l].weight.clone().into_vec();
                        w[i * n + j] += delta;
                        params[l].weight = Matrix::new(m, n, w).unwrap();
                        let probe = Network::from_parts(net.layers.clone(), params).unwrap();
                        loss(&probe, &x, &labels).unwrap()
                    };
                    let fd = (bumped(eps) - bumped(-eps)) / (2.0 * eps);
                    let an = g.weight.get(i, j);
                    let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-3);
                    assert!(rel < 1e-4, "layer {l} ({i},{j}): fd {fd} vs {an}");
                }
            }
        }
    }

    #[test]
    fn layer_validation() {
        let mut rng = Rng::new(1);
        assert!(Network::new(vec![linear(2, 3)], &mut rng).is_err());
        assert!(Network::new(vec![linear(2, 3), linear(2, 3), LayerSpec::Softmax], &mut rng).is_err());
        assert!(Network::new(vec![LayerSpec::Relu, linear(2, 3), LayerSpec::Softmax], &mut rng).is_err());
        assert!(Network::new(vec![linear(2, 3), LayerSpec::Softmax, LayerSpec::Relu], &mut rng).is_err());
        let net = Network::new(vec![linear(4, 3), linear(2, 4), LayerSpec::Softmax], &mut rng).unwrap();
        assert_eq!(net.n_linear(), 2);
    }

    #[test]
    fn zero_epochs_is_a_no_op() {
        let data = gen_blobs(10, 2, 2, 5.0, 1).unwrap();
        let mut net = Network::mlp(&[2, 4, 2], &mut Rng::new(2)).unwrap();
        let before = net.clone();
        let cfg = TrainConfig {
            learning_rate: 0.1,
            batch_size: 4,
            epochs: 0,
            seed: 3,
        };
        train(&mut net, &data, &cfg, &mut LocalExecutor::new()).unwrap();
        assert_eq!(net, before);
    }

    #[test]
    fn trains_separable_blobs() {
        let data = gen_blobs(100, 2, 2, 10.0, 11).unwrap();
        let mut net = Network::mlp(&[2, 8, 8, 2], &mut Rng::new(12)).unwrap();
        let cfg = TrainConfig {
            learning_rate: 0.1,
            batch_size: 20,
            epochs: 30,
            seed: 13,
        };
        let mut exec = LocalExecutor::new();
        let summaries = train(&mut net, &data, &cfg, &mut exec).unwrap();
        let acc = accuracy(&net, &data, &mut exec).unwrap();
        assert!(acc >= 0.95, "accuracy {acc}");
        let first: f64 = summaries[..5].iter().map(|s| s.mean_loss).sum();
        let last: f64 = summaries[25..].iter().map(|s| s.mean_loss).sum();
        assert!(last < first);
        for p in net.params() {
            assert!(p.weight.is_finite());
        }
    }
}
