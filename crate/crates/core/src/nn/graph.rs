use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::layers::{Layer, Pass};
use super::tensor::{Param, Tensor};
use super::NnError;

/// A chain of layers with a declared per-sample input shape.
///
/// Residual skips and inception branches live inside composite layers, so
/// the outer chain order is always a valid topological order. One graph is
/// single-writer: forward/backward mutate cached activations.
#[derive(Clone, Debug)]
pub struct ComputeGraph {
    input_shape: Vec<usize>,
    output_shape: Vec<usize>,
    layers: Vec<Layer>,
    rng: ChaCha8Rng,
    training: bool,
    cached: bool,
}

impl ComputeGraph {
    /// Builds a graph and checks that every layer accepts its input shape.
    pub fn new(input_shape: Vec<usize>, layers: Vec<Layer>, dropout_seed: u64) -> Result<Self, NnError> {
        let mut shape = input_shape.clone();
        for layer in &layers {
            shape = layer.output_shape(&shape)?;
        }
        Ok(Self {
            input_shape,
            output_shape: shape,
            layers,
            rng: ChaCha8Rng::seed_from_u64(dropout_seed),
            training: false,
            cached: false,
        })
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> &[usize] {
        &self.output_shape
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Per-sample shape entering layer `n` (the shape after `layers[..n]`).
    pub fn shape_before(&self, n: usize) -> Result<Vec<usize>, NnError> {
        let mut shape = self.input_shape.clone();
        for layer in &self.layers[..n] {
            shape = layer.output_shape(&shape)?;
        }
        Ok(shape)
    }

    pub fn set_training(&mut self, training: bool) {
        self.training = training;
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    /// Resets the dropout generator.
    pub fn reseed_dropout(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
    }

    pub fn dropout_rng(&self) -> &ChaCha8Rng {
        &self.rng
    }

    pub fn set_dropout_rng(&mut self, rng: ChaCha8Rng) {
        self.rng = rng;
    }

    /// Accepts either one sample (`input_shape`) or a batch
    /// (`[B, ..input_shape]`); returns the batch flag.
    fn batched(&self, input: &Tensor) -> Result<(Tensor, bool), NnError> {
        if input.shape() == self.input_shape.as_slice() {
            let mut shape = vec![1];
            shape.extend_from_slice(&self.input_shape);
            return Ok((input.clone().reshape(shape)?, false));
        }
        if input.rank() == self.input_shape.len() + 1 && input.shape()[1..] == self.input_shape[..] {
            return Ok((input.clone(), true));
        }
        Err(NnError::ShapeMismatch {
            layer: "input".into(),
            expected: format!("{:?} or [B, ..{:?}]", self.input_shape, self.input_shape),
            got: format!("{:?}", input.shape()),
        })
    }

    fn unbatch(out: Tensor, batched: bool) -> Result<Tensor, NnError> {
        if batched {
            Ok(out)
        } else {
            let shape = out.shape()[1..].to_vec();
            out.reshape(shape)
        }
    }

    fn run(&mut self, input: &Tensor, upto: usize, cache: bool, training: bool) -> Result<Tensor, NnError> {
        let (mut h, batched) = self.batched(input)?;
        let mut pass = Pass {
            training,
            cache,
            rng: &mut self.rng,
        };
        for layer in self.layers[..upto].iter_mut() {
            h = layer.forward(&h, &mut pass)?;
            if !h.all_finite() {
                return Err(NnError::NonFinite {
                    layer: layer.name().to_string(),
                });
            }
        }
        Self::unbatch(h, batched)
    }

    /// Forward pass in the current mode, caching activations for
    /// [`backward`](Self::backward).
    pub fn forward(&mut self, input: &Tensor) -> Result<Tensor, NnError> {
        self.cached = false;
        let n = self.layers.len();
        let out = self.run(input, n, true, self.training)?;
        self.cached = true;
        Ok(out)
    }

    /// Evaluation-mode forward without caching.
    pub fn infer(&mut self, input: &Tensor) -> Result<Tensor, NnError> {
        let n = self.layers.len();
        self.run(input, n, false, false)
    }

    /// Evaluation-mode forward through `layers[..upto]` only.
    pub fn infer_until(&mut self, input: &Tensor, upto: usize) -> Result<Tensor, NnError> {
        self.run(input, upto.min(self.layers.len()), false, false)
    }

    /// Propagates `loss_grad` (shaped like the last forward output) back
    /// through the graph, accumulating parameter gradients. Returns the
    /// gradient with respect to the input.
    pub fn backward(&mut self, loss_grad: &Tensor) -> Result<Tensor, NnError> {
        if !self.cached {
            return Err(NnError::BackwardBeforeForward { layer: "graph".into() });
        }
        self.cached = false;
        let batched = loss_grad.rank() == self.output_shape.len() + 1;
        let mut g = if batched {
            loss_grad.clone()
        } else {
            let mut shape = vec![1];
            shape.extend_from_slice(loss_grad.shape());
            loss_grad.clone().reshape(shape)?
        };
        for layer in self.layers.iter_mut().rev() {
            g = layer.backward(&g)?;
        }
        Self::unbatch(g, batched)
    }

    pub fn zero_grad(&mut self) {
        self.visit_params(&mut |p| p.zero_grad());
    }

    pub fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        for layer in self.layers.iter_mut() {
            layer.visit_params(f);
        }
    }

    pub fn visit_buffers(&mut self, f: &mut dyn FnMut(&mut Vec<f64>)) {
        for layer in self.layers.iter_mut() {
            layer.visit_buffers(f);
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out: Vec<*mut Param> = Vec::new();
        self.visit_params(&mut |p| out.push(p as *mut Param));
        // SAFETY: each pointer refers to a distinct Param owned by `self`,
        // and the returned borrows are tied to `&mut self`.
        out.into_iter().map(|p| unsafe { &mut *p }).collect()
    }

    /// One gradient tensor per parameter, in parameter order.
    pub fn gradients(&mut self) -> Vec<Tensor> {
        let mut out = Vec::new();
        self.visit_params(&mut |p| out.push(p.grad.clone()));
        out
    }

    pub fn parameter_count(&mut self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |p| n += p.value.len());
        n
    }

    /// Parameters followed by buffers, as tensors (checkpoint order).
    pub fn state_tensors(&mut self) -> Vec<Tensor> {
        let mut out = Vec::new();
        self.visit_params(&mut |p| out.push(p.value.clone()));
        self.visit_buffers(&mut |b| out.push(Tensor::from_vec(b.clone())));
        out
    }

    pub fn load_state_tensors(&mut self, tensors: &[Tensor]) -> Result<(), NnError> {
        let mut it = tensors.iter();
        let mut err = None;
        self.visit_params(&mut |p| match it.next() {
            Some(t) if t.shape() == p.value.shape() => p.value = t.clone(),
            other => {
                err.get_or_insert(format!(
                    "parameter {:?} vs {:?}",
                    p.value.shape(),
                    other.map(|t| t.shape().to_vec())
                ));
            }
        });
        self.visit_buffers(&mut |b| match it.next() {
            Some(t) if t.len() == b.len() => b.copy_from_slice(t.data()),
            _ => {
                err.get_or_insert("buffer length".into());
            }
        });
        if it.next().is_some() {
            err.get_or_insert("trailing tensors".into());
        }
        match err {
            Some(e) => Err(NnError::Checkpoint(format!("state mismatch: {e}"))),
            None => Ok(()),
        }
    }

    /// Flat copy of parameters and buffers, used for best-epoch restore.
    pub fn snapshot(&mut self) -> Vec<f64> {
        let mut out = Vec::new();
        self.visit_params(&mut |p| out.extend_from_slice(p.value.data()));
        self.visit_buffers(&mut |b| out.extend_from_slice(b));
        out
    }

    pub fn restore(&mut self, snap: &[f64]) {
        let mut off = 0;
        self.visit_params(&mut |p| {
            let n = p.value.len();
            p.value.data_mut().copy_from_slice(&snap[off..off + n]);
            off += n;
        });
        self.visit_buffers(&mut |b| {
            let n = b.len();
            b.copy_from_slice(&snap[off..off + n]);
            off += n;
        });
    }

    /// SHA-256 over parameter and buffer bytes (little-endian).
    pub fn checksum(&mut self) -> String {
        let mut h = Sha256::new();
        for v in self.snapshot() {
            h.update(v.to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    pub fn clear_cache(&mut self) {
        self.cached = false;
        self.layers.iter_mut().for_each(Layer::clear_cache);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::layers::{Conv1d, Dense, Softmax};

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(1)
    }

    #[test]
    fn empty_graph_is_identity() {
        let mut g = ComputeGraph::new(vec![3, 2], vec![], 0).unwrap();
        let x = Tensor::new(vec![3, 2], vec![1., 2., 3., 4., 5., 6.]).unwrap();
        assert_eq!(g.forward(&x).unwrap(), x);
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let mut g = ComputeGraph::new(vec![3], vec![Layer::Softmax(Softmax::new("sm"))], 0).unwrap();
        let out = g.forward(&Tensor::from_vec(vec![0.0; 3])).unwrap();
        for v in out.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn same_padded_conv_keeps_length() {
        let conv = Conv1d::new("c", 2, 4, 3, 1, 1, &mut rng());
        let mut g = ComputeGraph::new(vec![16, 2], vec![Layer::Conv1d(conv)], 0).unwrap();
        assert_eq!(g.output_shape(), &[16, 4]);
        let out = g.forward(&Tensor::zeros(vec![16, 2])).unwrap();
        assert_eq!(out.shape(), &[16, 4]);
    }

    #[test]
    fn strided_conv_rounds_up() {
        let conv = Conv1d::new("c", 1, 1, 5, 3, 2, &mut rng());
        let g = ComputeGraph::new(vec![10, 1], vec![Layer::Conv1d(conv)], 0).unwrap();
        assert_eq!(g.output_shape(), &[4, 1]);
    }

    #[test]
    fn wrong_input_names_layer() {
        let dense = Dense::new("head", 4, 1, &mut rng());
        let err = ComputeGraph::new(vec![3], vec![Layer::Dense(dense)], 0).unwrap_err();
        assert!(err.to_string().contains("head"), "{err}");

        let mut g = ComputeGraph::new(vec![4], vec![Layer::Dense(Dense::new("head", 4, 1, &mut rng()))], 0).unwrap();
        assert!(g.forward(&Tensor::zeros(vec![5])).is_err());
    }

    #[test]
    fn backward_before_forward_is_state_error() {
        let dense = Dense::new("d", 2, 1, &mut rng());
        let mut g = ComputeGraph::new(vec![2], vec![Layer::Dense(dense)], 0).unwrap();
        let err = g.backward(&Tensor::from_vec(vec![1.0])).unwrap_err();
        assert!(matches!(err, NnError::BackwardBeforeForward { .. }));
    }

    #[test]
    fn dense_at_least_squares_minimum_has_zero_gradient() {
        // y = 2x + 1 fitted exactly: squared-loss gradient vanishes.
        let mut d = Dense::new("d", 1, 1, &mut rng());
        d.weight.value.data_mut()[0] = 2.0;
        d.bias.value.data_mut()[0] = 1.0;
        let mut g = ComputeGraph::new(vec![1], vec![Layer::Dense(d)], 0).unwrap();
        let x = Tensor::new(vec![3, 1], vec![-1.0, 0.0, 2.0]).unwrap();
        let target = [-1.0, 1.0, 5.0];
        let y = g.forward(&x).unwrap();
        let grad: Vec<f64> = y.data().iter().zip(target).map(|(p, t)| 2.0 * (p - t)).collect();
        g.zero_grad();
        g.backward(&Tensor::new(vec![3, 1], grad).unwrap()).unwrap();
        for t in g.gradients() {
            assert!(t.data().iter().all(|v| *v == 0.0));
        }
    }
}
