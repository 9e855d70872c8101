//! Layer kinds understood by [`ComputeGraph`](super::ComputeGraph).
//!
//! Activations flow as batched tensors: `[batch, time, channels]` for
//! temporal layers and `[batch, features]` after pooling. Per-sample shapes
//! (used for validation and shape inference) drop the leading batch axis.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::tensor::{Param, Tensor};
use super::NnError;

const BN_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.1;
const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

/// Row-major GEMM: `c[m x n] = a · b + beta * c`. `a_t`/`b_t` mark operands
/// stored transposed (`a` as `[k x m]`, `b` as `[n x k]`).
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(m: usize, k: usize, n: usize, a: &[f64], a_t: bool, b: &[f64], b_t: bool, beta: f64, c: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|v| *v *= beta);
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: slice lengths are checked above and strides stay in bounds.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn mismatch(layer: &str, expected: impl Into<String>, got: &[usize]) -> NnError {
    NnError::ShapeMismatch {
        layer: layer.to_string(),
        expected: expected.into(),
        got: format!("{:?}", got),
    }
}

fn no_cache(layer: &str) -> NnError {
    NnError::BackwardBeforeForward {
        layer: layer.to_string(),
    }
}

/// He-uniform initialisation with the given fan-in.
fn init_uniform(rng: &mut ChaCha8Rng, n: usize, fan_in: usize) -> Vec<f64> {
    let bound = (6.0 / fan_in.max(1) as f64).sqrt();
    (0..n).map(|_| rng.random_range(-bound..bound)).collect()
}

// ---------------------------------------------------------------------------

/// One-dimensional convolution over the time axis with "same" padding.
#[derive(Clone, Debug)]
pub struct Conv1d {
    pub name: String,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub dilation: usize,
    /// `[kernel * in_channels, out_channels]`, row index `k * in + c`.
    pub weight: Param,
    pub bias: Param,
    cache: Option<ConvCache>,
}

#[derive(Clone, Debug)]
struct ConvCache {
    col: Vec<f64>,
    batch: usize,
    t_in: usize,
    t_out: usize,
}

impl Conv1d {
    pub fn new(
        name: impl Into<String>,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        dilation: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let fan_in = kernel * in_channels;
        let weight = Tensor::new(
            vec![fan_in, out_channels],
            init_uniform(rng, fan_in * out_channels, fan_in),
        )
        .expect("shape");
        Self {
            name: name.into(),
            in_channels,
            out_channels,
            kernel,
            stride: stride.max(1),
            dilation: dilation.max(1),
            weight: Param::new(weight),
            bias: Param::new(Tensor::zeros(vec![out_channels])),
            cache: None,
        }
    }

    pub fn out_len(&self, t: usize) -> usize {
        t.div_ceil(self.stride)
    }

    fn pad_left(&self, t: usize) -> usize {
        let t_out = self.out_len(t);
        let span = (t_out.saturating_sub(1)) * self.stride + self.dilation * (self.kernel - 1) + 1;
        span.saturating_sub(t) / 2
    }

    fn pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>, NnError> {
        match input {
            [t, c] if *c == self.in_channels => Ok(vec![self.out_len(*t), self.out_channels]),
            _ => Err(mismatch(&self.name, format!("[T, {}]", self.in_channels), input)),
        }
    }

    fn forward(&mut self, x: &Tensor, cache: bool) -> Result<Tensor, NnError> {
        let (b, t_in) = match x.shape() {
            [b, t, c] if *c == self.in_channels => (*b, *t),
            s => return Err(mismatch(&self.name, format!("[B, T, {}]", self.in_channels), s)),
        };
        let t_out = self.out_len(t_in);
        let cin = self.in_channels;
        let width = self.kernel * cin;
        let col = if self.pointwise() {
            x.data().to_vec()
        } else {
            let pad = self.pad_left(t_in) as isize;
            let mut col = vec![0.0; b * t_out * width];
            let xd = x.data();
            for bi in 0..b {
                for to in 0..t_out {
                    let row = &mut col[(bi * t_out + to) * width..(bi * t_out + to + 1) * width];
                    let base = (to * self.stride) as isize - pad;
                    for k in 0..self.kernel {
                        let ti = base + (k * self.dilation) as isize;
                        if ti < 0 || ti >= t_in as isize {
                            continue;
                        }
                        let src = (bi * t_in + ti as usize) * cin;
                        row[k * cin..(k + 1) * cin].copy_from_slice(&xd[src..src + cin]);
                    }
                }
            }
            col
        };
        let rows = b * t_out;
        let cout = self.out_channels;
        let mut out = vec![0.0; rows * cout];
        let bias = self.bias.value.data();
        for r in 0..rows {
            out[r * cout..(r + 1) * cout].copy_from_slice(bias);
        }
        gemm(
            rows,
            width,
            cout,
            &col,
            false,
            self.weight.value.data(),
            false,
            1.0,
            &mut out,
        );
        self.cache = cache.then_some(ConvCache {
            col,
            batch: b,
            t_in,
            t_out,
        });
        Tensor::new(vec![b, t_out, cout], out)
    }

    fn backward(&mut self, dy: &Tensor) -> Result<Tensor, NnError> {
        let cache = self.cache.take().ok_or_else(|| no_cache(&self.name))?;
        let ConvCache {
            col,
            batch,
            t_in,
            t_out,
        } = cache;
        let rows = batch * t_out;
        let cout = self.out_channels;
        let cin = self.in_channels;
        let width = self.kernel * cin;
        if dy.shape() != [batch, t_out, cout] {
            return Err(mismatch(&self.name, format!("[{batch}, {t_out}, {cout}]"), dy.shape()));
        }
        let dyd = dy.data();
        {
            let db = self.bias.grad.data_mut();
            for r in 0..rows {
                for (o, g) in db.iter_mut().enumerate() {
                    *g += dyd[r * cout + o];
                }
            }
        }
        gemm(
            width,
            rows,
            cout,
            &col,
            true,
            dyd,
            false,
            1.0,
            self.weight.grad.data_mut(),
        );
        let mut dcol = vec![0.0; rows * width];
        gemm(
            rows,
            cout,
            width,
            dyd,
            false,
            self.weight.value.data(),
            true,
            0.0,
            &mut dcol,
        );
        if self.pointwise() {
            return Tensor::new(vec![batch, t_in, cin], dcol);
        }
        let pad = self.pad_left(t_in) as isize;
        let mut dx = vec![0.0; batch * t_in * cin];
        for bi in 0..batch {
            for to in 0..t_out {
                let row = &dcol[(bi * t_out + to) * width..(bi * t_out + to + 1) * width];
                let base = (to * self.stride) as isize - pad;
                for k in 0..self.kernel {
                    let ti = base + (k * self.dilation) as isize;
                    if ti < 0 || ti >= t_in as isize {
                        continue;
                    }
                    let dst = (bi * t_in + ti as usize) * cin;
                    for c in 0..cin {
                        dx[dst + c] += row[k * cin + c];
                    }
                }
            }
        }
        Tensor::new(vec![batch, t_in, cin], dx)
    }
}

// ---------------------------------------------------------------------------

/// Fully connected layer over the trailing axis.
#[derive(Clone, Debug)]
pub struct Dense {
    pub name: String,
    pub in_features: usize,
    pub out_features: usize,
    /// `[in_features, out_features]`
    pub weight: Param,
    pub bias: Param,
    cache: Option<Tensor>,
}

impl Dense {
    pub fn new(name: impl Into<String>, in_features: usize, out_features: usize, rng: &mut ChaCha8Rng) -> Self {
        let weight = Tensor::new(
            vec![in_features, out_features],
            init_uniform(rng, in_features * out_features, in_features),
        )
        .expect("shape");
        Self {
            name: name.into(),
            in_features,
            out_features,
            weight: Param::new(weight),
            bias: Param::new(Tensor::zeros(vec![out_features])),
            cache: None,
        }
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>, NnError> {
        match input.last() {
            Some(&f) if f == self.in_features => {
                let mut s = input.to_vec();
                *s.last_mut().unwrap() = self.out_features;
                Ok(s)
            }
            _ => Err(mismatch(&self.name, format!("[.., {}]", self.in_features), input)),
        }
    }

    fn forward(&mut self, x: &Tensor, cache: bool) -> Result<Tensor, NnError> {
        if x.rank() < 2 || x.last_dim() != self.in_features {
            return Err(mismatch(
                &self.name,
                format!("[B, .., {}]", self.in_features),
                x.shape(),
            ));
        }
        let rows = x.len() / self.in_features;
        let fout = self.out_features;
        let mut out = vec![0.0; rows * fout];
        let bias = self.bias.value.data();
        for r in 0..rows {
            out[r * fout..(r + 1) * fout].copy_from_slice(bias);
        }
        gemm(
            rows,
            self.in_features,
            fout,
            x.data(),
            false,
            self.weight.value.data(),
            false,
            1.0,
            &mut out,
        );
        let mut shape = x.shape().to_vec();
        *shape.last_mut().unwrap() = fout;
        self.cache = cache.then(|| x.clone());
        Tensor::new(shape, out)
    }

    fn backward(&mut self, dy: &Tensor) -> Result<Tensor, NnError> {
        let x = self.cache.take().ok_or_else(|| no_cache(&self.name))?;
        let rows = x.len() / self.in_features;
        let fout = self.out_features;
        if dy.len() != rows * fout {
            return Err(mismatch(&self.name, format!("{} rows x {}", rows, fout), dy.shape()));
        }
        let dyd = dy.data();
        {
            let db = self.bias.grad.data_mut();
            for r in 0..rows {
                for (o, g) in db.iter_mut().enumerate() {
                    *g += dyd[r * fout + o];
                }
            }
        }
        gemm(
            self.in_features,
            rows,
            fout,
            x.data(),
            true,
            dyd,
            false,
            1.0,
            self.weight.grad.data_mut(),
        );
        let mut dx = vec![0.0; rows * self.in_features];
        gemm(
            rows,
            fout,
            self.in_features,
            dyd,
            false,
            self.weight.value.data(),
            true,
            0.0,
            &mut dx,
        );
        Tensor::new(x.shape().to_vec(), dx)
    }
}

// ---------------------------------------------------------------------------

/// Batch normalisation over every axis except the trailing channel axis.
#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub name: String,
    pub channels: usize,
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    cache: Option<NormCache>,
}

#[derive(Clone, Debug)]
struct NormCache {
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    shape: Vec<usize>,
    /// Statistics came from the batch itself (train mode) rather than buffers.
    batch_stats: bool,
}

impl BatchNorm {
    pub fn new(name: impl Into<String>, channels: usize) -> Self {
        Self {
            name: name.into(),
            channels,
            gamma: Param::new(Tensor::new(vec![channels], vec![1.0; channels]).unwrap()),
            beta: Param::new(Tensor::zeros(vec![channels])),
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            cache: None,
        }
    }

    fn forward(&mut self, x: &Tensor, training: bool, cache: bool) -> Result<Tensor, NnError> {
        let c = self.channels;
        if x.rank() < 2 || x.last_dim() != c {
            return Err(mismatch(&self.name, format!("[B, .., {}]", c), x.shape()));
        }
        let rows = x.len() / c;
        let xd = x.data();
        let (mean, var) = if training {
            let mut mean = vec![0.0; c];
            for r in 0..rows {
                for j in 0..c {
                    mean[j] += xd[r * c + j];
                }
            }
            mean.iter_mut().for_each(|m| *m /= rows as f64);
            let mut var = vec![0.0; c];
            for r in 0..rows {
                for j in 0..c {
                    let d = xd[r * c + j] - mean[j];
                    var[j] += d * d;
                }
            }
            var.iter_mut().for_each(|v| *v /= rows as f64);
            let unbias = if rows > 1 { rows as f64 / (rows - 1) as f64 } else { 1.0 };
            for j in 0..c {
                self.running_mean[j] = (1.0 - BN_MOMENTUM) * self.running_mean[j] + BN_MOMENTUM * mean[j];
                self.running_var[j] = (1.0 - BN_MOMENTUM) * self.running_var[j] + BN_MOMENTUM * var[j] * unbias;
            }
            (mean, var)
        } else {
            (self.running_mean.clone(), self.running_var.clone())
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let g = self.gamma.value.data();
        let bt = self.beta.value.data();
        let mut xhat = vec![0.0; x.len()];
        let mut out = vec![0.0; x.len()];
        for r in 0..rows {
            for j in 0..c {
                let h = (xd[r * c + j] - mean[j]) * inv_std[j];
                xhat[r * c + j] = h;
                out[r * c + j] = g[j] * h + bt[j];
            }
        }
        self.cache = cache.then(|| NormCache {
            xhat,
            inv_std,
            shape: x.shape().to_vec(),
            batch_stats: training,
        });
        Tensor::new(x.shape().to_vec(), out)
    }

    fn backward(&mut self, dy: &Tensor) -> Result<Tensor, NnError> {
        let cache = self.cache.take().ok_or_else(|| no_cache(&self.name))?;
        let c = self.channels;
        let rows = dy.len() / c;
        let dyd = dy.data();
        let g = self.gamma.value.data().to_vec();
        let mut sum_d = vec![0.0; c];
        let mut sum_dx = vec![0.0; c];
        {
            let dg = self.gamma.grad.data_mut();
            for r in 0..rows {
                for j in 0..c {
                    dg[j] += dyd[r * c + j] * cache.xhat[r * c + j];
                }
            }
        }
        {
            let db = self.beta.grad.data_mut();
            for r in 0..rows {
                for j in 0..c {
                    db[j] += dyd[r * c + j];
                }
            }
        }
        let mut dx = vec![0.0; dy.len()];
        if !cache.batch_stats {
            for r in 0..rows {
                for j in 0..c {
                    dx[r * c + j] = dyd[r * c + j] * g[j] * cache.inv_std[j];
                }
            }
            return Tensor::new(cache.shape, dx);
        }
        for r in 0..rows {
            for j in 0..c {
                let dh = dyd[r * c + j] * g[j];
                sum_d[j] += dh;
                sum_dx[j] += dh * cache.xhat[r * c + j];
            }
        }
        let n = rows as f64;
        for r in 0..rows {
            for j in 0..c {
                let dh = dyd[r * c + j] * g[j];
                dx[r * c + j] = cache.inv_std[j] / n * (n * dh - sum_d[j] - cache.xhat[r * c + j] * sum_dx[j]);
            }
        }
        Tensor::new(cache.shape, dx)
    }
}

// ---------------------------------------------------------------------------

/// Layer normalisation over the trailing channel axis of each row.
#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub name: String,
    pub channels: usize,
    pub gamma: Param,
    pub beta: Param,
    cache: Option<NormCache>,
}

impl LayerNorm {
    pub fn new(name: impl Into<String>, channels: usize) -> Self {
        Self {
            name: name.into(),
            channels,
            gamma: Param::new(Tensor::new(vec![channels], vec![1.0; channels]).unwrap()),
            beta: Param::new(Tensor::zeros(vec![channels])),
            cache: None,
        }
    }

    fn forward(&mut self, x: &Tensor, cache: bool) -> Result<Tensor, NnError> {
        let c = self.channels;
        if x.rank() < 2 || x.last_dim() != c {
            return Err(mismatch(&self.name, format!("[B, .., {}]", c), x.shape()));
        }
        let rows = x.len() / c;
        let xd = x.data();
        let g = self.gamma.value.data();
        let bt = self.beta.value.data();
        let mut xhat = vec![0.0; x.len()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; x.len()];
        for r in 0..rows {
            let row = &xd[r * c..(r + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let is = 1.0 / (var + LN_EPS).sqrt();
            inv_std[r] = is;
            for j in 0..c {
                let h = (row[j] - mean) * is;
                xhat[r * c + j] = h;
                out[r * c + j] = g[j] * h + bt[j];
            }
        }
        self.cache = cache.then(|| NormCache {
            xhat,
            inv_std,
            shape: x.shape().to_vec(),
            batch_stats: true,
        });
        Tensor::new(x.shape().to_vec(), out)
    }

    fn backward(&mut self, dy: &Tensor) -> Result<Tensor, NnError> {
        let cache = self.cache.take().ok_or_else(|| no_cache(&self.name))?;
        let c = self.channels;
        let rows = dy.len() / c;
        let dyd = dy.data();
        let g = self.gamma.value.data().to_vec();
        {
            let dg = self.gamma.grad.data_mut();
            for r in 0..rows {
                for j in 0..c {
                    dg[j] += dyd[r * c + j] * cache.xhat[r * c + j];
                }
            }
        }
        {
            let db = self.beta.grad.data_mut();
            for r in 0..rows {
                for j in 0..c {
                    db[j] += dyd[r * c + j];
                }
            }
        }
        let n = c as f64;
        let mut dx = vec![0.0; dy.len()];
        for r in 0..rows {
            let mut sum_d = 0.0;
            let mut sum_dx = 0.0;
            for j in 0..c {
                let dh = dyd[r * c + j] * g[j];
                sum_d += dh;
                sum_dx += dh * cache.xhat[r * c + j];
            }
            for j in 0..c {
                let dh = dyd[r * c + j] * g[j];
                dx[r * c + j] = cache.inv_std[r] / n * (n * dh - sum_d - cache.xhat[r * c + j] * sum_dx);
            }
        }
        Tensor::new(cache.shape, dx)
    }
}

// ---------------------------------------------------------------------------

/// Elementwise nonlinearities.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    /// tanh approximation of GELU.
    Gelu,
    Sigmoid,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Gelu => 0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh()),
            Activation::Sigmoid => sigmoid(x),
        }
    }

    fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Gelu => {
                let inner = GELU_C * (x + 0.044715 * x * x * x);
                let th = inner.tanh();
                0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
            }
            Activation::Sigmoid => {
                let s = sigmoid(x);
                s * (1.0 - s)
            }
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

#[derive(Clone, Debug)]
pub struct Elementwise {
    pub name: String,
    pub kind: Activation,
    cache: Option<Tensor>,
}

impl Elementwise {
    pub fn new(name: impl Into<String>, kind: Activation) -> Self {
        Self {
            name: name.into(),
            kind,
            cache: None,
        }
    }

    fn forward(&mut self, x: &Tensor, cache: bool) -> Result<Tensor, NnError> {
        let out: Vec<f64> = x.data().iter().map(|&v| self.kind.apply(v)).collect();
        self.cache = cache.then(|| x.clone());
        Tensor::new(x.shape().to_vec(), out)
    }

    fn backward(&mut self, dy: &Tensor) -> Result<Tensor, NnError> {
        let x = self.cache.take().ok_or_else(|| no_cache(&self.name))?;
        let dx = x
            .data()
            .iter()
            .zip(dy.data())
            .map(|(&v, &g)| g * self.kind.derivative(v))
            .collect();
        Tensor::new(x.shape().to_vec(), dx)
    }
}

// ---------------------------------------------------------------------------

/// Inverted dropout: scales kept units by `1/(1-rate)` at train time and is
/// the identity at evaluation.
#[derive(Clone, Debug)]
pub struct Dropout {
    pub name: String,
    pub rate: f64,
    mask: Option<Option<Vec<f64>>>,
}

impl Dropout {
    pub fn new(name: impl Into<String>, rate: f64) -> Self {
        Self {
            name: name.into(),
            rate,
            mask: None,
        }
    }

    fn forward(&mut self, x: &Tensor, training: bool, cache: bool, rng: &mut ChaCha8Rng) -> Result<Tensor, NnError> {
        if !training || self.rate <= 0.0 {
            self.mask = cache.then_some(None);
            return Ok(x.clone());
        }
        let keep = 1.0 - self.rate;
        let mask: Vec<f64> = (0..x.len())
            .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let out = x.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        self.mask = cache.then_some(Some(mask));
        Tensor::new(x.shape().to_vec(), out)
    }

    fn backward(&mut self, dy: &Tensor) -> Result<Tensor, NnError> {
        match self.mask.take().ok_or_else(|| no_cache(&self.name))? {
            None => Ok(dy.clone()),
            Some(mask) => {
                let dx = dy.data().iter().zip(&mask).map(|(g, m)| g * m).collect();
                Tensor::new(dy.shape().to_vec(), dx)
            }
        }
    }
}

// ---------------------------------------------------------------------------

/// Softmax over the trailing axis.
#[derive(Clone, Debug)]
pub struct Softmax {
    pub name: String,
    cache: Option<Tensor>,
}

pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

impl Softmax {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            cache: None,
        }
    }

    fn forward(&mut self, x: &Tensor, cache: bool) -> Result<Tensor, NnError> {
        let c = x.last_dim();
        let mut out = x.data().to_vec();
        if c > 0 {
            for row in out.chunks_mut(c) {
                softmax_in_place(row);
            }
        }
        let out = Tensor::new(x.shape().to_vec(), out)?;
        self.cache = cache.then(|| out.clone());
        Ok(out)
    }

    fn backward(&mut self, dy: &Tensor) -> Result<Tensor, NnError> {
        let y = self.cache.take().ok_or_else(|| no_cache(&self.name))?;
        let c = y.last_dim();
        let mut dx = vec![0.0; y.len()];
        for ((yr, gr), dr) in y.data().chunks(c).zip(dy.data().chunks(c)).zip(dx.chunks_mut(c)) {
            let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
            for j in 0..c {
                dr[j] = yr[j] * (gr[j] - dot);
            }
        }
        Tensor::new(y.shape().to_vec(), dx)
    }
}

// ---------------------------------------------------------------------------

/// Mean over the time axis: `[B, T, C] -> [B, C]`.
#[derive(Clone, Debug)]
pub struct GlobalAvgPool {
    pub name: String,
    cache: Option<Vec<usize>>,
}

impl GlobalAvgPool {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            cache: None,
        }
    }

    fn forward(&mut self, x: &Tensor, cache: bool) -> Result<Tensor, NnError> {
        let (b, t, c) = match x.shape() {
            [b, t, c] if *t > 0 => (*b, *t, *c),
            s => return Err(mismatch(&self.name, "[B, T>0, C]", s)),
        };
        let mut out = vec![0.0; b * c];
        let xd = x.data();
        for bi in 0..b {
            let o = &mut out[bi * c..(bi + 1) * c];
            for ti in 0..t {
                let row = &xd[(bi * t + ti) * c..(bi * t + ti + 1) * c];
                for j in 0..c {
                    o[j] += row[j];
                }
            }
            o.iter_mut().for_each(|v| *v /= t as f64);
        }
        self.cache = cache.then(|| x.shape().to_vec());
        Tensor::new(vec![b, c], out)
    }

    fn backward(&mut self, dy: &Tensor) -> Result<Tensor, NnError> {
        let shape = self.cache.take().ok_or_else(|| no_cache(&self.name))?;
        let (b, t, c) = (shape[0], shape[1], shape[2]);
        let mut dx = vec![0.0; b * t * c];
        let dyd = dy.data();
        for bi in 0..b {
            for ti in 0..t {
                for j in 0..c {
                    dx[(bi * t + ti) * c + j] = dyd[bi * c + j] / t as f64;
                }
            }
        }
        Tensor::new(shape, dx)
    }
}

/// `[B, T, C] -> [B, 1, T*C]`; keeps a (unit) time axis so pooling stays valid.
#[derive(Clone, Debug)]
pub struct Flatten {
    pub name: String,
    cache: Option<Vec<usize>>,
}

impl Flatten {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            cache: None,
        }
    }
}

// ---------------------------------------------------------------------------

/// `y = body(x) + shortcut(x)`; the shortcut is the identity unless a 1x1
/// projection is present.
#[derive(Clone, Debug)]
pub struct Residual {
    pub name: String,
    pub body: Vec<Layer>,
    pub shortcut: Option<Conv1d>,
}

/// Parallel convolution branches over a shared (optionally bottlenecked)
/// input, concatenated along channels.
#[derive(Clone, Debug)]
pub struct Inception {
    pub name: String,
    pub bottleneck: Option<Conv1d>,
    pub branches: Vec<Conv1d>,
    cache_widths: Option<Vec<usize>>,
}

impl Inception {
    pub fn new(name: impl Into<String>, bottleneck: Option<Conv1d>, branches: Vec<Conv1d>) -> Self {
        Self {
            name: name.into(),
            bottleneck,
            branches,
            cache_widths: None,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.branches.iter().map(|b| b.out_channels).sum()
    }
}

// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub enum Layer {
    Conv1d(Conv1d),
    Dense(Dense),
    BatchNorm(BatchNorm),
    LayerNorm(LayerNorm),
    Activation(Elementwise),
    Dropout(Dropout),
    Softmax(Softmax),
    GlobalAvgPool(GlobalAvgPool),
    Flatten(Flatten),
    Residual(Residual),
    Inception(Inception),
    Sequential(String, Vec<Layer>),
}

/// Per-call forward context.
pub(crate) struct Pass<'a> {
    pub training: bool,
    pub cache: bool,
    pub rng: &'a mut ChaCha8Rng,
}

impl Layer {
    pub fn name(&self) -> &str {
        match self {
            Layer::Conv1d(l) => &l.name,
            Layer::Dense(l) => &l.name,
            Layer::BatchNorm(l) => &l.name,
            Layer::LayerNorm(l) => &l.name,
            Layer::Activation(l) => &l.name,
            Layer::Dropout(l) => &l.name,
            Layer::Softmax(l) => &l.name,
            Layer::GlobalAvgPool(l) => &l.name,
            Layer::Flatten(l) => &l.name,
            Layer::Residual(l) => &l.name,
            Layer::Inception(l) => &l.name,
            Layer::Sequential(n, _) => n,
        }
    }

    /// Per-sample output shape for a per-sample input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>, NnError> {
        match self {
            Layer::Conv1d(l) => l.output_shape(input),
            Layer::Dense(l) => l.output_shape(input),
            Layer::BatchNorm(l) => channel_check(&l.name, l.channels, input),
            Layer::LayerNorm(l) => channel_check(&l.name, l.channels, input),
            Layer::Activation(_) | Layer::Dropout(_) | Layer::Softmax(_) => Ok(input.to_vec()),
            Layer::GlobalAvgPool(l) => match input {
                [t, c] if *t > 0 => Ok(vec![*c]),
                _ => Err(mismatch(&l.name, "[T>0, C]", input)),
            },
            Layer::Flatten(l) => match input {
                [t, c] => Ok(vec![1, t * c]),
                _ => Err(mismatch(&l.name, "[T, C]", input)),
            },
            Layer::Residual(r) => {
                let mut s = input.to_vec();
                for l in &r.body {
                    s = l.output_shape(&s)?;
                }
                let short = match &r.shortcut {
                    Some(p) => p.output_shape(input)?,
                    None => input.to_vec(),
                };
                if s != short {
                    return Err(mismatch(&r.name, format!("shortcut {:?}", short), &s));
                }
                Ok(s)
            }
            Layer::Inception(inc) => {
                let mut s = input.to_vec();
                if let Some(b) = &inc.bottleneck {
                    s = b.output_shape(&s)?;
                }
                let mut t_out = None;
                let mut channels = 0;
                for br in &inc.branches {
                    let o = br.output_shape(&s)?;
                    if t_out.is_some_and(|t| t != o[0]) {
                        return Err(mismatch(&inc.name, "equal branch lengths", &o));
                    }
                    t_out = Some(o[0]);
                    channels += o[1];
                }
                Ok(vec![t_out.unwrap_or(s[0]), channels])
            }
            Layer::Sequential(_, layers) => {
                let mut s = input.to_vec();
                for l in layers {
                    s = l.output_shape(&s)?;
                }
                Ok(s)
            }
        }
    }

    pub(crate) fn forward(&mut self, x: &Tensor, pass: &mut Pass<'_>) -> Result<Tensor, NnError> {
        let out = match self {
            Layer::Conv1d(l) => l.forward(x, pass.cache),
            Layer::Dense(l) => l.forward(x, pass.cache),
            Layer::BatchNorm(l) => l.forward(x, pass.training, pass.cache),
            Layer::LayerNorm(l) => l.forward(x, pass.cache),
            Layer::Activation(l) => l.forward(x, pass.cache),
            Layer::Dropout(l) => l.forward(x, pass.training, pass.cache, pass.rng),
            Layer::Softmax(l) => l.forward(x, pass.cache),
            Layer::GlobalAvgPool(l) => l.forward(x, pass.cache),
            Layer::Flatten(l) => match x.shape() {
                [b, t, c] => {
                    let (b, t, c) = (*b, *t, *c);
                    l.cache = pass.cache.then(|| x.shape().to_vec());
                    x.clone().reshape(vec![b, 1, t * c])
                }
                s => Err(mismatch(&l.name, "[B, T, C]", s)),
            },
            Layer::Residual(r) => {
                let mut h = x.clone();
                for l in r.body.iter_mut() {
                    h = l.forward(&h, pass)?;
                }
                let short = match r.shortcut.as_mut() {
                    Some(p) => p.forward(x, pass.cache)?,
                    None => x.clone(),
                };
                if h.shape() != short.shape() {
                    return Err(mismatch(&r.name, format!("{:?}", short.shape()), h.shape()));
                }
                h.data_mut().iter_mut().zip(short.data()).for_each(|(a, b)| *a += b);
                Ok(h)
            }
            Layer::Inception(inc) => {
                let base = match inc.bottleneck.as_mut() {
                    Some(b) => b.forward(x, pass.cache)?,
                    None => x.clone(),
                };
                let outs = inc
                    .branches
                    .iter_mut()
                    .map(|br| br.forward(&base, pass.cache))
                    .collect::<Result<Vec<_>, _>>()?;
                let widths: Vec<usize> = outs.iter().map(|o| o.last_dim()).collect();
                inc.cache_widths = pass.cache.then(|| widths.clone());
                concat_channels(&outs, &inc.name)
            }
            Layer::Sequential(_, layers) => {
                let mut h = x.clone();
                for l in layers.iter_mut() {
                    h = l.forward(&h, pass)?;
                }
                Ok(h)
            }
        }?;
        Ok(out)
    }

    pub(crate) fn backward(&mut self, dy: &Tensor) -> Result<Tensor, NnError> {
        match self {
            Layer::Conv1d(l) => l.backward(dy),
            Layer::Dense(l) => l.backward(dy),
            Layer::BatchNorm(l) => l.backward(dy),
            Layer::LayerNorm(l) => l.backward(dy),
            Layer::Activation(l) => l.backward(dy),
            Layer::Dropout(l) => l.backward(dy),
            Layer::Softmax(l) => l.backward(dy),
            Layer::GlobalAvgPool(l) => l.backward(dy),
            Layer::Flatten(l) => {
                let shape = l.cache.take().ok_or_else(|| no_cache(&l.name))?;
                dy.clone().reshape(shape)
            }
            Layer::Residual(r) => {
                let mut g = dy.clone();
                for l in r.body.iter_mut().rev() {
                    g = l.backward(&g)?;
                }
                let gs = match r.shortcut.as_mut() {
                    Some(p) => p.backward(dy)?,
                    None => dy.clone(),
                };
                g.data_mut().iter_mut().zip(gs.data()).for_each(|(a, b)| *a += b);
                Ok(g)
            }
            Layer::Inception(inc) => {
                let widths = inc.cache_widths.take().ok_or_else(|| no_cache(&inc.name))?;
                let parts = split_channels(dy, &widths);
                let mut acc: Option<Tensor> = None;
                for (br, part) in inc.branches.iter_mut().zip(parts) {
                    let g = br.backward(&part)?;
                    match acc.as_mut() {
                        None => acc = Some(g),
                        Some(a) => a.data_mut().iter_mut().zip(g.data()).for_each(|(x, y)| *x += y),
                    }
                }
                let acc = acc.ok_or_else(|| no_cache(&inc.name))?;
                match inc.bottleneck.as_mut() {
                    Some(b) => b.backward(&acc),
                    None => Ok(acc),
                }
            }
            Layer::Sequential(_, layers) => {
                let mut g = dy.clone();
                for l in layers.iter_mut().rev() {
                    g = l.backward(&g)?;
                }
                Ok(g)
            }
        }
    }

    /// Visits trainable parameters in a fixed depth-first order.
    pub fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        match self {
            Layer::Conv1d(l) => {
                f(&mut l.weight);
                f(&mut l.bias);
            }
            Layer::Dense(l) => {
                f(&mut l.weight);
                f(&mut l.bias);
            }
            Layer::BatchNorm(l) => {
                f(&mut l.gamma);
                f(&mut l.beta);
            }
            Layer::LayerNorm(l) => {
                f(&mut l.gamma);
                f(&mut l.beta);
            }
            Layer::Residual(r) => {
                for l in r.body.iter_mut() {
                    l.visit_params(f);
                }
                if let Some(p) = r.shortcut.as_mut() {
                    f(&mut p.weight);
                    f(&mut p.bias);
                }
            }
            Layer::Inception(inc) => {
                if let Some(b) = inc.bottleneck.as_mut() {
                    f(&mut b.weight);
                    f(&mut b.bias);
                }
                for br in inc.branches.iter_mut() {
                    f(&mut br.weight);
                    f(&mut br.bias);
                }
            }
            Layer::Sequential(_, layers) => {
                for l in layers.iter_mut() {
                    l.visit_params(f);
                }
            }
            _ => {}
        }
    }

    /// Visits non-trainable state (batch-norm running statistics).
    pub fn visit_buffers(&mut self, f: &mut dyn FnMut(&mut Vec<f64>)) {
        match self {
            Layer::BatchNorm(l) => {
                f(&mut l.running_mean);
                f(&mut l.running_var);
            }
            Layer::Residual(r) => r.body.iter_mut().for_each(|l| l.visit_buffers(f)),
            Layer::Sequential(_, layers) => layers.iter_mut().for_each(|l| l.visit_buffers(f)),
            _ => {}
        }
    }

    /// Drops any cached activations.
    pub fn clear_cache(&mut self) {
        match self {
            Layer::Conv1d(l) => l.cache = None,
            Layer::Dense(l) => l.cache = None,
            Layer::BatchNorm(l) => l.cache = None,
            Layer::LayerNorm(l) => l.cache = None,
            Layer::Activation(l) => l.cache = None,
            Layer::Dropout(l) => l.mask = None,
            Layer::Softmax(l) => l.cache = None,
            Layer::GlobalAvgPool(l) => l.cache = None,
            Layer::Flatten(l) => l.cache = None,
            Layer::Residual(r) => {
                r.body.iter_mut().for_each(Layer::clear_cache);
                if let Some(p) = r.shortcut.as_mut() {
                    p.cache = None;
                }
            }
            Layer::Inception(inc) => {
                inc.cache_widths = None;
                if let Some(b) = inc.bottleneck.as_mut() {
                    b.cache = None;
                }
                inc.branches.iter_mut().for_each(|b| b.cache = None);
            }
            Layer::Sequential(_, layers) => layers.iter_mut().for_each(Layer::clear_cache),
        }
    }
}

fn channel_check(name: &str, channels: usize, input: &[usize]) -> Result<Vec<usize>, NnError> {
    if input.last() == Some(&channels) {
        Ok(input.to_vec())
    } else {
        Err(mismatch(name, format!("[.., {}]", channels), input))
    }
}

fn concat_channels(parts: &[Tensor], name: &str) -> Result<Tensor, NnError> {
    let first = parts
        .first()
        .ok_or_else(|| mismatch(name, "at least one branch", &[]))?;
    let rows = first.len() / first.last_dim().max(1);
    let total: usize = parts.iter().map(|p| p.last_dim()).sum();
    let mut out = vec![0.0; rows * total];
    let mut offset = 0;
    for p in parts {
        let w = p.last_dim();
        if p.len() / w.max(1) != rows {
            return Err(mismatch(name, format!("{rows} rows"), p.shape()));
        }
        for r in 0..rows {
            out[r * total + offset..r * total + offset + w].copy_from_slice(&p.data()[r * w..(r + 1) * w]);
        }
        offset += w;
    }
    let mut shape = first.shape().to_vec();
    *shape.last_mut().unwrap() = total;
    Tensor::new(shape, out)
}

fn split_channels(t: &Tensor, widths: &[usize]) -> Vec<Tensor> {
    let total = t.last_dim();
    let rows = t.len() / total.max(1);
    let mut offset = 0;
    widths
        .iter()
        .map(|&w| {
            let mut data = Vec::with_capacity(rows * w);
            for r in 0..rows {
                data.extend_from_slice(&t.data()[r * total + offset..r * total + offset + w]);
            }
            offset += w;
            let mut shape = t.shape().to_vec();
            *shape.last_mut().unwrap() = w;
            Tensor::new(shape, data).expect("split shape")
        })
        .collect()
}
