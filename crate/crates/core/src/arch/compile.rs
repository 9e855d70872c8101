//! Descriptor to [`ComputeGraph`] lowering.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::descriptor::{ActKind, ArchDescriptor, BlockSpec, ConvBlock, InceptionBlock, NormKind};
use super::preprocess;
use crate::nn::layers::{
    BatchNorm, Conv1d, Dense, Dropout, Elementwise, Flatten, GlobalAvgPool, Inception, LayerNorm, Residual,
};
use crate::nn::{Activation, ComputeGraph, Layer, NnError};
use crate::validation::Rejections;

#[derive(Debug, thiserror::Error)]
pub enum CompileError {
    #[error("invalid descriptor: {0}")]
    Invalid(#[from] Rejections),
    #[error("input shape {0:?} must be [T, d] with T >= 1 and d >= 1")]
    BadInput(Vec<usize>),
    #[error("preprocessing reduces series length {t} to 0")]
    EmptyAfterPreprocessing { t: usize },
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// Graph input shape after preprocessing, `[T', d]`.
pub fn graph_input_shape(desc: &ArchDescriptor, input_shape: [usize; 2]) -> Result<[usize; 2], CompileError> {
    let [t, d] = input_shape;
    if t == 0 || d == 0 {
        return Err(CompileError::BadInput(input_shape.to_vec()));
    }
    let t2 = preprocess::output_len(&desc.preprocessing, t);
    if t2 == 0 {
        return Err(CompileError::EmptyAfterPreprocessing { t });
    }
    Ok([t2, d])
}

/// Builds the network. Layer names are `stem`, `blocks[i]` and `head.*`;
/// the last layer is always `head.linear`, so the penultimate embedding is
/// `infer_until(len - 1)`.
pub fn compile(desc: &ArchDescriptor, input_shape: [usize; 2], seed: u64) -> Result<ComputeGraph, CompileError> {
    desc.validate()?;
    let [t, d] = graph_input_shape(desc, input_shape)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = Vec::new();
    let mut ch = d;
    if let Some(stem) = &desc.stem {
        let mut body = vec![Layer::Conv1d(Conv1d::new(
            "stem.conv",
            ch,
            stem.channels,
            stem.kernel,
            1,
            1,
            &mut rng,
        ))];
        push_norm_act(&mut body, "stem", stem.norm, stem.activation, stem.channels, 0.0);
        layers.push(Layer::Sequential("stem".into(), body));
        ch = stem.channels;
    }
    let mut flat = false;
    for (i, block) in desc.blocks.iter().enumerate() {
        let name = format!("blocks[{i}]");
        let (layer, out) = match block {
            BlockSpec::Conv1d(c) => conv_block(&name, c, ch, &mut rng),
            BlockSpec::Inception(b) => inception_block(&name, b, ch, &mut rng),
            BlockSpec::Flatten => {
                flat = true;
                (Layer::Flatten(Flatten::new(name)), 0)
            }
        };
        layers.push(layer);
        ch = out;
    }
    if flat {
        let before = ComputeGraph::new(vec![t, d], layers.clone(), 0)?;
        ch = before.output_shape()[1];
    }
    layers.push(Layer::GlobalAvgPool(GlobalAvgPool::new("head.pool")));
    if desc.head.dropout > 0.0 {
        layers.push(Layer::Dropout(Dropout::new("head.dropout", desc.head.dropout)));
    }
    layers.push(Layer::Dense(Dense::new("head.linear", ch, desc.output, &mut rng)));
    Ok(ComputeGraph::new(vec![t, d], layers, seed ^ 0x9e37_79b9_7f4a_7c15)?)
}

/// Width of the embedding entering the final linear layer.
pub fn embedding_width(desc: &ArchDescriptor, input_shape: [usize; 2]) -> Result<usize, CompileError> {
    let g = compile(desc, input_shape, 0)?;
    Ok(g.shape_before(g.layers().len() - 1)?.iter().product())
}

fn push_norm_act(body: &mut Vec<Layer>, name: &str, norm: NormKind, act: ActKind, ch: usize, dropout: f64) {
    match norm {
        NormKind::Batch => body.push(Layer::BatchNorm(BatchNorm::new(format!("{name}.norm"), ch))),
        NormKind::Layer => body.push(Layer::LayerNorm(LayerNorm::new(format!("{name}.norm"), ch))),
        NormKind::None => {}
    }
    let act = match act {
        ActKind::Gelu => Some(Activation::Gelu),
        ActKind::Relu => Some(Activation::Relu),
        ActKind::None => None,
    };
    if let Some(a) = act {
        body.push(Layer::Activation(Elementwise::new(format!("{name}.act"), a)));
    }
    if dropout > 0.0 {
        body.push(Layer::Dropout(Dropout::new(format!("{name}.dropout"), dropout)));
    }
}

fn wrap_residual(
    name: &str,
    residual: bool,
    body: Vec<Layer>,
    in_ch: usize,
    out_ch: usize,
    rng: &mut ChaCha8Rng,
) -> Layer {
    if !residual {
        return Layer::Sequential(name.to_string(), body);
    }
    let shortcut = (in_ch != out_ch).then(|| Conv1d::new(format!("{name}.shortcut"), in_ch, out_ch, 1, 1, 1, rng));
    Layer::Residual(Residual {
        name: name.to_string(),
        body,
        shortcut,
    })
}

fn conv_block(name: &str, c: &ConvBlock, in_ch: usize, rng: &mut ChaCha8Rng) -> (Layer, usize) {
    let mut body = vec![Layer::Conv1d(Conv1d::new(
        format!("{name}.conv"),
        in_ch,
        c.channels,
        c.kernel,
        c.stride,
        c.dilation,
        rng,
    ))];
    push_norm_act(&mut body, name, c.norm, c.activation, c.channels, c.dropout);
    (
        wrap_residual(name, c.residual, body, in_ch, c.channels, rng),
        c.channels,
    )
}

/// The bottleneck is skipped for single-channel input.
fn inception_block(name: &str, b: &InceptionBlock, in_ch: usize, rng: &mut ChaCha8Rng) -> (Layer, usize) {
    let bottleneck =
        (in_ch > 1).then(|| Conv1d::new(format!("{name}.bottleneck"), in_ch, b.bottleneck_channels, 1, 1, 1, rng));
    let branch_in = if bottleneck.is_some() {
        b.bottleneck_channels
    } else {
        in_ch
    };
    let branches = b
        .branch_kernels
        .iter()
        .enumerate()
        .map(|(j, &k)| {
            Conv1d::new(
                format!("{name}.branch[{j}]"),
                branch_in,
                b.out_channels_per_branch,
                k,
                1,
                1,
                rng,
            )
        })
        .collect();
    let out = b.out_channels();
    let mut body = vec![Layer::Inception(Inception::new(
        format!("{name}.inception"),
        bottleneck,
        branches,
    ))];
    push_norm_act(&mut body, name, b.norm, b.activation, out, b.dropout);
    (wrap_residual(name, b.residual, body, in_ch, out, rng), out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::descriptor::PreprocStep;
    use crate::nn::Tensor;

    /// Independent parameter arithmetic for conv/inception descriptors.
    fn oracle_params(desc: &ArchDescriptor, d: usize) -> usize {
        let conv = |k: usize, i: usize, o: usize| k * i * o + o;
        let norm = |n: NormKind, c: usize| if n == NormKind::None { 0 } else { 2 * c };
        let mut ch = d;
        let mut total = 0;
        if let Some(s) = &desc.stem {
            total += conv(s.kernel, ch, s.channels) + norm(s.norm, s.channels);
            ch = s.channels;
        }
        for b in &desc.blocks {
            match b {
                BlockSpec::Conv1d(c) => {
                    total += conv(c.kernel, ch, c.channels) + norm(c.norm, c.channels);
                    if c.residual && ch != c.channels {
                        total += conv(1, ch, c.channels);
                    }
                    ch = c.channels;
                }
                BlockSpec::Inception(b) => {
                    let mut bin = ch;
                    if ch > 1 {
                        total += conv(1, ch, b.bottleneck_channels);
                        bin = b.bottleneck_channels;
                    }
                    for &k in &b.branch_kernels {
                        total += conv(k, bin, b.out_channels_per_branch);
                    }
                    let out = b.branch_kernels.len() * b.out_channels_per_branch;
                    total += norm(b.norm, out);
                    if b.residual && ch != out {
                        total += conv(1, ch, out);
                    }
                    ch = out;
                }
                BlockSpec::Flatten => unreachable!(),
            }
        }
        total + ch * desc.output + desc.output
    }

    #[test]
    fn dense_only_on_8x2_has_17_parameters() {
        let mut g = compile(&ArchDescriptor::dense_only(), [8, 2], 0).unwrap();
        assert_eq!(g.parameter_count(), 17);
        assert_eq!(g.output_shape(), &[1]);
    }

    #[test]
    fn baseline_on_3000x5_matches_shape_arithmetic() {
        let desc = ArchDescriptor::baseline();
        let mut g = compile(&desc, [3000, 5], 1).unwrap();
        assert_eq!(g.parameter_count(), oracle_params(&desc, 5));
        let names: Vec<&str> = g.layers().iter().map(|l| l.name()).collect();
        assert_eq!(
            names,
            [
                "stem",
                "blocks[0]",
                "blocks[1]",
                "head.pool",
                "head.dropout",
                "head.linear"
            ]
        );
        assert_eq!(embedding_width(&desc, [3000, 5]).unwrap(), 96);
    }

    #[test]
    fn parameter_count_depends_only_on_descriptor_and_shape() {
        let desc = ArchDescriptor::baseline();
        let a = compile(&desc, [64, 3], 1).unwrap().parameter_count();
        let b = compile(&desc, [128, 3], 99).unwrap().parameter_count();
        assert_eq!(a, b);
    }

    #[test]
    fn downsample_shrinks_graph_input() {
        let mut desc = ArchDescriptor::baseline();
        desc.preprocessing.push(PreprocStep::Downsample { factor: 4 });
        let g = compile(&desc, [100, 6], 0).unwrap();
        assert_eq!(g.input_shape(), &[25, 6]);
        desc.preprocessing.push(PreprocStep::Downsample { factor: 8 });
        assert!(matches!(
            compile(&desc, [20, 6], 0),
            Err(CompileError::EmptyAfterPreprocessing { .. })
        ));
    }

    #[test]
    fn compiled_baseline_runs_forward() {
        let mut g = compile(&ArchDescriptor::baseline(), [32, 2], 3).unwrap();
        let x = Tensor::new(vec![4, 32, 2], (0..256).map(|i| (i as f64 * 0.1).sin()).collect()).unwrap();
        let y = g.infer(&x).unwrap();
        assert_eq!(y.shape(), &[4, 1]);
    }
}
