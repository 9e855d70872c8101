//! Central finite-difference checks of analytic gradients.

use expert_nas::arch::{
    compile, ActKind, ArchDescriptor, BlockSpec, ConvBlock, HeadSpec, InceptionBlock, NormKind, StemSpec,
};
use expert_nas::nn::layers::{
    BatchNorm, Conv1d, Dense, Dropout, Elementwise, Flatten, GlobalAvgPool, Inception, LayerNorm, Residual, Softmax,
};
use expert_nas::nn::{Activation, ComputeGraph, Layer, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const EPS: f64 = 1e-4;
pub const TOLERANCE: f64 = 1e-3;
/// Denominator floor so gradients that are zero in both computations do
/// not divide by zero.
pub const FLOOR: f64 = 1e-6;
const DROPOUT_SEED: u64 = 99;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

/// Loss `sum(r * f(x))` for a fixed random `r`, evaluated in training mode
/// with the dropout stream reset so every evaluation sees the same mask.
fn loss(g: &mut ComputeGraph, x: &Tensor, r: &[f64]) -> f64 {
    g.reseed_dropout(DROPOUT_SEED);
    let y = g.forward(x).expect("forward");
    y.data().iter().zip(r).map(|(a, b)| a * b).sum()
}

/// Largest relative error over every parameter and input element.
pub fn max_rel_error(g: &mut ComputeGraph, x: &Tensor, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    g.set_training(true);
    g.reseed_dropout(DROPOUT_SEED);
    let y = g.forward(x).expect("forward");
    let r = uniform(&mut rng, y.len(), -1.0, 1.0);
    g.zero_grad();
    let dx = g
        .backward(&Tensor::new(y.shape().to_vec(), r.clone()).unwrap())
        .expect("backward");
    let grads: Vec<Vec<f64>> = g.gradients().into_iter().map(|t| t.data().to_vec()).collect();

    let mut worst: f64 = 0.0;
    for (pi, grad) in grads.iter().enumerate() {
        for (ei, &analytic) in grad.iter().enumerate() {
            let orig = g.params_mut()[pi].value.data()[ei];
            g.params_mut()[pi].value.data_mut()[ei] = orig + EPS;
            let up = loss(g, x, &r);
            g.params_mut()[pi].value.data_mut()[ei] = orig - EPS;
            let down = loss(g, x, &r);
            g.params_mut()[pi].value.data_mut()[ei] = orig;
            worst = worst.max(rel_err(analytic, (up - down) / (2.0 * EPS)));
        }
    }
    let mut xp = x.clone();
    for i in 0..x.len() {
        let orig = x.data()[i];
        xp.data_mut()[i] = orig + EPS;
        let up = loss(g, &xp, &r);
        xp.data_mut()[i] = orig - EPS;
        let down = loss(g, &xp, &r);
        xp.data_mut()[i] = orig;
        worst = worst.max(rel_err(dx.data()[i], (up - down) / (2.0 * EPS)));
    }
    worst
}

/// Inputs for a `[B, T, C]` graph. ReLU cases keep values away from the
/// kink so a perturbation never crosses it.
fn input(rng: &mut ChaCha8Rng, shape: &[usize], away_from_zero: bool) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let v: f64 = rng.random_range(-1.0..1.0);
            if away_from_zero {
                v.signum() * (0.2 + v.abs())
            } else {
                v
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

pub struct Case {
    pub name: &'static str,
    pub graph: ComputeGraph,
    pub input: Tensor,
}

/// One graph per layer kind (plus both residual shortcut variants).
pub fn layer_cases(seed: u64) -> Vec<Case> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (b, t, c) = (3, 6, 3);
    let seq = [t, c];
    let mut cases = Vec::new();
    let mut push = |name: &'static str, shape: Vec<usize>, layers: Vec<Layer>, away: bool, rng: &mut ChaCha8Rng| {
        let graph = ComputeGraph::new(shape.clone(), layers, seed).expect(name);
        let mut full = vec![b];
        full.extend(shape);
        let input = input(rng, &full, away);
        cases.push(Case { name, graph, input });
    };

    let conv = Conv1d::new("conv", c, 4, 3, 1, 1, &mut rng);
    push("conv1d", seq.to_vec(), vec![Layer::Conv1d(conv)], false, &mut rng);
    let strided = Conv1d::new("conv_s2_d2", c, 2, 3, 2, 2, &mut rng);
    push(
        "conv1d_strided_dilated",
        seq.to_vec(),
        vec![Layer::Conv1d(strided)],
        false,
        &mut rng,
    );
    let dense = Dense::new("dense", 5, 3, &mut rng);
    push("dense", vec![5], vec![Layer::Dense(dense)], false, &mut rng);
    push(
        "batch_norm",
        seq.to_vec(),
        vec![Layer::BatchNorm(BatchNorm::new("bn", c))],
        false,
        &mut rng,
    );
    push(
        "layer_norm",
        seq.to_vec(),
        vec![Layer::LayerNorm(LayerNorm::new("ln", c))],
        false,
        &mut rng,
    );
    push(
        "relu",
        seq.to_vec(),
        vec![Layer::Activation(Elementwise::new("relu", Activation::Relu))],
        true,
        &mut rng,
    );
    push(
        "gelu",
        seq.to_vec(),
        vec![Layer::Activation(Elementwise::new("gelu", Activation::Gelu))],
        false,
        &mut rng,
    );
    push(
        "sigmoid",
        seq.to_vec(),
        vec![Layer::Activation(Elementwise::new("sigmoid", Activation::Sigmoid))],
        false,
        &mut rng,
    );
    push(
        "dropout",
        seq.to_vec(),
        vec![Layer::Dropout(Dropout::new("dropout", 0.3))],
        false,
        &mut rng,
    );
    push(
        "softmax",
        vec![5],
        vec![Layer::Softmax(Softmax::new("softmax"))],
        false,
        &mut rng,
    );
    push(
        "global_avg_pool",
        seq.to_vec(),
        vec![Layer::GlobalAvgPool(GlobalAvgPool::new("gap"))],
        false,
        &mut rng,
    );
    push(
        "flatten",
        seq.to_vec(),
        vec![Layer::Flatten(Flatten::new("flatten"))],
        false,
        &mut rng,
    );

    let body = vec![
        Layer::Conv1d(Conv1d::new("res.conv", c, c, 3, 1, 1, &mut rng)),
        Layer::Activation(Elementwise::new("res.gelu", Activation::Gelu)),
    ];
    push(
        "residual_identity",
        seq.to_vec(),
        vec![Layer::Residual(Residual {
            name: "res".into(),
            body,
            shortcut: None,
        })],
        false,
        &mut rng,
    );
    let body = vec![Layer::Conv1d(Conv1d::new("resp.conv", c, 5, 3, 1, 1, &mut rng))];
    let shortcut = Some(Conv1d::new("resp.proj", c, 5, 1, 1, 1, &mut rng));
    push(
        "residual_projection",
        seq.to_vec(),
        vec![Layer::Residual(Residual {
            name: "resp".into(),
            body,
            shortcut,
        })],
        false,
        &mut rng,
    );
    let bottleneck = Some(Conv1d::new("inc.bottleneck", c, 2, 1, 1, 1, &mut rng));
    let branches = vec![
        Conv1d::new("inc.b0", 2, 2, 3, 1, 1, &mut rng),
        Conv1d::new("inc.b1", 2, 3, 5, 1, 1, &mut rng),
    ];
    push(
        "inception",
        seq.to_vec(),
        vec![Layer::Inception(Inception::new("inc", bottleneck, branches))],
        false,
        &mut rng,
    );
    let inner = vec![
        Layer::Conv1d(Conv1d::new("seq.conv", c, 2, 3, 1, 1, &mut rng)),
        Layer::LayerNorm(LayerNorm::new("seq.ln", 2)),
    ];
    push(
        "sequential",
        seq.to_vec(),
        vec![Layer::Sequential("seq".into(), inner)],
        false,
        &mut rng,
    );
    cases
}

fn norm(rng: &mut ChaCha8Rng) -> NormKind {
    [NormKind::Batch, NormKind::Layer, NormKind::None][rng.random_range(0..3)]
}

fn odd_kernel(rng: &mut ChaCha8Rng) -> usize {
    [1, 3, 5][rng.random_range(0..3)]
}

/// A random small descriptor mixing stems, conv and inception blocks,
/// residual wrappers, norms and dropout. GELU only: ReLU kinks make finite
/// differences meaningless at random points.
pub fn random_descriptor(seed: u64) -> ArchDescriptor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let stem = rng.random_bool(0.5).then(|| StemSpec {
        channels: rng.random_range(2..5),
        kernel: odd_kernel(&mut rng),
        norm: norm(&mut rng),
        activation: ActKind::Gelu,
    });
    let mut blocks = Vec::new();
    for _ in 0..rng.random_range(1..3) {
        let residual = rng.random_bool(0.5);
        let dropout = if rng.random_bool(0.5) { 0.2 } else { 0.0 };
        if rng.random_bool(0.5) {
            blocks.push(BlockSpec::Conv1d(ConvBlock {
                channels: rng.random_range(2..5),
                kernel: odd_kernel(&mut rng),
                stride: if residual { 1 } else { 1 + rng.random_range(0..2) },
                dilation: 1 + rng.random_range(0..2),
                residual,
                norm: norm(&mut rng),
                activation: ActKind::Gelu,
                dropout,
            }));
        } else {
            blocks.push(BlockSpec::Inception(InceptionBlock {
                branch_kernels: vec![1, 3],
                bottleneck_channels: 2,
                out_channels_per_branch: 2,
                residual,
                norm: norm(&mut rng),
                activation: ActKind::Gelu,
                dropout,
            }));
        }
    }
    ArchDescriptor {
        schema_version: expert_nas::arch::SCHEMA_VERSION,
        preprocessing: vec![],
        stem,
        blocks,
        head: HeadSpec { dropout: 0.1 },
        output: 2,
    }
}

/// Composition `i` of the three checked per seed.
pub fn composition(seed: u64, i: u64) -> Case {
    let desc = random_descriptor(seed.wrapping_mul(31).wrapping_add(i));
    let graph = compile(&desc, [8, 2], seed).expect("random descriptor compiles");
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ i);
    let input = input(&mut rng, &[3, 8, 2], false);
    Case {
        name: ["composition_a", "composition_b", "composition_c"][i as usize],
        graph,
        input,
    }
}
