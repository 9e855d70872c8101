//! Seeded mutation operators over descriptors.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::descriptor::{
    ActKind, ArchDescriptor, BlockSpec, ConvBlock, NormKind, PreprocStep, DOWNSAMPLE_FACTORS, MAX_DROPOUT,
};

pub const MAX_REDRAWS: usize = 16;
const SMALL_KERNELS: [usize; 3] = [3, 5, 7];
const LARGE_KERNELS: [usize; 3] = [9, 19, 39];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MutationOp {
    Deepen,
    Widen,
    Shrink,
    KernelSwap,
    DropoutUp,
    DropoutDown,
    ToggleNorm,
    ToggleZscore,
    SetDownsample,
}

impl MutationOp {
    pub const ALL: [MutationOp; 9] = [
        MutationOp::Deepen,
        MutationOp::Widen,
        MutationOp::Shrink,
        MutationOp::KernelSwap,
        MutationOp::DropoutUp,
        MutationOp::DropoutDown,
        MutationOp::ToggleNorm,
        MutationOp::ToggleZscore,
        MutationOp::SetDownsample,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MutationOp::Deepen => "deepen",
            MutationOp::Widen => "widen",
            MutationOp::Shrink => "shrink",
            MutationOp::KernelSwap => "kernel-swap",
            MutationOp::DropoutUp => "dropout-up",
            MutationOp::DropoutDown => "dropout-down",
            MutationOp::ToggleNorm => "toggle-norm",
            MutationOp::ToggleZscore => "toggle-zscore",
            MutationOp::SetDownsample => "set-downsample",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mutation {
    pub descriptor: ArchDescriptor,
    pub op: MutationOp,
    /// False when every redraw was invalid and the input was returned.
    pub applied: bool,
}

/// Mutates with a random operator when `op` is `None`.
pub fn mutate(desc: &ArchDescriptor, seed: u64, op: Option<MutationOp>) -> Mutation {
    mutate_checked(desc, seed, op, |_| true)
}

/// Like [`mutate`] but also redraws candidates rejected by `accept`
/// (for example ones that do not compile for a given input length).
pub fn mutate_checked(
    desc: &ArchDescriptor,
    seed: u64,
    op: Option<MutationOp>,
    accept: impl Fn(&ArchDescriptor) -> bool,
) -> Mutation {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut last_op = op.unwrap_or(MutationOp::Deepen);
    for _ in 0..MAX_REDRAWS {
        let o = op.unwrap_or_else(|| *MutationOp::ALL.choose(&mut rng).unwrap());
        last_op = o;
        let cand = apply(desc, o, &mut rng);
        if cand != *desc && cand.validate().is_ok() && accept(&cand) {
            return Mutation {
                descriptor: cand,
                op: o,
                applied: true,
            };
        }
    }
    Mutation {
        descriptor: desc.clone(),
        op: last_op,
        applied: false,
    }
}

fn scale(w: usize) -> usize {
    (w as f64 * 1.5).round() as usize
}

fn round_tenth(x: f64) -> f64 {
    (x * 10.0).round() / 10.0
}

fn toggle_norm(n: NormKind) -> NormKind {
    match n {
        NormKind::Batch => NormKind::Layer,
        NormKind::Layer | NormKind::None => NormKind::Batch,
    }
}

fn swap_kernel(k: usize, rng: &mut ChaCha8Rng) -> usize {
    let family = if LARGE_KERNELS.contains(&k) {
        LARGE_KERNELS
    } else {
        SMALL_KERNELS
    };
    let choices: Vec<usize> = family.iter().copied().filter(|&x| x != k).collect();
    *choices.choose(rng).unwrap()
}

fn default_conv() -> ConvBlock {
    ConvBlock {
        channels: 32,
        kernel: 5,
        stride: 1,
        dilation: 1,
        residual: false,
        norm: NormKind::Batch,
        activation: ActKind::Relu,
        dropout: 0.0,
    }
}

fn apply(desc: &ArchDescriptor, op: MutationOp, rng: &mut ChaCha8Rng) -> ArchDescriptor {
    let mut d = desc.clone();
    match op {
        MutationOp::Widen => {
            if let Some(s) = &mut d.stem {
                s.channels = scale(s.channels);
            }
            for b in &mut d.blocks {
                match b {
                    BlockSpec::Conv1d(c) => c.channels = scale(c.channels),
                    BlockSpec::Inception(i) => {
                        i.bottleneck_channels = scale(i.bottleneck_channels);
                        i.out_channels_per_branch = scale(i.out_channels_per_branch);
                    }
                    BlockSpec::Flatten => {}
                }
            }
        }
        MutationOp::Deepen => {
            let new = d
                .blocks
                .iter()
                .rev()
                .find(|b| !matches!(b, BlockSpec::Flatten))
                .cloned()
                .unwrap_or_else(|| BlockSpec::Conv1d(default_conv()));
            // Nothing may follow a flatten, so appending replaces it and the
            // head falls back to global-average pooling.
            if matches!(d.blocks.last(), Some(BlockSpec::Flatten)) {
                d.blocks.pop();
            }
            d.blocks.push(new);
        }
        MutationOp::Shrink => {
            if d.blocks.len() > 1 {
                d.blocks.pop();
            }
        }
        MutationOp::KernelSwap => {
            let mut slots: Vec<Option<usize>> = Vec::new();
            if d.stem.is_some() {
                slots.push(None);
            }
            for (i, b) in d.blocks.iter().enumerate() {
                if !matches!(b, BlockSpec::Flatten) {
                    slots.push(Some(i));
                }
            }
            match slots.choose(rng) {
                None => {}
                Some(None) => {
                    let s = d.stem.as_mut().unwrap();
                    s.kernel = swap_kernel(s.kernel, rng);
                }
                Some(Some(i)) => match &mut d.blocks[*i] {
                    BlockSpec::Conv1d(c) => c.kernel = swap_kernel(c.kernel, rng),
                    BlockSpec::Inception(b) => {
                        let small = b.branch_kernels.iter().all(|k| SMALL_KERNELS.contains(k));
                        b.branch_kernels = if small { LARGE_KERNELS } else { SMALL_KERNELS }.to_vec();
                    }
                    BlockSpec::Flatten => {}
                },
            }
        }
        MutationOp::DropoutUp => d.head.dropout = round_tenth((d.head.dropout + 0.1).min(MAX_DROPOUT)),
        MutationOp::DropoutDown => d.head.dropout = round_tenth((d.head.dropout - 0.1).max(0.0)),
        MutationOp::ToggleNorm => {
            if let Some(s) = &mut d.stem {
                s.norm = toggle_norm(s.norm);
            }
            for b in &mut d.blocks {
                match b {
                    BlockSpec::Conv1d(c) => c.norm = toggle_norm(c.norm),
                    BlockSpec::Inception(i) => i.norm = toggle_norm(i.norm),
                    BlockSpec::Flatten => {}
                }
            }
        }
        MutationOp::ToggleZscore => {
            if let Some(pos) = d.preprocessing.iter().position(|s| *s == PreprocStep::ZscorePerChannel) {
                d.preprocessing.remove(pos);
            } else {
                d.preprocessing.insert(0, PreprocStep::ZscorePerChannel);
            }
        }
        MutationOp::SetDownsample => {
            let current = d.downsample_factor();
            let choices: Vec<usize> = DOWNSAMPLE_FACTORS.iter().copied().filter(|&f| f != current).collect();
            let f = choices[rng.random_range(0..choices.len())];
            d.preprocessing.retain(|s| !matches!(s, PreprocStep::Downsample { .. }));
            if f > 1 {
                d.preprocessing.push(PreprocStep::Downsample { factor: f });
            }
        }
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn one_conv(channels: usize) -> ArchDescriptor {
        let mut d = ArchDescriptor::dense_only();
        d.blocks = vec![BlockSpec::Conv1d(ConvBlock {
            channels,
            ..default_conv()
        })];
        d
    }

    #[test]
    fn widen_scales_by_one_and_a_half() {
        let m = mutate(&one_conv(8), 0, Some(MutationOp::Widen));
        assert!(m.applied);
        match &m.descriptor.blocks[0] {
            BlockSpec::Conv1d(c) => assert_eq!(c.channels, 12),
            _ => panic!(),
        }
    }

    #[test]
    fn deepen_replaces_trailing_flatten() {
        let m = mutate(&ArchDescriptor::dense_only(), 0, Some(MutationOp::Deepen));
        assert_eq!(m.descriptor.blocks.len(), 1);
        assert!(matches!(m.descriptor.blocks[0], BlockSpec::Conv1d(_)));
    }

    #[test]
    fn shrink_at_depth_one_falls_back_to_identity() {
        let d = one_conv(8);
        let m = mutate(&d, 5, Some(MutationOp::Shrink));
        assert!(!m.applied);
        assert_eq!(m.descriptor, d);
    }

    #[test]
    fn widen_past_limit_is_identity() {
        let d = one_conv(1000);
        assert_eq!(mutate(&d, 1, Some(MutationOp::Widen)).descriptor, d);
    }

    #[test]
    fn kernel_swap_stays_in_family() {
        for seed in 0..20 {
            let m = mutate(&one_conv(8), seed, Some(MutationOp::KernelSwap));
            match &m.descriptor.blocks[0] {
                BlockSpec::Conv1d(c) => assert!([3, 7].contains(&c.kernel)),
                _ => panic!(),
            }
        }
    }

    #[test]
    fn same_seed_same_output() {
        let d = ArchDescriptor::baseline();
        for seed in 0..50 {
            assert_eq!(mutate(&d, seed, None), mutate(&d, seed, None));
        }
    }

    #[test]
    fn thousand_random_mutations_stay_valid() {
        let mut d = ArchDescriptor::baseline();
        for seed in 0..1000u64 {
            let m = mutate(&ArchDescriptor::baseline(), seed, None);
            assert!(m.descriptor.validate().is_ok());
            d = mutate(&d, seed, None).descriptor;
            assert!(d.validate().is_ok(), "chain step {seed}");
        }
    }

    proptest! {
        #[test]
        fn mutation_round_trips_through_text(seed in any::<u64>()) {
            let m = mutate(&ArchDescriptor::baseline(), seed, None);
            let text = m.descriptor.canonical_text();
            prop_assert_eq!(super::super::parse_descriptor(text.as_bytes()).unwrap(), m.descriptor);
        }
    }
}
