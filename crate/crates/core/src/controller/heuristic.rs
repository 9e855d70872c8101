use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Controller, ControllerOutput, Proposal};
use crate::arch::{compile, mutate_checked, ArchDescriptor, MutationOp};
use crate::experts::ExpertKey;
use crate::protocol::ControllerSummary;

pub const EPSILON: f64 = 0.2;

/// Greedy choice walks this list, advancing by one per trial of the target.
pub const OPERATOR_ORDER: [MutationOp; 9] = [
    MutationOp::Deepen,
    MutationOp::Shrink,
    MutationOp::Widen,
    MutationOp::KernelSwap,
    MutationOp::ToggleNorm,
    MutationOp::DropoutDown,
    MutationOp::DropoutUp,
    MutationOp::ToggleZscore,
    MutationOp::SetDownsample,
];

/// Expert with the lowest best-so-far F1 (never-trained counts as 0), ties
/// to the first in grid order. Degenerate experts are never targeted.
pub fn weakest_expert(summary: &ControllerSummary) -> Option<(ExpertKey, f64)> {
    let mut best: Option<(ExpertKey, f64)> = None;
    for e in summary.experts.iter().filter(|e| !e.degenerate) {
        let f = e.best_f1.unwrap_or(0.0);
        if best.is_none_or(|(_, b)| f < b) {
            best = Some((e.target, f));
        }
    }
    best
}

#[derive(Clone, Debug)]
pub struct HeuristicController {
    pub epsilon: f64,
}

impl Default for HeuristicController {
    fn default() -> Self {
        Self { epsilon: EPSILON }
    }
}

impl HeuristicController {
    /// Pure function of `(summary, seed)`.
    pub fn propose_heuristic(&self, summary: &ControllerSummary, seed: u64) -> Proposal {
        let (target, f1) = weakest_expert(summary).unwrap_or((ExpertKey::new(0, 0), 0.0));
        let base = summary.base_descriptor(target).unwrap_or_else(ArchDescriptor::baseline);
        let shape = [
            summary.dataset.series_len,
            summary.dataset.dims.get(target.modality).copied().unwrap_or(1),
        ];
        let compiles = |d: &ArchDescriptor| compile(d, shape, 0).is_ok();
        let tried = summary
            .experts
            .iter()
            .find(|e| e.target == target)
            .map(|e| e.tried.clone())
            .unwrap_or_default();
        let novel = |d: &ArchDescriptor| compiles(d) && !tried.iter().any(|h| h == d.canonical_hash().as_str());

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let trials = summary
            .experts
            .iter()
            .find(|e| e.target == target)
            .map_or(0, |e| e.trials) as usize;
        let explore = rng.random::<f64>() < self.epsilon;
        let first = if explore {
            OPERATOR_ORDER[rng.random_range(0..OPERATOR_ORDER.len())]
        } else {
            OPERATOR_ORDER[trials % OPERATOR_ORDER.len()]
        };
        let start = OPERATOR_ORDER.iter().position(|&o| o == first).unwrap();
        // Prefer descriptors this expert has not been trained with.
        let mut chosen = None;
        'search: for accept in [&novel as &dyn Fn(&ArchDescriptor) -> bool, &compiles] {
            for i in 0..OPERATOR_ORDER.len() {
                let op = OPERATOR_ORDER[(start + i) % OPERATOR_ORDER.len()];
                let m = mutate_checked(&base, rng.random(), Some(op), accept);
                if m.applied {
                    chosen = Some(m);
                    break 'search;
                }
            }
        }
        let (descriptor, operator) = match chosen {
            Some(m) => (m.descriptor, Some(m.op.as_str().to_string())),
            None => (base, None),
        };
        let how = match (&operator, explore) {
            (Some(op), true) => format!("explore with {op}"),
            (Some(op), false) => format!("apply {op}"),
            (None, _) => "no operator applies; retrain best descriptor".to_string(),
        };
        Proposal {
            targets: vec![target],
            descriptor,
            rationale: format!("target {target} has the lowest best F1 {f1:.4}; {how}"),
            operator,
        }
    }
}

impl Controller for HeuristicController {
    fn kind(&self) -> &'static str {
        "heuristic"
    }

    fn propose(&mut self, summary: &ControllerSummary, _manifest: &str, seed: u64) -> ControllerOutput {
        ControllerOutput {
            proposal: self.propose_heuristic(summary, seed),
            controller: "heuristic".into(),
            repairs: Vec::new(),
            repaired_texts: Vec::new(),
        }
    }
}
