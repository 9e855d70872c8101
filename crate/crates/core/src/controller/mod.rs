//! Search policies. A controller sees a [`ControllerSummary`] and the
//! rendered manifest and nothing else.

mod heuristic;
mod remote;
mod repair;

pub use heuristic::{weakest_expert, HeuristicController, EPSILON, OPERATOR_ORDER};
pub use remote::{
    parse_response, render_prompt, CommandTransport, Endpoint, FailingTransport, FixtureTransport, RemoteConfig,
    RemoteController, Transport, TransportError, ENDPOINT_ENV, PROMPT_TEMPLATE, REPAIR_ATTEMPTS,
};
pub use repair::{repair, repair_value, RepairError, Repaired};

use crate::arch::ArchDescriptor;
use crate::experts::ExpertKey;
use crate::protocol::{ControllerSummary, RepairNote};

#[derive(Clone, Debug, PartialEq)]
pub struct Proposal {
    pub targets: Vec<ExpertKey>,
    pub descriptor: ArchDescriptor,
    pub rationale: String,
    pub operator: Option<String>,
}

/// A proposal plus how it was obtained, for the ledger.
#[derive(Clone, Debug, PartialEq)]
pub struct ControllerOutput {
    pub proposal: Proposal,
    /// `heuristic`, `remote` or `fallback`.
    pub controller: String,
    pub repairs: Vec<RepairNote>,
    /// Repaired descriptor documents, in order. Controller-bound.
    pub repaired_texts: Vec<String>,
}

pub trait Controller: Send {
    fn kind(&self) -> &'static str;

    fn propose(&mut self, summary: &ControllerSummary, manifest: &str, seed: u64) -> ControllerOutput;
}
