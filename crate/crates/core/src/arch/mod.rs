//! Declarative architecture + preprocessing descriptors.

mod compile;
mod descriptor;
mod mutate;
pub mod preprocess;

pub use compile::{compile, embedding_width, graph_input_shape, CompileError};
pub use descriptor::*;
pub use mutate::{mutate, mutate_checked, Mutation, MutationOp, MAX_REDRAWS};
