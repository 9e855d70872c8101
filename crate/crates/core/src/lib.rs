pub mod arch;
pub mod cli;
pub mod controller;
pub mod data;
pub mod experts;
pub mod fusion;
pub mod metrics;
pub mod nn;
pub mod orchestrator;
pub mod protocol;
pub mod seed;
pub mod validation;
