//! Trace-driven abstract model of an out-of-order core, with sensitivity
//! analysis for locating bottlenecks.
//!
//! The model tracks, for every throughput-limited resource, the time it can
//! next accept work, and for every register and memory location the time its
//! value becomes available. Instructions from a trace start as soon as their
//! inputs, their resources and a slot in the instruction window allow.
//! Sensitivity analysis reruns the model with resources accelerated and
//! reports which accelerations actually shorten the run.

pub mod branch;
pub mod cache;
pub mod cli;
pub mod corpus;
pub mod engine;
pub mod machine;
pub mod report;
pub mod sensitivity;
pub mod trace;

pub use engine::{simulate, simulate_with, SimError, SimOptions, SimResult, Timing};
pub use machine::{MachineBuilder, MachineConfig, WeightVector};
pub use sensitivity::{classify, speedup, sweep_single, sweep_subsets, SensitivityReport};
pub use trace::{parse_trace, write_trace, InstructionEvent};
