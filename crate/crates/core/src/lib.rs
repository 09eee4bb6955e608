//! Linear probes over stored hidden states for detecting wrong reasoning
//! traces, with the baselines, text-only controls, step analysis and
//! intervention arithmetic that go with them.

pub mod analysis;
pub mod baselines;
pub mod error;
pub mod interventions;
pub mod numerics;
pub mod probe;
pub mod report;
pub mod synth;
pub mod text;
pub mod trace_store;

pub use error::{Error, Result};
