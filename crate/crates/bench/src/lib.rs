//! Shared input builders for the criterion benches.

pub use sivor_core as core;
