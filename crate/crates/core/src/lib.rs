//! Trace-driven discrete-event simulator for speculative-decoding MoE
//! inference with expert offloading.
//!
//! The crate models a draft model proposing tokens while a target MoE model
//! verifies them, with target experts held in host memory and copied to the
//! device over a single link. Policies decide which experts to copy ahead of
//! use. Start with [`sim::simulate`].

pub mod cache;
pub mod config;
pub mod cutoff;
pub mod predictor;
pub mod prefetch;
pub mod presets;
pub mod report;
pub mod sim;
pub mod time;
pub mod trace;
pub mod units;

pub use cache::{ExpertCache, ExpertId};
pub use config::{load_config, write_config, ExperimentConfig, Policy};
pub use report::SimReport;
pub use sim::{compare_policies, simulate, sweep, SimError, SweepParam};
pub use time::SimTime;
