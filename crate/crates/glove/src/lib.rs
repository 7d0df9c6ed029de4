//! Drift detection, active verification, and memory realignment for
//! experience-bank agents, plus the drifting-environment suite and the
//! experiment harness used to evaluate them.

pub mod agents;
pub mod bank;
pub mod bounds;
pub mod cli;
pub mod config;
pub mod detect;
pub mod envs;
pub mod harness;
pub mod report;
pub mod verify;
