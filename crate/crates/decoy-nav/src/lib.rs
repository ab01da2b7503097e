//! Privacy-preserving path planning toolkit.
//!
//! An agent must reach a real goal while keeping an observer uncertain about
//! which of several candidate goals is the real one. The crate provides:
//!
//! - discrete (8-connected grid) and continuous 2D navigation environments
//!   with one reward channel per candidate goal ([`env`], [`grid`]);
//! - per-candidate subagents: exact value iteration, tabular Q-learning and a
//!   small entropy-regularized actor-critic with shared replay ([`agents`]);
//! - observer models: Q-difference beliefs and a cost-based plan recognizer
//!   ([`observer`]);
//! - decision policies: honest, hard entropy maximisation over pruned actions,
//!   and the soft-max variant that trains its subagents under the deceptive
//!   policy itself ([`policies`]);
//! - an active pursuit adversary that races the agent to the inferred goal
//!   ([`adversary`]);
//! - metrics and artifact emission (CSV/SVG) plus the run harness behind the
//!   `decoy-nav` binary ([`eval`], [`harness`]).
//!
//! Start with the `examples/` directory: each example is a runnable tour of
//! one capability (`cargo run --example train_deam`, etc.).

pub mod adversary;
pub mod agents;
pub mod env;
pub mod eval;
pub mod fixtures;
pub mod grid;
pub mod harness;
pub mod observer;
pub mod policies;

pub use env::{CandidateSet, Mode, Scenario, StepOutcome};
pub use grid::{Cell, GridMap};
