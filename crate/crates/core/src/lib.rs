//! Risk-sensitive model predictive control for linear systems with
//! finite-support multiplicative uncertainty.
//!
//! The pieces, bottom up:
//!
//! - [`risk_envelope`]: polytopic risk envelopes (expectation, CVaR, raw
//!   halfspaces), exact vertex enumeration and nested risk evaluation.
//! - [`system_model`]: branch dynamics, stage cost, constraint sets.
//! - [`conic`]: conic program builder and solver backend.
//! - [`terminal_design`]: offline LMI synthesis of the terminal ellipsoid,
//!   cost and gain, plus a direct verifier of the underlying conditions.
//! - [`scenario_mpc`]: the online scenario-tree program and closed loop.
//! - [`sim_harness`]: Monte-Carlo sweeps, scaling study and report files.

pub mod conic;
pub mod error;
pub mod linalg;
pub mod risk_envelope;
pub mod scenario_mpc;
pub mod sim_harness;
pub mod system_model;
pub mod terminal_design;

pub use error::{Error, Result};
pub use linalg::{Mat, Vector};
pub use risk_envelope::{
    compose_risk, compose_risk_with, cvar_envelope, cvar_primal, enumerate_vertices, evaluate_risk, expectation_envelope,
    CostSequenceTree, EnvelopeSpec, Pmf, RiskEnvelope,
};
pub use system_model::{sample_branch, ConstraintSet, CostWeights, Ellipsoid, ModelFile, Plant, SystemModel};
pub use scenario_mpc::{build_tree, MpcController, MpcStepResult, ScenarioTree, Trajectory};
pub use terminal_design::{mpc0_design, solve_pe, verify_terminal, TerminalDesign, VerificationReport};
pub use sim_harness::{emit_report, run_alpha_sweep, run_scaling_study, stable_hash, ExperimentConfig, ExperimentReport};
