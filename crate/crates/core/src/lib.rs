//! Passivity-preserving variable admittance control fused with control
//! barrier functions.
//!
//! Every control cycle solves one small convex QP over joint velocities and
//! task slacks. The QP tracks a (possibly non-passive) admittance model,
//! keeps each barrier task satisfied up to its slack, and enforces a hard
//! energy-tank floor so that the interaction port stays passive.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod admittance;
pub mod barrier;
pub mod batch;
pub mod controller;
pub mod error;
pub mod kinematics;
pub mod log;
pub mod qp;
pub mod scenario;
pub mod sim;
pub mod tank;

pub use admittance::{AdmittanceParams, AdmittanceState, RepulsivePotential};
pub use barrier::{
    BarrierKind, BarrierTask, ClassK, LinearConstraintRow, MovingPoint, TaskEnvironment,
};
pub use controller::{ControlInput, ControlOutput, Controller, ControllerConfig};
pub use kinematics::{JointState, ManipulatorModel};
pub use log::{LogRecord, RunSummary};
pub use qp::{QpProblem, QpSettings, QpSolution, QpStatus};
pub use scenario::Scenario;
pub use sim::Simulation;
pub use tank::TankState;
