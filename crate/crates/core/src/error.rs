use thiserror::Error;

use crate::qp::QpError;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum KinematicsError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite input")]
    NonFinite,
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("J Jᵀ is singular; use a positive damping near singularities")]
    RankDeficient,
    #[error("time step must be positive, got {0}")]
    InvalidTimeStep(f64),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AdmittanceError {
    #[error("inertia entries must be finite and strictly positive")]
    NonPositiveInertia,
    #[error("damping entries must be finite and non-negative")]
    NegativeDamping,
    #[error("invalid repulsive potential: {0}")]
    InvalidPotential(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("time step must be positive, got {0}")]
    InvalidTimeStep(f64),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TankError {
    #[error("initial energy {initial} J is below the floor {floor} J")]
    BelowFloor { initial: f64, floor: f64 },
    #[error("tank floor must be finite and positive, got {0}")]
    InvalidFloor(f64),
    #[error("tank depleted ({energy} J): modulation is singular")]
    Depleted { energy: f64 },
    #[error("tank energy {energy} J fell below the floor {floor} J")]
    FloorViolated { energy: f64, floor: f64 },
    #[error("time step must be positive, got {0}")]
    InvalidTimeStep(f64),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BarrierError {
    #[error("barrier gain must be finite and positive, got {0}")]
    InvalidGain(f64),
    #[error("joint index {index} out of range for {dof} joints")]
    JointOutOfRange { index: usize, dof: usize },
    #[error("minimum distance must be positive, got {0}")]
    InvalidDistance(f64),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ControllerError {
    #[error("invalid controller configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
    #[error(transparent)]
    Barrier(#[from] BarrierError),
    #[error(transparent)]
    Tank(#[from] TankError),
    #[error(transparent)]
    Admittance(#[from] AdmittanceError),
    #[error("controller QP rejected: {0}")]
    Qp(#[from] QpError),
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("scenario parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error(transparent)]
    Controller(#[from] ControllerError),
}

#[derive(Debug, Error)]
pub enum LogError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("malformed log: {0}")]
    Malformed(String),
}
