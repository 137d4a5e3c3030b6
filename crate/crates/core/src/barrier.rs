//! Control barrier functions and their lowering to linear QP rows.
//!
//! Each task is a scalar `h` whose non-negativity encodes the task. Enforcing
//! `∂h/∂t + ∇h · ẋ + α(h) ≥ −δ` keeps the safe set forward invariant when the
//! slack `δ` is zero. Every row has the shape `aᵀ q̇ + δ ≥ b`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::admittance::MIN_DISTANCE;
use crate::error::BarrierError;

/// Extended class-K function applied to `h`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClassK {
    #[default]
    Identity,
    /// `α(h) = k h`
    Linear { gain: f64 },
    /// `α(h) = k h³`
    Cubic { gain: f64 },
}

impl ClassK {
    pub fn apply(&self, h: f64) -> f64 {
        match *self {
            ClassK::Identity => h,
            ClassK::Linear { gain } => gain * h,
            ClassK::Cubic { gain } => gain * h * h * h,
        }
    }

    fn validate(&self) -> Result<(), BarrierError> {
        match *self {
            ClassK::Identity => Ok(()),
            ClassK::Linear { gain } | ClassK::Cubic { gain } => {
                if gain.is_finite() && gain > 0.0 {
                    Ok(())
                } else {
                    Err(BarrierError::InvalidGain(gain))
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BarrierKind {
    /// Keep the end-effector at least `min_distance` from the obstacle.
    ObstacleAvoidance { min_distance: f64 },
    /// Keep joint `joint` inside its limits.
    JointLimit { joint: usize },
    /// Drive the end-effector to the goal.
    PositionGoal,
}

/// A barrier task of the stack: what it constrains, its gain `ξ`, the class-K
/// function and whether a slack variable may relax it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BarrierTask {
    pub kind: BarrierKind,
    pub gain: f64,
    pub alpha: ClassK,
    pub slacked: bool,
}

impl BarrierTask {
    pub fn new(kind: BarrierKind, gain: f64, slacked: bool) -> Result<Self, BarrierError> {
        if !(gain.is_finite() && gain > 0.0) {
            return Err(BarrierError::InvalidGain(gain));
        }
        if let BarrierKind::ObstacleAvoidance { min_distance } = kind {
            if !(min_distance.is_finite() && min_distance > 0.0) {
                return Err(BarrierError::InvalidDistance(min_distance));
            }
        }
        Ok(Self {
            kind,
            gain,
            alpha: ClassK::Identity,
            slacked,
        })
    }

    pub fn with_alpha(mut self, alpha: ClassK) -> Result<Self, BarrierError> {
        alpha.validate()?;
        self.alpha = alpha;
        Ok(self)
    }

    pub fn label(&self) -> String {
        match self.kind {
            BarrierKind::ObstacleAvoidance { .. } => "obstacle".to_string(),
            BarrierKind::JointLimit { joint } => format!("joint_limit_{joint}"),
            BarrierKind::PositionGoal => "position_goal".to_string(),
        }
    }

    /// Evaluates the task at the current state. Returns `None` when the task
    /// has nothing to act on (no obstacle present).
    pub fn evaluate(
        &self,
        q: &DVector<f64>,
        x: &DVector<f64>,
        env: &TaskEnvironment,
    ) -> Result<Option<BarrierEval>, BarrierError> {
        Ok(match self.kind {
            BarrierKind::ObstacleAvoidance { min_distance } => match &env.obstacle {
                Some(obs) => Some(eval_obstacle(
                    x,
                    &obs.position,
                    &obs.velocity,
                    min_distance,
                    self.gain,
                )?),
                None => None,
            },
            BarrierKind::JointLimit { joint } => {
                if joint >= q.len() {
                    return Err(BarrierError::JointOutOfRange {
                        index: joint,
                        dof: q.len(),
                    });
                }
                let (lo, hi) = env
                    .joint_limits(joint)
                    .ok_or(BarrierError::JointOutOfRange {
                        index: joint,
                        dof: q.len(),
                    })?;
                let (h, dh) = eval_joint_limit(q[joint], lo, hi, self.gain);
                Some(BarrierEval {
                    h,
                    gradient: BarrierGradient::Joint {
                        index: joint,
                        value: dh,
                    },
                    time_derivative: 0.0,
                })
            }
            BarrierKind::PositionGoal => Some(eval_position_goal(
                x,
                &env.goal.position,
                &env.goal.velocity,
                self.gain,
            )?),
        })
    }
}

/// A moving point with its velocity.
#[derive(Debug, Clone, PartialEq)]
pub struct MovingPoint {
    pub position: DVector<f64>,
    pub velocity: DVector<f64>,
}

impl MovingPoint {
    pub fn fixed(position: DVector<f64>) -> Self {
        let n = position.len();
        Self {
            position,
            velocity: DVector::zeros(n),
        }
    }
}

/// Time-varying references the task stack is evaluated against.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskEnvironment {
    pub obstacle: Option<MovingPoint>,
    pub goal: MovingPoint,
    pub q_min: DVector<f64>,
    pub q_max: DVector<f64>,
}

impl TaskEnvironment {
    fn joint_limits(&self, joint: usize) -> Option<(f64, f64)> {
        Some((*self.q_min.get(joint)?, *self.q_max.get(joint)?))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum BarrierGradient {
    /// `∇ₓh` for task-space barriers.
    Task(DVector<f64>),
    /// `∂h/∂q_i` for a barrier on a single joint.
    Joint { index: usize, value: f64 },
}

/// `h`, its spatial gradient and its explicit time derivative.
#[derive(Debug, Clone, PartialEq)]
pub struct BarrierEval {
    pub h: f64,
    pub gradient: BarrierGradient,
    pub time_derivative: f64,
}

/// Obstacle barrier `h = ξ (d² − D_min²)` with `d` the Euclidean distance.
pub fn eval_obstacle(
    x: &DVector<f64>,
    obstacle: &DVector<f64>,
    obstacle_velocity: &DVector<f64>,
    min_distance: f64,
    gain: f64,
) -> Result<BarrierEval, BarrierError> {
    check_dims(x.len(), obstacle.len())?;
    check_dims(x.len(), obstacle_velocity.len())?;
    let mut diff = x - obstacle;
    let d = diff.norm();
    if d < MIN_DISTANCE {
        // Degenerate geometry: push along the first axis at the clamp distance.
        diff = DVector::zeros(x.len());
        diff[0] = MIN_DISTANCE;
    }
    let d2 = diff.norm_squared();
    Ok(BarrierEval {
        h: gain * (d2 - min_distance * min_distance),
        time_derivative: -2.0 * gain * diff.dot(obstacle_velocity),
        gradient: BarrierGradient::Task(diff * (2.0 * gain)),
    })
}

/// Joint-limit barrier `h = ξ (q⁺ − q)(q − q⁻)/(q⁺ − q⁻)` and `∂h/∂q`.
pub fn eval_joint_limit(q: f64, q_min: f64, q_max: f64, gain: f64) -> (f64, f64) {
    let range = q_max - q_min;
    let h = gain * (q_max - q) * (q - q_min) / range;
    let dh = gain * (q_max + q_min - 2.0 * q) / range;
    (h, dh)
}

/// Goal barrier `h = −ξ ‖x − x_goal‖²`, non-positive and zero only at the goal.
pub fn eval_position_goal(
    x: &DVector<f64>,
    goal: &DVector<f64>,
    goal_velocity: &DVector<f64>,
    gain: f64,
) -> Result<BarrierEval, BarrierError> {
    check_dims(x.len(), goal.len())?;
    check_dims(x.len(), goal_velocity.len())?;
    let err = x - goal;
    Ok(BarrierEval {
        h: -gain * err.norm_squared(),
        time_derivative: 2.0 * gain * err.dot(goal_velocity),
        gradient: BarrierGradient::Task(err * (-2.0 * gain)),
    })
}

fn check_dims(expected: usize, got: usize) -> Result<(), BarrierError> {
    if expected == got {
        Ok(())
    } else {
        Err(BarrierError::DimensionMismatch { expected, got })
    }
}

/// One inequality `coefficientsᵀ q̇ + δ[slack] ≥ bound` of the controller QP.
/// Rows without a slack are hard.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearConstraintRow {
    pub coefficients: DVector<f64>,
    pub slack: Option<usize>,
    pub bound: f64,
}

impl LinearConstraintRow {
    /// Signed satisfaction `aᵀq̇ + δ − b`; non-negative when the row holds.
    pub fn residual(&self, qdot: &DVector<f64>, slacks: &DVector<f64>) -> f64 {
        let relax = self.slack.map_or(0.0, |i| slacks[i]);
        self.coefficients.dot(qdot) + relax - self.bound
    }
}

/// Lowers an evaluated barrier to a QP row through the chain rule: task-space
/// gradients go through `Jᵀ`, joint-space gradients land on a single joint.
pub fn lower_to_row(
    eval: &BarrierEval,
    jacobian: &DMatrix<f64>,
    alpha: ClassK,
    slack: Option<usize>,
) -> Result<LinearConstraintRow, BarrierError> {
    let n = jacobian.ncols();
    let coefficients = match &eval.gradient {
        BarrierGradient::Task(grad) => {
            check_dims(jacobian.nrows(), grad.len())?;
            jacobian.tr_mul(grad)
        }
        BarrierGradient::Joint { index, value } => {
            if *index >= n {
                return Err(BarrierError::JointOutOfRange {
                    index: *index,
                    dof: n,
                });
            }
            let mut a = DVector::zeros(n);
            a[*index] = *value;
            a
        }
    };
    Ok(LinearConstraintRow {
        coefficients,
        slack,
        bound: -eval.time_derivative - alpha.apply(eval.h),
    })
}
