//! Velocity-controlled serial manipulator: forward kinematics, Jacobian,
//! damped pseudo-inverse and joint integration.
//!
//! Two chain types are supported. A planar arm of revolute joints maps to a
//! 2-D end-effector position; a spatial chain described by joint axes and
//! offsets maps to a 3-D position. Orientation is not part of the task space.

use nalgebra::{DMatrix, DVector, Rotation3, Unit, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::KinematicsError;

/// One revolute joint of a spatial chain.
///
/// `offset` is the translation from the previous joint frame to this joint,
/// expressed in the previous frame. The joint then rotates about `axis`
/// (local frame).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialJoint {
    pub axis: [f64; 3],
    pub offset_m: [f64; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub enum Chain {
    /// Planar revolute arm with the given link lengths (m).
    Planar { link_lengths: Vec<f64> },
    /// Spatial revolute chain with a tool offset in the last joint frame.
    Spatial {
        joints: Vec<SpatialJoint>,
        tool_offset: Vector3<f64>,
    },
}

/// Kinematic description of the robot together with its joint limits.
#[derive(Debug, Clone, PartialEq)]
pub struct ManipulatorModel {
    chain: Chain,
    q_min: DVector<f64>,
    q_max: DVector<f64>,
}

impl ManipulatorModel {
    pub fn planar(
        link_lengths: Vec<f64>,
        q_min: Vec<f64>,
        q_max: Vec<f64>,
    ) -> Result<Self, KinematicsError> {
        if link_lengths.iter().any(|l| !l.is_finite() || *l <= 0.0) {
            return Err(KinematicsError::InvalidModel(
                "link lengths must be finite and positive".into(),
            ));
        }
        Self::new(Chain::Planar { link_lengths }, q_min, q_max)
    }

    pub fn spatial(
        joints: Vec<SpatialJoint>,
        tool_offset: [f64; 3],
        q_min: Vec<f64>,
        q_max: Vec<f64>,
    ) -> Result<Self, KinematicsError> {
        for j in &joints {
            let axis = Vector3::from(j.axis);
            if !axis.iter().all(|v| v.is_finite()) || axis.norm() < 1e-12 {
                return Err(KinematicsError::InvalidModel(
                    "joint axis must be a finite non-zero vector".into(),
                ));
            }
            if !j.offset_m.iter().all(|v| v.is_finite()) {
                return Err(KinematicsError::InvalidModel(
                    "non-finite joint offset".into(),
                ));
            }
        }
        Self::new(
            Chain::Spatial {
                joints,
                tool_offset: Vector3::from(tool_offset),
            },
            q_min,
            q_max,
        )
    }

    fn new(chain: Chain, q_min: Vec<f64>, q_max: Vec<f64>) -> Result<Self, KinematicsError> {
        let n = match &chain {
            Chain::Planar { link_lengths } => link_lengths.len(),
            Chain::Spatial { joints, .. } => joints.len(),
        };
        if n == 0 {
            return Err(KinematicsError::InvalidModel(
                "at least one joint required".into(),
            ));
        }
        if q_min.len() != n || q_max.len() != n {
            return Err(KinematicsError::InvalidModel(format!(
                "expected {n} joint limits, got {} lower and {} upper",
                q_min.len(),
                q_max.len()
            )));
        }
        for (i, (lo, hi)) in q_min.iter().zip(&q_max).enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(KinematicsError::InvalidModel(format!(
                    "joint {i}: limits must satisfy q_min < q_max (got {lo}, {hi})"
                )));
            }
        }
        Ok(Self {
            chain,
            q_min: DVector::from_vec(q_min),
            q_max: DVector::from_vec(q_max),
        })
    }

    /// A six-joint arm with UR10e-like proportions. Joint limits are ±2π
    /// except the elbow, which is limited to ±π.
    pub fn six_axis_arm() -> Self {
        let joints = vec![
            SpatialJoint {
                axis: [0.0, 0.0, 1.0],
                offset_m: [0.0, 0.0, 0.181],
            },
            SpatialJoint {
                axis: [0.0, 1.0, 0.0],
                offset_m: [0.0, 0.176, 0.0],
            },
            SpatialJoint {
                axis: [0.0, 1.0, 0.0],
                offset_m: [0.0, -0.137, 0.613],
            },
            SpatialJoint {
                axis: [0.0, 1.0, 0.0],
                offset_m: [0.0, 0.0, 0.572],
            },
            SpatialJoint {
                axis: [0.0, 0.0, 1.0],
                offset_m: [0.0, 0.135, 0.0],
            },
            SpatialJoint {
                axis: [0.0, 1.0, 0.0],
                offset_m: [0.0, 0.0, 0.120],
            },
        ];
        let tau = std::f64::consts::TAU;
        let pi = std::f64::consts::PI;
        Self::spatial(
            joints,
            [0.0, 0.117, 0.0],
            vec![-tau, -tau, -pi, -tau, -tau, -tau],
            vec![tau, tau, pi, tau, tau, tau],
        )
        .expect("built-in model is valid")
    }

    pub fn chain(&self) -> &Chain {
        &self.chain
    }

    /// Joint count.
    pub fn dof(&self) -> usize {
        self.q_min.len()
    }

    /// Task-space dimension: 2 for planar arms, 3 for spatial chains.
    pub fn task_dim(&self) -> usize {
        match self.chain {
            Chain::Planar { .. } => 2,
            Chain::Spatial { .. } => 3,
        }
    }

    pub fn q_min(&self) -> &DVector<f64> {
        &self.q_min
    }

    pub fn q_max(&self) -> &DVector<f64> {
        &self.q_max
    }

    fn check_q(&self, q: &DVector<f64>) -> Result<(), KinematicsError> {
        if q.len() != self.dof() {
            return Err(KinematicsError::DimensionMismatch {
                expected: self.dof(),
                got: q.len(),
            });
        }
        if !q.iter().all(|v| v.is_finite()) {
            return Err(KinematicsError::NonFinite);
        }
        Ok(())
    }

    /// End-effector position.
    pub fn forward_kinematics(&self, q: &DVector<f64>) -> Result<DVector<f64>, KinematicsError> {
        self.check_q(q)?;
        Ok(match &self.chain {
            Chain::Planar { link_lengths } => {
                let (mut x, mut y, mut theta) = (0.0, 0.0, 0.0);
                for (l, qi) in link_lengths.iter().zip(q.iter()) {
                    theta += qi;
                    x += l * theta.cos();
                    y += l * theta.sin();
                }
                DVector::from_vec(vec![x, y])
            }
            Chain::Spatial { .. } => {
                let (_, tip) = self.spatial_frames(q);
                DVector::from_column_slice(tip.as_slice())
            }
        })
    }

    /// Position Jacobian, `task_dim × dof`.
    pub fn jacobian(&self, q: &DVector<f64>) -> Result<DMatrix<f64>, KinematicsError> {
        self.check_q(q)?;
        let n = self.dof();
        Ok(match &self.chain {
            Chain::Planar { link_lengths } => {
                // Column i sums the contribution of every link distal to joint i.
                let mut thetas = Vec::with_capacity(n);
                let mut acc = 0.0;
                for qi in q.iter() {
                    acc += qi;
                    thetas.push(acc);
                }
                let mut jac = DMatrix::zeros(2, n);
                for i in 0..n {
                    for k in i..n {
                        jac[(0, i)] -= link_lengths[k] * thetas[k].sin();
                        jac[(1, i)] += link_lengths[k] * thetas[k].cos();
                    }
                }
                jac
            }
            Chain::Spatial { .. } => {
                let (axes, tip) = self.spatial_frames(q);
                let mut jac = DMatrix::zeros(3, n);
                for (i, (origin, axis)) in axes.iter().enumerate() {
                    let col = axis.cross(&(tip - origin));
                    jac.fixed_view_mut::<3, 1>(0, i).copy_from(&col);
                }
                jac
            }
        })
    }

    /// World-frame joint origins and axes, plus the tool point.
    fn spatial_frames(&self, q: &DVector<f64>) -> (Vec<JointFrame>, Vector3<f64>) {
        let Chain::Spatial {
            joints,
            tool_offset,
        } = &self.chain
        else {
            unreachable!("spatial_frames called on a planar chain")
        };
        let mut rot = Rotation3::identity();
        let mut pos = Vector3::zeros();
        let mut axes = Vec::with_capacity(joints.len());
        for (joint, qi) in joints.iter().zip(q.iter()) {
            pos += rot * Vector3::from(joint.offset_m);
            let local = Unit::new_normalize(Vector3::from(joint.axis));
            axes.push((pos, rot * local.into_inner()));
            rot *= Rotation3::from_axis_angle(&local, *qi);
        }
        (axes, pos + rot * tool_offset)
    }
}

/// Origin and axis of a joint in the world frame.
type JointFrame = (Vector3<f64>, Vector3<f64>);

/// Damped least-squares inverse `Jᵀ(JJᵀ + λ²I)⁻¹`.
///
/// With `damping == 0` this is the exact Moore–Penrose pseudo-inverse of a
/// full-row-rank `J`; a singular `JJᵀ` is reported as rank deficiency.
pub fn pseudo_inverse(jac: &DMatrix<f64>, damping: f64) -> Result<DMatrix<f64>, KinematicsError> {
    if !jac.iter().all(|v| v.is_finite()) || !damping.is_finite() {
        return Err(KinematicsError::NonFinite);
    }
    if damping < 0.0 {
        return Err(KinematicsError::InvalidModel(
            "damping must be non-negative".into(),
        ));
    }
    let m = jac.nrows();
    let mut gram = jac * jac.transpose();
    for i in 0..m {
        gram[(i, i)] += damping * damping;
    }
    let chol = gram.cholesky().ok_or(KinematicsError::RankDeficient)?;
    // Cholesky succeeds on nearly singular Gram matrices too; reject those
    // explicitly when undamped. The factor's diagonal scales like the singular
    // values of `J`, and rounding leaves about √ε on an exactly singular one.
    if damping == 0.0 {
        let diag = chol.l_dirty().diagonal();
        let max = diag.amax();
        if diag.iter().any(|d| *d <= max * 1e-7) {
            return Err(KinematicsError::RankDeficient);
        }
    }
    Ok(chol.solve(jac).transpose())
}

/// Damping schedule that only activates near singularities: zero while the
/// smallest singular value of `J` is above `threshold`, growing smoothly to
/// `max_damping` as it approaches zero.
pub fn singularity_damping(jac: &DMatrix<f64>, max_damping: f64, threshold: f64) -> f64 {
    if max_damping <= 0.0 || threshold <= 0.0 {
        return 0.0;
    }
    let sigma_min = jac
        .singular_values()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    if sigma_min >= threshold {
        0.0
    } else {
        let ratio = sigma_min / threshold;
        max_damping * (1.0 - ratio * ratio).sqrt()
    }
}

/// Joint positions together with the last commanded joint velocity.
#[derive(Debug, Clone, PartialEq)]
pub struct JointState {
    pub q: DVector<f64>,
    pub u: DVector<f64>,
}

impl JointState {
    pub fn at_rest(q: DVector<f64>) -> Self {
        let n = q.len();
        Self {
            q,
            u: DVector::zeros(n),
        }
    }
}

/// Explicit Euler step of the velocity-controlled joints.
pub fn integrate_joints(
    model: &ManipulatorModel,
    state: &JointState,
    u: &DVector<f64>,
    dt: f64,
) -> Result<JointState, KinematicsError> {
    model.check_q(&state.q)?;
    if u.len() != model.dof() {
        return Err(KinematicsError::DimensionMismatch {
            expected: model.dof(),
            got: u.len(),
        });
    }
    if !(dt > 0.0) {
        return Err(KinematicsError::InvalidTimeStep(dt));
    }
    Ok(JointState {
        q: &state.q + u * dt,
        u: u.clone(),
    })
}
