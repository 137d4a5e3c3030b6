//! Scenario files: robot, controller, admittance, tank, task stack and a
//! timed schedule of operator forces, obstacle motion, goal changes and
//! admittance parameter switches.
//!
//! Scenarios are JSON documents whose field names carry their units.

use std::path::Path;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::admittance::{AdmittanceParams, RepulsivePotential};
use crate::barrier::{BarrierKind, BarrierTask, ClassK, MovingPoint};
use crate::controller::ControllerConfig;
use crate::error::{ControllerError, ScenarioError};
use crate::kinematics::{ManipulatorModel, SpatialJoint};
use crate::qp::QpSettings;
use crate::tank::TankState;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Scripted,
    Live,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    pub duration_s: f64,
    #[serde(default)]
    pub mode: Mode,
    pub robot: RobotSpec,
    pub q0_rad: Vec<f64>,
    #[serde(default)]
    pub controller: ControllerSpec,
    pub admittance: AdmittanceSpec,
    #[serde(default)]
    pub tank: TankSpec,
    pub tasks: Vec<TaskSpec>,
    /// Goal position; defaults to the initial end-effector position.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub goal_m: Option<Vec<f64>>,
    /// Obstacle present from t = 0.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub obstacle_m: Option<Vec<f64>>,
    #[serde(default)]
    pub schedule: Vec<Event>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RobotSpec {
    Planar {
        link_lengths_m: Vec<f64>,
        q_min_rad: Vec<f64>,
        q_max_rad: Vec<f64>,
    },
    Spatial {
        joints: Vec<SpatialJoint>,
        tool_offset_m: [f64; 3],
        q_min_rad: Vec<f64>,
        q_max_rad: Vec<f64>,
    },
    /// Built-in six-joint arm with UR10e-like proportions.
    SixAxis,
}

impl RobotSpec {
    pub fn build(&self) -> Result<ManipulatorModel, ScenarioError> {
        let model = match self {
            RobotSpec::Planar {
                link_lengths_m,
                q_min_rad,
                q_max_rad,
            } => ManipulatorModel::planar(
                link_lengths_m.clone(),
                q_min_rad.clone(),
                q_max_rad.clone(),
            ),
            RobotSpec::Spatial {
                joints,
                tool_offset_m,
                q_min_rad,
                q_max_rad,
            } => ManipulatorModel::spatial(
                joints.clone(),
                *tool_offset_m,
                q_min_rad.clone(),
                q_max_rad.clone(),
            ),
            RobotSpec::SixAxis => Ok(ManipulatorModel::six_axis_arm()),
        };
        model.map_err(|e| ScenarioError::Controller(e.into()))
    }
}

fn default_dt() -> f64 {
    0.002
}
fn default_kappa() -> f64 {
    10.0
}
fn default_slack_weight() -> f64 {
    100.0
}
fn default_pinv_damping() -> f64 {
    1e-4
}
fn default_singularity_threshold() -> f64 {
    1e-2
}
fn default_tolerance() -> f64 {
    1e-8
}
fn default_max_iterations() -> usize {
    200
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerSpec {
    #[serde(default = "default_dt")]
    pub dt_s: f64,
    #[serde(default = "default_kappa")]
    pub kappa_per_n2: f64,
    #[serde(default = "default_slack_weight")]
    pub slack_weight: f64,
    #[serde(default = "default_pinv_damping")]
    pub pinv_damping: f64,
    #[serde(default = "default_singularity_threshold")]
    pub singularity_threshold: f64,
    #[serde(default = "default_tolerance")]
    pub solver_tolerance: f64,
    #[serde(default = "default_max_iterations")]
    pub solver_max_iterations: usize,
    #[serde(default = "default_true")]
    pub passivity_row: bool,
}

impl Default for ControllerSpec {
    fn default() -> Self {
        Self {
            dt_s: default_dt(),
            kappa_per_n2: default_kappa(),
            slack_weight: default_slack_weight(),
            pinv_damping: default_pinv_damping(),
            singularity_threshold: default_singularity_threshold(),
            solver_tolerance: default_tolerance(),
            solver_max_iterations: default_max_iterations(),
            passivity_row: true,
        }
    }
}

impl ControllerSpec {
    pub fn to_config(&self) -> ControllerConfig {
        ControllerConfig {
            kappa: self.kappa_per_n2,
            slack_weight: self.slack_weight,
            dt: self.dt_s,
            pinv_damping: self.pinv_damping,
            singularity_threshold: self.singularity_threshold,
            solver: QpSettings {
                tolerance: self.solver_tolerance,
                max_iterations: self.solver_max_iterations,
            },
            passivity_row: self.passivity_row,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdmittanceSpec {
    /// Diagonal translational inertia, one entry per task axis.
    pub inertia_kg: Vec<f64>,
    pub damping_ns_per_m: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub repulsive: Option<RepulsiveSpec>,
    /// Rotational parameters are carried for completeness; the task space is
    /// position only and they do not enter the dynamics.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rotational_inertia_kgm2: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rotational_damping_nms_per_rad: Option<Vec<f64>>,
}

fn default_k_rep() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RepulsiveSpec {
    #[serde(default = "default_k_rep")]
    pub gain_nm2: f64,
    pub activation_distance_m: f64,
}

fn default_initial_energy() -> f64 {
    1.0
}
fn default_floor() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TankSpec {
    #[serde(default = "default_initial_energy")]
    pub initial_energy_j: f64,
    #[serde(default = "default_floor")]
    pub floor_j: f64,
}

impl Default for TankSpec {
    fn default() -> Self {
        Self {
            initial_energy_j: default_initial_energy(),
            floor_j: default_floor(),
        }
    }
}

fn default_obstacle_gain() -> f64 {
    10.0
}
fn default_d_min() -> f64 {
    0.25
}
fn default_limit_gain() -> f64 {
    1.0
}
fn default_goal_gain() -> f64 {
    5.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TaskSpec {
    Obstacle {
        #[serde(default = "default_obstacle_gain")]
        gain: f64,
        #[serde(default = "default_d_min")]
        d_min_m: f64,
        #[serde(default = "default_true")]
        slacked: bool,
        #[serde(default)]
        alpha: ClassK,
    },
    /// One barrier per listed joint (all joints when omitted). Hard by default.
    JointLimits {
        #[serde(default = "default_limit_gain")]
        gain: f64,
        #[serde(default)]
        slacked: bool,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        joints: Option<Vec<usize>>,
        #[serde(default)]
        alpha: ClassK,
    },
    PositionGoal {
        #[serde(default = "default_goal_gain")]
        gain: f64,
        #[serde(default = "default_true")]
        slacked: bool,
        #[serde(default)]
        alpha: ClassK,
    },
}

fn default_stiffness() -> f64 {
    50.0
}
fn default_cap() -> f64 {
    30.0
}
fn default_hold() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub t_s: f64,
    pub position_m: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Event {
    /// Constant wrench over `[start_s, end_s)`, with optional linear ramps at
    /// both edges.
    Force {
        start_s: f64,
        end_s: f64,
        force_n: Vec<f64>,
        #[serde(default)]
        ramp_s: f64,
    },
    /// Operator pulling the end-effector toward `target_m` through a capped
    /// virtual spring, optionally with hand damping on the end-effector
    /// velocity.
    SpringForce {
        start_s: f64,
        end_s: f64,
        target_m: Vec<f64>,
        #[serde(default = "default_stiffness")]
        stiffness_n_per_m: f64,
        #[serde(default = "default_cap")]
        cap_n: f64,
        #[serde(default)]
        damping_ns_per_m: f64,
    },
    /// Piecewise-constant random force, redrawn every `hold_s`, each
    /// component uniform in `[-max_n, max_n]`.
    RandomForce {
        start_s: f64,
        end_s: f64,
        max_n: f64,
        #[serde(default = "default_hold")]
        hold_s: f64,
        seed: u64,
    },
    /// Piecewise-linear obstacle motion; the obstacle rests at the last
    /// waypoint afterwards.
    ObstaclePath {
        waypoints: Vec<Waypoint>,
    },
    ObstaclePlace {
        t_s: f64,
        position_m: Vec<f64>,
    },
    ObstacleRemove {
        t_s: f64,
    },
    Goal {
        t_s: f64,
        position_m: Vec<f64>,
    },
    /// Switches admittance parameters from `t_s` on.
    Admittance {
        t_s: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        inertia_kg: Option<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        damping_ns_per_m: Option<Vec<f64>>,
    },
}

impl Event {
    /// Time from which the event affects the run.
    fn start(&self) -> f64 {
        match self {
            Event::Force { start_s, .. }
            | Event::SpringForce { start_s, .. }
            | Event::RandomForce { start_s, .. } => *start_s,
            Event::ObstaclePath { waypoints } => waypoints.first().map_or(0.0, |w| w.t_s),
            Event::ObstaclePlace { t_s, .. }
            | Event::ObstacleRemove { t_s }
            | Event::Goal { t_s, .. }
            | Event::Admittance { t_s, .. } => *t_s,
        }
    }
}

/// Capped spring law `F = k (target − x)`, saturated at `cap` newtons.
pub fn spring_force(
    target: &DVector<f64>,
    x: &DVector<f64>,
    stiffness: f64,
    cap: f64,
) -> DVector<f64> {
    let f = (target - x) * stiffness;
    let norm = f.norm();
    if norm > cap && norm > 0.0 {
        f * (cap / norm)
    } else {
        f
    }
}

fn ramp_factor(t: f64, start: f64, end: f64, ramp: f64) -> f64 {
    if t < start || t >= end {
        return 0.0;
    }
    if ramp <= 0.0 {
        return 1.0;
    }
    ((t - start) / ramp).min((end - t) / ramp).clamp(0.0, 1.0)
}

fn random_segment(seed: u64, segment: u64, dim: usize, max: f64) -> DVector<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ segment.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    DVector::from_fn(dim, |_, _| rng.random_range(-max..=max))
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn dt(&self) -> f64 {
        self.controller.dt_s
    }

    /// Number of control cycles in a scripted run.
    pub fn cycles(&self) -> usize {
        (self.duration_s / self.controller.dt_s).round() as usize
    }

    pub fn build_model(&self) -> Result<ManipulatorModel, ScenarioError> {
        self.robot.build()
    }

    pub fn build_tasks(&self, dof: usize) -> Result<Vec<BarrierTask>, ScenarioError> {
        let mut tasks = Vec::new();
        let wrap = |e| ScenarioError::Controller(ControllerError::Barrier(e));
        for spec in &self.tasks {
            match spec {
                TaskSpec::Obstacle {
                    gain,
                    d_min_m,
                    slacked,
                    alpha,
                } => tasks.push(
                    BarrierTask::new(
                        BarrierKind::ObstacleAvoidance {
                            min_distance: *d_min_m,
                        },
                        *gain,
                        *slacked,
                    )
                    .and_then(|t| t.with_alpha(*alpha))
                    .map_err(wrap)?,
                ),
                TaskSpec::JointLimits {
                    gain,
                    slacked,
                    joints,
                    alpha,
                } => {
                    let joints = joints.clone().unwrap_or_else(|| (0..dof).collect());
                    for joint in joints {
                        if joint >= dof {
                            return Err(ScenarioError::Invalid(format!(
                                "joint limit task references joint {joint} of a {dof}-joint robot"
                            )));
                        }
                        tasks.push(
                            BarrierTask::new(BarrierKind::JointLimit { joint }, *gain, *slacked)
                                .and_then(|t| t.with_alpha(*alpha))
                                .map_err(wrap)?,
                        );
                    }
                }
                TaskSpec::PositionGoal {
                    gain,
                    slacked,
                    alpha,
                } => tasks.push(
                    BarrierTask::new(BarrierKind::PositionGoal, *gain, *slacked)
                        .and_then(|t| t.with_alpha(*alpha))
                        .map_err(wrap)?,
                ),
            }
        }
        Ok(tasks)
    }

    /// Checks the whole scenario before any cycle runs.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let invalid = |msg: String| Err(ScenarioError::Invalid(msg));
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            return invalid(format!(
                "duration must be positive, got {}",
                self.duration_s
            ));
        }
        self.controller.to_config().validate()?;
        let model = self.build_model()?;
        let (n, m) = (model.dof(), model.task_dim());
        if self.q0_rad.len() != n || !self.q0_rad.iter().all(|q| q.is_finite()) {
            return invalid(format!("q0_rad must hold {n} finite joint positions"));
        }
        for (i, q) in self.q0_rad.iter().enumerate() {
            if *q < model.q_min()[i] || *q > model.q_max()[i] {
                return invalid(format!("q0_rad[{i}] = {q} lies outside the joint limits"));
            }
        }
        self.build_tasks(n)?;
        TankState::new(self.tank.initial_energy_j, self.tank.floor_j)
            .map_err(|e| ScenarioError::Controller(e.into()))?;
        self.base_admittance(m)?;

        let check_vec = |what: &str, v: &[f64]| -> Result<(), ScenarioError> {
            if v.len() != m || !v.iter().all(|x| x.is_finite()) {
                return Err(ScenarioError::Invalid(format!(
                    "{what} must hold {m} finite coordinates"
                )));
            }
            Ok(())
        };
        let check_time = |what: &str, t: f64| -> Result<(), ScenarioError> {
            if !(t.is_finite() && (0.0..=self.duration_s).contains(&t)) {
                return Err(ScenarioError::Invalid(format!(
                    "{what} at t = {t} s lies outside [0, {}] s",
                    self.duration_s
                )));
            }
            Ok(())
        };
        if let Some(g) = &self.goal_m {
            check_vec("goal_m", g)?;
        }
        if let Some(o) = &self.obstacle_m {
            check_vec("obstacle_m", o)?;
        }
        for event in &self.schedule {
            match event {
                Event::Force {
                    start_s,
                    end_s,
                    force_n,
                    ramp_s,
                } => {
                    check_time("force start", *start_s)?;
                    check_time("force end", *end_s)?;
                    check_vec("force_n", force_n)?;
                    if end_s < start_s || !(*ramp_s >= 0.0) {
                        return invalid("force segment needs start ≤ end and ramp ≥ 0".into());
                    }
                }
                Event::SpringForce {
                    start_s,
                    end_s,
                    target_m,
                    stiffness_n_per_m,
                    cap_n,
                    damping_ns_per_m,
                } => {
                    check_time("spring start", *start_s)?;
                    check_time("spring end", *end_s)?;
                    check_vec("target_m", target_m)?;
                    if end_s < start_s
                        || !(*stiffness_n_per_m > 0.0)
                        || !(*cap_n > 0.0)
                        || !(*damping_ns_per_m >= 0.0)
                    {
                        return invalid(
                            "spring force needs start ≤ end, positive stiffness and cap, \
                             non-negative damping"
                                .into(),
                        );
                    }
                }
                Event::RandomForce {
                    start_s,
                    end_s,
                    max_n,
                    hold_s,
                    ..
                } => {
                    check_time("random force start", *start_s)?;
                    check_time("random force end", *end_s)?;
                    if end_s < start_s || !(*max_n > 0.0) || !(*hold_s > 0.0) {
                        return invalid(
                            "random force needs start ≤ end and positive magnitude and hold".into(),
                        );
                    }
                }
                Event::ObstaclePath { waypoints } => {
                    if waypoints.is_empty() {
                        return invalid("obstacle path needs at least one waypoint".into());
                    }
                    for (k, w) in waypoints.iter().enumerate() {
                        check_time("waypoint", w.t_s)?;
                        check_vec("waypoint position_m", &w.position_m)?;
                        if k > 0 && !(w.t_s > waypoints[k - 1].t_s) {
                            return invalid("waypoint times must increase strictly".into());
                        }
                    }
                }
                Event::ObstaclePlace { t_s, position_m } | Event::Goal { t_s, position_m } => {
                    check_time("event", *t_s)?;
                    check_vec("position_m", position_m)?;
                }
                Event::ObstacleRemove { t_s } => check_time("obstacle removal", *t_s)?,
                Event::Admittance {
                    t_s,
                    inertia_kg,
                    damping_ns_per_m,
                } => {
                    check_time("admittance switch", *t_s)?;
                    let mut params = self.base_admittance(m)?;
                    if let Some(i) = inertia_kg {
                        params
                            .set_inertia(DVector::from_column_slice(i))
                            .map_err(|e| ScenarioError::Controller(e.into()))?;
                    }
                    if let Some(d) = damping_ns_per_m {
                        params
                            .set_damping(DVector::from_column_slice(d))
                            .map_err(|e| ScenarioError::Controller(e.into()))?;
                    }
                }
            }
        }
        Ok(())
    }

    /// Admittance parameters at t = 0, without the potential.
    pub fn base_admittance(&self, dim: usize) -> Result<AdmittanceParams, ScenarioError> {
        let a = &self.admittance;
        if a.inertia_kg.len() != dim || a.damping_ns_per_m.len() != dim {
            return Err(ScenarioError::Invalid(format!(
                "admittance inertia and damping need {dim} entries"
            )));
        }
        if let Some(r) = &a.repulsive {
            RepulsivePotential::new(r.gain_nm2, r.activation_distance_m, DVector::zeros(dim))
                .map_err(|e| ScenarioError::Controller(e.into()))?;
            if let Some(d_min) = self.tasks.iter().find_map(|t| match t {
                TaskSpec::Obstacle { d_min_m, .. } => Some(*d_min_m),
                _ => None,
            }) {
                if r.activation_distance_m <= d_min {
                    return Err(ScenarioError::Invalid(format!(
                        "activation distance {} m must exceed d_min {} m",
                        r.activation_distance_m, d_min
                    )));
                }
            }
        }
        AdmittanceParams::new(
            DVector::from_column_slice(&a.inertia_kg),
            DVector::from_column_slice(&a.damping_ns_per_m),
            None,
        )
        .map_err(|e| ScenarioError::Controller(e.into()))
    }

    /// Scheduled external force at time `t` for an end-effector at `x`
    /// moving with velocity `xdot`.
    pub fn force_at(&self, t: f64, x: &DVector<f64>, xdot: &DVector<f64>) -> DVector<f64> {
        let mut total = DVector::zeros(x.len());
        for event in &self.schedule {
            match event {
                Event::Force {
                    start_s,
                    end_s,
                    force_n,
                    ramp_s,
                } => {
                    let k = ramp_factor(t, *start_s, *end_s, *ramp_s);
                    if k > 0.0 {
                        total += DVector::from_column_slice(force_n) * k;
                    }
                }
                Event::SpringForce {
                    start_s,
                    end_s,
                    target_m,
                    stiffness_n_per_m,
                    cap_n,
                    damping_ns_per_m,
                } => {
                    if t >= *start_s && t < *end_s {
                        let target = DVector::from_column_slice(target_m);
                        total += spring_force(&target, x, *stiffness_n_per_m, *cap_n);
                        total -= xdot * *damping_ns_per_m;
                    }
                }
                Event::RandomForce {
                    start_s,
                    end_s,
                    max_n,
                    hold_s,
                    seed,
                } if t >= *start_s && t < *end_s => {
                    let segment = ((t - start_s) / hold_s).floor() as u64;
                    total += random_segment(*seed, segment, x.len(), *max_n);
                }
                _ => {}
            }
        }
        total
    }

    /// Obstacle position and velocity at time `t`, `None` when absent.
    pub fn obstacle_at(&self, t: f64) -> Option<MovingPoint> {
        let mut current = self
            .obstacle_m
            .as_ref()
            .map(|o| MovingPoint::fixed(DVector::from_column_slice(o)));
        let mut events: Vec<&Event> = self
            .schedule
            .iter()
            .filter(|e| {
                matches!(
                    e,
                    Event::ObstaclePath { .. }
                        | Event::ObstaclePlace { .. }
                        | Event::ObstacleRemove { .. }
                ) && e.start() <= t
            })
            .collect();
        // Stable: simultaneous events apply in file order.
        events.sort_by(|a, b| a.start().total_cmp(&b.start()));
        for event in events {
            current = match event {
                Event::ObstaclePlace { position_m, .. } => {
                    Some(MovingPoint::fixed(DVector::from_column_slice(position_m)))
                }
                Event::ObstacleRemove { .. } => None,
                Event::ObstaclePath { waypoints } => Some(interpolate(waypoints, t)),
                _ => unreachable!(),
            };
        }
        current
    }

    /// Goal at time `t`; `default` is used before any goal event.
    pub fn goal_at(&self, t: f64, default: &DVector<f64>) -> MovingPoint {
        let mut goal = self
            .goal_m
            .as_ref()
            .map_or_else(|| default.clone(), |g| DVector::from_column_slice(g));
        let mut latest = f64::NEG_INFINITY;
        for event in &self.schedule {
            if let Event::Goal { t_s, position_m } = event {
                if *t_s <= t && *t_s >= latest {
                    latest = *t_s;
                    goal = DVector::from_column_slice(position_m);
                }
            }
        }
        MovingPoint::fixed(goal)
    }

    /// Applies every admittance switch scheduled at or before `t` to `params`.
    pub fn apply_admittance_switches(
        &self,
        t: f64,
        params: &mut AdmittanceParams,
    ) -> Result<(), ScenarioError> {
        let mut switches: Vec<&Event> = self
            .schedule
            .iter()
            .filter(|e| matches!(e, Event::Admittance { t_s, .. } if *t_s <= t))
            .collect();
        switches.sort_by(|a, b| a.start().total_cmp(&b.start()));
        for event in switches {
            if let Event::Admittance {
                inertia_kg,
                damping_ns_per_m,
                ..
            } = event
            {
                if let Some(i) = inertia_kg {
                    params
                        .set_inertia(DVector::from_column_slice(i))
                        .map_err(|e| ScenarioError::Controller(e.into()))?;
                }
                if let Some(d) = damping_ns_per_m {
                    params
                        .set_damping(DVector::from_column_slice(d))
                        .map_err(|e| ScenarioError::Controller(e.into()))?;
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
impl Scenario {
    fn force_at_rest(&self, t: f64, x: &DVector<f64>) -> DVector<f64> {
        self.force_at(t, x, &DVector::zeros(x.len()))
    }
}

fn interpolate(waypoints: &[Waypoint], t: f64) -> MovingPoint {
    let last = waypoints.last().expect("validated non-empty");
    if t >= last.t_s || waypoints.len() == 1 {
        return MovingPoint::fixed(DVector::from_column_slice(&last.position_m));
    }
    let k = waypoints.windows(2).position(|w| t < w[1].t_s).unwrap_or(0);
    let (a, b) = (&waypoints[k], &waypoints[k + 1]);
    let pa = DVector::from_column_slice(&a.position_m);
    let pb = DVector::from_column_slice(&b.position_m);
    let span = b.t_s - a.t_s;
    let s = ((t - a.t_s) / span).clamp(0.0, 1.0);
    MovingPoint {
        position: &pa + (&pb - &pa) * s,
        velocity: (pb - pa) / span,
    }
}
