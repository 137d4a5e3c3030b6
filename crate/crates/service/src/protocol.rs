//! Wire format: JSON text frames. Every server frame carries `type`, `seq`
//! and `t_sim`. Client frames may also carry `seq` and `t_sim`; the server
//! ignores them except for echoing `seq` in error frames.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Commands a client may send.
#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Command {
    /// Operator force in newtons. All zeros releases the robot.
    Force {
        fx: f64,
        fy: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        fz: Option<f64>,
    },
    Obstacle {
        x: f64,
        y: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        z: Option<f64>,
    },
    ObstacleRemove,
    Goal {
        x: f64,
        y: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        z: Option<f64>,
    },
    Pause,
    Resume,
    Reset,
    /// Admittance overrides, one entry per task axis.
    Params {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        inertia_kg: Option<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        damping_ns_per_m: Option<Vec<f64>>,
    },
}

/// A client frame that could not be accepted.
#[derive(Debug, Clone, PartialEq)]
pub struct Rejection {
    pub seq: Option<u64>,
    pub message: String,
}

/// Parses a client text frame. The envelope fields `seq` and `t_sim` are
/// stripped before the command is decoded.
pub fn parse_command(text: &str) -> Result<Command, Rejection> {
    let mut value: Value = serde_json::from_str(text).map_err(|e| Rejection {
        seq: None,
        message: format!("invalid JSON: {e}"),
    })?;
    let Some(obj) = value.as_object_mut() else {
        return Err(Rejection {
            seq: None,
            message: "expected a JSON object".into(),
        });
    };
    let seq = obj.remove("seq").and_then(|s| s.as_u64());
    obj.remove("t_sim");
    serde_json::from_value(value).map_err(|e| Rejection {
        seq,
        message: e.to_string(),
    })
}

fn point(x: f64, y: f64, z: Option<f64>, dim: usize, what: &str) -> Result<DVector<f64>, String> {
    let v = match (dim, z) {
        (2, None) => vec![x, y],
        (3, Some(z)) => vec![x, y, z],
        (2, Some(_)) => return Err(format!("{what}: planar robot takes x and y only")),
        (3, None) => return Err(format!("{what}: spatial robot needs x, y and z")),
        _ => return Err(format!("{what}: unsupported task dimension {dim}")),
    };
    Ok(DVector::from_vec(v))
}

fn axes(
    values: &Option<Vec<f64>>,
    dim: usize,
    what: &str,
    positive: bool,
) -> Result<Option<DVector<f64>>, String> {
    let Some(values) = values else {
        return Ok(None);
    };
    if values.len() != dim {
        return Err(format!(
            "{what}: expected {dim} entries, got {}",
            values.len()
        ));
    }
    let ok = values
        .iter()
        .all(|v| v.is_finite() && if positive { *v > 0.0 } else { *v >= 0.0 });
    if !ok {
        let bound = if positive { "positive" } else { "non-negative" };
        return Err(format!("{what}: entries must be finite and {bound}"));
    }
    Ok(Some(DVector::from_column_slice(values)))
}

/// A command checked against the robot's task dimension.
#[derive(Debug, Clone, PartialEq)]
pub enum Input {
    Force(DVector<f64>),
    Obstacle(Option<DVector<f64>>),
    Goal(DVector<f64>),
    Pause,
    Resume,
    Reset,
    Params {
        inertia: Option<DVector<f64>>,
        damping: Option<DVector<f64>>,
    },
}

impl Command {
    pub fn validate(&self, task_dim: usize) -> Result<Input, String> {
        Ok(match self {
            Command::Force { fx, fy, fz } => Input::Force(point(*fx, *fy, *fz, task_dim, "force")?),
            Command::Obstacle { x, y, z } => {
                Input::Obstacle(Some(point(*x, *y, *z, task_dim, "obstacle")?))
            }
            Command::ObstacleRemove => Input::Obstacle(None),
            Command::Goal { x, y, z } => Input::Goal(point(*x, *y, *z, task_dim, "goal")?),
            Command::Pause => Input::Pause,
            Command::Resume => Input::Resume,
            Command::Reset => Input::Reset,
            Command::Params {
                inertia_kg,
                damping_ns_per_m,
            } => {
                let inertia = axes(inertia_kg, task_dim, "inertia_kg", true)?;
                let damping = axes(damping_ns_per_m, task_dim, "damping_ns_per_m", false)?;
                if inertia.is_none() && damping.is_none() {
                    return Err("params: nothing to change".into());
                }
                Input::Params { inertia, damping }
            }
        })
    }
}

/// Static description sent once on connect.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hello {
    pub scenario: String,
    pub dof: usize,
    pub task_dim: usize,
    pub dt: f64,
    pub task_labels: Vec<String>,
    pub tank_floor: f64,
    /// Planar link lengths, for drawing the arm.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub link_lengths_m: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d_min_m: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub activation_distance_m: Option<f64>,
    pub broadcast_interval_ms: f64,
}

/// Latest state of the loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub cycle: u64,
    pub paused: bool,
    pub finished: bool,
    pub q: Vec<f64>,
    pub x: Vec<f64>,
    pub f_ext: Vec<f64>,
    pub xdot_a: Vec<f64>,
    pub xdot_opt: Vec<f64>,
    pub qdot: Vec<f64>,
    pub tank_energy: f64,
    pub tank_floor: f64,
    pub e_acc: f64,
    pub h: Vec<Option<f64>>,
    pub delta: Vec<f64>,
    pub obstacle: Option<Vec<f64>>,
    pub goal: Vec<f64>,
    pub obstacle_distance: Option<f64>,
    pub goal_error: f64,
    pub faults: u32,
    pub solve_time_us: f64,
    pub cycle_time_us: f64,
    /// Cycles that finished after their deadline.
    pub overruns: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Body {
    Hello(Hello),
    State(Box<State>),
    Error {
        message: String,
        #[serde(skip_serializing_if = "Option::is_none")]
        in_reply_to: Option<u64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub seq: u64,
    pub t_sim: f64,
    #[serde(flatten)]
    pub body: Body,
}

impl Frame {
    pub fn to_text(&self) -> String {
        serde_json::to_string(self).expect("frames serialize")
    }
}
