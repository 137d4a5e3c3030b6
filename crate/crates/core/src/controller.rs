//! Per-cycle optimizer: tracks the desired admittance in joint space while
//! honoring the barrier task stack (each relaxed by its own slack) and the
//! hard tank-floor constraint.
//!
//! ```text
//! minimize   ‖q̇ − q̇_a‖²_W + l ‖δ‖²          W = (1 + κ‖F_e‖²) I
//! subject to ∂h_m/∂t + ∇h_m J q̇ + α(h_m) ≥ −δ_m
//!            Δt F_eᵀ J q̇ ≥ −(T − ε̲)
//! ```

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};

use crate::barrier::{lower_to_row, BarrierTask, LinearConstraintRow, TaskEnvironment};
use crate::error::ControllerError;
use crate::kinematics::{pseudo_inverse, singularity_damping};
use crate::qp::{self, QpProblem, QpSettings, QpStatus};
use crate::tank::TankState;

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerConfig {
    /// Force weighting gain κ (1/N²).
    pub kappa: f64,
    /// Slack penalty l.
    pub slack_weight: f64,
    /// Cycle period (s).
    pub dt: f64,
    /// Largest pseudo-inverse damping, reached at an exact singularity.
    pub pinv_damping: f64,
    /// Smallest singular value of J below which damping kicks in.
    pub singularity_threshold: f64,
    pub solver: QpSettings,
    /// Include the tank-floor row. Only disabled to compare against the
    /// unconstrained-energy solution.
    pub passivity_row: bool,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            kappa: 10.0,
            slack_weight: 100.0,
            dt: 0.002,
            pinv_damping: 1e-4,
            singularity_threshold: 1e-2,
            solver: QpSettings::default(),
            passivity_row: true,
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<(), ControllerError> {
        let bad = |msg: &str| Err(ControllerError::InvalidConfig(msg.to_string()));
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return bad("dt must be positive");
        }
        if !(self.slack_weight.is_finite() && self.slack_weight > 0.0) {
            return bad("slack weight must be positive");
        }
        if !(self.kappa.is_finite() && self.kappa >= 0.0) {
            return bad("kappa must be non-negative");
        }
        if !(self.pinv_damping.is_finite() && self.pinv_damping >= 0.0) {
            return bad("pseudo-inverse damping must be non-negative");
        }
        if !(self.singularity_threshold.is_finite() && self.singularity_threshold >= 0.0) {
            return bad("singularity threshold must be non-negative");
        }
        if !(self.solver.tolerance.is_finite() && self.solver.tolerance > 0.0) {
            return bad("solver tolerance must be positive");
        }
        if self.solver.max_iterations == 0 {
            return bad("solver needs at least one iteration");
        }
        Ok(())
    }
}

/// Scalar factor of the metric `W = (1 + κ‖F_e‖²) I`.
pub fn weighting_factor(external_force: &DVector<f64>, kappa: f64) -> f64 {
    1.0 + kappa * external_force.norm_squared()
}

pub fn weighting_matrix(external_force: &DVector<f64>, kappa: f64, dim: usize) -> DMatrix<f64> {
    DMatrix::identity(dim, dim) * weighting_factor(external_force, kappa)
}

/// `q̇_a = J⁺ ẋ_a` with the given damping.
pub fn desired_joint_admittance(
    jacobian: &DMatrix<f64>,
    admittance_velocity: &DVector<f64>,
    damping: f64,
) -> Result<DVector<f64>, ControllerError> {
    Ok(pseudo_inverse(jacobian, damping)? * admittance_velocity)
}

/// Everything the optimizer needs for one cycle.
#[derive(Debug, Clone, Copy)]
pub struct ControlInput<'a> {
    pub q: &'a DVector<f64>,
    pub x: &'a DVector<f64>,
    pub jacobian: &'a DMatrix<f64>,
    pub external_force: &'a DVector<f64>,
    pub admittance_velocity: &'a DVector<f64>,
    pub tank: &'a TankState,
    pub env: &'a TaskEnvironment,
}

/// Which constraint a QP row came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowTag {
    Task(usize),
    Passivity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControlFault {
    /// The solver did not certify an optimum.
    Solver(QpStatus),
    /// The returned point violates the tank-floor row.
    PassivityViolated,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlOutput {
    pub qdot: DVector<f64>,
    /// One slack per task; zero for hard tasks.
    pub slacks: DVector<f64>,
    /// `ẋ_opt = J q̇`, handed to the tank modulation.
    pub xdot_opt: DVector<f64>,
    pub qdot_admittance: DVector<f64>,
    /// Barrier value per task, `None` when the task was inactive.
    pub task_values: Vec<Option<f64>>,
    pub active_rows: Vec<RowTag>,
    pub status: QpStatus,
    pub objective: f64,
    pub iterations: usize,
    pub solve_time: Duration,
    pub fault: Option<ControlFault>,
}

/// A built controller QP along with the row bookkeeping.
#[derive(Debug, Clone)]
pub struct ControlProblem {
    pub qp: QpProblem,
    pub tags: Vec<RowTag>,
    pub rows: Vec<LinearConstraintRow>,
    pub task_values: Vec<Option<f64>>,
    pub qdot_admittance: DVector<f64>,
    /// Task index → slack variable index.
    pub slack_of_task: Vec<Option<usize>>,
}

#[derive(Debug, Clone)]
pub struct Controller {
    config: ControllerConfig,
    tasks: Vec<BarrierTask>,
    slack_of_task: Vec<Option<usize>>,
    warm_start: Vec<RowTag>,
}

impl Controller {
    pub fn new(config: ControllerConfig, tasks: Vec<BarrierTask>) -> Result<Self, ControllerError> {
        config.validate()?;
        let mut next = 0;
        let slack_of_task = tasks
            .iter()
            .map(|t| {
                t.slacked.then(|| {
                    next += 1;
                    next - 1
                })
            })
            .collect();
        Ok(Self {
            config,
            tasks,
            slack_of_task,
            warm_start: Vec::new(),
        })
    }

    pub fn config(&self) -> &ControllerConfig {
        &self.config
    }

    pub fn config_mut(&mut self) -> &mut ControllerConfig {
        &mut self.config
    }

    pub fn tasks(&self) -> &[BarrierTask] {
        &self.tasks
    }

    pub fn num_slacks(&self) -> usize {
        self.slack_of_task.iter().flatten().count()
    }

    pub fn reset_warm_start(&mut self) {
        self.warm_start.clear();
    }

    /// Assembles the cycle QP over `z = (q̇, δ)`.
    pub fn build_problem(&self, input: &ControlInput) -> Result<ControlProblem, ControllerError> {
        let n = input.q.len();
        let num_slacks = self.num_slacks();
        let dim = n + num_slacks;
        let damping = singularity_damping(
            input.jacobian,
            self.config.pinv_damping,
            self.config.singularity_threshold,
        );
        let qdot_a = desired_joint_admittance(input.jacobian, input.admittance_velocity, damping)?;
        let weight = weighting_factor(input.external_force, self.config.kappa);

        let mut hessian = DMatrix::zeros(dim, dim);
        let mut linear = DVector::zeros(dim);
        for i in 0..n {
            hessian[(i, i)] = 2.0 * weight;
            linear[i] = -2.0 * weight * qdot_a[i];
        }
        for i in n..dim {
            hessian[(i, i)] = 2.0 * self.config.slack_weight;
        }

        let mut rows = Vec::with_capacity(self.tasks.len() + 1);
        let mut tags = Vec::with_capacity(self.tasks.len() + 1);
        let mut task_values = Vec::with_capacity(self.tasks.len());
        for (idx, task) in self.tasks.iter().enumerate() {
            match task.evaluate(input.q, input.x, input.env)? {
                Some(eval) => {
                    task_values.push(Some(eval.h));
                    rows.push(lower_to_row(
                        &eval,
                        input.jacobian,
                        task.alpha,
                        self.slack_of_task[idx],
                    )?);
                    tags.push(RowTag::Task(idx));
                }
                None => task_values.push(None),
            }
        }
        if self.config.passivity_row {
            rows.push(input.tank.passivity_row(
                input.external_force,
                input.jacobian,
                self.config.dt,
            ));
            tags.push(RowTag::Passivity);
        }

        let mut constraints = DMatrix::zeros(rows.len(), dim);
        let mut bounds = DVector::zeros(rows.len());
        for (r, row) in rows.iter().enumerate() {
            constraints
                .view_mut((r, 0), (1, n))
                .copy_from(&row.coefficients.transpose());
            if let Some(s) = row.slack {
                constraints[(r, n + s)] = 1.0;
            }
            bounds[r] = row.bound;
        }

        Ok(ControlProblem {
            qp: QpProblem {
                hessian,
                linear,
                constraints,
                bounds,
            },
            tags,
            rows,
            task_values,
            qdot_admittance: qdot_a,
            slack_of_task: self.slack_of_task.clone(),
        })
    }

    /// Solves one cycle. Solver failures and passivity violations are
    /// reported through [`ControlOutput::fault`] and command zero velocity.
    pub fn compute(&mut self, input: &ControlInput) -> Result<ControlOutput, ControllerError> {
        let n = input.q.len();
        let problem = self.build_problem(input)?;
        let hint: Vec<usize> = self
            .warm_start
            .iter()
            .filter_map(|tag| problem.tags.iter().position(|t| t == tag))
            .collect();

        let started = Instant::now();
        let solution = qp::solve_warm(&problem.qp, &self.config.solver, &hint)?;
        let solve_time = started.elapsed();

        let mut fault = (!solution.is_optimal()).then_some(ControlFault::Solver(solution.status));
        let mut qdot = solution.z.rows(0, n).into_owned();
        let slack_vars = solution.z.rows(n, solution.z.len() - n).into_owned();
        if fault.is_none() {
            if let Some(r) = problem.tags.iter().position(|t| *t == RowTag::Passivity) {
                // Rows carry no slack, so the residual is exact in q̇.
                let row = &problem.rows[r];
                let residual = row.residual(&qdot, &slack_vars);
                let scale = 1f64
                    .max(row.bound.abs())
                    .max(row.coefficients.dot(&qdot).abs());
                if residual < -self.config.solver.tolerance * scale {
                    fault = Some(ControlFault::PassivityViolated);
                }
            }
        }

        let mut slacks = DVector::zeros(self.tasks.len());
        if fault.is_some() {
            qdot.fill(0.0);
            self.warm_start.clear();
        } else {
            for (task, slack) in problem.slack_of_task.iter().enumerate() {
                if let Some(s) = slack {
                    slacks[task] = slack_vars[*s];
                }
            }
            self.warm_start = solution
                .active_set
                .iter()
                .map(|&r| problem.tags[r])
                .collect();
        }
        let active_rows = solution
            .active_set
            .iter()
            .map(|&r| problem.tags[r])
            .collect();

        Ok(ControlOutput {
            xdot_opt: input.jacobian * &qdot,
            qdot,
            slacks,
            qdot_admittance: problem.qdot_admittance,
            task_values: problem.task_values,
            active_rows,
            status: solution.status,
            objective: solution.objective,
            iterations: solution.iterations,
            solve_time,
            fault,
        })
    }
}
