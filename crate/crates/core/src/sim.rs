//! Fixed-step simulation of a velocity-controlled arm driven by the
//! admittance/optimizer loop.
//!
//! One cycle:
//! 1. read joint state, forward kinematics and Jacobian
//! 2. sum scheduled and live external force
//! 3. step the admittance model (potential centered on the obstacle)
//! 4. solve the cycle QP
//! 5. book the port work in the tank
//! 6. integrate the joints with the commanded velocity

use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use crate::admittance::{AdmittanceParams, AdmittanceState, RepulsivePotential};
use crate::barrier::{MovingPoint, TaskEnvironment};
use crate::controller::{ControlFault, ControlInput, ControlOutput, Controller};
use crate::error::ScenarioError;
use crate::kinematics::{integrate_joints, JointState, ManipulatorModel};
use crate::log::{
    LogLayout, LogRecord, RunSummary, FAULT_MODULATION, FAULT_PASSIVITY, FAULT_SOLVER,
    FAULT_TANK_FLOOR,
};
use crate::scenario::{Event, Scenario};
use crate::tank::TankState;

/// Slack below the floor tolerated before a cycle is flagged.
pub const FLOOR_TOLERANCE: f64 = 1e-9;

/// Everything the optimizer sees in one cycle, before anything is committed.
#[derive(Debug, Clone)]
pub struct CycleContext {
    pub t: f64,
    pub q: DVector<f64>,
    pub x: DVector<f64>,
    pub jacobian: DMatrix<f64>,
    pub external_force: DVector<f64>,
    pub admittance: AdmittanceState,
    pub tank: TankState,
    pub env: TaskEnvironment,
}

impl CycleContext {
    pub fn input(&self) -> ControlInput<'_> {
        ControlInput {
            q: &self.q,
            x: &self.x,
            jacobian: &self.jacobian,
            external_force: &self.external_force,
            admittance_velocity: &self.admittance.velocity,
            tank: &self.tank,
            env: &self.env,
        }
    }
}

#[derive(Debug, Clone, Default)]
struct LiveInputs {
    force: Option<DVector<f64>>,
    /// `Some(None)` removes the obstacle.
    obstacle: Option<Option<DVector<f64>>>,
    goal: Option<DVector<f64>>,
    inertia: Option<DVector<f64>>,
    damping: Option<DVector<f64>>,
}

pub struct Simulation {
    scenario: Scenario,
    model: ManipulatorModel,
    controller: Controller,
    base_admittance: AdmittanceParams,
    admittance: AdmittanceParams,
    switches_applied: usize,
    admittance_state: AdmittanceState,
    joints: JointState,
    tank: TankState,
    initial_goal: DVector<f64>,
    cycle: u64,
    live: LiveInputs,
    /// End-effector velocity commanded in the previous cycle.
    last_xdot: DVector<f64>,
    record_timing: bool,
}

impl Simulation {
    /// Validates the scenario and places the robot at `q0`.
    pub fn new(scenario: Scenario) -> Result<Self, ScenarioError> {
        scenario.validate()?;
        let model = scenario.build_model()?;
        let tasks = scenario.build_tasks(model.dof())?;
        let controller = Controller::new(scenario.controller.to_config(), tasks)?;
        let base_admittance = scenario.base_admittance(model.task_dim())?;
        let q0 = DVector::from_column_slice(&scenario.q0_rad);
        let x0 = model
            .forward_kinematics(&q0)
            .map_err(|e| ScenarioError::Controller(e.into()))?;
        let tank = TankState::new(scenario.tank.initial_energy_j, scenario.tank.floor_j)
            .map_err(|e| ScenarioError::Controller(e.into()))?;
        Ok(Self {
            admittance: base_admittance.clone(),
            base_admittance,
            switches_applied: 0,
            admittance_state: AdmittanceState::at_rest(x0.clone()),
            joints: JointState::at_rest(q0),
            tank,
            initial_goal: x0,
            cycle: 0,
            live: LiveInputs::default(),
            last_xdot: DVector::zeros(model.task_dim()),
            record_timing: true,
            scenario,
            model,
            controller,
        })
    }

    /// Restores the initial state and drops all live inputs.
    pub fn reset(&mut self) -> Result<(), ScenarioError> {
        let record_timing = self.record_timing;
        *self = Self::new(self.scenario.clone())?;
        self.record_timing = record_timing;
        Ok(())
    }

    /// With timing disabled the wall-time fields are logged as zero, making
    /// whole logs reproducible bit for bit.
    pub fn set_record_timing(&mut self, on: bool) {
        self.record_timing = on;
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn model(&self) -> &ManipulatorModel {
        &self.model
    }

    pub fn controller(&self) -> &Controller {
        &self.controller
    }

    pub fn controller_mut(&mut self) -> &mut Controller {
        &mut self.controller
    }

    pub fn dt(&self) -> f64 {
        self.scenario.dt()
    }

    pub fn cycle(&self) -> u64 {
        self.cycle
    }

    /// Simulated time of the next cycle.
    pub fn time(&self) -> f64 {
        self.cycle as f64 * self.dt()
    }

    pub fn finished(&self) -> bool {
        self.cycle as usize >= self.scenario.cycles()
    }

    pub fn joints(&self) -> &JointState {
        &self.joints
    }

    pub fn tank(&self) -> &TankState {
        &self.tank
    }

    pub fn admittance(&self) -> &AdmittanceParams {
        &self.admittance
    }

    pub fn admittance_state(&self) -> &AdmittanceState {
        &self.admittance_state
    }

    pub fn layout(&self) -> LogLayout {
        LogLayout {
            dof: self.model.dof(),
            task_dim: self.model.task_dim(),
            task_labels: self.controller.tasks().iter().map(|t| t.label()).collect(),
        }
    }

    pub fn end_effector(&self) -> DVector<f64> {
        self.model
            .forward_kinematics(&self.joints.q)
            .expect("joint vector matches the model")
    }

    pub fn obstacle(&self) -> Option<MovingPoint> {
        match &self.live.obstacle {
            Some(live) => live.clone().map(MovingPoint::fixed),
            None => self.scenario.obstacle_at(self.time()),
        }
    }

    pub fn goal(&self) -> MovingPoint {
        match &self.live.goal {
            Some(g) => MovingPoint::fixed(g.clone()),
            None => self.scenario.goal_at(self.time(), &self.initial_goal),
        }
    }

    fn check_dim(&self, v: &DVector<f64>) -> Result<(), ScenarioError> {
        let m = self.model.task_dim();
        if v.len() != m || !v.iter().all(|x| x.is_finite()) {
            return Err(ScenarioError::Invalid(format!(
                "expected {m} finite coordinates"
            )));
        }
        Ok(())
    }

    /// Live force added to the scheduled force; `None` clears it.
    pub fn set_live_force(&mut self, force: Option<DVector<f64>>) -> Result<(), ScenarioError> {
        if let Some(f) = &force {
            self.check_dim(f)?;
        }
        self.live.force = force;
        Ok(())
    }

    /// Live obstacle position; overrides the schedule from now on.
    pub fn set_live_obstacle(
        &mut self,
        obstacle: Option<DVector<f64>>,
    ) -> Result<(), ScenarioError> {
        if let Some(o) = &obstacle {
            self.check_dim(o)?;
        }
        self.live.obstacle = Some(obstacle);
        Ok(())
    }

    pub fn set_live_goal(&mut self, goal: DVector<f64>) -> Result<(), ScenarioError> {
        self.check_dim(&goal)?;
        self.live.goal = Some(goal);
        Ok(())
    }

    /// Live admittance override; survives later scheduled switches.
    pub fn set_live_admittance(
        &mut self,
        inertia: Option<DVector<f64>>,
        damping: Option<DVector<f64>>,
    ) -> Result<(), ScenarioError> {
        let mut params = self.admittance.clone();
        if let Some(i) = &inertia {
            params
                .set_inertia(i.clone())
                .map_err(|e| ScenarioError::Controller(e.into()))?;
        }
        if let Some(d) = &damping {
            params
                .set_damping(d.clone())
                .map_err(|e| ScenarioError::Controller(e.into()))?;
        }
        self.admittance = params;
        if inertia.is_some() {
            self.live.inertia = inertia;
        }
        if damping.is_some() {
            self.live.damping = damping;
        }
        Ok(())
    }

    fn refresh_admittance(&mut self, t: f64) -> Result<(), ScenarioError> {
        let due = self
            .scenario
            .schedule
            .iter()
            .filter(|e| matches!(e, Event::Admittance { t_s, .. } if *t_s <= t))
            .count();
        if due == self.switches_applied {
            return Ok(());
        }
        let mut params = self.base_admittance.clone();
        self.scenario.apply_admittance_switches(t, &mut params)?;
        let wrap = |e: crate::error::AdmittanceError| ScenarioError::Controller(e.into());
        if let Some(i) = &self.live.inertia {
            params.set_inertia(i.clone()).map_err(wrap)?;
        }
        if let Some(d) = &self.live.damping {
            params.set_damping(d.clone()).map_err(wrap)?;
        }
        self.admittance = params;
        self.switches_applied = due;
        Ok(())
    }

    fn potential_for(&self, obstacle: Option<&MovingPoint>) -> Option<RepulsivePotential> {
        let spec = self.scenario.admittance.repulsive.as_ref()?;
        let obstacle = obstacle?;
        RepulsivePotential::new(
            spec.gain_nm2,
            spec.activation_distance_m,
            obstacle.position.clone(),
        )
        .ok()
    }

    /// Builds the next cycle's optimizer input without committing anything.
    pub fn prepare(&mut self) -> Result<CycleContext, ScenarioError> {
        let t = self.time();
        self.refresh_admittance(t)?;
        let q = self.joints.q.clone();
        let x = self
            .model
            .forward_kinematics(&q)
            .map_err(|e| ScenarioError::Controller(e.into()))?;
        let jacobian = self
            .model
            .jacobian(&q)
            .map_err(|e| ScenarioError::Controller(e.into()))?;
        let mut external_force = self.scenario.force_at(t, &x, &self.last_xdot);
        if let Some(f) = &self.live.force {
            external_force += f;
        }
        let obstacle = self.obstacle();
        let mut params = self.admittance.clone();
        params
            .set_potential(self.potential_for(obstacle.as_ref()))
            .map_err(|e| ScenarioError::Controller(e.into()))?;
        let admittance = params
            .step(&self.admittance_state, &external_force, &x, self.dt())
            .map_err(|e| ScenarioError::Controller(e.into()))?;
        let env = TaskEnvironment {
            obstacle,
            goal: self.goal(),
            q_min: self.model.q_min().clone(),
            q_max: self.model.q_max().clone(),
        };
        Ok(CycleContext {
            t,
            q,
            x,
            jacobian,
            external_force,
            admittance,
            tank: self.tank,
            env,
        })
    }

    /// Runs one control cycle and returns its log record.
    pub fn step(&mut self) -> Result<LogRecord, ScenarioError> {
        Ok(self.step_detailed()?.0)
    }

    /// Like [`step`](Self::step), also returning the optimizer output.
    pub fn step_detailed(&mut self) -> Result<(LogRecord, ControlOutput), ScenarioError> {
        let started = Instant::now();
        let ctx = self.prepare()?;
        let out = self.controller.compute(&ctx.input())?;

        let mut faults = 0;
        match out.fault {
            Some(ControlFault::Solver(_)) => faults |= FAULT_SOLVER,
            Some(ControlFault::PassivityViolated) => faults |= FAULT_PASSIVITY,
            None => {}
        }
        if ctx.tank.modulation(&out.xdot_opt).is_err() {
            faults |= FAULT_MODULATION;
        }
        let tank = ctx
            .tank
            .step_unchecked(&ctx.external_force, &out.xdot_opt, self.dt());
        if tank.energy() < tank.floor() - FLOOR_TOLERANCE {
            faults |= FAULT_TANK_FLOOR;
        }
        let joints = integrate_joints(&self.model, &self.joints, &out.qdot, self.dt())
            .map_err(|e| ScenarioError::Controller(e.into()))?;

        let obstacle_distance = ctx
            .env
            .obstacle
            .as_ref()
            .map(|o| (&ctx.x - &o.position).norm());
        let goal_error = (&ctx.x - &ctx.env.goal.position).norm();
        self.tank = tank;
        self.joints = joints;
        self.admittance_state = ctx.admittance.clone();
        self.last_xdot = out.xdot_opt.clone();
        self.cycle += 1;

        let (solve_time_us, cycle_time_us) = if self.record_timing {
            (
                out.solve_time.as_secs_f64() * 1e6,
                started.elapsed().as_secs_f64() * 1e6,
            )
        } else {
            (0.0, 0.0)
        };
        let record = LogRecord {
            t: ctx.t,
            q: ctx.q.as_slice().to_vec(),
            x: ctx.x.as_slice().to_vec(),
            f_ext: ctx.external_force.as_slice().to_vec(),
            xdot_a: ctx.admittance.velocity.as_slice().to_vec(),
            xdot_opt: out.xdot_opt.as_slice().to_vec(),
            qdot: out.qdot.as_slice().to_vec(),
            tank_energy: tank.energy(),
            e_acc: tank.accumulated(),
            h: out.task_values.clone(),
            delta: out.slacks.as_slice().to_vec(),
            obstacle_distance,
            goal_error,
            solver_iterations: out.iterations,
            solve_time_us,
            cycle_time_us,
            faults,
        };
        Ok((record, out))
    }

    /// Runs the remaining cycles of the scenario.
    pub fn run(&mut self) -> Result<Vec<LogRecord>, ScenarioError> {
        let mut records = Vec::with_capacity(self.scenario.cycles());
        while !self.finished() {
            records.push(self.step()?);
        }
        Ok(records)
    }
}

/// Output of a complete scripted run.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub layout: LogLayout,
    pub records: Vec<LogRecord>,
    pub summary: RunSummary,
}

/// Validates and runs a scenario from start to finish.
pub fn run_scenario(scenario: &Scenario) -> Result<RunOutput, ScenarioError> {
    let mut sim = Simulation::new(scenario.clone())?;
    let records = sim.run()?;
    Ok(RunOutput {
        layout: sim.layout(),
        summary: RunSummary::from_records(&records),
        records,
    })
}
