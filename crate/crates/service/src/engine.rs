//! The control side of the service: a single-owner loop that drains the
//! input mailbox once per cycle, steps the simulation and publishes a state
//! snapshot.

use std::collections::HashSet;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use arc_swap::{ArcSwap, ArcSwapOption};
use nalgebra::DVector;
use tankbarrier::error::ScenarioError;
use tankbarrier::kinematics::Chain;
use tankbarrier::scenario::{Scenario, TaskSpec};
use tankbarrier::{LogRecord, Simulation};

use crate::protocol::{Hello, Input, State};

/// Identifies a client connection.
pub type ClientId = u64;

#[derive(Debug)]
pub struct ForceInput {
    pub client: ClientId,
    pub force: DVector<f64>,
}

/// Ordered, infrequent inputs.
#[derive(Debug, Clone, PartialEq)]
pub enum Control {
    Pause,
    Resume,
    Reset,
    Params {
        inertia: Option<DVector<f64>>,
        damping: Option<DVector<f64>>,
    },
    Disconnected(ClientId),
}

/// Inputs written by the network side. Continuous channels (force, obstacle,
/// goal) are single slots where the last writer wins; discrete commands are
/// queued in order.
pub struct Mailbox {
    force: ArcSwapOption<ForceInput>,
    obstacle: ArcSwapOption<Option<DVector<f64>>>,
    goal: ArcSwapOption<DVector<f64>>,
    control: Sender<Control>,
}

impl Mailbox {
    pub fn new() -> (Self, Receiver<Control>) {
        let (control, rx) = mpsc::channel();
        let mailbox = Self {
            force: ArcSwapOption::empty(),
            obstacle: ArcSwapOption::empty(),
            goal: ArcSwapOption::empty(),
            control,
        };
        (mailbox, rx)
    }

    pub fn post(&self, client: ClientId, input: Input) {
        match input {
            Input::Force(force) => self
                .force
                .store(Some(Arc::new(ForceInput { client, force }))),
            Input::Obstacle(o) => self.obstacle.store(Some(Arc::new(o))),
            Input::Goal(g) => self.goal.store(Some(Arc::new(g))),
            Input::Pause => self.send(Control::Pause),
            Input::Resume => self.send(Control::Resume),
            Input::Reset => self.send(Control::Reset),
            Input::Params { inertia, damping } => self.send(Control::Params { inertia, damping }),
        }
    }

    pub fn disconnected(&self, client: ClientId) {
        self.send(Control::Disconnected(client));
    }

    fn send(&self, c: Control) {
        // The receiver only goes away when the loop has stopped.
        let _ = self.control.send(c);
    }
}

pub struct Engine {
    sim: Simulation,
    paused: bool,
    force_owner: Option<ClientId>,
    gone: HashSet<ClientId>,
    overruns: u64,
    error: Option<String>,
    last: Option<LogRecord>,
}

impl Engine {
    pub fn new(scenario: Scenario) -> Result<Self, ScenarioError> {
        Ok(Self {
            sim: Simulation::new(scenario)?,
            paused: false,
            force_owner: None,
            gone: HashSet::new(),
            overruns: 0,
            error: None,
            last: None,
        })
    }

    pub fn simulation(&self) -> &Simulation {
        &self.sim
    }

    pub fn set_record_timing(&mut self, on: bool) {
        self.sim.set_record_timing(on);
    }

    pub fn paused(&self) -> bool {
        self.paused
    }

    pub fn hello(&self, broadcast_interval: Duration) -> Hello {
        let s = self.sim.scenario();
        let obstacle_task = s.tasks.iter().find_map(|t| match t {
            TaskSpec::Obstacle { d_min_m, .. } => Some(*d_min_m),
            _ => None,
        });
        Hello {
            scenario: s.name.clone(),
            dof: self.sim.model().dof(),
            task_dim: self.sim.model().task_dim(),
            dt: self.sim.dt(),
            task_labels: self.sim.layout().task_labels,
            tank_floor: self.sim.tank().floor(),
            link_lengths_m: match self.sim.model().chain() {
                Chain::Planar { link_lengths } => Some(link_lengths.clone()),
                _ => None,
            },
            d_min_m: obstacle_task,
            activation_distance_m: s
                .admittance
                .repulsive
                .as_ref()
                .map(|r| r.activation_distance_m),
            broadcast_interval_ms: broadcast_interval.as_secs_f64() * 1e3,
        }
    }

    /// Applies queued commands, then the latest value of every slot.
    pub fn drain(&mut self, mailbox: &Mailbox, control: &Receiver<Control>) {
        while let Ok(c) = control.try_recv() {
            self.handle(c);
        }
        if let Some(f) = mailbox.force.swap(None) {
            if !self.gone.contains(&f.client) {
                let zero = f.force.iter().all(|v| *v == 0.0);
                self.force_owner = (!zero).then_some(f.client);
                self.set_force((!zero).then(|| f.force.clone()));
            }
        }
        if let Some(o) = mailbox.obstacle.swap(None) {
            let r = self.sim.set_live_obstacle((*o).clone());
            self.report(r);
        }
        if let Some(g) = mailbox.goal.swap(None) {
            let r = self.sim.set_live_goal((*g).clone());
            self.report(r);
        }
    }

    pub fn handle(&mut self, control: Control) {
        match control {
            Control::Pause => self.paused = true,
            Control::Resume => self.paused = false,
            Control::Reset => {
                self.force_owner = None;
                self.last = None;
                self.error = None;
                let r = self.sim.reset();
                self.report(r);
            }
            Control::Params { inertia, damping } => {
                let r = self.sim.set_live_admittance(inertia, damping);
                self.report(r);
            }
            Control::Disconnected(client) => {
                self.gone.insert(client);
                if self.force_owner == Some(client) {
                    self.force_owner = None;
                    self.set_force(None);
                }
            }
        }
    }

    fn set_force(&mut self, force: Option<DVector<f64>>) {
        let r = self.sim.set_live_force(force);
        self.report(r);
    }

    fn report(&mut self, r: Result<(), ScenarioError>) {
        if let Err(e) = r {
            tracing::warn!("input rejected: {e}");
            self.error = Some(e.to_string());
        }
    }

    /// Runs one cycle unless paused or finished.
    pub fn tick(&mut self) -> Option<&LogRecord> {
        if self.paused || self.sim.finished() {
            return None;
        }
        match self.sim.step() {
            Ok(r) => {
                self.last = Some(r);
                self.last.as_ref()
            }
            Err(e) => {
                tracing::error!("cycle failed, pausing: {e}");
                self.error = Some(e.to_string());
                self.paused = true;
                None
            }
        }
    }

    pub fn note_overrun(&mut self) {
        self.overruns += 1;
    }

    /// Snapshot of the last completed cycle, or of the initial pose before
    /// the first one.
    pub fn state(&self) -> (f64, State) {
        let sim = &self.sim;
        let dim = sim.model().task_dim();
        let tasks = sim.controller().tasks().len();
        let common = |r: Option<&LogRecord>| {
            let zeros = vec![0.0; dim];
            let q = r.map_or_else(|| sim.joints().q.as_slice().to_vec(), |r| r.q.clone());
            let x = r.map_or_else(|| sim.end_effector().as_slice().to_vec(), |r| r.x.clone());
            let obstacle = sim.obstacle().map(|o| o.position.as_slice().to_vec());
            let goal = sim.goal().position.as_slice().to_vec();
            State {
                cycle: sim.cycle(),
                paused: self.paused,
                finished: sim.finished(),
                obstacle_distance: r.and_then(|r| r.obstacle_distance).or_else(|| {
                    obstacle.as_ref().map(|o| {
                        o.iter()
                            .zip(&x)
                            .map(|(a, b)| (a - b).powi(2))
                            .sum::<f64>()
                            .sqrt()
                    })
                }),
                goal_error: r.map_or_else(
                    || {
                        goal.iter()
                            .zip(&x)
                            .map(|(a, b)| (a - b).powi(2))
                            .sum::<f64>()
                            .sqrt()
                    },
                    |r| r.goal_error,
                ),
                f_ext: r.map_or_else(|| zeros.clone(), |r| r.f_ext.clone()),
                xdot_a: r.map_or_else(|| zeros.clone(), |r| r.xdot_a.clone()),
                xdot_opt: r.map_or_else(|| zeros.clone(), |r| r.xdot_opt.clone()),
                qdot: r.map_or_else(|| vec![0.0; q.len()], |r| r.qdot.clone()),
                tank_energy: r.map_or(sim.tank().energy(), |r| r.tank_energy),
                tank_floor: sim.tank().floor(),
                e_acc: r.map_or(sim.tank().accumulated(), |r| r.e_acc),
                h: r.map_or_else(|| vec![None; tasks], |r| r.h.clone()),
                delta: r.map_or_else(|| vec![0.0; tasks], |r| r.delta.clone()),
                faults: r.map_or(0, |r| r.faults),
                solve_time_us: r.map_or(0.0, |r| r.solve_time_us),
                cycle_time_us: r.map_or(0.0, |r| r.cycle_time_us),
                overruns: self.overruns,
                error: self.error.clone(),
                q,
                x,
                obstacle,
                goal,
            }
        };
        let t = self.last.as_ref().map_or(sim.time(), |r| r.t);
        (t, common(self.last.as_ref()))
    }
}

/// Latest published state and its simulated time.
pub type Snapshot = ArcSwap<(f64, State)>;

/// Handle to the control thread.
pub struct ControlLoop {
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<Engine>>,
}

impl ControlLoop {
    /// Starts the loop on its own thread with a fixed period. Cycles that
    /// overrun their deadline are counted, never skipped: simulated time
    /// always advances by exactly one step per cycle.
    pub fn spawn(
        mut engine: Engine,
        mailbox: Arc<Mailbox>,
        control: Receiver<Control>,
        snapshot: Arc<Snapshot>,
        period: Duration,
    ) -> Self {
        let stop = Arc::new(AtomicBool::new(false));
        let flag = stop.clone();
        let thread = std::thread::Builder::new()
            .name("control".into())
            .spawn(move || {
                let mut deadline = Instant::now() + period;
                while !flag.load(Ordering::Relaxed) {
                    engine.drain(&mailbox, &control);
                    engine.tick();
                    snapshot.store(Arc::new(engine.state()));
                    let now = Instant::now();
                    if now > deadline {
                        engine.note_overrun();
                        deadline = now + period;
                    } else {
                        std::thread::sleep(deadline - now);
                        deadline += period;
                    }
                }
                engine
            })
            .expect("control thread starts");
        Self {
            stop,
            thread: Some(thread),
        }
    }

    /// Stops the loop and returns the engine.
    pub fn stop(mut self) -> Engine {
        self.stop.store(true, Ordering::Relaxed);
        self.thread
            .take()
            .expect("running")
            .join()
            .expect("control thread panicked")
    }
}

impl Drop for ControlLoop {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const LIVE: &str = include_str!("../../../scenarios/live_planar.json");

    fn engine() -> Engine {
        let mut e = Engine::new(Scenario::from_json(LIVE).unwrap()).unwrap();
        e.set_record_timing(false);
        e
    }

    fn force(x: f64, y: f64) -> Input {
        Input::Force(DVector::from_vec(vec![x, y]))
    }

    #[test]
    fn idle_loop_matches_scripted_run() {
        let mut e = engine();
        let (mailbox, rx) = Mailbox::new();
        let mut sim = Simulation::new(Scenario::from_json(LIVE).unwrap()).unwrap();
        sim.set_record_timing(false);
        for _ in 0..200 {
            e.drain(&mailbox, &rx);
            let a = e.tick().unwrap().clone();
            assert_eq!(a, sim.step().unwrap());
        }
    }

    #[test]
    fn last_writer_wins() {
        let mut e = engine();
        let (mailbox, rx) = Mailbox::new();
        mailbox.post(1, force(1.0, 0.0));
        mailbox.post(2, force(0.0, 3.0));
        e.drain(&mailbox, &rx);
        let r = e.tick().unwrap();
        assert_eq!(r.f_ext, vec![0.0, 3.0]);
        // The slot is consumed but the force persists until replaced.
        e.drain(&mailbox, &rx);
        assert_eq!(e.tick().unwrap().f_ext, vec![0.0, 3.0]);
    }

    #[test]
    fn dropped_client_force_is_zeroed_next_cycle() {
        let mut e = engine();
        let (mailbox, rx) = Mailbox::new();
        mailbox.post(7, force(5.0, 0.0));
        for _ in 0..500 {
            e.drain(&mailbox, &rx);
            assert_eq!(e.tick().unwrap().f_ext, vec![5.0, 0.0]);
        }
        mailbox.disconnected(7);
        e.drain(&mailbox, &rx);
        assert_eq!(e.tick().unwrap().f_ext, vec![0.0, 0.0]);
    }

    #[test]
    fn late_force_from_a_closed_client_is_ignored() {
        let mut e = engine();
        let (mailbox, rx) = Mailbox::new();
        mailbox.post(3, force(2.0, 2.0));
        mailbox.disconnected(3);
        e.drain(&mailbox, &rx);
        assert_eq!(e.tick().unwrap().f_ext, vec![0.0, 0.0]);
    }

    #[test]
    fn other_clients_do_not_release_the_force() {
        let mut e = engine();
        let (mailbox, rx) = Mailbox::new();
        mailbox.post(1, force(1.0, 1.0));
        e.drain(&mailbox, &rx);
        mailbox.disconnected(2);
        e.drain(&mailbox, &rx);
        assert_eq!(e.tick().unwrap().f_ext, vec![1.0, 1.0]);
    }

    #[test]
    fn pause_resume_is_deterministic() {
        let script = |pause: bool| {
            let mut e = engine();
            let (mailbox, rx) = Mailbox::new();
            let mut records = Vec::new();
            let mut ticks = 0;
            while records.len() < 600 {
                match e.simulation().cycle() {
                    100 => mailbox.post(1, force(3.0, -2.0)),
                    400 => mailbox.post(1, force(0.0, 0.0)),
                    _ => {}
                }
                if pause && ticks == 250 {
                    mailbox.post(1, Input::Pause);
                }
                if pause && ticks == 300 {
                    mailbox.post(1, Input::Resume);
                }
                e.drain(&mailbox, &rx);
                if let Some(r) = e.tick() {
                    records.push(r.clone());
                }
                ticks += 1;
            }
            (records, ticks)
        };
        let (straight, n) = script(false);
        let (paused, m) = script(true);
        assert_eq!(n, 600);
        assert_eq!(m, 650);
        assert_eq!(straight, paused);
    }

    #[test]
    fn reset_restores_the_initial_state() {
        let mut e = engine();
        let (mailbox, rx) = Mailbox::new();
        let (_, initial) = e.state();
        mailbox.post(1, force(4.0, 0.0));
        mailbox.post(1, Input::Goal(DVector::from_vec(vec![0.5, 0.5])));
        for _ in 0..100 {
            e.drain(&mailbox, &rx);
            e.tick();
        }
        mailbox.post(1, Input::Reset);
        e.drain(&mailbox, &rx);
        assert_eq!(e.state().1, initial);
        assert_eq!(e.tick().unwrap().f_ext, vec![0.0, 0.0]);
    }

    #[test]
    fn obstacle_and_params_are_applied() {
        let mut e = engine();
        let (mailbox, rx) = Mailbox::new();
        mailbox.post(1, Input::Obstacle(None));
        e.drain(&mailbox, &rx);
        let r = e.tick().unwrap();
        assert_eq!(r.obstacle_distance, None);
        mailbox.post(1, Input::Obstacle(Some(DVector::from_vec(vec![1.0, 1.0]))));
        mailbox.post(
            1,
            Input::Params {
                inertia: None,
                damping: Some(DVector::from_vec(vec![1.0, 1.0])),
            },
        );
        e.drain(&mailbox, &rx);
        assert!(e.tick().unwrap().obstacle_distance.is_some());
        assert_eq!(
            e.simulation().admittance().damping().as_slice(),
            &[1.0, 1.0]
        );
    }

    #[test]
    fn control_loop_runs_and_stops() {
        let (mailbox, rx) = Mailbox::new();
        let e = engine();
        let snapshot = Arc::new(ArcSwap::from_pointee(e.state()));
        let handle = ControlLoop::spawn(
            e,
            Arc::new(mailbox),
            rx,
            snapshot.clone(),
            Duration::from_millis(1),
        );
        std::thread::sleep(Duration::from_millis(50));
        let e = handle.stop();
        assert!(e.simulation().cycle() > 5);
        assert_eq!(snapshot.load().1.cycle, e.simulation().cycle());
    }
}
