//! Per-cycle run records and their CSV / JSON-lines encodings.
//!
//! Floats are written with Rust's shortest round-trip formatting, so an
//! export → import → export cycle reproduces the file byte for byte.

use std::io::{BufRead, BufReader, Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::LogError;

/// The QP did not certify an optimum; zero velocity was commanded.
pub const FAULT_SOLVER: u32 = 1;
/// The returned point violated the tank-floor row.
pub const FAULT_PASSIVITY: u32 = 1 << 1;
/// Tank energy after booking the cycle fell below the floor.
pub const FAULT_TANK_FLOOR: u32 = 1 << 2;
/// The tank modulation was singular at the start of the cycle.
pub const FAULT_MODULATION: u32 = 1 << 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    /// Simulated time at the start of the cycle, `k Δt`.
    pub t: f64,
    /// Joint positions at the start of the cycle.
    pub q: Vec<f64>,
    /// End-effector position at the start of the cycle.
    pub x: Vec<f64>,
    pub f_ext: Vec<f64>,
    pub xdot_a: Vec<f64>,
    pub xdot_opt: Vec<f64>,
    pub qdot: Vec<f64>,
    /// Tank energy after booking this cycle's port work.
    pub tank_energy: f64,
    pub e_acc: f64,
    /// Barrier values, one per task; `None` for an absent obstacle.
    pub h: Vec<Option<f64>>,
    pub delta: Vec<f64>,
    pub obstacle_distance: Option<f64>,
    pub goal_error: f64,
    pub solver_iterations: usize,
    pub solve_time_us: f64,
    pub cycle_time_us: f64,
    pub faults: u32,
}

/// Column layout shared by every record of one run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogLayout {
    pub dof: usize,
    pub task_dim: usize,
    pub task_labels: Vec<String>,
}

impl LogLayout {
    pub fn header(&self) -> Vec<String> {
        let mut cols = vec!["t".to_string()];
        let vec_cols = |cols: &mut Vec<String>, prefix: &str, n: usize| {
            cols.extend((0..n).map(|i| format!("{prefix}_{i}")));
        };
        vec_cols(&mut cols, "q", self.dof);
        vec_cols(&mut cols, "x", self.task_dim);
        vec_cols(&mut cols, "f_ext", self.task_dim);
        vec_cols(&mut cols, "xdot_a", self.task_dim);
        vec_cols(&mut cols, "xdot_opt", self.task_dim);
        vec_cols(&mut cols, "qdot", self.dof);
        cols.push("tank_energy".into());
        cols.push("e_acc".into());
        cols.extend(self.task_labels.iter().map(|l| format!("h_{l}")));
        cols.extend(self.task_labels.iter().map(|l| format!("delta_{l}")));
        for c in [
            "obstacle_distance",
            "goal_error",
            "solver_iterations",
            "solve_time_us",
            "cycle_time_us",
            "faults",
        ] {
            cols.push(c.into());
        }
        cols
    }

    /// Recovers the layout from a header row written by [`header`](Self::header).
    pub fn from_header(header: &[String]) -> Result<Self, LogError> {
        let count = |prefix: &str| {
            header
                .iter()
                .filter(|c| {
                    c.strip_prefix(prefix)
                        .and_then(|s| s.strip_prefix('_'))
                        .is_some_and(|s| s.parse::<usize>().is_ok())
                })
                .count()
        };
        let labels: Vec<String> = header
            .iter()
            .filter_map(|c| c.strip_prefix("h_").map(str::to_string))
            .collect();
        let layout = LogLayout {
            dof: count("q"),
            task_dim: count("x"),
            task_labels: labels,
        };
        if layout.header() != header {
            return Err(LogError::Malformed("unrecognized CSV header".into()));
        }
        Ok(layout)
    }

    fn check(&self, record: &LogRecord) -> Result<(), LogError> {
        let ok = record.q.len() == self.dof
            && record.qdot.len() == self.dof
            && [&record.x, &record.f_ext, &record.xdot_a, &record.xdot_opt]
                .iter()
                .all(|v| v.len() == self.task_dim)
            && record.h.len() == self.task_labels.len()
            && record.delta.len() == self.task_labels.len();
        if ok {
            Ok(())
        } else {
            Err(LogError::Malformed(format!(
                "record at t = {} does not match the layout",
                record.t
            )))
        }
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| v.to_string())
}

fn record_fields(r: &LogRecord) -> Vec<String> {
    let mut out = vec![r.t.to_string()];
    for v in [&r.q, &r.x, &r.f_ext, &r.xdot_a, &r.xdot_opt, &r.qdot] {
        out.extend(v.iter().map(f64::to_string));
    }
    out.push(r.tank_energy.to_string());
    out.push(r.e_acc.to_string());
    out.extend(r.h.iter().map(|h| fmt_opt(*h)));
    out.extend(r.delta.iter().map(f64::to_string));
    out.push(fmt_opt(r.obstacle_distance));
    out.push(r.goal_error.to_string());
    out.push(r.solver_iterations.to_string());
    out.push(r.solve_time_us.to_string());
    out.push(r.cycle_time_us.to_string());
    out.push(r.faults.to_string());
    out
}

fn parse_f64(s: &str) -> Result<f64, LogError> {
    s.parse()
        .map_err(|_| LogError::Malformed(format!("bad number {s:?}")))
}

fn parse_opt(s: &str) -> Result<Option<f64>, LogError> {
    if s.is_empty() {
        Ok(None)
    } else {
        parse_f64(s).map(Some)
    }
}

struct Cursor<'a> {
    fields: Vec<&'a str>,
    at: usize,
}

impl<'a> Cursor<'a> {
    fn next(&mut self) -> Result<&'a str, LogError> {
        let f = self
            .fields
            .get(self.at)
            .ok_or_else(|| LogError::Malformed("short row".into()))?;
        self.at += 1;
        Ok(f)
    }

    fn f64(&mut self) -> Result<f64, LogError> {
        parse_f64(self.next()?)
    }

    fn opt(&mut self) -> Result<Option<f64>, LogError> {
        parse_opt(self.next()?)
    }

    fn vec(&mut self, n: usize) -> Result<Vec<f64>, LogError> {
        (0..n).map(|_| self.f64()).collect()
    }

    fn int<T: std::str::FromStr>(&mut self) -> Result<T, LogError> {
        let s = self.next()?;
        s.parse()
            .map_err(|_| LogError::Malformed(format!("bad integer {s:?}")))
    }
}

fn parse_record(layout: &LogLayout, row: &csv::StringRecord) -> Result<LogRecord, LogError> {
    let mut c = Cursor {
        fields: row.iter().collect(),
        at: 0,
    };
    let (n, m, k) = (layout.dof, layout.task_dim, layout.task_labels.len());
    Ok(LogRecord {
        t: c.f64()?,
        q: c.vec(n)?,
        x: c.vec(m)?,
        f_ext: c.vec(m)?,
        xdot_a: c.vec(m)?,
        xdot_opt: c.vec(m)?,
        qdot: c.vec(n)?,
        tank_energy: c.f64()?,
        e_acc: c.f64()?,
        h: (0..k).map(|_| c.opt()).collect::<Result<_, _>>()?,
        delta: c.vec(k)?,
        obstacle_distance: c.opt()?,
        goal_error: c.f64()?,
        solver_iterations: c.int()?,
        solve_time_us: c.f64()?,
        cycle_time_us: c.f64()?,
        faults: c.int()?,
    })
}

/// Writes a header row followed by one row per record.
pub fn write_csv<W: Write>(
    writer: W,
    layout: &LogLayout,
    records: &[LogRecord],
) -> Result<(), LogError> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(writer);
    w.write_record(layout.header())?;
    for r in records {
        layout.check(r)?;
        w.write_record(record_fields(r))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<R: Read>(reader: R) -> Result<(LogLayout, Vec<LogRecord>), LogError> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_reader(reader);
    let mut rows = r.records();
    let header = rows
        .next()
        .ok_or_else(|| LogError::Malformed("missing header".into()))??;
    let header: Vec<String> = header.iter().map(str::to_string).collect();
    let layout = LogLayout::from_header(&header)?;
    let mut records = Vec::new();
    for row in rows {
        let row = row?;
        if row.len() != header.len() {
            return Err(LogError::Malformed(format!(
                "row has {} fields, header has {}",
                row.len(),
                header.len()
            )));
        }
        records.push(parse_record(&layout, &row)?);
    }
    Ok((layout, records))
}

/// One JSON object per line.
pub fn write_jsonl<W: Write>(mut writer: W, records: &[LogRecord]) -> Result<(), LogError> {
    for r in records {
        serde_json::to_writer(&mut writer, r)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_jsonl<R: Read>(reader: R) -> Result<Vec<LogRecord>, LogError> {
    let mut out = Vec::new();
    for line in BufReader::new(reader).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub cycles: usize,
    pub min_tank_energy: f64,
    pub min_obstacle_distance: Option<f64>,
    pub final_goal_error: f64,
    pub max_abs_slack: f64,
    pub worst_cycle_time_us: f64,
    pub median_cycle_time_us: f64,
    pub fault_cycles: usize,
}

impl RunSummary {
    pub fn from_records(records: &[LogRecord]) -> Self {
        let mut cycle_times: Vec<f64> = records.iter().map(|r| r.cycle_time_us).collect();
        cycle_times.sort_by(f64::total_cmp);
        let median = if cycle_times.is_empty() {
            0.0
        } else {
            cycle_times[cycle_times.len() / 2]
        };
        RunSummary {
            cycles: records.len(),
            min_tank_energy: records
                .iter()
                .map(|r| r.tank_energy)
                .fold(f64::INFINITY, f64::min),
            min_obstacle_distance: records
                .iter()
                .filter_map(|r| r.obstacle_distance)
                .reduce(f64::min),
            final_goal_error: records.last().map_or(0.0, |r| r.goal_error),
            max_abs_slack: records
                .iter()
                .flat_map(|r| r.delta.iter())
                .fold(0.0, |m, d| m.max(d.abs())),
            worst_cycle_time_us: cycle_times.last().copied().unwrap_or(0.0),
            median_cycle_time_us: median,
            fault_cycles: records.iter().filter(|r| r.faults != 0).count(),
        }
    }
}

impl std::fmt::Display for RunSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "cycles                {}", self.cycles)?;
        writeln!(f, "min tank energy       {:.9} J", self.min_tank_energy)?;
        match self.min_obstacle_distance {
            Some(d) => writeln!(f, "min obstacle distance {d:.6} m")?,
            None => writeln!(f, "min obstacle distance n/a")?,
        }
        writeln!(f, "final goal error      {:.6} m", self.final_goal_error)?;
        writeln!(f, "max |slack|           {:.6}", self.max_abs_slack)?;
        writeln!(
            f,
            "median cycle time     {:.1} us",
            self.median_cycle_time_us
        )?;
        writeln!(
            f,
            "worst cycle time      {:.1} us",
            self.worst_cycle_time_us
        )?;
        write!(f, "fault cycles          {}", self.fault_cycles)
    }
}
