use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand};
use tankbarrier::log::{write_csv, write_jsonl};
use tankbarrier::{RunSummary, Scenario, Simulation};
use tankbarrier_service::{LiveService, ServiceConfig};

const BENCH_SCENARIO: &str = include_str!("../../../scenarios/six_axis_timing.json");

#[derive(Parser)]
#[command(
    name = "tankbarrier",
    version,
    about = "Passivity-preserving admittance control with barrier functions"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario to completion and write its log.
    Run {
        scenario: PathBuf,
        /// Log file; `.jsonl` selects JSON lines, anything else CSV. Without
        /// it the CSV goes to stdout unless only a summary is requested.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Print a run summary.
        #[arg(long)]
        summary: bool,
        /// Log wall-clock fields as zero so that logs are reproducible.
        #[arg(long)]
        no_timing: bool,
    },
    /// Serve the scenario live over WebSocket.
    Serve {
        scenario: PathBuf,
        #[arg(long, env = "TANKBARRIER_PORT", default_value_t = 8765)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: std::net::IpAddr,
        /// State broadcast rate.
        #[arg(long, default_value_t = 62.5)]
        rate_hz: f64,
    },
    /// Check a scenario file without running it.
    Validate { scenario: PathBuf },
    /// Measure control-cycle times (six joints, eight tasks by default).
    Bench {
        /// Number of cycles to time.
        #[arg(long, default_value_t = 5000)]
        n: usize,
        /// Scenario to time instead of the built-in one.
        #[arg(long)]
        scenario: Option<PathBuf>,
        /// Print the result as one JSON object.
        #[arg(long)]
        json: bool,
    },
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_writer(io::stderr)
        .with_target(false)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Cmd::Run {
            scenario,
            out,
            summary,
            no_timing,
        } => run(&scenario, out.as_deref(), summary, no_timing),
        Cmd::Serve {
            scenario,
            port,
            host,
            rate_hz,
        } => serve(&scenario, SocketAddr::new(host, port), rate_hz),
        Cmd::Validate { scenario } => validate(&scenario),
        Cmd::Bench { n, scenario, json } => bench(n, scenario.as_deref(), json),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

type Result<T> = std::result::Result<T, Box<dyn std::error::Error>>;

fn load(path: &Path) -> Result<Scenario> {
    Scenario::load(path).map_err(|e| format!("{}: {e}", path.display()).into())
}

fn run(path: &Path, out: Option<&Path>, summary: bool, no_timing: bool) -> Result<()> {
    let mut sim = Simulation::new(load(path)?)?;
    sim.set_record_timing(!no_timing);
    let layout = sim.layout();
    let records = sim.run()?;
    match out {
        Some(p) => {
            let w = BufWriter::new(File::create(p).map_err(|e| format!("{}: {e}", p.display()))?);
            if p.extension().is_some_and(|e| e == "jsonl") {
                write_jsonl(w, &records)?;
            } else {
                write_csv(w, &layout, &records)?;
            }
        }
        None if !summary => write_csv(io::stdout().lock(), &layout, &records)?,
        None => {}
    }
    if summary {
        println!("{}", RunSummary::from_records(&records));
    }
    Ok(())
}

fn validate(path: &Path) -> Result<()> {
    let scenario = load(path)?;
    let sim = Simulation::new(scenario.clone())?;
    println!(
        "ok: {:?}, {} joints, {} tasks, {} cycles of {} s",
        scenario.name,
        sim.model().dof(),
        sim.controller().tasks().len(),
        scenario.cycles(),
        scenario.dt()
    );
    Ok(())
}

fn serve(path: &Path, addr: SocketAddr, rate_hz: f64) -> Result<()> {
    if !(rate_hz.is_finite() && rate_hz > 0.0) {
        return Err(format!("rate must be positive, got {rate_hz}").into());
    }
    let config = ServiceConfig {
        broadcast_interval: Duration::from_secs_f64(1.0 / rate_hz),
        ..ServiceConfig::default()
    };
    let service = LiveService::start(load(path)?, config)?;
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr).await?;
        tracing::info!("listening on ws://{}/ws", listener.local_addr()?);
        let engine = service
            .serve(listener, async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        tracing::info!("stopped after {} cycles", engine.simulation().cycle());
        Ok(())
    })
}

fn percentile(sorted: &[f64], p: f64) -> f64 {
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

fn bench(n: usize, path: Option<&Path>, json: bool) -> Result<()> {
    if n == 0 {
        return Err("need at least one cycle".into());
    }
    let scenario = match path {
        Some(p) => load(p)?,
        None => Scenario::from_json(BENCH_SCENARIO)?,
    };
    let mut sim = Simulation::new(scenario)?;
    let (dof, tasks) = (sim.model().dof(), sim.controller().tasks().len());
    let mut solve = Vec::with_capacity(n);
    let mut cycle = Vec::with_capacity(n);
    let mut faults = 0;
    while cycle.len() < n {
        if sim.finished() {
            sim.reset()?;
        }
        let r = sim.step()?;
        solve.push(r.solve_time_us);
        cycle.push(r.cycle_time_us);
        faults += usize::from(r.faults != 0);
    }
    solve.sort_by(f64::total_cmp);
    cycle.sort_by(f64::total_cmp);
    let stats = |v: &[f64]| (percentile(v, 50.0), percentile(v, 99.0), v[v.len() - 1]);
    let (s50, s99, smax) = stats(&solve);
    let (c50, c99, cmax) = stats(&cycle);
    let within = c50 < 2000.0 && c99 < 4000.0;
    let mut out = io::stdout().lock();
    if json {
        let v = serde_json::json!({
            "dof": dof, "tasks": tasks, "cycles": n, "fault_cycles": faults,
            "solve_us": {"median": s50, "p99": s99, "max": smax},
            "cycle_us": {"median": c50, "p99": c99, "max": cmax},
            "within_budget": within,
        });
        writeln!(out, "{v}")?;
    } else {
        writeln!(
            out,
            "{n} cycles, {dof} joints, {tasks} tasks, {faults} fault cycles"
        )?;
        writeln!(
            out,
            "qp solve   median {s50:8.1} us  p99 {s99:8.1} us  max {smax:8.1} us"
        )?;
        writeln!(
            out,
            "full cycle median {c50:8.1} us  p99 {c99:8.1} us  max {cmax:8.1} us"
        )?;
        writeln!(
            out,
            "budget (median < 2000 us, p99 < 4000 us): {}",
            if within { "met" } else { "missed" }
        )?;
    }
    Ok(())
}
