use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use corridor_core::algorithms::{build_algorithm, parse_params, ALGORITHMS};
use corridor_core::gateway::{serve, ServeOptions, DEFAULT_PORT};
use corridor_core::trace;
use corridor_core::tracking::evaluate;
use corridor_core::{DeploymentConfig, Engine, FloorTopology, RunOutput, Scenario, SimConfig, Trace, TraceRecord};

#[derive(Parser)]
#[command(name = "corridor-sim", version, about = "Sensor-floor hallway simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario.
    Run(RunArgs),
    /// Drive an algorithm from a recorded trace.
    Replay(ReplayArgs),
    /// Score an algorithm against the ground truth stored in a trace.
    Eval(EvalArgs),
    /// List the available algorithms.
    Algorithms,
}

#[derive(Args)]
struct AlgoArgs {
    #[arg(long, default_value = "centroid-tracker")]
    algorithm: String,
    /// Algorithm parameter as key=value; repeatable.
    #[arg(long = "param", value_name = "KEY=VALUE")]
    params: Vec<String>,
}

#[derive(Args)]
struct ServeArgs {
    /// Serve the run to gateway clients, e.g. `--serve :9910`.
    #[arg(long, value_name = "ADDR", num_args = 0..=1, default_missing_value = ":9910")]
    serve: Option<String>,
    /// Simulated seconds per wall second while serving.
    #[arg(long, default_value_t = 1.0)]
    speed: f64,
    /// Serve as fast as the engine runs instead of pacing.
    #[arg(long)]
    fast: bool,
    /// Start with the clock stopped until a controller sends RESUME.
    #[arg(long)]
    paused: bool,
    /// Floor delta rate for subscribers that do not pick one.
    #[arg(long, default_value_t = 10.0)]
    floor_rate: f64,
}

#[derive(Args)]
struct RunArgs {
    /// Floor and radio config (key=value lines); defaults to the standard floor.
    #[arg(long)]
    floor: Option<PathBuf>,
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[command(flatten)]
    algo: AlgoArgs,
    /// Sample rate in Hz.
    #[arg(long, default_value_t = 8)]
    rate: u32,
    /// Run length in seconds; defaults to one second past the last waypoint.
    #[arg(long)]
    duration: Option<f64>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Write a trace of the run.
    #[arg(long)]
    record: Option<PathBuf>,
    /// Include walker ground truth in the trace.
    #[arg(long)]
    truth: bool,
    #[command(flatten)]
    serve: ServeArgs,
}

#[derive(Args)]
struct ReplayArgs {
    trace: PathBuf,
    #[command(flatten)]
    algo: AlgoArgs,
    #[arg(long)]
    floor: Option<PathBuf>,
    /// Re-record the replay (samples, PIR, truth and the new actuations).
    #[arg(long)]
    record: Option<PathBuf>,
    #[command(flatten)]
    serve: ServeArgs,
}

#[derive(Args)]
struct EvalArgs {
    trace: PathBuf,
    #[command(flatten)]
    algo: AlgoArgs,
    #[arg(long)]
    floor: Option<PathBuf>,
    /// Ignore frames before this many seconds (baseline warmup).
    #[arg(long, default_value_t = 5.0)]
    from: f64,
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CORRIDOR_SIM_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = match cli.cmd {
        Command::Run(a) => run(a),
        Command::Replay(a) => replay(a),
        Command::Eval(a) => eval(a),
        Command::Algorithms => {
            for a in ALGORITHMS {
                println!("{a}");
            }
            Ok(())
        }
    };
    if let Err(e) = result {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn deployment(floor: Option<&Path>) -> Result<(Arc<FloorTopology>, DeploymentConfig)> {
    let cfg = match floor {
        Some(p) => DeploymentConfig::load(p).with_context(|| format!("loading floor config {}", p.display()))?,
        None => DeploymentConfig::default(),
    };
    let topo = corridor_core::build_floor(&cfg.floor, &cfg.radio).context("building floor")?;
    Ok((Arc::new(topo), cfg))
}

fn bind_addr(s: &str) -> String {
    if s.starts_with(':') {
        format!("0.0.0.0{s}")
    } else if s.parse::<u16>().is_ok() {
        format!("0.0.0.0:{s}")
    } else {
        s.to_string()
    }
}

fn run(a: RunArgs) -> Result<()> {
    let (topo, dep) = deployment(a.floor.as_deref())?;
    let scenario = match &a.scenario {
        Some(p) => Scenario::load(p).with_context(|| format!("loading scenario {}", p.display()))?,
        None => Scenario::default(),
    };
    let duration = match a.duration {
        Some(d) if d < 0.0 => bail!("duration must not be negative"),
        Some(d) => Some(d),
        // an open-ended run only makes sense with clients attached
        None if a.serve.serve.is_some() && scenario.walkers.is_empty() => None,
        None => Some(scenario.walkers.iter().map(|w| w.end_s()).fold(0.0, f64::max).ceil() + 1.0),
    };
    let mut cfg = SimConfig::new(a.rate, duration.unwrap_or(0.0), a.seed);
    cfg.duration_us = duration.map(|d| (d * 1e6).round() as u64);
    let models = scenario.sensor_models(topo.sensors.len(), a.seed)?;
    let params = parse_params(&a.algo.params).map_err(anyhow::Error::msg)?;
    let factory = build_algorithm(&a.algo.algorithm, &params, &topo, &models, a.rate).map_err(anyhow::Error::msg)?;
    let engine = Engine::new(topo, dep.radio, &scenario, cfg, factory)?;

    if let Some(addr) = &a.serve.serve {
        let record = a.record.clone().map(|p| (p, a.truth));
        return serve_engine(engine, addr, &a.serve, record);
    }
    let out = engine.run();
    if let Some(path) = &a.record {
        trace::record(path, &out.header, &out.trace_records(a.truth))?;
        info!("trace written to {}", path.display());
    }
    summarize(&out, Some(5_000_000));
    Ok(())
}

fn replay_engine(path: &Path, algo: &AlgoArgs, floor: Option<&Path>) -> Result<Engine> {
    let (topo, dep) = deployment(floor)?;
    let trace = Trace::load(path).with_context(|| format!("loading trace {}", path.display()))?;
    let params = parse_params(&algo.params).map_err(anyhow::Error::msg)?;
    let factory =
        build_algorithm(&algo.algorithm, &params, &topo, &[], trace.header.rate_hz).map_err(anyhow::Error::msg)?;
    Ok(Engine::replay(topo, dep.radio, &trace, Vec::new(), factory)?)
}

fn replay(a: ReplayArgs) -> Result<()> {
    let engine = replay_engine(&a.trace, &a.algo, a.floor.as_deref())?;
    if let Some(addr) = &a.serve.serve {
        let record = a.record.clone().map(|p| (p, true));
        return serve_engine(engine, addr, &a.serve, record);
    }
    let out = engine.run();
    if let Some(path) = &a.record {
        trace::record(path, &out.header, &out.trace_records(true))?;
    }
    summarize(&out, Some(5_000_000));
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let engine = replay_engine(&a.trace, &a.algo, a.floor.as_deref())?;
    let out = engine.run();
    if !out.outputs.iter().any(|o| matches!(o.trace_record(), Some(TraceRecord::Truth(_)))) {
        bail!("{} has no ground truth; record it with --truth", a.trace.display());
    }
    let tracks: Vec<_> = out.tracks().copied().collect();
    let m = evaluate(&tracks, &out.truth_frames(), (a.from * 1e6).round() as u64);
    print!("{}", m.report());
    println!();
    print!("{}", m.key_values());
    Ok(())
}

fn summarize(out: &RunOutput, warmup_us: Option<u64>) {
    println!("samples      {}", out.stats.samples);
    println!("events       {}", out.stats.processed);
    println!("actuations   {}", out.actuations().count());
    println!("track events {}", out.tracks().count());
    let errors = out.errors().count();
    if errors > 0 {
        println!("node errors  {errors}");
    }
    println!("digest       {}", out.digest());
    let truth = out.truth_frames();
    if let Some(from) = warmup_us {
        if truth.iter().any(|f| !f.walkers.is_empty()) {
            let tracks: Vec<_> = out.tracks().copied().collect();
            let m = evaluate(&tracks, &truth, from);
            println!();
            print!("{}", m.report());
        }
    }
}

fn serve_engine(engine: Engine, addr: &str, s: &ServeArgs, record: Option<(PathBuf, bool)>) -> Result<()> {
    if !s.fast && !(s.speed > 0.0) {
        bail!("--speed must be positive");
    }
    let bounded = engine.config().duration_us.is_some();
    let opts = ServeOptions {
        floor_rate_hz: s.floor_rate,
        speed: (!s.fast).then_some(s.speed),
        start_paused: s.paused,
        record,
        ..ServeOptions::default()
    };
    let h = serve(engine, bind_addr(addr), opts).context("starting gateway")?;
    eprintln!("serving on {} (default port {DEFAULT_PORT})", h.local_addr());
    if bounded {
        h.wait_finished(None);
        // give writers a moment to flush the final messages
        std::thread::sleep(Duration::from_millis(300));
        let st = h.stats();
        println!("samples      {}", st.samples);
        println!("sim time     {:.3} s", st.sim_us as f64 * 1e-6);
        h.shutdown();
    } else {
        loop {
            std::thread::sleep(Duration::from_secs(3600));
        }
    }
    Ok(())
}
