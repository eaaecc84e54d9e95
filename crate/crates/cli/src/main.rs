use std::fmt::Write as _;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use bimanual::bridge::{BridgeError, Pacing, ServeOptions, Server, DEFAULT_DECIMATION, DEFAULT_ENDPOINT, ENDPOINT_ENV};
use bimanual::model::{load_model, ModelFile};
use bimanual::qp::write_text;
use bimanual::retarget::{build_inequalities, DecisionState, Linearization, RetargetConfig};
use bimanual::sim::{cycle_times, write_csv, Fidelity, LogRecord, Pipeline, Scenario, SimError, TimingReport};
use bimanual::Wrench;

#[derive(Parser)]
#[command(name = "bimanual", version, about = "Dual-arm teleoperation control stack")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario offline and write its per-cycle log.
    Run(RunArgs),
    /// Run a scenario's setup live, steered by a client over TCP.
    Serve(ServeArgs),
    /// Report per-cycle compute-time percentiles.
    Bench(BenchArgs),
    /// Load a model file and report what the retargeter will see.
    ValidateModel(ValidateArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum FidelityArg {
    QuasiStatic,
    PenaltyDynamics,
}

#[derive(Clone, Copy, ValueEnum)]
enum Toggle {
    On,
    Off,
}

#[derive(Args)]
struct Overrides {
    /// Plant model used in place of the scenario's.
    #[arg(long, value_enum)]
    fidelity: Option<FidelityArg>,
    /// Turn motion adaptation on or off regardless of the scenario.
    #[arg(long, value_enum)]
    adaptation: Option<Toggle>,
    /// Seed for the sensor-noise generator.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct RunArgs {
    /// Scenario file (TOML).
    scenario: PathBuf,
    /// CSV log destination; `-` writes to standard output.
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Evaluate the scenario's embedded checks; exit 1 if any fails.
    #[arg(long)]
    check: bool,
    #[command(flatten)]
    overrides: Overrides,
    /// Write the QP of cycle `--dump-cycle` in plain-text form.
    #[arg(long, value_name = "FILE")]
    dump_qp: Option<PathBuf>,
    #[arg(long, default_value_t = 0, requires = "dump_qp")]
    dump_cycle: usize,
    /// Write the active inequality rows of every cycle.
    #[arg(long, value_name = "FILE")]
    dump_active: Option<PathBuf>,
}

#[derive(Args)]
struct ServeArgs {
    /// Scenario providing the model, object, start pose and controller
    /// settings; its command stream is ignored.
    scenario: PathBuf,
    #[arg(long, env = ENDPOINT_ENV, default_value = DEFAULT_ENDPOINT)]
    endpoint: String,
    /// Publish telemetry every N-th cycle.
    #[arg(long, default_value_t = DEFAULT_DECIMATION as u64, value_parser = clap::value_parser!(u64).range(1..))]
    decimation: u64,
    /// Stop after this many cycles.
    #[arg(long)]
    max_cycles: Option<u64>,
    /// Run cycles back to back instead of at the scenario rate.
    #[arg(long)]
    unpaced: bool,
    /// Do not start the loop until the first command arrives.
    #[arg(long)]
    wait_for_command: bool,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args)]
struct BenchArgs {
    /// Scenario whose command stream drives the pipeline.
    scenario: PathBuf,
    #[arg(long, default_value_t = 10_000)]
    cycles: usize,
    /// QP iteration budget per cycle.
    #[arg(long)]
    qp_iterations: Option<usize>,
    /// Exit 1 when p99 exceeds `--budget-us`.
    #[arg(long)]
    check: bool,
    #[arg(long, default_value_t = 1000.0)]
    budget_us: f64,
}

#[derive(Args)]
struct ValidateArgs {
    /// Model file (TOML).
    model: PathBuf,
}

/// Process exit classes: 1 check failure, 2 bad input, 3 internal error.
enum Failure {
    Checks,
    Input(String),
    Internal(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Checks => 1,
            Failure::Input(_) => 2,
            Failure::Internal(_) => 3,
        }
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        if e.is_input_error() {
            Failure::Input(e.to_string())
        } else {
            Failure::Internal(e.to_string())
        }
    }
}

impl From<BridgeError> for Failure {
    fn from(e: BridgeError) -> Self {
        match e {
            BridgeError::Sim(e) => e.into(),
            e @ BridgeError::Bind { .. } => Failure::Input(e.to_string()),
            e => Failure::Internal(e.to_string()),
        }
    }
}

fn io_error(path: &Path, e: io::Error) -> Failure {
    Failure::Input(format!("{}: {e}", path.display()))
}

fn load_scenario(path: &Path, o: &Overrides) -> Result<Scenario, Failure> {
    let mut sc = Scenario::load(path)?;
    if let Some(f) = o.fidelity {
        sc.plant.fidelity = match f {
            FidelityArg::QuasiStatic => Fidelity::QuasiStatic,
            FidelityArg::PenaltyDynamics => Fidelity::PenaltyDynamics,
        };
    }
    if let Some(a) = o.adaptation {
        sc.adaptation = matches!(a, Toggle::On);
    }
    if let Some(seed) = o.seed {
        sc.seed = seed;
    }
    Ok(sc)
}

fn create(path: &Path) -> Result<Box<dyn Write>, Failure> {
    if path == Path::new("-") {
        return Ok(Box::new(BufWriter::new(io::stdout().lock())));
    }
    Ok(Box::new(BufWriter::new(File::create(path).map_err(|e| io_error(path, e))?)))
}

fn run(args: &RunArgs) -> Result<(), Failure> {
    let sc = load_scenario(&args.scenario, &args.overrides)?;
    let clock = Instant::now();
    let mut pipeline = Pipeline::new(&sc)?;
    let mut active = match &args.dump_active {
        Some(p) => Some(create(p)?),
        None => None,
    };
    let cycles = sc.cycles();
    if args.dump_qp.is_some() && args.dump_cycle >= cycles {
        return Err(Failure::Input(format!("--dump-cycle {} is past the last cycle {}", args.dump_cycle, cycles - 1)));
    }
    let mut records: Vec<LogRecord> = Vec::with_capacity(cycles);
    for k in 0..cycles {
        let t = k as f64 * sc.dt;
        let dump_now = args.dump_qp.is_some() && k == args.dump_cycle;
        pipeline.set_capture(dump_now);
        records.push(pipeline.cycle(&sc.input_at(t), sc.disturbance_at(t)));
        if let (true, Some(path)) = (dump_now, &args.dump_qp) {
            dump_qp(&pipeline, k, t, path)?;
        }
        if let Some(out) = active.as_mut() {
            let rows: Vec<String> = pipeline.active_rows().iter().map(ToString::to_string).collect();
            writeln!(out, "{t},{}", rows.join(" ")).map_err(|e| Failure::Internal(e.to_string()))?;
        }
    }
    if let Some(mut out) = active {
        out.flush().map_err(|e| Failure::Internal(e.to_string()))?;
    }
    let runtime = clock.elapsed().as_secs_f64();

    if let Some(path) = &args.output {
        write_csv(&records, sc.dual.dof(), create(path)?).map_err(|e| io_error(path, e))?;
    }
    let count = |f: fn(&LogRecord) -> bool| records.iter().filter(|r| f(r)).count();
    eprintln!(
        "{}: {} cycles in {runtime:.2} s; torque_violation {}, slippage {}, crash {}, clamped {}",
        sc.name,
        records.len(),
        count(|r| r.flags.torque_violation),
        count(|r| r.flags.slippage),
        count(|r| r.flags.crash),
        count(|r| r.clamped),
    );
    if args.check {
        let results = sc.checks.evaluate(&records, runtime);
        for c in &results {
            println!("{} {} {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
        }
        if results.iter().any(|c| !c.passed) {
            return Err(Failure::Checks);
        }
    }
    Ok(())
}

fn dump_qp(pipeline: &Pipeline, k: usize, t: f64, path: &Path) -> Result<(), Failure> {
    let (problem, rows) = pipeline
        .captured()
        .ok_or_else(|| Failure::Input("adaptation is off, so there is no QP to dump".into()))?;
    let mut text = String::new();
    let _ = writeln!(text, "# cycle {k}, t = {t} s");
    let _ = writeln!(text, "# inequality rows: {}", rows.labels.iter().map(ToString::to_string).collect::<Vec<_>>().join(" "));
    write_text(problem, &mut text);
    std::fs::write(path, text).map_err(|e| io_error(path, e))
}

fn serve(args: &ServeArgs) -> Result<(), Failure> {
    let sc = load_scenario(&args.scenario, &args.overrides)?;
    let options = ServeOptions {
        decimation: args.decimation as usize,
        pacing: if args.unpaced { Pacing::Unpaced } else { Pacing::Realtime },
        wait_for_command: args.wait_for_command,
        max_cycles: args.max_cycles,
        ..ServeOptions::default()
    };
    let server = Server::bind(&sc, &args.endpoint, options)?;
    eprintln!("{}: listening on {}", sc.name, server.local_addr());
    let summary = server.run()?;
    eprintln!("{} cycles, {} telemetry frames dropped", summary.cycles, summary.telemetry_dropped);
    Ok(())
}

fn bench(args: &BenchArgs) -> Result<(), Failure> {
    if args.cycles == 0 {
        return Err(Failure::Input("--cycles must be positive".into()));
    }
    let mut sc = Scenario::load(&args.scenario)?;
    if let Some(it) = args.qp_iterations {
        sc.retarget.qp.max_iterations = it;
    }
    let r = TimingReport::from_samples(&cycle_times(&sc, args.cycles)?);
    println!("scenario   {}", sc.name);
    println!("decision   d = {}", sc.dual.dof() + 12);
    println!("cycles     {}", r.cycles);
    println!("p50        {:.1} us", r.p50);
    println!("p95        {:.1} us", r.p95);
    println!("p99        {:.1} us", r.p99);
    println!("max        {:.1} us", r.max);
    println!("mean       {:.1} us", r.mean);
    if args.check {
        let ok = r.p99 <= args.budget_us;
        println!("{} p99 {:.1} us (budget {} us)", if ok { "PASS" } else { "FAIL" }, r.p99, args.budget_us);
        if !ok {
            return Err(Failure::Checks);
        }
    }
    Ok(())
}

fn validate_model(args: &ValidateArgs) -> Result<(), Failure> {
    let ModelFile { dual, object } = load_model(&args.model).map_err(|e| Failure::Input(e.to_string()))?;
    let n = dual.dof();
    let mid = (dual.q_min() + dual.q_max()) * 0.5;
    let m = dual.mass_matrix(mid.as_slice());
    if m.clone().cholesky().is_none() {
        return Err(Failure::Input("mass matrix is not positive definite at mid-range joint positions".into()));
    }
    let state = DecisionState { q: mid, lambda_l: Wrench::zero(), lambda_r: Wrench::zero() };
    let lin = Linearization::compute(&dual, &object, &state);
    let rows = build_inequalities(&dual, &object, &state, &lin, &RetargetConfig::default());
    println!("joints     {} (left {}, right {})", n, dual.left.dof(), dual.right.dof());
    println!("decision   d = {}", n + 12);
    println!("rows       {} joint, {} contact", rows.joint_rows, rows.contact_rows);
    let tau: Vec<String> = dual.tau_max().iter().map(|t| format!("{t}")).collect();
    println!("tau_max    [{}] N·m", tau.join(", "));
    println!("object     {} kg, friction {}", object.mass, object.friction_mu);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(a) => run(a),
        Command::Serve(a) => serve(a),
        Command::Bench(a) => bench(a),
        Command::ValidateModel(a) => validate_model(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Checks => {}
                Failure::Input(m) => eprintln!("error: {m}"),
                Failure::Internal(m) => eprintln!("internal error: {m}"),
            }
            ExitCode::from(f.code())
        }
    }
}
