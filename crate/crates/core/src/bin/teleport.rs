use std::f64::consts::PI;
use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use saw_teleport::config::{parse_config, serialize_config, ConfigError, RunConfig};
use saw_teleport::device::{validate_blueprint, GateMode};
use saw_teleport::output::{
    config_hash, timestamp, to_json, write_calibration_csv, write_outcomes_csv, write_profile_csv, write_sweep_csv, ReportEntry,
    RunManifest, MANIFEST_SCHEMA,
};
use saw_teleport::parallel;
use saw_teleport::propagator::EvolutionReport;
use saw_teleport::protocol::{
    algebra_agreement, calibrate_coupler_with, calibration_convergence, factorized_vs_full, run_protocol, snapshot_series,
    sweep_phi1_detailed, CouplerCalibration, ProtocolConfig, ProtocolError, ORACLE_POINT_LIMIT,
};
use saw_teleport::grid::write_snapshot_csv;

#[derive(Parser)]
#[command(name = "teleport", version, about = "Teleportation of SAW-driven electron qubits")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Full pipeline: outcome table, fidelity profile, optional snapshots.
    Run(RunArgs),
    /// Coupler phase calibration, optionally swept over plateau length.
    Calibrate(CalibrateArgs),
    /// Fidelity and coefficient moduli as a function of phi1.
    #[command(name = "sweep-phi1")]
    SweepPhi1(SweepArgs),
    /// Fidelity along the packet diagonal.
    Profile(Common),
    /// Factorization, algebra and convergence checks.
    Check(Common),
    /// Device blueprint tools.
    Blueprint {
        #[command(subcommand)]
        action: BlueprintAction,
    },
}

#[derive(Subcommand)]
enum BlueprintAction {
    /// Lists the elements and the validation diagnostics.
    Describe(Common),
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Ideal,
    Hybrid,
    Dynamic,
}

#[derive(Args, Clone)]
struct Common {
    /// Configuration file.
    config: PathBuf,
    /// Output directory, overriding `output.directory`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    phi1: Option<f64>,
    #[arg(long)]
    phi2: Option<f64>,
    /// Coupler treatment: matrix with gamma = pi, matrix with `--gamma`, or Coulomb dynamics.
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    /// Injected phase for hybrid mode (default 0.88 pi).
    #[arg(long)]
    gamma: Option<f64>,
    /// Measurement seed; switches to sampled measurement.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct CalibrateArgs {
    #[command(flatten)]
    common: Common,
    /// Coupler label.
    #[arg(long, default_value = "t12")]
    coupler: String,
    /// `plateau_length=a:b:n` sweep.
    #[arg(long)]
    sweep: Option<String>,
    /// Switch the Coulomb interaction off.
    #[arg(long)]
    no_interaction: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    /// Number of phi1 points on [0, 2 pi], overriding `output.sweep_points`.
    #[arg(long)]
    points: Option<usize>,
}

enum Failure {
    Config(String),
    Numerical(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

impl From<ProtocolError> for Failure {
    fn from(e: ProtocolError) -> Self {
        match e {
            ProtocolError::InvalidConfig(_) | ProtocolError::Device(_) | ProtocolError::OracleTooLarge { .. } => Failure::Config(e.to_string()),
            _ => Failure::Numerical(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Numerical(format!("i/o: {e}"))
    }
}

struct Session {
    command: String,
    run: RunConfig,
    cfg: ProtocolConfig,
    out: PathBuf,
    started: String,
    outputs: Vec<String>,
    reports: Vec<ReportEntry>,
}

impl Session {
    fn open(command: &str, c: &Common) -> Result<Self, Failure> {
        let text = fs::read_to_string(&c.config).map_err(|e| Failure::Config(format!("{}: {e}", c.config.display())))?;
        let (mut run, entries) = parse_config(&text)?;
        for e in &entries {
            eprintln!("{e}");
        }
        if let Some(v) = c.phi1 {
            run.protocol.phi1 = v;
        }
        if let Some(v) = c.phi2 {
            run.protocol.phi2 = v;
        }
        if let Some(seed) = c.seed {
            run.protocol.seed = Some(seed);
            run.protocol.measurement = saw_teleport::protocol::MeasurementKind::Sample;
        }
        match c.mode {
            Some(Mode::Ideal) => {
                run.coupler_mode = GateMode::Matrix;
                run.coupler_gamma = PI;
            }
            Some(Mode::Hybrid) => {
                run.coupler_mode = GateMode::Matrix;
                run.coupler_gamma = c.gamma.unwrap_or(0.88 * PI);
            }
            Some(Mode::Dynamic) => run.coupler_mode = GateMode::Dynamic,
            None => {
                if let Some(g) = c.gamma {
                    run.coupler_gamma = g;
                }
            }
        }
        if let Some(o) = &c.out {
            run.output.directory = o.display().to_string();
        }
        let cfg = run.protocol_config();
        cfg.validate()?;
        let out = PathBuf::from(&run.output.directory);
        fs::create_dir_all(&out)?;
        Ok(Self { command: command.into(), run, cfg, out, started: timestamp(), outputs: Vec::new(), reports: Vec::new() })
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), Failure> {
        fs::write(self.out.join(name), bytes)?;
        self.outputs.push(name.into());
        println!("wrote {}", self.out.join(name).display());
        Ok(())
    }

    fn report(&mut self, stage: &str, r: &EvolutionReport) {
        self.reports.push(ReportEntry::new(stage, r));
    }

    fn finish(self) -> Result<(), Failure> {
        let effective = serialize_config(&self.run);
        let manifest = RunManifest {
            schema: MANIFEST_SCHEMA.into(),
            command: self.command,
            config_hash: config_hash(&effective),
            code_version: env!("CARGO_PKG_VERSION").into(),
            seed: self.run.protocol.seed,
            started: self.started,
            finished: timestamp(),
            outputs: self.outputs,
            reports: self.reports,
            effective_config: effective,
        };
        fs::write(self.out.join("manifest.json"), to_json(&manifest))?;
        Ok(())
    }
}

fn csv<F: FnOnce(&mut Vec<u8>) -> std::io::Result<()>>(f: F) -> Result<Vec<u8>, Failure> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

fn cmd_run(a: &RunArgs) -> Result<(), Failure> {
    let mut s = Session::open("run", &a.common)?;
    let result = run_protocol(&s.cfg)?;
    for (stage, r) in &result.reports {
        s.report(stage, r);
    }
    s.write("result.json", to_json(&result).as_bytes())?;
    s.write("outcomes.csv", &csv(|b| write_outcomes_csv(b, &result))?)?;
    s.write("profile.csv", &csv(|b| write_profile_csv(b, &result.measurement.profile))?)?;
    if !s.run.output.snapshot_times.is_empty() {
        let rows = snapshot_series(&s.cfg, &s.run.output.snapshot_times)?;
        s.write("snapshots.csv", &csv(|b| write_snapshot_csv(b, &rows))?)?;
    }
    println!("mean fidelity {:.6}", result.measurement.mean_fidelity);
    s.finish()
}

fn parse_sweep(spec: &str) -> Result<(f64, f64, usize), Failure> {
    let bad = || Failure::Config(format!("--sweep expects plateau_length=a:b:n, got `{spec}`"));
    let rest = spec.strip_prefix("plateau_length=").ok_or_else(bad)?;
    let parts: Vec<&str> = rest.split(':').collect();
    if parts.len() != 3 {
        return Err(bad());
    }
    let a: f64 = parts[0].parse().map_err(|_| bad())?;
    let b: f64 = parts[1].parse().map_err(|_| bad())?;
    let n: usize = parts[2].parse().map_err(|_| bad())?;
    if n == 0 || !(a > 0.0) || !(b >= a) {
        return Err(bad());
    }
    Ok((a, b, n))
}

fn cmd_calibrate(a: &CalibrateArgs) -> Result<(), Failure> {
    let mut s = Session::open("calibrate", &a.common)?;
    let lengths: Vec<f64> = match &a.sweep {
        Some(spec) => {
            let (lo, hi, n) = parse_sweep(spec)?;
            (0..n).map(|k| if n == 1 { lo } else { lo + (hi - lo) * k as f64 / (n - 1) as f64 }).collect()
        }
        None => vec![s.cfg.blueprint.coupler(&a.coupler).map_err(ProtocolError::from)?.plateau_length],
    };
    let cfg = &s.cfg;
    let rows: Vec<Result<CouplerCalibration, ProtocolError>> = parallel::map(lengths, |len| {
        let mut bp = cfg.blueprint.clone();
        bp.coupler_mut(&a.coupler)?.plateau_length = len;
        calibrate_coupler_with(&bp, &a.coupler, &cfg.physical, &cfg.numerics, !a.no_interaction)
    });
    let rows: Vec<CouplerCalibration> = rows.into_iter().collect::<Result<_, _>>()?;
    for r in &rows {
        s.report(&format!("calibration L={}", r.plateau_length), &r.report);
        println!("L = {} nm: gamma = {:.6} rad ({:.4} pi), wrapped {:.4} pi", r.plateau_length, r.gamma, r.gamma / PI, r.gamma_wrapped / PI);
    }
    s.write("calibration.csv", &csv(|b| write_calibration_csv(b, &rows))?)?;
    s.finish()
}

fn cmd_sweep(a: &SweepArgs) -> Result<(), Failure> {
    let mut s = Session::open("sweep-phi1", &a.common)?;
    let n = a.points.unwrap_or(s.run.output.sweep_points).max(2);
    let phis: Vec<f64> = (0..n).map(|k| 2.0 * PI * k as f64 / (n - 1) as f64).collect();
    let detailed = sweep_phi1_detailed(&s.cfg, &phis)?;
    let rows: Vec<_> = detailed.iter().map(|(r, _)| *r).collect();
    for (_, m) in &detailed {
        s.report("sweep point", &m.report);
    }
    s.write("sweep.csv", &csv(|b| write_sweep_csv(b, &rows))?)?;
    s.finish()
}

fn cmd_profile(c: &Common) -> Result<(), Failure> {
    let mut s = Session::open("profile", c)?;
    let result = run_protocol(&s.cfg)?;
    for (stage, r) in &result.reports {
        s.report(stage, r);
    }
    s.write("profile.csv", &csv(|b| write_profile_csv(b, &result.measurement.profile))?)?;
    println!(
        "aggregate fidelity {:.6}, spread {:.3e}, window density {:.4}",
        result.measurement.profile_aggregate,
        result.measurement.profile_spread(),
        result.measurement.window_density
    );
    s.finish()
}

#[derive(Serialize)]
struct CheckReport {
    schema: &'static str,
    factorized_vs_full_overlap: Option<f64>,
    algebra_vs_dynamics_error: f64,
    convergence: Option<f64>,
    convergence_refinement: f64,
}

fn cmd_check(c: &Common) -> Result<(), Failure> {
    let mut s = Session::open("check", c)?;
    let overlap = if s.cfg.numerics.window_points() <= ORACLE_POINT_LIMIT {
        Some(factorized_vs_full(&s.cfg)?.overlap)
    } else {
        eprintln!("skipping the three-particle oracle: more than {ORACLE_POINT_LIMIT} points per axis");
        None
    };
    let mut matrix = s.cfg.clone();
    for cp in &mut matrix.blueprint.couplers {
        cp.mode = GateMode::Matrix;
    }
    for b in &mut matrix.blueprint.barriers {
        b.mode = GateMode::Matrix;
    }
    matrix.protocol.calibrate_dynamic = false;
    let res = run_protocol(&matrix)?;
    let algebra = algebra_agreement(&res, &matrix).max_error();
    let refinement = s.cfg.numerics.convergence_refinement;
    let convergence = match s.cfg.blueprint.couplers.iter().find(|c| c.mode == GateMode::Dynamic) {
        Some(cp) => Some(calibration_convergence(&s.cfg.blueprint, &cp.label, &s.cfg.physical, &s.cfg.numerics, refinement)?.deviation),
        None => None,
    };
    let report = CheckReport {
        schema: "saw-teleport/check/1",
        factorized_vs_full_overlap: overlap,
        algebra_vs_dynamics_error: algebra,
        convergence,
        convergence_refinement: refinement,
    };
    for (stage, r) in &res.reports {
        s.report(stage, r);
    }
    s.write("check.json", to_json(&report).as_bytes())?;
    s.finish()
}

fn cmd_describe(c: &Common) -> Result<(), Failure> {
    let text = fs::read_to_string(&c.config).map_err(|e| Failure::Config(format!("{}: {e}", c.config.display())))?;
    let (run, _) = parse_config(&text)?;
    let cfg = run.protocol_config();
    let bp = &cfg.blueprint;
    println!("{:<10} {:<8} {:>4} {:>10} {:>10}  detail", "label", "kind", "qubit", "y_start", "y_end");
    for s in &bp.splitters {
        println!("{:<10} {:<8} {:>4} {:>10.1} {:>10.1}  theta = {:.4}", s.label, "splitter", s.qubit.number(), s.y_position, s.y_position, s.theta);
    }
    for b in &bp.barriers {
        println!(
            "{:<10} {:<8} {:>4} {:>10.1} {:>10.1}  wire {} role {:?} mode {:?}",
            b.label,
            "barrier",
            b.qubit.number(),
            b.y_start,
            b.y_end(),
            b.wire,
            b.role,
            b.mode
        );
    }
    for cp in &bp.couplers {
        println!(
            "{:<10} {:<8} {:>2}{:>2} {:>10.1} {:>10.1}  plateau {} nm at {} nm, mode {:?}",
            cp.label,
            "coupler",
            cp.pair[0].number(),
            cp.pair[1].number(),
            cp.y_start,
            cp.y_end(),
            cp.plateau_length,
            cp.plateau_separation,
            cp.mode
        );
    }
    println!("rotation stage at {} nm, detectors at {} nm", bp.rotation_stage_y, bp.measurement_y);
    let diag = validate_blueprint(bp);
    println!("closest inter-wire approach {:.3} nm", diag.min_approach_distance);
    for i in &diag.issues {
        println!("issue: {}", i.message);
    }
    if diag.is_clean() {
        Ok(())
    } else {
        Err(Failure::Config("blueprint has issues".into()))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let workers = match std::env::var("TELEPORT_WORKERS") {
        Ok(v) => match v.parse::<usize>() {
            Ok(n) if n > 0 => Some(n),
            _ => {
                eprintln!("error: TELEPORT_WORKERS must be a positive integer, got `{v}`");
                return ExitCode::from(2);
            }
        },
        Err(_) => None,
    };
    if let Err(e) = parallel::configure_workers(workers) {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    let res = match &cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Calibrate(a) => cmd_calibrate(a),
        Command::SweepPhi1(a) => cmd_sweep(a),
        Command::Profile(c) => cmd_profile(c),
        Command::Check(c) => cmd_check(c),
        Command::Blueprint { action: BlueprintAction::Describe(c) } => cmd_describe(c),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("configuration error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Numerical(m)) => {
            eprintln!("numerical failure: {m}");
            ExitCode::from(1)
        }
    }
}
