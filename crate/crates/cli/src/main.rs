//! `omniwpt`: command-line front end for the simulator.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use omniwpt::arraydesign::{self, DEFAULT_K_THRESHOLD};
use omniwpt::controlloop::{self, ArrayModel, Sensing, Trajectory};
use omniwpt::echo::NoiseSource;
use omniwpt::magnetics::{Pose, Vec3};
use omniwpt::paspectrum;
use omniwpt::report::{self, Table};
use omniwpt::scenario::{self, ScenarioConfig, ScenarioError};
use omniwpt::sweep::{self, PoseRegion};

#[derive(Parser)]
#[command(name = "omniwpt", version, about = "Multi-coil magnetoelectric wireless power transfer simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Scenario file; the bundled default when omitted.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Overrides the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (created if missing).
    #[arg(long, default_value = ".")]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
    /// Overrides the channel deactivation ratio.
    #[arg(long)]
    threshold: Option<f64>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Svg,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SweepKind {
    Rotation,
    Lateral,
    CurrentGrid,
}

#[derive(Subcommand)]
enum Command {
    /// Find the cancellation distance of the first coil and emit a 3-coil layout.
    DesignArray {
        #[command(flatten)]
        common: Common,
        /// Search bracket for the center distance, mm (defaults to 0.5 and 2 loop radii).
        #[arg(long, num_args = 2, value_names = ["MIN", "MAX"])]
        bracket: Option<Vec<f64>>,
    },
    /// Closed-loop tracking run over the scenario trajectory.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        activation_hz: Option<f64>,
    },
    /// Baseline sweeps and the manual current-ratio sweep.
    Sweep {
        #[arg(value_enum)]
        kind: SweepKind,
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 19)]
        steps: usize,
    },
    /// Echo-loop allocation against the brute-force current grid.
    OracleSweep {
        #[command(flatten)]
        common: Common,
        /// Grid points per axis.
        #[arg(long, default_value_t = 201)]
        steps: usize,
        /// Random poses after the fixed reference pose.
        #[arg(long, default_value_t = 50)]
        poses: usize,
    },
    /// Fundamental loss and third-harmonic suppression against duty.
    PaSpectrum {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 91)]
        steps: usize,
    },
    /// Parse and validate a scenario file.
    ValidateScenario {
        #[command(flatten)]
        common: Common,
    },
}

struct Failure {
    kind: &'static str,
    message: String,
    details: Vec<Value>,
    code: u8,
}

impl Failure {
    fn runtime(kind: &'static str, e: impl std::fmt::Display) -> Self {
        Self { kind, message: e.to_string(), details: Vec::new(), code: 1 }
    }
}

impl From<ScenarioError> for Failure {
    fn from(e: ScenarioError) -> Self {
        let details = match &e {
            ScenarioError::Invalid(errs) => errs.iter().map(|f| json!({"path": f.path, "rule": f.rule})).collect(),
            ScenarioError::Syntax { line, column, message } => {
                vec![json!({"line": line, "column": column, "message": message})]
            }
            _ => Vec::new(),
        };
        Self { kind: "scenario", message: e.to_string(), details, code: 2 }
    }
}

macro_rules! runtime_from {
    ($($t:ty => $k:literal),* $(,)?) => {$(
        impl From<$t> for Failure {
            fn from(e: $t) -> Self { Failure::runtime($k, e) }
        }
    )*};
}

runtime_from! {
    controlloop::ProtocolError => "simulation",
    arraydesign::ArrayDesignError => "array_design",
    paspectrum::SpectrumError => "spectrum",
    report::ReportError => "output",
}

type Outcome = Result<Value, Failure>;

fn load(common: &Common) -> Result<ScenarioConfig, Failure> {
    let mut sc = match &common.scenario {
        Some(p) => ScenarioConfig::load(p)?,
        None => ScenarioConfig::bundled_default(),
    };
    if let Some(seed) = common.seed {
        sc.seed = seed;
    }
    if let Some(t) = common.threshold {
        sc.deactivation_threshold = t;
    }
    sc.validate()?;
    Ok(sc)
}

fn sensing(sc: &ScenarioConfig) -> Sensing {
    if sc.rx_chain.noise_enabled {
        Sensing::Quantized(NoiseSource::Seeded(sc.seed))
    } else {
        Sensing::Quantized(NoiseSource::Noiseless)
    }
}

fn prepare_out(dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir)
        .map_err(|e| Failure::runtime("output", format!("cannot create `{}`: {e}", dir.display())))
}

fn emit(table: &Table, common: &Common, stem: &str, title: &str) -> Result<PathBuf, Failure> {
    prepare_out(&common.out)?;
    let path = match common.format {
        Format::Csv => {
            let p = common.out.join(format!("{stem}.csv"));
            table.write_csv(&p)?;
            p
        }
        Format::Svg => {
            let p = common.out.join(format!("{stem}.svg"));
            report::write_svg(table, title, &p)?;
            p
        }
    };
    Ok(path)
}

fn design_array(common: &Common, bracket: Option<Vec<f64>>) -> Outcome {
    let sc = load(common)?;
    let coil = &sc.coils[0];
    let r = coil.loop_radius_mm;
    let (lo, hi) = bracket.map_or((0.5 * r, 2.0 * r), |b| (b[0], b[1]));
    let d = arraydesign::find_cancellation_distance(coil, (lo, hi))?;
    let coils = arraydesign::layout_three_coils(coil, d);
    let rep = arraydesign::validate_array(&coils, sc.omega(), DEFAULT_K_THRESHOLD)?;
    let text = scenario::coils_fragment(&coils)?;
    prepare_out(&common.out)?;
    let path = common.out.join("array.toml");
    let header = format!("# Cancellation distance {d:.6} mm, max pairwise |k| {:.3e}\n", rep.max_abs_k);
    std::fs::write(&path, header + &text)
        .map_err(|e| Failure::runtime("output", format!("{}: {e}", path.display())))?;
    Ok(json!({
        "distance_mm": d,
        "max_abs_k": rep.max_abs_k,
        "perturbation_fraction": rep.perturbation_fraction,
        "flagged": rep.any_flagged(),
        "output": path,
    }))
}

fn simulate(common: &Common, activation_hz: Option<f64>) -> Outcome {
    let sc = load(common)?;
    let model = ArrayModel::from_scenario(&sc)?;
    let traj = Trajectory::from_spec(&sc.simulation)?;
    let hz = activation_hz.unwrap_or(sc.protocol.activation_hz);
    if !(hz > 0.0 && hz <= sc.simulation.sample_hz) {
        return Err(Failure {
            kind: "usage",
            message: format!("--activation-hz must lie in (0, {}]", sc.simulation.sample_hz),
            details: Vec::new(),
            code: 2,
        });
    }
    let run = controlloop::run_tracking(&sc, &model, &traj, hz, sensing(&sc))?;
    let table = report::run_log_table(&run);
    let path = emit(&table, common, "run_log", "tracking run")?;
    Ok(json!({
        "samples": run.samples.len(),
        "ae_updates": run.ae_updates,
        "retries": run.retries,
        "delivered_J": run.delivered_j,
        "ideal_delivered_J": run.ideal_delivered_j,
        "energy_loss_fraction": run.energy_loss_fraction(),
        "interruption_fraction": run.interruption_fraction(),
        "output": path,
    }))
}

fn run_sweep(common: &Common, kind: SweepKind, steps: usize) -> Outcome {
    let sc = load(common)?;
    let model = ArrayModel::from_scenario(&sc)?;
    let steps = steps.max(2);
    let (table, stem) = match kind {
        SweepKind::Rotation => {
            let pts = sweep::rotation_sweep(&sc, &model, steps, sensing(&sc))?;
            (report::baseline_table(&pts, &report::ROTATION_HEADER), "rotation")
        }
        SweepKind::Lateral => {
            let pts = sweep::lateral_sweep(&sc, &model, steps, sensing(&sc))?;
            (report::baseline_table(&pts, &report::LATERAL_HEADER), "lateral")
        }
        SweepKind::CurrentGrid => {
            let pose = Pose::xz_rotated(Vec3::new(0.0, 0.0, 15.0), 90.0);
            let pts = sweep::current_grid(&sc, &model, &pose, steps)?;
            (report::grid_table(&pts), "current_grid")
        }
    };
    let path = emit(&table, common, stem, stem)?;
    Ok(json!({"rows": table.rows.len(), "output": path}))
}

fn oracle_sweep(common: &Common, steps: usize, count: usize) -> Outcome {
    let sc = load(common)?;
    let model = ArrayModel::from_scenario(&sc)?;
    let mut poses = vec![Pose::xz_rotated(Vec3::new(0.0, 0.0, 15.0), 90.0)];
    poses.extend(sweep::random_poses(sc.seed, count, &PoseRegion::default()));
    let rows = sweep::oracle_comparison(&sc, &model, &poses, steps.max(3), Sensing::Quantized(NoiseSource::Noiseless))?;
    let worst = rows.iter().map(|r| r.ae_over_grid()).fold(f64::INFINITY, f64::min);
    let table = report::oracle_table(&rows);
    let path = emit(&table, common, "oracle", "oracle sweep")?;
    Ok(json!({"poses": rows.len(), "worst_ae_over_grid": worst, "output": path}))
}

fn pa_spectrum(common: &Common, steps: usize) -> Outcome {
    let pts = paspectrum::duty_sweep(0.05, 0.5, steps.max(2))?;
    let table = report::spectrum_table(&pts);
    let path = emit(&table, common, "pa_spectrum", "three-level PA spectrum")?;
    Ok(json!({"rows": table.rows.len(), "output": path}))
}

fn validate(common: &Common) -> Outcome {
    let sc = load(common)?;
    Ok(json!({"valid": true, "coils": sc.coils.len(), "seed": sc.seed}))
}

fn run(cli: Cli) -> Outcome {
    match cli.command {
        Command::DesignArray { common, bracket } => design_array(&common, bracket),
        Command::Simulate { common, activation_hz } => simulate(&common, activation_hz),
        Command::Sweep { kind, common, steps } => run_sweep(&common, kind, steps),
        Command::OracleSweep { common, steps, poses } => oracle_sweep(&common, steps, poses),
        Command::PaSpectrum { common, steps } => pa_spectrum(&common, steps),
        Command::ValidateScenario { common } => validate(&common),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprintln!("{}", json!({"error": "usage", "message": e.to_string().trim()}));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(f) => {
            eprintln!("{}", json!({"error": f.kind, "message": f.message, "details": f.details}));
            ExitCode::from(f.code)
        }
    }
}
