use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use monoset::kv_levelset::{DescentResult, LevelSetField, Shape};
use monoset::monotonicity::{PixelPartition, TestBallGrid};
use monoset::ntd::NtdMatrix;
use monoset::pipeline::initial_guess::{extract_initial_guess_with, read_shapes, shapes_to_text};
use monoset::pipeline::output::RunOutput;
use monoset::pipeline::run::{
    load_phantom, monotonicity_data, run_levelset, run_regularize, run_scan, LevelSetOutcome,
    Meshes, MonotonicityData,
};
use monoset::pipeline::simultaneous::{simultaneous_reconstruct, SimultaneousOutcome};
use monoset::pipeline::{f1_score, ExperimentConfig, Phantom, PHANTOM_NAMES};
use monoset::Error;

/// Monotonicity-initialized level-set reconstruction of conductivity
/// inclusions from simulated boundary data.
#[derive(Parser)]
#[command(name = "monoset", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Linearized monotonicity test over a grid of balls.
    Scan(Common),
    /// Monotonicity-constrained pixel regularization and initial shapes.
    Regularize {
        #[command(flatten)]
        common: Common,
        /// Read `Λ̄(σ) − Λ̄(σ₀)` from a file written by an earlier run.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Kohn–Vogelius level-set descent from given shapes.
    Levelset {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        init: InitArgs,
    },
    /// Regularization for the initial shapes, then level-set descent.
    Combined(Common),
    /// Joint recovery of the shape and the inclusion conductivity.
    Simultaneous {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        init: InitArgs,
    },
    /// Phantom gallery.
    Phantom {
        #[command(subcommand)]
        action: PhantomAction,
    },
}

#[derive(Subcommand)]
enum PhantomAction {
    List,
}

#[derive(Args)]
struct InitArgs {
    /// Initial shapes (`shapes.txt` of an earlier run). Without it the
    /// shapes come from monotonicity regularization.
    #[arg(long)]
    init: Option<PathBuf>,
}

#[derive(Args)]
struct Common {
    /// Config file with `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Extra `key=value` override; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Gallery phantom, see `phantom list`.
    #[arg(long)]
    phantom: Option<String>,
    /// Relative noise on the NtD difference.
    #[arg(long)]
    delta: Option<f64>,
    /// Relative noise on the measured voltages.
    #[arg(long)]
    eta: Option<f64>,
    /// Noise seed; required when delta or eta is positive.
    #[arg(long)]
    seed: Option<u64>,
    /// Scanner contrast level.
    #[arg(long)]
    alpha: Option<f64>,
    /// Upper bound for the pixel coefficients.
    #[arg(long)]
    cbar: Option<f64>,
    /// `full` or `simplified`.
    #[arg(long)]
    bounds: Option<String>,
    /// Pixels per side of the regularization grid.
    #[arg(long)]
    pixels: Option<usize>,
    /// Test balls per side of the scan grid.
    #[arg(long)]
    balls: Option<usize>,
    /// Cells per side of the data mesh.
    #[arg(long)]
    data_n: Option<usize>,
    /// Cells per side of the inversion mesh.
    #[arg(long)]
    inversion_n: Option<usize>,
    /// Level-set iteration cap.
    #[arg(long)]
    max_iter: Option<usize>,
    /// `parallel` or `sequential`.
    #[arg(long)]
    exec: Option<String>,
    /// Output directory.
    #[arg(long, short)]
    output: Option<PathBuf>,
}

enum Failure {
    Usage(String),
    Run(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Run(e)
    }
}

type CliResult<T> = Result<T, Failure>;

fn usage(e: Error) -> Failure {
    Failure::Usage(e.to_string())
}

impl Common {
    fn config(&self) -> CliResult<(ExperimentConfig, Phantom)> {
        let mut c = ExperimentConfig::default();
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Failure::Usage(format!("cannot read {}: {e}", path.display())))?;
            c.apply_text(&text).map_err(usage)?;
        }
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Failure::Usage(format!("--set expects KEY=VALUE, got '{kv}'")))?;
            c.set(k, v).map_err(usage)?;
        }
        let flags: [(&str, Option<String>); 14] = [
            ("phantom", self.phantom.clone()),
            ("delta", self.delta.map(|x| x.to_string())),
            ("eta", self.eta.map(|x| x.to_string())),
            ("seed", self.seed.map(|x| x.to_string())),
            ("alpha", self.alpha.map(|x| x.to_string())),
            ("cbar", self.cbar.map(|x| x.to_string())),
            ("bounds", self.bounds.clone()),
            ("pixels", self.pixels.map(|x| x.to_string())),
            ("balls", self.balls.map(|x| x.to_string())),
            ("data_n", self.data_n.map(|x| x.to_string())),
            ("inversion_n", self.inversion_n.map(|x| x.to_string())),
            ("max_iter", self.max_iter.map(|x| x.to_string())),
            ("exec", self.exec.clone()),
            (
                "output",
                self.output.as_ref().map(|p| p.display().to_string()),
            ),
        ];
        for (k, v) in flags {
            if let Some(v) = v {
                c.set(k, &v).map_err(usage)?;
            }
        }
        if !PHANTOM_NAMES.contains(&c.phantom.as_str()) {
            return Err(Failure::Usage(format!(
                "unknown phantom '{}' (available: {})",
                c.phantom,
                PHANTOM_NAMES.join(", ")
            )));
        }
        if c.noisy() && c.seed.is_none() {
            return Err(Failure::Usage("--seed is required for noisy runs".into()));
        }
        c.validate().map_err(usage)?;
        let phantom = load_phantom(&c).map_err(usage)?;
        Ok((c, phantom))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn dispatch(command: Command) -> CliResult<()> {
    match command {
        Command::Phantom {
            action: PhantomAction::List,
        } => {
            for p in Phantom::gallery(1.0, 2.0) {
                println!("{:<8} {}", p.name, p.description);
            }
            Ok(())
        }
        Command::Scan(common) => {
            let (config, phantom) = common.config()?;
            let meshes = Meshes::new(&config)?;
            let data =
                monotonicity_data(&config, &phantom, &meshes).map_err(|e| e.in_stage("ntd"))?;
            let grid =
                run_scan(&config, &meshes.inversion, &data).map_err(|e| e.in_stage("scan"))?;
            let mut out = RunOutput::create(&config.output)?;
            write_difference(&mut out, &data.difference)?;
            write_scan(&mut out, &grid)?;
            out.write_manifest("scan", &config)?;
            println!(
                "marked {} of {} balls",
                grid.marked_count(),
                grid.balls.len()
            );
            Ok(())
        }
        Command::Regularize { common, data } => {
            let (config, phantom) = common.config()?;
            let meshes = Meshes::new(&config)?;
            let mono = load_or_simulate(&config, &phantom, &meshes, data.as_deref())?;
            let mut out = RunOutput::create(&config.output)?;
            write_difference(&mut out, &mono.difference)?;
            let partition = regularize(&mut out, &config, &phantom, &meshes, &mono)?;
            out.write_manifest("regularize", &config)?;
            println!("support {} pixels", partition.support_count());
            Ok(())
        }
        Command::Combined(common) => {
            let (config, phantom) = common.config()?;
            let meshes = Meshes::new(&config)?;
            let mut out = RunOutput::create(&config.output)?;
            let shapes = initial_shapes(&mut out, &config, &phantom, &meshes, None)?;
            let outcome = run_levelset(&config, &phantom, &meshes, &shapes)?;
            write_levelset(&mut out, &outcome, config.sigma1)?;
            out.write_manifest("combined", &config)?;
            report(&outcome.descent, outcome.metrics.relative());
            Ok(())
        }
        Command::Levelset { common, init } => {
            let (config, phantom) = common.config()?;
            let meshes = Meshes::new(&config)?;
            let mut out = RunOutput::create(&config.output)?;
            let shapes =
                initial_shapes(&mut out, &config, &phantom, &meshes, init.init.as_deref())?;
            let outcome = run_levelset(&config, &phantom, &meshes, &shapes)?;
            write_levelset(&mut out, &outcome, config.sigma1)?;
            out.write_manifest("levelset", &config)?;
            report(&outcome.descent, outcome.metrics.relative());
            Ok(())
        }
        Command::Simultaneous { common, init } => {
            let (config, phantom) = common.config()?;
            let meshes = Meshes::new(&config)?;
            let mut out = RunOutput::create(&config.output)?;
            let shapes =
                initial_shapes(&mut out, &config, &phantom, &meshes, init.init.as_deref())?;
            let outcome = simultaneous_reconstruct(&config, &phantom, &meshes, &shapes)?;
            write_simultaneous(&mut out, &outcome)?;
            out.write_manifest("simultaneous", &config)?;
            println!(
                "{} iterations ({:?}), sigma1 = {:.6}, relative symmetric difference {:.4}",
                outcome.history.len(),
                outcome.stop,
                outcome.sigma1,
                outcome.metrics.relative()
            );
            Ok(())
        }
    }
}

fn report(descent: &DescentResult, relative: f64) {
    println!(
        "{} iterations ({:?}), J = {:.6e}, relative symmetric difference {:.4}",
        descent.history.len(),
        descent.stop,
        descent.final_objective(),
        relative
    );
}

fn load_or_simulate(
    config: &ExperimentConfig,
    phantom: &Phantom,
    meshes: &Meshes,
    data: Option<&Path>,
) -> CliResult<MonotonicityData> {
    Ok(match data {
        Some(path) => {
            let d = NtdMatrix::read(path).map_err(|e| e.in_stage("ntd"))?;
            MonotonicityData::from_difference(config, &meshes.inversion, d)
                .map_err(|e| e.in_stage("ntd"))?
        }
        None => monotonicity_data(config, phantom, meshes).map_err(|e| e.in_stage("ntd"))?,
    })
}

/// Shapes from a file, or from monotonicity regularization with all its
/// artifacts written to `out`.
fn initial_shapes(
    out: &mut RunOutput,
    config: &ExperimentConfig,
    phantom: &Phantom,
    meshes: &Meshes,
    init: Option<&Path>,
) -> CliResult<Vec<Shape>> {
    if let Some(path) = init {
        let shapes = read_shapes(path).map_err(|e| e.in_stage("initial-guess"))?;
        if shapes.is_empty() {
            return Err(Error::EmptyReconstruction.in_stage("initial-guess").into());
        }
        out.write_text("shapes.txt", &shapes_to_text(&shapes))?;
        return Ok(shapes);
    }
    let mono = load_or_simulate(config, phantom, meshes, None)?;
    write_difference(out, &mono.difference)?;
    regularize(out, config, phantom, meshes, &mono)?;
    Ok(read_shapes(out.path("shapes.txt"))?)
}

fn regularize(
    out: &mut RunOutput,
    config: &ExperimentConfig,
    phantom: &Phantom,
    meshes: &Meshes,
    mono: &MonotonicityData,
) -> CliResult<PixelPartition> {
    let partition =
        run_regularize(config, &meshes.inversion, mono).map_err(|e| e.in_stage("regularize"))?;
    let np = partition.np;
    out.write_pixel_grid("coefficients", np, &partition.coefficients)?;
    out.write_pixel_grid("bounds", np, &partition.bounds)?;
    let support: Vec<f64> = partition
        .support
        .iter()
        .map(|&s| f64::from(u8::from(s)))
        .collect();
    out.write_pixel_grid("support", np, &support)?;
    let truth = phantom.pixel_mask(np, 8);
    out.record("support_pixels", partition.support_count());
    out.record(
        "support_f1",
        format!("{:.6}", f1_score(&partition.support, &truth)),
    );
    let guess = extract_initial_guess_with(&partition, config.init_threshold, config.min_component)
        .map_err(|e| e.in_stage("initial-guess"))?;
    out.write_text("shapes.txt", &shapes_to_text(&guess.shapes))?;
    out.record("initial_shapes", guess.shapes.len());
    Ok(partition)
}

fn write_difference(out: &mut RunOutput, d: &NtdMatrix) -> CliResult<()> {
    out.write_text("ntd_difference.txt", &d.to_text())?;
    Ok(())
}

fn write_scan(out: &mut RunOutput, grid: &TestBallGrid) -> CliResult<()> {
    out.write_grid(
        "scan",
        grid.balls
            .iter()
            .zip(&grid.marked)
            .map(|(b, &m)| (b.center, f64::from(u8::from(m)))),
    )?;
    out.write_grid(
        "lambda_min",
        grid.balls
            .iter()
            .zip(&grid.lambda_min)
            .map(|(b, &l)| (b.center, l)),
    )?;
    out.record("marked", grid.marked_count());
    Ok(())
}

fn write_field(out: &mut RunOutput, tag: &str, phi: &LevelSetField) -> CliResult<()> {
    out.write_levelset_grid(&format!("phi_{tag}"), phi)?;
    out.write_contours(tag, &phi.contours())?;
    Ok(())
}

fn write_levelset(out: &mut RunOutput, o: &LevelSetOutcome, sigma1: f64) -> CliResult<()> {
    write_field(out, "initial", &o.phi0)?;
    write_field(out, "final", &o.descent.phi)?;
    for rec in &o.descent.history {
        out.write_contours(&format!("iter_{:04}", rec.iter), &rec.contour)?;
    }
    out.write_history(
        std::iter::once((0, o.descent.initial_objective, 0.0, sigma1)).chain(
            o.descent
                .history
                .iter()
                .map(|r| (r.iter, r.objective, r.dt, r.sigma1)),
        ),
    )?;
    out.record("iterations", o.descent.history.len());
    out.record("stop", format!("{:?}", o.descent.stop));
    out.record("objective", format!("{:e}", o.descent.final_objective()));
    out.record(
        "symmetric_difference",
        format!("{:e}", o.metrics.symmetric_difference),
    );
    out.record(
        "relative_symmetric_difference",
        format!("{:.6}", o.metrics.relative()),
    );
    Ok(())
}

fn write_simultaneous(out: &mut RunOutput, o: &SimultaneousOutcome) -> CliResult<()> {
    write_field(out, "initial", &o.phi0)?;
    write_field(out, "final", &o.phi)?;
    for rec in &o.history {
        out.write_contours(&format!("iter_{:04}", rec.iter), &rec.contour)?;
    }
    out.write_history(
        std::iter::once((0, o.initial_objective, 0.0, o.initial_sigma1)).chain(
            o.history
                .iter()
                .map(|r| (r.iter, r.objective, r.dt, r.sigma1)),
        ),
    )?;
    out.record("iterations", o.history.len());
    out.record("stop", format!("{:?}", o.stop));
    out.record("sigma1", format!("{:.9}", o.sigma1));
    out.record(
        "relative_symmetric_difference",
        format!("{:.6}", o.metrics.relative()),
    );
    Ok(())
}
