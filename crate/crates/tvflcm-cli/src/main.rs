//! Command-line interface: fit models, run simulation studies, build
//! stacked landmark datasets, and compute dynamic predictions.
//!
//! Exit codes: 0 success, 1 numerical failure, 2 usage or validation
//! error. All output files are deterministic given identical inputs and
//! seeds except for lines starting with `#`, which carry wall times.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use tvflcm::io::{
    load_fit, read_functional_dataset, save_fit, write_fit_report, write_landmark_dataset,
    write_study_report, write_surface_csv, GridSpec,
};
use tvflcm::landmark::{build_landmark_dataset, center_by_landmark, worked_example, LandmarkGrid};
use tvflcm::model::{fit_tvflcm_landmark, fit_tvflcm_poisson, ModelSpec, Route};
use tvflcm::predict::{dynamic_predict, eval_surface};
use tvflcm::sim::{run_study, GammaShape, SimulationConfig};

#[derive(Parser)]
#[command(
    name = "tvflcm",
    about = "Time-varying functional linear Cox models: exact risk-set expansion and landmark estimation",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model to a wide functional dataset and export the surface.
    Fit(FitArgs),
    /// Run a replication study comparing the estimation routes.
    Simulate(SimulateArgs),
    /// Build (and optionally center) a stacked landmark dataset.
    LandmarkBuild(LandmarkBuildArgs),
    /// Dynamic survival prediction from a saved fit.
    Predict(PredictArgs),
}

#[derive(Args)]
struct InputArgs {
    /// Wide input file: header id,time,delta,<scalars...>,z_0001..
    #[arg(long)]
    input: PathBuf,
    /// Functional grid: `uniform:J` (or `uniform:auto`) for midpoints of
    /// the unit interval, or a file with one abscissa per line.
    #[arg(long, default_value = "uniform:auto")]
    grid: String,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Estimation route.
    #[arg(long, value_parser = parse_route, default_value = "landmark")]
    route: Route,
    /// Basis dimension over the functional domain.
    #[arg(long, default_value_t = 5)]
    ku: usize,
    /// Basis dimension over follow-up time.
    #[arg(long, default_value_t = 5)]
    ks: usize,
    /// Basis dimension for scalar-covariate effects (default min(5, strata)).
    #[arg(long)]
    k1: Option<usize>,
    /// Landmark times start:step:max (landmark route).
    #[arg(long, default_value = "0:0.04:0.96")]
    landmarks: String,
    /// Prediction window length, or `inf`.
    #[arg(long, default_value = "inf")]
    window: String,
    /// Fixed smoothing parameters (comma-separated); omit to select by REML.
    #[arg(long)]
    lambda: Option<String>,
    /// Upper end of the follow-up domain (default: largest observed time).
    #[arg(long)]
    t_max: Option<f64>,
    /// Points per axis of the exported surface grid.
    #[arg(long, default_value_t = 101)]
    surface_grid: usize,
    /// Output prefix: writes <prefix>.report.txt, <prefix>.surface.csv,
    /// <prefix>.fit.txt.
    #[arg(long)]
    out_prefix: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    /// True surface: f1, f2, f3, f4, or null.
    #[arg(long)]
    scenario: String,
    #[arg(long, default_value_t = 500)]
    n: usize,
    #[arg(long, default_value_t = 10)]
    reps: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Functional grid size J.
    #[arg(long, default_value_t = 100)]
    j: usize,
    #[arg(long, default_value_t = 5)]
    ku: usize,
    #[arg(long, default_value_t = 5)]
    ks: usize,
    /// Landmark spacing.
    #[arg(long, default_value_t = 0.04)]
    step: f64,
    /// Largest landmark time.
    #[arg(long, default_value_t = 0.96)]
    max: f64,
    /// Finite window length for the windowed landmark method.
    #[arg(long, default_value_t = 0.04)]
    window: f64,
    #[arg(long)]
    no_poisson: bool,
    #[arg(long)]
    no_landmark_window: bool,
    #[arg(long)]
    no_landmark_infinite: bool,
    /// Directory for per-(method, replication) surface files.
    #[arg(long)]
    keep_surfaces: Option<PathBuf>,
    /// Study report path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct LandmarkBuildArgs {
    /// Emit the worked two-subject example dataset and exit.
    #[arg(long)]
    print_example: bool,
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long, default_value = "uniform:auto")]
    grid: String,
    #[arg(long, default_value = "0:0.04:0.96")]
    landmarks: String,
    #[arg(long, default_value = "inf")]
    window: String,
    /// Mean-center the functional rows within each landmark.
    #[arg(long)]
    center: bool,
    /// Output path (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    /// A fit file produced by `fit`.
    #[arg(long)]
    fit: PathBuf,
    #[command(flatten)]
    input: InputArgs,
    /// Subject id to predict for.
    #[arg(long)]
    subject: u64,
    /// Prediction horizon.
    #[arg(long)]
    t_star: f64,
}

fn parse_route(s: &str) -> Result<Route, String> {
    match s {
        "poisson" => Ok(Route::Poisson),
        "landmark" => Ok(Route::Landmark),
        other => Err(format!("unknown route {other:?} (poisson or landmark)")),
    }
}

/// Validation problems exit 2; numerical problems exit 1.
enum CliError {
    Usage(String),
    Numerical(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Numerical(_) => 1,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Numerical(m) => m,
        }
    }
}

fn usage(err: impl std::fmt::Display) -> CliError {
    CliError::Usage(err.to_string())
}

fn numerical(err: impl std::fmt::Display) -> CliError {
    CliError::Numerical(err.to_string())
}

fn parse_grid_spec(text: &str) -> Result<GridSpec, CliError> {
    if let Some(rest) = text.strip_prefix("uniform:") {
        if rest == "auto" {
            // resolved once the column count is known
            return Ok(GridSpec::Uniform(0));
        }
        let j: usize = rest
            .parse()
            .map_err(|_| usage(format!("bad grid size in {text:?}")))?;
        return Ok(GridSpec::Uniform(j));
    }
    let path = PathBuf::from(text);
    let content = std::fs::read_to_string(&path)
        .map_err(|e| usage(format!("cannot read grid file {}: {e}", path.display())))?;
    let points: Result<Vec<f64>, _> = content
        .split_whitespace()
        .map(|t| t.parse::<f64>())
        .collect();
    match points {
        Ok(p) if p.len() >= 2 => Ok(GridSpec::Points(p)),
        _ => Err(usage(format!(
            "grid file {} is not a list of numbers",
            path.display()
        ))),
    }
}

fn load_input(
    args: &InputArgs,
) -> Result<(Vec<tvflcm::SurvivalRecord>, tvflcm::FunctionalPredictor, Vec<String>), CliError> {
    let file = File::open(&args.input)
        .map_err(|e| usage(format!("cannot open {}: {e}", args.input.display())))?;
    let spec = parse_grid_spec(&args.grid)?;
    let reader = BufReader::new(file);
    let result = match spec {
        GridSpec::Uniform(0) => {
            let content = std::io::read_to_string(reader).map_err(usage)?;
            let header = content.lines().next().unwrap_or_default();
            let j = header
                .split(',')
                .filter(|c| c.trim().starts_with("z_"))
                .count();
            read_functional_dataset(
                std::io::Cursor::new(content.as_bytes()),
                &GridSpec::Uniform(j),
            )
        }
        other => read_functional_dataset(reader, &other),
    };
    result.map_err(usage)
}

fn parse_landmarks(text: &str, window: &str) -> Result<LandmarkGrid, CliError> {
    let parts: Vec<&str> = text.split(':').collect();
    if parts.len() != 3 {
        return Err(usage(format!(
            "landmarks must be start:step:max, got {text:?}"
        )));
    }
    let start: f64 = parts[0].parse().map_err(|_| usage("bad landmark start"))?;
    let step: f64 = parts[1].parse().map_err(|_| usage("bad landmark step"))?;
    let max: f64 = parts[2].parse().map_err(|_| usage("bad landmark max"))?;
    if step <= 0.0 || max < start {
        return Err(usage(
            "landmark grid must have positive step and max >= start",
        ));
    }
    let w = parse_window(window)?;
    let mut s = Vec::new();
    let mut k = 0usize;
    loop {
        let v = start + step * k as f64;
        if v > max + 1e-12 * step {
            break;
        }
        s.push(v);
        k += 1;
    }
    LandmarkGrid::new(s.clone(), vec![w; s.len()]).map_err(usage)
}

fn parse_window(text: &str) -> Result<f64, CliError> {
    if text == "inf" || text == "infinity" {
        return Ok(f64::INFINITY);
    }
    let w: f64 = text
        .parse()
        .map_err(|_| usage(format!("bad window {text:?}")))?;
    if w <= 0.0 {
        return Err(usage("window must be positive or inf"));
    }
    Ok(w)
}

fn parse_lambdas(text: &Option<String>) -> Result<Option<Vec<f64>>, CliError> {
    match text {
        None => Ok(None),
        Some(t) => {
            let values: Result<Vec<f64>, _> =
                t.split(',').map(|v| v.trim().parse::<f64>()).collect();
            values
                .map(Some)
                .map_err(|_| usage(format!("bad lambda list {t:?}")))
        }
    }
}

fn create(path: &PathBuf) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| usage(format!("cannot create {}: {e}", path.display())))
}

fn cmd_fit(args: &FitArgs) -> Result<(), CliError> {
    let (records, z, _names) = load_input(&args.input)?;
    let t_max = args
        .t_max
        .unwrap_or_else(|| records.iter().fold(0.0_f64, |m, r| m.max(r.y)));
    let u_lo = z.grid[0].min(0.0);
    let u_hi = z.grid.last().copied().unwrap().max(1.0);
    let mut spec = ModelSpec::new(args.ku, args.ks, (u_lo, u_hi), (0.0, t_max));
    spec.k_scalar = args.k1;
    spec.lambdas = parse_lambdas(&args.lambda)?;

    let fit = match args.route {
        Route::Poisson => fit_tvflcm_poisson(&records, &z, &spec).map_err(numerical)?,
        Route::Landmark => {
            let grid = parse_landmarks(&args.landmarks, &args.window)?;
            if let Some(&s_max) = grid.s.last() {
                if s_max >= t_max {
                    return Err(usage(format!(
                        "largest landmark {s_max} is not below the follow-up end {t_max}"
                    )));
                }
            }
            fit_tvflcm_landmark(&records, &z, &spec, &grid).map_err(numerical)?
        }
    };

    let report_path = args.out_prefix.with_extension("report.txt");
    write_fit_report(&mut create(&report_path)?, &fit).map_err(numerical)?;

    let n_pts = args.surface_grid.max(2);
    let us: Vec<f64> = (0..n_pts)
        .map(|i| u_lo + (u_hi - u_lo) * i as f64 / (n_pts - 1) as f64)
        .collect();
    let ts: Vec<f64> = (0..n_pts)
        .map(|i| t_max * i as f64 / (n_pts - 1) as f64)
        .collect();
    let eval = eval_surface(&fit.surface, &us, &ts).map_err(numerical)?;
    let surface_path = args.out_prefix.with_extension("surface.csv");
    write_surface_csv(&mut create(&surface_path)?, &eval).map_err(numerical)?;

    let fit_path = args.out_prefix.with_extension("fit.txt");
    save_fit(&mut create(&fit_path)?, &fit).map_err(numerical)?;

    println!(
        "fit ok: route={} rows={} iterations={} report={}",
        fit.route.name(),
        fit.rows,
        fit.fit.iterations,
        report_path.display()
    );
    Ok(())
}

fn cmd_simulate(args: &SimulateArgs) -> Result<(), CliError> {
    let gamma = GammaShape::parse(&args.scenario).map_err(usage)?;
    let mut config = SimulationConfig::new(gamma, args.n, args.reps, args.seed);
    config.n_grid = args.j;
    config.k_u = args.ku;
    config.k_s = args.ks;
    config.landmark_step = args.step;
    config.landmark_max = args.max;
    config.window = args.window;
    config.run_poisson = !args.no_poisson;
    config.run_landmark_window = !args.no_landmark_window;
    config.run_landmark_infinite = !args.no_landmark_infinite;
    config.keep_surfaces = args.keep_surfaces.is_some();

    let report = run_study(&config).map_err(numerical)?;
    write_study_report(&mut create(&args.out)?, &report).map_err(numerical)?;

    if let Some(dir) = &args.keep_surfaces {
        std::fs::create_dir_all(dir)
            .map_err(|e| usage(format!("cannot create {}: {e}", dir.display())))?;
        let pts = config.eval_points();
        for (rep, method, surface) in &report.surfaces {
            let path = dir.join(format!("surface_{method}_{rep:04}.csv"));
            let mut w = create(&path)?;
            writeln!(w, "u,t,gamma").map_err(numerical)?;
            for (ui, &u) in pts.iter().enumerate() {
                for (ti, &t) in pts.iter().enumerate() {
                    writeln!(
                        w,
                        "{},{},{}",
                        tvflcm::io::fmt_g17(u),
                        tvflcm::io::fmt_g17(t),
                        tvflcm::io::fmt_g17(surface[[ui, ti]])
                    )
                    .map_err(numerical)?;
                }
            }
        }
    }
    println!(
        "study ok: {} methods, report={}",
        report.methods.len(),
        args.out.display()
    );
    Ok(())
}

fn cmd_landmark_build(args: &LandmarkBuildArgs) -> Result<(), CliError> {
    let data = if args.print_example {
        let (records, z, grid) = worked_example();
        build_landmark_dataset(&records, &z, &grid).map_err(usage)?
    } else {
        let input = args
            .input
            .clone()
            .ok_or_else(|| usage("either --input or --print-example is required"))?;
        let (records, z, _) = load_input(&InputArgs {
            input,
            grid: args.grid.clone(),
        })?;
        let grid = parse_landmarks(&args.landmarks, &args.window)?;
        let built = build_landmark_dataset(&records, &z, &grid).map_err(usage)?;
        if args.center {
            center_by_landmark(built)
        } else {
            built
        }
    };
    match &args.out {
        Some(path) => write_landmark_dataset(&mut create(path)?, &data).map_err(numerical)?,
        None => {
            let stdout = std::io::stdout();
            write_landmark_dataset(&mut stdout.lock(), &data).map_err(numerical)?;
        }
    }
    Ok(())
}

fn cmd_predict(args: &PredictArgs) -> Result<(), CliError> {
    let file = File::open(&args.fit)
        .map_err(|e| usage(format!("cannot open {}: {e}", args.fit.display())))?;
    let fit = load_fit(BufReader::new(file)).map_err(usage)?;
    let (records, z, _) = load_input(&args.input)?;
    let idx = records
        .iter()
        .position(|r| r.id == args.subject)
        .ok_or_else(|| usage(format!("subject {} not in the input", args.subject)))?;
    let z_row = z.values.row(idx).to_owned();
    let prediction =
        dynamic_predict(&fit, &z_row, &records[idx].x, args.t_star).map_err(|e| match e {
            tvflcm::predict::PredictError::BeyondLastWindow { .. } => usage(e),
            other => numerical(other),
        })?;
    println!("subject {}", args.subject);
    println!("t_star {}", tvflcm::io::fmt_g17(args.t_star));
    println!("probability {}", tvflcm::io::fmt_g17(prediction.probability));
    match prediction.direct {
        Some(d) => println!("direct {}", tvflcm::io::fmt_g17(d)),
        None => println!("direct na"),
    }
    println!("chained {}", tvflcm::io::fmt_g17(prediction.chained));
    match prediction.discrepancy {
        Some(d) => println!("discrepancy {}", tvflcm::io::fmt_g17(d)),
        None => println!("discrepancy na"),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Fit(args) => cmd_fit(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::LandmarkBuild(args) => cmd_landmark_build(args),
        Command::Predict(args) => cmd_predict(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {}", err.message());
            ExitCode::from(err.code())
        }
    }
}
