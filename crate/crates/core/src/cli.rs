//! Command-line front end: argument parsing and the subcommand pipelines.
//!
//! Exit codes: 0 success, 1 error (including usage errors), 2 iteration
//! limit reached, 3 batch finished with failed rows.

use std::ffi::OsString;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::certify::{certify_problem, sandwich_values};
use crate::error::{Error, Result};
use crate::metric::{distortion_distance, triangle_check, DistanceOptions};
use crate::oracle::best_upper_bound;
use crate::relax::sdpa::write_sdpa;
use crate::relax::{build, HierarchyKind, Limits};
use crate::report::{digest_file, finite, OracleDiagnostics, RunReport, SandwichSummary};
use crate::sdpsolve::{solve_with, SolveOptions, SolveStatus};
use crate::spaces::{build_cost_tensor, load_distance_matrix, load_point_cloud, MetricMeasureSpace};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_MAX_ITER: i32 = 2;
pub const EXIT_BATCH_FAILED: i32 = 3;

/// Worker-count override for the parallel parts of the library.
pub const THREADS_ENV: &str = "GWSOS_THREADS";

#[derive(Parser, Debug)]
#[command(name = "gwsos", version, about = "Moment-SOS bounds for discrete Gromov-Wasserstein problems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build, solve and certify a relaxation.
    Solve(SolveArgs),
    /// Upper bound from multistart projected gradient (plus vertex enumeration on small instances).
    Oracle(OracleArgs),
    /// Relaxation-based distortion distance between two spaces.
    Distance(DistanceArgs),
    /// Triangle-inequality checks over a manifest of space triples.
    Triangle(TriangleArgs),
    /// Write a relaxation in sparse SDPA format.
    Build(BuildArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum InputFormat {
    /// One point per row.
    Points,
    /// Square distance matrix.
    Distances,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Hierarchy {
    Schmudgen,
    Putinar,
    Combined,
    FirstLevel,
}

impl From<Hierarchy> for HierarchyKind {
    fn from(h: Hierarchy) -> Self {
        match h {
            Hierarchy::Schmudgen => HierarchyKind::Schmudgen,
            Hierarchy::Putinar => HierarchyKind::Putinar,
            Hierarchy::Combined => HierarchyKind::Combined,
            Hierarchy::FirstLevel => HierarchyKind::FirstLevelDnn,
        }
    }
}

#[derive(Args, Debug)]
struct InputArgs {
    #[arg(long)]
    source: PathBuf,
    #[arg(long)]
    target: PathBuf,
    #[arg(long)]
    weights_source: Option<PathBuf>,
    #[arg(long)]
    weights_target: Option<PathBuf>,
    /// How the source and target files are laid out.
    #[arg(long, value_enum, default_value = "points")]
    format: InputFormat,
    #[arg(short, allow_negative_numbers = true, default_value_t = 2.0)]
    p: f64,
    #[arg(short, allow_negative_numbers = true, default_value_t = 1.0)]
    q: f64,
}

#[derive(Args, Debug)]
struct RelaxArgs {
    #[arg(long, default_value_t = 1)]
    level: usize,
    #[arg(long, value_enum, default_value = "first-level")]
    hierarchy: Hierarchy,
}

#[derive(Args, Debug)]
struct SolverArgs {
    #[arg(long, allow_negative_numbers = true, default_value_t = 1e-6)]
    tol: f64,
    #[arg(long, default_value_t = 200_000)]
    max_iter: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Print a progress line to standard error every N iterations.
    #[arg(long)]
    log_every: Option<usize>,
}

#[derive(Args, Debug)]
struct SolveArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    relax: RelaxArgs,
    #[command(flatten)]
    solver: SolverArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct OracleArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long, default_value_t = 64)]
    starts: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// A `solve` report whose lower bound is compared with the oracle value.
    #[arg(long)]
    bound: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct DistanceArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    relax: RelaxArgs,
    #[arg(long, allow_negative_numbers = true, default_value_t = 1e-10)]
    tol: f64,
    #[arg(long, default_value_t = 200_000)]
    max_iter: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TriangleArgs {
    /// Each non-empty line names three space files separated by commas.
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, value_enum, default_value = "points")]
    format: InputFormat,
    #[arg(short, allow_negative_numbers = true, default_value_t = 2.0)]
    p: f64,
    #[arg(long, default_value_t = 1)]
    level: usize,
    #[arg(long, value_enum, default_value = "first-level")]
    hierarchy: Hierarchy,
    #[arg(long, allow_negative_numbers = true, default_value_t = 1e-10)]
    tol: f64,
    /// CSV destination; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BuildArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    relax: RelaxArgs,
    #[arg(long)]
    out: PathBuf,
}

fn usage(flag: &str, msg: &str) -> Error {
    Error::Invalid(format!("{flag}: {msg}"))
}

fn check_exponents(input: &InputArgs) -> Result<()> {
    if !(input.p >= 1.0) || !input.p.is_finite() {
        return Err(usage("-p", "must be a finite real >= 1"));
    }
    if !(input.q >= 1.0) || !input.q.is_finite() {
        return Err(usage("-q", "must be a finite real >= 1"));
    }
    Ok(())
}

fn check_tol(tol: f64, max_iter: usize) -> Result<()> {
    if !(tol > 0.0 && tol.is_finite()) {
        return Err(usage("--tol", "must be a positive finite real"));
    }
    if max_iter == 0 {
        return Err(usage("--max-iter", "must be at least 1"));
    }
    Ok(())
}

fn check_level(level: usize) -> Result<()> {
    if level == 0 {
        return Err(usage("--level", "must be a positive integer"));
    }
    Ok(())
}

fn load_space(path: &Path, weights: Option<&Path>, format: InputFormat) -> Result<MetricMeasureSpace> {
    match format {
        InputFormat::Points => load_point_cloud(path, weights),
        InputFormat::Distances => load_distance_matrix(path, weights),
    }
}

struct Loaded {
    x: MetricMeasureSpace,
    y: MetricMeasureSpace,
    report: RunReport,
}

fn load_inputs(input: &InputArgs, command: &[String], seed: u64) -> Result<Loaded> {
    check_exponents(input)?;
    let x = load_space(&input.source, input.weights_source.as_deref(), input.format)?;
    let y = load_space(&input.target, input.weights_target.as_deref(), input.format)?;
    let mut report = RunReport::new(command.to_vec(), input.p, input.q, x.size(), y.size(), seed);
    report.inputs.push(digest_file("source", &input.source)?);
    report.inputs.push(digest_file("target", &input.target)?);
    if let Some(p) = &input.weights_source {
        report.inputs.push(digest_file("weights-source", p)?);
    }
    if let Some(p) = &input.weights_target {
        report.inputs.push(digest_file("weights-target", p)?);
    }
    Ok(Loaded { x, y, report })
}

fn emit(report: &RunReport, out: Option<&Path>) -> Result<()> {
    if let Some(path) = out {
        report.write(path)?;
    }
    println!("{}", report.summary());
    Ok(())
}

fn cmd_solve(args: &SolveArgs, command: &[String]) -> Result<i32> {
    check_tol(args.solver.tol, args.solver.max_iter)?;
    check_level(args.relax.level)?;
    let start = Instant::now();
    let Loaded { x, y, mut report } = load_inputs(&args.input, command, args.solver.seed)?;
    let l = build_cost_tensor(&x, &y, args.input.p, args.input.q)?;
    let kind = HierarchyKind::from(args.relax.hierarchy);
    let problem = build(kind, &l, x.weights(), y.weights(), args.relax.level, &Limits::default())?;
    let opts = SolveOptions {
        tol: args.solver.tol,
        max_iter: args.solver.max_iter,
        seed: args.solver.seed,
        log_every: args.solver.log_every,
        ..SolveOptions::default()
    };
    let res = solve_with(&problem, &opts)?;
    report.record_solve(&res, opts.tol, opts.max_iter);
    match res.status {
        SolveStatus::Optimal | SolveStatus::MaxIterations => {
            match certify_problem(&problem, &res, &l, x.weights(), y.weights(), &opts) {
                Ok(c) => {
                    if let Some(polished) = &c.polished {
                        report.record_solve(polished, polished_tol(&opts), opts.max_iter);
                    }
                    report.record_certificate(&c);
                }
                Err(e) => {
                    eprintln!("warning: no certificate: {e}");
                    report.solved = Some(false);
                }
            }
        }
        SolveStatus::Infeasible | SolveStatus::NumericalFailure => report.solved = Some(false),
    }
    report.time = start.elapsed().as_secs_f64();
    emit(&report, args.out.as_deref())?;
    Ok(match res.status {
        SolveStatus::Optimal => EXIT_OK,
        SolveStatus::MaxIterations => EXIT_MAX_ITER,
        _ => {
            eprintln!("error: solver ended with status {}", res.status);
            EXIT_ERROR
        }
    })
}

fn polished_tol(opts: &SolveOptions) -> f64 {
    opts.tol.min(crate::certify::POLISH_TOL)
}

fn cmd_oracle(args: &OracleArgs, command: &[String]) -> Result<i32> {
    if args.starts == 0 {
        return Err(usage("--starts", "must be at least 1"));
    }
    let start = Instant::now();
    let Loaded { x, y, mut report } = load_inputs(&args.input, command, args.seed)?;
    let l = build_cost_tensor(&x, &y, args.input.p, args.input.q)?;
    let res = best_upper_bound(&l, x.weights(), y.weights(), args.starts, args.seed)?;
    report.upper_bound = finite(res.value);
    report.coupling = Some(res.coupling.to_rows());
    report.oracle = Some(OracleDiagnostics {
        method: format!("{:?}", res.method),
        starts: res.starts,
    });
    if let Some(path) = &args.bound {
        let bound = RunReport::read(path)?;
        if (bound.m, bound.n) != (x.size(), y.size()) || bound.p != args.input.p || bound.q != args.input.q {
            return Err(usage("--bound", "report was produced for a different instance"));
        }
        let lower = bound
            .lower_bound
            .ok_or_else(|| usage("--bound", "report has no lower bound"))?;
        report.inputs.push(digest_file("bound", path)?);
        report.hierarchy = bound.hierarchy.clone();
        report.level = bound.level;
        report.lower_bound = Some(lower);
        let s = sandwich_values(lower, res.value)?;
        report.sandwich = Some(SandwichSummary::from(&s));
    }
    report.time = start.elapsed().as_secs_f64();
    emit(&report, args.out.as_deref())?;
    Ok(EXIT_OK)
}

fn cmd_distance(args: &DistanceArgs, command: &[String]) -> Result<i32> {
    check_tol(args.tol, args.max_iter)?;
    check_level(args.relax.level)?;
    let start = Instant::now();
    let Loaded { x, y, mut report } = load_inputs(&args.input, command, 0)?;
    let kind = HierarchyKind::from(args.relax.hierarchy);
    let opts = DistanceOptions {
        q: args.input.q,
        solver: SolveOptions {
            tol: args.tol,
            max_iter: args.max_iter,
            ..SolveOptions::default()
        },
        ..DistanceOptions::default()
    };
    let d = distortion_distance(&x, &y, args.input.p, args.relax.level, kind, &opts)?;
    report.hierarchy = Some(kind.name().to_string());
    report.level = Some(args.relax.level);
    report.lower_bound = finite(d.lower_bound);
    report.distance = finite(d.value);
    report.solver = Some(crate::report::SolverDiagnostics {
        status: d.status.name().to_string(),
        iterations: d.iterations,
        primal_residual: finite(d.primal_residual),
        dual_residual: finite(d.dual_residual),
        gap: finite(d.gap),
        dual_objective: None,
        tol: args.tol,
        max_iter: args.max_iter,
        refined: false,
    });
    if let Some(c) = &d.certificate {
        report.upper_bound = finite(c.upper_bound);
        report.eig_ratio = finite(c.eigenvalue_ratio);
        report.err_ratio = c.error_ratio.and_then(finite);
        report.solved = Some(c.solved);
    }
    report.time = start.elapsed().as_secs_f64();
    emit(&report, args.out.as_deref())?;
    Ok(if d.status == SolveStatus::MaxIterations { EXIT_MAX_ITER } else { EXIT_OK })
}

/// One manifest row of the triangle batch.
#[derive(Debug, Default, serde::Serialize)]
struct TriangleRow {
    row: usize,
    x: String,
    y: String,
    z: String,
    d_xy: Option<f64>,
    d_yz: Option<f64>,
    d_xz: Option<f64>,
    slack: Option<f64>,
    pass: bool,
    error: String,
}

fn triangle_row(line: &str, base: &Path, args: &TriangleArgs, opts: &DistanceOptions) -> std::result::Result<(f64, f64, f64, f64, bool), String> {
    let parts: Vec<&str> = line.split(',').map(str::trim).collect();
    if parts.len() != 3 || parts.iter().any(|s| s.is_empty()) {
        return Err(format!("expected three comma-separated paths, found {}", parts.len()));
    }
    let resolve = |s: &str| {
        let p = Path::new(s);
        if p.is_absolute() { p.to_path_buf() } else { base.join(p) }
    };
    let load = |s: &str| load_space(&resolve(s), None, args.format).map_err(|e| e.to_string());
    let (x, y, z) = (load(parts[0])?, load(parts[1])?, load(parts[2])?);
    let t = triangle_check(&x, &y, &z, args.p, args.level, args.hierarchy.into(), opts).map_err(|e| e.to_string())?;
    Ok((t.xy.value, t.yz.value, t.xz.value, t.slack, t.pass))
}

fn cmd_triangle(args: &TriangleArgs) -> Result<i32> {
    check_tol(args.tol, 1)?;
    check_level(args.level)?;
    if !(args.p >= 1.0 && args.p.is_finite()) {
        return Err(usage("-p", "must be a finite real >= 1"));
    }
    let text = std::fs::read_to_string(&args.manifest).map_err(|source| Error::Io {
        path: args.manifest.clone(),
        source,
    })?;
    let base = args.manifest.parent().map(Path::to_path_buf).unwrap_or_default();
    let opts = DistanceOptions {
        solver: SolveOptions {
            tol: args.tol,
            ..SolveOptions::default()
        },
        certify: false,
        ..DistanceOptions::default()
    };
    let sink: Box<dyn std::io::Write> = match &args.out {
        Some(p) => Box::new(std::fs::File::create(p).map_err(|source| Error::Io {
            path: p.clone(),
            source,
        })?),
        None => Box::new(std::io::stdout()),
    };
    let mut writer = csv::Writer::from_writer(sink);
    let mut failed = 0usize;
    let mut rows = 0usize;
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        rows += 1;
        let parts: Vec<String> = line.split(',').map(|s| s.trim().to_string()).collect();
        let mut row = TriangleRow {
            row: idx + 1,
            x: parts.first().cloned().unwrap_or_default(),
            y: parts.get(1).cloned().unwrap_or_default(),
            z: parts.get(2).cloned().unwrap_or_default(),
            ..TriangleRow::default()
        };
        match triangle_row(line, &base, args, &opts) {
            Ok((xy, yz, xz, slack, pass)) => {
                row.d_xy = Some(xy);
                row.d_yz = Some(yz);
                row.d_xz = Some(xz);
                row.slack = Some(slack);
                row.pass = pass;
            }
            Err(e) => row.error = e,
        }
        if !row.pass {
            failed += 1;
            eprintln!("row {}: failed {}", row.row, row.error);
        }
        writer.serialize(&row).map_err(|e| Error::Invalid(format!("writing CSV: {e}")))?;
    }
    writer.flush().map_err(|source| Error::Io {
        path: args.out.clone().unwrap_or_else(|| PathBuf::from("<stdout>")),
        source,
    })?;
    eprintln!("{} of {rows} triples passed", rows - failed);
    Ok(if failed > 0 { EXIT_BATCH_FAILED } else { EXIT_OK })
}

fn cmd_build(args: &BuildArgs) -> Result<i32> {
    check_level(args.relax.level)?;
    check_exponents(&args.input)?;
    let x = load_space(&args.input.source, args.input.weights_source.as_deref(), args.input.format)?;
    let y = load_space(&args.input.target, args.input.weights_target.as_deref(), args.input.format)?;
    let l = build_cost_tensor(&x, &y, args.input.p, args.input.q)?;
    let kind = HierarchyKind::from(args.relax.hierarchy);
    let problem = build(kind, &l, x.weights(), y.weights(), args.relax.level, &Limits::default())?;
    std::fs::write(&args.out, write_sdpa(&problem)).map_err(|source| Error::Io {
        path: args.out.clone(),
        source,
    })?;
    println!(
        "{kind} level {}: {} coordinates, {} equalities, blocks {:?}",
        args.relax.level,
        problem.num_coords(),
        problem.equalities.len(),
        problem.block_census()
    );
    Ok(EXIT_OK)
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .trim()
            .parse()
            .map_err(|_| Error::Invalid(format!("{THREADS_ENV}: expected a positive integer, got '{v}'")))?;
        if n == 0 {
            return Err(Error::Invalid(format!("{THREADS_ENV}: must be at least 1")));
        }
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

/// Parses `args` (program name first), runs the subcommand and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let command: Vec<String> = args.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    let outcome = configure_threads().and_then(|_| match &cli.command {
        Command::Solve(a) => cmd_solve(a, &command),
        Command::Oracle(a) => cmd_oracle(a, &command),
        Command::Distance(a) => cmd_distance(a, &command),
        Command::Triangle(a) => cmd_triangle(a),
        Command::Build(a) => cmd_build(a),
    });
    let _ = std::io::stdout().flush();
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_ERROR
        }
    }
}
