//! Command-line front end. Every subcommand that writes files also writes a
//! run manifest next to its first output, named
//! `<stem>.<subcommand>.manifest.json`.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::birkhoff::{build_birkhoff, proposition1_residual, proposition2_residual, theorem1_residual, BirkhoffCase};
use crate::conditioning::{sweep_and_fit, MatrixKind};
use crate::error::{invalid, Error, Result};
use crate::grid::{make_grid, Grid, GridKind};
use crate::interp::{build_basis, diff_matrix, modal_coefficients, ControlInterpolation, SpectralCoefficients};
use crate::linalg::exact_sum;
use crate::nlpsolve::{solve, KktReport, SolveStatus, SolverOptions};
use crate::ocp::{ProblemDescriptor, Trajectory};
use crate::refine::{refine_solve_with, RefinementOutcome, RefinementPlan};
use crate::transcribe::{transcribe_with, MethodVariant, TimeScaling};
use crate::validate::{feasibility_error, propagate_with};

/// Thread-count override for the rayon pool.
pub const THREADS_ENV: &str = "BPS_THREADS";

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// `max |D_ω B_ω - I|`.
pub const THEOREM1_TOL: f64 = 1e-9;
/// Per unit of `N`.
pub const PROPOSITION1_TOL: f64 = 1e-9;
/// Per unit of `N`.
pub const PROPOSITION2_TOL: f64 = 1e-10;
/// Per unit of `N²`, the scale of the diagonal.
pub const ROW_SUM_TOL: f64 = 1e-15;
pub const ROUND_TRIP_TOL: f64 = 1e-12;

#[derive(Debug, Parser)]
#[command(name = "birkhoff-ps", version, about = "Birkhoff and Lagrange pseudospectral toolkit")]
struct Cli {
    /// Manifest path; defaults to `<first output stem>.<subcommand>.manifest.json`.
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Collocation nodes mapped to [t0, tf].
    Nodes(NodesArgs),
    /// Differentiation matrix.
    Diffmat(GridArgs),
    /// Birkhoff matrix of case a or b.
    Birkmat(BirkmatArgs),
    /// Condition-number sweep with fitted log-log slopes.
    Cond(CondArgs),
    /// Transcribe and solve an optimal control problem.
    Solve(SolveArgs),
    /// Propagate a solution's controls and compare with its states.
    Propagate(PropagateArgs),
    /// Solve on an increasing ladder of orders.
    Refine(RefineArgs),
    /// Operator identity suite.
    Check(CheckArgs),
}

#[derive(Debug, Args, Serialize)]
struct NodesArgs {
    #[arg(long, default_value = "cgl")]
    kind: GridKind,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = -1.0, allow_negative_numbers = true)]
    t0: f64,
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    tf: f64,
    /// CSV output; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct GridArgs {
    #[arg(long, default_value = "cgl")]
    kind: GridKind,
    #[arg(long)]
    n: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct BirkmatArgs {
    #[arg(long, default_value = "cgl")]
    kind: GridKind,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value = "a")]
    case: BirkhoffCase,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print `max |D B - I|` and fail above the tolerance.
    #[arg(long)]
    check_theorem1: bool,
}

#[derive(Debug, Args, Serialize)]
struct CondArgs {
    #[arg(long, value_delimiter = ',', default_value = "cgl")]
    grids: Vec<GridKind>,
    #[arg(long, value_delimiter = ',', default_value = "innerd,clagr,cbirk,abirk")]
    mats: Vec<MatrixKind>,
    /// Orders double from `nmin` up to `nmax`.
    #[arg(long, default_value_t = 16)]
    nmin: usize,
    #[arg(long, default_value_t = 1024)]
    nmax: usize,
    /// Explicit orders, overriding `nmin`/`nmax`.
    #[arg(long, value_delimiter = ',')]
    ns: Option<Vec<usize>>,
    /// CSV of grid, matrix, N, kappa; slopes go to `<stem>.slopes.json`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct ProblemArgs {
    /// oxfer, double-integrator or regulator.
    #[arg(long, default_value = "oxfer")]
    problem: String,
    /// Thrust acceleration of the orbit transfer, canonical units.
    #[arg(long = "A", default_value_t = 0.01)]
    accel: f64,
    /// Final-to-initial radius ratio of the orbit transfer.
    #[arg(long, default_value_t = 6.0)]
    r_ratio: f64,
    /// Regulator initial state.
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    x0: f64,
    /// Regulator horizon.
    #[arg(long, default_value_t = 1.0)]
    horizon: f64,
}

impl ProblemArgs {
    fn descriptor(&self) -> Result<ProblemDescriptor> {
        Ok(match self.problem.as_str() {
            "oxfer" | "orbit-transfer" => ProblemDescriptor::OrbitTransfer {
                accel: self.accel,
                r_ratio: self.r_ratio,
            },
            "double-integrator" | "di" => ProblemDescriptor::DoubleIntegrator,
            "regulator" => ProblemDescriptor::Regulator {
                x0: self.x0,
                horizon: self.horizon,
            },
            other => {
                return Err(invalid(
                    "problem",
                    format!("unknown problem `{other}` (oxfer, double-integrator, regulator)"),
                ))
            }
        })
    }
}

#[derive(Debug, Args, Serialize)]
struct SolverArgs {
    /// JSON file of solver options; flags below override it.
    #[arg(long)]
    options: Option<PathBuf>,
    #[arg(long)]
    tol_feas: Option<f64>,
    #[arg(long)]
    tol_opt: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
}

impl SolverArgs {
    fn options(&self) -> Result<SolverOptions> {
        let mut o: SolverOptions = match &self.options {
            Some(p) => serde_json::from_str(&read(p)?)?,
            None => SolverOptions::default(),
        };
        if let Some(v) = self.tol_feas {
            o.tol_feas = v;
        }
        if let Some(v) = self.tol_opt {
            o.tol_opt = v;
        }
        if let Some(v) = self.max_iter {
            o.max_iter = v;
        }
        o.validate()?;
        Ok(o)
    }
}

#[derive(Debug, Args, Serialize)]
struct SolveArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    #[arg(long, default_value_t = 64)]
    n: usize,
    #[arg(long, default_value = "cgl")]
    grid: GridKind,
    #[arg(long, default_value = "birkhoff-a")]
    method: MethodVariant,
    /// canonical or physical.
    #[arg(long, default_value = "canonical", value_parser = parse_scaling)]
    time_scaling: TimeScaling,
    #[command(flatten)]
    solver: SolverArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct PropagateArgs {
    #[arg(long)]
    solution: PathBuf,
    #[arg(long, default_value_t = 1e-10)]
    rtol: f64,
    #[arg(long, default_value_t = 1e-12)]
    atol: f64,
    /// lagrange or linear.
    #[arg(long, default_value = "lagrange")]
    control_interp: ControlInterpolation,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct RefineArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    #[arg(long, value_delimiter = ',', default_value = "16,32,64")]
    ladder: Vec<usize>,
    #[arg(long, default_value_t = 1e-6)]
    eps_tail: f64,
    #[arg(long)]
    max_steps: Option<usize>,
    #[arg(long, default_value = "birkhoff-a")]
    method: MethodVariant,
    #[command(flatten)]
    solver: SolverArgs,
    #[arg(long)]
    out: PathBuf,
    /// Per-rung diagnostics JSON.
    #[arg(long)]
    diag: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct CheckArgs {
    #[arg(long, value_delimiter = ',', default_value = "cgl,lgl")]
    kind: Vec<GridKind>,
    #[arg(long, value_delimiter = ',', default_value = "8,16,32,64,128,256,512")]
    n: Vec<usize>,
    /// Largest order for the random-input items and for grids other than
    /// CGL and LGL.
    #[arg(long, default_value_t = 256)]
    prop_nmax: usize,
    /// Random inputs per randomized item.
    #[arg(long, default_value_t = 100)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// JSON report of every item.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_scaling(s: &str) -> std::result::Result<TimeScaling, String> {
    match s {
        "canonical" => Ok(TimeScaling::Canonical),
        "physical" => Ok(TimeScaling::Physical),
        _ => Err(format!("unknown time scaling `{s}` (canonical or physical)")),
    }
}

/// Record of one invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub argv: Vec<String>,
    pub parameters: Value,
    pub version: String,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
    pub outputs: Vec<PathBuf>,
    pub metrics: Map<String, Value>,
    pub exit_code: i32,
}

/// Solution file written by `solve` and `refine` and read by `propagate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionFile {
    pub problem: ProblemDescriptor,
    pub method: MethodVariant,
    pub status: SolveStatus,
    pub kkt: KktReport,
    pub iterations: usize,
    pub message: String,
    #[serde(flatten)]
    pub trajectory: Trajectory,
}

/// Result of one identity check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckItem {
    pub name: String,
    pub grid: GridKind,
    pub n: usize,
    pub value: f64,
    pub tolerance: f64,
    pub passed: bool,
}

struct Outcome {
    code: i32,
    outputs: Vec<PathBuf>,
    metrics: Map<String, Value>,
}

impl Outcome {
    fn new() -> Self {
        Outcome {
            code: EXIT_OK,
            outputs: Vec::new(),
            metrics: Map::new(),
        }
    }

    fn metric(&mut self, key: &str, v: impl Serialize) {
        self.metrics.insert(key.to_string(), serde_json::to_value(v).unwrap_or(Value::Null));
    }
}

/// Parses `args` (program name first), runs the subcommand and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        2 => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    let _ = env_logger::Builder::from_default_env().filter_level(level).try_init();
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return EXIT_USAGE;
    }
    let (name, params) = describe(&cli.command);
    let started = Instant::now();
    match dispatch(&cli.command) {
        Ok(mut out) => {
            out.metric("elapsed_s", started.elapsed().as_secs_f64());
            let manifest_path = cli.manifest.clone().or_else(|| out.outputs.first().map(|p| manifest_beside(p, name)));
            if let Some(path) = manifest_path {
                let manifest = RunManifest {
                    subcommand: name.to_string(),
                    argv: argv.iter().map(|a| a.to_string_lossy().into_owned()).collect(),
                    parameters: params,
                    version: env!("CARGO_PKG_VERSION").to_string(),
                    timestamp: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
                    outputs: out.outputs.clone(),
                    metrics: out.metrics,
                    exit_code: out.code,
                };
                let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
                if let Err(e) = fs::write(&path, text) {
                    eprintln!("error: cannot write manifest {}: {e}", path.display());
                    return EXIT_CHECK_FAILED;
                }
            }
            out.code
        }
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::InvalidParameter { .. } | Error::UnsupportedGrid { .. } | Error::Io(_) | Error::Json(_) => EXIT_USAGE,
                _ => EXIT_CHECK_FAILED,
            }
        }
    }
}

fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .map_err(|_| invalid("BPS_THREADS", format!("expected a positive integer, got `{v}`")))?;
    if n == 0 {
        return Err(invalid("BPS_THREADS", "must be at least 1"));
    }
    // A second call in the same process keeps the first pool.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

fn describe(cmd: &Command) -> (&'static str, Value) {
    fn v<T: Serialize>(x: &T) -> Value {
        serde_json::to_value(x).unwrap_or(Value::Null)
    }
    match cmd {
        Command::Nodes(a) => ("nodes", v(a)),
        Command::Diffmat(a) => ("diffmat", v(a)),
        Command::Birkmat(a) => ("birkmat", v(a)),
        Command::Cond(a) => ("cond", v(a)),
        Command::Solve(a) => ("solve", v(a)),
        Command::Propagate(a) => ("propagate", v(a)),
        Command::Refine(a) => ("refine", v(a)),
        Command::Check(a) => ("check", v(a)),
    }
}

fn dispatch(cmd: &Command) -> Result<Outcome> {
    match cmd {
        Command::Nodes(a) => nodes(a),
        Command::Diffmat(a) => diffmat(a),
        Command::Birkmat(a) => birkmat(a),
        Command::Cond(a) => cond(a),
        Command::Solve(a) => solve_cmd(a),
        Command::Propagate(a) => propagate_cmd(a),
        Command::Refine(a) => refine_cmd(a),
        Command::Check(a) => check(a),
    }
}

/// `{:.16e}`: 17 significant digits, enough to round-trip an `f64`.
pub fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

fn manifest_beside(p: &Path, subcommand: &str) -> PathBuf {
    with_suffix(p, &format!("{subcommand}.manifest.json"))
}

fn with_suffix(p: &Path, suffix: &str) -> PathBuf {
    let stem = p.file_stem().map_or_else(|| "out".into(), |s| s.to_string_lossy().into_owned());
    p.with_file_name(format!("{stem}.{suffix}"))
}

fn read(p: &Path) -> Result<String> {
    Ok(fs::read_to_string(p)?)
}

fn emit(out: &mut Outcome, path: Option<&PathBuf>, text: &str) -> Result<()> {
    match path {
        Some(p) => {
            fs::write(p, text)?;
            out.outputs.push(p.clone());
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn matrix_csv(m: &nalgebra::DMatrix<f64>) -> String {
    let mut s = String::new();
    for r in m.row_iter() {
        let row: Vec<String> = r.iter().map(|&v| fmt17(v)).collect();
        let _ = writeln!(s, "{}", row.join(","));
    }
    s
}

fn nodes(a: &NodesArgs) -> Result<Outcome> {
    let g = make_grid(a.kind, a.n, (a.t0, a.tf))?;
    let mut text = String::new();
    for t in g.to_physical_time() {
        let _ = writeln!(text, "{}", fmt17(t));
    }
    let mut out = Outcome::new();
    emit(&mut out, a.out.as_ref(), &text)?;
    out.metric("nodes", a.n + 1);
    Ok(out)
}

fn diffmat(a: &GridArgs) -> Result<Outcome> {
    let ops = diff_matrix(&build_basis(&Grid::new(a.kind, a.n)?)?);
    let mut out = Outcome::new();
    emit(&mut out, a.out.as_ref(), &matrix_csv(&ops.d))?;
    out.metric("max_abs_entry", ops.d.amax());
    Ok(out)
}

fn birkmat(a: &BirkmatArgs) -> Result<Outcome> {
    let basis = build_basis(&Grid::new(a.kind, a.n)?)?;
    let birk = build_birkhoff(&basis, a.case)?;
    let mut out = Outcome::new();
    emit(&mut out, a.out.as_ref(), &matrix_csv(&birk.b))?;
    if a.check_theorem1 {
        let r = theorem1_residual(&diff_matrix(&basis), &birk)?;
        let ok = r <= THEOREM1_TOL;
        eprintln!("theorem1 residual {} ({})", fmt17(r), if ok { "pass" } else { "FAIL" });
        out.metric("theorem1_residual", r);
        if !ok {
            out.code = EXIT_CHECK_FAILED;
        }
    }
    Ok(out)
}

fn cond(a: &CondArgs) -> Result<Outcome> {
    let ns = match &a.ns {
        Some(ns) => ns.clone(),
        None => {
            if a.nmin < 1 || a.nmax < a.nmin {
                return Err(invalid("nmin", "need 1 <= nmin <= nmax"));
            }
            std::iter::successors(Some(a.nmin), |&n| Some(2 * n)).take_while(|&n| n <= a.nmax).collect()
        }
    };
    let sweep = sweep_and_fit(&a.grids, &a.mats, &ns)?;
    let mut csv = String::from("grid,matrix,N,kappa\n");
    for r in &sweep.records {
        let _ = writeln!(csv, "{},{},{},{}", r.grid, r.matrix, r.n, fmt17(r.kappa));
    }
    let mut out = Outcome::new();
    emit(&mut out, a.out.as_ref(), &csv)?;
    let slopes: Vec<Value> = sweep
        .fits
        .iter()
        .map(|f| json!({"grid": f.grid, "matrix": f.matrix, "slope": f.slope, "partial": f.partial, "message": f.message}))
        .collect();
    let slopes = json!({ "orders": ns, "fits": slopes });
    match &a.out {
        Some(p) => {
            let sp = with_suffix(p, "slopes.json");
            fs::write(&sp, serde_json::to_string_pretty(&slopes)?)?;
            out.outputs.push(sp);
        }
        None => println!("{}", serde_json::to_string_pretty(&slopes)?),
    }
    for f in &sweep.fits {
        if let Some(s) = f.slope {
            out.metric(&format!("slope_{}_{}", f.grid, f.matrix), s);
        }
        if f.partial {
            eprintln!("warning: {} {} series cut short: {}", f.grid, f.matrix, f.message.as_deref().unwrap_or(""));
        }
    }
    Ok(out)
}

fn solve_cmd(a: &SolveArgs) -> Result<Outcome> {
    let desc = a.problem.descriptor()?;
    let prob = desc.build()?;
    let opts = a.solver.options()?;
    let grid = Grid::new(a.grid, a.n)?;
    let t = transcribe_with(prob.as_ref(), &grid, a.method, a.time_scaling)?;
    let sol = solve(&t, &opts, &t.initial_point()?)?;
    let file = SolutionFile {
        problem: desc,
        method: a.method,
        status: sol.status,
        kkt: sol.kkt,
        iterations: sol.iterations,
        message: sol.message.clone(),
        trajectory: t.extract_trajectory(&sol.x)?,
    };
    let mut out = Outcome::new();
    fs::write(&a.out, serde_json::to_string_pretty(&file)?)?;
    out.outputs.push(a.out.clone());
    solution_metrics(&mut out, &file);
    if let Some(r) = t.reconstruction_residual(&sol.x) {
        out.metric("reconstruction_residual", r);
    }
    eprintln!(
        "{:?}: t_f {} objective {} after {} iterations",
        file.status,
        fmt17(file.trajectory.tf),
        fmt17(file.trajectory.objective),
        file.iterations
    );
    if sol.status != SolveStatus::Optimal {
        out.code = EXIT_CHECK_FAILED;
    }
    Ok(out)
}

fn solution_metrics(out: &mut Outcome, f: &SolutionFile) {
    out.metric("status", f.status);
    out.metric("tf", f.trajectory.tf);
    out.metric("objective", f.trajectory.objective);
    out.metric("feasibility", f.kkt.feasibility);
    out.metric("stationarity", f.kkt.stationarity);
    out.metric("iterations", f.iterations);
}

/// Reads a solution file, rebuilding its grid from family and order.
pub fn read_solution(path: &Path) -> Result<SolutionFile> {
    let mut f: SolutionFile = serde_json::from_str(&read(path)?)?;
    let g = &f.trajectory.grid;
    if g.kind() != GridKind::Custom {
        f.trajectory.grid = Grid::new(g.kind(), g.order())?;
    }
    Ok(f)
}

fn propagate_cmd(a: &PropagateArgs) -> Result<Outcome> {
    let f = read_solution(&a.solution)?;
    let prob = f.problem.build()?;
    let rep = propagate_with(prob.as_ref(), &f.trajectory, a.rtol, a.atol, a.control_interp)?;
    let nx = prob.nx();
    let mut csv = String::from("t");
    for i in 0..nx {
        let _ = write!(csv, ",x{i}_ps,x{i}_propagated,x{i}_error");
    }
    csv.push('\n');
    for (k, &t) in rep.times.iter().enumerate() {
        csv.push_str(&fmt17(t));
        for i in 0..nx {
            let _ = write!(
                csv,
                ",{},{},{}",
                fmt17(rep.ps_states[k][i]),
                fmt17(rep.propagated[k][i]),
                fmt17(rep.errors[k][i])
            );
        }
        csv.push('\n');
    }
    let mut out = Outcome::new();
    fs::write(&a.out, csv)?;
    out.outputs.push(a.out.clone());
    let fe = feasibility_error(&rep);
    eprintln!(
        "max error per state {:?}, terminal miss {}",
        fe.per_state.iter().map(|&v| fmt17(v)).collect::<Vec<_>>(),
        fmt17(fe.terminal_miss)
    );
    out.metric("max_error_per_state", &fe.per_state);
    out.metric("terminal_miss", fe.terminal_miss);
    out.metric("rhs_evaluations", rep.stats.evaluations);
    Ok(out)
}

fn refine_cmd(a: &RefineArgs) -> Result<Outcome> {
    let desc = a.problem.descriptor()?;
    let prob = desc.build()?;
    let opts = a.solver.options()?;
    let plan = RefinementPlan {
        ladder: a.ladder.clone(),
        eps_tail: a.eps_tail,
        max_steps: a.max_steps.unwrap_or(a.ladder.len()),
    };
    let r = refine_solve_with(prob.as_ref(), &plan, a.method, &opts)?;
    let sel = &r.rungs[r.selected];
    let file = SolutionFile {
        problem: desc,
        method: a.method,
        status: sel.status,
        kkt: sel.kkt,
        iterations: r.rungs.iter().map(|g| g.iterations).sum(),
        message: format!("{:?}", r.outcome),
        trajectory: r.trajectory.clone(),
    };
    let mut out = Outcome::new();
    fs::write(&a.out, serde_json::to_string_pretty(&file)?)?;
    out.outputs.push(a.out.clone());
    if let Some(d) = &a.diag {
        fs::write(d, serde_json::to_string_pretty(&json!({"outcome": r.outcome, "selected": r.selected, "rungs": r.rungs}))?)?;
        out.outputs.push(d.clone());
    }
    solution_metrics(&mut out, &file);
    out.metric("outcome", r.outcome);
    out.metric("selected_order", sel.order);
    for g in &r.rungs {
        eprintln!(
            "N = {}: {:?}, objective {}, feasibility {:.3e}, tail {:.3e}",
            g.order,
            g.status,
            fmt17(g.objective),
            g.feasibility,
            g.max_tail_ratio()
        );
    }
    if matches!(r.outcome, RefinementOutcome::Failed { .. }) {
        out.code = EXIT_CHECK_FAILED;
    }
    Ok(out)
}

/// Runs the identity suite: `D B = I` in both cases, the boundary-derivative
/// and boundary-column identities for case a, differentiation-matrix row sums
/// and, on CGL, the modal round trip.
pub fn identity_suite(kinds: &[GridKind], ns: &[usize], prop_nmax: usize, samples: usize, seed: u64) -> Result<Vec<CheckItem>> {
    if kinds.is_empty() || ns.is_empty() {
        return Err(invalid("kind", "nothing to check"));
    }
    let mut items = Vec::new();
    for &kind in kinds {
        for &n in ns {
            let small = n <= prop_nmax;
            if !small && !kind.is_lobatto() {
                continue;
            }
            let basis = build_basis(&Grid::new(kind, n)?)?;
            let ops = diff_matrix(&basis);
            let nf = n as f64;
            let mut push = |name: &str, value: f64, tolerance: f64| {
                items.push(CheckItem {
                    name: name.to_string(),
                    grid: kind,
                    n,
                    value,
                    tolerance,
                    passed: value <= tolerance,
                })
            };
            let birk_a = build_birkhoff(&basis, BirkhoffCase::A)?;
            let birk_b = build_birkhoff(&basis, BirkhoffCase::B)?;
            push("theorem1-a", theorem1_residual(&ops, &birk_a)?, THEOREM1_TOL);
            push("theorem1-b", theorem1_residual(&ops, &birk_b)?, THEOREM1_TOL);
            let row_sum = ops
                .d
                .row_iter()
                .map(|r| exact_sum(r.iter().copied()).abs())
                .fold(0.0_f64, f64::max);
            push("row-sum", row_sum, ROW_SUM_TOL * nf * nf);
            if !small {
                continue;
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (n as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            let mut p1 = 0.0_f64;
            for _ in 0..samples {
                let xe = rng.random_range(-1.0..=1.0);
                let v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..=1.0)).collect();
                p1 = p1.max(proposition1_residual(&ops, &birk_a, xe, &v)?);
            }
            push("proposition1", p1, PROPOSITION1_TOL * nf);
            push("proposition2", proposition2_residual(&ops, &birk_a)?, PROPOSITION2_TOL * nf);
            if kind == GridKind::Cgl {
                let mut worst = 0.0_f64;
                for _ in 0..samples.max(1) {
                    let c = SpectralCoefficients {
                        coeffs: (0..=n).map(|_| rng.random_range(-1.0..=1.0)).collect(),
                    };
                    let vals: Vec<f64> = basis.grid().nodes().iter().map(|&t| c.eval(t)).collect();
                    let back = modal_coefficients(basis.grid(), &vals)?;
                    worst = c.coeffs.iter().zip(&back.coeffs).fold(worst, |m, (a, b)| m.max((a - b).abs()));
                }
                push("modal-round-trip", worst, ROUND_TRIP_TOL);
            }
        }
    }
    Ok(items)
}

fn check(a: &CheckArgs) -> Result<Outcome> {
    let items = identity_suite(&a.kind, &a.n, a.prop_nmax, a.samples, a.seed)?;
    let mut out = Outcome::new();
    let mut failed = Vec::new();
    for it in &items {
        println!(
            "{} {} {} N={} value {} tolerance {}",
            if it.passed { "PASS" } else { "FAIL" },
            it.name,
            it.grid,
            it.n,
            fmt17(it.value),
            fmt17(it.tolerance)
        );
        if !it.passed {
            failed.push(format!("{} {} N={}", it.name, it.grid, it.n));
        }
    }
    if let Some(p) = &a.out {
        fs::write(p, serde_json::to_string_pretty(&items)?)?;
        out.outputs.push(p.clone());
    }
    for name in ["theorem1-a", "theorem1-b", "proposition1", "proposition2", "row-sum", "modal-round-trip"] {
        let worst = items.iter().filter(|i| i.name == name).map(|i| i.value).fold(f64::NAN, f64::max);
        if worst.is_finite() {
            out.metric(&format!("max_{}", name.replace('-', "_")), worst);
        }
    }
    out.metric("items", items.len());
    out.metric("failed", &failed);
    if failed.is_empty() {
        println!("all {} checks passed", items.len());
    } else {
        println!("{} of {} checks failed: {}", failed.len(), items.len(), failed.join("; "));
        out.code = EXIT_CHECK_FAILED;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fmt17_round_trips() {
        for v in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, f64::MIN_POSITIVE] {
            assert_eq!(fmt17(v).parse::<f64>().unwrap(), v);
        }
    }

    #[test]
    fn suffixes_replace_the_extension() {
        assert_eq!(with_suffix(Path::new("/tmp/cond.csv"), "slopes.json"), PathBuf::from("/tmp/cond.slopes.json"));
        assert_eq!(manifest_beside(Path::new("sol.json"), "solve"), PathBuf::from("sol.solve.manifest.json"));
    }

    #[test]
    fn problem_names() {
        let p = |s: &str| ProblemArgs {
            problem: s.into(),
            accel: 5e-4,
            r_ratio: 6.0,
            x0: 2.0,
            horizon: 3.0,
        };
        assert_eq!(
            p("oxfer").descriptor().unwrap(),
            ProblemDescriptor::OrbitTransfer { accel: 5e-4, r_ratio: 6.0 }
        );
        assert_eq!(p("di").descriptor().unwrap(), ProblemDescriptor::DoubleIntegrator);
        assert!(p("brachistochrone").descriptor().is_err());
    }

    #[test]
    fn identity_suite_passes_on_lobatto_grids() {
        let items = identity_suite(&[GridKind::Cgl, GridKind::Lgl], &[8, 32], 256, 10, 1).unwrap();
        assert_eq!(items.len(), 2 * 2 * 5 + 2);
        for it in &items {
            assert!(it.passed, "{it:?}");
        }
    }

    #[test]
    fn large_orders_skip_the_random_items() {
        let items = identity_suite(&[GridKind::Cgl, GridKind::Uniform], &[16], 8, 5, 0).unwrap();
        let names: Vec<&str> = items.iter().map(|i| i.name.as_str()).collect();
        assert_eq!(names, ["theorem1-a", "theorem1-b", "row-sum"]);
    }
}
