//! Command-line front end: JSON problem descriptions in, CSV results and
//! gnuplot scripts out.
//!
//! Exit codes: 0 success, 2 validation error (the message names the
//! offending field or flag), 3 solver non-convergence, 4 regularity or
//! compatibility rejection.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use clap::{Args, Parser, Subcommand};
use nalgebra::{DMatrix, DVector};
use serde_json::Value;

use crate::error::Error;
use crate::hum::{self, HumProblem};
use crate::model::{Grid, LtiSystem, Signal, TargetSignal};
use crate::operators;
use crate::pde::{self, ChainSpec};
use crate::tracker;

/// Parsed command line.
#[derive(Debug, Parser)]
#[command(name = "trackctl", version, about = "Tracking controls for linear systems: synthesis, penalized solving, diagnostics")]
pub struct RunConfig {
    #[command(subcommand)]
    pub command: Command,
}

/// Options shared by every subcommand.
#[derive(Debug, Args)]
pub struct IoOptions {
    /// JSON problem description.
    #[arg(long)]
    pub input: PathBuf,
    /// Directory for result files (created if missing).
    #[arg(long, default_value = ".")]
    pub output_dir: PathBuf,
    /// Override the time horizon T from the problem file.
    #[arg(long, value_name = "T")]
    pub t: Option<f64>,
    /// Override the step count N from the problem file.
    #[arg(long, value_name = "N")]
    pub n: Option<usize>,
    /// Also write a gnuplot script next to the CSV.
    #[arg(long)]
    pub emit_plot_script: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compute the controllable canonical form of (A, B).
    Brunovsky {
        #[command(flatten)]
        io: IoOptions,
    },
    /// Synthesize the exact tracking control and verify it by simulation.
    Track {
        #[command(flatten)]
        io: IoOptions,
        /// Simulation refinement factor.
        #[arg(long, default_value_t = 4)]
        refine: usize,
    },
    /// Solve the penalized tracking problem.
    Hum {
        #[command(flatten)]
        io: IoOptions,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long)]
        cg_tol: Option<f64>,
    },
    /// Explicit cascade control for the semi-discrete heat chain.
    PdeHeat {
        #[command(flatten)]
        io: IoOptions,
        #[arg(long, default_value_t = 4)]
        refine: usize,
    },
    /// Explicit cascade control for the semi-discrete wave chain.
    PdeWave {
        #[command(flatten)]
        io: IoOptions,
        #[arg(long, default_value_t = 4)]
        refine: usize,
    },
    /// Spectrum and unique-continuation diagnostics of the discrete operator.
    Gramian {
        #[command(flatten)]
        io: IoOptions,
        /// Comma-separated step counts for the refinement sweep.
        #[arg(long, default_value = "50,100,200,400")]
        grid_list: String,
    },
    /// Explicit modal control from spectral data.
    Moment {
        #[command(flatten)]
        io: IoOptions,
    },
    /// Re-solve the penalized problem across tracking weights.
    Sweep {
        #[command(flatten)]
        io: IoOptions,
        /// Comma-separated alpha values (overrides the problem file).
        #[arg(long)]
        alphas: Option<String>,
        #[arg(long)]
        beta: Option<f64>,
    },
}

/// Failure with its process exit code.
#[derive(Debug)]
struct CliError {
    code: i32,
    message: String,
}

impl CliError {
    fn validation(path: &str, message: impl std::fmt::Display) -> Self {
        CliError { code: 2, message: format!("invalid field '{path}': {message}") }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::InsufficientRegularity { .. }
            | Error::CompatibilityViolation { .. }
            | Error::NotControllable { .. }
            | Error::AllZeroOutput => 4,
            Error::NoConvergence { .. } => 3,
            _ => 2,
        };
        CliError { code, message: e.to_string() }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Entry point used by the binary; returns the process exit code.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let config = match RunConfig::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            // clap renders its own message (also for --help/--version)
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(&config.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

fn dispatch(command: &Command) -> CliResult<()> {
    match command {
        Command::Brunovsky { io } => cmd_brunovsky(io),
        Command::Track { io, refine } => cmd_track(io, *refine),
        Command::Hum { io, alpha, beta, cg_tol } => cmd_hum(io, *alpha, *beta, *cg_tol),
        Command::PdeHeat { io, refine } => cmd_pde(io, *refine, ChainKind::Heat),
        Command::PdeWave { io, refine } => cmd_pde(io, *refine, ChainKind::Wave),
        Command::Gramian { io, grid_list } => cmd_gramian(io, grid_list),
        Command::Moment { io } => cmd_moment(io),
        Command::Sweep { io, alphas, beta } => cmd_sweep(io, alphas.as_deref(), *beta),
    }
}

// ---------------------------------------------------------------------------
// problem file

/// Parsed problem description. Matrices and the chain generator are
/// alternatives; the target horizon comes from `T`/`N` unless overridden on
/// the command line.
struct Problem {
    a: Option<DMatrix<f64>>,
    b: Option<DMatrix<f64>>,
    e: Option<DMatrix<f64>>,
    x0: Option<DVector<f64>>,
    chain: Option<(ChainSpec, ChainControl)>,
    t_final: Option<f64>,
    steps: Option<usize>,
    target: Option<TargetSignal>,
    alpha: Option<f64>,
    beta: Option<f64>,
    moment: Option<MomentSpec>,
    alphas: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum ChainKind {
    Heat,
    Wave,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum ChainControl {
    Boundary,
    Distributed,
}

struct MomentSpec {
    lambdas: Vec<f64>,
    c: Vec<f64>,
    targets: Vec<TargetSignal>,
}

fn load_problem(io: &IoOptions) -> CliResult<Problem> {
    let text = fs::read_to_string(&io.input).map_err(|e| CliError {
        code: 2,
        message: format!("cannot read '{}': {e}", io.input.display()),
    })?;
    let root: Value = serde_json::from_str(&text)
        .map_err(|e| CliError { code: 2, message: format!("malformed JSON in '{}': {e}", io.input.display()) })?;
    let obj = root
        .as_object()
        .ok_or_else(|| CliError::validation("<root>", "expected a JSON object"))?;

    for key in obj.keys() {
        const KNOWN: [&str; 11] =
            ["A", "B", "E", "x0", "T", "N", "target", "alpha", "beta", "chain", "moment"];
        if !KNOWN.contains(&key.as_str()) && key != "alphas" {
            return Err(CliError::validation(key, "unknown field"));
        }
    }

    let t_final = obj.get("T").map(|v| as_finite(v, "T")).transpose()?;
    if let Some(t) = t_final {
        if t <= 0.0 {
            return Err(CliError::validation("T", "must be positive"));
        }
    }
    let steps = obj.get("N").map(|v| as_count(v, "N")).transpose()?;
    if let Some(n) = steps {
        if n < 2 {
            return Err(CliError::validation("N", "must be at least 2"));
        }
    }

    let target = match obj.get("target") {
        Some(v) => Some(parse_target(v, "target", t_final.unwrap_or(1.0))?),
        None => None,
    };

    let alpha = obj.get("alpha").map(|v| as_finite(v, "alpha")).transpose()?;
    if let Some(a) = alpha {
        if a < 0.0 {
            return Err(CliError::validation("alpha", "must be nonnegative"));
        }
    }
    let beta = obj.get("beta").map(|v| as_finite(v, "beta")).transpose()?;
    if let Some(b) = beta {
        if b <= 0.0 {
            return Err(CliError::validation("beta", "must be positive"));
        }
    }

    let chain = match obj.get("chain") {
        Some(v) => {
            let cobj = v
                .as_object()
                .ok_or_else(|| CliError::validation("chain", "expected an object"))?;
            let length = as_finite(
                cobj.get("L").ok_or_else(|| CliError::validation("chain.L", "missing"))?,
                "chain.L",
            )?;
            let m = as_count(
                cobj.get("M").ok_or_else(|| CliError::validation("chain.M", "missing"))?,
                "chain.M",
            )?;
            let control = match cobj.get("control").and_then(Value::as_str) {
                None | Some("boundary") => ChainControl::Boundary,
                Some("distributed") => ChainControl::Distributed,
                Some(other) => {
                    return Err(CliError::validation(
                        "chain.control",
                        format!("expected 'boundary' or 'distributed', got '{other}'"),
                    ))
                }
            };
            let spec = ChainSpec::new(length, m)
                .map_err(|e| CliError::validation("chain", e))?;
            Some((spec, control))
        }
        None => None,
    };

    if chain.is_some() && obj.contains_key("A") {
        return Err(CliError::validation("A", "provide either explicit matrices or 'chain', not both"));
    }

    let a = obj.get("A").map(|v| as_matrix(v, "A")).transpose()?;
    let b = obj.get("B").map(|v| as_matrix(v, "B")).transpose()?;
    let e = obj.get("E").map(|v| as_matrix(v, "E")).transpose()?;
    let x0 = obj.get("x0").map(|v| as_vector(v, "x0")).transpose()?;

    let moment = match obj.get("moment") {
        Some(v) => {
            let mobj = v
                .as_object()
                .ok_or_else(|| CliError::validation("moment", "expected an object"))?;
            let lambdas = as_f64_list(
                mobj.get("lambdas")
                    .ok_or_else(|| CliError::validation("moment.lambdas", "missing"))?,
                "moment.lambdas",
            )?;
            let c = as_f64_list(
                mobj.get("c").ok_or_else(|| CliError::validation("moment.c", "missing"))?,
                "moment.c",
            )?;
            let targets_v = mobj
                .get("targets")
                .ok_or_else(|| CliError::validation("moment.targets", "missing"))?
                .as_array()
                .ok_or_else(|| CliError::validation("moment.targets", "expected an array"))?;
            let targets = targets_v
                .iter()
                .enumerate()
                .map(|(i, tv)| parse_target(tv, &format!("moment.targets[{i}]"), t_final.unwrap_or(1.0)))
                .collect::<CliResult<Vec<_>>>()?;
            Some(MomentSpec { lambdas, c, targets })
        }
        None => None,
    };

    let alphas = obj.get("alphas").map(|v| as_f64_list(v, "alphas")).transpose()?;

    Ok(Problem { a, b, e, x0, chain, t_final, steps, target, alpha, beta, moment, alphas })
}

impl Problem {
    fn grid(&self, io: &IoOptions) -> CliResult<Grid> {
        let t = io.t.or(self.t_final).ok_or_else(|| CliError::validation("T", "missing"))?;
        let n = io.n.or(self.steps).ok_or_else(|| CliError::validation("N", "missing"))?;
        Grid::new(t, n).map_err(|e| CliError::validation("T/N", e))
    }

    fn require_target(&self) -> CliResult<&TargetSignal> {
        self.target.as_ref().ok_or_else(|| CliError::validation("target", "missing"))
    }

    /// Plant from explicit matrices or the chain generator.
    fn system(&self, kind_for_chain: Option<ChainKind>) -> CliResult<LtiSystem> {
        if let Some((spec, control)) = &self.chain {
            let sys = match (kind_for_chain.unwrap_or(ChainKind::Heat), control) {
                (ChainKind::Heat, ChainControl::Boundary) => pde::heat_boundary_system(spec),
                (ChainKind::Heat, ChainControl::Distributed) => pde::heat_distributed_system(spec),
                (ChainKind::Wave, _) => pde::wave_boundary_system(spec),
            };
            return Ok(sys);
        }
        let a = self.a.clone().ok_or_else(|| CliError::validation("A", "missing"))?;
        let b = self.b.clone().ok_or_else(|| CliError::validation("B", "missing"))?;
        let e = self.e.clone().ok_or_else(|| CliError::validation("E", "missing"))?;
        let x0 = self
            .x0
            .clone()
            .unwrap_or_else(|| DVector::zeros(a.nrows()));
        LtiSystem::new(a, b, e, x0).map_err(|err| CliError::validation("A/B/E/x0", err))
    }
}

// ---------------------------------------------------------------------------
// JSON helpers with path-carrying errors

fn as_finite(v: &Value, path: &str) -> CliResult<f64> {
    v.as_f64()
        .filter(|x| x.is_finite())
        .ok_or_else(|| CliError::validation(path, "expected a finite number"))
}

fn as_count(v: &Value, path: &str) -> CliResult<usize> {
    v.as_u64()
        .map(|x| x as usize)
        .ok_or_else(|| CliError::validation(path, "expected a nonnegative integer"))
}

fn as_f64_list(v: &Value, path: &str) -> CliResult<Vec<f64>> {
    let arr = v
        .as_array()
        .ok_or_else(|| CliError::validation(path, "expected an array of numbers"))?;
    arr.iter()
        .enumerate()
        .map(|(i, x)| as_finite(x, &format!("{path}[{i}]")))
        .collect()
}

fn as_matrix(v: &Value, path: &str) -> CliResult<DMatrix<f64>> {
    let rows = v
        .as_array()
        .ok_or_else(|| CliError::validation(path, "expected a nested array"))?;
    if rows.is_empty() {
        return Err(CliError::validation(path, "matrix must have at least one row"));
    }
    let mut data: Vec<Vec<f64>> = Vec::with_capacity(rows.len());
    for (i, row) in rows.iter().enumerate() {
        let row = as_f64_list(row, &format!("{path}[{i}]"))?;
        if let Some(first) = data.first() {
            if row.len() != first.len() {
                return Err(CliError::validation(
                    &format!("{path}[{i}]"),
                    format!("row length {} differs from {}", row.len(), first.len()),
                ));
            }
        }
        if row.is_empty() {
            return Err(CliError::validation(&format!("{path}[{i}]"), "row must not be empty"));
        }
        data.push(row);
    }
    Ok(DMatrix::from_fn(data.len(), data[0].len(), |i, j| data[i][j]))
}

fn as_vector(v: &Value, path: &str) -> CliResult<DVector<f64>> {
    Ok(DVector::from_vec(as_f64_list(v, path)?))
}

fn parse_target(v: &Value, path: &str, t_final: f64) -> CliResult<TargetSignal> {
    let obj = v
        .as_object()
        .ok_or_else(|| CliError::validation(path, "expected an object with a 'kind' field"))?;
    let kind = obj
        .get("kind")
        .and_then(Value::as_str)
        .ok_or_else(|| CliError::validation(&format!("{path}.kind"), "expected a string"))?;
    let field = |k: &str| -> CliResult<&Value> {
        obj.get(k).ok_or_else(|| CliError::validation(&format!("{path}.{k}"), "missing"))
    };
    match kind {
        "polynomial" => Ok(TargetSignal::polynomial(&as_f64_list(
            field("coeffs")?,
            &format!("{path}.coeffs"),
        )?)),
        "sinusoid" => Ok(TargetSignal::sinusoid(
            as_finite(field("amp")?, &format!("{path}.amp"))?,
            as_finite(field("omega")?, &format!("{path}.omega"))?,
            as_finite(field("phase")?, &format!("{path}.phase"))?,
        )),
        "exponential" => Ok(TargetSignal::exponential(
            as_finite(field("amp")?, &format!("{path}.amp"))?,
            as_finite(field("rate")?, &format!("{path}.rate"))?,
        )),
        "floor_shift" => Ok(TargetSignal::floor_shift(as_finite(
            field("offset")?,
            &format!("{path}.offset"),
        )?)),
        "tabulated" => Ok(TargetSignal::tabulated(
            t_final,
            as_f64_list(field("samples")?, &format!("{path}.samples"))?,
        )),
        "sum" => {
            let terms = field("terms")?
                .as_array()
                .ok_or_else(|| CliError::validation(&format!("{path}.terms"), "expected an array"))?;
            let parsed = terms
                .iter()
                .enumerate()
                .map(|(i, term)| {
                    let tpath = format!("{path}.terms[{i}]");
                    let tobj = term
                        .as_object()
                        .ok_or_else(|| CliError::validation(&tpath, "expected an object"))?;
                    let w = as_finite(
                        tobj.get("weight")
                            .ok_or_else(|| CliError::validation(&format!("{tpath}.weight"), "missing"))?,
                        &format!("{tpath}.weight"),
                    )?;
                    let t = parse_target(
                        tobj.get("target")
                            .ok_or_else(|| CliError::validation(&format!("{tpath}.target"), "missing"))?,
                        &format!("{tpath}.target"),
                        t_final,
                    )?;
                    Ok((w, t))
                })
                .collect::<CliResult<Vec<_>>>()?;
            Ok(TargetSignal::sum(parsed))
        }
        "product" => {
            let factors = field("factors")?
                .as_array()
                .ok_or_else(|| CliError::validation(&format!("{path}.factors"), "expected an array"))?;
            if factors.len() < 2 {
                return Err(CliError::validation(
                    &format!("{path}.factors"),
                    "needs at least two factors",
                ));
            }
            let mut parsed = factors
                .iter()
                .enumerate()
                .map(|(i, f)| parse_target(f, &format!("{path}.factors[{i}]"), t_final))
                .collect::<CliResult<Vec<_>>>()?;
            let mut acc = parsed.remove(0);
            for f in parsed {
                acc = TargetSignal::product(acc, f);
            }
            Ok(acc)
        }
        "capped" => {
            let order = as_count(field("max_order")?, &format!("{path}.max_order"))?;
            let inner = parse_target(field("target")?, &format!("{path}.target"), t_final)?;
            Ok(inner.with_max_derivative(order))
        }
        other => Err(CliError::validation(
            &format!("{path}.kind"),
            format!("unknown target kind '{other}'"),
        )),
    }
}

// ---------------------------------------------------------------------------
// result files

/// Writes a CSV with one row per node: 17 significant digits, LF endings.
pub fn write_csv(path: &Path, header: &[String], rows: &[Vec<f64>]) -> std::io::Result<()> {
    let mut out = String::new();
    out.push_str(&header.join(","));
    out.push('\n');
    for row in rows {
        let fields: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    fs::write(path, out)
}

/// Reads back a CSV produced by [`write_csv`].
pub fn read_csv(path: &Path) -> std::io::Result<(Vec<String>, Vec<Vec<f64>>)> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .map(|l| l.split(',').map(str::to_string).collect())
        .unwrap_or_default();
    let rows = lines
        .map(|l| l.split(',').map(|f| f.parse::<f64>().unwrap_or(f64::NAN)).collect())
        .collect();
    Ok((header, rows))
}

/// Writes a standalone gnuplot script next to the CSV: solid output curve,
/// dashed target, and (in the two-pane layout) a separate control pane.
pub fn emit_plot_script(
    path: &Path,
    csv_name: &str,
    control_cols: usize,
    two_pane: bool,
) -> std::io::Result<()> {
    let out_col = 1 + control_cols + 1; // 1-based: t, controls, output
    let target_col = out_col + 1;
    let mut s = String::new();
    s.push_str("set datafile separator ','\n");
    s.push_str("set terminal pngcairo size 900,700\n");
    s.push_str("set output 'trajectory.png'\n");
    s.push_str("set key outside\n");
    if two_pane {
        s.push_str("set multiplot layout 2,1\n");
    }
    s.push_str(&format!(
        "plot '{csv_name}' using 1:{out_col} with lines lw 2 title 'output', \\\n     '{csv_name}' using 1:{target_col} with lines dashtype 2 lw 2 lc rgb 'red' title 'target'\n"
    ));
    if two_pane {
        s.push_str(&format!("plot '{csv_name}' using 1:2 with lines lw 2 title 'control'\n"));
        s.push_str("unset multiplot\n");
    }
    fs::write(path, s)
}

fn ensure_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir)
        .map_err(|e| CliError { code: 2, message: format!("cannot create '{}': {e}", dir.display()) })
}

fn trajectory_header(control_dim: usize) -> Vec<String> {
    let mut header = vec!["t".to_string()];
    if control_dim == 1 {
        header.push("u".to_string());
    } else {
        header.extend((1..=control_dim).map(|i| format!("u{i}")));
    }
    header.push("Ex".to_string());
    header.push("f".to_string());
    header
}

/// Rows `t, u..., Ex, f` for the standard result layout.
fn trajectory_rows(
    grid: Grid,
    u: &crate::model::SampledSignal,
    outputs: &[DVector<f64>],
    f: &TargetSignal,
) -> CliResult<Vec<Vec<f64>>> {
    let mut rows = Vec::with_capacity(grid.len());
    for k in 0..grid.len() {
        let t = grid.node(k);
        let mut row = Vec::with_capacity(u.dim() + 3);
        row.push(t);
        row.extend(u.values[k].iter().copied());
        row.push(outputs[k][0]);
        row.push(f.eval(0, t).map_err(CliError::from)?);
        rows.push(row);
    }
    Ok(rows)
}

fn write_trajectory(
    io: &IoOptions,
    grid: Grid,
    u: &crate::model::SampledSignal,
    outputs: &[DVector<f64>],
    f: &TargetSignal,
    two_pane: bool,
) -> CliResult<()> {
    ensure_dir(&io.output_dir)?;
    let csv = io.output_dir.join("trajectory.csv");
    let rows = trajectory_rows(grid, u, outputs, f)?;
    write_csv(&csv, &trajectory_header(u.dim()), &rows)
        .map_err(|e| CliError { code: 2, message: format!("cannot write '{}': {e}", csv.display()) })?;
    if io.emit_plot_script {
        let script = io.output_dir.join("plot.gp");
        emit_plot_script(&script, "trajectory.csv", u.dim(), two_pane)
            .map_err(|e| CliError { code: 2, message: format!("cannot write '{}': {e}", script.display()) })?;
    }
    Ok(())
}

fn print_metrics(mse: f64, max_err: f64, iters: usize) {
    println!("MSE={mse:.8e} MAXERR={max_err:.8e} ITERS={iters}");
}

// ---------------------------------------------------------------------------
// subcommands

fn cmd_brunovsky(io: &IoOptions) -> CliResult<()> {
    let problem = load_problem(io)?;
    let a = problem.a.clone().ok_or_else(|| CliError::validation("A", "missing"))?;
    let b_mat = problem.b.clone().ok_or_else(|| CliError::validation("B", "missing"))?;
    if b_mat.ncols() != 1 {
        return Err(CliError::validation("B", "canonical form needs a single input column"));
    }
    let form = crate::brunovsky::brunovsky_transform(&a, &b_mat.column(0).into_owned())
        .map_err(CliError::from)?;

    ensure_dir(&io.output_dir)?;
    let p_rows: Vec<Vec<f64>> = (0..form.p.nrows())
        .map(|i| form.p.row(i).iter().copied().collect())
        .collect();
    let json = serde_json::json!({
        "alpha": form.alpha,
        "P": p_rows,
        "similarity_residual": form.similarity_residual,
    });
    let path = io.output_dir.join("brunovsky.json");
    fs::write(&path, serde_json::to_string_pretty(&json).expect("serializable"))
        .map_err(|e| CliError { code: 2, message: format!("cannot write '{}': {e}", path.display()) })?;
    println!("SIMILARITY_RESIDUAL={:.8e}", form.similarity_residual);
    Ok(())
}

fn cmd_track(io: &IoOptions, refine: usize) -> CliResult<()> {
    let problem = load_problem(io)?;
    let sys = problem.system(None)?;
    let grid = problem.grid(io)?;
    let f = problem.require_target()?;

    let u = tracker::synthesize_tracking_control(&sys, f, grid).map_err(CliError::from)?;
    let traj = tracker::simulate(&sys, &u, grid, refine).map_err(CliError::from)?;
    let err = tracker::tracking_error(&traj, f).map_err(CliError::from)?;

    write_trajectory(io, grid, &u.samples, &traj.outputs, f, true)?;
    print_metrics(err.mse, err.max_abs, 0);
    Ok(())
}

fn cmd_hum(io: &IoOptions, alpha: Option<f64>, beta: Option<f64>, cg_tol: Option<f64>) -> CliResult<()> {
    let problem = load_problem(io)?;
    let grid = problem.grid(io)?;
    let f = problem.require_target()?.clone();
    let alpha = alpha
        .or(problem.alpha)
        .ok_or_else(|| CliError::validation("alpha", "missing"))?;
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(CliError::validation("alpha", "must be nonnegative and finite"));
    }
    let beta = beta.or(problem.beta).unwrap_or(1.0);
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(CliError::validation("beta", "must be positive and finite"));
    }

    let solution = match &problem.chain {
        Some((spec, ChainControl::Distributed)) => {
            hum::hum_solve_distributed(spec, &f, grid, alpha, beta).map_err(CliError::from)?
        }
        _ => {
            let sys = problem.system(None)?;
            let mut p = HumProblem::new(sys, f.clone(), grid, alpha)
                .and_then(|p| p.with_beta(beta))
                .map_err(CliError::from)?;
            if let Some(tol) = cg_tol {
                if !(tol > 0.0 && tol < 1.0) {
                    return Err(CliError::validation("cg-tol", "must lie in (0, 1)"));
                }
                let max_iters = p.cg_max_iters;
                p = p.with_cg(tol, max_iters);
            }
            hum::hum_solve(&p).map_err(CliError::from)?
        }
    };

    let max_err = solution
        .traj
        .outputs
        .iter()
        .enumerate()
        .map(|(k, out)| {
            f.eval(0, grid.node(k)).map(|fk| (out[0] - fk).abs()).unwrap_or(f64::NAN)
        })
        .fold(0.0f64, f64::max);

    write_trajectory(io, grid, &solution.u.samples, &solution.traj.outputs, &f, false)?;
    print_metrics(solution.mse, max_err, solution.cg_iters);
    if !solution.converged {
        return Err(CliError {
            code: 3,
            message: format!(
                "CG hit the iteration cap ({}) at residual {:.3e} (initial {:.3e})",
                solution.cg_iters, solution.residual, solution.initial_residual
            ),
        });
    }
    Ok(())
}

fn cmd_pde(io: &IoOptions, refine: usize, kind: ChainKind) -> CliResult<()> {
    let problem = load_problem(io)?;
    let grid = problem.grid(io)?;
    let f = problem.require_target()?;
    let (spec, _) = problem
        .chain
        .as_ref()
        .ok_or_else(|| CliError::validation("chain", "missing (pde subcommands need it)"))?;

    let (control, sys) = match kind {
        ChainKind::Heat => (
            pde::heat_cascade_control(spec, f, grid).map_err(CliError::from)?,
            pde::heat_boundary_system(spec),
        ),
        ChainKind::Wave => (
            pde::wave_cascade_control(spec, f, grid).map_err(CliError::from)?,
            pde::wave_boundary_system(spec),
        ),
    };
    let traj = tracker::simulate(&sys, &control.u, grid, refine).map_err(CliError::from)?;
    let err = tracker::tracking_error(&traj, f).map_err(CliError::from)?;

    write_trajectory(io, grid, &control.u.samples, &traj.outputs, f, true)?;
    println!("DERIVATIVES_USED={}", control.max_derivative_used);
    print_metrics(err.mse, err.max_abs, 0);
    Ok(())
}

fn cmd_gramian(io: &IoOptions, grid_list: &str) -> CliResult<()> {
    let problem = load_problem(io)?;
    let sys = problem.system(None)?;
    let t_final = io.t.or(problem.t_final).ok_or_else(|| CliError::validation("T", "missing"))?;

    let steps: Vec<usize> = grid_list
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| CliError::validation("grid-list", format!("bad step count '{s}'")))
        })
        .collect::<CliResult<Vec<_>>>()?;
    let grids = steps
        .iter()
        .map(|&n| Grid::new(t_final, n).map_err(CliError::from))
        .collect::<CliResult<Vec<_>>>()?;

    let sweep = operators::observability_spectrum(&sys, &grids).map_err(CliError::from)?;
    ensure_dir(&io.output_dir)?;
    let rows: Vec<Vec<f64>> = sweep
        .reports
        .iter()
        .map(|(n, r)| vec![*n as f64, r.sigma_min(), r.sigma_max(), r.rank_estimate as f64])
        .collect();
    let csv = io.output_dir.join("spectrum.csv");
    write_csv(
        &csv,
        &["N".into(), "sigma_min".into(), "sigma_max".into(), "rank".into()],
        &rows,
    )
    .map_err(|e| CliError { code: 2, message: format!("cannot write '{}': {e}", csv.display()) })?;

    let uc_grid = problem.grid(io).unwrap_or(grids[grids.len() - 1]);
    let uc = operators::unique_continuation_test(&sys, uc_grid).map_err(CliError::from)?;
    for (n, r) in &sweep.reports {
        println!("N={n} SIGMA_MIN={:.8e} SIGMA_MAX={:.8e}", r.sigma_min(), r.sigma_max());
    }
    println!(
        "UC={} SIGMA_MIN_REL={:.8e} DECAY_EXPONENT={:.4}",
        if uc.holds { "holds" } else { "fails" },
        uc.sigma_min_rel,
        sweep.fitted_decay_exponent(t_final)
    );
    Ok(())
}

fn cmd_moment(io: &IoOptions) -> CliResult<()> {
    let problem = load_problem(io)?;
    let grid = problem.grid(io)?;
    let spec = problem
        .moment
        .as_ref()
        .ok_or_else(|| CliError::validation("moment", "missing"))?;

    let mc = operators::moment_control(&spec.lambdas, &spec.c, &spec.targets, grid)
        .map_err(CliError::from)?;

    ensure_dir(&io.output_dir)?;
    let mut header = vec!["t".to_string(), "u".to_string()];
    header.extend((1..=spec.targets.len()).map(|i| format!("f{i}")));
    let mut rows = Vec::with_capacity(grid.len());
    for k in 0..grid.len() {
        let t = grid.node(k);
        let mut row = vec![t, mc.u.samples.scalar(k)];
        for target in &spec.targets {
            row.push(target.eval(0, t).map_err(CliError::from)?);
        }
        rows.push(row);
    }
    let csv = io.output_dir.join("moment.csv");
    write_csv(&csv, &header, &rows)
        .map_err(|e| CliError { code: 2, message: format!("cannot write '{}': {e}", csv.display()) })?;
    println!("COMPAT_DEVIATION={:.8e}", mc.max_deviation);
    print_metrics(mc.max_deviation * mc.max_deviation, mc.max_deviation, 0);
    Ok(())
}

fn cmd_sweep(io: &IoOptions, alphas_flag: Option<&str>, beta: Option<f64>) -> CliResult<()> {
    let problem = load_problem(io)?;
    let grid = problem.grid(io)?;
    let f = problem.require_target()?.clone();

    let alphas: Vec<f64> = match alphas_flag {
        Some(list) => list
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| CliError::validation("alphas", format!("bad value '{s}'")))
            })
            .collect::<CliResult<Vec<_>>>()?,
        None => problem
            .alphas
            .clone()
            .ok_or_else(|| CliError::validation("alphas", "missing"))?,
    };
    if alphas.iter().any(|a| !(a.is_finite() && *a >= 0.0)) {
        return Err(CliError::validation("alphas", "entries must be nonnegative and finite"));
    }

    let beta = beta.or(problem.beta).unwrap_or(1.0);
    let base = match &problem.chain {
        Some((spec, ChainControl::Distributed)) => {
            let mut p = HumProblem::new(pde::heat_distributed_system(spec), f, grid, 1.0)
                .and_then(|p| p.with_beta(beta))
                .map_err(CliError::from)?;
            p.space_weight = spec.h();
            p
        }
        _ => {
            let sys = problem.system(None)?;
            HumProblem::new(sys, f, grid, 1.0)
                .and_then(|p| p.with_beta(beta))
                .map_err(CliError::from)?
        }
    };

    // fan out across worker threads; results land in input order
    let threads = std::env::var("TRACKCTL_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&v| v >= 1)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
        .min(alphas.len().max(1));

    let results: Mutex<Vec<Option<crate::Result<hum::SweepPoint>>>> =
        Mutex::new(vec![None; alphas.len()]);
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..threads {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= alphas.len() {
                    break;
                }
                let point = hum::sweep_point(&base, alphas[i]);
                results.lock().expect("sweep mutex")[i] = Some(point);
            });
        }
    });

    let collected = results.into_inner().expect("sweep mutex");
    ensure_dir(&io.output_dir)?;
    let mut rows = Vec::with_capacity(alphas.len());
    let mut all_converged = true;
    for slot in collected {
        let point = slot.expect("worker filled every slot").map_err(CliError::from)?;
        all_converged &= point.converged;
        println!(
            "ALPHA={:.8e} MSE={:.8e} CONTROL_NORM={:.8e} ITERS={}",
            point.alpha, point.mse, point.control_norm, point.cg_iters
        );
        rows.push(vec![point.alpha, point.mse, point.control_norm, point.cg_iters as f64]);
    }
    let csv = io.output_dir.join("sweep.csv");
    write_csv(
        &csv,
        &["alpha".into(), "mse".into(), "control_norm".into(), "iters".into()],
        &rows,
    )
    .map_err(|e| CliError { code: 2, message: format!("cannot write '{}': {e}", csv.display()) })?;
    if !all_converged {
        return Err(CliError { code: 3, message: "at least one sweep point hit the CG iteration cap".into() });
    }
    Ok(())
}
