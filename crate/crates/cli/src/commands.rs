use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use phs_core::constraints::ConstraintSystem;
use phs_core::dynamics::{integrate, read_trajectory_csv, write_trajectory_csv, DynamicsError, PowerAudit, Trajectory};
use phs_core::expr::Expr;
use phs_core::geometry::RankReport;
use serde::Serialize;

use crate::analysis::{analyse, build_system, Analysis, LegendreSummary, Settings};
use crate::builtins;
use crate::error::CliError;
use crate::sysfile::{parse_system, SysFileError, SystemFile};

#[derive(Debug, Parser)]
#[command(
    name = "phs",
    version,
    about = "Check, reduce, simulate and audit port-Hamiltonian system files"
)]
pub struct Cli {
    /// Print machine-readable JSON reports.
    #[arg(long, global = true)]
    pub json: bool,
    /// Seed for every sampled point set.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Relative singular-value threshold for numeric ranks.
    #[arg(long, global = true, value_name = "TOL")]
    pub tol_rank: Option<f64>,
    /// Residual accepted on the critical set.
    #[arg(long, global = true, value_name = "TOL")]
    pub tol_crit: Option<f64>,
    /// Threshold for "vanishes on the constraint surface".
    #[arg(long, global = true, value_name = "TOL")]
    pub tol_surface: Option<f64>,
    /// Worker threads for rank checks.
    #[arg(long, global = true, value_name = "N")]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the Morse and restricted rank conditions.
    Check {
        /// System file, or the name of a built-in example.
        file: String,
    },
    /// Run the constraint algorithm and print the total Hamiltonian.
    Reduce { file: String },
    /// Integrate the constrained dynamics and write a trajectory CSV.
    Simulate {
        file: String,
        /// Trajectory CSV to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Recompute power-balance residuals for a trajectory CSV.
    Audit {
        /// System the trajectory was produced from.
        file: String,
        /// Trajectory CSV written by `simulate`.
        #[arg(long)]
        traj: PathBuf,
        /// Only print the worst case of each residual.
        #[arg(long)]
        summary: bool,
    },
    /// List the built-in examples, print one, or write them to a directory.
    Examples {
        name: Option<String>,
        /// Write every example to `<dir>/<name>.phs`.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

/// Parse `args` and run the command; returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 {
                out.write_all(text.as_bytes())
            } else {
                err.write_all(text.as_bytes())
            };
            return code;
        }
    };
    match execute(&cli, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

fn settings(cli: &Cli) -> Result<Settings, CliError> {
    let mut s = Settings {
        seed: cli.seed,
        ..Settings::default()
    };
    for (flag, value, slot) in [
        ("--tol-rank", cli.tol_rank, &mut s.tol_rank),
        ("--tol-crit", cli.tol_crit, &mut s.tol_crit),
        ("--tol-surface", cli.tol_surface, &mut s.tol_surface),
    ] {
        if let Some(v) = value {
            if !(v > 0.0 && v.is_finite()) {
                return Err(CliError::Usage(format!("{flag} must be positive, got {v}")));
            }
            *slot = v;
        }
    }
    Ok(s)
}

pub fn execute(cli: &Cli, out: &mut dyn Write) -> Result<i32, CliError> {
    if let Some(n) = cli.jobs {
        if n == 0 {
            return Err(CliError::Usage("--jobs must be at least 1".into()));
        }
        // the global pool can only be set once per process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let s = settings(cli)?;
    match &cli.command {
        Command::Check { file } => check(file, &s, cli.json, out),
        Command::Reduce { file } => reduce(file, &s, cli.json, out),
        Command::Simulate { file, out: path } => simulate(file, path, &s, cli.json, out),
        Command::Audit { file, traj, summary } => audit(file, traj, *summary, &s, cli.json, out),
        Command::Examples { name, out_dir } => examples(name.as_deref(), out_dir.as_deref(), out),
    }
}

fn io_error(e: std::io::Error) -> CliError {
    CliError::Usage(format!("output error: {e}"))
}

/// Read a system file, falling back to a built-in of the same name.
pub fn load(arg: &str) -> Result<SystemFile, CliError> {
    let text = match fs::read_to_string(arg) {
        Ok(t) => t,
        Err(e) => match builtins::builtin(arg) {
            Some(t) => t.to_string(),
            None => return Err(CliError::Usage(format!("cannot read `{arg}`: {e}"))),
        },
    };
    parse_system(&text).map_err(|error| CliError::File {
        file: arg.to_string(),
        error,
    })
}

fn emit_json<T: Serialize>(out: &mut dyn Write, value: &T) -> Result<(), CliError> {
    serde_json::to_writer_pretty(&mut *out, value).map_err(|e| CliError::Usage(e.to_string()))?;
    writeln!(out).map_err(io_error)
}

fn write_legendre(out: &mut dyn Write, l: &LegendreSummary) -> std::io::Result<()> {
    let r = &l.report;
    writeln!(
        out,
        "Legendre transform: rank W = {}{} over {} points, {} primary constraint(s)",
        r.rank_w,
        if r.rank_constant { "" } else { " (varies)" },
        r.points.len(),
        r.n_primary
    )?;
    writeln!(
        out,
        "  E = {}{}",
        r.energy,
        if r.energy_vanishes {
            "  (vanishes on the sample)"
        } else {
            ""
        }
    )?;
    match l.h_c_deviation {
        Some(d) => writeln!(out, "  H_c = {}  (max deviation from E {d:.3e})", l.h_c)?,
        None => writeln!(out, "  H_c = {}", l.h_c)?,
    }
    for c in &l.primary {
        writeln!(
            out,
            "  primary {}: max residual {:.3e} on the image",
            c.phi, c.max_residual
        )?;
    }
    Ok(())
}

#[derive(Serialize)]
struct Dims {
    states: usize,
    inputs: usize,
    multipliers: usize,
}

#[derive(Serialize)]
struct CheckJson<'a> {
    command: &'static str,
    system: &'a str,
    seed: u64,
    legendre: Option<&'a LegendreSummary>,
    h_total: &'a Expr,
    dims: Dims,
    morse: Option<&'a RankReport>,
    restricted: Option<&'a RankReport>,
    pass: bool,
}

fn dims(a: &Analysis) -> Dims {
    let (n, m, k) = a.family.dims();
    Dims {
        states: n,
        inputs: m,
        multipliers: k,
    }
}

fn check(file: &str, s: &Settings, json: bool, out: &mut dyn Write) -> Result<i32, CliError> {
    let sys = load(file)?;
    let a = analyse(&sys, s, true)?;
    let pass = a.pass();
    if json {
        emit_json(
            out,
            &CheckJson {
                command: "check",
                system: file,
                seed: s.seed,
                legendre: a.legendre.as_ref(),
                h_total: a.h_total(),
                dims: dims(&a),
                morse: a.morse.as_ref(),
                restricted: a.restricted.as_ref(),
                pass,
            },
        )?;
    } else {
        let d = dims(&a);
        let mut w = || -> std::io::Result<()> {
            writeln!(out, "system: {file}")?;
            writeln!(out, "seed: {}", s.seed)?;
            if let Some(l) = &a.legendre {
                write_legendre(out, l)?;
            }
            writeln!(out, "H_T = {}", a.h_total())?;
            writeln!(
                out,
                "family: {} states, {} inputs, {} multipliers",
                d.states, d.inputs, d.multipliers
            )?;
            if a.morse.is_none() && a.restricted.is_none() {
                writeln!(out, "no rank condition applies (no multipliers, no inputs)")?;
            }
            for r in [&a.morse, &a.restricted].into_iter().flatten() {
                writeln!(out, "{r}")?;
            }
            writeln!(out, "check: {}", if pass { "PASS" } else { "FAIL" })
        };
        w().map_err(io_error)?;
    }
    Ok(if pass { 0 } else { 2 })
}

#[derive(Serialize)]
struct ReduceJson<'a> {
    command: &'static str,
    system: &'a str,
    seed: u64,
    legendre: Option<&'a LegendreSummary>,
    constraints: Option<&'a ConstraintSystem>,
    h_total: &'a Expr,
}

fn reduce(file: &str, s: &Settings, json: bool, out: &mut dyn Write) -> Result<i32, CliError> {
    let sys = load(file)?;
    let a = analyse(&sys, s, false)?;
    if json {
        emit_json(
            out,
            &ReduceJson {
                command: "reduce",
                system: file,
                seed: s.seed,
                legendre: a.legendre.as_ref(),
                constraints: a.system.as_ref(),
                h_total: a.h_total(),
            },
        )?;
    } else {
        let mut w = || -> std::io::Result<()> {
            writeln!(out, "system: {file}")?;
            writeln!(out, "seed: {}", s.seed)?;
            if let Some(l) = &a.legendre {
                write_legendre(out, l)?;
            }
            match &a.system {
                Some(c) => write!(out, "{c}"),
                None => writeln!(out, "no constraints\nH_total = {}", a.h_total()),
            }
        };
        w().map_err(io_error)?;
    }
    Ok(0)
}

fn dynamics_error(e: DynamicsError) -> CliError {
    match e {
        DynamicsError::Schema(_) | DynamicsError::Csv(_) => CliError::Usage(e.to_string()),
        other => CliError::Simulation(other.to_string()),
    }
}

#[derive(Clone, Copy, Serialize)]
struct Peak {
    value: f64,
    t: f64,
}

/// Largest finite value of `f` over the audits, with its time.
fn worst(audits: &[PowerAudit], f: impl Fn(&PowerAudit) -> Option<f64>) -> Option<Peak> {
    audits
        .iter()
        .filter_map(|a| f(a).filter(|v| v.is_finite()).map(|value| Peak { value, t: a.t }))
        .fold(None, |m: Option<Peak>, p| match m {
            Some(w) if w.value >= p.value => m,
            _ => Some(p),
        })
}

#[derive(Serialize)]
struct Worst {
    closed: Option<Peak>,
    hamiltonian: Option<Peak>,
    energy_port: Option<Peak>,
    io: Option<Peak>,
    constraint: f64,
}

fn worst_of(traj: &Trajectory) -> Worst {
    let a = &traj.audits;
    Worst {
        closed: worst(a, |x| Some(x.closed_balance_residual)),
        hamiltonian: worst(a, |x| Some(x.hamiltonian_balance_residual)),
        energy_port: worst(a, |x| Some(x.tilde_balance_residual)),
        io: worst(a, |x| x.io_balance_residual),
        constraint: traj.max_constraint_residual(),
    }
}

fn write_worst(out: &mut dyn Write, w: &Worst) -> std::io::Result<()> {
    for (name, v) in [
        ("closed", w.closed),
        ("hamiltonian", w.hamiltonian),
        ("energy-port", w.energy_port),
        ("input-output", w.io),
    ] {
        if let Some(p) = v {
            writeln!(out, "  max {name} residual {:.3e} at t = {}", p.value, p.t)?;
        }
    }
    writeln!(out, "  max |phi| {:.3e}", w.constraint)
}

#[derive(Serialize)]
struct SimulateJson<'a> {
    command: &'static str,
    system: &'a str,
    seed: u64,
    out: &'a Path,
    steps: usize,
    t0: f64,
    t1: f64,
    dt: f64,
    final_state: &'a [f64],
    worst: Worst,
}

fn simulate(file: &str, path: &Path, s: &Settings, json: bool, out: &mut dyn Write) -> Result<i32, CliError> {
    let sys_file = load(file)?;
    let Some(sim) = sys_file.simulation.clone() else {
        return Err(CliError::File {
            file: file.to_string(),
            error: SysFileError {
                line: sys_file.end_line,
                col: None,
                message: "missing [simulation] section".into(),
            },
        });
    };
    let a = analyse(&sys_file, s, false)?;
    let sys = build_system(&sys_file, &a)?;
    let traj = integrate(&sys, &sim.x0, sim.t0, sim.t1, sim.dt).map_err(dynamics_error)?;

    // write next to the target and rename, so a failure leaves no partial file
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let tmp =
        tempfile::NamedTempFile::new_in(dir).map_err(|e| CliError::Simulation(format!("{}: {e}", dir.display())))?;
    {
        let mut w = BufWriter::new(tmp.as_file());
        write_trajectory_csv(&traj, &mut w).map_err(dynamics_error)?;
        w.flush().map_err(|e| CliError::Simulation(e.to_string()))?;
    }
    tmp.persist(path)
        .map_err(|e| CliError::Simulation(format!("{}: {}", path.display(), e.error)))?;

    let worst = worst_of(&traj);
    let final_state = traj.final_state().unwrap_or(&[]);
    if json {
        emit_json(
            out,
            &SimulateJson {
                command: "simulate",
                system: file,
                seed: s.seed,
                out: path,
                steps: traj.len().saturating_sub(1),
                t0: sim.t0,
                t1: sim.t1,
                dt: sim.dt,
                final_state,
                worst,
            },
        )?;
    } else {
        let mut w = || -> std::io::Result<()> {
            writeln!(
                out,
                "simulated {} steps over [{}, {}], wrote {}",
                traj.len().saturating_sub(1),
                sim.t0,
                sim.t1,
                path.display()
            )?;
            let x: Vec<String> = final_state.iter().map(|v| format!("{v:.9}")).collect();
            writeln!(
                out,
                "  final state ({}) = ({})",
                traj.state_names.join(", "),
                x.join(", ")
            )?;
            write_worst(out, &worst)
        };
        w().map_err(io_error)?;
    }
    Ok(0)
}

#[derive(Serialize)]
struct AuditJson<'a> {
    command: &'static str,
    system: &'a str,
    traj: &'a Path,
    steps: Option<&'a [PowerAudit]>,
    worst: Worst,
}

fn audit(
    file: &str,
    path: &Path,
    summary: bool,
    s: &Settings,
    json: bool,
    out: &mut dyn Write,
) -> Result<i32, CliError> {
    let sys_file = load(file)?;
    let a = analyse(&sys_file, s, false)?;
    let sys = build_system(&sys_file, &a)?;
    let reader = fs::File::open(path).map_err(|e| CliError::Usage(format!("cannot read `{}`: {e}", path.display())))?;
    let traj = read_trajectory_csv(std::io::BufReader::new(reader), &sys).map_err(dynamics_error)?;
    let worst = worst_of(&traj);
    if json {
        let steps = (!summary).then_some(traj.audits.as_slice());
        return emit_json(
            out,
            &AuditJson {
                command: "audit",
                system: file,
                traj: path,
                steps,
                worst,
            },
        )
        .map(|_| 0);
    }
    let mut w = || -> std::io::Result<()> {
        if !summary {
            writeln!(
                out,
                "{:>14}  {:>11}  {:>11}  {:>11}  {:>11}  {:>11}",
                "t", "closed", "hamiltonian", "energyport", "io", "|phi|"
            )?;
            for x in &traj.audits {
                let io = x.io_balance_residual.map_or("-".to_string(), |v| format!("{v:.4e}"));
                writeln!(
                    out,
                    "{:>14.6}  {:>11.4e}  {:>11.4e}  {:>11.4e}  {:>11}  {:>11.4e}",
                    x.t,
                    x.closed_balance_residual,
                    x.hamiltonian_balance_residual,
                    x.tilde_balance_residual,
                    io,
                    x.constraint_residual_max
                )?;
            }
        }
        writeln!(
            out,
            "audited {} interior steps of {}",
            traj.audits.len(),
            path.display()
        )?;
        write_worst(out, &worst)
    };
    w().map_err(io_error)?;
    Ok(0)
}

fn examples(name: Option<&str>, dir: Option<&Path>, out: &mut dyn Write) -> Result<i32, CliError> {
    let chosen: Vec<(&str, &str)> = match name {
        Some(n) => match builtins::builtin(n) {
            Some(text) => vec![(n, text)],
            None => {
                let known: Vec<&str> = builtins::names().collect();
                return Err(CliError::Usage(format!(
                    "unknown example `{n}` (available: {})",
                    known.join(", ")
                )));
            }
        },
        None => builtins::BUILTINS.to_vec(),
    };
    match (dir, name) {
        (Some(dir), _) => {
            fs::create_dir_all(dir).map_err(|e| CliError::Usage(format!("{}: {e}", dir.display())))?;
            for (n, text) in chosen {
                let p = dir.join(format!("{n}.phs"));
                fs::write(&p, text).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?;
                writeln!(out, "{}", p.display()).map_err(io_error)?;
            }
        }
        (None, Some(_)) => out.write_all(chosen[0].1.as_bytes()).map_err(io_error)?,
        (None, None) => {
            for (n, _) in chosen {
                writeln!(out, "{n}").map_err(io_error)?;
            }
        }
    }
    Ok(0)
}
