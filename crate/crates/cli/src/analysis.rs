//! From a parsed system file to constraint systems, Morse families and
//! simulation-ready port-Hamiltonian systems.

use phs_core::constraints::{
    canonical_hamiltonian_deviation, dirac_bergmann, family_rank_checks, legendre, verify_primary, AnalysisOptions,
    ConstrainedIo, ConstraintError, ConstraintSystem, DiracBergmannInput, LagrangianSpec, LegendreReport, PrimaryCheck,
    PRIMARY_TOL,
};
use phs_core::dynamics::{DiracStructureSpec, PHSystem, Signal};
use phs_core::expr::{Expr, VarId, VarKind};
use phs_core::geometry::{GeometryError, MorseFamily, RankReport};
use serde::Serialize;

use crate::error::CliError;
use crate::sysfile::{DiracSection, Formulation, SysFileError, SystemFile};

/// Tolerances and seed shared by all commands.
#[derive(Clone, Copy, Debug)]
pub struct Settings {
    pub seed: u64,
    pub tol_rank: f64,
    pub tol_crit: f64,
    pub tol_surface: f64,
}

impl Default for Settings {
    fn default() -> Self {
        let d = AnalysisOptions::default();
        Settings {
            seed: d.seed,
            tol_rank: d.tol_rank,
            tol_crit: d.tol_crit,
            tol_surface: d.tol_surface,
        }
    }
}

impl Settings {
    pub fn options(&self, file: &SystemFile) -> AnalysisOptions {
        AnalysisOptions {
            sample_box: file.sample_box.clone(),
            fixed: file.parameters.clone(),
            seed: self.seed,
            tol_rank: self.tol_rank,
            tol_crit: self.tol_crit,
            tol_surface: self.tol_surface,
            ..AnalysisOptions::default()
        }
    }
}

/// Outcome of the Legendre step of a Lagrangian file.
#[derive(Clone, Debug, Serialize)]
pub struct LegendreSummary {
    #[serde(flatten)]
    pub report: LegendreReport,
    pub primary: Vec<PrimaryCheck>,
    pub h_c: Expr,
    /// `max |H_c(q, p_hat) - E|` when `H_c` was supplied.
    pub h_c_deviation: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct Analysis {
    pub legendre: Option<LegendreSummary>,
    /// `H_c + u^j G_j`.
    pub hamiltonian: Expr,
    pub system: Option<ConstraintSystem>,
    pub family: MorseFamily,
    pub morse: Option<RankReport>,
    pub restricted: Option<RankReport>,
}

impl Analysis {
    pub fn h_total(&self) -> &Expr {
        self.family.generator()
    }

    /// Every rank condition that applies holds.
    pub fn pass(&self) -> bool {
        self.morse.as_ref().is_none_or(|r| r.pass) && self.restricted.as_ref().is_none_or(|r| r.pass)
    }
}

fn constraint_error(e: ConstraintError) -> CliError {
    match e {
        ConstraintError::Inconsistent { .. } => CliError::Inconsistent(e.to_string()),
        other => CliError::CheckFailed(other.to_string()),
    }
}

fn geometry_error(e: GeometryError) -> CliError {
    CliError::CheckFailed(e.to_string())
}

fn legendre_step(file: &SystemFile, opts: &AnalysisOptions) -> Result<Option<LegendreSummary>, CliError> {
    let Formulation::Lagrangian {
        velocities,
        lagrangian,
        h_c,
    } = &file.formulation
    else {
        return Ok(None);
    };
    let canonical = file.canonical.as_ref().expect("Lagrangian files are canonical");
    let spec = LagrangianSpec::new(canonical.q.clone(), velocities.clone(), lagrangian.clone()).map_err(|e| {
        CliError::Parse(SysFileError {
            line: file.end_line,
            col: None,
            message: e.to_string(),
        })
    })?;
    let report = legendre(&spec, opts).map_err(constraint_error)?;
    let primary = verify_primary(&spec, &report, &canonical.p, &file.constraints).map_err(constraint_error)?;
    let (h_c, h_c_deviation) = match h_c {
        Some(h) => {
            let dev = canonical_hamiltonian_deviation(&spec, &report, &canonical.p, h).map_err(constraint_error)?;
            if !(dev <= PRIMARY_TOL) {
                return Err(CliError::CheckFailed(format!(
                    "H_c = {h} differs from the Lagrangian energy by up to {dev:.3e} on the image"
                )));
            }
            (h.clone(), Some(dev))
        }
        None if report.energy_vanishes => (Expr::zero(), None),
        None => {
            return Err(CliError::CheckFailed(format!(
                "the Lagrangian energy E = {} does not vanish; give `H_c = ...` in [lagrangian]",
                report.energy
            )))
        }
    };
    Ok(Some(LegendreSummary {
        report,
        primary,
        h_c,
        h_c_deviation,
    }))
}

/// Declared multipliers split into those named by the Hamiltonian (Morse
/// parameters of an unconstrained family) and the rest (names for the
/// constraint multipliers).
fn multipliers(file: &SystemFile, h: &Expr) -> (Vec<VarId>, Vec<VarId>) {
    file.vars_of(VarKind::Multiplier)
        .into_iter()
        .partition(|v| h.contains_var(v))
}

/// Run the Legendre step (Lagrangian files), the constraint algorithm (when
/// there are constraints) and, if `ranks`, the rank conditions.
pub fn analyse(file: &SystemFile, settings: &Settings, ranks: bool) -> Result<Analysis, CliError> {
    let opts = settings.options(file);
    let legendre = legendre_step(file, &opts)?;
    let base = match (&legendre, &file.formulation) {
        (Some(l), _) => l.h_c.clone(),
        (None, Formulation::Hamiltonian { hamiltonian }) => hamiltonian.clone(),
        (None, Formulation::Lagrangian { .. }) => unreachable!("Lagrangian files always have a Legendre step"),
    };
    let hamiltonian =
        Expr::sum(std::iter::once(base.clone()).chain(file.inputs.linear.iter().map(|(u, g)| Expr::var(u) * g)));
    let (in_h, names) = multipliers(file, &base);
    let ports = file.inputs.ports();

    let (system, family) = if file.constraints.is_empty() {
        let family = MorseFamily::new(file.states.clone(), ports, in_h, hamiltonian.clone()).map_err(geometry_error)?;
        (None, family)
    } else {
        if !in_h.is_empty() {
            return Err(CliError::CheckFailed(format!(
                "multiplier `{}` appears in the Hamiltonian of a constrained system",
                in_h[0].name()
            )));
        }
        let names = if names.len() == file.constraints.len() {
            names
        } else if names.is_empty() {
            Vec::new()
        } else {
            return Err(CliError::Parse(SysFileError {
                line: file.end_line,
                col: None,
                message: format!(
                    "{} multipliers declared for {} constraints",
                    names.len(),
                    file.constraints.len()
                ),
            }));
        };
        let canonical = file
            .canonical
            .as_ref()
            .expect("constraints imply canonical coordinates");
        let input = DiracBergmannInput::new(
            hamiltonian.clone(),
            file.constraints.clone(),
            canonical.q.clone(),
            canonical.p.clone(),
        )
        .with_multipliers(names);
        let system = dirac_bergmann(&input, &opts).map_err(constraint_error)?;
        let family = MorseFamily::with_runtime(
            file.states.clone(),
            ports,
            system.free_multipliers(),
            system.numeric_multipliers(),
            system.h_total.clone(),
        )
        .map_err(geometry_error)?;
        (Some(system), family)
    };

    let (morse, restricted) = if ranks {
        let points = (!file.points.is_empty()).then_some(file.points.as_slice());
        family_rank_checks(&family, &opts, points).map_err(constraint_error)?
    } else {
        (None, None)
    };
    Ok(Analysis {
        legendre,
        hamiltonian,
        system,
        family,
        morse,
        restricted,
    })
}

fn signal_error(line: usize, message: String) -> CliError {
    CliError::Parse(SysFileError {
        line,
        col: None,
        message,
    })
}

/// Assemble the simulation model: structure, constraints and signals.
pub fn build_system(file: &SystemFile, analysis: &Analysis) -> Result<PHSystem, CliError> {
    let dirac = match (&file.dirac, &file.canonical) {
        (Some(DiracSection::Matrices { j, b }), _) => DiracStructureSpec::constant(j.clone(), b.clone()),
        (_, Some(c)) => DiracStructureSpec::canonical(c.q.clone(), c.p.clone()),
        (_, None) => {
            return Err(signal_error(
                file.end_line,
                "no [dirac] section and no canonical coordinates".into(),
            ));
        }
    }
    .map_err(|e| signal_error(file.end_line, e.to_string()))?;
    let mut sys = match &analysis.system {
        Some(system) => PHSystem::from_constrained(
            &ConstrainedIo {
                family: analysis.family.clone(),
                system: system.clone(),
                morse: None,
                restricted: None,
            },
            dirac,
        ),
        None => PHSystem::new(analysis.family.clone(), dirac),
    }
    .with_parameters(file.parameters.clone());

    let ports = sys.dirac.port_dim();
    for decl in &file.signals {
        let find = |vars: &[VarId]| vars.iter().find(|v| v.name() == decl.name).cloned();
        if let Some(v) = find(sys.family.params()) {
            sys.gauge_signals.insert(v, decl.signal.clone());
        } else if let Some(v) = find(sys.family.ports()) {
            sys.input_signals.insert(v, decl.signal.clone());
        } else if let Some(i) = decl
            .name
            .strip_prefix("ep_")
            .and_then(|i| i.parse::<usize>().ok())
            .filter(|i| (1..=ports).contains(i))
        {
            if sys.effort_signals.len() < i {
                sys.effort_signals.resize(i, Signal::constant(0.0));
            }
            sys.effort_signals[i - 1] = decl.signal.clone();
        } else {
            return Err(signal_error(
                decl.line,
                format!(
                    "signal `{}` matches no free multiplier, input or effort port",
                    decl.name
                ),
            ));
        }
    }
    sys.validate().map_err(|e| signal_error(file.end_line, e.to_string()))?;
    Ok(sys)
}
