//! Degenerate Legendre analysis and the Dirac–Bergmann consistency algorithm.

use std::collections::BTreeSet;
use std::fmt;

use nalgebra::DMatrix;
use num_rational::Rational64;
use num_traits::{One, Zero};
use serde::Serialize;
use thiserror::Error;

use crate::expr::{Binding, EvalError, Expr, Num, VarId};
use crate::geometry::{
    check_morse_rank_with, check_restricted_rank_with, sample_on_shell, GeometryError, MorseFamily, RankReport,
};
use crate::linalg::numeric_rank;
use crate::sampling::{sample_zero_set, SampleBox, SampleRequest, DEFAULT_TOL_CRIT};

pub const DEFAULT_MAX_ITER: usize = 16;
pub const DEFAULT_TOL_SURFACE: f64 = 1e-8;
/// Minimum number of on-surface points for a numeric vanishing verdict.
pub const MIN_SURFACE_POINTS: usize = 8;
/// Tolerance for supplied primary constraints on the Legendre image.
pub const PRIMARY_TOL: f64 = 1e-8;
const SURFACE_SAMPLES: usize = 16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConstraintError {
    #[error("coordinates and velocities differ in length ({0} vs {1})")]
    DimensionMismatch(usize, usize),
    #[error("a Lagrangian needs at least one coordinate")]
    Empty,
    #[error("no admissible sample point: {0}")]
    NoAdmissiblePoint(String),
    #[error("expected {expected} primary constraints (d - rank W), got {got}")]
    PrimaryCount { expected: usize, got: usize },
    #[error("primary constraint `{phi}` does not vanish on the Legendre image (max |phi| = {residual:e})")]
    PrimaryNotOnImage { phi: String, residual: f64 },
    #[error("no primary constraints given")]
    NoPrimary,
    #[error("inconclusive: only {found} on-surface points found for `{expr}` (need {MIN_SURFACE_POINTS})")]
    Inconclusive { expr: String, found: usize },
    #[error("no dynamics compatible with constraints: consistency of `{phi}` reduces to {value}")]
    Inconsistent { phi: String, value: String },
    #[error("Dirac–Bergmann iteration did not terminate after {0} passes")]
    MaxIterations(usize),
    #[error("unsupported multiplier structure: {0}")]
    Unsupported(String),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Poisson bracket `{f, g} = sum_a df/dq_a dg/dp_a - df/dp_a dg/dq_a`.
pub fn poisson_bracket(f: &Expr, g: &Expr, q_vars: &[VarId], p_vars: &[VarId]) -> Expr {
    let terms = q_vars.iter().zip(p_vars).flat_map(|(q, p)| {
        [
            f.differentiate(q) * g.differentiate(p),
            -(f.differentiate(p) * g.differentiate(q)),
        ]
    });
    Expr::sum(terms)
}

/// A Lagrangian `L(q, v)`.
#[derive(Clone, Debug)]
pub struct LagrangianSpec {
    q_vars: Vec<VarId>,
    v_vars: Vec<VarId>,
    lagrangian: Expr,
}

impl LagrangianSpec {
    pub fn new(q_vars: Vec<VarId>, v_vars: Vec<VarId>, lagrangian: Expr) -> Result<Self, ConstraintError> {
        if q_vars.len() != v_vars.len() {
            return Err(ConstraintError::DimensionMismatch(q_vars.len(), v_vars.len()));
        }
        if q_vars.is_empty() {
            return Err(ConstraintError::Empty);
        }
        Ok(LagrangianSpec {
            q_vars,
            v_vars,
            lagrangian,
        })
    }

    pub fn q_vars(&self) -> &[VarId] {
        &self.q_vars
    }

    pub fn v_vars(&self) -> &[VarId] {
        &self.v_vars
    }

    pub fn lagrangian(&self) -> &Expr {
        &self.lagrangian
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct LegendreReport {
    pub p_hat: Vec<Expr>,
    pub w: Vec<Vec<Expr>>,
    pub w_symmetric: bool,
    /// Generic (largest) rank of W over the sample points.
    pub rank_w: usize,
    pub ranks: Vec<usize>,
    pub rank_constant: bool,
    pub n_primary: usize,
    pub energy: Expr,
    /// E is symbolically zero or below the surface tolerance at every point.
    pub energy_vanishes: bool,
    pub points: Vec<Binding>,
    pub rng_seed: u64,
}

/// Options shared by the sampling-based analyses.
#[derive(Clone, Debug)]
pub struct AnalysisOptions {
    pub sample_box: SampleBox,
    /// Physical parameter values.
    pub fixed: Binding,
    pub seed: u64,
    pub samples: usize,
    pub tol_rank: f64,
    pub tol_crit: f64,
    pub tol_surface: f64,
    pub max_iter: usize,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        AnalysisOptions {
            sample_box: SampleBox::new(),
            fixed: Binding::new(),
            seed: 0,
            samples: crate::sampling::DEFAULT_SAMPLE_COUNT,
            tol_rank: crate::geometry::DEFAULT_TOL_RANK,
            tol_crit: DEFAULT_TOL_CRIT,
            tol_surface: DEFAULT_TOL_SURFACE,
            max_iter: DEFAULT_MAX_ITER,
        }
    }
}

impl AnalysisOptions {
    pub fn with_fixed(mut self, fixed: Binding) -> Self {
        self.fixed = fixed;
        self
    }
}

/// Legendre analysis: symbolic `p_hat`, `W`, `E` and the numeric rank of `W`
/// at admissible points of the box.
pub fn legendre(spec: &LagrangianSpec, opts: &AnalysisOptions) -> Result<LegendreReport, ConstraintError> {
    let l = &spec.lagrangian;
    let p_hat = l.gradient(&spec.v_vars);
    let w: Vec<Vec<Expr>> = p_hat.iter().map(|p| p.gradient(&spec.v_vars)).collect();
    let d = spec.v_vars.len();
    let w_symmetric = (0..d).all(|i| (0..i).all(|j| w[i][j] == w[j][i]));
    let pv = Expr::sum(p_hat.iter().zip(&spec.v_vars).map(|(p, v)| p * Expr::var(v)));
    let energy = pv - l;

    let mut drawn: Vec<VarId> = spec.q_vars.iter().chain(&spec.v_vars).cloned().collect();
    for v in l.free_vars() {
        if !drawn.contains(&v) && !opts.fixed.contains(&v) {
            drawn.push(v);
        }
    }
    let sample = sample_zero_set(&SampleRequest {
        equations: &[],
        moving: &[],
        drawn: &drawn,
        fixed: &opts.fixed,
        sample_box: &opts.sample_box,
        count: opts.samples * crate::sampling::ATTEMPTS_PER_POINT,
        seed: opts.seed,
        tol: opts.tol_crit,
    })?;
    let mut points = Vec::new();
    let mut ranks = Vec::new();
    let mut last_error = None;
    for point in sample.points {
        if points.len() == opts.samples {
            break;
        }
        match admissible_rank(l, &p_hat, &w, &energy, &point, opts.tol_rank) {
            Ok(r) => {
                ranks.push(r);
                points.push(point);
            }
            Err(e) => last_error = Some(e),
        }
    }
    if points.is_empty() {
        let why = last_error.map_or_else(|| "empty sample".to_string(), |e| e.to_string());
        return Err(ConstraintError::NoAdmissiblePoint(why));
    }
    let rank_w = ranks.iter().copied().max().unwrap_or(0);
    let rank_constant = ranks.iter().all(|r| *r == rank_w);
    let energy_vanishes = energy.is_zero()
        || points
            .iter()
            .all(|p| energy.evaluate(p).map(|e| e.abs() <= opts.tol_surface).unwrap_or(false));
    Ok(LegendreReport {
        p_hat,
        w,
        w_symmetric,
        rank_w,
        ranks,
        rank_constant,
        n_primary: d - rank_w,
        energy,
        energy_vanishes,
        points,
        rng_seed: opts.seed,
    })
}

fn admissible_rank(
    l: &Expr,
    p_hat: &[Expr],
    w: &[Vec<Expr>],
    energy: &Expr,
    point: &Binding,
    tol_rank: f64,
) -> Result<usize, EvalError> {
    l.evaluate(point)?;
    energy.evaluate(point)?;
    for p in p_hat {
        p.evaluate(point)?;
    }
    let d = w.len();
    let mut m = DMatrix::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            m[(i, j)] = w[i][j].evaluate(point)?;
        }
    }
    Ok(numeric_rank(&m, tol_rank).1)
}

/// Binding of `(q, p_hat(q, v))` for a Lagrangian sample point.
fn phase_point(
    spec: &LagrangianSpec,
    report: &LegendreReport,
    p_vars: &[VarId],
    point: &Binding,
) -> Result<Binding, EvalError> {
    let mut out = point.clone();
    for (p, expr) in p_vars.iter().zip(&report.p_hat) {
        out.set(p, expr.evaluate(point)?);
    }
    for v in &spec.v_vars {
        out.set(v, f64::NAN);
    }
    Ok(out)
}

#[derive(Clone, Debug, Serialize)]
pub struct PrimaryCheck {
    pub phi: Expr,
    pub max_residual: f64,
}

/// Check the supplied primary constraints: their number must be `d - rank W`
/// and each must vanish at `(q, p_hat(q, v))` for every sample point.
pub fn verify_primary(
    spec: &LagrangianSpec,
    report: &LegendreReport,
    p_vars: &[VarId],
    primary: &[Expr],
) -> Result<Vec<PrimaryCheck>, ConstraintError> {
    if primary.len() != report.n_primary {
        return Err(ConstraintError::PrimaryCount {
            expected: report.n_primary,
            got: primary.len(),
        });
    }
    let images = report
        .points
        .iter()
        .map(|pt| phase_point(spec, report, p_vars, pt))
        .collect::<Result<Vec<_>, _>>()?;
    let mut checks = Vec::new();
    for phi in primary {
        let mut worst = 0.0f64;
        for img in &images {
            worst = worst.max(phi.evaluate(img)?.abs());
        }
        if worst > PRIMARY_TOL {
            return Err(ConstraintError::PrimaryNotOnImage {
                phi: phi.to_string(),
                residual: worst,
            });
        }
        checks.push(PrimaryCheck {
            phi: phi.clone(),
            max_residual: worst,
        });
    }
    Ok(checks)
}

/// Largest `|H_c(q, p_hat) - E(q, v)|` over the report's sample points.
pub fn canonical_hamiltonian_deviation(
    spec: &LagrangianSpec,
    report: &LegendreReport,
    p_vars: &[VarId],
    h_c: &Expr,
) -> Result<f64, ConstraintError> {
    let mut worst = 0.0f64;
    for pt in &report.points {
        let img = phase_point(spec, report, p_vars, pt)?;
        worst = worst.max((h_c.evaluate(&img)? - report.energy.evaluate(pt)?).abs());
    }
    Ok(worst)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Symbolic,
    Numeric,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Verdict {
    pub vanishes: bool,
    pub branch: Branch,
    /// Largest `|f|` over the points (0 for the symbolic branch).
    pub max_abs: f64,
}

/// Does `f` vanish on the surface cut out by `constraints`? Symbolic zero
/// first, then the values at the on-surface points among `points`.
pub fn vanishes_on_surface(
    f: &Expr,
    constraints: &[Expr],
    points: &[Binding],
    tol: f64,
) -> Result<Verdict, ConstraintError> {
    let f = f.simplify();
    if f.is_zero() {
        return Ok(Verdict {
            vanishes: true,
            branch: Branch::Symbolic,
            max_abs: 0.0,
        });
    }
    let mut found = 0;
    let mut worst = 0.0f64;
    for p in points {
        let on = constraints.iter().all(|c| c.evaluate(p).is_ok_and(|v| v.abs() <= tol));
        if !on {
            continue;
        }
        let Ok(v) = f.evaluate(p) else { continue };
        found += 1;
        worst = worst.max(v.abs());
    }
    if found < MIN_SURFACE_POINTS {
        return Err(ConstraintError::Inconclusive {
            expr: f.to_string(),
            found,
        });
    }
    Ok(Verdict {
        vanishes: worst <= tol,
        branch: Branch::Numeric,
        max_abs: worst,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Generation {
    Primary,
    Secondary,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ConstraintClass {
    First,
    Second,
    Undetermined,
}

#[derive(Clone, Debug, Serialize)]
pub struct Constraint {
    pub phi: Expr,
    pub generation: Generation,
    pub class: ConstraintClass,
    /// Index of the constraint whose consistency produced this one.
    pub parent: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "status", content = "value", rename_all = "kebab-case")]
pub enum MultiplierStatus {
    Free,
    Determined(Expr),
    /// Solved pointwise at simulation time.
    DeterminedNumeric,
}

#[derive(Clone, Debug, Serialize)]
pub struct Multiplier {
    pub var: VarId,
    /// Index of the primary constraint it multiplies.
    pub constraint: usize,
    pub status: MultiplierStatus,
}

#[derive(Clone, Debug, Serialize)]
#[serde(tag = "outcome", rename_all = "kebab-case")]
pub enum Outcome {
    Satisfied {
        constraint: usize,
        branch: Branch,
    },
    Secondary {
        constraint: usize,
        new_constraint: usize,
        phi: Expr,
    },
    Determines {
        constraint: usize,
        multiplier: String,
        value: Option<Expr>,
    },
}

#[derive(Clone, Debug, Serialize)]
pub struct PassLog {
    pub pass: usize,
    pub constraints: usize,
    pub surface_points: usize,
    pub outcomes: Vec<Outcome>,
}

/// Rows (constraint indices) and columns (multiplier indices) of the linear
/// system solved for determined-numeric multipliers.
#[derive(Clone, Debug, Default, Serialize)]
pub struct NumericBlock {
    pub rows: Vec<usize>,
    pub multipliers: Vec<usize>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ConstraintSystem {
    pub h_c: Expr,
    pub q_vars: Vec<VarId>,
    pub p_vars: Vec<VarId>,
    pub constraints: Vec<Constraint>,
    pub multipliers: Vec<Multiplier>,
    pub h_total: Expr,
    pub iterations: Vec<PassLog>,
    pub numeric_block: NumericBlock,
    pub rng_seed: u64,
}

impl ConstraintSystem {
    pub fn has_gauge_freedom(&self) -> bool {
        self.multipliers.iter().any(|m| m.status == MultiplierStatus::Free)
    }

    pub fn free_multipliers(&self) -> Vec<VarId> {
        self.multipliers
            .iter()
            .filter(|m| m.status == MultiplierStatus::Free)
            .map(|m| m.var.clone())
            .collect()
    }

    pub fn numeric_multipliers(&self) -> Vec<VarId> {
        self.multipliers
            .iter()
            .filter(|m| m.status == MultiplierStatus::DeterminedNumeric)
            .map(|m| m.var.clone())
            .collect()
    }

    pub fn constraint_exprs(&self) -> Vec<Expr> {
        self.constraints.iter().map(|c| c.phi.clone()).collect()
    }

    pub fn secondary_count(&self) -> usize {
        self.constraints
            .iter()
            .filter(|c| c.generation == Generation::Secondary)
            .count()
    }
}

impl fmt::Display for ConstraintSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "constraints:")?;
        writeln!(f, "  {:>3}  {:<9}  {:<12}  phi", "#", "gen", "class")?;
        for (i, c) in self.constraints.iter().enumerate() {
            let generation = match c.generation {
                Generation::Primary => "primary",
                Generation::Secondary => "secondary",
            };
            let class = match c.class {
                ConstraintClass::First => "first",
                ConstraintClass::Second => "second",
                ConstraintClass::Undetermined => "undetermined",
            };
            writeln!(f, "  {:>3}  {:<9}  {:<12}  {}", i + 1, generation, class, c.phi)?;
        }
        writeln!(f, "multipliers:")?;
        for m in &self.multipliers {
            match &m.status {
                MultiplierStatus::Free => writeln!(f, "  {:<8}  free", m.var.name())?,
                MultiplierStatus::Determined(e) => writeln!(f, "  {:<8}  determined  {e}", m.var.name())?,
                MultiplierStatus::DeterminedNumeric => writeln!(f, "  {:<8}  determined-numeric", m.var.name())?,
            }
        }
        writeln!(
            f,
            "gauge freedom: {}",
            if self.has_gauge_freedom() { "yes" } else { "no" }
        )?;
        writeln!(f, "H_total = {}", self.h_total)?;
        writeln!(f, "passes:")?;
        for p in &self.iterations {
            write!(
                f,
                "  pass {} ({} constraints, {} surface points):",
                p.pass, p.constraints, p.surface_points
            )?;
            for o in &p.outcomes {
                match o {
                    Outcome::Satisfied { constraint, .. } => write!(f, " #{} satisfied;", constraint + 1)?,
                    Outcome::Secondary {
                        constraint,
                        new_constraint,
                        ..
                    } => write!(f, " #{} -> secondary #{};", constraint + 1, new_constraint + 1)?,
                    Outcome::Determines {
                        constraint, multiplier, ..
                    } => write!(f, " #{} determines {};", constraint + 1, multiplier)?,
                }
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

/// Seeded points on the surface of the current constraints.
struct Surface {
    constraints: Vec<Expr>,
    points: Vec<Binding>,
    tol: f64,
}

impl Surface {
    fn sample(
        constraints: &[Expr],
        extra: &[&Expr],
        phase: &[VarId],
        opts: &AnalysisOptions,
        seed: u64,
    ) -> Result<Surface, ConstraintError> {
        let mut drawn = BTreeSet::new();
        for e in constraints.iter().chain(extra.iter().copied()) {
            for v in e.free_vars() {
                if !phase.contains(&v) && !opts.fixed.contains(&v) {
                    drawn.insert(v);
                }
            }
        }
        let drawn: Vec<VarId> = drawn.into_iter().collect();
        let outcome = sample_zero_set(&SampleRequest {
            equations: constraints,
            moving: phase,
            drawn: &drawn,
            fixed: &opts.fixed,
            sample_box: &opts.sample_box,
            count: SURFACE_SAMPLES.max(opts.samples),
            seed,
            tol: opts.tol_crit,
        })?;
        Ok(Surface {
            constraints: constraints.to_vec(),
            points: outcome.points,
            tol: opts.tol_surface,
        })
    }

    fn verdict(&self, f: &Expr) -> Result<Verdict, ConstraintError> {
        vanishes_on_surface(f, &self.constraints, &self.points, self.tol)
    }

    /// `f` reduced to zero when it vanishes on the surface.
    fn reduce(&self, f: Expr) -> Result<Expr, ConstraintError> {
        Ok(if self.verdict(&f)?.vanishes { Expr::zero() } else { f })
    }
}

/// Input to [`dirac_bergmann`].
#[derive(Clone, Debug)]
pub struct DiracBergmannInput {
    pub h_c: Expr,
    pub primary: Vec<Expr>,
    pub q_vars: Vec<VarId>,
    pub p_vars: Vec<VarId>,
    /// Names for the primary multipliers; `lam_1..lam_N` when empty.
    pub multipliers: Vec<VarId>,
}

impl DiracBergmannInput {
    pub fn new(h_c: Expr, primary: Vec<Expr>, q_vars: Vec<VarId>, p_vars: Vec<VarId>) -> Self {
        DiracBergmannInput {
            h_c,
            primary,
            q_vars,
            p_vars,
            multipliers: Vec::new(),
        }
    }

    pub fn with_multipliers(mut self, multipliers: Vec<VarId>) -> Self {
        self.multipliers = multipliers;
        self
    }
}

fn exact_constant(e: &Expr) -> Option<Rational64> {
    e.as_const().and_then(|n| n.as_rational())
}

fn rational_expr(r: Rational64) -> Expr {
    Expr::num(Num::Rat(r))
}

/// Run the Dirac–Bergmann algorithm from the canonical Hamiltonian and the
/// primary constraints.
pub fn dirac_bergmann(input: &DiracBergmannInput, opts: &AnalysisOptions) -> Result<ConstraintSystem, ConstraintError> {
    if input.primary.is_empty() {
        return Err(ConstraintError::NoPrimary);
    }
    if input.q_vars.len() != input.p_vars.len() {
        return Err(ConstraintError::DimensionMismatch(
            input.q_vars.len(),
            input.p_vars.len(),
        ));
    }
    let multiplier_vars: Vec<VarId> = if input.multipliers.is_empty() {
        (0..input.primary.len())
            .map(|i| VarId::multiplier(&format!("lam_{}", i + 1), i))
            .collect()
    } else if input.multipliers.len() == input.primary.len() {
        input.multipliers.clone()
    } else {
        return Err(ConstraintError::Unsupported(format!(
            "{} multiplier names for {} primary constraints",
            input.multipliers.len(),
            input.primary.len()
        )));
    };
    let phase: Vec<VarId> = input.q_vars.iter().chain(&input.p_vars).cloned().collect();
    let bracket = |f: &Expr, g: &Expr| poisson_bracket(f, g, &input.q_vars, &input.p_vars);

    let mut constraints: Vec<Constraint> = input
        .primary
        .iter()
        .map(|phi| Constraint {
            phi: phi.simplify(),
            generation: Generation::Primary,
            class: ConstraintClass::Undetermined,
            parent: None,
        })
        .collect();
    let mut multipliers: Vec<Multiplier> = multiplier_vars
        .into_iter()
        .enumerate()
        .map(|(i, var)| Multiplier {
            var,
            constraint: i,
            status: MultiplierStatus::Free,
        })
        .collect();
    let mut block = NumericBlock::default();
    let mut iterations = Vec::new();
    let mut surface;

    let mut pass = 0;
    loop {
        pass += 1;
        if pass > opts.max_iter {
            return Err(ConstraintError::MaxIterations(opts.max_iter));
        }
        let phis: Vec<Expr> = constraints.iter().map(|c| c.phi.clone()).collect();
        surface = Surface::sample(
            &phis,
            &[&input.h_c],
            &phase,
            opts,
            opts.seed.wrapping_add(pass as u64 - 1),
        )?;

        // H' = H_c plus the symbolically determined multiplier terms.
        let h_prime = Expr::sum(
            std::iter::once(input.h_c.clone()).chain(multipliers.iter().filter_map(|m| match &m.status {
                MultiplierStatus::Determined(e) => Some(e * &input.primary[m.constraint]),
                _ => None,
            })),
        );
        let free_cols: Vec<usize> = (0..multipliers.len())
            .filter(|&i| multipliers[i].status == MultiplierStatus::Free)
            .collect();
        let numeric_cols: Vec<usize> = block.multipliers.clone();

        let mut outcomes = Vec::new();
        let mut rows: Vec<usize> = Vec::new();
        let mut a: Vec<Vec<Expr>> = Vec::new();
        let mut h: Vec<Expr> = Vec::new();
        for (j, phi) in phis.iter().enumerate() {
            if block.rows.contains(&j) {
                continue;
            }
            for &m in &numeric_cols {
                let b = surface.reduce(bracket(phi, &input.primary[multipliers[m].constraint]))?;
                if !b.is_zero() {
                    return Err(ConstraintError::Unsupported(format!(
                        "consistency of `{phi}` couples to the pointwise-solved multiplier {}",
                        multipliers[m].var
                    )));
                }
            }
            let row = free_cols
                .iter()
                .map(|&m| surface.reduce(bracket(phi, &input.primary[multipliers[m].constraint])))
                .collect::<Result<Vec<_>, _>>()?;
            rows.push(j);
            a.push(row);
            h.push(surface.reduce(bracket(phi, &h_prime))?);
        }

        let mut new_constraints: Vec<(usize, Expr)> = Vec::new();
        let mut determined_any = false;
        let all_constant = a.iter().flatten().all(|e| exact_constant(e).is_some());

        // A zero row of the consistency system: satisfied, new constraint, or contradiction.
        let zero_row =
            |j: usize, combo: Expr, outcomes: &mut Vec<Outcome>, new_constraints: &mut Vec<(usize, Expr)>| {
                let combo = combo.simplify();
                let verdict = surface.verdict(&combo)?;
                if verdict.vanishes {
                    outcomes.push(Outcome::Satisfied {
                        constraint: j,
                        branch: verdict.branch,
                    });
                } else if combo.is_const() {
                    return Err(ConstraintError::Inconsistent {
                        phi: phis[j].to_string(),
                        value: format!("{combo} = 0"),
                    });
                } else if !new_constraints.iter().any(|(_, c)| proportional(c, &combo)) {
                    new_constraints.push((j, combo));
                } else {
                    outcomes.push(Outcome::Satisfied {
                        constraint: j,
                        branch: verdict.branch,
                    });
                }
                Ok::<(), ConstraintError>(())
            };

        if all_constant {
            let ncols = free_cols.len();
            let mut mat: Vec<Vec<Rational64>> = a
                .iter()
                .map(|row| row.iter().map(|e| exact_constant(e).unwrap()).collect())
                .collect();
            let mut rhs = h.clone();
            let mut order = rows.clone();
            let pivots = rref(&mut mat, &mut rhs, &mut order, ncols);
            for (r, &j) in order.iter().enumerate() {
                match pivots.iter().position(|&(pr, _)| pr == r) {
                    None => zero_row(j, rhs[r].clone(), &mut outcomes, &mut new_constraints)?,
                    Some(pi) => {
                        let col = pivots[pi].1;
                        if (0..ncols).any(|c| c != col && !mat[r][c].is_zero()) {
                            return Err(ConstraintError::Unsupported(format!(
                                "multiplier {} is tied to other free multipliers",
                                multipliers[free_cols[col]].var
                            )));
                        }
                        // pivot normalised to 1: lam + rhs = 0
                        let value = (-rhs[r].clone()).simplify();
                        let m = free_cols[col];
                        multipliers[m].status = MultiplierStatus::Determined(value.clone());
                        determined_any = true;
                        outcomes.push(Outcome::Determines {
                            constraint: j,
                            multiplier: multipliers[m].var.name().to_string(),
                            value: Some(value),
                        });
                    }
                }
            }
        } else {
            let mut r1 = Vec::new();
            let mut m1 = BTreeSet::new();
            for (r, &j) in rows.iter().enumerate() {
                let nz: Vec<usize> = (0..free_cols.len()).filter(|&c| !a[r][c].is_zero()).collect();
                if nz.is_empty() {
                    zero_row(j, h[r].clone(), &mut outcomes, &mut new_constraints)?;
                } else {
                    r1.push(r);
                    m1.extend(nz);
                }
            }
            let m1: Vec<usize> = m1.into_iter().collect();
            if r1.len() != m1.len() {
                return Err(ConstraintError::Unsupported(format!(
                    "{} consistency conditions couple {} multipliers through state-dependent brackets",
                    r1.len(),
                    m1.len()
                )));
            }
            for p in &surface.points {
                let mut m = DMatrix::zeros(r1.len(), m1.len());
                for (i, &r) in r1.iter().enumerate() {
                    for (k, &c) in m1.iter().enumerate() {
                        m[(i, k)] = a[r][c].evaluate(p)?;
                    }
                }
                if numeric_rank(&m, opts.tol_rank).1 < r1.len() {
                    return Err(ConstraintError::Unsupported(format!(
                        "state-dependent bracket block is rank deficient at {p}"
                    )));
                }
            }
            for (&r, &c) in r1.iter().zip(&m1) {
                let m = free_cols[c];
                multipliers[m].status = MultiplierStatus::DeterminedNumeric;
                block.rows.push(rows[r]);
                block.multipliers.push(m);
                determined_any = true;
                outcomes.push(Outcome::Determines {
                    constraint: rows[r],
                    multiplier: multipliers[m].var.name().to_string(),
                    value: None,
                });
            }
        }

        let added = !new_constraints.is_empty();
        for (parent, phi) in new_constraints {
            let index = constraints.len();
            outcomes.push(Outcome::Secondary {
                constraint: parent,
                new_constraint: index,
                phi: phi.clone(),
            });
            constraints.push(Constraint {
                phi,
                generation: Generation::Secondary,
                class: ConstraintClass::Undetermined,
                parent: Some(parent),
            });
        }
        outcomes.sort_by_key(|o| match o {
            Outcome::Satisfied { constraint, .. }
            | Outcome::Secondary { constraint, .. }
            | Outcome::Determines { constraint, .. } => *constraint,
        });
        iterations.push(PassLog {
            pass,
            constraints: phis.len(),
            surface_points: surface.points.len(),
            outcomes,
        });
        if !added && !determined_any {
            break;
        }
    }

    // Classification on the final surface.
    let phis: Vec<Expr> = constraints.iter().map(|c| c.phi.clone()).collect();
    for i in 0..phis.len() {
        let mut first = true;
        for phj in &phis {
            if !surface.verdict(&bracket(&phis[i], phj))?.vanishes {
                first = false;
                break;
            }
        }
        constraints[i].class = if first {
            ConstraintClass::First
        } else {
            ConstraintClass::Second
        };
    }

    let h_total = Expr::sum(std::iter::once(input.h_c.clone()).chain(multipliers.iter().map(|m| {
        let phi = &input.primary[m.constraint];
        match &m.status {
            MultiplierStatus::Determined(e) => e * phi,
            _ => Expr::var(&m.var) * phi,
        }
    })));

    Ok(ConstraintSystem {
        h_c: input.h_c.clone(),
        q_vars: input.q_vars.clone(),
        p_vars: input.p_vars.clone(),
        constraints,
        multipliers,
        h_total,
        iterations,
        numeric_block: block,
        rng_seed: opts.seed,
    })
}

/// `a == c * b` for an exact nonzero constant `c`.
fn proportional(a: &Expr, b: &Expr) -> bool {
    if a == b {
        return true;
    }
    if b.is_zero() {
        return false;
    }
    let ratio = (a / b).simplify();
    ratio.as_const().is_some()
}

/// Gauss–Jordan elimination over the rationals on `mat`, applying the same
/// row operations to the symbolic right-hand side. Pivots are normalised to
/// one; `labels` follows the row swaps. Returns `(row, column)` of every pivot.
fn rref(mat: &mut [Vec<Rational64>], rhs: &mut [Expr], labels: &mut [usize], ncols: usize) -> Vec<(usize, usize)> {
    let nrows = mat.len();
    let mut pivots = Vec::new();
    let mut r = 0;
    for c in 0..ncols {
        if r == nrows {
            break;
        }
        let Some(p) = (r..nrows).find(|&i| !mat[i][c].is_zero()) else {
            continue;
        };
        mat.swap(r, p);
        rhs.swap(r, p);
        labels.swap(r, p);
        let inv = Rational64::one() / mat[r][c];
        for x in mat[r].iter_mut() {
            *x *= inv;
        }
        rhs[r] = (rational_expr(inv) * &rhs[r]).simplify();
        for i in 0..nrows {
            if i != r && !mat[i][c].is_zero() {
                let factor = mat[i][c];
                for k in 0..ncols {
                    let sub = factor * mat[r][k];
                    mat[i][k] -= sub;
                }
                rhs[i] = (&rhs[i] - rational_expr(factor) * &rhs[r]).simplify();
            }
        }
        pivots.push((r, c));
        r += 1;
    }
    pivots
}

/// Morse family of a constrained input-output system,
/// `H_T = H_c + u^j G_j + sum lambda^i phi_i`, with both rank conditions.
#[derive(Clone, Debug)]
pub struct ConstrainedIo {
    pub family: MorseFamily,
    pub system: ConstraintSystem,
    pub morse: Option<RankReport>,
    pub restricted: Option<RankReport>,
}

/// Input channels of a constrained system: linear inputs `u_j` with outputs
/// `G_j`, and inputs that already appear inside `H_c`.
#[derive(Clone, Debug, Default)]
pub struct InputChannels {
    pub linear: Vec<(VarId, Expr)>,
    pub nonlinear: Vec<VarId>,
}

impl InputChannels {
    pub fn ports(&self) -> Vec<VarId> {
        self.linear
            .iter()
            .map(|(u, _)| u.clone())
            .chain(self.nonlinear.iter().cloned())
            .collect()
    }
}

/// Build `H_T`, run the consistency algorithm with inputs treated as inert
/// parameters, and check both rank conditions on the generated family.
pub fn assemble_constrained_io(
    h_c: &Expr,
    inputs: &InputChannels,
    primary: &[Expr],
    q_vars: &[VarId],
    p_vars: &[VarId],
    multiplier_names: &[VarId],
    opts: &AnalysisOptions,
) -> Result<ConstrainedIo, ConstraintError> {
    let h = Expr::sum(std::iter::once(h_c.clone()).chain(inputs.linear.iter().map(|(u, g)| Expr::var(u) * g)));
    let states: Vec<VarId> = q_vars.iter().chain(p_vars).cloned().collect();
    let ports = inputs.ports();
    let system = if primary.is_empty() {
        ConstraintSystem {
            h_c: h.clone(),
            q_vars: q_vars.to_vec(),
            p_vars: p_vars.to_vec(),
            constraints: Vec::new(),
            multipliers: Vec::new(),
            h_total: h.clone(),
            iterations: Vec::new(),
            numeric_block: NumericBlock::default(),
            rng_seed: opts.seed,
        }
    } else {
        let input = DiracBergmannInput::new(h.clone(), primary.to_vec(), q_vars.to_vec(), p_vars.to_vec())
            .with_multipliers(multiplier_names.to_vec());
        dirac_bergmann(&input, opts)?
    };
    let family = MorseFamily::with_runtime(
        states,
        ports,
        system.free_multipliers(),
        system.numeric_multipliers(),
        system.h_total.clone(),
    )?;
    let (morse, restricted) = family_rank_checks(&family, opts, None)?;
    Ok(ConstrainedIo {
        family,
        system,
        morse,
        restricted,
    })
}

/// Morse (when `k > 0`) and restricted (when `m > 0`) rank reports of a
/// family. Without explicit `points`, on-shell points are sampled with
/// run-time multipliers pinned to zero unless `opts.fixed` sets them.
pub fn family_rank_checks(
    family: &MorseFamily,
    opts: &AnalysisOptions,
    points: Option<&[Binding]>,
) -> Result<(Option<RankReport>, Option<RankReport>), ConstraintError> {
    let (_, m, k) = family.dims();
    if k == 0 && m == 0 {
        return Ok((None, None));
    }
    let (points, seed) = match points {
        Some(p) => (p.to_vec(), None),
        None => {
            let mut fixed = opts.fixed.clone();
            for v in family.runtime() {
                if !fixed.contains(v) {
                    fixed.set(v, 0.0);
                }
            }
            (
                sample_on_shell(family, &opts.sample_box, &fixed, opts.samples, opts.seed, opts.tol_crit)?,
                Some(opts.seed),
            )
        }
    };
    let mut morse = None;
    if k > 0 {
        let mut r = check_morse_rank_with(family, &points, opts.tol_rank, opts.tol_crit)?;
        r.rng_seed = seed;
        morse = Some(r);
    }
    let mut restricted = None;
    if m > 0 {
        let mut r = check_restricted_rank_with(family, &points, opts.tol_rank, opts.tol_crit)?;
        r.rng_seed = seed;
        restricted = Some(r);
    }
    Ok((morse, restricted))
}
