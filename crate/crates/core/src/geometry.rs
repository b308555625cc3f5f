//! Morse families, the (port-)Lagrangian submanifolds they generate, and the
//! rank conditions that make them well defined.
//!
//! A family `K(x, nu, lambda)` over states `x` (n of them), energy-port
//! variables `nu` (m) and parameters `lambda` (k) generates
//!
//! ```text
//! { (x, nu, e, eps) : exists lambda with dK/dlambda = 0,
//!                     e = dK/dx, eps = dK/dnu }
//! ```
//!
//! provided the `k x (n+m+k)` matrix of second derivatives
//! `[d2K/dlambda dx | d2K/dlambda dnu | d2K/dlambda dlambda]` has rank `k` on the
//! critical set (the Morse condition) and, for energy ports, the
//! `m x (n+m)` block `[d2K/dnu dx | d2K/dnu dnu]` has rank `m` there (the
//! restricted condition). Both are checked pointwise at supplied or sampled
//! on-shell points.

use std::fmt;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::expr::{Binding, EvalError, Expr, VarId, VarKind};
use crate::linalg::numeric_rank;
use crate::sampling::{sample_zero_set, SampleBox, SampleRequest};

pub use crate::sampling::{DEFAULT_SAMPLE_COUNT, DEFAULT_TOL_CRIT};

pub const DEFAULT_TOL_RANK: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("a Morse family needs at least one state variable")]
    NoStates,
    #[error("variable `{0}` of the generator is not declared in the family")]
    UndeclaredVariable(String),
    #[error("variable `{0}` appears in more than one role")]
    DuplicateRole(String),
    #[error("the family has no parameters (k = 0); the Morse rank condition is vacuous")]
    NoParameters,
    #[error("the family has no energy ports (m = 0)")]
    NoPorts,
    #[error("point #{index} is off-shell: max |dK/dlambda| = {residual:e} exceeds {tol:e}")]
    OffShell { index: usize, residual: f64, tol: f64 },
    #[error("no points to check")]
    NoPoints,
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// A generating family `K(x, nu, lambda)`.
#[derive(Clone, Debug)]
pub struct MorseFamily {
    states: Vec<VarId>,
    ports: Vec<VarId>,
    params: Vec<VarId>,
    /// Multipliers solved at run time; fixed values as far as the rank checks go.
    runtime: Vec<VarId>,
    generator: Expr,
}

impl MorseFamily {
    pub fn new(
        states: Vec<VarId>,
        ports: Vec<VarId>,
        params: Vec<VarId>,
        generator: Expr,
    ) -> Result<Self, GeometryError> {
        Self::with_runtime(states, ports, params, Vec::new(), generator)
    }

    pub fn with_runtime(
        states: Vec<VarId>,
        ports: Vec<VarId>,
        params: Vec<VarId>,
        runtime: Vec<VarId>,
        generator: Expr,
    ) -> Result<Self, GeometryError> {
        if states.is_empty() {
            return Err(GeometryError::NoStates);
        }
        let mut seen = std::collections::BTreeSet::new();
        for v in states.iter().chain(&ports).chain(&params).chain(&runtime) {
            if !seen.insert(v.clone()) {
                return Err(GeometryError::DuplicateRole(v.name().to_string()));
            }
        }
        for v in generator.free_vars() {
            if !seen.contains(&v) && v.kind() != VarKind::Parameter {
                return Err(GeometryError::UndeclaredVariable(v.name().to_string()));
            }
        }
        Ok(MorseFamily {
            states,
            ports,
            params,
            runtime,
            generator,
        })
    }

    pub fn states(&self) -> &[VarId] {
        &self.states
    }

    pub fn ports(&self) -> &[VarId] {
        &self.ports
    }

    pub fn params(&self) -> &[VarId] {
        &self.params
    }

    pub fn runtime(&self) -> &[VarId] {
        &self.runtime
    }

    pub fn generator(&self) -> &Expr {
        &self.generator
    }

    /// (n, m, k)
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.states.len(), self.ports.len(), self.params.len())
    }

    /// Physical parameters appearing in the generator.
    pub fn physical_parameters(&self) -> Vec<VarId> {
        self.generator
            .free_vars()
            .into_iter()
            .filter(|v| v.kind() == VarKind::Parameter)
            .collect()
    }

    /// The critical equations `dK/dlambda_i`.
    pub fn critical_equations(&self) -> Vec<Expr> {
        self.generator.gradient(&self.params)
    }

    /// `tilde H = K - sum_j (dK/dnu_j) nu_j`, the function whose rate enters the
    /// energy-port power balance.
    pub fn tilde_h(&self) -> Result<Expr, GeometryError> {
        if self.ports.is_empty() {
            return Err(GeometryError::NoPorts);
        }
        let correction = Expr::sum(
            self.ports
                .iter()
                .map(|nu| self.generator.differentiate(nu) * Expr::var(nu)),
        );
        Ok(&self.generator - correction)
    }
}

/// Vector `(dK/dlambda_1, ..., dK/dlambda_k)` at `point`; empty when k = 0.
pub fn critical_residual(family: &MorseFamily, point: &Binding) -> Result<Vec<f64>, EvalError> {
    family.critical_equations().iter().map(|d| d.evaluate(point)).collect()
}

/// A point of the generated submanifold together with its critical residual.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LagrangianSample {
    pub x: Vec<f64>,
    pub nu: Vec<f64>,
    pub lambda: Vec<f64>,
    /// Co-energy `dK/dx`.
    pub e: Vec<f64>,
    /// Energy-port effort `dK/dnu`.
    pub eps: Vec<f64>,
    pub critical_residual: Vec<f64>,
}

impl LagrangianSample {
    pub fn is_on_shell(&self, tol_crit: f64) -> bool {
        self.critical_residual.iter().all(|r| r.abs() <= tol_crit)
    }
}

/// Evaluate the generated relations at `point`. Off-shell points are not
/// rejected; inspect `critical_residual`.
pub fn coenergy(family: &MorseFamily, point: &Binding) -> Result<LagrangianSample, EvalError> {
    let k = &family.generator;
    let eval_grad = |vars: &[VarId]| -> Result<Vec<f64>, EvalError> {
        vars.iter().map(|v| k.differentiate(v).evaluate(point)).collect()
    };
    Ok(LagrangianSample {
        x: point.values_of(&family.states)?,
        nu: point.values_of(&family.ports)?,
        lambda: point.values_of(&family.params)?,
        e: eval_grad(&family.states)?,
        eps: eval_grad(&family.ports)?,
        critical_residual: critical_residual(family, point)?,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RankCondition {
    Morse,
    Restricted,
}

#[derive(Clone, Debug, Serialize)]
pub struct RankPoint {
    pub coords: Binding,
    pub singular_values: Vec<f64>,
    pub rank: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct RankReport {
    pub condition: RankCondition,
    pub required_rank: usize,
    pub points: Vec<RankPoint>,
    pub pass: bool,
    pub rng_seed: Option<u64>,
}

impl fmt::Display for RankReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let title = match self.condition {
            RankCondition::Morse => "Morse rank condition",
            RankCondition::Restricted => "restricted rank condition",
        };
        writeln!(f, "{title}: required rank {}", self.required_rank)?;
        if let Some(seed) = self.rng_seed {
            writeln!(f, "  rng seed: {seed}")?;
        }
        writeln!(f, "  {:>3}  {:>4}  {:<40}  point", "#", "rank", "singular values")?;
        for (i, p) in self.points.iter().enumerate() {
            let sv = p
                .singular_values
                .iter()
                .map(|s| format!("{s:.6e}"))
                .collect::<Vec<_>>()
                .join(" ");
            writeln!(f, "  {:>3}  {:>4}  {:<40}  {}", i, p.rank, sv, p.coords)?;
        }
        write!(f, "  result: {}", if self.pass { "PASS" } else { "FAIL" })
    }
}

fn second_derivative_block(family: &MorseFamily, rows: &[VarId], cols: &[&VarId]) -> Vec<Vec<Expr>> {
    rows.iter()
        .map(|r| {
            let d = family.generator.differentiate(r);
            cols.iter().map(|c| d.differentiate(c)).collect()
        })
        .collect()
}

fn rank_report(
    family: &MorseFamily,
    condition: RankCondition,
    block: Vec<Vec<Expr>>,
    points: &[Binding],
    tol_rel: f64,
    tol_crit: f64,
) -> Result<RankReport, GeometryError> {
    if points.is_empty() {
        return Err(GeometryError::NoPoints);
    }
    let crit = family.critical_equations();
    let required = block.len();
    let ncols = block.first().map_or(0, Vec::len);
    let evaluated: Vec<Result<RankPoint, GeometryError>> = points
        .par_iter()
        .enumerate()
        .map(|(index, point)| {
            let residual = crit.iter().map(|c| c.evaluate(point)).collect::<Result<Vec<_>, _>>()?;
            let worst = residual.iter().fold(0.0f64, |m, r| m.max(r.abs()));
            if worst > tol_crit {
                return Err(GeometryError::OffShell {
                    index,
                    residual: worst,
                    tol: tol_crit,
                });
            }
            let mut m = DMatrix::zeros(required, ncols);
            for (i, row) in block.iter().enumerate() {
                for (j, entry) in row.iter().enumerate() {
                    m[(i, j)] = entry.evaluate(point)?;
                }
            }
            let (singular_values, rank) = numeric_rank(&m, tol_rel);
            Ok(RankPoint {
                coords: point.clone(),
                singular_values,
                rank,
            })
        })
        .collect();
    let points = evaluated.into_iter().collect::<Result<Vec<_>, _>>()?;
    let pass = points.iter().all(|p| p.rank == required);
    Ok(RankReport {
        condition,
        required_rank: required,
        points,
        pass,
        rng_seed: None,
    })
}

/// Morse condition: `[d2K/dlambda dx | d2K/dlambda dnu | d2K/dlambda dlambda]`
/// has rank k at every point.
pub fn check_morse_rank(family: &MorseFamily, points: &[Binding], tol_rel: f64) -> Result<RankReport, GeometryError> {
    check_morse_rank_with(family, points, tol_rel, DEFAULT_TOL_CRIT)
}

pub fn check_morse_rank_with(
    family: &MorseFamily,
    points: &[Binding],
    tol_rel: f64,
    tol_crit: f64,
) -> Result<RankReport, GeometryError> {
    if family.params.is_empty() {
        return Err(GeometryError::NoParameters);
    }
    let cols: Vec<&VarId> = family
        .states
        .iter()
        .chain(&family.ports)
        .chain(&family.params)
        .collect();
    let block = second_derivative_block(family, &family.params, &cols);
    rank_report(family, RankCondition::Morse, block, points, tol_rel, tol_crit)
}

/// Restricted condition: `[d2K/dnu dx | d2K/dnu dnu]` has rank m at every point.
pub fn check_restricted_rank(
    family: &MorseFamily,
    points: &[Binding],
    tol_rel: f64,
) -> Result<RankReport, GeometryError> {
    check_restricted_rank_with(family, points, tol_rel, DEFAULT_TOL_CRIT)
}

pub fn check_restricted_rank_with(
    family: &MorseFamily,
    points: &[Binding],
    tol_rel: f64,
    tol_crit: f64,
) -> Result<RankReport, GeometryError> {
    if family.ports.is_empty() {
        return Err(GeometryError::NoPorts);
    }
    let cols: Vec<&VarId> = family.states.iter().chain(&family.ports).collect();
    let block = second_derivative_block(family, &family.ports, &cols);
    rank_report(family, RankCondition::Restricted, block, points, tol_rel, tol_crit)
}

/// Draw `count` seeds in `sample_box` and pull them onto the critical set.
/// `fixed` supplies physical parameters (and run-time multipliers).
pub fn sample_on_shell(
    family: &MorseFamily,
    sample_box: &SampleBox,
    fixed: &Binding,
    count: usize,
    seed: u64,
    tol_crit: f64,
) -> Result<Vec<Binding>, GeometryError> {
    let moving: Vec<VarId> = family
        .states
        .iter()
        .chain(&family.ports)
        .chain(&family.params)
        .cloned()
        .collect();
    let drawn: Vec<VarId> = family.runtime.iter().filter(|v| !fixed.contains(v)).cloned().collect();
    let equations = family.critical_equations();
    let outcome = sample_zero_set(&SampleRequest {
        equations: &equations,
        moving: &moving,
        drawn: &drawn,
        fixed,
        sample_box,
        count,
        seed,
        tol: tol_crit,
    })?;
    Ok(outcome.points)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse_expr;

    fn vars() -> Vec<VarId> {
        vec![
            VarId::state("q0", 0),
            VarId::state("q1", 1),
            VarId::state("p0", 2),
            VarId::state("p1", 3),
            VarId::multiplier("lam", 0),
            VarId::parameter("m", 0),
        ]
    }

    fn relativistic() -> MorseFamily {
        let v = vars();
        let k = parse_expr("lam*(-p0^2 + p1^2 - m^2)", &v).unwrap();
        MorseFamily::new(v[..4].to_vec(), vec![], vec![v[4].clone()], k).unwrap()
    }

    fn point(pairs: &[(&VarId, f64)]) -> Binding {
        pairs.iter().map(|(v, x)| ((*v).clone(), *x)).collect()
    }

    #[test]
    fn critical_residual_examples() {
        let f = relativistic();
        let v = vars();
        let on = point(&[
            (&v[0], 0.0),
            (&v[1], 0.0),
            (&v[2], 0.0),
            (&v[3], 1.0),
            (&v[4], 0.3),
            (&v[5], 1.0),
        ]);
        assert_eq!(critical_residual(&f, &on).unwrap(), vec![0.0]);
        let off = point(&[
            (&v[0], 0.0),
            (&v[1], 0.0),
            (&v[2], 0.0),
            (&v[3], 2.0),
            (&v[4], 0.3),
            (&v[5], 1.0),
        ]);
        assert_eq!(critical_residual(&f, &off).unwrap(), vec![3.0]);

        let q = VarId::state("q", 0);
        let p = VarId::state("p", 1);
        let osc = MorseFamily::new(
            vec![q.clone(), p.clone()],
            vec![],
            vec![],
            parse_expr("1/2*(q^2 + p^2)", &[q.clone(), p.clone()]).unwrap(),
        )
        .unwrap();
        assert!(critical_residual(&osc, &point(&[(&q, 1.0), (&p, 2.0)]))
            .unwrap()
            .is_empty());
    }

    #[test]
    fn coenergy_examples() {
        let q = VarId::state("q", 0);
        let p = VarId::state("p", 1);
        let osc = MorseFamily::new(
            vec![q.clone(), p.clone()],
            vec![],
            vec![],
            parse_expr("1/2*(q^2 + p^2)", &[q.clone(), p.clone()]).unwrap(),
        )
        .unwrap();
        let s = coenergy(&osc, &point(&[(&q, 1.0), (&p, 2.0)])).unwrap();
        assert_eq!(s.e, vec![1.0, 2.0]);
        assert!(s.eps.is_empty() && s.critical_residual.is_empty());

        let f = relativistic();
        let v = vars();
        let s = coenergy(
            &f,
            &point(&[
                (&v[0], 0.0),
                (&v[1], 0.0),
                (&v[2], 0.0),
                (&v[3], 1.0),
                (&v[4], 0.5),
                (&v[5], 1.0),
            ]),
        )
        .unwrap();
        assert_eq!(s.e, vec![0.0, 0.0, 0.0, 1.0]);

        let u = VarId::input("u", 0);
        let all = [q.clone(), p.clone(), u.clone()];
        let io = MorseFamily::new(
            vec![q.clone(), p.clone()],
            vec![u.clone()],
            vec![],
            parse_expr("1/2*p^2 + u*q", &all).unwrap(),
        )
        .unwrap();
        let s = coenergy(&io, &point(&[(&q, 0.7), (&p, 0.1), (&u, 3.0)])).unwrap();
        assert_eq!(s.eps, vec![0.7]);
    }

    #[test]
    fn fiber_family_passes_and_cubic_fails() {
        let x = VarId::state("x", 0);
        let lam = VarId::multiplier("lam", 0);
        let all = [x.clone(), lam.clone()];
        let fiber = MorseFamily::new(
            vec![x.clone()],
            vec![],
            vec![lam.clone()],
            parse_expr("lam*x", &all).unwrap(),
        )
        .unwrap();
        let pts = [point(&[(&x, 0.0), (&lam, 0.4)]), point(&[(&x, 0.0), (&lam, -2.0)])];
        let r = check_morse_rank(&fiber, &pts, DEFAULT_TOL_RANK).unwrap();
        assert!(r.pass);
        assert_eq!(r.points[0].singular_values, vec![1.0]);

        let sq = MorseFamily::new(
            vec![x.clone()],
            vec![],
            vec![lam.clone()],
            parse_expr("lam^2", &all).unwrap(),
        )
        .unwrap();
        assert!(
            check_morse_rank(&sq, &[point(&[(&x, 0.3), (&lam, 0.0)])], DEFAULT_TOL_RANK)
                .unwrap()
                .pass
        );

        let cubic = MorseFamily::new(
            vec![x.clone()],
            vec![],
            vec![lam.clone()],
            parse_expr("lam^3", &all).unwrap(),
        )
        .unwrap();
        let r = check_morse_rank(&cubic, &[point(&[(&x, 0.3), (&lam, 0.0)])], DEFAULT_TOL_RANK).unwrap();
        assert!(!r.pass);
        assert_eq!(r.points[0].rank, 0);
    }

    #[test]
    fn rank_check_preconditions() {
        let x = VarId::state("x", 0);
        let lam = VarId::multiplier("lam", 0);
        let all = [x.clone(), lam.clone()];
        let fiber = MorseFamily::new(
            vec![x.clone()],
            vec![],
            vec![lam.clone()],
            parse_expr("lam*x", &all).unwrap(),
        )
        .unwrap();
        let err = check_morse_rank(&fiber, &[point(&[(&x, 0.5), (&lam, 1.0)])], DEFAULT_TOL_RANK).unwrap_err();
        assert!(matches!(err, GeometryError::OffShell { index: 0, .. }));
        assert!(matches!(
            check_morse_rank(&fiber, &[], DEFAULT_TOL_RANK),
            Err(GeometryError::NoPoints)
        ));
        assert!(matches!(
            check_restricted_rank(&fiber, &[point(&[(&x, 0.0), (&lam, 1.0)])], 1e-9),
            Err(GeometryError::NoPorts)
        ));
        let plain = MorseFamily::new(vec![x.clone()], vec![], vec![], parse_expr("x^2", &all).unwrap()).unwrap();
        assert!(matches!(
            check_morse_rank(&plain, &[Binding::new()], 1e-9),
            Err(GeometryError::NoParameters)
        ));
    }

    #[test]
    fn restricted_rank_detects_duplicated_inputs() {
        let q = VarId::state("q", 0);
        let p = VarId::state("p", 1);
        let u1 = VarId::input("u1", 0);
        let u2 = VarId::input("u2", 1);
        let all = [q.clone(), p.clone(), u1.clone(), u2.clone()];
        let single = MorseFamily::new(
            vec![q.clone(), p.clone()],
            vec![u1.clone()],
            vec![],
            parse_expr("1/2*p^2 + u1*q", &all).unwrap(),
        )
        .unwrap();
        let pt = point(&[(&q, 0.2), (&p, -0.3), (&u1, 0.5), (&u2, 0.1)]);
        let r = check_restricted_rank(&single, std::slice::from_ref(&pt), DEFAULT_TOL_RANK).unwrap();
        assert!(r.pass);
        assert_eq!(r.points[0].singular_values, vec![1.0]);

        let dup = MorseFamily::new(
            vec![q.clone(), p.clone()],
            vec![u1.clone(), u2.clone()],
            vec![],
            parse_expr("1/2*p^2 + u1*q + u2*q", &all).unwrap(),
        )
        .unwrap();
        let r = check_restricted_rank(&dup, &[pt], DEFAULT_TOL_RANK).unwrap();
        assert!(!r.pass);
        assert_eq!(r.points[0].rank, 1);
    }

    #[test]
    fn tilde_h_examples() {
        let q = VarId::state("q", 0);
        let p = VarId::state("p", 1);
        let u = VarId::input("u", 0);
        let all = [q.clone(), p.clone(), u.clone()];
        let lin = MorseFamily::new(
            vec![q.clone(), p.clone()],
            vec![u.clone()],
            vec![],
            parse_expr("1/2*p^2 + u*q", &all).unwrap(),
        )
        .unwrap();
        assert_eq!(lin.tilde_h().unwrap(), parse_expr("1/2*p^2", &all).unwrap());
        assert!(!lin.tilde_h().unwrap().contains_var(&u));

        let quad = MorseFamily::new(
            vec![q.clone(), p.clone()],
            vec![u.clone()],
            vec![],
            parse_expr("1/2*p^2 + u^2*q", &all).unwrap(),
        )
        .unwrap();
        assert_eq!(quad.tilde_h().unwrap(), parse_expr("1/2*p^2 - u^2*q", &all).unwrap());

        let closed = MorseFamily::new(
            vec![q.clone(), p.clone()],
            vec![],
            vec![],
            parse_expr("1/2*p^2", &all).unwrap(),
        )
        .unwrap();
        assert_eq!(closed.tilde_h(), Err(GeometryError::NoPorts));
    }

    #[test]
    fn undeclared_generator_variables_are_rejected() {
        let q = VarId::state("q", 0);
        let u = VarId::input("u", 0);
        let err = MorseFamily::new(
            vec![q.clone()],
            vec![],
            vec![],
            parse_expr("u*q", &[q.clone(), u]).unwrap(),
        )
        .unwrap_err();
        assert_eq!(err, GeometryError::UndeclaredVariable("u".into()));
    }

    #[test]
    fn sampled_points_are_on_shell_and_reproducible() {
        let f = relativistic();
        let v = vars();
        let fixed = Binding::new().with(&v[5], 1.0);
        let a = sample_on_shell(&f, &SampleBox::new(), &fixed, 8, 0, DEFAULT_TOL_CRIT).unwrap();
        let b = sample_on_shell(&f, &SampleBox::new(), &fixed, 8, 0, DEFAULT_TOL_CRIT).unwrap();
        assert_eq!(a.len(), 8);
        assert_eq!(a, b);
        let r = check_morse_rank(&f, &a, DEFAULT_TOL_RANK).unwrap();
        assert!(r.pass);
    }
}
