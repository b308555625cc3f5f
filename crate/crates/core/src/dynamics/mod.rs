//! Port-Hamiltonian dynamics: the Lagrangian submanifold generated by a
//! Morse family coupled to a Dirac structure, integrated with fixed-step RK4
//! and projected back onto the constraint surface after every step.
//!
//! Power-port sign convention: `f^p = -B^T e`, so that
//! `<e, xdot> + <e^p, f^p> = 0` holds exactly for every effort pair.

mod audit;
mod csvio;
mod integrate;
mod signal;

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

use crate::constraints::{ConstrainedIo, MultiplierStatus};
use crate::expr::{Binding, CompiledExpr, EvalError, Expr, Layout, VarId};
use crate::geometry::MorseFamily;
use crate::linalg::condition_number;

pub use audit::{audit_power, PowerAudit};
pub use csvio::{read_trajectory_csv, read_trajectory_table, write_trajectory_csv, TrajectoryHeader};
pub use integrate::{integrate, step_times, Trajectory, PROJECTION_MAX_ITER, PROJECTION_TOL};
pub use signal::{Signal, SignalError, Table};

/// Largest admissible condition number of the multiplier system.
pub const MAX_CONDITION: f64 = 1e12;
/// Tolerance on the initial state's constraint residual.
pub const INITIAL_TOL: f64 = 1e-10;
const SKEW_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("invalid Dirac structure: {0}")]
    InvalidStructure(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("free multiplier `{0}` has no gauge signal (the gauge is never chosen implicitly)")]
    MissingGaugeSignal(String),
    #[error("input `{0}` has no signal")]
    MissingInputSignal(String),
    #[error("initial state violates `{phi}`: value {value:e}")]
    OffShell { phi: String, value: f64 },
    #[error(
        "singular multiplier system at t = {t} (condition {condition:e}); degenerate brackets among: {constraints}"
    )]
    SingularMultipliers {
        t: f64,
        condition: f64,
        constraints: String,
    },
    #[error("projection onto the constraint surface failed at t = {t}: residual {residual:e}")]
    ProjectionFailed { t: f64, residual: f64 },
    #[error("at t = {t}: {source}")]
    Domain { t: f64, source: EvalError },
    #[error("invalid time grid: {0}")]
    TimeGrid(String),
    #[error("trajectory schema mismatch: {0}")]
    Schema(String),
    #[error("csv: {0}")]
    Csv(String),
}

fn at(t: f64) -> impl Fn(EvalError) -> DynamicsError {
    move |source| DynamicsError::Domain { t, source }
}

#[derive(Clone, Debug, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DiracStructureSpec {
    /// Graph of the canonical Poisson structure on `(q, p)`:
    /// `qdot = e_p`, `pdot = -e_q`.
    Canonical { q_vars: Vec<VarId>, p_vars: Vec<VarId> },
    /// `xdot = J e + B e^p`, `f^p = -B^T e` with `J` skew.
    Constant {
        #[serde(serialize_with = "ser_matrix")]
        j: DMatrix<f64>,
        #[serde(serialize_with = "ser_matrix")]
        b: DMatrix<f64>,
    },
}

fn ser_matrix<S: serde::Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
    use serde::ser::SerializeSeq;
    let mut seq = s.serialize_seq(Some(m.nrows()))?;
    for i in 0..m.nrows() {
        let row: Vec<f64> = m.row(i).iter().copied().collect();
        seq.serialize_element(&row)?;
    }
    seq.end()
}

impl DiracStructureSpec {
    pub fn canonical(q_vars: Vec<VarId>, p_vars: Vec<VarId>) -> Result<Self, DynamicsError> {
        if q_vars.len() != p_vars.len() || q_vars.is_empty() {
            return Err(DynamicsError::InvalidStructure(format!(
                "canonical structure needs matching non-empty q and p lists (got {} and {})",
                q_vars.len(),
                p_vars.len()
            )));
        }
        Ok(DiracStructureSpec::Canonical { q_vars, p_vars })
    }

    pub fn constant(j: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self, DynamicsError> {
        if !j.is_square() {
            return Err(DynamicsError::InvalidStructure(format!(
                "J is {}x{}, not square",
                j.nrows(),
                j.ncols()
            )));
        }
        if b.nrows() != j.nrows() && b.ncols() > 0 {
            return Err(DynamicsError::InvalidStructure(format!(
                "B has {} rows, J has {}",
                b.nrows(),
                j.nrows()
            )));
        }
        let skew = (&j + j.transpose()).abs().max();
        if skew > SKEW_TOL {
            return Err(DynamicsError::InvalidStructure(format!(
                "J is not skew-symmetric (|J + J^T| = {skew:e})"
            )));
        }
        let b = if b.ncols() == 0 {
            DMatrix::zeros(j.nrows(), 0)
        } else {
            b
        };
        Ok(DiracStructureSpec::Constant { j, b })
    }

    pub fn state_dim(&self) -> usize {
        match self {
            DiracStructureSpec::Canonical { q_vars, .. } => 2 * q_vars.len(),
            DiracStructureSpec::Constant { j, .. } => j.nrows(),
        }
    }

    /// Number of power ports.
    pub fn port_dim(&self) -> usize {
        match self {
            DiracStructureSpec::Canonical { .. } => 0,
            DiracStructureSpec::Constant { b, .. } => b.ncols(),
        }
    }

    /// `(xdot, f^p)` for co-energy `e` and port effort `ep`.
    pub fn flow(&self, e: &[f64], ep: &[f64]) -> (Vec<f64>, Vec<f64>) {
        match self {
            DiracStructureSpec::Canonical { q_vars, .. } => {
                let d = q_vars.len();
                let mut xdot = vec![0.0; 2 * d];
                for i in 0..d {
                    xdot[i] = e[d + i];
                    xdot[d + i] = -e[i];
                }
                (xdot, Vec::new())
            }
            DiracStructureSpec::Constant { j, b } => {
                let e = DVector::from_column_slice(e);
                let ep = DVector::from_column_slice(ep);
                let xdot = j * &e + b * &ep;
                let fp = -(b.transpose() * &e);
                (xdot.iter().copied().collect(), fp.iter().copied().collect())
            }
        }
    }
}

/// A port-Hamiltonian system ready for simulation.
#[derive(Clone, Debug)]
pub struct PHSystem {
    /// Generates the Lagrangian submanifold: states, energy ports (inputs),
    /// free multipliers as parameters, pointwise-solved multipliers as runtime.
    pub family: MorseFamily,
    pub dirac: DiracStructureSpec,
    /// Constraints imposed along the trajectory.
    pub constraints: Vec<Expr>,
    /// Indices into `constraints` whose preservation fixes the runtime multipliers.
    pub numeric_rows: Vec<usize>,
    /// For every runtime multiplier of `family`, the constraint it multiplies.
    pub numeric_constraints: Vec<Expr>,
    pub gauge_signals: BTreeMap<VarId, Signal>,
    pub input_signals: BTreeMap<VarId, Signal>,
    /// Power-port efforts; missing channels are held at zero.
    pub effort_signals: Vec<Signal>,
    pub parameters: Binding,
}

impl PHSystem {
    /// An unconstrained system.
    pub fn new(family: MorseFamily, dirac: DiracStructureSpec) -> PHSystem {
        PHSystem {
            family,
            dirac,
            constraints: Vec::new(),
            numeric_rows: Vec::new(),
            numeric_constraints: Vec::new(),
            gauge_signals: BTreeMap::new(),
            input_signals: BTreeMap::new(),
            effort_signals: Vec::new(),
            parameters: Binding::new(),
        }
    }

    /// System of a reduced constrained input-output model; all final
    /// constraints are imposed.
    pub fn from_constrained(io: &ConstrainedIo, dirac: DiracStructureSpec) -> PHSystem {
        let sys = &io.system;
        let mut out = PHSystem::new(io.family.clone(), dirac);
        out.constraints = sys.constraint_exprs();
        out.numeric_rows = sys.numeric_block.rows.clone();
        out.numeric_constraints = sys
            .multipliers
            .iter()
            .filter(|m| m.status == MultiplierStatus::DeterminedNumeric)
            .map(|m| sys.constraints[m.constraint].phi.clone())
            .collect();
        out
    }

    pub fn with_gauge(mut self, v: &VarId, s: Signal) -> Self {
        self.gauge_signals.insert(v.clone(), s);
        self
    }

    pub fn with_input(mut self, v: &VarId, s: Signal) -> Self {
        self.input_signals.insert(v.clone(), s);
        self
    }

    pub fn with_parameters(mut self, b: Binding) -> Self {
        self.parameters = b;
        self
    }

    pub fn with_constraints(mut self, constraints: Vec<Expr>) -> Self {
        self.constraints = constraints;
        self
    }

    pub fn validate(&self) -> Result<(), DynamicsError> {
        let n = self.family.states().len();
        if self.dirac.state_dim() != n {
            return Err(DynamicsError::Dimension(format!(
                "the family has {n} states, the Dirac structure acts on {}",
                self.dirac.state_dim()
            )));
        }
        if let DiracStructureSpec::Canonical { q_vars, p_vars } = &self.dirac {
            let expected: Vec<&VarId> = q_vars.iter().chain(p_vars).collect();
            if self.family.states().iter().collect::<Vec<_>>() != expected {
                return Err(DynamicsError::Dimension("states must be ordered as q then p".into()));
            }
        }
        if self.effort_signals.len() > self.dirac.port_dim() {
            return Err(DynamicsError::Dimension(format!(
                "{} effort signals for {} power ports",
                self.effort_signals.len(),
                self.dirac.port_dim()
            )));
        }
        if self.numeric_constraints.len() != self.family.runtime().len()
            || self.numeric_rows.len() != self.family.runtime().len()
        {
            return Err(DynamicsError::Dimension(
                "runtime multipliers, their constraints and rows must agree".into(),
            ));
        }
        if self.numeric_rows.iter().any(|&r| r >= self.constraints.len()) {
            return Err(DynamicsError::Dimension(
                "multiplier row outside the constraint list".into(),
            ));
        }
        for v in self.family.params() {
            if !self.gauge_signals.contains_key(v) {
                return Err(DynamicsError::MissingGaugeSignal(v.name().to_string()));
            }
        }
        for v in self.family.ports() {
            if !self.input_signals.contains_key(v) {
                return Err(DynamicsError::MissingInputSignal(v.name().to_string()));
            }
        }
        Ok(())
    }

    /// `H_T` with every input set to zero, when `H_T` is affine in the inputs.
    pub fn io_hamiltonian(&self) -> Option<Expr> {
        let h = self.family.generator();
        let ports = self.family.ports();
        if ports.is_empty() || ports.iter().any(|u| h.degree_in(u).is_none_or(|d| d > 1)) {
            return None;
        }
        let mut out = h.clone();
        for u in ports {
            out = out.with_value(u, crate::expr::Num::ZERO);
        }
        Some(out)
    }

    pub fn compile(&self) -> Result<Model, DynamicsError> {
        self.validate()?;
        Model::new(self)
    }
}

/// Everything the field needs at one instant.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldEval {
    pub xdot: Vec<f64>,
    /// Free multipliers (gauge) followed by runtime-solved ones.
    pub lambda: Vec<f64>,
    pub e: Vec<f64>,
    pub u: Vec<f64>,
    /// Energy-port efforts `eps = dH_T/du`, the outputs.
    pub y: Vec<f64>,
    pub ep: Vec<f64>,
    pub fp: Vec<f64>,
    pub constraint_max: f64,
    /// Max-norm residual of the multiplier solve (0 without runtime multipliers).
    pub solve_residual: f64,
}

/// Compiled form of a [`PHSystem`].
#[derive(Clone, Debug)]
pub struct Model {
    sys: PHSystem,
    n: usize,
    layout: Layout,
    base: Vec<f64>,
    state_slots: Vec<usize>,
    port_slots: Vec<usize>,
    gauge_slots: Vec<usize>,
    runtime_slots: Vec<usize>,
    grad_h: Vec<CompiledExpr>,
    eps: Vec<CompiledExpr>,
    h_t: CompiledExpr,
    h_tilde: Option<CompiledExpr>,
    h_io: Option<CompiledExpr>,
    phi: Vec<CompiledExpr>,
    phi_grad: Vec<Vec<CompiledExpr>>,
    numeric_grad: Vec<Vec<CompiledExpr>>,
}

impl Model {
    fn new(sys: &PHSystem) -> Result<Model, DynamicsError> {
        let f = &sys.family;
        let mut layout = Layout::new(f.states().iter().chain(f.ports()).chain(f.params()).chain(f.runtime()));
        for (v, _) in sys.parameters.iter() {
            layout.push(v);
        }
        let slots = |vars: &[VarId]| vars.iter().map(|v| layout.slot(v).unwrap()).collect::<Vec<_>>();
        let state_slots = slots(f.states());
        let port_slots = slots(f.ports());
        let gauge_slots = slots(f.params());
        let runtime_slots = slots(f.runtime());
        let mut base = vec![0.0; layout.len()];
        for (v, x) in sys.parameters.iter() {
            base[layout.slot(v).unwrap()] = x;
        }
        let compile = |e: &Expr| {
            e.compile(&layout)
                .map_err(|err| DynamicsError::Dimension(format!("cannot compile `{e}`: {err}")))
        };
        let h = f.generator();
        let grad_h = f
            .states()
            .iter()
            .map(|v| compile(&h.differentiate(v)))
            .collect::<Result<Vec<_>, _>>()?;
        let eps = f
            .ports()
            .iter()
            .map(|v| compile(&h.differentiate(v)))
            .collect::<Result<Vec<_>, _>>()?;
        let h_tilde = match f.tilde_h() {
            Ok(e) => Some(compile(&e)?),
            Err(_) => None,
        };
        let h_io = sys.io_hamiltonian().map(|e| compile(&e)).transpose()?;
        let phi = sys.constraints.iter().map(compile).collect::<Result<Vec<_>, _>>()?;
        let gradient = |e: &Expr| {
            f.states()
                .iter()
                .map(|v| compile(&e.differentiate(v)))
                .collect::<Result<Vec<_>, _>>()
        };
        let phi_grad = sys.constraints.iter().map(gradient).collect::<Result<Vec<_>, _>>()?;
        let numeric_grad = sys
            .numeric_constraints
            .iter()
            .map(gradient)
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Model {
            n: f.states().len(),
            h_t: compile(h)?,
            sys: sys.clone(),
            layout,
            base,
            state_slots,
            port_slots,
            gauge_slots,
            runtime_slots,
            grad_h,
            eps,
            h_tilde,
            h_io,
            phi,
            phi_grad,
            numeric_grad,
        })
    }

    pub fn system(&self) -> &PHSystem {
        &self.sys
    }

    pub fn state_dim(&self) -> usize {
        self.n
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    /// Value vector at time `t` and state `x`, gauges from their signals and
    /// runtime multipliers at zero.
    fn values(&self, t: f64, x: &[f64]) -> Vec<f64> {
        let mut vals = self.base.clone();
        for (s, xi) in self.state_slots.iter().zip(x) {
            vals[*s] = *xi;
        }
        for (s, v) in self.port_slots.iter().zip(self.sys.family.ports()) {
            vals[*s] = self.sys.input_signals[v].value(t);
        }
        for (s, v) in self.gauge_slots.iter().zip(self.sys.family.params()) {
            vals[*s] = self.sys.gauge_signals[v].value(t);
        }
        vals
    }

    pub fn efforts(&self, t: f64) -> Vec<f64> {
        (0..self.sys.dirac.port_dim())
            .map(|i| self.sys.effort_signals.get(i).map_or(0.0, |s| s.value(t)))
            .collect()
    }

    pub fn inputs(&self, t: f64) -> Vec<f64> {
        self.sys
            .family
            .ports()
            .iter()
            .map(|v| self.sys.input_signals[v].value(t))
            .collect()
    }

    fn eval_all(list: &[CompiledExpr], vals: &[f64]) -> Result<Vec<f64>, EvalError> {
        list.iter().map(|c| c.eval(vals)).collect()
    }

    /// Constraint values at `x` (time-independent by construction).
    pub fn constraint_values(&self, t: f64, x: &[f64]) -> Result<Vec<f64>, DynamicsError> {
        let vals = self.values(t, x);
        Model::eval_all(&self.phi, &vals).map_err(at(t))
    }

    pub fn constraint_jacobian(&self, t: f64, x: &[f64]) -> Result<DMatrix<f64>, DynamicsError> {
        let vals = self.values(t, x);
        let mut j = DMatrix::zeros(self.phi.len(), self.n);
        for (i, row) in self.phi_grad.iter().enumerate() {
            for (k, d) in row.iter().enumerate() {
                j[(i, k)] = d.eval(&vals).map_err(at(t))?;
            }
        }
        Ok(j)
    }

    /// Solve the preservation conditions of the rows for the runtime multipliers.
    fn solve(&self, t: f64, vals: &mut [f64], ep: &[f64]) -> Result<(Vec<f64>, f64), DynamicsError> {
        let k = self.runtime_slots.len();
        if k == 0 {
            return Ok((Vec::new(), 0.0));
        }
        let grad_rest = Model::eval_all(&self.grad_h, vals).map_err(at(t))?;
        let (flow_rest, _) = self.sys.dirac.flow(&grad_rest, ep);
        let zero_ep = vec![0.0; ep.len()];
        let mut cols = Vec::with_capacity(k);
        for g in &self.numeric_grad {
            let grad = Model::eval_all(g, vals).map_err(at(t))?;
            cols.push(self.sys.dirac.flow(&grad, &zero_ep).0);
        }
        let mut a = DMatrix::zeros(k, k);
        let mut rhs = DVector::zeros(k);
        for (r, &row) in self.sys.numeric_rows.iter().enumerate() {
            let grad = Model::eval_all(&self.phi_grad[row], vals).map_err(at(t))?;
            let dot = |v: &[f64]| grad.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
            for (c, col) in cols.iter().enumerate() {
                a[(r, c)] = dot(col);
            }
            rhs[r] = -dot(&flow_rest);
        }
        let condition = condition_number(&a);
        if !(condition <= MAX_CONDITION) {
            let names: Vec<String> = self
                .sys
                .numeric_rows
                .iter()
                .map(|&r| self.sys.constraints[r].to_string())
                .collect();
            return Err(DynamicsError::SingularMultipliers {
                t,
                condition,
                constraints: names.join(", "),
            });
        }
        let lambda = a
            .clone()
            .lu()
            .solve(&rhs)
            .ok_or_else(|| DynamicsError::SingularMultipliers {
                t,
                condition,
                constraints: String::new(),
            })?;
        let residual = (&a * &lambda - &rhs).amax();
        for (s, l) in self.runtime_slots.iter().zip(lambda.iter()) {
            vals[*s] = *l;
        }
        Ok((lambda.iter().copied().collect(), residual))
    }

    /// Runtime-solved multipliers at `(t, x)`.
    pub fn solve_multipliers(&self, t: f64, x: &[f64]) -> Result<Vec<f64>, DynamicsError> {
        let mut vals = self.values(t, x);
        Ok(self.solve(t, &mut vals, &self.efforts(t))?.0)
    }

    /// Field at `(t, x)`: multipliers, co-energy, flow and port quantities.
    pub fn field(&self, t: f64, x: &[f64]) -> Result<FieldEval, DynamicsError> {
        let mut vals = self.values(t, x);
        let ep = self.efforts(t);
        let (runtime, solve_residual) = self.solve(t, &mut vals, &ep)?;
        let e = Model::eval_all(&self.grad_h, &vals).map_err(at(t))?;
        let (xdot, fp) = self.sys.dirac.flow(&e, &ep);
        let y = Model::eval_all(&self.eps, &vals).map_err(at(t))?;
        let constraint_max = Model::eval_all(&self.phi, &vals)
            .map_err(at(t))?
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()));
        let mut lambda: Vec<f64> = self.gauge_slots.iter().map(|s| vals[*s]).collect();
        lambda.extend(runtime);
        let u = self.port_slots.iter().map(|s| vals[*s]).collect();
        Ok(FieldEval {
            xdot,
            lambda,
            e,
            u,
            y,
            ep,
            fp,
            constraint_max,
            solve_residual,
        })
    }

    /// Value vector for recorded data: state, inputs and all multipliers given.
    fn recorded_values(&self, x: &[f64], u: &[f64], lambda: &[f64]) -> Vec<f64> {
        let mut vals = self.base.clone();
        for (s, v) in self.state_slots.iter().zip(x) {
            vals[*s] = *v;
        }
        for (s, v) in self.port_slots.iter().zip(u) {
            vals[*s] = *v;
        }
        for (s, v) in self.gauge_slots.iter().chain(&self.runtime_slots).zip(lambda) {
            vals[*s] = *v;
        }
        vals
    }
}

/// `(xdot, lambda, e)` at `(t, x)`.
pub fn assemble_field(sys: &PHSystem, t: f64, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>), DynamicsError> {
    let f = sys.compile()?.field(t, x)?;
    Ok((f.xdot, f.lambda, f.e))
}

/// Runtime-solved multipliers at `(t, x)`; empty when there are none.
pub fn solve_multipliers(sys: &PHSystem, t: f64, x: &[f64]) -> Result<Vec<f64>, DynamicsError> {
    sys.compile()?.solve_multipliers(t, x)
}
