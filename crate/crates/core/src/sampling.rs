//! Seeded sampling of points on zero sets `{ f_1 = ... = f_k = 0 }`.
//!
//! Seeds are drawn uniformly in a box and pulled onto the zero set with
//! minimum-norm Newton steps. Seeds that hit a domain error or fail to
//! converge are discarded.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::expr::{Binding, CompiledExpr, EvalError, Expr, Layout, VarId};
use crate::linalg::min_norm_solve;

pub const DEFAULT_TOL_CRIT: f64 = 1e-10;
pub const DEFAULT_SAMPLE_COUNT: usize = 8;
pub const NEWTON_MAX_ITER: usize = 50;
/// Seeds tried per requested point before giving up.
pub const ATTEMPTS_PER_POINT: usize = 25;

/// Per-variable sampling intervals with a default for undeclared ones.
#[derive(Clone, Debug)]
pub struct SampleBox {
    bounds: BTreeMap<VarId, (f64, f64)>,
    default: (f64, f64),
}

impl Default for SampleBox {
    fn default() -> Self {
        SampleBox {
            bounds: BTreeMap::new(),
            default: (-1.0, 1.0),
        }
    }
}

impl SampleBox {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, v: &VarId, lo: f64, hi: f64) -> Self {
        self.set(v, lo, hi);
        self
    }

    pub fn set(&mut self, v: &VarId, lo: f64, hi: f64) {
        self.bounds.insert(v.clone(), (lo.min(hi), lo.max(hi)));
    }

    pub fn bounds(&self, v: &VarId) -> (f64, f64) {
        self.bounds.get(v).copied().unwrap_or(self.default)
    }

    pub fn draw<R: Rng>(&self, rng: &mut R, v: &VarId) -> f64 {
        let (lo, hi) = self.bounds(v);
        if lo == hi {
            lo
        } else {
            rng.random_range(lo..hi)
        }
    }
}

/// Residual functions and their Jacobian with respect to the moving variables.
pub struct ZeroSet {
    moving: Vec<VarId>,
    layout: Layout,
    residuals: Vec<CompiledExpr>,
    jacobian: Vec<Vec<CompiledExpr>>,
}

impl ZeroSet {
    /// `moving` are the Newton unknowns; `others` must cover every other
    /// free variable of `equations`.
    pub fn new(equations: &[Expr], moving: &[VarId], others: &[VarId]) -> Result<Self, EvalError> {
        let layout = Layout::new(moving.iter().chain(others));
        let residuals = equations
            .iter()
            .map(|e| e.compile(&layout))
            .collect::<Result<Vec<_>, _>>()?;
        let jacobian = equations
            .iter()
            .map(|e| {
                moving
                    .iter()
                    .map(|v| e.differentiate(v).compile(&layout))
                    .collect::<Result<Vec<_>, _>>()
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(ZeroSet {
            moving: moving.to_vec(),
            layout,
            residuals,
            jacobian,
        })
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn residual(&self, values: &[f64]) -> Result<Vec<f64>, EvalError> {
        self.residuals.iter().map(|r| r.eval(values)).collect()
    }

    pub fn max_residual(&self, values: &[f64]) -> Result<f64, EvalError> {
        Ok(self.residual(values)?.iter().fold(0.0f64, |m, r| m.max(r.abs())))
    }

    fn jacobian_at(&self, values: &[f64]) -> Result<DMatrix<f64>, EvalError> {
        let mut j = DMatrix::zeros(self.residuals.len(), self.moving.len());
        for (i, row) in self.jacobian.iter().enumerate() {
            for (k, d) in row.iter().enumerate() {
                j[(i, k)] = d.eval(values)?;
            }
        }
        Ok(j)
    }

    /// Newton iteration in place. Returns the final max residual.
    pub fn newton(&self, values: &mut [f64], tol: f64, max_iter: usize) -> Result<f64, EvalError> {
        let mut res = self.residual(values)?;
        let mut worst = res.iter().fold(0.0f64, |m, r| m.max(r.abs()));
        for _ in 0..max_iter {
            if worst <= tol {
                break;
            }
            let j = self.jacobian_at(values)?;
            let Some(dx) = min_norm_solve(&j, &DVector::from_vec(res.clone())) else {
                break;
            };
            for (k, v) in self.moving.iter().enumerate() {
                let slot = self.layout.slot(v).expect("moving variable has a slot");
                values[slot] -= dx[k];
            }
            res = self.residual(values)?;
            worst = res.iter().fold(0.0f64, |m, r| m.max(r.abs()));
        }
        Ok(worst)
    }
}

/// Request for a seeded batch of points on a zero set.
pub struct SampleRequest<'a> {
    pub equations: &'a [Expr],
    /// Moved by Newton.
    pub moving: &'a [VarId],
    /// Drawn from the box but held fixed during Newton.
    pub drawn: &'a [VarId],
    /// Held at the given values.
    pub fixed: &'a Binding,
    pub sample_box: &'a SampleBox,
    pub count: usize,
    pub seed: u64,
    pub tol: f64,
}

#[derive(Debug, Clone)]
pub struct SampleOutcome {
    pub points: Vec<Binding>,
    pub attempts: usize,
}

pub fn sample_zero_set(req: &SampleRequest<'_>) -> Result<SampleOutcome, EvalError> {
    let fixed_vars: Vec<VarId> = req.fixed.iter().map(|(v, _)| v.clone()).collect();
    let others: Vec<VarId> = req.drawn.iter().cloned().chain(fixed_vars.iter().cloned()).collect();
    let zs = ZeroSet::new(req.equations, req.moving, &others)?;
    let mut rng = ChaCha8Rng::seed_from_u64(req.seed);
    let mut points = Vec::new();
    let mut attempts = 0;
    let max_attempts = req.count.max(1) * ATTEMPTS_PER_POINT;
    while points.len() < req.count && attempts < max_attempts {
        attempts += 1;
        let mut values = vec![0.0; zs.layout().len()];
        for v in req.moving.iter().chain(req.drawn) {
            values[zs.layout().slot(v).unwrap()] = req.sample_box.draw(&mut rng, v);
        }
        for (v, x) in req.fixed.iter() {
            values[zs.layout().slot(v).unwrap()] = x;
        }
        match zs.newton(&mut values, req.tol, NEWTON_MAX_ITER) {
            Ok(r) if r <= req.tol => {}
            _ => continue,
        }
        let point: Binding = req
            .moving
            .iter()
            .chain(req.drawn)
            .chain(fixed_vars.iter())
            .map(|v| (v.clone(), values[zs.layout().slot(v).unwrap()]))
            .collect();
        points.push(point);
    }
    Ok(SampleOutcome { points, attempts })
}
