//! Fixed-step RK4 with post-step projection onto the constraint surface.

use serde::Serialize;

use super::audit::audit_model;
use super::{DynamicsError, Model, PHSystem, PowerAudit, INITIAL_TOL};
use crate::linalg::min_norm_solve;

use nalgebra::DVector;

/// Target residual of the post-step projection.
pub const PROJECTION_TOL: f64 = 1e-12;
pub const PROJECTION_MAX_ITER: usize = 20;

/// A sampled solution curve with everything recorded per step.
#[derive(Clone, Debug, Default, Serialize)]
pub struct Trajectory {
    pub state_names: Vec<String>,
    pub multiplier_names: Vec<String>,
    pub output_names: Vec<String>,
    pub port_count: usize,
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub multipliers: Vec<Vec<f64>>,
    /// Energy-port inputs `nu` (not part of the CSV; recomputed from signals).
    pub inputs: Vec<Vec<f64>>,
    /// Energy-port efforts `eps`.
    pub outputs: Vec<Vec<f64>>,
    pub flows: Vec<Vec<f64>>,
    pub efforts: Vec<Vec<f64>>,
    pub constraint_residual: Vec<f64>,
    /// One entry per interior step.
    pub audits: Vec<PowerAudit>,
}

impl Trajectory {
    pub(crate) fn empty_for(model: &Model) -> Trajectory {
        let sys = model.system();
        let f = &sys.family;
        Trajectory {
            state_names: f.states().iter().map(|v| v.name().to_string()).collect(),
            multiplier_names: f
                .params()
                .iter()
                .chain(f.runtime())
                .map(|v| v.name().to_string())
                .collect(),
            output_names: f.ports().iter().map(|v| v.name().to_string()).collect(),
            port_count: sys.dirac.port_dim(),
            ..Trajectory::default()
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn final_state(&self) -> Option<&[f64]> {
        self.states.last().map(Vec::as_slice)
    }

    pub fn max_constraint_residual(&self) -> f64 {
        self.constraint_residual.iter().fold(0.0f64, |m, r| m.max(*r))
    }

    /// Linear interpolation of state component `i` at time `t` (clamped).
    pub fn interpolate(&self, i: usize, t: f64) -> f64 {
        let n = self.times.len();
        if t <= self.times[0] {
            return self.states[0][i];
        }
        if t >= self.times[n - 1] {
            return self.states[n - 1][i];
        }
        let k = self.times.partition_point(|x| *x <= t) - 1;
        let s = (t - self.times[k]) / (self.times[k + 1] - self.times[k]);
        self.states[k][i] * (1.0 - s) + self.states[k + 1][i] * s
    }
}

/// Time grid from `t0` to `t1`. When `(t1 - t0)/dt` is an integer up to a
/// relative 1e-9 the grid is uniform; otherwise the last step is shortened.
pub fn step_times(t0: f64, t1: f64, dt: f64) -> Result<Vec<f64>, DynamicsError> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(DynamicsError::TimeGrid(format!(
            "dt must be positive and finite, got {dt}"
        )));
    }
    if !t0.is_finite() || !t1.is_finite() || t1 <= t0 {
        return Err(DynamicsError::TimeGrid(format!("need t0 < t1, got [{t0}, {t1}]")));
    }
    let ratio = (t1 - t0) / dt;
    if ratio > 1e8 {
        return Err(DynamicsError::TimeGrid(format!("{ratio:.0} steps is too many")));
    }
    let rounded = ratio.round();
    let (steps, uniform) = if rounded >= 1.0 && (ratio - rounded).abs() <= 1e-9 * ratio.max(1.0) {
        (rounded as usize, true)
    } else {
        (ratio.ceil() as usize, false)
    };
    let mut times: Vec<f64> = (0..steps).map(|i| t0 + i as f64 * dt).collect();
    if !uniform && times.last().is_some_and(|t| *t >= t1) {
        times.pop();
    }
    times.push(t1);
    Ok(times)
}

fn record(traj: &mut Trajectory, model: &Model, t: f64, x: &[f64]) -> Result<(), DynamicsError> {
    let f = model.field(t, x)?;
    traj.times.push(t);
    traj.states.push(x.to_vec());
    traj.multipliers.push(f.lambda);
    traj.inputs.push(f.u);
    traj.outputs.push(f.y);
    traj.flows.push(f.fp);
    traj.efforts.push(f.ep);
    traj.constraint_residual.push(f.constraint_max);
    Ok(())
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Minimum-norm Newton correction onto `{phi = 0}`.
pub(crate) fn project(model: &Model, t: f64, x: &mut [f64]) -> Result<f64, DynamicsError> {
    if model.system().constraints.is_empty() {
        return Ok(0.0);
    }
    let mut phi = model.constraint_values(t, x)?;
    let mut worst = max_abs(&phi);
    for _ in 0..PROJECTION_MAX_ITER {
        if worst <= PROJECTION_TOL {
            break;
        }
        let j = model.constraint_jacobian(t, x)?;
        let Some(dx) = min_norm_solve(&j, &DVector::from_vec(phi.clone())) else {
            break;
        };
        for (xi, d) in x.iter_mut().zip(dx.iter()) {
            *xi -= d;
        }
        phi = model.constraint_values(t, x)?;
        worst = max_abs(&phi);
    }
    if worst > INITIAL_TOL || !worst.is_finite() {
        return Err(DynamicsError::ProjectionFailed { t, residual: worst });
    }
    Ok(worst)
}

/// Integrate from `x0` over `[t0, t1]` with step `dt` and audit the result.
pub fn integrate(sys: &PHSystem, x0: &[f64], t0: f64, t1: f64, dt: f64) -> Result<Trajectory, DynamicsError> {
    let model = sys.compile()?;
    if x0.len() != model.state_dim() {
        return Err(DynamicsError::Dimension(format!(
            "x0 has {} entries, the system {} states",
            x0.len(),
            model.state_dim()
        )));
    }
    let times = step_times(t0, t1, dt)?;
    let phi0 = model.constraint_values(t0, x0)?;
    if let Some((i, v)) = phi0.iter().enumerate().find(|(_, v)| !(v.abs() <= INITIAL_TOL)) {
        return Err(DynamicsError::OffShell {
            phi: sys.constraints[i].to_string(),
            value: *v,
        });
    }

    let mut traj = Trajectory::empty_for(&model);
    let mut x = x0.to_vec();
    record(&mut traj, &model, t0, &x)?;
    let n = x.len();
    let axpy = |x: &[f64], k: &[f64], h: f64| -> Vec<f64> { x.iter().zip(k).map(|(a, b)| a + h * b).collect() };
    for w in times.windows(2) {
        let (t, h) = (w[0], w[1] - w[0]);
        let k1 = model.field(t, &x)?.xdot;
        let k2 = model.field(t + h / 2.0, &axpy(&x, &k1, h / 2.0))?.xdot;
        let k3 = model.field(t + h / 2.0, &axpy(&x, &k2, h / 2.0))?.xdot;
        let k4 = model.field(t + h, &axpy(&x, &k3, h))?.xdot;
        for i in 0..n {
            x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        project(&model, w[1], &mut x)?;
        record(&mut traj, &model, w[1], &x)?;
    }
    traj.audits = audit_model(&traj, &model)?;
    Ok(traj)
}
