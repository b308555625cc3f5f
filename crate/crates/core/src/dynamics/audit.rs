//! Power-balance audits along a recorded trajectory.
//!
//! Time derivatives are central finite differences on the stored series
//! (three-point, valid on non-uniform grids). Multipliers are held at their
//! recorded value at the audited step.

use serde::Serialize;

use super::{DynamicsError, Model, PHSystem, Trajectory};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PowerAudit {
    pub t: f64,
    /// `d H_T / dt`.
    pub dh_dt: f64,
    /// `<e^p, f^p>`.
    pub port_power: f64,
    /// `eps_dot . nu`.
    pub energy_port_power: f64,
    /// `d tilde_H / dt`.
    pub dtilde_h_dt: f64,
    /// `|<e, xdot> + <e^p, f^p>|`.
    pub closed_balance_residual: f64,
    /// `|dH_T/dt - eps . nu_dot + <e^p, f^p>|`.
    pub hamiltonian_balance_residual: f64,
    /// `|d tilde_H/dt + eps_dot . nu + <e^p, f^p>|`.
    pub tilde_balance_residual: f64,
    /// `|dH/dt + u . y_dot + <e^p, f^p>|` with `H = H_T(u = 0)`, for inputs
    /// entering linearly.
    pub io_balance_residual: Option<f64>,
    pub constraint_residual_max: f64,
}

fn central(fm: f64, f0: f64, fp: f64, h0: f64, h1: f64) -> f64 {
    (h0 * h0 * fp - h1 * h1 * fm + (h1 * h1 - h0 * h0) * f0) / (h0 * h1 * (h0 + h1))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Audit every interior step of `traj`; fewer than three steps give an
/// empty report.
pub fn audit_power(traj: &Trajectory, sys: &PHSystem) -> Result<Vec<PowerAudit>, DynamicsError> {
    audit_model(traj, &sys.compile()?)
}

pub(crate) fn audit_model(traj: &Trajectory, model: &Model) -> Result<Vec<PowerAudit>, DynamicsError> {
    let s = traj.len();
    if s < 3 {
        return Ok(Vec::new());
    }
    let err = |t: f64| move |source| DynamicsError::Domain { t, source };
    let mut out = Vec::with_capacity(s - 2);
    for i in 1..s - 1 {
        let t = traj.times[i];
        let (h0, h1) = (t - traj.times[i - 1], traj.times[i + 1] - t);
        let lambda = &traj.multipliers[i];
        let at = |j: usize| model.recorded_values(&traj.states[j], &traj.inputs[j], lambda);
        let (vm, v0, vp) = (at(i - 1), at(i), at(i + 1));
        let deriv = |c: &crate::expr::CompiledExpr| -> Result<f64, DynamicsError> {
            Ok(central(
                c.eval(&vm).map_err(err(t))?,
                c.eval(&v0).map_err(err(t))?,
                c.eval(&vp).map_err(err(t))?,
                h0,
                h1,
            ))
        };
        let series = |data: &[Vec<f64>], k: usize| central(data[i - 1][k], data[i][k], data[i + 1][k], h0, h1);

        let port_power = dot(&traj.efforts[i], &traj.flows[i]);
        let dh_dt = deriv(&model.h_t)?;
        let m = traj.outputs[i].len();
        let u_dot: Vec<f64> = (0..m).map(|k| series(&traj.inputs, k)).collect();
        let y_dot: Vec<f64> = (0..m).map(|k| series(&traj.outputs, k)).collect();
        let energy_port_power = dot(&y_dot, &traj.inputs[i]);
        let dtilde_h_dt = match &model.h_tilde {
            Some(h) => deriv(h)?,
            None => dh_dt,
        };

        let e: Vec<f64> = model
            .grad_h
            .iter()
            .map(|g| g.eval(&v0))
            .collect::<Result<_, _>>()
            .map_err(err(t))?;
        let (xdot, fp) = model.system().dirac.flow(&e, &traj.efforts[i]);
        let closed = dot(&e, &xdot) + dot(&traj.efforts[i], &fp);
        let io_balance_residual = match &model.h_io {
            Some(h) => Some((deriv(h)? + dot(&traj.inputs[i], &y_dot) + port_power).abs()),
            None => None,
        };
        out.push(PowerAudit {
            t,
            dh_dt,
            port_power,
            energy_port_power,
            dtilde_h_dt,
            closed_balance_residual: closed.abs(),
            hamiltonian_balance_residual: (dh_dt - dot(&traj.outputs[i], &u_dot) + port_power).abs(),
            tilde_balance_residual: (dtilde_h_dt + energy_port_power + port_power).abs(),
            io_balance_residual,
            constraint_residual_max: traj.constraint_residual[i],
        });
    }
    Ok(out)
}
