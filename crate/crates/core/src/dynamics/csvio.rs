//! Trajectory CSV: `t, x_<name>..., lam_<name>..., y_<name>..., fp_<i>...,
//! ep_<i>..., res_closed, res_energyport, res_constraint_max`, one row per
//! step, floats with 17 significant digits. Residual columns are NaN on the
//! two end rows, where no central difference exists.

use std::io::{Read, Write};

use super::{DynamicsError, PHSystem, Trajectory};

const TRAILER: [&str; 3] = ["res_closed", "res_energyport", "res_constraint_max"];

/// Column layout of a trajectory file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrajectoryHeader {
    pub states: Vec<String>,
    pub multipliers: Vec<String>,
    pub outputs: Vec<String>,
    pub ports: usize,
}

impl TrajectoryHeader {
    pub fn of(traj: &Trajectory) -> Self {
        TrajectoryHeader {
            states: traj.state_names.clone(),
            multipliers: traj.multiplier_names.clone(),
            outputs: traj.output_names.clone(),
            ports: traj.port_count,
        }
    }

    pub fn columns(&self) -> Vec<String> {
        let mut cols = vec!["t".to_string()];
        cols.extend(self.states.iter().map(|n| format!("x_{n}")));
        cols.extend(self.multipliers.iter().map(|n| format!("lam_{n}")));
        cols.extend(self.outputs.iter().map(|n| format!("y_{n}")));
        cols.extend((1..=self.ports).map(|i| format!("fp_{i}")));
        cols.extend((1..=self.ports).map(|i| format!("ep_{i}")));
        cols.extend(TRAILER.iter().map(|s| s.to_string()));
        cols
    }

    /// Recover the layout from header fields. Names may themselves contain
    /// underscores; the prefix decides the group, and groups must appear in
    /// order.
    pub fn parse<'a, I: IntoIterator<Item = &'a str>>(fields: I) -> Result<Self, DynamicsError> {
        let fields: Vec<&str> = fields.into_iter().map(str::trim).collect();
        let schema = |msg: String| DynamicsError::Schema(msg);
        if fields.first() != Some(&"t") {
            return Err(schema("first column must be `t`".into()));
        }
        if fields.len() < 4 || fields[fields.len() - 3..] != TRAILER {
            return Err(schema(format!("last columns must be {}", TRAILER.join(", "))));
        }
        let body = &fields[1..fields.len() - 3];
        let mut header = TrajectoryHeader {
            states: vec![],
            multipliers: vec![],
            outputs: vec![],
            ports: 0,
        };
        let mut fp = 0;
        let mut ep = 0;
        let mut stage = 0;
        for f in body {
            let (prefix, name) = f.split_once('_').unwrap_or((f, ""));
            let rank = match prefix {
                "x" => 0,
                "lam" => 1,
                "y" => 2,
                "fp" => 3,
                "ep" => 4,
                _ => return Err(schema(format!("unknown column `{f}`"))),
            };
            if rank < stage {
                return Err(schema(format!("column `{f}` out of order")));
            }
            stage = rank;
            if name.is_empty() {
                return Err(schema(format!("empty name in column `{f}`")));
            }
            match rank {
                0 => header.states.push(name.to_string()),
                1 => header.multipliers.push(name.to_string()),
                2 => header.outputs.push(name.to_string()),
                _ => {
                    let count = if rank == 3 { &mut fp } else { &mut ep };
                    if name.parse::<usize>().ok() != Some(*count + 1) {
                        return Err(schema(format!("unexpected column `{f}`")));
                    }
                    *count += 1;
                }
            }
        }
        if fp != ep {
            return Err(schema(format!("{fp} flow columns but {ep} effort columns")));
        }
        header.ports = fp;
        Ok(header)
    }
}

fn fmt(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else {
        format!("{v:.16e}")
    }
}

pub fn write_trajectory_csv<W: Write>(traj: &Trajectory, out: W) -> Result<(), DynamicsError> {
    let csv_err = |e: csv::Error| DynamicsError::Csv(e.to_string());
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TrajectoryHeader::of(traj).columns()).map_err(csv_err)?;
    let last = traj.len().saturating_sub(1);
    for i in 0..traj.len() {
        let mut row = vec![fmt(traj.times[i])];
        row.extend(traj.states[i].iter().map(|v| fmt(*v)));
        row.extend(traj.multipliers[i].iter().map(|v| fmt(*v)));
        row.extend(traj.outputs[i].iter().map(|v| fmt(*v)));
        row.extend(traj.flows[i].iter().map(|v| fmt(*v)));
        row.extend(traj.efforts[i].iter().map(|v| fmt(*v)));
        let audit = if i == 0 || i == last {
            None
        } else {
            traj.audits.get(i - 1)
        };
        row.push(fmt(audit.map_or(f64::NAN, |a| a.closed_balance_residual)));
        row.push(fmt(audit.map_or(f64::NAN, |a| a.tilde_balance_residual)));
        row.push(fmt(traj.constraint_residual[i]));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| DynamicsError::Csv(e.to_string()))?;
    Ok(())
}

/// Parse a trajectory file into its header and numeric rows, without a system.
pub fn read_trajectory_table<R: Read>(input: R) -> Result<(TrajectoryHeader, Vec<Vec<f64>>), DynamicsError> {
    let csv_err = |e: csv::Error| DynamicsError::Csv(e.to_string());
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let header = TrajectoryHeader::parse(r.headers().map_err(csv_err)?.iter())?;
    let width = header.columns().len();
    let mut rows = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        if rec.len() != width {
            return Err(DynamicsError::Schema(format!(
                "row {} has {} fields, expected {width}",
                line + 1,
                rec.len()
            )));
        }
        let row = rec
            .iter()
            .map(|s| s.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| DynamicsError::Schema(format!("row {}: {e}", line + 1)))?;
        if let Some(prev) = rows.last().map(|r: &Vec<f64>| r[0]) {
            if !(row[0] > prev) {
                return Err(DynamicsError::Schema(format!(
                    "row {}: times must increase strictly",
                    line + 1
                )));
            }
        } else if !row[0].is_finite() {
            return Err(DynamicsError::Schema("non-finite time".into()));
        }
        rows.push(row);
    }
    Ok((header, rows))
}

/// Read a trajectory written for `sys`; inputs are recomputed from the
/// system's signals and audits from the recorded series.
pub fn read_trajectory_csv<R: Read>(input: R, sys: &PHSystem) -> Result<Trajectory, DynamicsError> {
    let model = sys.compile()?;
    let (header, rows) = read_trajectory_table(input)?;
    let mut traj = Trajectory::empty_for(&model);
    let expected = TrajectoryHeader::of(&traj);
    if header != expected {
        return Err(DynamicsError::Schema(format!(
            "columns [{}] do not match the system's [{}]",
            header.columns().join(","),
            expected.columns().join(",")
        )));
    }
    let (n, k, m, d) = (
        header.states.len(),
        header.multipliers.len(),
        header.outputs.len(),
        header.ports,
    );
    for row in rows {
        let mut at = 1;
        let mut take = |len: usize| {
            let v = row[at..at + len].to_vec();
            at += len;
            v
        };
        traj.times.push(row[0]);
        traj.states.push(take(n));
        traj.multipliers.push(take(k));
        traj.outputs.push(take(m));
        traj.flows.push(take(d));
        traj.efforts.push(take(d));
        traj.inputs.push(model.inputs(row[0]));
        traj.constraint_residual.push(row[row.len() - 1]);
    }
    traj.audits = super::audit::audit_model(&traj, &model)?;
    Ok(traj)
}
