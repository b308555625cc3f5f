//! Scalar time signals driving gauges, inputs and power-port efforts.

use std::fmt;

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SignalError {
    #[error("a table needs at least two samples")]
    TooShort,
    #[error("table times must be strictly increasing")]
    NotIncreasing,
    #[error("non-finite value in signal")]
    NonFinite,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Signal {
    Const { value: f64 },
    Sin { amp: f64, omega: f64, phase: f64 },
    Step { t_switch: f64, before: f64, after: f64 },
    Table(Table),
}

impl Signal {
    pub fn constant(value: f64) -> Signal {
        Signal::Const { value }
    }

    pub fn sin(amp: f64, omega: f64, phase: f64) -> Signal {
        Signal::Sin { amp, omega, phase }
    }

    pub fn step(t_switch: f64, before: f64, after: f64) -> Signal {
        Signal::Step {
            t_switch,
            before,
            after,
        }
    }

    pub fn value(&self, t: f64) -> f64 {
        match self {
            Signal::Const { value } => *value,
            Signal::Sin { amp, omega, phase } => amp * (omega * t + phase).sin(),
            Signal::Step {
                t_switch,
                before,
                after,
            } => {
                if t < *t_switch {
                    *before
                } else {
                    *after
                }
            }
            Signal::Table(table) => table.value(t),
        }
    }
}

impl fmt::Display for Signal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Signal::Const { value } => write!(f, "const({value})"),
            Signal::Sin { amp, omega, phase } => write!(f, "sin({amp}, {omega}, {phase})"),
            Signal::Step {
                t_switch,
                before,
                after,
            } => write!(f, "step({t_switch}, {before}, {after})"),
            Signal::Table(t) => {
                write!(f, "table(")?;
                for (i, (x, y)) in t.times.iter().zip(&t.values).enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{x}: {y}")?;
                }
                write!(f, ")")
            }
        }
    }
}

/// Piecewise cubic Hermite interpolation of tabulated samples, held constant
/// outside the table. Slopes are finite differences of the neighbours.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Table {
    times: Vec<f64>,
    values: Vec<f64>,
    #[serde(skip)]
    slopes: Vec<f64>,
}

impl Table {
    pub fn new(times: Vec<f64>, values: Vec<f64>) -> Result<Table, SignalError> {
        if times.len() < 2 || times.len() != values.len() {
            return Err(SignalError::TooShort);
        }
        if times.iter().chain(&values).any(|v| !v.is_finite()) {
            return Err(SignalError::NonFinite);
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(SignalError::NotIncreasing);
        }
        let n = times.len();
        let slopes = (0..n)
            .map(|i| {
                let (a, b) = (i.saturating_sub(1), (i + 1).min(n - 1));
                (values[b] - values[a]) / (times[b] - times[a])
            })
            .collect();
        Ok(Table { times, values, slopes })
    }

    pub fn value(&self, t: f64) -> f64 {
        let n = self.times.len();
        if t <= self.times[0] {
            return self.values[0];
        }
        if t >= self.times[n - 1] {
            return self.values[n - 1];
        }
        let i = self.times.partition_point(|x| *x <= t) - 1;
        let h = self.times[i + 1] - self.times[i];
        let s = (t - self.times[i]) / h;
        let (s2, s3) = (s * s, s * s * s);
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        h00 * self.values[i] + h10 * h * self.slopes[i] + h01 * self.values[i + 1] + h11 * h * self.slopes[i + 1]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn elementary_signals() {
        assert_eq!(Signal::constant(0.5).value(3.0), 0.5);
        assert_eq!(Signal::step(1.0, -1.0, 2.0).value(0.999), -1.0);
        assert_eq!(Signal::step(1.0, -1.0, 2.0).value(1.0), 2.0);
        let s = Signal::sin(2.0, 3.0, 0.25);
        assert!((s.value(0.4) - 2.0 * (1.2f64 + 0.25).sin()).abs() < 1e-15);
    }

    #[test]
    fn table_interpolates_knots_and_lines() {
        let t = Table::new(vec![0.0, 1.0, 2.0, 4.0], vec![1.0, 3.0, 5.0, 9.0]).unwrap();
        for (x, y) in [(0.0, 1.0), (1.0, 3.0), (2.0, 5.0), (4.0, 9.0), (0.5, 2.0), (3.0, 7.0)] {
            assert!((t.value(x) - y).abs() < 1e-12, "{x}");
        }
        assert_eq!(t.value(-1.0), 1.0);
        assert_eq!(t.value(10.0), 9.0);
        assert_eq!(
            Table::new(vec![0.0, 0.0], vec![1.0, 2.0]),
            Err(SignalError::NotIncreasing)
        );
        assert_eq!(Table::new(vec![0.0], vec![1.0]), Err(SignalError::TooShort));
    }
}
