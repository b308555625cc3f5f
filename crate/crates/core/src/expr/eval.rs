use std::collections::BTreeMap;
use std::fmt;

use num_rational::Rational64;
use serde::Serialize;
use thiserror::Error;

use super::num::{rational_to_f64, rational_to_i64};
use super::{Expr, Func, Node, VarId};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("no value bound for variable `{0}`")]
    MissingBinding(String),
    #[error("domain error in `{subterm}`: {reason}")]
    Domain { subterm: String, reason: &'static str },
}

fn domain(e: &Expr, reason: &'static str) -> EvalError {
    EvalError::Domain {
        subterm: e.to_string(),
        reason,
    }
}

/// Values for a set of variables.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Binding(BTreeMap<VarId, f64>);

impl Binding {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, v: &VarId, value: f64) -> &mut Self {
        self.0.insert(v.clone(), value);
        self
    }

    pub fn with(mut self, v: &VarId, value: f64) -> Self {
        self.set(v, value);
        self
    }

    pub fn get(&self, v: &VarId) -> Option<f64> {
        self.0.get(v).copied()
    }

    pub fn contains(&self, v: &VarId) -> bool {
        self.0.contains_key(v)
    }

    pub fn extend(&mut self, other: &Binding) {
        for (k, v) in &other.0 {
            self.0.insert(k.clone(), *v);
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&VarId, f64)> {
        self.0.iter().map(|(k, v)| (k, *v))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values_of(&self, vars: &[VarId]) -> Result<Vec<f64>, EvalError> {
        vars.iter()
            .map(|v| {
                self.get(v)
                    .ok_or_else(|| EvalError::MissingBinding(v.name().to_string()))
            })
            .collect()
    }
}

impl FromIterator<(VarId, f64)> for Binding {
    fn from_iter<T: IntoIterator<Item = (VarId, f64)>>(iter: T) -> Self {
        Binding(iter.into_iter().collect())
    }
}

impl fmt::Display for Binding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for (k, v) in &self.0 {
            if !first {
                f.write_str(", ")?;
            }
            first = false;
            write!(f, "{k}={v}")?;
        }
        Ok(())
    }
}

pub(super) fn evaluate(e: &Expr, b: &Binding) -> Result<f64, EvalError> {
    let value = match e.node() {
        Node::Const(n) => n.to_f64(),
        Node::Var(v) => b
            .get(v)
            .ok_or_else(|| EvalError::MissingBinding(v.name().to_string()))?,
        Node::Sum(xs) => {
            let mut acc = 0.0;
            for x in xs {
                acc += evaluate(x, b)?;
            }
            acc
        }
        Node::Product(xs) => {
            let mut acc = 1.0;
            for x in xs {
                acc *= evaluate(x, b)?;
            }
            acc
        }
        Node::Pow(base, exp) => power(e, evaluate(base, b)?, exp)?,
        Node::Sqrt(arg) => sqrt(e, evaluate(arg, b)?)?,
        Node::Func(f, arg) => apply(e, *f, evaluate(arg, b)?)?,
    };
    finite(e, value)
}

fn finite(e: &Expr, v: f64) -> Result<f64, EvalError> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(domain(e, "non-finite result"))
    }
}

fn power(e: &Expr, base: f64, exp: &Rational64) -> Result<f64, EvalError> {
    match rational_to_i64(exp) {
        Some(n) => {
            if base == 0.0 && n < 0 {
                return Err(domain(e, "division by zero"));
            }
            match i32::try_from(n) {
                Ok(n) => Ok(base.powi(n)),
                Err(_) => Ok(base.powf(n as f64)),
            }
        }
        None => {
            if base < 0.0 {
                return Err(domain(e, "fractional power of a negative number"));
            }
            if base == 0.0 && *exp < Rational64::from_integer(0) {
                return Err(domain(e, "division by zero"));
            }
            Ok(base.powf(rational_to_f64(exp)))
        }
    }
}

fn sqrt(e: &Expr, x: f64) -> Result<f64, EvalError> {
    if x < 0.0 {
        Err(domain(e, "square root of a negative number"))
    } else {
        Ok(x.sqrt())
    }
}

fn apply(e: &Expr, f: Func, x: f64) -> Result<f64, EvalError> {
    Ok(match f {
        Func::Sin => x.sin(),
        Func::Cos => x.cos(),
        Func::Exp => x.exp(),
        Func::Log => {
            if x <= 0.0 {
                return Err(domain(e, "logarithm of a non-positive number"));
            }
            x.ln()
        }
    })
}

/// Assignment of variables to slots of a flat value vector.
#[derive(Clone, Debug, Default)]
pub struct Layout {
    slots: BTreeMap<VarId, usize>,
    len: usize,
}

impl Layout {
    pub fn new<'a, I: IntoIterator<Item = &'a VarId>>(vars: I) -> Self {
        let mut layout = Layout::default();
        for v in vars {
            layout.push(v);
        }
        layout
    }

    pub fn push(&mut self, v: &VarId) -> usize {
        if let Some(i) = self.slots.get(v) {
            return *i;
        }
        self.slots.insert(v.clone(), self.len);
        self.len += 1;
        self.len - 1
    }

    pub fn slot(&self, v: &VarId) -> Option<usize> {
        self.slots.get(v).copied()
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Const(f64),
    Slot(usize),
    Sum(Vec<Op>),
    Product(Vec<Op>),
    PowInt(Box<Op>, i32, Expr),
    PowReal(Box<Op>, f64, bool, Expr),
    Sqrt(Box<Op>, Expr),
    Func(Func, Box<Op>, Expr),
}

/// An expression resolved against a [`Layout`] for repeated evaluation on
/// flat slices. Produces the same values and domain errors as
/// [`Expr::evaluate`].
#[derive(Clone, Debug)]
pub struct CompiledExpr {
    root: Op,
    source: Expr,
}

impl CompiledExpr {
    pub fn new(e: &Expr, layout: &Layout) -> Result<Self, EvalError> {
        Ok(CompiledExpr {
            root: lower(e, layout)?,
            source: e.clone(),
        })
    }

    pub fn source(&self) -> &Expr {
        &self.source
    }

    pub fn eval(&self, values: &[f64]) -> Result<f64, EvalError> {
        let v = run(&self.root, values)?;
        finite(&self.source, v)
    }
}

fn lower(e: &Expr, layout: &Layout) -> Result<Op, EvalError> {
    Ok(match e.node() {
        Node::Const(n) => Op::Const(n.to_f64()),
        Node::Var(v) => Op::Slot(
            layout
                .slot(v)
                .ok_or_else(|| EvalError::MissingBinding(v.name().to_string()))?,
        ),
        Node::Sum(xs) => Op::Sum(xs.iter().map(|x| lower(x, layout)).collect::<Result<_, _>>()?),
        Node::Product(xs) => Op::Product(xs.iter().map(|x| lower(x, layout)).collect::<Result<_, _>>()?),
        Node::Pow(b, exp) => {
            let inner = Box::new(lower(b, layout)?);
            match rational_to_i64(exp).and_then(|n| i32::try_from(n).ok()) {
                Some(n) => Op::PowInt(inner, n, e.clone()),
                None => Op::PowReal(inner, rational_to_f64(exp), exp.is_integer(), e.clone()),
            }
        }
        Node::Sqrt(b) => Op::Sqrt(Box::new(lower(b, layout)?), e.clone()),
        Node::Func(f, b) => Op::Func(*f, Box::new(lower(b, layout)?), e.clone()),
    })
}

fn run(op: &Op, values: &[f64]) -> Result<f64, EvalError> {
    Ok(match op {
        Op::Const(c) => *c,
        Op::Slot(i) => values[*i],
        Op::Sum(xs) => {
            let mut acc = 0.0;
            for x in xs {
                acc += run(x, values)?;
            }
            acc
        }
        Op::Product(xs) => {
            let mut acc = 1.0;
            for x in xs {
                acc *= run(x, values)?;
            }
            acc
        }
        Op::PowInt(b, n, src) => {
            let base = run(b, values)?;
            if base == 0.0 && *n < 0 {
                return Err(domain(src, "division by zero"));
            }
            finite(src, base.powi(*n))?
        }
        Op::PowReal(b, p, integral, src) => {
            let base = run(b, values)?;
            if base < 0.0 && !integral {
                return Err(domain(src, "fractional power of a negative number"));
            }
            if base == 0.0 && *p < 0.0 {
                return Err(domain(src, "division by zero"));
            }
            finite(src, base.powf(*p))?
        }
        Op::Sqrt(b, src) => sqrt(src, run(b, values)?)?,
        Op::Func(f, b, src) => finite(src, apply(src, *f, run(b, values)?)?)?,
    })
}
