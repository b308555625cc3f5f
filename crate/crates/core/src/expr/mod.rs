//! Symbolic expressions over typed variables.
//!
//! An [`Expr`] is an immutable, reference-counted tree that is kept in
//! canonical form by its smart constructors: sums and products are flattened
//! and sorted, numeric subterms are folded, like terms are collected and
//! powers of equal bases are merged. Two expressions that the rule set can
//! identify as equal therefore compare equal structurally and print the same.
//!
//! Subtraction, division and negation do not have nodes of their own; they
//! canonicalize to `a + (-1)*b`, `a * b^-1` and `(-1)*a`.

mod diff;
mod eval;
pub mod num;
mod parse;
mod print;
mod simplify;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::ops;
use std::sync::Arc;

use num_rational::Rational64;
use serde::Serialize;
use thiserror::Error;

pub use eval::{Binding, CompiledExpr, EvalError, Layout};
pub use num::Num;
pub use parse::{parse_expr, parse_raw, ParseError};

/// Role of a variable inside a system description.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum VarKind {
    State,
    Input,
    Multiplier,
    Parameter,
    /// Tangent-bundle velocity of a Lagrangian description.
    Velocity,
}

impl VarKind {
    pub fn as_str(self) -> &'static str {
        match self {
            VarKind::State => "state",
            VarKind::Input => "input",
            VarKind::Multiplier => "multiplier",
            VarKind::Parameter => "parameter",
            VarKind::Velocity => "velocity",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "state" => VarKind::State,
            "input" => VarKind::Input,
            "multiplier" => VarKind::Multiplier,
            "parameter" => VarKind::Parameter,
            "velocity" => VarKind::Velocity,
            _ => return None,
        })
    }
}

/// A named variable. Ordering is by name first, which keeps printed
/// expressions alphabetical.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VarId {
    name: Arc<str>,
    kind: VarKind,
    index: usize,
}

impl VarId {
    pub fn new(name: &str, kind: VarKind, index: usize) -> Self {
        VarId {
            name: Arc::from(name),
            kind,
            index,
        }
    }

    pub fn state(name: &str, index: usize) -> Self {
        Self::new(name, VarKind::State, index)
    }

    pub fn input(name: &str, index: usize) -> Self {
        Self::new(name, VarKind::Input, index)
    }

    pub fn multiplier(name: &str, index: usize) -> Self {
        Self::new(name, VarKind::Multiplier, index)
    }

    pub fn parameter(name: &str, index: usize) -> Self {
        Self::new(name, VarKind::Parameter, index)
    }

    pub fn velocity(name: &str, index: usize) -> Self {
        Self::new(name, VarKind::Velocity, index)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn kind(&self) -> VarKind {
        self.kind
    }

    pub fn index(&self) -> usize {
        self.index
    }
}

impl fmt::Display for VarId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)
    }
}

impl Serialize for VarId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.name)
    }
}

/// Build variables with dense per-kind indices from `(name, kind)` pairs.
///
/// Returns an error naming the first duplicated name.
pub fn declare_vars<'a, I>(decls: I) -> Result<Vec<VarId>, ExprError>
where
    I: IntoIterator<Item = (&'a str, VarKind)>,
{
    let mut counts: BTreeMap<VarKind, usize> = BTreeMap::new();
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for (name, kind) in decls {
        if !seen.insert(name.to_string()) {
            return Err(ExprError::DuplicateVariable(name.to_string()));
        }
        let slot = counts.entry(kind).or_default();
        out.push(VarId::new(name, kind, *slot));
        *slot += 1;
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Log,
}

impl Func {
    pub fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Log => "log",
        }
    }

    pub fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "exp" => Func::Exp,
            "log" => Func::Log,
            _ => return None,
        })
    }
}

/// Tree node. The variant order is the node-kind rank used for sorting.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Node {
    Const(Num),
    Var(VarId),
    Sum(Vec<Expr>),
    Product(Vec<Expr>),
    Pow(Expr, Rational64),
    Sqrt(Expr),
    Func(Func, Expr),
}

#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Expr(Arc<Node>);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExprError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("cyclic substitution through `{0}`")]
    Cycle(String),
    #[error("variable `{0}` declared twice")]
    DuplicateVariable(String),
}

impl Expr {
    /// Wrap a node without canonicalizing it.
    pub fn raw(node: Node) -> Expr {
        Expr(Arc::new(node))
    }

    pub fn node(&self) -> &Node {
        &self.0
    }

    pub fn constant(n: impl Into<Num>) -> Expr {
        Expr::raw(Node::Const(n.into()))
    }

    pub fn num(n: Num) -> Expr {
        Expr::raw(Node::Const(n))
    }

    pub fn zero() -> Expr {
        Expr::num(Num::ZERO)
    }

    pub fn one() -> Expr {
        Expr::num(Num::ONE)
    }

    pub fn rational(n: i64, d: i64) -> Expr {
        Expr::num(Num::ratio(n, d))
    }

    pub fn var(v: &VarId) -> Expr {
        Expr::raw(Node::Var(v.clone()))
    }

    pub fn sum<I: IntoIterator<Item = Expr>>(terms: I) -> Expr {
        simplify::make_sum(terms.into_iter().collect())
    }

    pub fn product<I: IntoIterator<Item = Expr>>(factors: I) -> Expr {
        simplify::make_product(factors.into_iter().collect())
    }

    pub fn pow(&self, exp: Rational64) -> Expr {
        simplify::make_pow(self.clone(), exp)
    }

    pub fn powi(&self, exp: i64) -> Expr {
        self.pow(Rational64::from_integer(exp))
    }

    pub fn sqrt(&self) -> Expr {
        simplify::make_sqrt(self.clone())
    }

    pub fn apply(&self, f: Func) -> Expr {
        simplify::make_func(f, self.clone())
    }

    pub fn as_const(&self) -> Option<Num> {
        match self.node() {
            Node::Const(n) => Some(*n),
            _ => None,
        }
    }

    pub fn as_var(&self) -> Option<&VarId> {
        match self.node() {
            Node::Var(v) => Some(v),
            _ => None,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.as_const().is_some_and(|n| n.is_zero())
    }

    pub fn is_const(&self) -> bool {
        self.as_const().is_some()
    }

    /// True when every numeric leaf is an exact rational.
    pub fn is_exact(&self) -> bool {
        match self.node() {
            Node::Const(n) => n.is_exact(),
            Node::Var(_) => true,
            Node::Sum(xs) | Node::Product(xs) => xs.iter().all(Expr::is_exact),
            Node::Pow(b, _) | Node::Sqrt(b) | Node::Func(_, b) => b.is_exact(),
        }
    }

    /// Rebuild the tree bottom-up through the canonicalizing constructors.
    pub fn simplify(&self) -> Expr {
        simplify::simplify(self)
    }

    pub fn differentiate(&self, v: &VarId) -> Expr {
        diff::differentiate(self, v)
    }

    pub fn gradient(&self, vars: &[VarId]) -> Vec<Expr> {
        vars.iter().map(|v| self.differentiate(v)).collect()
    }

    pub fn evaluate(&self, b: &Binding) -> Result<f64, EvalError> {
        eval::evaluate(self, b)
    }

    pub fn compile(&self, layout: &Layout) -> Result<CompiledExpr, EvalError> {
        CompiledExpr::new(self, layout)
    }

    pub fn free_vars(&self) -> BTreeSet<VarId> {
        let mut out = BTreeSet::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars(&self, out: &mut BTreeSet<VarId>) {
        match self.node() {
            Node::Const(_) => {}
            Node::Var(v) => {
                out.insert(v.clone());
            }
            Node::Sum(xs) | Node::Product(xs) => xs.iter().for_each(|x| x.collect_vars(out)),
            Node::Pow(b, _) | Node::Sqrt(b) | Node::Func(_, b) => b.collect_vars(out),
        }
    }

    pub fn contains_var(&self, v: &VarId) -> bool {
        match self.node() {
            Node::Const(_) => false,
            Node::Var(w) => w == v,
            Node::Sum(xs) | Node::Product(xs) => xs.iter().any(|x| x.contains_var(v)),
            Node::Pow(b, _) | Node::Sqrt(b) | Node::Func(_, b) => b.contains_var(v),
        }
    }

    /// Simultaneous substitution followed by canonical simplification.
    ///
    /// Fails when the replacement map is cyclic, i.e. a replaced variable is
    /// reachable from its own replacement through other replaced variables.
    pub fn substitute(&self, replacements: &BTreeMap<VarId, Expr>) -> Result<Expr, ExprError> {
        check_acyclic(replacements)?;
        Ok(self.substitute_unchecked(replacements))
    }

    fn substitute_unchecked(&self, map: &BTreeMap<VarId, Expr>) -> Expr {
        match self.node() {
            Node::Const(_) => self.clone(),
            Node::Var(v) => map.get(v).cloned().unwrap_or_else(|| self.clone()),
            Node::Sum(xs) => Expr::sum(xs.iter().map(|x| x.substitute_unchecked(map))),
            Node::Product(xs) => Expr::product(xs.iter().map(|x| x.substitute_unchecked(map))),
            Node::Pow(b, e) => b.substitute_unchecked(map).pow(*e),
            Node::Sqrt(b) => b.substitute_unchecked(map).sqrt(),
            Node::Func(f, b) => b.substitute_unchecked(map).apply(*f),
        }
    }

    /// Substitute a single variable with a constant.
    pub fn with_value(&self, v: &VarId, value: Num) -> Expr {
        let map = BTreeMap::from([(v.clone(), Expr::num(value))]);
        self.substitute_unchecked(&map)
    }

    /// Largest polynomial degree in `v`, or `None` if `v` appears inside a
    /// non-polynomial node (sqrt, functions, fractional/negative powers).
    pub fn degree_in(&self, v: &VarId) -> Option<u32> {
        if !self.contains_var(v) {
            return Some(0);
        }
        match self.node() {
            Node::Const(_) => Some(0),
            Node::Var(_) => Some(1),
            Node::Sum(xs) => xs.iter().map(|x| x.degree_in(v)).try_fold(0, |a, d| Some(a.max(d?))),
            Node::Product(xs) => xs.iter().map(|x| x.degree_in(v)).try_fold(0, |a, d| Some(a + d?)),
            Node::Pow(b, e) => {
                let n = num::rational_to_i64(e).filter(|n| *n > 0)?;
                Some(b.degree_in(v)? * u32::try_from(n).ok()?)
            }
            Node::Sqrt(_) | Node::Func(..) => None,
        }
    }
}

fn check_acyclic(map: &BTreeMap<VarId, Expr>) -> Result<(), ExprError> {
    // 0 = unvisited, 1 = on stack, 2 = done
    fn visit(v: &VarId, map: &BTreeMap<VarId, Expr>, state: &mut BTreeMap<VarId, u8>) -> Result<(), ExprError> {
        match state.get(v).copied().unwrap_or(0) {
            1 => return Err(ExprError::Cycle(v.name().to_string())),
            2 => return Ok(()),
            _ => {}
        }
        state.insert(v.clone(), 1);
        if let Some(e) = map.get(v) {
            for w in e.free_vars() {
                if map.contains_key(&w) {
                    visit(&w, map, state)?;
                }
            }
        }
        state.insert(v.clone(), 2);
        Ok(())
    }
    let mut state = BTreeMap::new();
    for v in map.keys() {
        visit(v, map, &mut state)?;
    }
    Ok(())
}

impl fmt::Debug for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Expr({self})")
    }
}

/// Serialized in the DSL syntax.
impl Serialize for Expr {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl From<i64> for Expr {
    fn from(v: i64) -> Self {
        Expr::constant(v)
    }
}

impl From<&VarId> for Expr {
    fn from(v: &VarId) -> Self {
        Expr::var(v)
    }
}

macro_rules! binop {
    ($tr:ident, $method:ident, $body:expr) => {
        impl ops::$tr<Expr> for Expr {
            type Output = Expr;
            fn $method(self, rhs: Expr) -> Expr {
                let f: fn(Expr, Expr) -> Expr = $body;
                f(self, rhs)
            }
        }
        impl ops::$tr<&Expr> for &Expr {
            type Output = Expr;
            fn $method(self, rhs: &Expr) -> Expr {
                let f: fn(Expr, Expr) -> Expr = $body;
                f(self.clone(), rhs.clone())
            }
        }
        impl ops::$tr<Expr> for &Expr {
            type Output = Expr;
            fn $method(self, rhs: Expr) -> Expr {
                let f: fn(Expr, Expr) -> Expr = $body;
                f(self.clone(), rhs)
            }
        }
        impl ops::$tr<&Expr> for Expr {
            type Output = Expr;
            fn $method(self, rhs: &Expr) -> Expr {
                let f: fn(Expr, Expr) -> Expr = $body;
                f(self, rhs.clone())
            }
        }
    };
}

binop!(Add, add, |a, b| Expr::sum([a, b]));
binop!(Sub, sub, |a, b| Expr::sum([a, Expr::product([Expr::constant(-1), b])]));
binop!(Mul, mul, |a, b| Expr::product([a, b]));
binop!(Div, div, |a, b| Expr::product([a, b.powi(-1)]));

impl ops::Neg for Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        Expr::product([Expr::constant(-1), self])
    }
}

impl ops::Neg for &Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        -self.clone()
    }
}
