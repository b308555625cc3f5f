use num_rational::Rational64;
use num_traits::{CheckedSub, One};

use super::{Expr, Func, Node, Num, VarId};

pub(super) fn differentiate(f: &Expr, v: &VarId) -> Expr {
    if !f.contains_var(v) {
        return Expr::zero();
    }
    match f.node() {
        Node::Const(_) => Expr::zero(),
        Node::Var(w) => {
            if w == v {
                Expr::one()
            } else {
                Expr::zero()
            }
        }
        Node::Sum(terms) => Expr::sum(terms.iter().map(|t| differentiate(t, v))),
        Node::Product(factors) => {
            let mut terms = Vec::new();
            for (i, fi) in factors.iter().enumerate() {
                let d = differentiate(fi, v);
                if d.is_zero() {
                    continue;
                }
                let others = factors
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| *j != i)
                    .map(|(_, g)| g.clone());
                terms.push(Expr::product(std::iter::once(d).chain(others)));
            }
            Expr::sum(terms)
        }
        Node::Pow(base, exp) => {
            let lowered = match exp.checked_sub(&Rational64::one()) {
                Some(e) => base.pow(e),
                None => f * base.powi(-1),
            };
            Expr::product([Expr::num(Num::Rat(*exp)), lowered, differentiate(base, v)])
        }
        Node::Sqrt(arg) => Expr::product([Expr::rational(1, 2), differentiate(arg, v), f.powi(-1)]),
        Node::Func(func, arg) => {
            let inner = differentiate(arg, v);
            let outer = match func {
                Func::Sin => arg.apply(Func::Cos),
                Func::Cos => -arg.apply(Func::Sin),
                Func::Exp => f.clone(),
                Func::Log => arg.powi(-1),
            };
            outer * inner
        }
    }
}
