//! Rule-based canonicalization.
//!
//! Rules: flattening of nested sums/products, constant folding, 0/1
//! identities, collection of like terms (`2*x + 3*x -> 5*x`), merging of
//! powers of equal bases (`x * x^2 -> x^3`), distribution of a lone numeric
//! coefficient over a sum, and `(x^a)^n -> x^(a*n)` for integer `n`.
//! There is no expansion of products of sums and no trigonometric rewriting.

use num_rational::Rational64;
use num_traits::{CheckedAdd, CheckedMul, One, Zero};

use super::num::{rational_to_i64, Num};
use super::{Expr, Func, Node};

/// Passes over a product before giving up on further merging. Each pass can
/// only re-expose factors of a power of a product, so two are enough in
/// practice; the cap keeps the rule set obviously terminating.
const MAX_PRODUCT_PASSES: usize = 8;

pub(super) fn simplify(e: &Expr) -> Expr {
    match e.node() {
        Node::Const(_) | Node::Var(_) => e.clone(),
        Node::Sum(xs) => make_sum(xs.iter().map(simplify).collect()),
        Node::Product(xs) => make_product(xs.iter().map(simplify).collect()),
        Node::Pow(b, p) => make_pow(simplify(b), *p),
        Node::Sqrt(b) => make_sqrt(simplify(b)),
        Node::Func(f, b) => make_func(*f, simplify(b)),
    }
}

/// Split a term into numeric coefficient and remaining factor(s).
fn split_coefficient(term: &Expr) -> (Num, Expr) {
    if let Node::Product(fs) = term.node() {
        if let Some(c) = fs[0].as_const() {
            let rest = if fs.len() == 2 {
                fs[1].clone()
            } else {
                Expr::raw(Node::Product(fs[1..].to_vec()))
            };
            return (c, rest);
        }
    }
    (Num::ONE, term.clone())
}

fn attach_coefficient(c: Num, rest: Expr) -> Expr {
    if c.is_one() {
        return rest;
    }
    match rest.node() {
        Node::Product(fs) => {
            let mut v = Vec::with_capacity(fs.len() + 1);
            v.push(Expr::num(c));
            v.extend(fs.iter().cloned());
            Expr::raw(Node::Product(v))
        }
        _ => Expr::raw(Node::Product(vec![Expr::num(c), rest])),
    }
}

pub(super) fn make_sum(terms: Vec<Expr>) -> Expr {
    let mut flat = Vec::with_capacity(terms.len());
    for t in terms {
        match t.node() {
            Node::Sum(xs) => flat.extend(xs.iter().cloned()),
            _ => flat.push(t),
        }
    }

    let mut constant = Num::ZERO;
    let mut groups: Vec<(Expr, Num)> = Vec::with_capacity(flat.len());
    for t in flat {
        if let Some(c) = t.as_const() {
            constant = constant.add(c);
            continue;
        }
        let (c, rest) = split_coefficient(&t);
        groups.push((rest, c));
    }
    groups.sort_by(|a, b| a.0.cmp(&b.0));

    let mut out: Vec<Expr> = Vec::with_capacity(groups.len() + 1);
    let mut iter = groups.into_iter().peekable();
    while let Some((rest, mut c)) = iter.next() {
        while let Some((next, c2)) = iter.peek() {
            if *next != rest {
                break;
            }
            c = c.add(*c2);
            iter.next();
        }
        if !c.is_zero() {
            out.push(attach_coefficient(c, rest));
        }
    }
    if !constant.is_zero() {
        out.push(Expr::num(constant));
    }
    match out.len() {
        0 => Expr::zero(),
        1 => out.pop().unwrap(),
        _ => {
            out.sort();
            Expr::raw(Node::Sum(out))
        }
    }
}

fn base_and_exponent(f: &Expr) -> (Expr, Rational64) {
    match f.node() {
        Node::Pow(b, e) => (b.clone(), *e),
        _ => (f.clone(), Rational64::one()),
    }
}

pub(super) fn make_product(factors: Vec<Expr>) -> Expr {
    let mut coefficient = Num::ONE;
    let mut pending = factors;
    let mut merged: Vec<Expr> = Vec::new();

    for _ in 0..MAX_PRODUCT_PASSES {
        let mut powers: Vec<(Expr, Rational64)> = Vec::new();
        let mut stack = std::mem::take(&mut pending);
        stack.append(&mut merged);
        while let Some(f) = stack.pop() {
            match f.node() {
                Node::Product(xs) => stack.extend(xs.iter().cloned()),
                Node::Const(c) => coefficient = coefficient.mul(*c),
                _ => powers.push(base_and_exponent(&f)),
            }
        }
        if coefficient.is_zero() {
            return Expr::zero();
        }
        powers.sort_by(|a, b| a.0.cmp(&b.0));

        let mut again = false;
        let mut iter = powers.into_iter().peekable();
        while let Some((base, mut exp)) = iter.next() {
            let mut unmerged = Vec::new();
            while let Some((next, e2)) = iter.peek() {
                if *next != base {
                    break;
                }
                match exp.checked_add(e2) {
                    Some(s) => exp = s,
                    None => unmerged.push(*e2),
                }
                iter.next();
            }
            for e in std::iter::once(exp).chain(unmerged) {
                if e.is_zero() {
                    continue;
                }
                let f = make_pow(base.clone(), e);
                match f.node() {
                    Node::Const(c) => coefficient = coefficient.mul(*c),
                    Node::Product(_) => {
                        again = true;
                        pending.push(f);
                    }
                    _ => merged.push(f),
                }
            }
        }
        if !again {
            break;
        }
    }
    // leftovers from an exhausted pass budget are kept as-is
    merged.append(&mut pending);

    if coefficient.is_zero() {
        return Expr::zero();
    }
    merged.sort();
    if merged.is_empty() {
        return Expr::num(coefficient);
    }
    if merged.len() == 1 {
        if coefficient.is_one() {
            return merged.pop().unwrap();
        }
        if let Node::Sum(terms) = merged[0].node() {
            let c = Expr::num(coefficient);
            return make_sum(terms.iter().map(|t| make_product(vec![c.clone(), t.clone()])).collect());
        }
    }
    if !coefficient.is_one() {
        merged.insert(0, Expr::num(coefficient));
    }
    Expr::raw(Node::Product(merged))
}

pub(super) fn make_pow(base: Expr, exp: Rational64) -> Expr {
    if exp.is_zero() {
        return Expr::one();
    }
    if exp.is_one() {
        return base;
    }
    let int_exp = rational_to_i64(&exp);
    match base.node() {
        Node::Const(c) => {
            if c.is_one() {
                return Expr::one();
            }
            if c.is_zero() {
                if exp > Rational64::zero() {
                    return Expr::zero();
                }
                // every negative power of zero is the same pole
                return Expr::raw(Node::Pow(base, -Rational64::one()));
            }
            if let Some(n) = int_exp {
                if let Some(v) = c.powi(n) {
                    return Expr::num(v);
                }
            } else if *exp.denom() == 2 {
                if let Some(root) = c.exact_sqrt() {
                    if let Some(v) = root.powi(*exp.numer()) {
                        return Expr::num(v);
                    }
                }
            }
        }
        Node::Pow(inner, e0) => {
            if int_exp.is_some() {
                if let Some(e) = e0.checked_mul(&exp) {
                    return make_pow(inner.clone(), e);
                }
            }
        }
        Node::Product(fs) if int_exp.is_some() => {
            return make_product(fs.iter().map(|f| make_pow(f.clone(), exp)).collect());
        }
        _ => {}
    }
    Expr::raw(Node::Pow(base, exp))
}

pub(super) fn make_sqrt(arg: Expr) -> Expr {
    if let Some(c) = arg.as_const() {
        if let Some(r) = c.exact_sqrt() {
            return Expr::num(r);
        }
    }
    Expr::raw(Node::Sqrt(arg))
}

pub(super) fn make_func(f: Func, arg: Expr) -> Expr {
    if let Some(c) = arg.as_const() {
        match f {
            Func::Sin if c.is_zero() => return Expr::zero(),
            Func::Cos | Func::Exp if c.is_zero() => return Expr::one(),
            Func::Log if c.is_one() => return Expr::zero(),
            _ => {}
        }
    }
    Expr::raw(Node::Func(f, arg))
}

#[cfg(test)]
mod tests {
    use super::super::VarId;
    use super::*;

    fn x() -> Expr {
        Expr::var(&VarId::state("x", 0))
    }

    fn y() -> Expr {
        Expr::var(&VarId::state("y", 1))
    }

    #[test]
    fn like_terms_collect() {
        let e = Expr::constant(2) * x() + Expr::constant(3) * x();
        assert_eq!(e, Expr::constant(5) * x());
        assert!((x() - x()).is_zero());
        assert!((x() + y() - (x() + y())).is_zero());
    }

    #[test]
    fn powers_merge() {
        assert_eq!(x() * x().powi(2), x().powi(3));
        assert_eq!(x() / x(), Expr::one());
        assert_eq!((x() * y()).powi(2), x().powi(2) * y().powi(2));
        assert_eq!(x().powi(2).powi(3), x().powi(6));
    }

    #[test]
    fn constants_fold() {
        assert_eq!(
            Expr::constant(2) * Expr::constant(3) + Expr::constant(1),
            Expr::constant(7)
        );
        assert_eq!(Expr::constant(4).sqrt(), Expr::constant(2));
        assert_eq!(Expr::rational(9, 4).pow(Rational64::new(1, 2)), Expr::rational(3, 2));
        assert!(Expr::zero().apply(Func::Sin).is_zero());
        assert_eq!(Expr::zero().apply(Func::Exp), Expr::one());
        assert!(Expr::one().apply(Func::Log).is_zero());
        assert!(matches!(Expr::constant(2).sqrt().node(), Node::Sqrt(_)));
    }

    #[test]
    fn zero_and_one_identities() {
        assert!((Expr::zero() * x()).is_zero());
        assert_eq!(Expr::one() * x(), x());
        assert_eq!(Expr::zero() + x(), x());
        assert_eq!(x().powi(0), Expr::one());
    }

    #[test]
    fn negative_powers_of_zero_collapse() {
        let pole = Expr::zero().powi(-1);
        assert_eq!(Expr::zero().powi(-2), pole);
        assert_eq!(pole.powi(3), pole);
        assert_eq!(Expr::zero().pow(Rational64::new(-1, 2)), pole);
    }

    #[test]
    fn negation_distributes() {
        let e = -(x() + y());
        assert_eq!(e, -x() - y());
        assert!(matches!(e.node(), Node::Sum(_)));
    }

    #[test]
    fn simplify_is_idempotent_on_canonical_trees() {
        let e = (x() + Expr::constant(2)).powi(2) * y().sqrt() - x() / y();
        assert_eq!(e.simplify(), e);
    }

    #[test]
    fn raw_trees_canonicalize() {
        let raw = Expr::raw(Node::Sum(vec![
            Expr::raw(Node::Product(vec![x(), Expr::constant(0)])),
            Expr::raw(Node::Sum(vec![y(), x()])),
        ]));
        assert_eq!(raw.simplify(), x() + y());
    }
}
