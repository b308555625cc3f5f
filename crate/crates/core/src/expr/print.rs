//! Printing in the DSL syntax. The output parses back to the same canonical
//! expression, so `print(parse(print(e))) == print(e)` for exact trees.

use std::fmt::{self, Write};

use num_rational::Rational64;
use num_traits::{One, Signed};

use super::{Expr, Node, Num};

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&render(self))
    }
}

fn render(e: &Expr) -> String {
    match e.node() {
        Node::Sum(terms) => {
            // constant term last: `2*q + 4`
            let ordered = terms
                .iter()
                .filter(|t| !t.is_const())
                .chain(terms.iter().filter(|t| t.is_const()));
            let mut out = String::new();
            for (i, t) in ordered.enumerate() {
                let (neg, body) = signed_term(t);
                match (i, neg) {
                    (0, true) => {
                        out.push('-');
                        out.push_str(&body);
                    }
                    (0, false) => out.push_str(&body),
                    (_, true) => {
                        out.push_str(" - ");
                        out.push_str(&body);
                    }
                    (_, false) => {
                        out.push_str(" + ");
                        out.push_str(&body);
                    }
                }
            }
            out
        }
        _ => {
            let (neg, body) = signed_term(e);
            if neg {
                format!("-{body}")
            } else {
                body
            }
        }
    }
}

/// Split a non-sum term into its sign and the printed magnitude.
fn signed_term(e: &Expr) -> (bool, String) {
    match e.node() {
        Node::Const(n) => (n.is_negative(), n.abs().to_string()),
        Node::Product(fs) => match fs[0].as_const() {
            Some(c) => (c.is_negative(), monomial(c.abs(), &fs[1..])),
            None => (false, monomial(Num::ONE, fs)),
        },
        _ => (false, monomial(Num::ONE, std::slice::from_ref(e))),
    }
}

fn monomial(coefficient: Num, factors: &[Expr]) -> String {
    let mut numer: Vec<String> = Vec::new();
    let mut denom: Vec<String> = Vec::new();

    match coefficient {
        Num::Rat(r) => {
            if !r.numer().is_one() || factors.iter().all(is_reciprocal) {
                numer.push(r.numer().to_string());
            }
            if !r.denom().is_one() {
                denom.push(r.denom().to_string());
            }
        }
        Num::Float(_) => numer.push(coefficient.to_string()),
    }
    for f in factors {
        match f.node() {
            Node::Pow(b, e) if e.is_negative() => denom.push(power(b, &-*e)),
            _ => numer.push(factor(f)),
        }
    }
    if numer.is_empty() {
        numer.push("1".into());
    }
    let mut out = numer.join("*");
    // `c*(a + b)` would parse back distributed, so `1/(2*(a + b))` is
    // written `1/2/(a + b)`
    let lone_sum = factors.iter().filter(|f| is_reciprocal(f)).count() == 1
        && factors.iter().any(
            |f| matches!(f.node(), Node::Pow(b, e) if *e == -Rational64::one() && matches!(b.node(), Node::Sum(_))),
        );
    if lone_sum && denom.len() == 2 {
        let _ = write!(out, "/{}/{}", denom[0], denom[1]);
        return out;
    }
    match denom.len() {
        0 => {}
        1 => {
            out.push('/');
            out.push_str(&denom[0]);
        }
        _ => {
            let _ = write!(out, "/({})", denom.join("*"));
        }
    }
    out
}

fn is_reciprocal(f: &Expr) -> bool {
    matches!(f.node(), Node::Pow(_, e) if e.is_negative())
}

fn factor(f: &Expr) -> String {
    match f.node() {
        Node::Pow(b, e) => power(b, e),
        _ => atom(f),
    }
}

fn power(base: &Expr, exp: &Rational64) -> String {
    if exp.is_one() {
        return atom(base);
    }
    let b = match base.node() {
        Node::Const(n) if n.is_exact() && !n.is_negative() && n.as_rational().is_some_and(|r| r.is_integer()) => {
            n.to_string()
        }
        Node::Var(_) | Node::Sqrt(_) | Node::Func(..) => atom(base),
        _ => format!("({})", render(base)),
    };
    if exp.is_integer() && !exp.is_negative() {
        format!("{b}^{}", exp.numer())
    } else if exp.is_integer() {
        format!("{b}^({})", exp.numer())
    } else {
        format!("{b}^({}/{})", exp.numer(), exp.denom())
    }
}

/// Something that can stand as an operand of `*` without parentheses.
fn atom(e: &Expr) -> String {
    match e.node() {
        Node::Var(v) => v.name().to_string(),
        Node::Sqrt(a) => format!("sqrt({})", render(a)),
        Node::Func(f, a) => format!("{}({})", f.name(), render(a)),
        Node::Const(n) if !n.is_negative() && n.as_rational().is_some_and(|r| r.is_integer()) => n.to_string(),
        Node::Const(n) if !n.is_negative() && !n.is_exact() => n.to_string(),
        Node::Pow(b, e) if !e.is_negative() => power(b, e),
        _ => format!("({})", render(e)),
    }
}
