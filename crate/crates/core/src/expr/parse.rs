//! Recursive-descent parser for the expression DSL.
//!
//! ```text
//! expr     := term (("+" | "-") term)*
//! term     := "-" term | unary (("*" | "/") unary)*
//! unary    := "-" unary | factor
//! factor   := base ("^" exponent)?
//! base     := number | ident | "(" expr ")" | func "(" expr ")"
//! func     := "sqrt" | "sin" | "cos" | "exp" | "log"
//! exponent := "-"? integer | "(" "-"? integer ("/" integer)? ")"
//! ```
//!
//! Unary minus binds looser than `^`, so `-p^2` is `-(p^2)`, and a leading
//! minus covers the whole product: `-a*b` is `-(a*b)`.

use num_rational::Rational64;
use thiserror::Error;

use super::num::{parse_decimal, Num};
use super::{Expr, Func, Node, VarId};

/// Deepest nesting of parentheses/unary minus accepted.
const MAX_DEPTH: usize = 200;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParseError {
    #[error("{line}:{col}: syntax error: {message}")]
    Syntax { line: usize, col: usize, message: String },
    #[error("{line}:{col}: undeclared identifier `{name}`")]
    Undeclared { line: usize, col: usize, name: String },
    #[error("{line}:{col}: malformed number `{text}`")]
    MalformedNumber { line: usize, col: usize, text: String },
}

impl ParseError {
    pub fn position(&self) -> (usize, usize) {
        match self {
            ParseError::Syntax { line, col, .. }
            | ParseError::Undeclared { line, col, .. }
            | ParseError::MalformedNumber { line, col, .. } => (*line, *col),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Number(String),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    End,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Number(s) => format!("number `{s}`"),
            Tok::Ident(s) => format!("identifier `{s}`"),
            Tok::Plus => "`+`".into(),
            Tok::Minus => "`-`".into(),
            Tok::Star => "`*`".into(),
            Tok::Slash => "`/`".into(),
            Tok::Caret => "`^`".into(),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::End => "end of input".into(),
        }
    }
}

#[derive(Clone, Debug)]
struct Token {
    tok: Tok,
    line: usize,
    col: usize,
}

fn lex(text: &str) -> Result<Vec<Token>, ParseError> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let (mut line, mut col) = (1usize, 1usize);
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let (tl, tc) = (line, col);
        let simple = match c {
            '+' => Some(Tok::Plus),
            '-' => Some(Tok::Minus),
            '*' => Some(Tok::Star),
            '/' => Some(Tok::Slash),
            '^' => Some(Tok::Caret),
            '(' => Some(Tok::LParen),
            ')' => Some(Tok::RParen),
            _ => None,
        };
        if let Some(tok) = simple {
            out.push(Token { tok, line: tl, col: tc });
            i += 1;
            col += 1;
            continue;
        }
        if c == '\n' {
            line += 1;
            col = 1;
            i += 1;
            continue;
        }
        if c.is_whitespace() {
            i += 1;
            col += 1;
            continue;
        }
        let start = i;
        if c.is_ascii_digit() || c == '.' {
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                i += 1;
                if i < chars.len() && (chars[i] == '+' || chars[i] == '-') {
                    i += 1;
                }
                while i < chars.len() && chars[i].is_ascii_digit() {
                    i += 1;
                }
            }
            // glued letters such as `2x` belong to the malformed literal
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_' || chars[i] == '.') {
                i += 1;
            }
            let text: String = chars[start..i].iter().collect();
            col += i - start;
            out.push(Token {
                tok: Tok::Number(text),
                line: tl,
                col: tc,
            });
            continue;
        }
        if c.is_ascii_alphabetic() || c == '_' {
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            let text: String = chars[start..i].iter().collect();
            col += i - start;
            out.push(Token {
                tok: Tok::Ident(text),
                line: tl,
                col: tc,
            });
            continue;
        }
        return Err(ParseError::Syntax {
            line: tl,
            col: tc,
            message: format!("unexpected character `{c}`"),
        });
    }
    out.push(Token {
        tok: Tok::End,
        line,
        col,
    });
    Ok(out)
}

struct Parser<'a> {
    tokens: Vec<Token>,
    pos: usize,
    vars: &'a [VarId],
    depth: usize,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> &Token {
        &self.tokens[self.pos]
    }

    fn bump(&mut self) -> Token {
        let t = self.tokens[self.pos].clone();
        if self.pos + 1 < self.tokens.len() {
            self.pos += 1;
        }
        t
    }

    fn error_at(&self, t: &Token, message: impl Into<String>) -> ParseError {
        ParseError::Syntax {
            line: t.line,
            col: t.col,
            message: message.into(),
        }
    }

    fn expect(&mut self, want: Tok) -> Result<Token, ParseError> {
        let t = self.bump();
        if t.tok == want {
            Ok(t)
        } else {
            Err(self.error_at(&t, format!("expected {}, found {}", want.describe(), t.tok.describe())))
        }
    }

    fn enter(&mut self) -> Result<(), ParseError> {
        self.depth += 1;
        if self.depth > MAX_DEPTH {
            let t = self.peek().clone();
            return Err(self.error_at(&t, "expression nested too deeply"));
        }
        Ok(())
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut terms = vec![self.term()?];
        loop {
            match self.peek().tok {
                Tok::Plus => {
                    self.bump();
                    terms.push(self.term()?);
                }
                Tok::Minus => {
                    self.bump();
                    let t = self.term()?;
                    terms.push(negate(t));
                }
                _ => break,
            }
        }
        Ok(if terms.len() == 1 {
            terms.pop().unwrap()
        } else {
            Expr::raw(Node::Sum(terms))
        })
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        // a leading minus negates the whole product: `-a*b` is `-(a*b)`
        if self.peek().tok == Tok::Minus {
            self.bump();
            self.enter()?;
            let inner = self.term()?;
            self.depth -= 1;
            return Ok(negate(inner));
        }
        let mut factors = vec![self.unary()?];
        loop {
            match self.peek().tok {
                Tok::Star => {
                    self.bump();
                    factors.push(self.unary()?);
                }
                Tok::Slash => {
                    self.bump();
                    let d = self.unary()?;
                    factors.push(Expr::raw(Node::Pow(d, Rational64::from_integer(-1))));
                }
                _ => break,
            }
        }
        Ok(if factors.len() == 1 {
            factors.pop().unwrap()
        } else {
            Expr::raw(Node::Product(factors))
        })
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if self.peek().tok == Tok::Minus {
            self.bump();
            self.enter()?;
            let inner = self.unary()?;
            self.depth -= 1;
            return Ok(negate(inner));
        }
        self.factor()
    }

    fn factor(&mut self) -> Result<Expr, ParseError> {
        let base = self.base()?;
        if self.peek().tok == Tok::Caret {
            self.bump();
            let exp = self.exponent()?;
            return Ok(Expr::raw(Node::Pow(base, exp)));
        }
        Ok(base)
    }

    fn integer(&mut self, negative: bool) -> Result<i64, ParseError> {
        let t = self.bump();
        match &t.tok {
            Tok::Number(s) if s.bytes().all(|b| b.is_ascii_digit()) => {
                let signed = if negative { format!("-{s}") } else { s.clone() };
                signed.parse::<i64>().map_err(|_| ParseError::MalformedNumber {
                    line: t.line,
                    col: t.col,
                    text: s.clone(),
                })
            }
            Tok::Number(s) if parse_decimal(s).is_none() => Err(ParseError::MalformedNumber {
                line: t.line,
                col: t.col,
                text: s.clone(),
            }),
            other => Err(self.error_at(&t, format!("expected an integer exponent, found {}", other.describe()))),
        }
    }

    fn exponent(&mut self) -> Result<Rational64, ParseError> {
        if self.peek().tok == Tok::LParen {
            self.bump();
            let negative = self.peek().tok == Tok::Minus;
            if negative {
                self.bump();
            }
            let n = self.integer(negative)?;
            let d = if self.peek().tok == Tok::Slash {
                self.bump();
                let t = self.peek().clone();
                let d = self.integer(false)?;
                if d == 0 {
                    return Err(self.error_at(&t, "zero denominator in exponent"));
                }
                d
            } else {
                1
            };
            self.expect(Tok::RParen)?;
            return Ok(Rational64::new(n, d));
        }
        let negative = self.peek().tok == Tok::Minus;
        if negative {
            self.bump();
        }
        Ok(Rational64::from_integer(self.integer(negative)?))
    }

    fn base(&mut self) -> Result<Expr, ParseError> {
        let t = self.bump();
        match t.tok {
            Tok::Number(ref s) => match parse_decimal(s) {
                Some(n) => Ok(Expr::num(n)),
                None => Err(ParseError::MalformedNumber {
                    line: t.line,
                    col: t.col,
                    text: s.clone(),
                }),
            },
            Tok::Ident(ref name) => {
                if name == "sqrt" || Func::from_name(name).is_some() {
                    self.expect(Tok::LParen)?;
                    self.enter()?;
                    let arg = self.expr()?;
                    self.depth -= 1;
                    self.expect(Tok::RParen)?;
                    return Ok(match Func::from_name(name) {
                        Some(f) => Expr::raw(Node::Func(f, arg)),
                        None => Expr::raw(Node::Sqrt(arg)),
                    });
                }
                match self.vars.iter().find(|v| v.name() == name) {
                    Some(v) => Ok(Expr::var(v)),
                    None => Err(ParseError::Undeclared {
                        line: t.line,
                        col: t.col,
                        name: name.clone(),
                    }),
                }
            }
            Tok::LParen => {
                self.enter()?;
                let inner = self.expr()?;
                self.depth -= 1;
                self.expect(Tok::RParen)?;
                Ok(inner)
            }
            ref other => Err(self.error_at(&t, format!("expected an operand, found {}", other.describe()))),
        }
    }
}

fn negate(e: Expr) -> Expr {
    Expr::raw(Node::Product(vec![Expr::num(Num::int(-1)), e]))
}

/// Parse without canonicalizing: the tree mirrors the source text, with
/// subtraction, division and negation spelled out as `+`, `^-1` and `-1*`.
pub fn parse_raw(text: &str, declared: &[VarId]) -> Result<Expr, ParseError> {
    let tokens = lex(text)?;
    let mut p = Parser {
        tokens,
        pos: 0,
        vars: declared,
        depth: 0,
    };
    let e = p.expr()?;
    let t = p.peek().clone();
    if t.tok != Tok::End {
        return Err(p.error_at(&t, format!("unexpected {}", t.tok.describe())));
    }
    Ok(e)
}

/// Parse into canonical form. Every identifier must be one of `declared`.
/// Constant folding that overflows `f64` is rejected, since the result would
/// have no spelling in the grammar.
pub fn parse_expr(text: &str, declared: &[VarId]) -> Result<Expr, ParseError> {
    let e = parse_raw(text, declared)?.simplify();
    if has_nonfinite_const(&e) {
        return Err(ParseError::Syntax {
            line: 1,
            col: 1,
            message: "constant folding overflows".into(),
        });
    }
    Ok(e)
}

fn has_nonfinite_const(e: &Expr) -> bool {
    match e.node() {
        Node::Const(c) => !c.to_f64().is_finite(),
        Node::Var(_) => false,
        Node::Sum(xs) | Node::Product(xs) => xs.iter().any(has_nonfinite_const),
        Node::Pow(b, _) | Node::Sqrt(b) | Node::Func(_, b) => has_nonfinite_const(b),
    }
}
