//! Numeric constants: exact rationals with a floating-point fallback on overflow.

use std::cmp::Ordering;
use std::fmt;

use num_rational::Rational64;
use num_traits::{CheckedAdd, CheckedDiv, CheckedMul, One, Signed, ToPrimitive, Zero};

/// A constant leaf of an expression tree.
///
/// Arithmetic stays exact while the result fits in a 64-bit rational and
/// silently degrades to `f64` otherwise. A float that is exactly representable
/// as a 64-bit rational is always stored as a rational, so there is one
/// representation per value.
#[derive(Clone, Copy, Debug)]
pub enum Num {
    Rat(Rational64),
    Float(f64),
}

impl Num {
    pub const ZERO: Num = Num::Rat(Rational64::new_raw(0, 1));
    pub const ONE: Num = Num::Rat(Rational64::new_raw(1, 1));

    pub fn int(v: i64) -> Num {
        Num::Rat(Rational64::from_integer(v))
    }

    pub fn ratio(n: i64, d: i64) -> Num {
        Num::Rat(Rational64::new(n, d))
    }

    pub fn float(v: f64) -> Num {
        match rational_from_f64(v) {
            Some(r) => Num::Rat(r),
            None => Num::Float(v),
        }
    }

    pub fn to_f64(self) -> f64 {
        match self {
            Num::Rat(r) => *r.numer() as f64 / *r.denom() as f64,
            Num::Float(f) => f,
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            Num::Rat(r) => r.is_zero(),
            Num::Float(f) => *f == 0.0,
        }
    }

    pub fn is_one(&self) -> bool {
        match self {
            Num::Rat(r) => r.is_one(),
            Num::Float(f) => *f == 1.0,
        }
    }

    pub fn is_negative(&self) -> bool {
        match self {
            Num::Rat(r) => r.is_negative(),
            Num::Float(f) => *f < 0.0,
        }
    }

    pub fn is_exact(&self) -> bool {
        matches!(self, Num::Rat(_))
    }

    pub fn as_rational(&self) -> Option<Rational64> {
        match self {
            Num::Rat(r) => Some(*r),
            Num::Float(_) => None,
        }
    }

    pub fn neg(self) -> Num {
        match self {
            Num::Rat(r) => match r.numer().checked_neg() {
                Some(n) => Num::Rat(Rational64::new_raw(n, *r.denom())),
                None => Num::float(-self.to_f64()),
            },
            Num::Float(f) => Num::float(-f),
        }
    }

    pub fn abs(self) -> Num {
        if self.is_negative() {
            self.neg()
        } else {
            self
        }
    }

    pub fn add(self, other: Num) -> Num {
        if let (Num::Rat(a), Num::Rat(b)) = (self, other) {
            if let Some(r) = a.checked_add(&b) {
                return Num::Rat(r);
            }
        }
        Num::float(self.to_f64() + other.to_f64())
    }

    pub fn mul(self, other: Num) -> Num {
        if let (Num::Rat(a), Num::Rat(b)) = (self, other) {
            if let Some(r) = a.checked_mul(&b) {
                return Num::Rat(r);
            }
        }
        Num::float(self.to_f64() * other.to_f64())
    }

    /// Reciprocal; `None` for zero.
    pub fn recip(self) -> Option<Num> {
        if self.is_zero() {
            return None;
        }
        Some(match self {
            Num::Rat(r) => match Rational64::one().checked_div(&r) {
                Some(q) => Num::Rat(q),
                None => Num::float(1.0 / self.to_f64()),
            },
            Num::Float(f) => Num::float(1.0 / f),
        })
    }

    /// Integer power. `None` when the base is zero and the exponent negative.
    pub fn powi(self, exp: i64) -> Option<Num> {
        if exp < 0 {
            return self.recip()?.powi(exp.checked_neg()?);
        }
        let mut acc = Num::ONE;
        let mut base = self;
        let mut e = exp as u64;
        // square-and-multiply; once a float appears the remaining work is cheap
        while e > 0 {
            if e & 1 == 1 {
                acc = acc.mul(base);
            }
            e >>= 1;
            if e > 0 {
                base = base.mul(base);
            }
            if let Num::Float(f) = acc {
                if !f.is_finite() || f == 0.0 {
                    return Some(acc);
                }
            }
        }
        Some(acc)
    }

    /// Exact square root of a non-negative rational whose numerator and
    /// denominator are both perfect squares.
    pub fn exact_sqrt(self) -> Option<Num> {
        let r = self.as_rational()?;
        if r.is_negative() {
            return None;
        }
        let n = isqrt(*r.numer())?;
        let d = isqrt(*r.denom())?;
        Some(Num::Rat(Rational64::new(n, d)))
    }

    fn kind_rank(&self) -> u8 {
        match self {
            Num::Rat(_) => 0,
            Num::Float(_) => 1,
        }
    }
}

fn isqrt(v: i64) -> Option<i64> {
    if v < 0 {
        return None;
    }
    let mut r = (v as f64).sqrt() as i64;
    while r > 0 && r.checked_mul(r).is_none_or(|sq| sq > v) {
        r -= 1;
    }
    while (r + 1).checked_mul(r + 1).is_some_and(|sq| sq <= v) {
        r += 1;
    }
    (r * r == v).then_some(r)
}

/// Exact conversion of a finite double into a 64-bit rational, if it fits.
fn rational_from_f64(v: f64) -> Option<Rational64> {
    if !v.is_finite() {
        return None;
    }
    if v == 0.0 {
        return Some(Rational64::zero());
    }
    let bits = v.to_bits();
    let sign: i64 = if bits >> 63 == 0 { 1 } else { -1 };
    let exp_bits = ((bits >> 52) & 0x7ff) as i64;
    let frac = bits & ((1u64 << 52) - 1);
    let (mut mant, mut exp) = if exp_bits == 0 {
        (frac as i64, -1074)
    } else {
        ((frac | (1u64 << 52)) as i64, exp_bits - 1075)
    };
    while mant & 1 == 0 && exp < 0 {
        mant >>= 1;
        exp += 1;
    }
    if exp >= 0 {
        let scaled = mant.checked_mul(1i64.checked_shl(exp as u32).filter(|_| exp < 63)?)?;
        Some(Rational64::from_integer(sign * scaled))
    } else {
        if -exp >= 63 {
            return None;
        }
        Some(Rational64::new(sign * mant, 1i64 << (-exp)))
    }
}

/// Parse a decimal literal (`12`, `1.5`, `2e-3`) exactly when possible.
pub fn parse_decimal(text: &str) -> Option<Num> {
    let (mantissa, exponent) = match text.find(['e', 'E']) {
        Some(i) => (&text[..i], Some(&text[i + 1..])),
        None => (text, None),
    };
    let (int_part, frac_part) = match mantissa.find('.') {
        Some(i) => (&mantissa[..i], &mantissa[i + 1..]),
        None => (mantissa, ""),
    };
    let all_digits = |s: &str| s.bytes().all(|b| b.is_ascii_digit());
    if int_part.is_empty() && frac_part.is_empty() {
        return None;
    }
    if !all_digits(int_part) || !all_digits(frac_part) {
        return None;
    }
    let exp10: i64 = match exponent {
        Some(e) => {
            let digits = e.strip_prefix(['+', '-']).unwrap_or(e);
            if digits.is_empty() || !all_digits(digits) {
                return None;
            }
            // absurd exponents saturate instead of failing
            e.parse::<i64>()
                .unwrap_or(if e.starts_with('-') { -100_000 } else { 100_000 })
        }
        None => 0,
    };
    let fallback = || text.parse::<f64>().ok().map(Num::float);
    let digits: String = int_part.chars().chain(frac_part.chars()).collect();
    let Ok(mant) = digits.parse::<i64>() else {
        return fallback();
    };
    let scale = exp10 - frac_part.len() as i64;
    if scale.abs() > 18 {
        return fallback();
    }
    let pow = 10i64.pow(scale.unsigned_abs() as u32);
    let value = if scale >= 0 {
        mant.checked_mul(pow).map(Rational64::from_integer)
    } else {
        Some(Rational64::new(mant, pow))
    };
    match value {
        Some(r) => Some(Num::Rat(r)),
        None => fallback(),
    }
}

impl PartialEq for Num {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Num {}

impl PartialOrd for Num {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Num {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (Num::Rat(a), Num::Rat(b)) => a.cmp(b),
            (Num::Float(a), Num::Float(b)) => a.total_cmp(b),
            _ => self.kind_rank().cmp(&other.kind_rank()),
        }
    }
}

impl std::hash::Hash for Num {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        match self {
            Num::Rat(r) => {
                0u8.hash(state);
                r.numer().hash(state);
                r.denom().hash(state);
            }
            Num::Float(f) => {
                1u8.hash(state);
                f.to_bits().hash(state);
            }
        }
    }
}

impl fmt::Display for Num {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Num::Rat(r) if r.is_integer() => write!(f, "{}", r.numer()),
            Num::Rat(r) => write!(f, "{}/{}", r.numer(), r.denom()),
            Num::Float(v) => write!(f, "{v:e}"),
        }
    }
}

impl From<i64> for Num {
    fn from(v: i64) -> Self {
        Num::int(v)
    }
}

pub(crate) fn rational_to_i64(r: &Rational64) -> Option<i64> {
    r.is_integer().then(|| r.to_integer())
}

pub(crate) fn rational_to_f64(r: &Rational64) -> f64 {
    r.to_f64().unwrap_or(f64::NAN)
}
