//! Numeric tower for subdivision arithmetic.
//!
//! Three representations cover every scheme in the crate:
//! exact rationals for the rational-arithmetic schemes, quadratic surds
//! `a + b*sqrt(d)` so Gauss-map iteration of numbers like `sqrt(2)-1`
//! stays exact, and a double-double float (`Hp`, roughly 106 mantissa
//! bits) for schemes whose cell geometry involves an algebraic
//! irrational base.

use std::cmp::Ordering;
use std::fmt;

use num::bigint::BigInt;
use num::rational::BigRational;
use num::{FromPrimitive, One, Signed, ToPrimitive, Zero};
use twofloat::TwoFloat;

use crate::error::{Error, Result};

/// Double-double wrapper. Arithmetic carries ~106 bits of mantissa,
/// comfortably above the 80 bits the irrational-base schemes need.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct Hp(TwoFloat);

impl Hp {
    pub const ZERO: Hp = Hp(TwoFloat::from_f64(0.0));
    pub const ONE: Hp = Hp(TwoFloat::from_f64(1.0));

    pub fn from_f64(x: f64) -> Hp {
        Hp(TwoFloat::from(x))
    }

    pub fn from_u64(x: u64) -> Hp {
        // Split so values above 2^53 stay exact.
        let hi = (x >> 32) as f64 * 4294967296.0;
        let lo = (x & 0xffff_ffff) as f64;
        Hp(TwoFloat::from(hi) + TwoFloat::from(lo))
    }

    pub fn from_rational(r: &BigRational) -> Hp {
        let hi = r.to_f64().unwrap_or(f64::NAN);
        if !hi.is_finite() {
            return Hp(TwoFloat::from(hi));
        }
        let rest = r - BigRational::from_float(hi).expect("finite float");
        let lo = rest.to_f64().unwrap_or(0.0);
        Hp(TwoFloat::from(hi) + TwoFloat::from(lo))
    }

    pub fn to_f64(self) -> f64 {
        f64::from(self.0)
    }

    pub fn sqrt(self) -> Hp {
        Hp(self.0.sqrt())
    }

    pub fn abs(self) -> Hp {
        Hp(self.0.abs())
    }

    pub fn floor(self) -> Hp {
        Hp(self.0.floor())
    }

    pub fn powi(self, n: i32) -> Hp {
        Hp(self.0.powi(n))
    }

    /// Reciprocal via one Newton step on the f64 seed. twofloat's own
    /// double/double division drops its residual term whenever
    /// `rhs.hi * (1/rhs.hi)` rounds to exactly 1, so it is avoided.
    pub fn recip(self) -> Hp {
        let seed = Hp::from_f64(self.0.hi().recip());
        let e = Hp::from_f64(2.0) - self * seed;
        seed * e
    }

    pub fn is_zero(self) -> bool {
        self.0 == TwoFloat::from(0.0)
    }
}

macro_rules! hp_binop {
    ($trait:ident, $method:ident) => {
        impl std::ops::$trait for Hp {
            type Output = Hp;
            fn $method(self, rhs: Hp) -> Hp {
                Hp(std::ops::$trait::$method(self.0, rhs.0))
            }
        }
    };
}
hp_binop!(Add, add);
hp_binop!(Sub, sub);
hp_binop!(Mul, mul);

impl std::ops::Div for Hp {
    type Output = Hp;
    fn div(self, rhs: Hp) -> Hp {
        self * rhs.recip()
    }
}

impl std::ops::Neg for Hp {
    type Output = Hp;
    fn neg(self) -> Hp {
        Hp(-self.0)
    }
}

impl fmt::Display for Hp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.16e}", self.to_f64())
    }
}

/// `a + b*sqrt(d)` with rational `a`, `b` and non-square `d >= 2`.
/// Kept normalized: `b != 0` (otherwise the value collapses to `Rat`).
#[derive(Clone, Debug, PartialEq)]
pub struct Quad {
    pub a: BigRational,
    pub b: BigRational,
    pub d: u64,
}

impl Quad {
    fn to_hp(&self) -> Hp {
        Hp::from_rational(&self.a) + Hp::from_rational(&self.b) * Hp::from_u64(self.d).sqrt()
    }

    /// Sign of `a + b*sqrt(d)`, computed exactly.
    fn sign(&self) -> Ordering {
        let sa = rat_sign(&self.a);
        let sb = rat_sign(&self.b);
        if sa == sb || sa == Ordering::Equal {
            return sb;
        }
        if sb == Ordering::Equal {
            return sa;
        }
        // a and b have opposite signs: compare a^2 against b^2*d.
        let a2 = &self.a * &self.a;
        let b2d = &self.b * &self.b * BigRational::from_u64(self.d).expect("u64 fits");
        match a2.cmp(&b2d) {
            Ordering::Greater => sa,
            Ordering::Less => sb,
            Ordering::Equal => Ordering::Equal,
        }
    }
}

fn rat_sign(r: &BigRational) -> Ordering {
    if r.is_zero() {
        Ordering::Equal
    } else if r.is_positive() {
        Ordering::Greater
    } else {
        Ordering::Less
    }
}

/// Strip square factors from `d`, returning `(c, d')` with `d = c^2 d'`.
fn extract_square(d: u64) -> (u64, u64) {
    let mut c = 1u64;
    let mut rest = d;
    let mut p = 2u64;
    while p * p <= rest {
        while rest % (p * p) == 0 {
            rest /= p * p;
            c *= p;
        }
        p += 1;
    }
    (c, rest)
}

/// Exact-or-high-precision number used for cell endpoints, lengths,
/// digits arithmetic, and probabilities.
#[derive(Clone, Debug)]
pub enum Real {
    Rat(BigRational),
    Quad(Quad),
    Fp(Hp),
}

impl Real {
    pub fn zero() -> Real {
        Real::Rat(BigRational::zero())
    }

    pub fn one() -> Real {
        Real::Rat(BigRational::one())
    }

    pub fn from_u64(x: u64) -> Real {
        Real::Rat(BigRational::from_u64(x).expect("u64 fits"))
    }

    pub fn from_i64(x: i64) -> Real {
        Real::Rat(BigRational::from_i64(x).expect("i64 fits"))
    }

    pub fn ratio(num: i64, den: i64) -> Real {
        Real::Rat(BigRational::new(
            BigInt::from_i64(num).expect("i64 fits"),
            BigInt::from_i64(den).expect("i64 fits"),
        ))
    }

    /// Exact conversion: every finite `f64` is a rational.
    pub fn from_f64(x: f64) -> Real {
        match BigRational::from_float(x) {
            Some(r) => Real::Rat(r),
            None => Real::Fp(Hp::from_f64(x)),
        }
    }

    pub fn from_hp(x: Hp) -> Real {
        Real::Fp(x)
    }

    /// `a + b*sqrt(d)`; collapses to `Rat` when the surd part vanishes.
    pub fn quad(a: BigRational, b: BigRational, d: u64) -> Real {
        let (c, d) = extract_square(d);
        let b = b * BigRational::from_u64(c).expect("u64 fits");
        if b.is_zero() || d <= 1 {
            let sqrt_part = if d == 1 {
                b
            } else {
                BigRational::zero()
            };
            Real::Rat(a + sqrt_part)
        } else {
            Real::Quad(Quad { a, b, d })
        }
    }

    pub fn is_exact(&self) -> bool {
        !matches!(self, Real::Fp(_))
    }

    pub fn is_zero(&self) -> bool {
        match self {
            Real::Rat(r) => r.is_zero(),
            Real::Quad(_) => false, // normalized quads are irrational
            Real::Fp(h) => h.is_zero(),
        }
    }

    pub fn to_f64(&self) -> f64 {
        match self {
            Real::Rat(r) => r.to_f64().unwrap_or(f64::NAN),
            Real::Quad(q) => q.to_hp().to_f64(),
            Real::Fp(h) => h.to_f64(),
        }
    }

    pub fn to_hp(&self) -> Hp {
        match self {
            Real::Rat(r) => Hp::from_rational(r),
            Real::Quad(q) => q.to_hp(),
            Real::Fp(h) => *h,
        }
    }

    pub fn as_rational(&self) -> Option<&BigRational> {
        match self {
            Real::Rat(r) => Some(r),
            _ => None,
        }
    }

    pub fn sign(&self) -> Ordering {
        match self {
            Real::Rat(r) => rat_sign(r),
            Real::Quad(q) => q.sign(),
            Real::Fp(h) => h
                .to_f64()
                .partial_cmp(&0.0)
                .unwrap_or(Ordering::Equal),
        }
    }

    pub fn cmp_real(&self, other: &Real) -> Ordering {
        (self.clone() - other.clone()).sign()
    }

    /// Exact floor for `Rat`/`Quad`; float floor for `Fp`.
    pub fn floor_i64(&self) -> Result<i64> {
        match self {
            Real::Rat(r) => r
                .floor()
                .to_integer()
                .to_i64()
                .ok_or_else(|| Error::InvalidParameter("floor exceeds i64".into())),
            Real::Quad(_) => {
                let guess = self.to_f64().floor() as i64;
                // The float estimate can be off by one near an integer;
                // settle it with exact comparisons.
                for k in [guess - 1, guess, guess + 1] {
                    let lo = Real::from_i64(k);
                    let hi = Real::from_i64(k + 1);
                    if self.cmp_real(&lo) != Ordering::Less
                        && self.cmp_real(&hi) == Ordering::Less
                    {
                        return Ok(k);
                    }
                }
                Err(Error::InvalidParameter("quad floor did not settle".into()))
            }
            Real::Fp(h) => Ok(h.floor().to_f64() as i64),
        }
    }

    pub fn recip(&self) -> Real {
        match self {
            Real::Rat(r) => Real::Rat(r.recip()),
            Real::Quad(q) => {
                let d = BigRational::from_u64(q.d).expect("u64 fits");
                let denom = &q.a * &q.a - &q.b * &q.b * d;
                Real::quad(&q.a / &denom, -(&q.b / &denom), q.d)
            }
            Real::Fp(h) => Real::Fp(h.recip()),
        }
    }

    pub fn abs(&self) -> Real {
        if self.sign() == Ordering::Less {
            -self.clone()
        } else {
            self.clone()
        }
    }

    pub fn min_real(self, other: Real) -> Real {
        if self.cmp_real(&other) == Ordering::Greater {
            other
        } else {
            self
        }
    }

    /// Parse `p/q`, integers, plain decimals, and surd forms such as
    /// `sqrt2-1` or `1/2*sqrt5+1/2`.
    pub fn parse(s: &str) -> Result<Real> {
        let s = s.trim();
        if let Some(pos) = s.find("sqrt") {
            let (coef_part, rest) = s.split_at(pos);
            let coef = if coef_part.is_empty() {
                BigRational::one()
            } else if coef_part == "-" {
                -BigRational::one()
            } else {
                let c = coef_part
                    .strip_suffix('*')
                    .unwrap_or(coef_part);
                parse_rational(c)?
            };
            let rest = &rest[4..];
            let split = rest
                .char_indices()
                .skip(1)
                .find(|(_, c)| *c == '+' || *c == '-')
                .map(|(i, _)| i);
            let (d_part, offset_part) = match split {
                Some(i) => (&rest[..i], &rest[i..]),
                None => (rest, ""),
            };
            let d: u64 = d_part
                .parse()
                .map_err(|_| Error::InvalidParameter(format!("bad surd radicand in {s:?}")))?;
            let offset = if offset_part.is_empty() {
                BigRational::zero()
            } else {
                parse_rational(offset_part)?
            };
            return Ok(Real::quad(offset, coef, d));
        }
        Ok(Real::Rat(parse_rational(s)?))
    }
}

fn parse_rational(s: &str) -> Result<BigRational> {
    let s = s.trim();
    let bad = || Error::InvalidParameter(format!("cannot parse number {s:?}"));
    if let Some((p, q)) = s.split_once('/') {
        let num: BigInt = p.trim().parse().map_err(|_| bad())?;
        let den: BigInt = q.trim().parse().map_err(|_| bad())?;
        if den.is_zero() {
            return Err(bad());
        }
        return Ok(BigRational::new(num, den));
    }
    if let Some((int_part, frac_part)) = s.split_once('.') {
        let neg = int_part.trim_start().starts_with('-');
        let int: BigInt = if int_part.is_empty() || int_part == "-" {
            BigInt::zero()
        } else {
            int_part.parse().map_err(|_| bad())?
        };
        if frac_part.is_empty() || !frac_part.bytes().all(|b| b.is_ascii_digit()) {
            return Err(bad());
        }
        let num: BigInt = frac_part.parse().map_err(|_| bad())?;
        let den = BigInt::from(10u32).pow(frac_part.len() as u32);
        let frac = BigRational::new(num, den);
        let int = BigRational::from_integer(int);
        return Ok(if neg { int - frac } else { int + frac });
    }
    let i: BigInt = s.parse().map_err(|_| bad())?;
    Ok(BigRational::from_integer(i))
}

fn promote_pair(lhs: Real, rhs: Real) -> (Real, Real) {
    let fp = matches!(lhs, Real::Fp(_)) || matches!(rhs, Real::Fp(_));
    let mixed_d = match (&lhs, &rhs) {
        (Real::Quad(p), Real::Quad(q)) => p.d != q.d,
        _ => false,
    };
    if fp || mixed_d {
        (Real::Fp(lhs.to_hp()), Real::Fp(rhs.to_hp()))
    } else {
        (lhs, rhs)
    }
}

impl std::ops::Add for Real {
    type Output = Real;
    fn add(self, rhs: Real) -> Real {
        let (lhs, rhs) = promote_pair(self, rhs);
        match (lhs, rhs) {
            (Real::Rat(x), Real::Rat(y)) => Real::Rat(x + y),
            (Real::Rat(x), Real::Quad(q)) | (Real::Quad(q), Real::Rat(x)) => {
                Real::quad(q.a + x, q.b, q.d)
            }
            (Real::Quad(p), Real::Quad(q)) => Real::quad(p.a + q.a, p.b + q.b, p.d),
            (Real::Fp(x), Real::Fp(y)) => Real::Fp(x + y),
            _ => unreachable!("promote_pair normalizes operands"),
        }
    }
}

impl std::ops::Neg for Real {
    type Output = Real;
    fn neg(self) -> Real {
        match self {
            Real::Rat(r) => Real::Rat(-r),
            Real::Quad(q) => Real::Quad(Quad {
                a: -q.a,
                b: -q.b,
                d: q.d,
            }),
            Real::Fp(h) => Real::Fp(-h),
        }
    }
}

impl std::ops::Sub for Real {
    type Output = Real;
    fn sub(self, rhs: Real) -> Real {
        self + (-rhs)
    }
}

impl std::ops::Mul for Real {
    type Output = Real;
    fn mul(self, rhs: Real) -> Real {
        let (lhs, rhs) = promote_pair(self, rhs);
        match (lhs, rhs) {
            (Real::Rat(x), Real::Rat(y)) => Real::Rat(x * y),
            (Real::Rat(x), Real::Quad(q)) | (Real::Quad(q), Real::Rat(x)) => {
                Real::quad(q.a * &x, q.b * &x, q.d)
            }
            (Real::Quad(p), Real::Quad(q)) => {
                let d = BigRational::from_u64(p.d).expect("u64 fits");
                let a = &p.a * &q.a + &p.b * &q.b * d;
                let b = &p.a * &q.b + &p.b * &q.a;
                Real::quad(a, b, p.d)
            }
            (Real::Fp(x), Real::Fp(y)) => Real::Fp(x * y),
            _ => unreachable!("promote_pair normalizes operands"),
        }
    }
}

impl std::ops::Div for Real {
    type Output = Real;
    fn div(self, rhs: Real) -> Real {
        self * rhs.recip()
    }
}

impl PartialEq for Real {
    fn eq(&self, other: &Real) -> bool {
        self.cmp_real(other) == Ordering::Equal
    }
}

impl PartialOrd for Real {
    fn partial_cmp(&self, other: &Real) -> Option<Ordering> {
        Some(self.cmp_real(other))
    }
}

impl fmt::Display for Real {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Real::Rat(r) => {
                if r.denom().is_one() {
                    write!(f, "{}", r.numer())
                } else {
                    write!(f, "{}/{}", r.numer(), r.denom())
                }
            }
            Real::Quad(q) => write!(f, "{}+{}*sqrt{}", q.a, q.b, q.d),
            Real::Fp(h) => write!(f, "{h}"),
        }
    }
}

/// Positive root of `z^m - z^(m-1) - ... - z - 1`, bracketed in (1, 2)
/// and bisected to double-double precision. The returned value is
/// validated against the bracketing sign change.
pub fn pseudo_golden_beta(m: u32) -> Result<Hp> {
    if m < 2 {
        return Err(Error::InvalidParameter(
            "pseudo golden mean order must be at least 2".into(),
        ));
    }
    let eval = |z: Hp| -> Hp {
        // Horner form of z^m - z^(m-1) - ... - z - 1.
        let mut acc = Hp::ONE;
        for _ in 0..m - 1 {
            acc = acc * z - Hp::ONE;
        }
        acc * z - Hp::ONE
    };
    let mut lo = Hp::from_f64(1.0);
    let mut hi = Hp::from_f64(2.0);
    if !(eval(lo) < Hp::ZERO && eval(hi) > Hp::ZERO) {
        return Err(Error::InvalidParameter(
            "pseudo golden polynomial not bracketed in (1,2)".into(),
        ));
    }
    for _ in 0..140 {
        let mid = (lo + hi) * Hp::from_f64(0.5);
        if eval(mid) < Hp::ZERO {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok((lo + hi) * Hp::from_f64(0.5))
}
