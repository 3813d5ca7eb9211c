//! Nested-subdivision schemes: cell geometry, digit extraction,
//! remainders, and approximation errors for five expansion families.
//!
//! Every scheme subdivides a unit root interval. Cells are treated as
//! open; exact arithmetic lets digit extraction detect when a point
//! falls on a subdivision endpoint instead of silently picking a side.

use std::fmt;

use num::rational::BigRational;
use num::{FromPrimitive, One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::{pseudo_golden_beta, Hp, Real};

/// One symbol of a scheme's alphabet. For continued fractions and
/// Lüroth series the index is the digit value itself.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Digit(pub u64);

impl fmt::Display for Digit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A finite digit prefix; the empty sequence denotes the empty prefix.
pub type DigitSeq = Vec<Digit>;

/// Dash-joined rendering, empty string for the empty prefix.
pub fn format_digits(digits: &[Digit]) -> String {
    digits
        .iter()
        .map(|d| d.0.to_string())
        .collect::<Vec<_>>()
        .join("-")
}

/// Parse a dash-joined digit string; empty input is the empty prefix.
pub fn parse_digits(s: &str) -> Result<DigitSeq> {
    let s = s.trim();
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(['-', ','])
        .map(|part| {
            part.trim()
                .parse::<u64>()
                .map(Digit)
                .map_err(|_| Error::InvalidParameter(format!("bad digit {part:?}")))
        })
        .collect()
}

/// Half-open view of a cell: left endpoint and length.
#[derive(Clone, Debug)]
pub struct Interval {
    pub left: Real,
    pub length: Real,
}

impl Interval {
    pub fn right(&self) -> Real {
        self.left.clone() + self.length.clone()
    }

    pub fn midpoint_f64(&self) -> f64 {
        self.left.to_f64() + 0.5 * self.length.to_f64()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    fn flip(self) -> Sign {
        match self {
            Sign::Plus => Sign::Minus,
            Sign::Minus => Sign::Plus,
        }
    }
}

#[derive(Clone, Debug)]
enum Kind {
    BaseQ {
        q: u32,
    },
    /// Level-1 intervals in left-to-right order with branch slopes
    /// `sign/length`; lengths sum to the unit root.
    Gls {
        lengths: Vec<BigRational>,
        signs: Vec<Sign>,
        /// cum[k] = sum of lengths before interval k; cum[K] = 1.
        cum: Vec<BigRational>,
    },
    Luroth,
    PseudoGolden {
        m: u32,
        beta: Hp,
    },
    ContinuedFraction,
}

/// A nested-subdivision generator for one expansion family.
#[derive(Clone, Debug)]
pub struct Scheme {
    kind: Kind,
}

impl Scheme {
    pub fn base_q(q: u32) -> Result<Scheme> {
        if q < 2 {
            return Err(Error::InvalidParameter("base must be at least 2".into()));
        }
        Ok(Scheme { kind: Kind::BaseQ { q } })
    }

    pub fn gls(lengths: Vec<BigRational>, signs: Vec<Sign>) -> Result<Scheme> {
        if lengths.len() < 2 || lengths.len() != signs.len() {
            return Err(Error::InvalidParameter(
                "GLS needs matching lengths and signs, at least two intervals".into(),
            ));
        }
        if lengths.iter().any(|l| !l.is_positive()) {
            return Err(Error::InvalidParameter("GLS lengths must be positive".into()));
        }
        let total: BigRational = lengths.iter().cloned().sum();
        if !total.is_one() {
            return Err(Error::InvalidParameter(
                "GLS lengths must sum to the unit root length".into(),
            ));
        }
        let mut cum = Vec::with_capacity(lengths.len() + 1);
        let mut acc = BigRational::zero();
        for l in &lengths {
            cum.push(acc.clone());
            acc += l;
        }
        cum.push(acc);
        Ok(Scheme {
            kind: Kind::Gls { lengths, signs, cum },
        })
    }

    pub fn luroth() -> Scheme {
        Scheme { kind: Kind::Luroth }
    }

    pub fn pseudo_golden(m: u32) -> Result<Scheme> {
        let beta = pseudo_golden_beta(m)?;
        Ok(Scheme {
            kind: Kind::PseudoGolden { m, beta },
        })
    }

    pub fn continued_fraction() -> Scheme {
        Scheme {
            kind: Kind::ContinuedFraction,
        }
    }

    /// Root cell: left endpoint 0, unit length.
    pub fn root(&self) -> Interval {
        Interval {
            left: Real::zero(),
            length: Real::one(),
        }
    }

    /// `None` for countably infinite alphabets.
    pub fn alphabet_size(&self) -> Option<u64> {
        match &self.kind {
            Kind::BaseQ { q } => Some(*q as u64),
            Kind::Gls { lengths, .. } => Some(lengths.len() as u64),
            Kind::Luroth | Kind::ContinuedFraction => None,
            Kind::PseudoGolden { .. } => Some(2),
        }
    }

    /// Smallest digit value of the alphabet.
    pub fn min_digit(&self) -> u64 {
        match &self.kind {
            Kind::Luroth => 2,
            Kind::ContinuedFraction => 1,
            _ => 0,
        }
    }

    pub fn digit_in_alphabet(&self, d: Digit) -> bool {
        match self.alphabet_size() {
            Some(k) => d.0 < k,
            None => d.0 >= self.min_digit(),
        }
    }

    /// Whether cell arithmetic is exact-rational for this scheme.
    pub fn is_exact(&self) -> bool {
        !matches!(self.kind, Kind::PseudoGolden { .. })
    }

    /// Natural Markov order: 0 for product-length schemes, m-1 for the
    /// pseudo golden mean, `None` where no finite order exists.
    pub fn markov_order_hint(&self) -> Option<usize> {
        match &self.kind {
            Kind::BaseQ { .. } | Kind::Gls { .. } | Kind::Luroth => Some(0),
            Kind::PseudoGolden { m, .. } => Some(*m as usize - 1),
            Kind::ContinuedFraction => None,
        }
    }

    pub fn beta(&self) -> Option<Hp> {
        match &self.kind {
            Kind::PseudoGolden { beta, .. } => Some(*beta),
            _ => None,
        }
    }

    fn check_prefix(&self, prefix: &[Digit]) -> Result<()> {
        for d in prefix {
            if !self.digit_in_alphabet(*d) {
                return Err(Error::UnknownDigit { digit: d.0 });
            }
        }
        Ok(())
    }

    /// Cell `(a, a + l)` for a digit prefix; the empty prefix yields the
    /// root. Inadmissible pseudo-golden prefixes yield length 0.
    pub fn cell(&self, prefix: &[Digit]) -> Result<Interval> {
        self.check_prefix(prefix)?;
        if prefix.is_empty() {
            return Ok(self.root());
        }
        match &self.kind {
            Kind::BaseQ { q } => {
                let q = BigRational::from_u32(*q).expect("u32 fits");
                let mut left = BigRational::zero();
                let mut len = BigRational::one();
                for d in prefix {
                    len /= &q;
                    left += BigRational::from_u64(d.0).expect("u64 fits") * &len;
                }
                Ok(Interval {
                    left: Real::Rat(left),
                    length: Real::Rat(len),
                })
            }
            Kind::Gls { lengths, signs, cum } => {
                let mut left = BigRational::zero();
                let mut len = BigRational::one();
                let mut orient = Sign::Plus;
                for d in prefix {
                    let k = d.0 as usize;
                    let offset = match orient {
                        Sign::Plus => cum[k].clone(),
                        Sign::Minus => BigRational::one() - &cum[k + 1],
                    };
                    left += &len * offset;
                    len *= &lengths[k];
                    if signs[k] == Sign::Minus {
                        orient = orient.flip();
                    }
                }
                Ok(Interval {
                    left: Real::Rat(left),
                    length: Real::Rat(len),
                })
            }
            Kind::Luroth => {
                // Accumulate the affine branch inverse composition
                // phi(y) = offset + scale * y; the cell is phi((0,1)).
                let mut offset = BigRational::zero();
                let mut scale = BigRational::one();
                for d in prefix {
                    let k = BigRational::from_u64(d.0).expect("u64 fits");
                    let km1 = &k - BigRational::one();
                    offset += &scale / &k;
                    scale /= km1 * &k;
                }
                Ok(Interval {
                    left: Real::Rat(offset),
                    length: Real::Rat(scale),
                })
            }
            Kind::PseudoGolden { m, beta } => {
                let s = *m as usize - 1;
                let digits: Vec<u64> = prefix.iter().map(|d| d.0).collect();
                let n = digits.len();
                let mut left = Hp::ZERO;
                let mut scale = Hp::ONE;
                let inv_beta = beta.recip();
                for &d in &digits {
                    scale = scale * inv_beta;
                    if d == 1 {
                        left = left + scale;
                    }
                }
                // Inadmissible: m consecutive ones anywhere.
                let mut run = 0usize;
                let mut dead = false;
                for &d in &digits {
                    run = if d == 1 { run + 1 } else { 0 };
                    if run > s {
                        dead = true;
                        break;
                    }
                }
                if dead {
                    return Ok(Interval {
                        left: Real::Fp(left),
                        length: Real::zero(),
                    });
                }
                let trailing = digits.iter().rev().take_while(|&&d| d == 1).count();
                let factor = if trailing == 0 {
                    Hp::ONE
                } else {
                    // beta^r - (beta^(r-1) + ... + 1), r = trailing run,
                    // covering both the broken-run and all-ones cases.
                    let r = trailing as i32;
                    let mut geom = Hp::ZERO;
                    for j in 0..r {
                        geom = geom + beta.powi(j);
                    }
                    beta.powi(r) - geom
                };
                Ok(Interval {
                    left: Real::Fp(left),
                    length: Real::Fp(inv_beta.powi(n as i32) * factor),
                })
            }
            Kind::ContinuedFraction => {
                // Convergents p_n/q_n; the cell endpoints are
                // [0;x1..xn] and [0;x1..xn+1] in alternating order.
                let mut p_prev = BigRational::one();
                let mut p = BigRational::zero();
                let mut q_prev = BigRational::zero();
                let mut q = BigRational::one();
                for d in prefix {
                    if d.0 == 0 {
                        return Err(Error::UnknownDigit { digit: 0 });
                    }
                    let x = BigRational::from_u64(d.0).expect("u64 fits");
                    let p_next = &x * &p + &p_prev;
                    let q_next = &x * &q + &q_prev;
                    p_prev = p;
                    p = p_next;
                    q_prev = q;
                    q = q_next;
                }
                let end_a = &p / &q;
                let end_b = (&p + &p_prev) / (&q + &q_prev);
                let (left, right) = if end_a < end_b {
                    (end_a, end_b)
                } else {
                    (end_b, end_a)
                };
                Ok(Interval {
                    left: Real::Rat(left.clone()),
                    length: Real::Rat(right - left),
                })
            }
        }
    }

    /// Level-(n+1) subdivision of one cell, in alphabet order, skipping
    /// zero-length children. Countable alphabets are truncated to the
    /// first `max_digits` symbols; finite ones are capped the same way.
    pub fn children(&self, prefix: &[Digit], max_digits: usize) -> Result<Vec<(Digit, Interval)>> {
        let parent = self.cell(prefix)?;
        if parent.length.is_zero() {
            return Err(Error::EmptyCell {
                prefix: format_digits(prefix),
            });
        }
        let mut out = Vec::new();
        let start = self.min_digit();
        let count = match self.alphabet_size() {
            Some(k) => (k as usize).min(max_digits),
            None => max_digits,
        };
        let mut child = prefix.to_vec();
        for i in 0..count {
            let d = Digit(start + i as u64);
            child.push(d);
            let cell = self.cell(&child)?;
            if !cell.length.is_zero() {
                out.push((d, cell));
            }
            child.pop();
        }
        Ok(out)
    }

    /// One step of the generating dynamical system: the digit of `x`
    /// and the next remainder `T(x)`.
    fn step(&self, x: &Real, level: usize) -> Result<(Digit, Real)> {
        match &self.kind {
            Kind::BaseQ { q } => {
                // Floor convention: terminating expansions continue
                // with zeros rather than raising.
                let y = x.clone() * Real::from_u64(*q as u64);
                let k = y.floor_i64()?.clamp(0, *q as i64 - 1) as u64;
                let rem = y - Real::from_u64(k);
                Ok((Digit(k), rem))
            }
            Kind::Gls { lengths, signs, cum } => {
                let mut k = None;
                for (i, bounds) in cum.windows(2).enumerate() {
                    let lo = Real::Rat(bounds[0].clone());
                    let hi = Real::Rat(bounds[1].clone());
                    if *x == lo || *x == hi {
                        return Err(Error::Endpoint { level });
                    }
                    if *x > lo && *x < hi {
                        k = Some(i);
                        break;
                    }
                }
                let k = k.ok_or(Error::Endpoint { level })?;
                let len = Real::Rat(lengths[k].clone());
                let rem = match signs[k] {
                    Sign::Plus => (x.clone() - Real::Rat(cum[k].clone())) / len,
                    Sign::Minus => (Real::Rat(cum[k + 1].clone()) - x.clone()) / len,
                };
                Ok((Digit(k as u64), rem))
            }
            Kind::Luroth => {
                if x.sign() != std::cmp::Ordering::Greater {
                    return Err(Error::Endpoint { level });
                }
                let r = x.recip();
                let j = r.floor_i64()?;
                if r == Real::from_i64(j) {
                    // x = 1/j is a subdivision endpoint.
                    return Err(Error::Endpoint { level });
                }
                let k = j as u64 + 1;
                // T_k(x) = (k-1) k x - k + 1
                let rem = Real::from_u64(k - 1) * Real::from_u64(k) * x.clone()
                    - Real::from_u64(k)
                    + Real::one();
                Ok((Digit(k), rem))
            }
            Kind::PseudoGolden { beta, .. } => {
                let y = x.clone() * Real::Fp(*beta);
                let k = y.to_hp().floor().to_f64().clamp(0.0, 1.0) as u64;
                let rem = y - Real::from_u64(k);
                Ok((Digit(k), rem))
            }
            Kind::ContinuedFraction => {
                if x.sign() != std::cmp::Ordering::Greater {
                    return Err(Error::Endpoint { level });
                }
                let r = x.recip();
                let j = r.floor_i64()?;
                if r == Real::from_i64(j) {
                    // x = 1/j sits on a cell boundary; rationals in
                    // particular always terminate here.
                    return Err(Error::Endpoint { level });
                }
                let rem = r - Real::from_i64(j);
                Ok((Digit(j as u64), rem))
            }
        }
    }

    /// First `n` digits of `x`. Points on a subdivision endpoint raise
    /// `Endpoint` at the level where continuation breaks down.
    pub fn digits_of(&self, x: &Real, n: usize) -> Result<DigitSeq> {
        let mut digits = Vec::with_capacity(n);
        let mut rem = self.promote(x);
        for level in 1..=n {
            let (d, next) = self.step(&rem, level)?;
            digits.push(d);
            rem = next;
        }
        Ok(digits)
    }

    /// n-th scaled remainder `x^[n] = T^n(x)`.
    pub fn remainder(&self, x: &Real, n: usize) -> Result<Real> {
        let mut rem = self.promote(x);
        for level in 1..=n {
            let (_, next) = self.step(&rem, level)?;
            rem = next;
        }
        Ok(rem)
    }

    /// Approximation error `e_n = x - a_n` and relative error
    /// `u_n = e_n / l_n` at level `n`.
    pub fn approximation_errors(&self, x: &Real, n: usize) -> Result<(Real, Real)> {
        let digits = self.digits_of(x, n)?;
        let cell = self.cell(&digits)?;
        if cell.length.is_zero() {
            return Err(Error::EmptyCell {
                prefix: format_digits(&digits),
            });
        }
        let e = self.promote(x) - cell.left;
        let u = e.clone() / cell.length;
        Ok((e, u))
    }

    /// First-level digit law `k -> l_k / l_root`; countable alphabets
    /// are truncated with the remaining tail mass reported.
    pub fn pmf_first_level(&self, max_digits: usize) -> Result<Pmf> {
        let children = self.children(&[], max_digits)?;
        let mut entries = Vec::with_capacity(children.len());
        let mut mass = Real::zero();
        for (d, cell) in children {
            mass = mass + cell.length.clone();
            entries.push((vec![d], cell.length));
        }
        Ok(Pmf {
            entries,
            tail: Real::one() - mass,
        })
    }

    /// All positive-length prefixes of the given depth, in lexicographic
    /// digit order. Countable alphabets enumerate the first
    /// `max_digits` symbols per position.
    pub fn admissible_prefixes(&self, depth: usize, max_digits: usize) -> Result<Vec<DigitSeq>> {
        let mut level: Vec<(DigitSeq, WalkState)> = vec![(Vec::new(), self.walk_root())];
        for _ in 0..depth {
            let mut next = Vec::new();
            for (prefix, state) in &level {
                for (d, child) in self.walk_children(state, max_digits) {
                    let mut ext = prefix.clone();
                    ext.push(d);
                    next.push((ext, child));
                }
            }
            level = next;
        }
        Ok(level.into_iter().map(|(p, _)| p).collect())
    }

    /// Start of an incremental subdivision walk at the root cell.
    pub(crate) fn walk_root(&self) -> WalkState {
        match &self.kind {
            Kind::ContinuedFraction => WalkState::Cf {
                q_prev: num::BigInt::from(0),
                q_cur: num::BigInt::from(1),
            },
            Kind::PseudoGolden { .. } => WalkState::Pg { n: 0, run: 0 },
            _ => WalkState::Scale {
                length: BigRational::one(),
            },
        }
    }

    pub(crate) fn walk_length(&self, st: &WalkState) -> Real {
        match (st, &self.kind) {
            (WalkState::Scale { length }, _) => Real::Rat(length.clone()),
            (WalkState::Cf { q_prev, q_cur }, _) => Real::Rat(BigRational::new(
                num::BigInt::from(1),
                q_cur * (q_cur + q_prev),
            )),
            (WalkState::Pg { n, run }, Kind::PseudoGolden { beta, .. }) => {
                let inv_pow = beta.recip().powi(*n as i32);
                let factor = if *run == 0 {
                    Hp::ONE
                } else {
                    let mut geom = Hp::ZERO;
                    for j in 0..*run as i32 {
                        geom = geom + beta.powi(j);
                    }
                    beta.powi(*run as i32) - geom
                };
                Real::Fp(inv_pow * factor)
            }
            _ => unreachable!("walk state does not match scheme kind"),
        }
    }

    /// Positive-length children of a walk node, in alphabet order,
    /// truncated to `max_digits` symbols for countable alphabets.
    pub(crate) fn walk_children(
        &self,
        st: &WalkState,
        max_digits: usize,
    ) -> Vec<(Digit, WalkState)> {
        match (st, &self.kind) {
            (WalkState::Scale { length }, Kind::BaseQ { q }) => {
                let child = length / BigRational::from_u32(*q).expect("u32 fits");
                (0..*q as u64)
                    .map(|k| (Digit(k), WalkState::Scale { length: child.clone() }))
                    .collect()
            }
            (WalkState::Scale { length }, Kind::Gls { lengths, .. }) => lengths
                .iter()
                .enumerate()
                .map(|(k, l)| {
                    (
                        Digit(k as u64),
                        WalkState::Scale { length: length * l },
                    )
                })
                .collect(),
            (WalkState::Scale { length }, Kind::Luroth) => (0..max_digits as u64)
                .map(|i| {
                    let k = i + 2;
                    let child = length
                        / BigRational::from_u64(k * (k - 1)).expect("u64 fits");
                    (Digit(k), WalkState::Scale { length: child })
                })
                .collect(),
            (WalkState::Cf { q_prev, q_cur }, Kind::ContinuedFraction) => (1..=max_digits
                as u64)
                .map(|k| {
                    let q_next = num::BigInt::from(k) * q_cur + q_prev;
                    (
                        Digit(k),
                        WalkState::Cf {
                            q_prev: q_cur.clone(),
                            q_cur: q_next,
                        },
                    )
                })
                .collect(),
            (WalkState::Pg { n, run }, Kind::PseudoGolden { m, .. }) => {
                let mut out = vec![(Digit(0), WalkState::Pg { n: n + 1, run: 0 })];
                if run + 1 < *m {
                    out.push((Digit(1), WalkState::Pg { n: n + 1, run: run + 1 }));
                }
                out
            }
            _ => unreachable!("walk state does not match scheme kind"),
        }
    }

    /// Promote a value into the scheme's working arithmetic.
    fn promote(&self, x: &Real) -> Real {
        if self.is_exact() {
            x.clone()
        } else {
            Real::Fp(x.to_hp())
        }
    }

    /// Inverse of branch `k` evaluated at `y` together with the absolute
    /// derivative, or `None` when `y` is outside the branch image.
    /// Used by the pushforward-density sum.
    pub fn branch_inverse(&self, k: Digit, y: f64) -> Option<(f64, f64)> {
        match &self.kind {
            Kind::BaseQ { q } => {
                let q = *q as f64;
                Some(((y + k.0 as f64) / q, 1.0 / q))
            }
            Kind::Gls { lengths, signs, cum } => {
                let l = lengths[k.0 as usize].to_f64().unwrap_or(0.0);
                let c = cum[k.0 as usize].to_f64().unwrap_or(0.0);
                let x = match signs[k.0 as usize] {
                    Sign::Plus => c + y * l,
                    Sign::Minus => c + (1.0 - y) * l,
                };
                Some((x, l))
            }
            Kind::Luroth => {
                let k = k.0 as f64;
                let slope = (k - 1.0) * k;
                Some(((y + k - 1.0) / slope, 1.0 / slope))
            }
            Kind::PseudoGolden { beta, .. } => {
                let b = beta.to_f64();
                if k.0 == 1 && y >= b - 1.0 {
                    return None;
                }
                Some(((y + k.0 as f64) / b, 1.0 / b))
            }
            Kind::ContinuedFraction => {
                let t = y + k.0 as f64;
                Some((1.0 / t, 1.0 / (t * t)))
            }
        }
    }
}

/// Per-branch state of an incremental subdivision walk; carries just
/// enough to produce child cell lengths without root recomputation.
#[derive(Clone, Debug)]
pub(crate) enum WalkState {
    /// Running cell length (base-q, GLS, Lüroth).
    Scale { length: BigRational },
    /// Convergent denominators q_{n-1}, q_n.
    Cf {
        q_prev: num::BigInt,
        q_cur: num::BigInt,
    },
    /// Depth and trailing run of ones.
    Pg { n: u32, run: u32 },
}

/// Discrete law over digit prefixes with explicit truncated tail mass.
#[derive(Clone, Debug)]
pub struct Pmf {
    pub entries: Vec<(DigitSeq, Real)>,
    pub tail: Real,
}

impl Pmf {
    pub fn prob_of(&self, key: &[Digit]) -> Real {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, p)| p.clone())
            .unwrap_or_else(Real::zero)
    }
}

/// JSON-facing scheme description; rationals travel as "p/q" strings.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SchemeConfig {
    BaseQ { q: u32 },
    Gls { lengths: Vec<String>, signs: Vec<i8> },
    Luroth,
    PseudoGolden { m: u32 },
    ContinuedFraction,
}

impl SchemeConfig {
    pub fn build(&self) -> Result<Scheme> {
        match self {
            SchemeConfig::BaseQ { q } => Scheme::base_q(*q),
            SchemeConfig::Gls { lengths, signs } => {
                let lengths = lengths
                    .iter()
                    .map(|s| {
                        Real::parse(s)?.as_rational().cloned().ok_or_else(|| {
                            Error::Config(format!("GLS length {s:?} must be rational"))
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                let signs = signs
                    .iter()
                    .map(|s| match s {
                        1 => Ok(Sign::Plus),
                        -1 => Ok(Sign::Minus),
                        other => Err(Error::Config(format!("GLS sign must be +-1, got {other}"))),
                    })
                    .collect::<Result<Vec<_>>>()?;
                Scheme::gls(lengths, signs)
            }
            SchemeConfig::Luroth => Ok(Scheme::luroth()),
            SchemeConfig::PseudoGolden { m } => Scheme::pseudo_golden(*m),
            SchemeConfig::ContinuedFraction => Ok(Scheme::continued_fraction()),
        }
    }

    /// Compact command-line form: `base_q:10`, `pseudo_golden:2`,
    /// `luroth`, `continued_fraction`, `gls:1/2,1/3,1/6:+-+`,
    /// or inline JSON starting with `{`.
    pub fn parse_compact(s: &str) -> Result<SchemeConfig> {
        let s = s.trim();
        if s.starts_with('{') {
            return serde_json::from_str(s).map_err(|e| Error::Config(e.to_string()));
        }
        let mut parts = s.splitn(3, ':');
        let kind = parts.next().unwrap_or("");
        match kind {
            "base_q" => {
                let q = parts
                    .next()
                    .and_then(|p| p.parse().ok())
                    .ok_or_else(|| Error::Config("base_q needs a base, e.g. base_q:10".into()))?;
                Ok(SchemeConfig::BaseQ { q })
            }
            "pseudo_golden" => {
                let m = parts
                    .next()
                    .and_then(|p| p.parse().ok())
                    .ok_or_else(|| Error::Config("pseudo_golden needs an order, e.g. pseudo_golden:2".into()))?;
                Ok(SchemeConfig::PseudoGolden { m })
            }
            "luroth" => Ok(SchemeConfig::Luroth),
            "continued_fraction" => Ok(SchemeConfig::ContinuedFraction),
            "gls" => {
                let lengths = parts
                    .next()
                    .ok_or_else(|| Error::Config("gls needs lengths".into()))?
                    .split(',')
                    .map(|p| p.trim().to_string())
                    .collect();
                let signs = parts
                    .next()
                    .ok_or_else(|| Error::Config("gls needs signs, e.g. gls:1/2,1/2:+-".into()))?
                    .chars()
                    .filter(|c| !c.is_whitespace())
                    .map(|c| match c {
                        '+' => Ok(1),
                        '-' => Ok(-1),
                        other => Err(Error::Config(format!("bad GLS sign {other:?}"))),
                    })
                    .collect::<Result<Vec<i8>>>()?;
                Ok(SchemeConfig::Gls { lengths, signs })
            }
            other => Err(Error::Config(format!("unknown scheme kind {other:?}"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::real::Real;

    fn digits(v: &[u64]) -> DigitSeq {
        v.iter().map(|&d| Digit(d)).collect()
    }

    #[test]
    fn base_q_cell_matches_decimal_geometry() {
        let s = Scheme::base_q(10).unwrap();
        let cell = s.cell(&digits(&[1, 2, 5])).unwrap();
        assert_eq!(cell.left, Real::ratio(1, 8));
        assert_eq!(cell.length, Real::ratio(1, 1000));
        let root = s.cell(&[]).unwrap();
        assert_eq!(root.left, Real::zero());
        assert_eq!(root.length, Real::one());
    }

    #[test]
    fn continued_fraction_cell_from_convergents() {
        // [0;2,2] = 2/5 and [0;2,3] = 3/7 bracket the cell.
        let s = Scheme::continued_fraction();
        let cell = s.cell(&digits(&[2, 2])).unwrap();
        assert_eq!(cell.left, Real::ratio(2, 5));
        assert_eq!(cell.length, Real::ratio(1, 35));
    }

    #[test]
    fn pseudo_golden_forbidden_run_has_zero_length() {
        let s = Scheme::pseudo_golden(2).unwrap();
        let cell = s.cell(&digits(&[1, 1])).unwrap();
        assert!(cell.length.is_zero());
        let only_child = s.children(&digits(&[1]), 8).unwrap();
        assert_eq!(only_child.len(), 1);
        assert_eq!(only_child[0].0, Digit(0));
    }

    #[test]
    fn binary_first_level() {
        let s = Scheme::base_q(2).unwrap();
        let kids = s.children(&[], 8).unwrap();
        assert_eq!(kids.len(), 2);
        assert_eq!(kids[0].1.left, Real::zero());
        assert_eq!(kids[0].1.length, Real::ratio(1, 2));
        assert_eq!(kids[1].1.left, Real::ratio(1, 2));
    }

    #[test]
    fn luroth_children_and_pmf() {
        let s = Scheme::luroth();
        let kids = s.children(&[], 3).unwrap();
        let got: Vec<(u64, Real)> = kids.iter().map(|(d, c)| (d.0, c.length.clone())).collect();
        assert_eq!(
            got,
            vec![
                (2, Real::ratio(1, 2)),
                (3, Real::ratio(1, 6)),
                (4, Real::ratio(1, 12)),
            ]
        );
        let pmf = s.pmf_first_level(10).unwrap();
        assert_eq!(pmf.prob_of(&digits(&[5])), Real::ratio(1, 20));
        // Tail of sum 1/(k(k-1)) from k = 12 is 1/11.
        assert_eq!(pmf.tail, Real::ratio(1, 11));
    }

    #[test]
    fn continued_fraction_pmf_first_level() {
        let s = Scheme::continued_fraction();
        let pmf = s.pmf_first_level(6).unwrap();
        for k in 1..=6u64 {
            assert_eq!(
                pmf.prob_of(&digits(&[k])),
                Real::Rat(BigRational::new(1.into(), (k * (k + 1)).into()))
            );
        }
    }

    #[test]
    fn decimal_digits_by_definition() {
        let s = Scheme::base_q(10).unwrap();
        let d = s.digits_of(&Real::ratio(1, 8), 3).unwrap();
        assert_eq!(d, digits(&[1, 2, 5]));
        // Terminating expansions continue with zeros.
        let d = s.digits_of(&Real::ratio(1, 8), 5).unwrap();
        assert_eq!(d, digits(&[1, 2, 5, 0, 0]));
    }

    #[test]
    fn luroth_digit_extraction() {
        let s = Scheme::luroth();
        let d = s.digits_of(&Real::ratio(7, 10), 2).unwrap();
        assert_eq!(d, digits(&[2, 3]));
        // 1/2 is the shared endpoint of the first two level-1 cells.
        let err = s.digits_of(&Real::ratio(1, 2), 1).unwrap_err();
        assert!(matches!(err, Error::Endpoint { level: 1 }));
    }

    #[test]
    fn gauss_map_fixed_point() {
        let s = Scheme::continued_fraction();
        let x = Real::parse("sqrt2-1").unwrap();
        assert_eq!(s.digits_of(&x, 3).unwrap(), digits(&[2, 2, 2]));
        assert_eq!(s.remainder(&x, 1).unwrap(), x);
        let (e, u) = s.approximation_errors(&x, 2).unwrap();
        let expect_e = x.clone() - Real::ratio(2, 5);
        assert_eq!(e, expect_e);
        assert_eq!(u, expect_e * Real::from_i64(35));
    }

    #[test]
    fn remainders() {
        let s = Scheme::base_q(2).unwrap();
        assert_eq!(s.remainder(&Real::ratio(1, 3), 0).unwrap(), Real::ratio(1, 3));
        assert_eq!(s.remainder(&Real::ratio(1, 3), 1).unwrap(), Real::ratio(2, 3));
    }

    #[test]
    fn relative_errors_decimal() {
        let s = Scheme::base_q(10).unwrap();
        let x = Real::ratio(1, 8) + Real::ratio(1, 10_000);
        let (e, u) = s.approximation_errors(&x, 3).unwrap();
        assert_eq!(e, Real::ratio(1, 10_000));
        assert_eq!(u, Real::ratio(1, 10));
    }

    #[test]
    fn unknown_digit_rejected() {
        let s = Scheme::base_q(2).unwrap();
        assert!(matches!(
            s.cell(&digits(&[2])),
            Err(Error::UnknownDigit { digit: 2 })
        ));
        let cf = Scheme::continued_fraction();
        assert!(matches!(
            cf.cell(&digits(&[0])),
            Err(Error::UnknownDigit { digit: 0 })
        ));
    }

    #[test]
    fn empty_cell_children_error() {
        let s = Scheme::pseudo_golden(2).unwrap();
        assert!(matches!(
            s.children(&digits(&[1, 1]), 4),
            Err(Error::EmptyCell { .. })
        ));
    }

    #[test]
    fn gls_reversed_ordering() {
        // lengths 1/2, 1/3, 1/6 with a flipped middle branch.
        let lengths = vec![
            BigRational::new(1.into(), 2.into()),
            BigRational::new(1.into(), 3.into()),
            BigRational::new(1.into(), 6.into()),
        ];
        let s = Scheme::gls(lengths, vec![Sign::Plus, Sign::Minus, Sign::Plus]).unwrap();
        // Under prefix (1) the orientation is negative: children left
        // endpoints must appear in reverse alphabet order.
        let kids = s.children(&digits(&[1]), 8).unwrap();
        let lefts: Vec<f64> = kids.iter().map(|(_, c)| c.left.to_f64()).collect();
        assert!(lefts[0] > lefts[1] && lefts[1] > lefts[2]);
        // Under prefix (0) the order is straight.
        let kids = s.children(&digits(&[0]), 8).unwrap();
        let lefts: Vec<f64> = kids.iter().map(|(_, c)| c.left.to_f64()).collect();
        assert!(lefts[0] < lefts[1] && lefts[1] < lefts[2]);
    }

    #[test]
    fn gls_digits_roundtrip_with_flip() {
        let lengths = vec![
            BigRational::new(1.into(), 2.into()),
            BigRational::new(1.into(), 2.into()),
        ];
        let s = Scheme::gls(lengths, vec![Sign::Minus, Sign::Plus]).unwrap();
        let x = Real::ratio(3, 7);
        for n in 1..=6 {
            let d = s.digits_of(&x, n).unwrap();
            let cell = s.cell(&d).unwrap();
            assert!(cell.left < x && x < cell.right(), "level {n}");
        }
    }

    #[test]
    fn pseudo_golden_expansion_avoids_double_ones() {
        let s = Scheme::pseudo_golden(2).unwrap();
        let d = s.digits_of(&Real::ratio(9, 10), 12).unwrap();
        for w in d.windows(2) {
            assert!(!(w[0] == Digit(1) && w[1] == Digit(1)));
        }
    }

    #[test]
    fn scheme_config_roundtrip() {
        let cfg = SchemeConfig::parse_compact("base_q:10").unwrap();
        let s = cfg.build().unwrap();
        assert_eq!(s.alphabet_size(), Some(10));
        let cfg = SchemeConfig::parse_compact("gls:1/2,1/3,1/6:+-+").unwrap();
        assert!(cfg.build().is_ok());
        let cfg = SchemeConfig::parse_compact(r#"{"kind":"pseudo_golden","m":3}"#).unwrap();
        let s = cfg.build().unwrap();
        assert_eq!(s.markov_order_hint(), Some(2));
        let json = serde_json::to_string(&SchemeConfig::ContinuedFraction).unwrap();
        assert_eq!(json, r#"{"kind":"continued_fraction"}"#);
    }
}
