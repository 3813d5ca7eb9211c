//! Coupling of a point X with its sufficient-digit count N: per-cell
//! infima, exact S and N probabilities, the coupled sampler, and the
//! density-free residual law.

use rand::Rng;

use crate::density::{Density, Form};
use crate::error::{Error, Result};
use crate::real::Real;
use crate::scheme::{format_digits, Digit, DigitSeq, Pmf, Scheme};

/// Hard cap on the sufficient-digit search; exceeding it is reported,
/// never silently truncated.
pub const DEFAULT_DEPTH_CAP: usize = 1_000_000;

/// Infimum bookkeeping for one cell: `i` is the infimum of the density
/// over the cell's continuity set, `c` the increment over the parent.
#[derive(Clone, Debug)]
pub struct CellInfimum {
    pub prefix: DigitSeq,
    pub i_value: Real,
    pub c_value: Real,
}

/// Infimum of the density over one cell.
pub fn infimum(density: &Density, prefix: &[Digit]) -> Result<Real> {
    match &density.form {
        Form::Piecewise { depth, cells } => {
            if prefix.len() >= *depth {
                if density.scheme().cell(prefix)?.length.is_zero() {
                    return Ok(Real::zero());
                }
                density.value_on_cell(prefix)
            } else {
                let range = density.descendant_range(prefix);
                let slice = &cells[range];
                let mut best: Option<Real> = None;
                for (_, v) in slice {
                    best = Some(match best {
                        None => v.clone(),
                        Some(b) => b.min_real(v.clone()),
                    });
                }
                Ok(best.unwrap_or_else(Real::zero))
            }
        }
        Form::Gauss => {
            // Decreasing on every cell: the infimum is the value at the
            // right endpoint.
            let cell = density.scheme().cell(prefix)?;
            if prefix.is_empty() {
                return Ok(Real::from_f64(crate::density::gauss_pdf(1.0)));
            }
            if cell.length.is_zero() {
                return Ok(Real::zero());
            }
            Ok(Real::from_f64(crate::density::gauss_pdf(
                cell.right().to_f64(),
            )))
        }
    }
}

/// Per-cell infimum and its increment over the parent cell.
pub fn cell_infimum(density: &Density, prefix: &[Digit]) -> Result<CellInfimum> {
    let i_value = infimum(density, prefix)?;
    let c_value = if prefix.is_empty() {
        i_value.clone()
    } else {
        let parent = &prefix[..prefix.len() - 1];
        i_value.clone() - infimum(density, parent)?
    };
    Ok(CellInfimum {
        prefix: prefix.to_vec(),
        i_value,
        c_value,
    })
}

/// P(S = prefix) = c * l.
pub fn pmf_s(density: &Density, prefix: &[Digit]) -> Result<Real> {
    let ci = cell_infimum(density, prefix)?;
    let len = density.scheme().cell(prefix)?.length;
    Ok(ci.c_value * len)
}

/// A probability known up to a truncation tail: the true value lies in
/// `[value, value + tail]`.
#[derive(Clone, Debug)]
pub struct Bounded {
    pub value: Real,
    pub tail: Real,
}

impl Bounded {
    pub fn exact(value: Real) -> Bounded {
        Bounded {
            value,
            tail: Real::zero(),
        }
    }
}

/// P(N <= n) as the sum of i * l over depth-n prefixes. Countable
/// alphabets are truncated at `max_digits` symbols per position, with
/// the unexplored mass reported as the tail bound.
pub fn cdf_n(density: &Density, n: usize, max_digits: usize) -> Result<Bounded> {
    if let Form::Piecewise { depth, .. } = &density.form {
        if n > *depth {
            // The density is constant on depth-n cells, so the sum
            // telescopes to the full mass.
            return Ok(Bounded::exact(Real::one()));
        }
    }
    let scheme = density.scheme();
    let prefixes = scheme.admissible_prefixes(n, max_digits)?;
    let mut sum = Real::zero();
    let mut seen_mass = Real::zero();
    for prefix in &prefixes {
        let i = infimum(density, prefix)?;
        let len = scheme.cell(prefix)?.length;
        sum = sum + i * len;
        seen_mass = seen_mass + density.cell_mass(prefix)?;
    }
    let tail = if scheme.alphabet_size().is_some() {
        Real::zero()
    } else {
        // i*l <= cell mass, so unexplored cells contribute at most the
        // remaining density mass.
        (Real::one() - seen_mass).abs()
    };
    Ok(Bounded { value: sum, tail })
}

/// P(N <= n | X = x) = i_{x_1..x_n} / f(x).
pub fn cdf_n_given_x(density: &Density, x: &Real, n: usize) -> Result<Real> {
    let f = density.eval(x)?;
    if f.is_zero() {
        return Err(Error::UndefinedConditional);
    }
    let digits = density.scheme().digits_of(x, n)?;
    Ok(infimum(density, &digits)? / f)
}

/// One realization of the coupling (X, N) together with the derived
/// quantities S, U, E, L.
#[derive(Clone, Debug)]
pub struct CouplingDraw {
    pub x: f64,
    pub n: usize,
    pub s: DigitSeq,
    pub u: f64,
    pub e: f64,
    pub l: f64,
}

/// Draw (X, N) from the coupling: X by inverse CDF, W uniform on
/// (0, f(X)), and N the first level whose cell infimum reaches W.
pub fn sample_coupled(density: &Density, rng: &mut impl Rng) -> Result<CouplingDraw> {
    sample_coupled_capped(density, rng, DEFAULT_DEPTH_CAP)
}

pub fn sample_coupled_capped(
    density: &Density,
    rng: &mut impl Rng,
    depth_cap: usize,
) -> Result<CouplingDraw> {
    // A float draw can land exactly on a subdivision endpoint (a null
    // event at f64 resolution); such draws are rejected and retried.
    for _ in 0..100 {
        match try_sample_coupled(density, rng, depth_cap) {
            Err(Error::Endpoint { .. }) => continue,
            other => return other,
        }
    }
    Err(Error::Domain(
        "persistent endpoint collisions while sampling".into(),
    ))
}

fn try_sample_coupled(
    density: &Density,
    rng: &mut impl Rng,
    depth_cap: usize,
) -> Result<CouplingDraw> {
    let scheme = density.scheme();
    let (x, cell_digits) = density.sample_with_digits(rng)?;
    let xr = Real::from_f64(x);
    let f = match &density.form {
        Form::Piecewise { .. } => density.value_on_cell(&cell_digits)?.to_f64(),
        Form::Gauss => crate::density::gauss_pdf(x),
    };
    let w: f64 = rng.sample::<f64, _>(rand::distributions::Open01) * f;

    let mut digits: DigitSeq = Vec::new();
    let mut rem = xr.clone();
    let mut n = 0usize;
    loop {
        let i = match &density.form {
            Form::Piecewise { .. } => {
                // Digits up to the piecewise depth come from the chosen
                // cell; N never has to look deeper than that.
                infimum(density, &cell_digits[..n.min(cell_digits.len())])?
            }
            Form::Gauss => infimum(density, &digits)?,
        };
        if i.to_f64() >= w {
            break;
        }
        if n >= depth_cap {
            return Err(Error::DepthCap { cap: depth_cap });
        }
        n += 1;
        if matches!(density.form, Form::Gauss) {
            let (d, next) = scheme_step(scheme, &rem, n)?;
            digits.push(d);
            rem = next;
        } else if n > cell_digits.len() {
            // Unreachable for normalized piecewise densities: the
            // depth-d infimum equals f(X) > W.
            return Err(Error::DepthCap { cap: depth_cap });
        }
    }

    let s: DigitSeq = match &density.form {
        Form::Piecewise { .. } => cell_digits[..n].to_vec(),
        Form::Gauss => digits,
    };
    let cell = scheme.cell(&s)?;
    let l = cell.length.to_f64();
    let e = x - cell.left.to_f64();
    let u = e / l;
    if !(u > 0.0 && u < 1.0) {
        // Rounding pushed the point onto a cell boundary.
        return Err(Error::Endpoint { level: n });
    }
    Ok(CouplingDraw { x, n, s, u, e, l })
}

fn scheme_step(scheme: &Scheme, rem: &Real, level: usize) -> Result<(Digit, Real)> {
    let digits = scheme.digits_of(rem, 1).map_err(|e| match e {
        Error::Endpoint { .. } => Error::Endpoint { level },
        other => other,
    })?;
    let next = scheme.remainder(rem, 1)?;
    Ok((digits[0], next))
}

/// Law of the next `m` digits given S = prefix:
/// P(R_1..R_m = suffix | S) = l_{prefix+suffix} / l_prefix. Depends on
/// the scheme only, never on the density.
pub fn residual_law(
    scheme: &Scheme,
    prefix: &[Digit],
    m: usize,
    max_digits: usize,
) -> Result<Pmf> {
    let base = scheme.cell(prefix)?;
    if base.length.is_zero() {
        return Err(Error::ConditioningOnNull);
    }
    let mut level: Vec<DigitSeq> = vec![prefix.to_vec()];
    for _ in 0..m {
        let mut next = Vec::new();
        for p in &level {
            for (d, _) in scheme.children(p, max_digits)? {
                let mut ext = p.clone();
                ext.push(d);
                next.push(ext);
            }
        }
        level = next;
    }
    let mut entries = Vec::with_capacity(level.len());
    let mut mass = Real::zero();
    for full in level {
        let p = scheme.cell(&full)?.length / base.length.clone();
        mass = mass + p.clone();
        entries.push((full[prefix.len()..].to_vec(), p));
    }
    Ok(Pmf {
        entries,
        tail: Real::one() - mass,
    })
}

/// Extend a positive-length prefix by `count` digits drawn from the
/// residual law, one digit at a time.
pub fn sample_extension(
    scheme: &Scheme,
    prefix: &[Digit],
    count: usize,
    rng: &mut impl Rng,
) -> Result<DigitSeq> {
    let mut current = prefix.to_vec();
    for _ in 0..count {
        let parent_len = scheme.cell(&current)?.length;
        if parent_len.is_zero() {
            return Err(Error::EmptyCell {
                prefix: format_digits(&current),
            });
        }
        let u: f64 = rng.sample(rand::distributions::Open01);
        let parent_f64 = parent_len.to_f64();
        let mut acc = 0.0;
        let mut digit = None;
        // Walk the (possibly countable) children until the cumulative
        // conditional mass passes u; masses sum to 1, so this stops.
        let start = scheme.min_digit();
        let limit = scheme.alphabet_size().unwrap_or(10_000_000);
        let mut child = current.clone();
        for k in 0..limit {
            let d = Digit(start + k);
            child.push(d);
            let len = scheme.cell(&child)?.length;
            child.pop();
            acc += len.to_f64() / parent_f64;
            if u < acc {
                digit = Some(d);
                break;
            }
        }
        let d = digit.ok_or_else(|| {
            Error::Domain("residual digit sampling failed to terminate".into())
        })?;
        current.push(d);
    }
    Ok(current[prefix.len()..].to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::real::Real;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn base2_density() -> Density {
        Density::piecewise(
            Scheme::base_q(2).unwrap(),
            1,
            vec![Real::ratio(3, 2), Real::ratio(1, 2)],
        )
        .unwrap()
    }

    fn digits(v: &[u64]) -> DigitSeq {
        v.iter().map(|&d| Digit(d)).collect()
    }

    #[test]
    fn uniform_density_infima() {
        let d = Density::uniform(Scheme::base_q(10).unwrap()).unwrap();
        let root = cell_infimum(&d, &[]).unwrap();
        assert_eq!(root.i_value, Real::one());
        assert_eq!(root.c_value, Real::one());
        let deep = cell_infimum(&d, &digits(&[3, 1, 4])).unwrap();
        assert_eq!(deep.i_value, Real::one());
        assert_eq!(deep.c_value, Real::zero());
    }

    #[test]
    fn base2_infima_by_hand() {
        let d = base2_density();
        assert_eq!(infimum(&d, &[]).unwrap(), Real::ratio(1, 2));
        assert_eq!(infimum(&d, &digits(&[0])).unwrap(), Real::ratio(3, 2));
        assert_eq!(infimum(&d, &digits(&[1])).unwrap(), Real::ratio(1, 2));
        assert_eq!(cell_infimum(&d, &digits(&[0])).unwrap().c_value, Real::one());
        assert_eq!(cell_infimum(&d, &digits(&[1])).unwrap().c_value, Real::zero());
    }

    #[test]
    fn gauss_infimum_at_right_endpoint() {
        let d = Density::gauss();
        // Cell (1) is (1/2, 1]: infimum is f_G(1) = 1/(2 ln 2).
        let ci = cell_infimum(&d, &digits(&[1])).unwrap();
        let expect = 1.0 / (2.0 * std::f64::consts::LN_2);
        assert!((ci.i_value.to_f64() - expect).abs() < 1e-14);
    }

    #[test]
    fn pmf_s_exact_values() {
        let d = base2_density();
        assert_eq!(pmf_s(&d, &[]).unwrap(), Real::ratio(1, 2));
        assert_eq!(pmf_s(&d, &digits(&[0])).unwrap(), Real::ratio(1, 2));
        assert_eq!(pmf_s(&d, &digits(&[1])).unwrap(), Real::zero());
        let u = Density::uniform(Scheme::base_q(10).unwrap()).unwrap();
        assert_eq!(pmf_s(&u, &[]).unwrap(), Real::one());
    }

    #[test]
    fn cdf_n_exact_and_unbounded() {
        let d = base2_density();
        assert_eq!(cdf_n(&d, 0, 64).unwrap().value, Real::ratio(1, 2));
        assert_eq!(cdf_n(&d, 1, 64).unwrap().value, Real::one());
        let g = Density::gauss();
        for n in 0..3 {
            let b = cdf_n(&g, n, 40).unwrap();
            let upper = b.value.to_f64() + b.tail.to_f64();
            assert!(upper < 1.0, "P(N <= {n}) must stay below 1, got {upper}");
        }
    }

    #[test]
    fn pmf_s_sums_to_cdf_n() {
        let d = base2_density();
        // Sum of P(S = prefix) over depths 0..=1 equals P(N <= 1).
        let mut total = pmf_s(&d, &[]).unwrap();
        for k in 0..2u64 {
            total = total + pmf_s(&d, &digits(&[k])).unwrap();
        }
        assert_eq!(total, Real::one());
    }

    #[test]
    fn conditional_cdf() {
        let d = base2_density();
        let x = Real::ratio(3, 10);
        let c0 = cdf_n_given_x(&d, &x, 0).unwrap();
        assert_eq!(c0, Real::ratio(1, 3));
        let c1 = cdf_n_given_x(&d, &x, 1).unwrap();
        assert_eq!(c1, Real::one());
        let u = Density::uniform(Scheme::base_q(2).unwrap()).unwrap();
        assert_eq!(cdf_n_given_x(&u, &x, 0).unwrap(), Real::one());
    }

    #[test]
    fn gauss_conditional_cdf_monotone_to_one() {
        let d = Density::gauss();
        let x = Real::parse("sqrt2-1").unwrap();
        let f = crate::density::gauss_pdf(x.to_f64());
        let mut last = 0.0;
        for n in 0..8 {
            let c = cdf_n_given_x(&d, &x, n).unwrap().to_f64();
            assert!(c >= last - 1e-15, "non-decreasing");
            last = c;
        }
        assert!(last > 0.9 && last <= 1.0 + 1e-12);
        let _ = f;
    }

    #[test]
    fn uniform_draws_have_n_zero_and_u_equal_x() {
        let u = Density::uniform(Scheme::base_q(10).unwrap()).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        for _ in 0..200 {
            let draw = sample_coupled(&u, &mut rng).unwrap();
            assert_eq!(draw.n, 0);
            assert!(draw.s.is_empty());
            assert!((draw.u - draw.x).abs() < 1e-15);
        }
    }

    #[test]
    fn base2_empirical_n_frequencies() {
        let d = base2_density();
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let trials = 20_000;
        let mut n0 = 0usize;
        for _ in 0..trials {
            let draw = sample_coupled(&d, &mut rng).unwrap();
            assert!(draw.n <= 1);
            if draw.n == 0 {
                n0 += 1;
            }
        }
        let p0 = n0 as f64 / trials as f64;
        assert!((p0 - 0.5).abs() < 0.02, "P(N=0) was {p0}");
    }

    #[test]
    fn residual_law_examples() {
        let s10 = Scheme::base_q(10).unwrap();
        let law = residual_law(&s10, &[], 1, usize::MAX).unwrap();
        for (_, p) in &law.entries {
            assert_eq!(*p, Real::ratio(1, 10));
        }
        let pg = Scheme::pseudo_golden(2).unwrap();
        let law = residual_law(&pg, &digits(&[0, 1]), 1, usize::MAX).unwrap();
        assert_eq!(law.entries.len(), 1);
        assert_eq!(law.entries[0].0, digits(&[0]));
        assert!((law.entries[0].1.to_f64() - 1.0).abs() < 1e-14);
        let cf = Scheme::continued_fraction();
        let law = residual_law(&cf, &[], 1, 5).unwrap();
        assert_eq!(law.prob_of(&digits(&[2])), Real::ratio(1, 6));
    }

    #[test]
    fn conditioning_on_null_rejected() {
        let pg = Scheme::pseudo_golden(2).unwrap();
        assert!(matches!(
            residual_law(&pg, &digits(&[1, 1]), 1, 8),
            Err(Error::ConditioningOnNull)
        ));
    }

    #[test]
    fn extension_sampling_respects_admissibility() {
        let pg = Scheme::pseudo_golden(2).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        for _ in 0..50 {
            let ext = sample_extension(&pg, &digits(&[1]), 6, &mut rng).unwrap();
            let mut all = digits(&[1]);
            all.extend(ext);
            for w in all.windows(2) {
                assert!(!(w[0] == Digit(1) && w[1] == Digit(1)));
            }
        }
    }
}
