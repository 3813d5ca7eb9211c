//! Probability densities over a scheme's root interval: piecewise
//! constant on depth-d cells, or closed-form with declared per-cell
//! monotonicity (the Gauss density).

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::Real;
use crate::scheme::{format_digits, Digit, DigitSeq, Scheme, SchemeConfig};

/// Tolerance for normalization checks in non-exact arithmetic.
pub const NORMALIZATION_TOL: f64 = 1e-12;

/// Absolute x-tolerance for inverse-CDF bisection on closed-form
/// densities.
pub const BISECTION_TOL: f64 = 1e-14;

#[derive(Clone, Debug)]
pub(crate) enum Form {
    Piecewise {
        depth: usize,
        /// Positive-length depth-d prefixes in lexicographic order,
        /// with the density value on each cell.
        cells: Vec<(DigitSeq, Real)>,
    },
    /// 1/((1+x) ln 2) on (0,1]; decreasing on every cell, so cell
    /// infima sit at right endpoints.
    Gauss,
}

/// A PDF paired with the scheme whose cells it is measured against.
#[derive(Clone, Debug)]
pub struct Density {
    scheme: Scheme,
    pub(crate) form: Form,
}

impl Density {
    /// Piecewise-constant density: one value per positive-length
    /// depth-`depth` prefix, in lexicographic prefix order.
    pub fn piecewise(scheme: Scheme, depth: usize, values: Vec<Real>) -> Result<Density> {
        let prefixes = scheme.admissible_prefixes(depth, usize::MAX)?;
        if scheme.alphabet_size().is_none() {
            return Err(Error::UnsupportedScheme(
                "piecewise densities need a finite alphabet; use a closed form instead".into(),
            ));
        }
        if prefixes.len() != values.len() {
            return Err(Error::Config(format!(
                "expected {} cell values at depth {depth}, got {}",
                prefixes.len(),
                values.len()
            )));
        }
        let mut mass = Real::zero();
        for (prefix, v) in prefixes.iter().zip(&values) {
            if v.sign() == std::cmp::Ordering::Less {
                return Err(Error::Config(format!(
                    "negative density value on cell {}",
                    format_digits(prefix)
                )));
            }
            let cell = scheme.cell(prefix)?;
            mass = mass + v.clone() * cell.length;
        }
        let err = (mass - Real::one()).abs();
        let exact_ok = err.is_zero();
        if !exact_ok && err.to_f64() > NORMALIZATION_TOL {
            return Err(Error::Config(format!(
                "piecewise values integrate to 1{:+e}, not 1",
                err.to_f64()
            )));
        }
        let cells = prefixes.into_iter().zip(values).collect();
        Ok(Density {
            scheme,
            form: Form::Piecewise { depth, cells },
        })
    }

    /// Uniform density on the root interval (depth-0 piecewise).
    pub fn uniform(scheme: Scheme) -> Result<Density> {
        Density::piecewise(scheme, 0, vec![Real::one()])
    }

    /// The Gauss measure density on the continued-fraction scheme.
    pub fn gauss() -> Density {
        Density {
            scheme: Scheme::continued_fraction(),
            form: Form::Gauss,
        }
    }

    pub fn scheme(&self) -> &Scheme {
        &self.scheme
    }

    pub fn is_piecewise(&self) -> bool {
        matches!(self.form, Form::Piecewise { .. })
    }

    pub fn piecewise_depth(&self) -> Option<usize> {
        match &self.form {
            Form::Piecewise { depth, .. } => Some(*depth),
            Form::Gauss => None,
        }
    }

    pub fn piecewise_cells(&self) -> Option<&[(DigitSeq, Real)]> {
        match &self.form {
            Form::Piecewise { cells, .. } => Some(cells),
            Form::Gauss => None,
        }
    }

    /// Range of the lex-ordered cell table descending from `prefix`.
    pub(crate) fn descendant_range(&self, prefix: &[Digit]) -> std::ops::Range<usize> {
        let Form::Piecewise { cells, .. } = &self.form else {
            return 0..0;
        };
        let cmp_head = |cell: &DigitSeq| {
            let head = &cell[..prefix.len().min(cell.len())];
            head.cmp(prefix)
        };
        let lo = cells.partition_point(|(c, _)| cmp_head(c) == std::cmp::Ordering::Less);
        let hi = cells.partition_point(|(c, _)| cmp_head(c) != std::cmp::Ordering::Greater);
        lo..hi
    }

    /// Density value on the cell of a prefix at least as deep as the
    /// piecewise depth.
    pub fn value_on_cell(&self, prefix: &[Digit]) -> Result<Real> {
        match &self.form {
            Form::Piecewise { depth, cells } => {
                if prefix.len() < *depth {
                    return Err(Error::UnsupportedDepth(format!(
                        "cell value needs a prefix of depth >= {depth}"
                    )));
                }
                let head = &prefix[..*depth];
                let range = self.descendant_range(head);
                if range.is_empty() {
                    // Zero-length ancestor: the density puts no mass here.
                    Ok(Real::zero())
                } else {
                    Ok(cells[range.start].1.clone())
                }
            }
            Form::Gauss => Err(Error::UnsupportedDepth(
                "closed-form density has no cell values".into(),
            )),
        }
    }

    /// Evaluate f at a point.
    pub fn eval(&self, x: &Real) -> Result<Real> {
        match &self.form {
            Form::Piecewise { depth, .. } => {
                let digits = self.scheme.digits_of(x, *depth)?;
                self.value_on_cell(&digits)
            }
            Form::Gauss => Ok(Real::from_f64(gauss_pdf(x.to_f64()))),
        }
    }

    pub fn eval_f64(&self, x: f64) -> Result<f64> {
        Ok(self.eval(&Real::from_f64(x))?.to_f64())
    }

    /// Mass the density assigns to the cell of `prefix`.
    pub fn cell_mass(&self, prefix: &[Digit]) -> Result<Real> {
        match &self.form {
            Form::Piecewise { depth, cells } => {
                if prefix.len() >= *depth {
                    let v = self.value_on_cell(prefix)?;
                    Ok(v * self.scheme.cell(prefix)?.length)
                } else {
                    let range = self.descendant_range(prefix);
                    let mut mass = Real::zero();
                    for (key, v) in &cells[range] {
                        mass = mass + v.clone() * self.scheme.cell(key)?.length;
                    }
                    Ok(mass)
                }
            }
            Form::Gauss => {
                let cell = self.scheme.cell(prefix)?;
                Ok(Real::from_f64(gauss_cell_mass(
                    cell.left.to_f64(),
                    cell.right().to_f64(),
                )))
            }
        }
    }

    /// Draw one point distributed as the density. Piecewise densities
    /// pick a depth-d cell by mass and place the point uniformly in it,
    /// also returning the cell's digits; the Gauss density inverts its
    /// CDF by bisection.
    pub fn sample_with_digits(&self, rng: &mut impl Rng) -> Result<(f64, DigitSeq)> {
        match &self.form {
            Form::Piecewise { cells, .. } => {
                let u: f64 = rng.sample(rand::distributions::Open01);
                let mut acc = 0.0;
                let mut pick = cells.len() - 1;
                for (i, (key, v)) in cells.iter().enumerate() {
                    acc += v.to_f64() * self.scheme.cell(key)?.length.to_f64();
                    if u < acc {
                        pick = i;
                        break;
                    }
                }
                let key = cells[pick].0.clone();
                let cell = self.scheme.cell(&key)?;
                let w: f64 = rng.sample(rand::distributions::Open01);
                let x = cell.left.to_f64() + w * cell.length.to_f64();
                Ok((x, key))
            }
            Form::Gauss => {
                let u: f64 = rng.sample(rand::distributions::Open01);
                let (mut lo, mut hi) = (0.0f64, 1.0f64);
                while hi - lo > BISECTION_TOL {
                    let mid = 0.5 * (lo + hi);
                    if gauss_cdf(mid) < u {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                Ok((0.5 * (lo + hi), Vec::new()))
            }
        }
    }
}

pub fn gauss_pdf(x: f64) -> f64 {
    1.0 / (std::f64::consts::LN_2 * (1.0 + x))
}

pub fn gauss_cdf(x: f64) -> f64 {
    (1.0 + x).log2()
}

fn gauss_cell_mass(left: f64, right: f64) -> f64 {
    ((1.0 + right) / (1.0 + left)).log2()
}

/// JSON-facing density description.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DensityConfig {
    Piecewise {
        scheme: SchemeConfig,
        depth: usize,
        values: Vec<String>,
    },
    Gauss,
}

impl DensityConfig {
    pub fn build(&self) -> Result<Density> {
        match self {
            DensityConfig::Piecewise {
                scheme,
                depth,
                values,
            } => {
                let scheme = scheme.build()?;
                let values = values
                    .iter()
                    .map(|s| Real::parse(s))
                    .collect::<Result<Vec<_>>>()?;
                Density::piecewise(scheme, *depth, values)
            }
            DensityConfig::Gauss => Ok(Density::gauss()),
        }
    }

    /// Compact form: `gauss`, `uniform`, `piecewise:DEPTH:v1,v2,...`
    /// (scheme taken from context), or inline JSON.
    pub fn parse_compact(s: &str, scheme: Option<&SchemeConfig>) -> Result<DensityConfig> {
        let s = s.trim();
        if s.starts_with('{') {
            return serde_json::from_str(s).map_err(|e| Error::Config(e.to_string()));
        }
        let need_scheme = || {
            scheme
                .cloned()
                .ok_or_else(|| Error::Config("piecewise density needs --scheme".into()))
        };
        if s == "gauss" {
            return Ok(DensityConfig::Gauss);
        }
        if s == "uniform" {
            return Ok(DensityConfig::Piecewise {
                scheme: need_scheme()?,
                depth: 0,
                values: vec!["1".into()],
            });
        }
        let mut parts = s.splitn(3, ':');
        match parts.next() {
            Some("piecewise") => {
                let depth = parts
                    .next()
                    .and_then(|p| p.parse().ok())
                    .ok_or_else(|| Error::Config("piecewise needs a depth".into()))?;
                let values = parts
                    .next()
                    .ok_or_else(|| Error::Config("piecewise needs cell values".into()))?
                    .split(',')
                    .map(|v| v.trim().to_string())
                    .collect();
                Ok(DensityConfig::Piecewise {
                    scheme: need_scheme()?,
                    depth,
                    values,
                })
            }
            other => Err(Error::Config(format!("unknown density {other:?}"))),
        }
    }
}

/// Turn an f64 weight vector into exact cell values for a piecewise
/// density (weights are normalized against the cell lengths).
pub fn values_from_weights(scheme: &Scheme, depth: usize, weights: &[f64]) -> Result<Vec<Real>> {
    let prefixes = scheme.admissible_prefixes(depth, usize::MAX)?;
    if prefixes.len() != weights.len() {
        return Err(Error::Config(format!(
            "expected {} weights, got {}",
            prefixes.len(),
            weights.len()
        )));
    }
    let total: f64 = weights.iter().sum();
    let mut values = Vec::with_capacity(weights.len());
    for (prefix, w) in prefixes.iter().zip(weights) {
        let len = scheme.cell(prefix)?.length;
        let frac = Real::from_f64(w / total);
        values.push(frac / len);
    }
    Ok(values)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn piecewise_normalization_enforced() {
        let s = Scheme::base_q(2).unwrap();
        let ok = Density::piecewise(s.clone(), 1, vec![Real::ratio(3, 2), Real::ratio(1, 2)]);
        assert!(ok.is_ok());
        let bad = Density::piecewise(s.clone(), 1, vec![Real::ratio(3, 2), Real::ratio(3, 2)]);
        assert!(bad.is_err());
        let neg = Density::piecewise(s, 1, vec![Real::ratio(5, 2), Real::ratio(-1, 2)]);
        assert!(neg.is_err());
    }

    #[test]
    fn eval_picks_the_right_cell() {
        let s = Scheme::base_q(2).unwrap();
        let d = Density::piecewise(s, 1, vec![Real::ratio(3, 2), Real::ratio(1, 2)]).unwrap();
        assert_eq!(d.eval(&Real::ratio(3, 10)).unwrap(), Real::ratio(3, 2));
        assert_eq!(d.eval(&Real::ratio(7, 10)).unwrap(), Real::ratio(1, 2));
        assert_eq!(d.cell_mass(&[]).unwrap(), Real::one());
        assert_eq!(d.cell_mass(&[Digit(0)]).unwrap(), Real::ratio(3, 4));
    }

    #[test]
    fn pseudo_golden_piecewise_skips_dead_cells() {
        let s = Scheme::pseudo_golden(2).unwrap();
        // Depth 2 admissible prefixes: 00, 01, 10 (11 has zero length).
        let prefixes = s.admissible_prefixes(2, usize::MAX).unwrap();
        assert_eq!(prefixes.len(), 3);
        // Renormalize weights (2, 1) over the two level-1 cells.
        let values = values_from_weights(&s, 1, &[2.0, 1.0]).unwrap();
        let d = Density::piecewise(s, 1, values).unwrap();
        let v0 = d.eval_f64(0.1).unwrap();
        let v1 = d.eval_f64(0.9).unwrap();
        let beta = (1.0 + 5f64.sqrt()) / 2.0;
        assert!((v0 / v1 - 2.0 * (1.0 - 1.0 / beta) / (1.0 / beta)).abs() < 1e-9);
        // Unnormalized values must be rejected.
        let bad = Density::piecewise(
            Scheme::pseudo_golden(2).unwrap(),
            1,
            vec![Real::from_f64(0.8), Real::from_f64(0.8)],
        );
        assert!(bad.is_err());
    }

    #[test]
    fn gauss_density_basics() {
        let d = Density::gauss();
        let f1 = d.eval_f64(0.5).unwrap();
        assert!((f1 - 1.0 / (1.5 * std::f64::consts::LN_2)).abs() < 1e-15);
        let mass = d.cell_mass(&[Digit(1)]).unwrap().to_f64();
        // P(first digit 1) = log2(4/3) under the Gauss measure.
        assert!((mass - (4f64 / 3.0).log2()).abs() < 1e-12);
    }

    #[test]
    fn gauss_sampler_matches_cdf() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(7);
        let d = Density::gauss();
        let n = 20_000;
        let below: usize = (0..n)
            .filter(|_| d.sample_with_digits(&mut rng).unwrap().0 < 0.5)
            .count();
        let expect = gauss_cdf(0.5);
        assert!((below as f64 / n as f64 - expect).abs() < 0.01);
    }

    #[test]
    fn weights_to_values_normalizes() {
        let s = Scheme::base_q(3).unwrap();
        let vals = values_from_weights(&s, 1, &[2.0, 1.0, 1.0]).unwrap();
        let d = Density::piecewise(s, 1, vals).unwrap();
        assert!((d.eval_f64(0.1).unwrap() - 1.5).abs() < 1e-12);
    }
}
