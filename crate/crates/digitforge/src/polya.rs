//! Mixture-of-finite-Pólya-tree random densities on a binary scheme:
//! independent Beta splitting variables down to a depth cap, a random
//! stopping level N, and uniform placement in the stopped cell.

use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::density::Density;
use crate::error::{Error, Result};
use crate::real::Real;
use crate::scheme::{format_digits, parse_digits, Digit, DigitSeq, Scheme, SchemeConfig};

/// Shape parameters for one node's Beta split. A zero component makes
/// the split deterministic: alpha0 = 0 pins y to 0, alpha1 = 0 pins y
/// to 1.
pub type AlphaPair = (f64, f64);

#[derive(Clone, Debug)]
pub struct PolyaParams {
    scheme: Scheme,
    depth_cap: usize,
    /// Stopping-level PMF on 0..=depth_cap.
    pmf_n: Vec<f64>,
    alpha_default: AlphaPair,
    alpha_by_level: Vec<AlphaPair>,
    alpha_overrides: HashMap<DigitSeq, AlphaPair>,
}

impl PolyaParams {
    pub fn new(
        scheme: Scheme,
        depth_cap: usize,
        pmf_n: Vec<f64>,
        alpha_default: AlphaPair,
        alpha_by_level: Vec<AlphaPair>,
        alpha_overrides: HashMap<DigitSeq, AlphaPair>,
    ) -> Result<PolyaParams> {
        if scheme.alphabet_size() != Some(2) {
            return Err(Error::InvalidParameter(
                "Polya tree parameters need a binary scheme".into(),
            ));
        }
        if pmf_n.len() != depth_cap + 1 {
            return Err(Error::InvalidParameter(format!(
                "stopping PMF needs {} entries for depth cap {depth_cap}",
                depth_cap + 1
            )));
        }
        if pmf_n.iter().any(|p| *p < 0.0) {
            return Err(Error::InvalidParameter("negative stopping mass".into()));
        }
        let total: f64 = pmf_n.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParameter(format!(
                "stopping PMF sums to {total}"
            )));
        }
        let params = PolyaParams {
            scheme,
            depth_cap,
            pmf_n,
            alpha_default,
            alpha_by_level,
            alpha_overrides,
        };
        // Validate every internal node's effective pair.
        for depth in 0..depth_cap {
            for prefix in params.scheme.admissible_prefixes(depth, usize::MAX)? {
                let (a0, a1) = params.alpha_at(&prefix)?;
                if a0 < 0.0 || a1 < 0.0 || a0 + a1 <= 0.0 {
                    return Err(Error::InvalidParameter(format!(
                        "invalid alpha pair ({a0}, {a1}) at node {}",
                        format_digits(&prefix)
                    )));
                }
            }
        }
        Ok(params)
    }

    pub fn scheme(&self) -> &Scheme {
        &self.scheme
    }

    pub fn depth_cap(&self) -> usize {
        self.depth_cap
    }

    pub fn pmf_n(&self) -> &[f64] {
        &self.pmf_n
    }

    /// Effective shape pair at an internal node: override, then
    /// per-level default, then the global default, with zero forced on
    /// the side of a zero-length child.
    pub fn alpha_at(&self, prefix: &[Digit]) -> Result<AlphaPair> {
        let (mut a0, mut a1) = self
            .alpha_overrides
            .get(prefix)
            .copied()
            .or_else(|| self.alpha_by_level.get(prefix.len()).copied())
            .unwrap_or(self.alpha_default);
        let mut child = prefix.to_vec();
        child.push(Digit(0));
        if self.scheme.cell(&child)?.length.is_zero() {
            a0 = 0.0;
        }
        *child.last_mut().expect("just pushed") = Digit(1);
        if self.scheme.cell(&child)?.length.is_zero() {
            a1 = 0.0;
        }
        Ok((a0, a1))
    }
}

/// One realization of the splitting variables: the probability of
/// child 0 at every positive-length internal node up to the cap.
#[derive(Clone, Debug)]
pub struct PolyaRealization {
    pub y: HashMap<DigitSeq, f64>,
}

impl PolyaRealization {
    pub fn prob_child0(&self, prefix: &[Digit]) -> Option<f64> {
        self.y.get(prefix).copied()
    }
}

/// Independent Beta draws per internal node; a zero shape parameter
/// collapses the draw to the opposite endpoint.
pub fn sample_realization(params: &PolyaParams, rng: &mut impl Rng) -> Result<PolyaRealization> {
    let mut y = HashMap::new();
    for depth in 0..params.depth_cap {
        for prefix in params.scheme.admissible_prefixes(depth, usize::MAX)? {
            let (a0, a1) = params.alpha_at(&prefix)?;
            let value = if a0 == 0.0 {
                0.0
            } else if a1 == 0.0 {
                1.0
            } else {
                let beta = Beta::new(a0, a1)
                    .map_err(|e| Error::InvalidParameter(format!("Beta({a0},{a1}): {e}")))?;
                beta.sample(rng)
            };
            y.insert(prefix, value);
        }
    }
    Ok(PolyaRealization { y })
}

/// The mixture density: on each depth-cap cell, the sum over stopping
/// levels n of P(N = n) times the Y-path probability of the level-n
/// ancestor divided by its cell length. Integrates to 1 by
/// construction.
pub fn random_density(params: &PolyaParams, real: &PolyaRealization) -> Result<Density> {
    let scheme = &params.scheme;
    let depth = params.depth_cap;
    let prefixes = scheme.admissible_prefixes(depth, usize::MAX)?;
    let mut values = Vec::with_capacity(prefixes.len());
    for prefix in &prefixes {
        let mut path_prob = 1.0f64;
        let mut value = params.pmf_n[0]; // n = 0 term: prob 1 over length 1.
        for n in 1..=depth {
            let node = &prefix[..n - 1];
            let y0 = real.prob_child0(node).ok_or_else(|| {
                Error::InvalidParameter(format!(
                    "realization misses node {}",
                    format_digits(node)
                ))
            })?;
            path_prob *= if prefix[n - 1] == Digit(0) { y0 } else { 1.0 - y0 };
            if params.pmf_n[n] > 0.0 {
                let len = scheme.cell(&prefix[..n])?.length.to_f64();
                if len > 0.0 {
                    value += params.pmf_n[n] * path_prob / len;
                }
            }
        }
        values.push(Real::from_f64(value));
    }
    Density::piecewise(scheme.clone(), depth, values)
}

/// Generative draw: stopping level from the PMF, digits by the Y
/// splits, then a uniform point in the stopped cell.
pub fn sample_x(
    params: &PolyaParams,
    real: &PolyaRealization,
    rng: &mut impl Rng,
) -> Result<(f64, usize, DigitSeq)> {
    let u: f64 = rng.sample(rand::distributions::Open01);
    let mut acc = 0.0;
    let mut n = params.depth_cap;
    for (level, p) in params.pmf_n.iter().enumerate() {
        acc += p;
        if u < acc {
            n = level;
            break;
        }
    }
    let mut digits: DigitSeq = Vec::with_capacity(n);
    for _ in 0..n {
        let y0 = real.prob_child0(&digits).ok_or_else(|| {
            Error::InvalidParameter(format!(
                "realization misses node {}",
                format_digits(&digits)
            ))
        })?;
        let v: f64 = rng.sample(rand::distributions::Open01);
        digits.push(if v < y0 { Digit(0) } else { Digit(1) });
    }
    let cell = params.scheme.cell(&digits)?;
    if cell.length.is_zero() {
        // Prevented by alpha zero-forcing.
        return Err(Error::EmptyCell {
            prefix: format_digits(&digits),
        });
    }
    let w: f64 = rng.sample(rand::distributions::Open01);
    let x = cell.left.to_f64() + w * cell.length.to_f64();
    Ok((x, n, digits))
}

/// Monte Carlo average of the random density over fresh realizations.
pub fn prior_predictive_mean_density(
    params: &PolyaParams,
    draws: usize,
    rng: &mut impl Rng,
) -> Result<Density> {
    if draws == 0 {
        return Err(Error::InvalidParameter("need at least one realization".into()));
    }
    let prefixes = params
        .scheme
        .admissible_prefixes(params.depth_cap, usize::MAX)?;
    let mut sums = vec![0.0f64; prefixes.len()];
    for _ in 0..draws {
        let real = sample_realization(params, rng)?;
        let density = random_density(params, &real)?;
        let cells = density.piecewise_cells().expect("piecewise by construction");
        for (slot, (_, v)) in sums.iter_mut().zip(cells) {
            *slot += v.to_f64();
        }
    }
    let values = sums
        .into_iter()
        .map(|s| Real::from_f64(s / draws as f64))
        .collect();
    Density::piecewise(params.scheme.clone(), params.depth_cap, values)
}

/// JSON-facing parameter set: sparse alphas with per-level defaults.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PolyaConfig {
    pub scheme: SchemeConfig,
    pub depth_cap: usize,
    pub pmf_n: Vec<f64>,
    #[serde(default = "default_alpha")]
    pub alpha_default: (f64, f64),
    #[serde(default)]
    pub alpha_by_level: Vec<(f64, f64)>,
    #[serde(default)]
    pub alpha_overrides: HashMap<String, (f64, f64)>,
}

fn default_alpha() -> (f64, f64) {
    (1.0, 1.0)
}

impl PolyaConfig {
    pub fn build(&self) -> Result<PolyaParams> {
        let scheme = self.scheme.build()?;
        let overrides = self
            .alpha_overrides
            .iter()
            .map(|(k, v)| Ok((parse_digits(k)?, *v)))
            .collect::<Result<HashMap<_, _>>>()?;
        PolyaParams::new(
            scheme,
            self.depth_cap,
            self.pmf_n.clone(),
            self.alpha_default,
            self.alpha_by_level.clone(),
            overrides,
        )
    }
}

/// Realization export keyed by dash-joined prefixes, for reproducing a
/// run.
pub fn realization_to_json(real: &PolyaRealization) -> serde_json::Value {
    let mut map = serde_json::Map::new();
    let mut keys: Vec<&DigitSeq> = real.y.keys().collect();
    keys.sort();
    for k in keys {
        map.insert(
            format_digits(k),
            serde_json::json!(real.y[k]),
        );
    }
    serde_json::Value::Object(map)
}
