//! Order-s residual Markov chain: state space, transition matrix from
//! length ratios, invariant distribution, the shift-invariant density,
//! and ergodicity diagnostics.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::density::Density;
use crate::error::{Error, Result};
use crate::real::Real;
use crate::scheme::{format_digits, Digit, DigitSeq, Scheme};

const ROW_SUM_TOL: f64 = 1e-12;
const INVARIANT_TOL: f64 = 1e-12;

/// Residual digit chain of order `s`: states are the positive-length
/// s-tuples, transitions are cell-length ratios.
#[derive(Clone, Debug)]
pub struct ResidualChain {
    pub s: usize,
    pub omega: Vec<DigitSeq>,
    /// Row-stochastic; `p[(x1..xs),(y1..ys)]` vanishes unless `y` is the
    /// left shift of `x`.
    pub p: DMatrix<f64>,
    pub scheme: Scheme,
    /// Per state: successors as (digit, cumulative probability, state
    /// index) in ascending digit order; drives the SRS inverse CDF.
    pub(crate) steps: Vec<Vec<(Digit, f64, usize)>>,
}

/// Probability vector over the chain's state space.
#[derive(Clone, Debug)]
pub struct StatePmf {
    pub weights: Vec<f64>,
}

impl StatePmf {
    fn validate(&self) -> Result<()> {
        if self.weights.iter().any(|w| *w < -ROW_SUM_TOL) {
            return Err(Error::InvalidParameter("negative state weight".into()));
        }
        let sum: f64 = self.weights.iter().sum();
        if (sum - 1.0).abs() > ROW_SUM_TOL {
            return Err(Error::InvalidParameter(format!(
                "state weights sum to {sum}, not 1"
            )));
        }
        Ok(())
    }
}

/// Build the order-s chain from cell-length ratios
/// p = l(x1..xs,k) / l(x1..xs).
pub fn build_chain(scheme: &Scheme, s: usize) -> Result<ResidualChain> {
    if s == 0 {
        return Err(Error::InvalidParameter(
            "chain order must be positive; order 0 means IID digits".into(),
        ));
    }
    if scheme.alphabet_size().is_none() {
        return Err(Error::UnsupportedScheme(
            "countable alphabet: the length ratios depend on every digit, \
             so no finite-order chain exists"
                .into(),
        ));
    }
    let omega = scheme.admissible_prefixes(s, usize::MAX)?;
    if omega.is_empty() {
        return Err(Error::InvalidParameter("empty state space".into()));
    }
    let index = |state: &[Digit]| omega.iter().position(|o| o == state);
    let m = omega.len();
    let mut p = DMatrix::zeros(m, m);
    let mut steps = Vec::with_capacity(m);
    for (i, state) in omega.iter().enumerate() {
        let own = scheme.cell(state)?.length;
        let mut row_steps = Vec::new();
        let mut cum = 0.0;
        for (d, cell) in scheme.children(state, usize::MAX)? {
            let ratio = (cell.length / own.clone()).to_f64();
            let mut succ = state[1..].to_vec();
            succ.push(d);
            let j = index(&succ).ok_or_else(|| {
                Error::InvalidParameter(format!(
                    "successor {} of {} missing from the state space",
                    format_digits(&succ),
                    format_digits(state)
                ))
            })?;
            p[(i, j)] = ratio;
            cum += ratio;
            row_steps.push((d, cum, j));
        }
        let total: f64 = row_steps.last().map(|r| r.1).unwrap_or(0.0);
        if (total - 1.0).abs() > ROW_SUM_TOL {
            return Err(Error::InvalidParameter(format!(
                "row {} sums to {total}",
                format_digits(state)
            )));
        }
        steps.push(row_steps);
    }
    Ok(ResidualChain {
        s,
        omega,
        p,
        scheme: scheme.clone(),
        steps,
    })
}

impl ResidualChain {
    /// Assemble a chain directly from a matrix; used for diagnostics on
    /// hand-built kernels (the scheme is only carried along).
    pub fn from_matrix(scheme: Scheme, s: usize, omega: Vec<DigitSeq>, p: DMatrix<f64>) -> Result<ResidualChain> {
        if p.nrows() != omega.len() || p.ncols() != omega.len() {
            return Err(Error::InvalidParameter("matrix does not match state count".into()));
        }
        let mut steps = Vec::with_capacity(omega.len());
        for i in 0..omega.len() {
            let mut cum = 0.0;
            let mut row = Vec::new();
            for j in 0..omega.len() {
                if p[(i, j)] > 0.0 {
                    cum += p[(i, j)];
                    let d = *omega[j].last().expect("non-empty state");
                    row.push((d, cum, j));
                }
            }
            steps.push(row);
        }
        Ok(ResidualChain { s, omega, p, scheme, steps })
    }

    pub fn state_index(&self, state: &[Digit]) -> Option<usize> {
        self.omega.iter().position(|o| o == state)
    }

    pub fn size(&self) -> usize {
        self.omega.len()
    }
}

/// True iff consecutive-length ratios up to `depth` depend only on the
/// trailing s+1 digits. Exact comparison in rational mode, 1e-10
/// otherwise; countable alphabets are probed over small digits.
pub fn verify_markov_order(scheme: &Scheme, s: usize, depth: usize) -> Result<bool> {
    let max_digits = if scheme.alphabet_size().is_some() {
        usize::MAX
    } else {
        4
    };
    // Expected ratio per trailing (s+1)-window, memoized.
    let mut expected: std::collections::HashMap<DigitSeq, Option<Real>> =
        std::collections::HashMap::new();
    let mut lookup = |window: &[Digit]| -> Result<Option<Real>> {
        if let Some(hit) = expected.get(window) {
            return Ok(hit.clone());
        }
        let head_len = scheme.cell(&window[..s])?.length;
        let value = if head_len.is_zero() {
            None
        } else {
            Some(scheme.cell(window)?.length / head_len)
        };
        expected.insert(window.to_vec(), value.clone());
        Ok(value)
    };

    // Depth-first walk carrying the branch length and trailing window.
    struct Frame {
        state: crate::scheme::WalkState,
        length: Real,
        window: DigitSeq,
        depth: usize,
    }
    let root = scheme.walk_root();
    let mut stack = vec![Frame {
        length: scheme.walk_length(&root),
        state: root,
        window: Vec::new(),
        depth: 0,
    }];
    while let Some(frame) = stack.pop() {
        if frame.depth == depth {
            continue;
        }
        for (d, child) in scheme.walk_children(&frame.state, max_digits) {
            let child_len = scheme.walk_length(&child);
            if child_len.is_zero() {
                continue;
            }
            let mut window = frame.window.clone();
            window.push(d);
            if window.len() > s + 1 {
                window.remove(0);
            }
            if frame.depth + 1 >= s + 2 {
                let ratio = child_len.clone() / frame.length.clone();
                let Some(expect) = lookup(&window)? else {
                    return Ok(false);
                };
                let gap = ratio - expect;
                let equal = if scheme.is_exact() {
                    gap.is_zero()
                } else {
                    gap.abs().to_f64() < 1e-10
                };
                if !equal {
                    return Ok(false);
                }
            }
            stack.push(Frame {
                state: child,
                length: child_len,
                window,
                depth: frame.depth + 1,
            });
        }
    }
    Ok(true)
}

/// Smallest order `s <= 4` passing the ratio check at the given depth;
/// a convenience diagnostic, never used to build chains implicitly.
pub fn suggest_order(scheme: &Scheme, depth: usize) -> Result<Option<usize>> {
    for s in 0..=4usize {
        if depth < s + 2 {
            break;
        }
        if verify_markov_order(scheme, s, depth)? {
            return Ok(Some(s));
        }
    }
    Ok(None)
}

/// Strongly-connected reachability of the positive-entry digraph.
fn is_irreducible(p: &DMatrix<f64>) -> bool {
    let m = p.nrows();
    let reach = |start: usize, transpose: bool| -> Vec<bool> {
        let mut seen = vec![false; m];
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(i) = stack.pop() {
            for j in 0..m {
                let w = if transpose { p[(j, i)] } else { p[(i, j)] };
                if w > 0.0 && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen
    };
    reach(0, false).iter().all(|&b| b) && reach(0, true).iter().all(|&b| b)
}

/// Gcd of cycle lengths through state 0, via BFS levels.
fn period(p: &DMatrix<f64>) -> usize {
    let m = p.nrows();
    let mut level = vec![None::<usize>; m];
    level[0] = Some(0);
    let mut queue = std::collections::VecDeque::from([0usize]);
    let mut g = 0usize;
    while let Some(i) = queue.pop_front() {
        for j in 0..m {
            if p[(i, j)] <= 0.0 {
                continue;
            }
            match level[j] {
                None => {
                    level[j] = Some(level[i].unwrap() + 1);
                    queue.push_back(j);
                }
                Some(lj) => {
                    let diff = (level[i].unwrap() + 1).abs_diff(lj);
                    if diff > 0 {
                        g = gcd(g, diff);
                    }
                }
            }
        }
    }
    if g == 0 {
        // No off-level edge found: every cycle length is a multiple of
        // the full loop; fall back to the self-loop check.
        m
    } else {
        g
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if a == 0 {
        b
    } else {
        gcd(b % a, a)
    }
}

/// Unique invariant PMF, by solving the balance equations with one row
/// replaced by normalization; falls back to power iteration when the
/// solve is ill-conditioned.
pub fn invariant_pmf(chain: &ResidualChain) -> Result<StatePmf> {
    if !is_irreducible(&chain.p) {
        return Err(Error::NoUniqueInvariant);
    }
    let m = chain.size();
    // (P^T - I) pi = 0 with the last equation replaced by sum = 1.
    let mut a = chain.p.transpose() - DMatrix::<f64>::identity(m, m);
    for j in 0..m {
        a[(m - 1, j)] = 1.0;
    }
    let mut b = DVector::zeros(m);
    b[m - 1] = 1.0;
    let solved = a.lu().solve(&b);
    let weights = match solved {
        Some(v) if residual_l1(&chain.p, v.as_slice()) <= INVARIANT_TOL => v.as_slice().to_vec(),
        _ => power_iteration(&chain.p, 100_000, 1e-15),
    };
    let pmf = StatePmf { weights };
    pmf.validate()?;
    if residual_l1(&chain.p, &pmf.weights) > INVARIANT_TOL {
        return Err(Error::InvalidParameter(
            "invariant solve failed to converge".into(),
        ));
    }
    Ok(pmf)
}

fn residual_l1(p: &DMatrix<f64>, pi: &[f64]) -> f64 {
    let m = p.nrows();
    let mut err = 0.0;
    for j in 0..m {
        let mut acc = 0.0;
        for i in 0..m {
            acc += pi[i] * p[(i, j)];
        }
        err += (acc - pi[j]).abs();
    }
    err
}

pub fn power_iteration(p: &DMatrix<f64>, max_iter: usize, tol: f64) -> Vec<f64> {
    let m = p.nrows();
    let mut pi = vec![1.0 / m as f64; m];
    for _ in 0..max_iter {
        let mut next = vec![0.0; m];
        for i in 0..m {
            for j in 0..m {
                next[j] += pi[i] * p[(i, j)];
            }
        }
        let total: f64 = next.iter().sum();
        for w in &mut next {
            *w /= total;
        }
        let delta: f64 = next
            .iter()
            .zip(&pi)
            .map(|(a, b)| (a - b).abs())
            .sum();
        pi = next;
        if delta < tol {
            break;
        }
    }
    pi
}

/// The piecewise density at depth s with value pi/l on each state cell;
/// shift invariant exactly when pi is P-invariant.
pub fn f_inv_density(chain: &ResidualChain, pi: &StatePmf) -> Result<Density> {
    pi.validate()?;
    let mut values = Vec::with_capacity(chain.size());
    for (state, w) in chain.omega.iter().zip(&pi.weights) {
        let len = chain.scheme.cell(state)?.length;
        values.push(Real::from_f64(*w) / len);
    }
    Density::piecewise(chain.scheme.clone(), chain.s, values)
}

/// Law of the first s residual digits given S = prefix, per the two
/// cases n >= s and n < s of the initialization formula.
pub fn initial_distribution(chain: &ResidualChain, prefix: &[Digit]) -> Result<StatePmf> {
    let scheme = &chain.scheme;
    let pre_len = scheme.cell(prefix)?.length;
    if pre_len.is_zero() {
        return Err(Error::ConditioningOnNull);
    }
    let n = prefix.len();
    let s = chain.s;
    let mut weights = vec![0.0; chain.size()];
    for (idx, state) in chain.omega.iter().enumerate() {
        let mut combined = prefix.to_vec();
        combined.extend_from_slice(state);
        let prob = if n >= s {
            // Product of transition probabilities along the windows
            // sliding off the end of the prefix into the new digits.
            let mut acc = 1.0;
            for j in 0..s {
                let from = &combined[n - s + j..n + j];
                let to = &combined[n - s + j + 1..n + j + 1];
                let (Some(a), Some(b)) = (chain.state_index(from), chain.state_index(to)) else {
                    acc = 0.0;
                    break;
                };
                acc *= chain.p[(a, b)];
            }
            acc
        } else {
            // l(x_1..x_s) / l(prefix) times the transitions that start
            // inside the prefix.
            let head = &combined[..s];
            let head_len = scheme.cell(head)?.length;
            if head_len.is_zero() {
                0.0
            } else {
                let mut acc = (head_len / pre_len.clone()).to_f64();
                for j in 0..n {
                    let from = &combined[j..j + s];
                    let to = &combined[j + 1..j + s + 1];
                    let (Some(a), Some(b)) = (chain.state_index(from), chain.state_index(to))
                    else {
                        acc = 0.0;
                        break;
                    };
                    acc *= chain.p[(a, b)];
                }
                acc
            }
        };
        weights[idx] = prob;
    }
    let pmf = StatePmf { weights };
    pmf.validate()?;
    Ok(pmf)
}

/// Worst-start total variation distance to `pi` after `i` steps.
pub fn tv_to_invariant(chain: &ResidualChain, pi: &StatePmf, i: usize) -> Result<f64> {
    if i == 0 {
        return Err(Error::InvalidParameter("step count must be positive".into()));
    }
    let mut power = chain.p.clone();
    for _ in 1..i {
        power *= &chain.p;
    }
    let mut worst = 0.0f64;
    for z in 0..chain.size() {
        let mut tv = 0.0;
        for w in 0..chain.size() {
            tv += (power[(z, w)] - pi.weights[w]).abs();
        }
        worst = worst.max(0.5 * tv);
    }
    Ok(worst)
}

/// Ergodicity certificate: graph irreducibility and aperiodicity plus a
/// fitted geometric envelope sup_z TV(P^i(z,.), pi) <= alpha * beta^i
/// verified over i = 1..=50. The fit is empirical, not a proof.
#[derive(Clone, Debug, Serialize)]
pub struct ErgodicityReport {
    pub ergodic: bool,
    pub irreducible: bool,
    pub aperiodic: bool,
    pub alpha: f64,
    pub beta: f64,
}

pub fn is_uniformly_ergodic(chain: &ResidualChain) -> Result<ErgodicityReport> {
    let irreducible = is_irreducible(&chain.p);
    let aperiodic = irreducible && period(&chain.p) == 1;
    if !(irreducible && aperiodic) {
        return Ok(ErgodicityReport {
            ergodic: false,
            irreducible,
            aperiodic,
            alpha: f64::NAN,
            beta: f64::NAN,
        });
    }
    let pi = invariant_pmf(chain)?;
    let tvs: Vec<f64> = (1..=50)
        .map(|i| tv_to_invariant(chain, &pi, i))
        .collect::<Result<_>>()?;
    let tv1 = tvs[0];
    if tv1 <= 1e-15 {
        return Ok(ErgodicityReport {
            ergodic: true,
            irreducible,
            aperiodic,
            alpha: 0.0,
            beta: 0.0,
        });
    }
    let mut beta = 0.0f64;
    for (idx, tv) in tvs.iter().enumerate().skip(1) {
        if *tv > 1e-300 {
            beta = beta.max((tv / tv1).powf(1.0 / idx as f64));
        }
    }
    let beta = beta.min(0.999_999);
    let alpha = if beta > 0.0 { tv1 / beta } else { tv1 };
    for (idx, tv) in tvs.iter().enumerate() {
        let bound = alpha * beta.powi(idx as i32 + 1);
        if *tv > bound + 1e-12 {
            return Err(Error::InvalidParameter(format!(
                "geometric envelope violated at step {}",
                idx + 1
            )));
        }
    }
    Ok(ErgodicityReport {
        ergodic: true,
        irreducible,
        aperiodic,
        alpha,
        beta,
    })
}

/// The paper's sufficient aperiodicity condition on cell lengths:
/// every 2s- and (2s+1)-tuple has positive length. Strictly stronger
/// than the graph check, which stays authoritative.
pub fn aperiodicity_sufficient_condition(scheme: &Scheme, s: usize) -> Result<bool> {
    let full = |depth: usize| -> Result<bool> {
        let count = scheme.admissible_prefixes(depth, usize::MAX)?.len();
        let expect = (scheme.alphabet_size().unwrap_or(0) as usize).pow(depth as u32);
        Ok(count == expect)
    };
    Ok(full(2 * s)? && full(2 * s + 1)?)
}

/// JSON export of a chain: states, dense row-major matrix, invariant
/// weights.
#[derive(Clone, Debug, Serialize)]
pub struct ChainExport {
    pub s: usize,
    pub omega: Vec<String>,
    pub p_row_major: Vec<f64>,
    pub pi_inv: Option<Vec<f64>>,
}

pub fn export_chain(chain: &ResidualChain) -> ChainExport {
    let pi = invariant_pmf(chain).ok().map(|p| p.weights);
    ChainExport {
        s: chain.s,
        omega: chain.omega.iter().map(|o| format_digits(o)).collect(),
        p_row_major: chain.p.transpose().as_slice().to_vec(),
        pi_inv: pi,
    }
}
