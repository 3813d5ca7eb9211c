//! Wilson's read-once perfect sampler over the residual chain, and the
//! full coupling that produces the stationarity time K.
//!
//! One uniform stream is consumed strictly left to right and never
//! reused; blocks of length b = t + s - 1 sit at fixed offsets in it.

use rand::Rng;

use crate::coupling::{sample_coupled_capped, CouplingDraw, DEFAULT_DEPTH_CAP};
use crate::density::Density;
use crate::error::{Error, Result};
use crate::markov::ResidualChain;
use crate::scheme::{Digit, DigitSeq};

/// Default budget on drawn blocks before a run aborts.
pub const DEFAULT_BLOCK_BUDGET: usize = 10_000_000;

/// One stochastic-recursive-sequence update: shift the state and append
/// the digit picked by the generalized inverse CDF of the state's row,
/// digits taken in ascending numeric order.
pub fn srs_update(chain: &ResidualChain, state: &[Digit], v: f64) -> Result<DigitSeq> {
    let idx = chain
        .state_index(state)
        .ok_or_else(|| Error::InvalidParameter("state not in the chain's state space".into()))?;
    Ok(chain.omega[srs_step(chain, idx, v)].clone())
}

/// Index-level update used by the hot loops.
pub(crate) fn srs_step(chain: &ResidualChain, state: usize, v: f64) -> usize {
    let row = &chain.steps[state];
    for (_, cum, next) in row {
        if v <= *cum {
            return *next;
        }
    }
    // v exceeded the last cumulative value by rounding; take the top.
    row.last().expect("stochastic row is non-empty").2
}

/// Record of one block: the driving uniforms, the output map over all
/// input states, and whether every input coalesced to a common output.
#[derive(Clone, Debug)]
pub struct BlockRecord {
    pub t: usize,
    pub b: usize,
    pub uniforms: Vec<f64>,
    pub outputs: Vec<usize>,
    pub coalesced: bool,
    pub common_output: Option<usize>,
}

/// Run all |Omega| input states through the same b = t+s-1 uniforms.
pub fn gen_block(chain: &ResidualChain, t: usize, rng: &mut impl Rng) -> Result<BlockRecord> {
    if t < chain.s {
        return Err(Error::InvalidParameter(format!(
            "block parameter t = {t} must be at least the order s = {}",
            chain.s
        )));
    }
    let b = t + chain.s - 1;
    let uniforms: Vec<f64> = (0..b)
        .map(|_| rng.sample(rand::distributions::Open01))
        .collect();
    Ok(block_from_uniforms(chain, t, uniforms))
}

fn block_from_uniforms(chain: &ResidualChain, t: usize, uniforms: Vec<f64>) -> BlockRecord {
    let m = chain.size();
    let mut outputs: Vec<usize> = (0..m).collect();
    for &v in &uniforms {
        for out in &mut outputs {
            *out = srs_step(chain, *out, v);
        }
    }
    let coalesced = outputs.windows(2).all(|w| w[0] == w[1]);
    BlockRecord {
        t,
        b: uniforms.len(),
        common_output: coalesced.then(|| outputs[0]),
        uniforms,
        outputs,
        coalesced,
    }
}

/// How to estimate the coalescence probability of a block.
#[derive(Clone, Copy, Debug)]
pub enum EpsilonMode {
    /// Integrate coalescence exactly over the per-coordinate threshold
    /// partition; feasible only for small b * |Omega|.
    Exact,
    /// Average coalescence over freshly drawn blocks.
    MonteCarlo { blocks: usize },
}

/// Probability that a block of parameter t coalesces.
pub fn epsilon_t(
    chain: &ResidualChain,
    t: usize,
    mode: EpsilonMode,
    rng: &mut impl Rng,
) -> Result<f64> {
    if t < chain.s {
        return Err(Error::InvalidParameter(format!(
            "block parameter t = {t} must be at least the order s = {}",
            chain.s
        )));
    }
    let b = t + chain.s - 1;
    match mode {
        EpsilonMode::Exact => {
            if b * chain.size() > 20 {
                return Err(Error::InfeasibleExact(format!(
                    "b * |Omega| = {} exceeds 20",
                    b * chain.size()
                )));
            }
            let states: Vec<usize> = (0..chain.size()).collect();
            Ok(exact_coalescence(chain, &states, b))
        }
        EpsilonMode::MonteCarlo { blocks } => {
            if blocks == 0 {
                return Err(Error::InvalidParameter("need at least one probe block".into()));
            }
            let mut hits = 0usize;
            for _ in 0..blocks {
                if gen_block(chain, t, rng)?.coalesced {
                    hits += 1;
                }
            }
            Ok(hits as f64 / blocks as f64)
        }
    }
}

/// Recursive integration over the threshold partition of one coordinate
/// at a time: within a segment between consecutive cumulative-row
/// thresholds every state moves deterministically.
fn exact_coalescence(chain: &ResidualChain, states: &[usize], remaining: usize) -> f64 {
    if remaining == 0 {
        return if states.windows(2).all(|w| w[0] == w[1]) {
            1.0
        } else {
            0.0
        };
    }
    let mut cuts: Vec<f64> = Vec::new();
    let mut distinct: Vec<usize> = states.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    for &s in &distinct {
        for (_, cum, _) in &chain.steps[s] {
            cuts.push(*cum);
        }
    }
    cuts.sort_by(|a, b| a.partial_cmp(b).expect("finite cumulative values"));
    cuts.dedup();
    let mut total = 0.0;
    let mut lo = 0.0;
    for &hi in &cuts {
        if hi <= lo {
            continue;
        }
        let v = 0.5 * (lo + hi);
        let moved: Vec<usize> = states.iter().map(|&s| srs_step(chain, s, v)).collect();
        total += (hi - lo) * exact_coalescence(chain, &moved, remaining - 1);
        lo = hi;
    }
    total
}

/// Wilson's read-once algorithm: draw blocks to the first coalescent
/// one, thread outputs through subsequent blocks, and return the state
/// entering the second coalescent block.
pub fn read_once(
    chain: &ResidualChain,
    t: usize,
    rng: &mut impl Rng,
) -> Result<(DigitSeq, usize, usize)> {
    let (out, m1, m2, _) = read_once_traced(chain, t, rng, None, DEFAULT_BLOCK_BUDGET)?;
    Ok((chain.omega[out].clone(), m1, m2))
}

/// Read-once run that optionally threads a designated chain state
/// through the retained blocks, returning the digits it generates.
/// This is the coupling used by the perfect remainder sampler: the
/// designated path passes through the first coalescent block, so its
/// state entering the second coalescent block equals the output.
///
/// The second coalescent block's uniforms serve only the coalescence
/// test: they are conditioned by that test, so threading them into the
/// digit path would bias the digits right after the window. Digits
/// beyond position K+s are instead continued with fresh uniforms.
fn read_once_traced(
    chain: &ResidualChain,
    t: usize,
    rng: &mut impl Rng,
    trace_from: Option<usize>,
    budget: usize,
) -> Result<(usize, usize, usize, Vec<Digit>)> {
    if t < chain.s {
        return Err(Error::InvalidParameter(format!(
            "block parameter t = {t} must be at least the order s = {}",
            chain.s
        )));
    }
    let b = t + chain.s - 1;
    let mut trace_state = trace_from;
    let mut trace_digits: Vec<Digit> = Vec::new();
    let mut blocks_used = 0usize;
    let mut draw_block = |rng: &mut dyn rand::RngCore| -> Result<BlockRecord> {
        blocks_used += 1;
        if blocks_used > budget {
            return Err(Error::BudgetExceeded { budget });
        }
        let uniforms: Vec<f64> = (0..b)
            .map(|_| {
                rand::distributions::Distribution::sample(&rand::distributions::Open01, rng)
            })
            .collect();
        Ok(block_from_uniforms(chain, t, uniforms))
    };
    let apply_trace = |block: &BlockRecord,
                       trace_state: &mut Option<usize>,
                       trace_digits: &mut Vec<Digit>| {
        if let Some(st) = trace_state {
            for &v in &block.uniforms {
                *st = srs_step(chain, *st, v);
                trace_digits.push(*chain.omega[*st].last().expect("non-empty state"));
            }
        }
    };

    // Step (A): find the first coalescent block.
    let mut m1 = 0usize;
    let common = loop {
        m1 += 1;
        let block = draw_block(rng)?;
        apply_trace(&block, &mut trace_state, &mut trace_digits);
        if block.coalesced {
            break block.common_output.expect("coalesced block has output");
        }
    };
    // Steps (B)-(C): thread the common output until the next coalescent
    // block; the value entering it is the sample.
    let mut current = common;
    let mut m2 = 0usize;
    loop {
        m2 += 1;
        let block = draw_block(rng)?;
        if block.coalesced {
            break;
        }
        apply_trace(&block, &mut trace_state, &mut trace_digits);
        current = block.outputs[current];
    }
    if let Some(st) = trace_state {
        debug_assert_eq!(st, current, "traced path must enter the final block at the output");
    }
    Ok((current, m1, m2, trace_digits))
}

/// Read-once output together with the full coupling of Theorem-style
/// quantities: M = b(M1 + M2 - 1) and K = max(N, s) + M - s.
#[derive(Clone, Debug)]
pub struct PerfectDraw {
    pub coupling: CouplingDraw,
    pub m1: usize,
    pub m2: usize,
    pub m: usize,
    pub k: usize,
    /// Digit window (X_{K+1}, ..., X_{K+s}); distributed as the
    /// invariant PMF and independent of the prefix data.
    pub stationary_state: DigitSeq,
    pub epsilon_t: f64,
    /// All digits X_1 .. X_{K+s} plus any requested extension. The
    /// extension continues the chain from the window with fresh
    /// uniforms, so the post-K windows form a stationary chain.
    pub digits: DigitSeq,
}

/// Smallest t <= s+8 whose Monte Carlo coalescence estimate reaches
/// 0.05 (10^4 probe blocks), mirroring the default block choice.
pub fn choose_default_t(chain: &ResidualChain, rng: &mut impl Rng) -> Result<usize> {
    for t in chain.s..=chain.s + 8 {
        let eps = epsilon_t(chain, t, EpsilonMode::MonteCarlo { blocks: 10_000 }, rng)?;
        if eps >= 0.05 {
            return Ok(t);
        }
    }
    Err(Error::InvalidParameter(
        "no block parameter t <= s+8 reached coalescence probability 0.05".into(),
    ))
}

/// Draw (X, N) from the coupling, extend the digits to max(N, s), then
/// drive the digit chain with the same uniform stream as a read-once
/// run. The window after the block preceding the second coalescent
/// block is exactly stationary.
pub fn perfect_remainder_sample(
    density: &Density,
    chain: &ResidualChain,
    t: usize,
    rng: &mut impl Rng,
    epsilon: f64,
    extra_digits: usize,
) -> Result<PerfectDraw> {
    if !std::ptr::eq(density.scheme() as *const _, &chain.scheme as *const _)
        && format!("{:?}", density.scheme()) != format!("{:?}", chain.scheme)
    {
        return Err(Error::ModeMismatch(
            "density and chain must share one scheme".into(),
        ));
    }
    let s = chain.s;
    let coupling = sample_coupled_capped(density, rng, DEFAULT_DEPTH_CAP)?;
    let mut digits: DigitSeq = coupling.s.clone();
    if digits.len() < s {
        let ext = crate::coupling::sample_extension(
            &chain.scheme,
            &digits,
            s - digits.len(),
            rng,
        )?;
        digits.extend(ext);
    }
    let start = chain
        .state_index(&digits[digits.len() - s..])
        .ok_or_else(|| Error::InvalidParameter("prefix window escapes the state space".into()))?;

    let (out, m1, m2, tail) =
        read_once_traced(chain, t, rng, Some(start), DEFAULT_BLOCK_BUDGET)?;
    let b = t + s - 1;
    let m = b * (m1 + m2 - 1);
    let k = digits.len().max(s) + m - s;
    digits.extend(tail);
    // The stationary window sits at positions K+1 ..= K+s (1-indexed).
    let window = digits[k..k + s].to_vec();
    debug_assert_eq!(window, chain.omega[out]);
    if extra_digits > 0 {
        let mut state = out;
        for _ in 0..extra_digits {
            let v: f64 = rng.sample(rand::distributions::Open01);
            state = srs_step(chain, state, v);
            digits.push(*chain.omega[state].last().expect("non-empty state"));
        }
    }
    Ok(PerfectDraw {
        coupling,
        m1,
        m2,
        m,
        k,
        stationary_state: window,
        epsilon_t: epsilon,
        digits,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::markov::{build_chain, invariant_pmf};
    use crate::real::Real;
    use crate::scheme::Scheme;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn golden() -> ResidualChain {
        build_chain(&Scheme::pseudo_golden(2).unwrap(), 1).unwrap()
    }

    fn inv_beta() -> f64 {
        1.0 / ((1.0 + 5f64.sqrt()) / 2.0)
    }

    #[test]
    fn srs_update_golden_cases() {
        let chain = golden();
        // From state (0): stay iff v <= 1/beta.
        let next = srs_update(&chain, &[Digit(0)], 0.5).unwrap();
        assert_eq!(next, vec![Digit(0)]);
        let next = srs_update(&chain, &[Digit(0)], 0.99).unwrap();
        assert_eq!(next, vec![Digit(1)]);
        // From state (1) every uniform moves to (0).
        for v in [0.01, 0.5, 0.99] {
            assert_eq!(srs_update(&chain, &[Digit(1)], v).unwrap(), vec![Digit(0)]);
        }
    }

    #[test]
    fn golden_block_coalescence_threshold() {
        let chain = golden();
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        for _ in 0..500 {
            let block = gen_block(&chain, 1, &mut rng).unwrap();
            assert_eq!(block.b, 1);
            let expect = block.uniforms[0] <= inv_beta();
            assert_eq!(block.coalesced, expect);
            if block.coalesced {
                assert_eq!(block.common_output, Some(0));
            } else {
                // 0 -> 1 and 1 -> 0.
                assert_eq!(block.outputs, vec![1, 0]);
            }
        }
    }

    #[test]
    fn identical_rows_always_coalesce() {
        let chain = build_chain(&Scheme::base_q(3).unwrap(), 1).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        for t in 1..4 {
            let block = gen_block(&chain, t, &mut rng).unwrap();
            assert!(block.coalesced);
        }
        let eps = epsilon_t(&chain, 1, EpsilonMode::Exact, &mut rng).unwrap();
        assert!((eps - 1.0).abs() < 1e-12);
    }

    #[test]
    fn exact_epsilon_golden() {
        let chain = golden();
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let eps = epsilon_t(&chain, 1, EpsilonMode::Exact, &mut rng).unwrap();
        assert!((eps - inv_beta()).abs() < 1e-12);
        // Non-decreasing in t.
        let mut last = 0.0;
        for t in 1..=5 {
            let eps = epsilon_t(&chain, t, EpsilonMode::Exact, &mut rng).unwrap();
            assert!(eps >= last - 1e-12, "epsilon_t decreasing at t = {t}");
            last = eps;
        }
    }

    #[test]
    fn exact_epsilon_order3_monotone() {
        let chain = build_chain(&Scheme::pseudo_golden(3).unwrap(), 2).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(6);
        let mut last = 0.0;
        for t in 2..=4 {
            let eps = epsilon_t(&chain, t, EpsilonMode::Exact, &mut rng).unwrap();
            assert!(eps >= last - 1e-12);
            last = eps;
        }
        assert!(last > 0.0);
    }

    #[test]
    fn monte_carlo_epsilon_close_to_exact() {
        let chain = golden();
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let eps = epsilon_t(
            &chain,
            1,
            EpsilonMode::MonteCarlo { blocks: 100_000 },
            &mut rng,
        )
        .unwrap();
        assert!((eps - inv_beta()).abs() < 0.01);
    }

    #[test]
    fn exact_mode_feasibility_guard() {
        let chain = build_chain(&Scheme::base_q(5).unwrap(), 2).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(8);
        assert!(matches!(
            epsilon_t(&chain, 2, EpsilonMode::Exact, &mut rng),
            Err(Error::InfeasibleExact(_))
        ));
    }

    #[test]
    fn read_once_identical_rows_is_instant() {
        let chain = build_chain(&Scheme::base_q(2).unwrap(), 1).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        for _ in 0..100 {
            let (_, m1, m2) = read_once(&chain, 1, &mut rng).unwrap();
            assert_eq!((m1, m2), (1, 1));
        }
    }

    #[test]
    fn read_once_mean_run_length() {
        let chain = golden();
        let mut rng = ChaCha12Rng::seed_from_u64(10);
        let runs = 30_000;
        let mut total = 0usize;
        for _ in 0..runs {
            let (_, m1, m2) = read_once(&chain, 1, &mut rng).unwrap();
            total += m1 + m2;
        }
        let mean = total as f64 / runs as f64;
        assert!((mean - (5f64.sqrt() + 1.0)).abs() < 0.1, "mean {mean}");
    }

    #[test]
    fn read_once_output_law() {
        let chain = golden();
        let pi = invariant_pmf(&chain).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(12);
        let runs = 20_000;
        let mut zero = 0usize;
        for _ in 0..runs {
            let (out, _, _) = read_once(&chain, 1, &mut rng).unwrap();
            if out == vec![Digit(0)] {
                zero += 1;
            }
        }
        let freq = zero as f64 / runs as f64;
        assert!((freq - pi.weights[0]).abs() < 0.01, "freq {freq}");
    }

    #[test]
    fn grand_coupling_paths_stay_merged() {
        let chain = build_chain(&Scheme::pseudo_golden(3).unwrap(), 2).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(13);
        let mut states: Vec<usize> = (0..chain.size()).collect();
        let mut merged: Vec<(usize, usize)> = Vec::new();
        for _ in 0..200 {
            let v: f64 = rng.sample(rand::distributions::Open01);
            for s in &mut states {
                *s = srs_step(&chain, *s, v);
            }
            for i in 0..states.len() {
                for j in i + 1..states.len() {
                    if states[i] == states[j] {
                        merged.push((i, j));
                    }
                }
            }
            for (i, j) in &merged {
                assert_eq!(states[*i], states[*j], "merged paths diverged");
            }
        }
    }

    #[test]
    fn choose_default_t_golden() {
        let chain = golden();
        let mut rng = ChaCha12Rng::seed_from_u64(14);
        assert_eq!(choose_default_t(&chain, &mut rng).unwrap(), 1);
    }

    fn golden_tilted_density() -> Density {
        let scheme = Scheme::pseudo_golden(2).unwrap();
        let values = crate::density::values_from_weights(&scheme, 1, &[0.3, 0.7]).unwrap();
        Density::piecewise(scheme, 1, values).unwrap()
    }

    #[test]
    fn perfect_draw_identities() {
        let chain = golden();
        let density = golden_tilted_density();
        let mut rng = ChaCha12Rng::seed_from_u64(15);
        let eps = inv_beta();
        for _ in 0..2_000 {
            let draw = perfect_remainder_sample(&density, &chain, 1, &mut rng, eps, 0).unwrap();
            assert_eq!(draw.m, draw.m1 + draw.m2 - 1);
            assert_eq!(draw.k, draw.coupling.n.max(1) + draw.m - 1);
            // Digits run exactly through the stationary window.
            assert_eq!(draw.digits.len(), draw.k + 1);
            assert_eq!(draw.stationary_state.len(), 1);
            // No two consecutive ones anywhere in the digit path.
            for w in draw.digits.windows(2) {
                assert!(!(w[0] == Digit(1) && w[1] == Digit(1)));
            }
        }
    }

    #[test]
    fn perfect_window_law_matches_invariant() {
        let chain = golden();
        let density = golden_tilted_density();
        let pi = invariant_pmf(&chain).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(123);
        let runs = 20_000;
        let mut zero = 0usize;
        for _ in 0..runs {
            let draw = perfect_remainder_sample(&density, &chain, 1, &mut rng, inv_beta(), 0)
                .unwrap();
            if draw.stationary_state == vec![Digit(0)] {
                zero += 1;
            }
        }
        let freq = zero as f64 / runs as f64;
        assert!((freq - pi.weights[0]).abs() < 0.01, "freq {freq}");
    }

    #[test]
    fn geometric_run_counts() {
        // m1 and m2 are geometric with success probability epsilon_t:
        // compare the empirical mean and the first mass point.
        let chain = golden();
        let mut rng = ChaCha12Rng::seed_from_u64(17);
        let eps = inv_beta();
        let runs = 30_000;
        let (mut sum1, mut ones1) = (0usize, 0usize);
        for _ in 0..runs {
            let (_, m1, _) = read_once(&chain, 1, &mut rng).unwrap();
            sum1 += m1;
            if m1 == 1 {
                ones1 += 1;
            }
        }
        let mean = sum1 as f64 / runs as f64;
        assert!((mean - 1.0 / eps).abs() < 0.03);
        assert!((ones1 as f64 / runs as f64 - eps).abs() < 0.01);
    }

    #[test]
    fn budget_guard_fires() {
        // Identity-like kernel that never coalesces from distinct states.
        let p = nalgebra::DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let chain = ResidualChain::from_matrix(
            Scheme::base_q(2).unwrap(),
            1,
            vec![vec![Digit(0)], vec![Digit(1)]],
            p,
        )
        .unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(18);
        let res = read_once_traced(&chain, 1, &mut rng, None, 50);
        assert!(matches!(res, Err(Error::BudgetExceeded { budget: 50 })));
    }

    #[test]
    fn stationary_tail_windows() {
        // Digits beyond K, re-windowed at offsets 0..3, stay close to
        // the invariant law.
        let chain = golden();
        let density = golden_tilted_density();
        let pi = invariant_pmf(&chain).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(21);
        let runs = 20_000;
        let mut zero = [0usize; 3];
        for _ in 0..runs {
            let draw =
                perfect_remainder_sample(&density, &chain, 1, &mut rng, inv_beta(), 3).unwrap();
            for off in 0..3 {
                if draw.digits[draw.k + off] == Digit(0) {
                    zero[off] += 1;
                }
            }
        }
        for off in 0..3 {
            let freq = zero[off] as f64 / runs as f64;
            assert!(
                (freq - pi.weights[0]).abs() < 0.02,
                "offset {off}: freq {freq}"
            );
        }
    }
}
