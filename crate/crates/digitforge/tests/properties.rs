//! Property tests for the structural invariants: partition geometry,
//! digit/cell roundtrips, infimum increments, and sampler laws.

use std::collections::HashMap;

use num::rational::BigRational;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use digitforge::coupling::{cdf_n, cell_infimum, infimum, pmf_s, sample_coupled};
use digitforge::density::{values_from_weights, Density};
use digitforge::markov::{build_chain, invariant_pmf};
use digitforge::polya::{random_density, sample_realization, sample_x, PolyaParams};
use digitforge::readonce::{epsilon_t, read_once, EpsilonMode};
use digitforge::real::Real;
use digitforge::scheme::{DigitSeq, Scheme, Sign};
use digitforge::verify::{chi_square, chi_square_pvalue, empirical_tv_cells};

fn all_schemes() -> Vec<Scheme> {
    vec![
        Scheme::base_q(2).unwrap(),
        Scheme::base_q(10).unwrap(),
        Scheme::gls(
            vec![
                BigRational::new(1.into(), 2.into()),
                BigRational::new(1.into(), 3.into()),
                BigRational::new(1.into(), 6.into()),
            ],
            vec![Sign::Plus, Sign::Minus, Sign::Plus],
        )
        .unwrap(),
        Scheme::luroth(),
        Scheme::pseudo_golden(2).unwrap(),
        Scheme::pseudo_golden(3).unwrap(),
        Scheme::continued_fraction(),
    ]
}

fn tolerance_ok(gap: Real, exact: bool) -> bool {
    if exact {
        gap.is_zero()
    } else {
        gap.abs().to_f64() <= 1e-12
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    // Children are pairwise disjoint, inside the parent, and their
    // lengths sum to the parent length (with the countable tail
    // monotonically exhausting it).
    #[test]
    fn partition_invariant(scheme_idx in 0usize..7, seed in 0u64..1000) {
        let scheme = &all_schemes()[scheme_idx];
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        // Random admissible prefix of depth <= 3.
        let mut prefix: DigitSeq = Vec::new();
        for _ in 0..(seed % 4) {
            let kids = scheme.children(&prefix, 6).unwrap();
            let pick = rng.gen_range(0..kids.len());
            prefix.push(kids[pick].0);
        }
        let parent = scheme.cell(&prefix).unwrap();
        let kids = scheme.children(&prefix, 40).unwrap();
        let mut mass = Real::zero();
        for (_, cell) in &kids {
            prop_assert!(cell.left >= parent.left && cell.right() <= parent.right() + Real::ratio(1, 1_000_000_000));
            mass = mass + cell.length.clone();
        }
        // Sorted by position: pairwise disjoint.
        let mut spans: Vec<(f64, f64)> = kids
            .iter()
            .map(|(_, c)| (c.left.to_f64(), c.right().to_f64()))
            .collect();
        spans.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        for w in spans.windows(2) {
            prop_assert!(w[0].1 <= w[1].0 + 1e-12);
        }
        match scheme.alphabet_size() {
            Some(_) => {
                let gap = mass - parent.length;
                prop_assert!(tolerance_ok(gap, scheme.is_exact()));
            }
            None => {
                // Partial sums bounded with a shrinking tail.
                prop_assert!(mass <= parent.length);
                let few = scheme.children(&prefix, 5).unwrap();
                let few_mass = few.iter().fold(Real::zero(), |acc, (_, c)| acc + c.length.clone());
                prop_assert!(few_mass <= mass);
            }
        }
    }

    // digits -> cell -> membership roundtrip, nesting, and shrinkage of
    // cell lengths along the digit path.
    #[test]
    fn roundtrip_nesting_shrinkage(scheme_idx in 0usize..7, num in 1u64..2_000_000) {
        let scheme = &all_schemes()[scheme_idx];
        let x = Real::Rat(BigRational::new(num.into(), 2_000_003.into()));
        let depth = 14usize;
        match scheme.digits_of(&x, depth) {
            Err(_) => {} // endpoint hit: fine for rational inputs
            Ok(digits) => {
                // Exact schemes nest exactly; the irrational-base scheme
                // gets the documented 1e-12 slack.
                let slack = if scheme.is_exact() { 0.0 } else { 1e-12 };
                let mut last_len: Option<Real> = None;
                let mut outer: Option<(f64, f64)> = None;
                for n in 1..=depth {
                    let cell = scheme.cell(&digits[..n]).unwrap();
                    let xr = if scheme.is_exact() { x.clone() } else { Real::from_hp(x.to_hp()) };
                    prop_assert!(cell.left < xr && xr < cell.right(), "level {n}");
                    if let Some((lo, hi)) = outer {
                        prop_assert!(cell.left.to_f64() >= lo - slack);
                        prop_assert!(cell.right().to_f64() <= hi + slack);
                    }
                    outer = Some((cell.left.to_f64(), cell.right().to_f64()));
                    if let Some(last) = last_len {
                        prop_assert!(cell.length <= last + Real::from_f64(slack));
                    }
                    last_len = Some(cell.length);
                }
                // Lengths collapse along the path.
                let l1 = scheme.cell(&digits[..1]).unwrap().length;
                let l14 = scheme.cell(&digits).unwrap().length;
                prop_assert!(l14 < l1);
            }
        }
    }

    // Relative errors stay strictly inside (0,1) and e_n shrinks.
    #[test]
    fn approximation_errors_shrink(scheme_idx in 0usize..7, num in 1u64..999_983) {
        let scheme = &all_schemes()[scheme_idx];
        let x = Real::Rat(BigRational::new(num.into(), 999_983.into()));
        if scheme.digits_of(&x, 12).is_err() {
            return Ok(());
        }
        let mut last_e = Real::one();
        for n in 1..=12usize {
            let (e, u) = scheme.approximation_errors(&x, n).unwrap();
            prop_assert!(e.sign() == std::cmp::Ordering::Greater);
            prop_assert!(u.to_f64() > 0.0 && u.to_f64() < 1.0);
            prop_assert!(e <= last_e);
            last_e = e;
        }
    }

    // Infimum increments are non-negative and telescope to the cell
    // value at the piecewise depth.
    #[test]
    fn infimum_increments_telescope(weights in proptest::collection::vec(0.05f64..4.0, 4), x01 in 0.001f64..0.999) {
        let scheme = Scheme::base_q(2).unwrap();
        let values = values_from_weights(&scheme, 2, &weights).unwrap();
        let density = Density::piecewise(scheme.clone(), 2, values).unwrap();
        let digits = scheme.digits_of(&Real::from_f64(x01), 2).unwrap();
        let mut total = Real::zero();
        for n in 0..=2usize {
            let ci = cell_infimum(&density, &digits[..n]).unwrap();
            prop_assert!(ci.c_value.sign() != std::cmp::Ordering::Less);
            total = total + ci.c_value;
        }
        let f = density.eval(&Real::from_f64(x01)).unwrap();
        prop_assert!((total - f).is_zero());
    }

    // The S-law summed over prefixes of depth <= d equals P(N <= d).
    #[test]
    fn pmf_s_totals_match_cdf(weights in proptest::collection::vec(0.05f64..4.0, 3)) {
        let scheme = Scheme::base_q(3).unwrap();
        let values = values_from_weights(&scheme, 1, &weights).unwrap();
        let density = Density::piecewise(scheme.clone(), 1, values).unwrap();
        for d in 0..=1usize {
            let mut total = Real::zero();
            for depth in 0..=d {
                for prefix in scheme.admissible_prefixes(depth, usize::MAX).unwrap() {
                    total = total + pmf_s(&density, &prefix).unwrap();
                }
            }
            let cdf = cdf_n(&density, d, usize::MAX).unwrap().value;
            prop_assert!((total - cdf).is_zero());
        }
    }
}

#[test]
fn continued_fraction_markov_order_none_and_luroth_zero() {
    use digitforge::markov::{suggest_order, verify_markov_order};
    assert_eq!(suggest_order(&Scheme::luroth(), 5).unwrap(), Some(0));
    for s in 0..=3 {
        assert!(!verify_markov_order(&Scheme::continued_fraction(), s, 6).unwrap());
    }
}

#[test]
fn coupled_marginal_matches_density_cells() {
    // The X marginal of the coupled sampler reproduces the cell masses.
    let scheme = Scheme::base_q(3).unwrap();
    let values = values_from_weights(&scheme, 2, &[1.0, 2.0, 0.5, 1.5, 1.0, 1.0, 0.5, 0.5, 1.0])
        .unwrap();
    let density = Density::piecewise(scheme, 2, values).unwrap();
    let mut rng = ChaCha12Rng::seed_from_u64(60);
    let samples: Vec<f64> = (0..100_000)
        .map(|_| sample_coupled(&density, &mut rng).unwrap().x)
        .collect();
    let tv = empirical_tv_cells(&samples, &density, 2).unwrap();
    assert!(tv <= 0.01, "marginal TV {tv}");
}

#[test]
fn gauss_root_infimum_is_global() {
    let g = Density::gauss();
    let root = infimum(&g, &[]).unwrap().to_f64();
    assert!((root - 1.0 / (2.0 * std::f64::consts::LN_2)).abs() < 1e-14);
}

#[test]
fn epsilon_nondecreasing_over_block_parameters() {
    for m in [2u32, 3] {
        let chain = build_chain(&Scheme::pseudo_golden(m).unwrap(), m as usize - 1).unwrap();
        let s = chain.s;
        let mut rng = ChaCha12Rng::seed_from_u64(61);
        let mut last = 0.0;
        for t in s..=s + 4 {
            let eps = match epsilon_t(&chain, t, EpsilonMode::Exact, &mut rng) {
                Ok(v) => v,
                Err(_) => epsilon_t(
                    &chain,
                    t,
                    EpsilonMode::MonteCarlo { blocks: 40_000 },
                    &mut rng,
                )
                .unwrap(),
            };
            assert!(
                eps >= last - 0.01,
                "order {m}: epsilon_t dropped at t = {t}: {eps} < {last}"
            );
            last = eps;
        }
    }
}

#[test]
fn run_counts_are_geometric() {
    // Chi-square fit of m1 and m2 against Geometric(epsilon) at the 1%
    // level, 1e5 runs.
    let chain = build_chain(&Scheme::pseudo_golden(2).unwrap(), 1).unwrap();
    let eps = 1.0 / ((1.0 + 5f64.sqrt()) / 2.0);
    let mut rng = ChaCha12Rng::seed_from_u64(62);
    let runs = 100_000usize;
    let cap = 12usize;
    let mut counts1 = vec![0u64; cap];
    let mut counts2 = vec![0u64; cap];
    for _ in 0..runs {
        let (_, m1, m2) = read_once(&chain, 1, &mut rng).unwrap();
        counts1[(m1 - 1).min(cap - 1)] += 1;
        counts2[(m2 - 1).min(cap - 1)] += 1;
    }
    let mut expected: Vec<f64> = (0..cap)
        .map(|k| eps * (1.0 - eps).powi(k as i32))
        .collect();
    let tail: f64 = 1.0 - expected[..cap - 1].iter().sum::<f64>();
    expected[cap - 1] = tail;
    for (label, counts) in [("m1", &counts1), ("m2", &counts2)] {
        let (stat, df) = chi_square(&expected, counts).unwrap();
        let p = chi_square_pvalue(stat, df);
        assert!(p > 0.01, "{label}: p = {p}");
    }
}

#[test]
fn invariant_density_is_shift_invariant_under_pushforward() {
    for m in [2u32, 3] {
        let chain = build_chain(&Scheme::pseudo_golden(m).unwrap(), m as usize - 1).unwrap();
        let pi = invariant_pmf(&chain).unwrap();
        let f = digitforge::markov::f_inv_density(&chain, &pi).unwrap();
        for x in [0.11, 0.43, 0.86] {
            let pf = digitforge::verify::pushforward_density(&f, 1, x, usize::MAX).unwrap();
            let direct = f.eval_f64(x).unwrap();
            assert!(
                (pf.value - direct).abs() < 1e-10,
                "order {m}, x = {x}: {} vs {direct}",
                pf.value
            );
        }
    }
}

#[test]
fn polya_generative_agreement_over_random_parameter_sets() {
    // Five random parameter sets: empirical TV at the cap depth stays
    // within three Monte Carlo half-widths.
    let mut seed_rng = ChaCha12Rng::seed_from_u64(63);
    for trial in 0..5 {
        let depth = 3usize + (trial % 2);
        let mut pmf: Vec<f64> = (0..=depth)
            .map(|_| seed_rng.gen_range(0.1..1.0))
            .collect();
        let total: f64 = pmf.iter().sum();
        for p in &mut pmf {
            *p /= total;
        }
        let a = seed_rng.gen_range(0.4..3.0);
        let b = seed_rng.gen_range(0.4..3.0);
        let params = PolyaParams::new(
            Scheme::base_q(2).unwrap(),
            depth,
            pmf,
            (a, b),
            Vec::new(),
            HashMap::new(),
        )
        .unwrap();
        let real = sample_realization(&params, &mut seed_rng).unwrap();
        let density = random_density(&params, &real).unwrap();
        let draws = 100_000usize;
        let samples: Vec<f64> = (0..draws)
            .map(|_| sample_x(&params, &real, &mut seed_rng).unwrap().0)
            .collect();
        let tv = empirical_tv_cells(&samples, &density, depth).unwrap();
        let cells = 1usize << depth;
        let half_width = 0.5 * (cells as f64 / draws as f64).sqrt();
        assert!(
            tv <= 3.0 * half_width,
            "trial {trial}: TV {tv} vs 3 * {half_width}"
        );
    }
}

#[test]
fn perfect_runs_independent_of_prefix_length() {
    // Contingency test: (m1, m2) against N, pooled into coarse bins.
    use digitforge::readonce::perfect_remainder_sample;
    use digitforge::verify::chi_square_independence;
    let scheme = Scheme::pseudo_golden(2).unwrap();
    let values = values_from_weights(&scheme, 2, &[1.0, 2.0, 0.7]).unwrap();
    let density = Density::piecewise(scheme.clone(), 2, values).unwrap();
    let chain = build_chain(&scheme, 1).unwrap();
    let mut rng = ChaCha12Rng::seed_from_u64(64);
    let runs = 40_000usize;
    // Rows: N in {0, 1, >=2}; columns: m1+m2 in {2, 3, >=4}.
    let mut table = vec![vec![0u64; 3]; 3];
    for _ in 0..runs {
        let d = perfect_remainder_sample(&density, &chain, 1, &mut rng, 0.618, 0).unwrap();
        let row = d.coupling.n.min(2);
        let col = (d.m1 + d.m2 - 2).min(2);
        table[row][col] += 1;
    }
    let (stat, df) = chi_square_independence(&table).unwrap();
    let p = chi_square_pvalue(stat, df);
    assert!(p > 0.01, "independence p = {p}");
}
