use oodcert::bounds::{
    binomial_condition_holds, epsilon_adjusted, epsilon_chernoff, epsilon_no_violations,
    exact_epsilon, ln_condition_lhs, pac_sample_complexity, BoundMethod, EXACT_TOLERANCE,
};
use oodcert::BoundQuery;
use proptest::prelude::*;

/// Exact binomial coefficient for small `n`.
fn choose(n: u64, k: u64) -> u128 {
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc * u128::from(n - i) / u128::from(i + 1))
}

/// Left-hand side of the scenario condition by direct summation.
fn brute_lhs(n: u64, r: u64, d: u64, eps: f64) -> f64 {
    let m = r + d - 1;
    let tail: f64 = (0..=m)
        .map(|i| choose(n, i) as f64 * eps.powi(i as i32) * (1.0 - eps).powi((n - i) as i32))
        .sum();
    choose(m, r) as f64 * tail
}

fn delta_strategy() -> impl Strategy<Value = f64> {
    (-9.0f64..-0.31).prop_map(|e| 10f64.powf(e))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn condition_matches_direct_summation(
        n in 1u64..60,
        r_frac in 0.0f64..1.0,
        d in 1u64..4,
        eps in 0.001f64..0.999,
    ) {
        let r = ((n.saturating_sub(d - 1)) as f64 * r_frac).floor() as u64;
        prop_assume!(r + d - 1 <= n);
        let direct = brute_lhs(n, r, d, eps);
        prop_assume!(direct > 1e-280);
        let ln = ln_condition_lhs(n, r, d, eps).unwrap();
        prop_assert!((ln - direct.ln()).abs() <= 1e-10 * direct.ln().abs().max(1.0),
            "n={n} r={r} d={d} eps={eps}: {ln} vs {}", direct.ln());
    }

    #[test]
    fn chernoff_satisfies_exact_condition(
        n in 1u64..200_000,
        r_frac in 0.0f64..0.5,
        delta in delta_strategy(),
    ) {
        let r = (n as f64 * r_frac).floor() as u64;
        let c = epsilon_chernoff(n, r as f64, delta).unwrap();
        if !c.clamped && c.value < 1.0 {
            prop_assert!(binomial_condition_holds(n, r, 1, c.value, delta).unwrap());
        }
        let e = exact_epsilon(n, r, 1, delta).unwrap();
        prop_assert!(e.value <= c.value, "exact {} > chernoff {}", e.value, c.value);
    }

    #[test]
    fn exact_is_tight(
        n in 2u64..50_000,
        r_frac in 0.0f64..0.5,
        delta in delta_strategy(),
    ) {
        let r = (n as f64 * r_frac).floor() as u64;
        let e = exact_epsilon(n, r, 1, delta).unwrap();
        prop_assume!(!e.clamped && e.value > 1e-9);
        prop_assert!(binomial_condition_holds(n, r, 1, e.value, delta).unwrap());
        let below = e.value * (1.0 - 1e-6) - EXACT_TOLERANCE;
        prop_assert!(!binomial_condition_holds(n, r, 1, below, delta).unwrap());
    }

    #[test]
    fn zero_violation_closed_form(n in 1u64..10_000_000, delta in delta_strategy()) {
        let closed = epsilon_no_violations(n, delta).unwrap().value;
        prop_assert!((closed - (1.0 - delta.powf(1.0 / n as f64))).abs() < 1e-12);
        let exact = exact_epsilon(n, 0, 1, delta).unwrap().value;
        prop_assert!((exact - closed).abs() < 1e-10, "{exact} vs {closed}");
    }

    #[test]
    fn chernoff_monotone(
        n in 10u64..1_000_000,
        r_frac in 0.0f64..0.4,
        delta in delta_strategy(),
    ) {
        let r = (n as f64 * r_frac).floor();
        let base = epsilon_chernoff(n, r, delta).unwrap().value;
        prop_assert!(epsilon_chernoff(n, r + 1.0, delta).unwrap().value >= base);
        prop_assert!(epsilon_chernoff(n + 1, r, delta).unwrap().value <= base);
        prop_assert!(epsilon_chernoff(n, r, delta / 2.0).unwrap().value >= base);
        prop_assert!(base >= r / n as f64);
    }

    #[test]
    fn adjusted_never_exceeds_plain_chernoff(
        n in 10u64..1_000_000,
        r_frac in 0.0f64..0.4,
        delta in delta_strategy(),
        beta in 0.0f64..0.5,
    ) {
        let r = (n as f64 * r_frac).floor() as u64;
        let adj = epsilon_adjusted(n, r, delta, beta).unwrap();
        let plain = epsilon_chernoff(n, r as f64, delta).unwrap();
        prop_assert_eq!(adj.method, BoundMethod::Adjusted);
        prop_assert!(adj.value <= plain.value);
        let direct = epsilon_chernoff(n, r as f64 * (1.0 - beta), delta).unwrap();
        prop_assert_eq!(adj.value, direct.value);
    }

    #[test]
    fn exact_nondecreasing_in_dims(
        n in 20u64..5_000,
        r_frac in 0.0f64..0.3,
        delta in delta_strategy(),
        d in 1u64..6,
    ) {
        let r = (n as f64 * r_frac).floor() as u64;
        let a = exact_epsilon(n, r, d, delta).unwrap().value;
        let b = exact_epsilon(n, r, d + 1, delta).unwrap().value;
        prop_assert!(b + EXACT_TOLERANCE >= a, "d={d}: {a} -> {b}");
    }

    #[test]
    fn sample_complexity_meets_requirement(
        eps in 1e-4f64..0.5,
        delta in delta_strategy(),
        ln_h in 0.0f64..100.0,
    ) {
        let n = pac_sample_complexity(eps, delta, ln_h).unwrap();
        let need = (ln_h - delta.ln()) / eps;
        prop_assert!(n as f64 >= need * (1.0 - 1e-12));
        prop_assert!((n as f64) < need + 1.0);
    }
}

#[test]
fn query_methods_agree_with_free_functions() {
    let q = BoundQuery::new(100_000, 4301.0, 1e-6).unwrap().with_beta(0.0275).unwrap();
    assert_eq!(q.chernoff().unwrap(), epsilon_chernoff(100_000, 4301.0, 1e-6).unwrap());
    assert_eq!(q.adjusted().unwrap(), epsilon_adjusted(100_000, 4301, 1e-6, 0.0275).unwrap());
    assert_eq!(q.exact().unwrap(), exact_epsilon(100_000, 4301, 1, 1e-6).unwrap());
    assert!(BoundQuery::new(10, 2.5, 0.1).unwrap().exact().is_err());
    assert!(BoundQuery::new(10, 11.0, 0.1).is_err());
    assert!(BoundQuery::new(10, 1.0, 0.1).unwrap().with_dims(0).is_err());
}

#[test]
fn boundary_inputs() {
    assert!(epsilon_chernoff(0, 0.0, 0.5).is_err());
    assert!(epsilon_chernoff(10, 0.0, 0.0).is_err());
    assert!(epsilon_chernoff(10, 0.0, 1.0).is_err());
    assert!(exact_epsilon(5, 5, 2, 0.1).is_err());
    // r = N forces the maximal bound
    let all = exact_epsilon(5, 5, 1, 0.1).unwrap();
    assert!(all.clamped && all.value == 1.0);
    let c = epsilon_chernoff(1, 0.0, 0.5).unwrap();
    assert!(c.clamped && c.value == 1.0);
}
