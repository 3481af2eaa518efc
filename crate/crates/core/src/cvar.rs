//! Worst-case expectations over the capped probability simplex
//! `{q >= 0, sum q = 1, q_i <= p_i / (1 - alpha)}`, i.e. discrete CVaR.

use crate::error::{Error, Result};
use crate::model::PROB_TOL;

/// Size of the nested-CVaR ambiguity set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AmbiguityLevel {
    alpha: f64,
    cap: f64,
}

impl AmbiguityLevel {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&alpha) {
            return Err(Error::invalid(format!("alpha must lie in [0,1), got {alpha}")));
        }
        Ok(AmbiguityLevel {
            alpha,
            cap: 1.0 / (1.0 - alpha),
        })
    }

    /// No ambiguity: the nominal distribution only.
    pub fn nominal() -> Self {
        AmbiguityLevel {
            alpha: 0.0,
            cap: 1.0,
        }
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Per-scenario multiplier bound `1/(1-alpha)`.
    pub fn cap(&self) -> f64 {
        self.cap
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorstCase {
    pub value: f64,
    pub distribution: Vec<f64>,
}

fn check_inputs(values: &[f64], weights: &[f64]) -> Result<()> {
    if values.is_empty() {
        return Err(Error::invalid("empty support"));
    }
    if values.len() != weights.len() {
        return Err(Error::invalid("values and weights differ in length"));
    }
    let total: f64 = weights.iter().sum();
    if weights.iter().any(|w| *w < 0.0) || (total - 1.0).abs() > PROB_TOL {
        return Err(Error::invalid("weights are not a probability vector"));
    }
    Ok(())
}

/// Greedy fill: visit scenarios by decreasing value (ties by index) and give
/// each `min(cap * p_i, remaining mass)`.
pub fn worst_case_expectation(
    values: &[f64],
    weights: &[f64],
    level: AmbiguityLevel,
) -> Result<WorstCase> {
    check_inputs(values, weights)?;
    let mut order: Vec<usize> = (0..values.len()).filter(|&i| weights[i] > 0.0).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));

    let mut distribution = vec![0.0; values.len()];
    let mut remaining = 1.0;
    for &i in &order {
        if remaining <= 0.0 {
            break;
        }
        let q = (level.cap * weights[i]).min(remaining);
        distribution[i] = q;
        remaining -= q;
    }
    let total: f64 = distribution.iter().sum();
    distribution.iter_mut().for_each(|q| *q /= total);
    let value = distribution.iter().zip(values).map(|(q, v)| q * v).sum();
    Ok(WorstCase {
        value,
        distribution,
    })
}

/// `t + cap * sum_i p_i max(0, v_i - t)`; its infimum over `t` is the CVaR.
pub fn cvar_from_infimum(values: &[f64], weights: &[f64], level: AmbiguityLevel, t: f64) -> f64 {
    t + level.cap
        * values
            .iter()
            .zip(weights)
            .map(|(v, p)| p * (v - t).max(0.0))
            .sum::<f64>()
}

/// Minimizes [`cvar_from_infimum`] over `t` in `[min v, max v]` by golden
/// section. Returns `(t, value)`.
pub fn minimize_infimum(values: &[f64], weights: &[f64], level: AmbiguityLevel) -> Result<(f64, f64)> {
    check_inputs(values, weights)?;
    let f = |t: f64| cvar_from_infimum(values, weights, level, t);
    let mut lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let mut hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let mut a = hi - ratio * (hi - lo);
    let mut b = lo + ratio * (hi - lo);
    let (mut fa, mut fb) = (f(a), f(b));
    for _ in 0..200 {
        if hi - lo <= 1e-13 * (1.0 + hi.abs()) {
            break;
        }
        if fa <= fb {
            hi = b;
            b = a;
            fb = fa;
            a = hi - ratio * (hi - lo);
            fa = f(a);
        } else {
            lo = a;
            a = b;
            fa = fb;
            b = lo + ratio * (hi - lo);
            fb = f(b);
        }
    }
    let t = 0.5 * (lo + hi);
    Ok((t, f(t)))
}

/// Value-at-risk level used by the greedy fill: the value of the scenario at
/// which the capped mass reaches one.
pub fn value_at_risk(values: &[f64], weights: &[f64], level: AmbiguityLevel) -> Result<f64> {
    check_inputs(values, weights)?;
    let mut order: Vec<usize> = (0..values.len()).filter(|&i| weights[i] > 0.0).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    let mut mass = 0.0;
    for &i in &order {
        mass += level.cap * weights[i];
        if mass >= 1.0 - 1e-12 {
            return Ok(values[i]);
        }
    }
    Ok(values[*order.last().expect("nonempty support")])
}

/// Limit `alpha -> 1`: the largest value among scenarios with positive weight.
pub fn max_over_support(values: &[f64], weights: &[f64]) -> Result<f64> {
    check_inputs(values, weights)?;
    Ok(values
        .iter()
        .zip(weights)
        .filter(|(_, p)| **p > 0.0)
        .map(|(v, _)| *v)
        .fold(f64::NEG_INFINITY, f64::max))
}

/// Evaluates the worst case for a requested `alpha`, treating
/// `alpha >= 1 - 1e-9` as the max over the support.
pub fn worst_case_value_at(values: &[f64], weights: &[f64], alpha: f64) -> Result<f64> {
    if alpha >= 1.0 - 1e-9 {
        return max_over_support(values, weights);
    }
    Ok(worst_case_expectation(values, weights, AmbiguityLevel::new(alpha)?)?.value)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::simplex::{solve_lp, LinearProgram, Relation};

    /// Capped-simplex maximization solved as an LP.
    fn lp_oracle(values: &[f64], weights: &[f64], level: AmbiguityLevel) -> f64 {
        let n = values.len();
        let mut lp = LinearProgram::new(n);
        lp.cost = values.iter().map(|v| -v).collect();
        for i in 0..n {
            lp.set_bounds(i, 0.0, level.cap() * weights[i]);
        }
        lp.add_constraint(vec![1.0; n], Relation::Eq, 1.0);
        -solve_lp(&lp).unwrap().objective
    }

    fn level(alpha: f64) -> AmbiguityLevel {
        AmbiguityLevel::new(alpha).unwrap()
    }

    #[test]
    fn two_point_examples() {
        let v = [1.0, 3.0];
        let p = [0.5, 0.5];
        let wc = worst_case_expectation(&v, &p, level(0.0)).unwrap();
        assert_eq!(wc.value, 2.0);
        assert_eq!(wc.distribution, vec![0.5, 0.5]);

        let wc = worst_case_expectation(&v, &p, level(0.2)).unwrap();
        assert!((wc.value - 2.25).abs() < 1e-12);
        assert!((wc.distribution[0] - 0.375).abs() < 1e-12);
        assert!((wc.distribution[1] - 0.625).abs() < 1e-12);

        let wc = worst_case_expectation(&v, &p, level(0.9)).unwrap();
        assert!((wc.value - 3.0).abs() < 1e-12);
        assert_eq!(wc.distribution, vec![0.0, 1.0]);
    }

    #[test]
    fn infimum_form_examples() {
        let v = [1.0, 3.0];
        let p = [0.5, 0.5];
        assert!((cvar_from_infimum(&v, &p, level(0.2), 1.0) - 2.25).abs() < 1e-12);
        assert_eq!(cvar_from_infimum(&v, &p, level(0.4), 3.0), 3.0);
        assert!((cvar_from_infimum(&v, &p, level(0.0), 1.0) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn empty_support_rejected() {
        assert!(matches!(
            worst_case_expectation(&[], &[], level(0.1)),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn alpha_one_excluded_but_limit_available() {
        assert!(AmbiguityLevel::new(1.0).is_err());
        let v = [1.0, 7.0, 3.0];
        let p = [0.5, 0.0, 0.5];
        assert_eq!(worst_case_value_at(&v, &p, 1.0).unwrap(), 3.0);
        assert_eq!(worst_case_value_at(&v, &p, 1.0 - 1e-10).unwrap(), 3.0);
    }

    #[test]
    fn ties_resolved_by_index() {
        let v = [2.0, 2.0, 1.0];
        let p = [0.3, 0.3, 0.4];
        let wc = worst_case_expectation(&v, &p, level(0.5)).unwrap();
        assert!((wc.distribution[0] - 0.6).abs() < 1e-12);
        assert!((wc.distribution[1] - 0.4).abs() < 1e-12);
        assert_eq!(wc.distribution[2], 0.0);
    }

    #[test]
    fn greedy_matches_lp_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..300 {
            let n = rng.gen_range(1..=6);
            let values: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let mut weights: Vec<f64> = (0..n)
                .map(|_| if rng.gen_bool(0.2) { 0.0 } else { rng.gen::<f64>() })
                .collect();
            if weights.iter().all(|w| *w == 0.0) {
                weights[0] = 1.0;
            }
            let s: f64 = weights.iter().sum();
            weights.iter_mut().for_each(|w| *w /= s);
            let lvl = level(rng.gen_range(0.0..0.99));
            let wc = worst_case_expectation(&values, &weights, lvl).unwrap();
            assert!((wc.value - lp_oracle(&values, &weights, lvl)).abs() <= 1e-8);
        }
    }

    fn simplex_strategy() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (1usize..7).prop_flat_map(|n| {
            (
                prop::collection::vec(-10.0f64..10.0, n),
                prop::collection::vec(0.0f64..1.0, n),
            )
                .prop_map(|(v, mut w)| {
                    if w.iter().sum::<f64>() <= 1e-6 {
                        w[0] = 1.0;
                    }
                    let s: f64 = w.iter().sum();
                    w.iter_mut().for_each(|x| *x /= s);
                    (v, w)
                })
        })
    }

    proptest! {
        #[test]
        fn monotone_in_alpha((v, p) in simplex_strategy(), a1 in 0.0f64..0.99, a2 in 0.0f64..0.99) {
            let (lo, hi) = if a1 <= a2 { (a1, a2) } else { (a2, a1) };
            let w1 = worst_case_expectation(&v, &p, level(lo)).unwrap().value;
            let w2 = worst_case_expectation(&v, &p, level(hi)).unwrap().value;
            prop_assert!(w1 <= w2 + 1e-12);
        }

        #[test]
        fn bounded_by_mean_and_max((v, p) in simplex_strategy(), a in 0.0f64..0.99) {
            let wc = worst_case_expectation(&v, &p, level(a)).unwrap();
            let mean: f64 = v.iter().zip(&p).map(|(x, y)| x * y).sum();
            let max = max_over_support(&v, &p).unwrap();
            prop_assert!(mean <= wc.value + 1e-9);
            prop_assert!(wc.value <= max + 1e-9);
            let total: f64 = wc.distribution.iter().sum();
            prop_assert!((total - 1.0).abs() <= 1e-9);
            for (q, w) in wc.distribution.iter().zip(&p) {
                prop_assert!(*q >= 0.0 && *q <= level(a).cap() * w + 1e-9);
            }
        }

        #[test]
        fn infimum_matches_greedy((v, p) in simplex_strategy(), a in 0.0f64..0.99) {
            let lvl = level(a);
            let wc = worst_case_expectation(&v, &p, lvl).unwrap();
            let (_, inf) = minimize_infimum(&v, &p, lvl).unwrap();
            prop_assert!((inf - wc.value).abs() <= 1e-6);
            let var = value_at_risk(&v, &p, lvl).unwrap();
            prop_assert!((cvar_from_infimum(&v, &p, lvl, var) - wc.value).abs() <= 1e-9);
        }
    }
}
