//! Student-t machinery: confidence intervals and Welch's unequal-variance test.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Variances below this are treated as exactly zero by [`welch_t_test`].
pub const VARIANCE_EPS: f64 = 1e-12;

/// `ln Γ(x)` for `x > 0` (Lanczos, g = 7, n = 9).
pub fn ln_gamma<T: Scalar>(x: T) -> T {
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    let half = T::lit(0.5);
    if x < half {
        // Reflection: Γ(x)Γ(1 − x) = π / sin(πx).
        let pi = T::lit(std::f64::consts::PI);
        return (pi / (pi * x).sin()).ln() - ln_gamma(T::one() - x);
    }
    let x = x - T::one();
    let mut acc = T::lit(COEF[0]);
    for (i, &c) in COEF.iter().enumerate().skip(1) {
        acc += T::lit(c) / (x + T::lit(i as f64));
    }
    let t = x + T::lit(7.5);
    T::lit(0.5 * (2.0 * std::f64::consts::PI).ln()) + (x + half) * t.ln() - t + acc.ln()
}

/// Continued fraction for the incomplete beta function (modified Lentz).
fn beta_cf<T: Scalar>(a: T, b: T, x: T) -> T {
    let tiny = T::lit(1e-300).max(T::min_positive_value());
    let eps = T::epsilon();
    let one = T::one();
    let two = T::lit(2.0);
    let clamp = |v: T| if v.abs() < tiny { tiny } else { v };
    let mut c = one;
    let mut d = one / clamp(one - (a + b) * x / (a + one));
    let mut h = d;
    for m in 1..=500 {
        let m = T::lit(f64::from(m));
        let m2 = two * m;
        let num = m * (b - m) * x / ((a + m2 - one) * (a + m2));
        d = one / clamp(one + num * d);
        c = clamp(one + num / c);
        h = h * d * c;
        let num = -(a + m) * (a + b + m) * x / ((a + m2) * (a + m2 + one));
        d = one / clamp(one + num * d);
        c = clamp(one + num / c);
        let delta = d * c;
        h = h * delta;
        if (delta - one).abs() < eps {
            break;
        }
    }
    h
}

/// Regularized incomplete beta function `I_x(a, b)`.
pub fn reg_inc_beta<T: Scalar>(a: T, b: T, x: T) -> T {
    let (zero, one) = (T::zero(), T::one());
    if x <= zero {
        return zero;
    }
    if x >= one {
        return one;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (one - x).ln();
    let front = ln_front.exp();
    if x < (a + one) / (a + b + T::lit(2.0)) {
        front * beta_cf(a, b, x) / a
    } else {
        one - front * beta_cf(b, a, one - x) / b
    }
}

/// `P(T ≤ t)` for Student's t with `df` degrees of freedom.
pub fn student_t_cdf<T: Scalar>(t: T, df: T) -> T {
    if t.is_infinite() {
        return if t > T::zero() { T::one() } else { T::zero() };
    }
    let half = T::lit(0.5);
    let x = df / (df + t * t);
    let tail = half * reg_inc_beta(df * half, half, x);
    if t > T::zero() {
        T::one() - tail
    } else {
        tail
    }
}

/// `P(|T| ≥ |t|)`, evaluated directly so that far tails do not cancel to 0.
pub fn student_t_two_sided_p<T: Scalar>(t: T, df: T) -> T {
    if t.is_infinite() {
        return T::zero();
    }
    reg_inc_beta(df * T::lit(0.5), T::lit(0.5), df / (df + t * t))
        .min(T::one())
        .max(T::zero())
}

/// Inverse of [`student_t_cdf`] by bisection, for `p ∈ (0, 1)`.
// Negated comparisons also reject NaN.
#[allow(clippy::neg_cmp_op_on_partial_ord)]
pub fn student_t_quantile<T: Scalar>(p: T, df: T) -> Result<T> {
    if !(p > T::zero() && p < T::one()) || !(df > T::zero()) {
        return Err(Error::InvalidInput(format!(
            "t quantile needs p in (0,1) and df > 0, got p={p}, df={df}"
        )));
    }
    let half = T::lit(0.5);
    if p == half {
        return Ok(T::zero());
    }
    let upper = p > half;
    let target = if upper { p } else { T::one() - p };
    let mut hi = T::one();
    while student_t_cdf(hi, df) < target {
        hi = hi * T::lit(2.0);
        if hi > T::lit(1e12) {
            return Err(Error::Numerical("t quantile out of range".into()));
        }
    }
    let mut lo = T::zero();
    for _ in 0..200 {
        let mid = half * (lo + hi);
        if student_t_cdf(mid, df) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let q = half * (lo + hi);
    Ok(if upper { q } else { -q })
}

fn mean_var<T: Scalar>(xs: &[T]) -> (T, T) {
    let n = T::lit(xs.len() as f64);
    let mean = xs.iter().copied().sum::<T>() / n;
    let ss = xs.iter().map(|&x| (x - mean) * (x - mean)).sum::<T>();
    (mean, ss / (n - T::one()))
}

/// Mean and two-sided 95% confidence half-width `t₀.₉₇₅,ₙ₋₁ · s/√n`.
pub fn mean_ci95<T: Scalar>(samples: &[T]) -> Result<(T, T)> {
    if samples.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "a confidence interval needs at least 2 samples, got {}",
            samples.len()
        )));
    }
    let (mean, var) = mean_var(samples);
    let n = T::lit(samples.len() as f64);
    let t = student_t_quantile(T::lit(0.975), n - T::one())?;
    Ok((mean, t * (var / n).sqrt()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WelchResult<T> {
    pub t: T,
    /// Welch–Satterthwaite degrees of freedom.
    pub df: T,
    /// Two-sided p-value.
    pub p: T,
}

/// Two-sided Welch t-test.
///
/// When both samples have (numerically) zero variance the test degenerates:
/// equal means give p = 1 and distinct means p = 0.
pub fn welch_t_test<T: Scalar>(a: &[T], b: &[T]) -> Result<WelchResult<T>> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "Welch test needs at least 2 samples per arm, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let na = T::lit(a.len() as f64);
    let nb = T::lit(b.len() as f64);
    let (sa, sb) = (va / na, vb / nb);
    let se2 = sa + sb;
    if se2 <= T::lit(VARIANCE_EPS) {
        let df = na + nb - T::lit(2.0);
        return Ok(if ma == mb {
            WelchResult {
                t: T::zero(),
                df,
                p: T::one(),
            }
        } else {
            let t = if ma > mb {
                T::infinity()
            } else {
                T::neg_infinity()
            };
            WelchResult {
                t,
                df,
                p: T::zero(),
            }
        });
    }
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2 / (sa * sa / (na - T::one()) + sb * sb / (nb - T::one()));
    let p = student_t_two_sided_p(t, df);
    Ok(WelchResult { t, df, p })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn two_sided_p_keeps_precision_in_far_tails() {
        use std::f64::consts::PI;
        for t in [0.5f64, 3.0, 1e3, 1e6] {
            // df = 1: P(|T| ≥ t) = (2/π)·atan(1/t).
            let cauchy = 2.0 / PI * (1.0 / t).atan();
            assert!(
                (student_t_two_sided_p(t, 1.0) / cauchy - 1.0).abs() < 1e-9,
                "t = {t}"
            );
            // df = 2: P(|T| ≥ t) = 2 / (√(t²+2)·(√(t²+2) + t)).
            let r = (t * t + 2.0).sqrt();
            let closed = 2.0 / (r * (r + t));
            assert!(
                (student_t_two_sided_p(-t, 2.0) / closed - 1.0).abs() < 1e-9,
                "t = {t}"
            );
        }
        assert_eq!(student_t_two_sided_p(f64::INFINITY, 5.0), 0.0);
    }

    #[test]
    fn ln_gamma_matches_factorials() {
        let mut fact = 1.0f64;
        for n in 1..20 {
            assert!(
                (ln_gamma(f64::from(n)) - fact.ln()).abs() < 1e-10,
                "n = {n}"
            );
            fact *= f64::from(n);
        }
        // Γ(1/2) = √π
        assert!((ln_gamma(0.5f64) - std::f64::consts::PI.sqrt().ln()).abs() < 1e-12);
    }

    #[test]
    fn incomplete_beta_closed_forms() {
        // I_x(1, 1) = x and I_x(a, 1) = x^a.
        for x in [0.1f64, 0.35, 0.5, 0.9] {
            assert!((reg_inc_beta(1.0, 1.0, x) - x).abs() < 1e-12);
            assert!((reg_inc_beta(3.0, 1.0, x) - x.powi(3)).abs() < 1e-12);
        }
    }

    #[test]
    fn cauchy_cdf_is_df_one() {
        // With one degree of freedom, F(t) = 1/2 + atan(t)/π.
        for t in [-3.0f64, -0.5, 0.0, 0.7, 12.0] {
            let exact = 0.5 + t.atan() / std::f64::consts::PI;
            assert!((student_t_cdf(t, 1.0) - exact).abs() < 1e-12, "t = {t}");
        }
    }

    #[test]
    fn quantile_inverts_cdf() {
        // t with 2 df has the closed form quantile t = (2p − 1)·√(2 / (4p(1 − p))).
        for p in [0.6f64, 0.9, 0.975, 0.999] {
            let exact = (2.0 * p - 1.0) * (2.0 / (4.0 * p * (1.0 - p))).sqrt();
            assert!((student_t_quantile(p, 2.0).unwrap() - exact).abs() < 1e-9);
        }
        assert!(student_t_quantile(1.0f64, 4.0).is_err());
    }

    #[test]
    fn ci_examples() {
        assert_eq!(mean_ci95(&[1.0f64, 1.0, 1.0, 1.0]).unwrap(), (1.0, 0.0));
        let (m, h) = mean_ci95(&[1.0f64, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert_eq!(m, 3.0);
        // scipy: t.ppf(0.975, 4) * stdev / sqrt(5)
        assert!((h - 1.963_243_161_477_560_7).abs() < 1e-9, "{h}");
        assert!((mean_ci95(&[1.0f32, 2.0, 3.0, 4.0, 5.0]).unwrap().1 - 1.963_243_2).abs() < 1e-4);
        assert!(mean_ci95(&[1.0f64]).is_err());
    }

    #[test]
    fn ci_shrinks_as_inverse_root_n() {
        // Alternating ±1 data keeps the sample variance near 1 at every n.
        let data = |n: usize| {
            (0..n)
                .map(|i| if i % 2 == 0 { 1.0 } else { -1.0 })
                .collect::<Vec<f64>>()
        };
        let (_, h100) = mean_ci95(&data(100)).unwrap();
        let (_, h400) = mean_ci95(&data(400)).unwrap();
        assert!(((h100 / h400) / 2.0 - 1.0).abs() < 0.05);
    }

    #[test]
    fn welch_examples() {
        let r = welch_t_test(&[1.0f64, 2.0, 3.0, 4.0, 5.0], &[3.0, 4.0, 5.0, 6.0, 7.0]).unwrap();
        assert!((r.t + 2.0).abs() < 1e-12);
        assert!((r.df - 8.0).abs() < 1e-12);
        // scipy.stats.ttest_ind(a, b, equal_var=False).pvalue
        assert!((r.p - 0.080_516_237_957_262_57).abs() < 1e-9, "{}", r.p);

        let same = [2.0f64, 3.5, 1.0];
        assert_eq!(welch_t_test(&same, &same).unwrap().p, 1.0);
        assert_eq!(welch_t_test(&[0.0f64; 5], &[1.0; 5]).unwrap().p, 0.0);
        assert_eq!(welch_t_test(&[4.0f64; 5], &[4.0; 5]).unwrap().p, 1.0);
        assert!(welch_t_test(&[1.0f64], &[1.0, 2.0]).is_err());
    }

    proptest! {
        #[test]
        fn p_values_are_probabilities(
            a in prop::collection::vec(1.0..5.0f64, 2..30),
            b in prop::collection::vec(1.0..5.0f64, 2..30),
        ) {
            let r = welch_t_test(&a, &b).unwrap();
            prop_assert!((0.0..=1.0).contains(&r.p));
            let (_, h) = mean_ci95(&a).unwrap();
            prop_assert!(h >= 0.0);
        }

        #[test]
        fn cdf_is_monotone_and_symmetric(t in -50.0..50.0f64, df in 0.5..200.0f64) {
            let f = student_t_cdf(t, df);
            prop_assert!((f + student_t_cdf(-t, df) - 1.0).abs() < 1e-10);
            prop_assert!(student_t_cdf(t + 0.01, df) >= f);
        }
    }
}
