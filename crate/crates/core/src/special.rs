//! Special-function helpers: gamma/beta wrappers, sphere measures and
//! generalized binomial coefficients.

use statrs::function::gamma::{gamma, ln_gamma};

/// Gamma function.
#[inline]
pub fn gamma_fn(x: f64) -> f64 {
    gamma(x)
}

/// Natural log of the gamma function.
#[inline]
pub fn ln_gamma_fn(x: f64) -> f64 {
    ln_gamma(x)
}

/// Beta function B(x, y), computed in log space to survive large arguments.
#[inline]
pub fn beta_fn(x: f64, y: f64) -> f64 {
    (ln_gamma(x) + ln_gamma(y) - ln_gamma(x + y)).exp()
}

/// Surface measure of the m-dimensional unit sphere S^m in R^{m+1}.
///
/// `sphere_measure(1) = 2*pi` (circle), `sphere_measure(2) = 4*pi`,
/// `sphere_measure(0) = 2` (two points).
pub fn sphere_measure(m: usize) -> f64 {
    let s = (m as f64 + 1.0) / 2.0;
    2.0 * std::f64::consts::PI.powf(s) / gamma(s)
}

/// Volume of the n-dimensional unit ball.
pub fn ball_volume(n: usize) -> f64 {
    std::f64::consts::PI.powf(n as f64 / 2.0) / gamma(n as f64 / 2.0 + 1.0)
}

/// Generalized binomial coefficient for real upper argument:
/// `p (p-1) ... (p-k+1) / k!`, with the empty product equal to 1 at k = 0.
///
/// Computed as a falling-factorial product rather than a gamma ratio so that
/// non-integer `p` near poles poses no difficulty.
pub fn binomial_general(p: f64, k: u32) -> f64 {
    let mut num = 1.0;
    for i in 0..k {
        num *= p - i as f64;
    }
    let mut den = 1.0;
    for i in 1..=k {
        den *= i as f64;
    }
    num / den
}

/// Regularized lower incomplete gamma P(a, x).
#[inline]
pub fn gamma_lower_regularized(a: f64, x: f64) -> f64 {
    statrs::function::gamma::gamma_lr(a, x)
}

/// Survival function of the chi-squared distribution with `dof` degrees of
/// freedom, used for goodness-of-fit p-values.
pub fn chi_squared_sf(x: f64, dof: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    statrs::function::gamma::gamma_ur(dof / 2.0, x / 2.0)
}

/// Digamma function.
#[inline]
pub fn digamma(x: f64) -> f64 {
    statrs::function::gamma::digamma(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    #[test]
    fn sphere_measures_match_known_values() {
        assert_relative_eq!(sphere_measure(0), 2.0, max_relative = 1e-14);
        assert_relative_eq!(sphere_measure(1), 2.0 * PI, max_relative = 1e-14);
        assert_relative_eq!(sphere_measure(2), 4.0 * PI, max_relative = 1e-14);
    }

    #[test]
    fn beta_matches_gamma_ratio() {
        assert_relative_eq!(beta_fn(2.0, 3.0), 1.0 / 12.0, max_relative = 1e-13);
        assert_relative_eq!(beta_fn(0.5, 0.5), PI, max_relative = 1e-13);
    }

    #[test]
    fn generalized_binomial_agrees_with_integer_case() {
        assert_eq!(binomial_general(5.0, 2), 10.0);
        assert_eq!(binomial_general(5.0, 0), 1.0);
        // (5/2 choose 2) = (5/2)(3/2)/2 = 15/8
        assert_relative_eq!(binomial_general(2.5, 2), 15.0 / 8.0, max_relative = 1e-15);
        // Falling factorial passes through zero cleanly.
        assert_eq!(binomial_general(3.0, 5), 0.0);
    }

    #[test]
    fn chi_squared_sf_sanity() {
        // Median of chi^2_1 is ~0.4549.
        let p = chi_squared_sf(0.45493642311957, 1.0);
        assert_relative_eq!(p, 0.5, epsilon = 1e-10);
    }
}
