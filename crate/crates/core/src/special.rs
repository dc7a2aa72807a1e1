//! Special functions on top of `libm`.

use core::f64::consts::PI;

pub fn ln_gamma(x: f64) -> f64 {
    libm::lgamma(x)
}

/// `ln(d!)` extended to non-integer counts through the gamma function.
pub fn ln_factorial(d: f64) -> f64 {
    libm::lgamma(d + 1.0)
}

pub fn normal_pdf(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    libm::exp(-0.5 * z * z) / (sd * libm::sqrt(2.0 * PI))
}

pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / core::f64::consts::SQRT_2)
}

pub fn logit(p: f64) -> f64 {
    libm::log(p / (1.0 - p))
}

pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// Regularized lower incomplete gamma function P(a, x).
pub fn gamma_p(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x < a + 1.0 {
        gamma_p_series(a, x)
    } else {
        1.0 - gamma_q_continued_fraction(a, x)
    }
}

/// Regularized upper incomplete gamma function Q(a, x) = 1 - P(a, x).
pub fn gamma_q(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x < a + 1.0 {
        1.0 - gamma_p_series(a, x)
    } else {
        gamma_q_continued_fraction(a, x)
    }
}

fn gamma_p_series(a: f64, x: f64) -> f64 {
    let mut ap = a;
    let mut term = 1.0 / a;
    let mut sum = term;
    for _ in 0..10_000 {
        ap += 1.0;
        term *= x / ap;
        sum += term;
        if libm::fabs(term) < libm::fabs(sum) * 1e-17 {
            break;
        }
    }
    sum * libm::exp(-x + a * libm::log(x) - ln_gamma(a))
}

fn gamma_q_continued_fraction(a: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / TINY;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..10_000 {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if libm::fabs(d) < TINY {
            d = TINY;
        }
        c = b + an / c;
        if libm::fabs(c) < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if libm::fabs(delta - 1.0) < 1e-16 {
            break;
        }
    }
    libm::exp(-x + a * libm::log(x) - ln_gamma(a)) * h
}

/// `ln(exp(a) + exp(b))` without overflow.
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + libm::log1p(libm::exp(lo - hi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::function::gamma::{gamma_lr, gamma_ur};

    #[test]
    fn incomplete_gamma_against_statrs() {
        for &a in &[0.0015, 0.3, 0.6173, 1.0, 2.5, 10.0, 40.0] {
            for &x in &[1e-6, 0.01, 0.5, 1.0, 3.0, 12.0, 60.0] {
                let ours = gamma_p(a, x);
                let theirs = gamma_lr(a, x);
                assert!((ours - theirs).abs() < 1e-13, "P({a},{x}) {ours} vs {theirs}");
                assert!((gamma_q(a, x) - gamma_ur(a, x)).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn exponential_case_closed_form() {
        for &x in &[0.1, 1.0, 5.0] {
            assert!((gamma_p(1.0, x) - (1.0 - libm::exp(-x))).abs() < 1e-15);
        }
    }

    #[test]
    fn logistic_inverts_logit() {
        for &p in &[1e-6, 0.01, 0.5, 0.93] {
            assert!((logistic(logit(p)) - p).abs() < 1e-15);
        }
    }

    #[test]
    fn normal_cdf_symmetry() {
        assert!((normal_cdf(0.0) - 0.5).abs() < 1e-16);
        assert!((normal_cdf(1.3) + normal_cdf(-1.3) - 1.0).abs() < 1e-15);
    }
}

/// `x^y` for `x ≥ 0` via `exp(y ln x)`; several times cheaper than a correctly
/// rounded `pow` and accurate to a few ulps times `|y ln x|`.
#[inline]
pub fn fast_pow(x: f64, y: f64) -> f64 {
    if x == 0.0 {
        return if y > 0.0 {
            0.0
        } else if y == 0.0 {
            1.0
        } else {
            f64::INFINITY
        };
    }
    libm::exp(y * libm::log(x))
}
