//! Deterministic reductions. Summation order is fixed (pairwise) so that
//! results do not depend on how callers scheduled the work that produced
//! the samples.

pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const LEAF: usize = 64;
    if xs.len() <= LEAF {
        return xs.iter().fold(0.0, |s, &x| s + x);
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

pub fn mean(xs: &[f64]) -> f64 {
    pairwise_sum(xs) / xs.len() as f64
}

/// Sample variance with divisor n - 1.
pub fn variance(xs: &[f64]) -> f64 {
    covariance(xs, xs)
}

/// Sample covariance with divisor n - 1.
pub fn covariance(xs: &[f64], ys: &[f64]) -> f64 {
    debug_assert_eq!(xs.len(), ys.len());
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let (mx, my) = (mean(xs), mean(ys));
    let prods: alloc::vec::Vec<f64> = xs.iter().zip(ys).map(|(&x, &y)| (x - mx) * (y - my)).collect();
    pairwise_sum(&prods) / (n - 1) as f64
}

pub fn std_dev(xs: &[f64]) -> f64 {
    libm::sqrt(variance(xs))
}

pub fn standard_error(xs: &[f64]) -> f64 {
    std_dev(xs) / libm::sqrt(xs.len() as f64)
}

/// Median of a copy of `xs` (mean of the two middle values for even length).
pub fn median(xs: &[f64]) -> f64 {
    let mut v = alloc::vec::Vec::from(xs);
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Linear-interpolated empirical quantile, `p` in [0, 1].
pub fn quantile(xs: &[f64], p: f64) -> f64 {
    let mut v = alloc::vec::Vec::from(xs);
    v.sort_by(|a, b| a.total_cmp(b));
    let h = p * (v.len() - 1) as f64;
    let lo = libm::floor(h) as usize;
    let hi = (lo + 1).min(v.len() - 1);
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simple_moments() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(mean(&xs), 2.5);
        assert!((variance(&xs) - 5.0 / 3.0).abs() < 1e-15);
        assert_eq!(median(&xs), 2.5);
        assert_eq!(quantile(&xs, 0.0), 1.0);
        assert_eq!(quantile(&xs, 1.0), 4.0);
    }

    #[test]
    fn pairwise_matches_naive_on_integers() {
        let xs: alloc::vec::Vec<f64> = (0..1000).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&xs), 499_500.0);
    }
}
