//! Renewal-process jump counts over a fixed window.
//!
//! For a renewal process with inter-arrival CDF `F` and density `f`, the
//! probability of exactly `n` arrivals in `[0, t]` is `P(0) = 1 - F(t)` and
//! `P(n) = ∫_0^t P_{n-1}(t - s) f(s) ds`. We run the recursion on the
//! arrival-time CDFs `G_n(y) = P(S_n <= y)`, `G_1 = F`,
//! `G_n(y) = ∫_0^y G_{n-1}(y - s) f(s) ds`, so that `P(n) = G_n(t) - G_{n+1}(t)`
//! and the truncated probabilities always sum to `1 - G_{n_max+1}(t)`.
//!
//! Both supported families have densities behaving like `s^(β-1)` at the
//! origin. The substitution `s = y z^(1/β)` removes that singularity, and each
//! `G_n` is carried between recursion levels as a Chebyshev interpolant in
//! `v = (y / t)^β`, where it is smooth.

use alloc::vec::Vec;

use rand::Rng;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::Quadrature;
use crate::special::{fast_pow, gamma_p, ln_gamma};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RenewalFamily {
    /// Gamma inter-arrivals with shape `β` and rate `α`.
    Gamma,
    /// Weibull inter-arrivals, `F(t) = 1 - exp(-(α t)^β)`.
    Weibull,
}

impl RenewalFamily {
    pub fn name(&self) -> &'static str {
        match self {
            RenewalFamily::Gamma => "gamma",
            RenewalFamily::Weibull => "weibull",
        }
    }
}

impl core::str::FromStr for RenewalFamily {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gamma" => Ok(RenewalFamily::Gamma),
            "weibull" => Ok(RenewalFamily::Weibull),
            other => Err(Error::InvalidParameter(alloc::format!("unknown renewal family {other:?}"))),
        }
    }
}

/// Inter-arrival law of the jump renewal process. `alpha` is an inverse time
/// scale (per year), `beta` the shape.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RenewalLaw {
    pub family: RenewalFamily,
    pub alpha: f64,
    pub beta: f64,
}

impl RenewalLaw {
    pub fn new(family: RenewalFamily, alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite() && beta > 0.0 && beta.is_finite()) {
            return Err(Error::InvalidParameter(alloc::format!(
                "renewal parameters must be positive (alpha={alpha}, beta={beta})"
            )));
        }
        Ok(RenewalLaw { family, alpha, beta })
    }

    pub fn cdf(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        match self.family {
            RenewalFamily::Gamma => gamma_p(self.beta, self.alpha * t),
            RenewalFamily::Weibull => -libm::expm1(-libm::pow(self.alpha * t, self.beta)),
        }
    }

    pub fn pdf(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        let (a, b) = (self.alpha, self.beta);
        match self.family {
            RenewalFamily::Gamma => libm::exp(b * libm::log(a) + (b - 1.0) * libm::log(t) - a * t - ln_gamma(b)),
            RenewalFamily::Weibull => {
                let at = a * t;
                a * b * libm::pow(at, b - 1.0) * libm::exp(-libm::pow(at, b))
            }
        }
    }

    /// `f(s) ds/dz` at `s = y z^(1/β)`, as a function of `z^(1/β)`: finite and
    /// smooth on `z ∈ [0, 1]`.
    fn power_weight(&self, y: f64) -> impl Fn(f64) -> f64 {
        let (a, b, family) = (self.alpha, self.beta, self.family);
        let scaled = libm::pow(a * y, b);
        let gamma_scale = libm::exp(b * libm::log(a * y) - ln_gamma(b + 1.0));
        move |root: f64| match family {
            RenewalFamily::Gamma => gamma_scale * libm::exp(-a * y * root),
            RenewalFamily::Weibull => scaled * libm::exp(-scaled * fast_pow(root, b)),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self.family {
            RenewalFamily::Gamma => {
                rand_distr::Gamma::new(self.beta, 1.0 / self.alpha).expect("validated gamma parameters").sample(rng)
            }
            RenewalFamily::Weibull => {
                rand_distr::Weibull::new(1.0 / self.alpha, self.beta).expect("validated weibull parameters").sample(rng)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JumpCountOptions {
    pub n_max: usize,
    /// Truncate once the probability of more jumps falls below this.
    pub tail_tol: f64,
    /// Absolute tolerance of each convolution integral.
    pub quad_tol: f64,
    /// Chebyshev-Lobatto nodes per interpolant, minus one.
    pub nodes: usize,
}

impl Default for JumpCountOptions {
    fn default() -> Self {
        JumpCountOptions { n_max: 10, tail_tol: 1e-9, quad_tol: 1e-10, nodes: 24 }
    }
}

/// `P(N(t) = n)` for `n = 0..probs.len()`, plus the untruncated remainder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JumpCountDistribution {
    pub probs: Vec<f64>,
    /// `P(N(t) > probs.len() - 1)`.
    pub tail: f64,
}

impl JumpCountDistribution {
    pub fn mean(&self) -> f64 {
        self.probs.iter().enumerate().map(|(n, p)| n as f64 * p).sum()
    }

    pub fn total(&self) -> f64 {
        self.probs.iter().sum()
    }
}

/// Chebyshev–Lobatto interpolation on `[0, 1]`.
struct Chebyshev {
    /// Nodes `(1 - cos(πj/N)) / 2`, `j = 0..=N`.
    nodes: Vec<f64>,
    /// `cos(πjk/N)`, row-major in `(j, k)`.
    cosines: Vec<f64>,
}

impl Chebyshev {
    fn lobatto(n: usize) -> Self {
        let nodes = (0..=n).map(|j| 0.5 * (1.0 - libm::cos(core::f64::consts::PI * j as f64 / n as f64))).collect();
        let cosines = (0..=n)
            .flat_map(|j| (0..=n).map(move |k| libm::cos(core::f64::consts::PI * ((j * k) % (2 * n)) as f64 / n as f64)))
            .collect();
        Chebyshev { nodes, cosines }
    }

    /// Coefficients of `Σ c_k T_k(2v - 1)` through the nodal values.
    fn coefficients(&self, values: &[f64]) -> Vec<f64> {
        let n = self.nodes.len() - 1;
        (0..=n)
            .map(|k| {
                let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
                let mut sum = 0.0;
                for (j, &f) in values.iter().enumerate() {
                    let w = if j == 0 || j == n { 0.5 } else { 1.0 };
                    sum += w * f * self.cosines[j * (n + 1) + k];
                }
                let edge = if k == 0 || k == n { 0.5 } else { 1.0 };
                edge * sign * 2.0 * sum / n as f64
            })
            .collect()
    }
}

fn clenshaw(coefs: &[f64], v: f64) -> f64 {
    let x = 2.0 * v - 1.0;
    let (mut b1, mut b2) = (0.0, 0.0);
    for &c in coefs.iter().skip(1).rev() {
        let b0 = 2.0 * x * b1 - b2 + c;
        b2 = b1;
        b1 = b0;
    }
    x * b1 - b2 + coefs[0]
}

/// Jump-count probabilities over a window of length `t` years.
pub fn renewal_jump_probabilities(t: f64, law: &RenewalLaw, opts: &JumpCountOptions) -> Result<JumpCountDistribution> {
    if !(t > 0.0) {
        return Err(Error::InvalidParameter(alloc::format!("window length must be positive, got {t}")));
    }
    let ft = law.cdf(t);
    let mut probs = alloc::vec![1.0 - ft];
    if opts.n_max == 0 || ft < opts.tail_tol {
        return Ok(JumpCountDistribution { probs, tail: ft });
    }
    let quad = Quadrature { abs_tol: opts.quad_tol, rel_tol: 0.0, max_intervals: 200 };
    let cheb = Chebyshev::lobatto(opts.nodes.max(4));
    let inv_beta = 1.0 / law.beta;
    let node_y: Vec<f64> = cheb.nodes.iter().map(|&v| t * libm::pow(v, inv_beta)).collect();

    // Chebyshev coefficients of G_{n-1}; empty while G_1 = F is evaluated exactly.
    let mut previous: Vec<f64> = Vec::new();
    let mut g_prev_t = ft;
    let mut tail = ft;
    for _n in 2..=opts.n_max + 1 {
        let mut current = Vec::with_capacity(node_y.len());
        for &y in &node_y {
            if y <= 0.0 {
                current.push(0.0);
                continue;
            }
            let weight = law.power_weight(y);
            let scale = y / t;
            let est = quad.integrate(
                |z| {
                    let root = fast_pow(z, inv_beta);
                    let rest = 1.0 - root;
                    if rest <= 0.0 {
                        return 0.0;
                    }
                    let g = if previous.is_empty() {
                        law.cdf(y * rest)
                    } else {
                        clenshaw(&previous, fast_pow(scale * rest, law.beta).min(1.0))
                    };
                    g * weight(root)
                },
                0.0,
                1.0,
            )?;
            current.push(est.value.clamp(0.0, 1.0));
        }
        let g_t = *current.last().unwrap_or(&0.0);
        probs.push((g_prev_t - g_t).max(0.0));
        tail = g_t;
        if g_t < opts.tail_tol {
            break;
        }
        g_prev_t = g_t;
        previous = cheb.coefficients(&current);
    }
    Ok(JumpCountDistribution { probs, tail })
}

/// Number of arrivals of an ordinary renewal process in `[0, t]`, simulated
/// by sequential inter-arrival draws.
pub fn simulate_count<R: Rng + ?Sized>(law: &RenewalLaw, t: f64, rng: &mut R) -> usize {
    let mut clock = 0.0;
    let mut n = 0;
    loop {
        clock += law.sample(rng);
        if clock > t {
            return n;
        }
        n += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::function::gamma::gamma_lr;

    fn poisson_pmf(lambda: f64, n: usize) -> f64 {
        libm::exp(-lambda + n as f64 * libm::log(lambda) - ln_gamma(n as f64 + 1.0))
    }

    #[test]
    fn exponential_interarrivals_give_poisson_counts() {
        let law = RenewalLaw::new(RenewalFamily::Gamma, 1.0, 1.0).unwrap();
        let opts = JumpCountOptions { n_max: 12, tail_tol: 1e-12, ..Default::default() };
        let dist = renewal_jump_probabilities(1.0, &law, &opts).unwrap();
        for n in 0..=5 {
            assert!((dist.probs[n] - poisson_pmf(1.0, n)).abs() < 1e-9, "n={n}: {} vs {}", dist.probs[n], poisson_pmf(1.0, n));
        }
    }

    #[test]
    fn gamma_counts_match_closed_form_erlang_sums() {
        // Sum of n Gamma(β, α) inter-arrivals is Gamma(nβ, α).
        for &(alpha, beta) in &[(0.0015, 0.6173), (0.8, 0.6), (1.5, 2.5), (3.0, 1.0)] {
            let law = RenewalLaw::new(RenewalFamily::Gamma, alpha, beta).unwrap();
            let opts = JumpCountOptions { n_max: 10, tail_tol: 1e-14, ..Default::default() };
            let dist = renewal_jump_probabilities(1.0, &law, &opts).unwrap();
            for (n, &p) in dist.probs.iter().enumerate() {
                let exact = if n == 0 {
                    1.0 - gamma_lr(beta, alpha)
                } else {
                    gamma_lr(n as f64 * beta, alpha) - gamma_lr((n + 1) as f64 * beta, alpha)
                };
                assert!((p - exact).abs() < 1e-9, "α={alpha} β={beta} n={n}: {p} vs {exact}");
            }
        }
    }

    #[test]
    fn tiny_window_has_no_jumps() {
        let law = RenewalLaw::new(RenewalFamily::Weibull, 0.5, 1.3).unwrap();
        let dist = renewal_jump_probabilities(1e-9, &law, &JumpCountOptions::default()).unwrap();
        assert!((dist.probs[0] - 1.0).abs() < 1e-9);
        assert!(dist.probs[1..].iter().all(|&p| p < 1e-9));
    }

    #[test]
    fn impossible_jump_law() {
        // (α t)^β underflows, so F(1) is exactly zero.
        let law = RenewalLaw::new(RenewalFamily::Weibull, 1e-300, 2.0).unwrap();
        let dist = renewal_jump_probabilities(1.0, &law, &JumpCountOptions::default()).unwrap();
        assert_eq!(dist.probs, alloc::vec![1.0]);
        assert_eq!(dist.tail, 0.0);
    }

    #[test]
    fn totals_never_exceed_one() {
        for &(fam, a, b) in
            &[(RenewalFamily::Gamma, 2.0, 0.7), (RenewalFamily::Weibull, 1.2, 0.8), (RenewalFamily::Weibull, 0.3, 3.0)]
        {
            let law = RenewalLaw::new(fam, a, b).unwrap();
            let dist = renewal_jump_probabilities(1.0, &law, &JumpCountOptions::default()).unwrap();
            assert!(dist.total() + dist.tail <= 1.0 + 1e-9);
            assert!((dist.total() + dist.tail - 1.0).abs() < 1e-9);
            assert!(dist.probs.iter().all(|&p| p >= 0.0));
        }
    }

    #[test]
    fn invalid_parameters() {
        assert!(RenewalLaw::new(RenewalFamily::Gamma, 0.0, 1.0).is_err());
        assert!(RenewalLaw::new(RenewalFamily::Weibull, 1.0, -1.0).is_err());
    }
}
