//! Jump-diffusion period index for the reference population.
//!
//! `k_t = k_0 + (μ - σ²/2) t + σ W(t) + Σ_{i ≤ N(t)} Y_i` where `N` is a
//! renewal process and the jump sizes `Y_i` are exponential with rate `η`.
//! One-year increments are treated as independent draws from the mixture
//! `f(r) = Σ_n P(n) f(r | n)`, `P(n)` being the renewal jump-count law over
//! one year and `f(r | n)` the density of a normal plus a Gamma(n, η) sum.

use alloc::vec::Vec;
use core::f64::consts::PI;

use nalgebra::Matrix3;
use rand::Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid, Span};
use crate::lc::LcParams;
use crate::optimize::{hessian, Bfgs, NelderMead};
use crate::panel::{RateKind, RateSurface};
use crate::quadrature::Quadrature;
use crate::renewal::{renewal_jump_probabilities, JumpCountDistribution, JumpCountOptions, RenewalFamily, RenewalLaw};
use crate::special::{ln_gamma, log_add_exp};
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JumpDiffusionParams {
    /// Annual drift of the index.
    pub mu: f64,
    /// Annual diffusion volatility.
    pub sigma: f64,
    /// Rate of the exponential jump-size law (mean jump `1/eta`).
    pub eta: f64,
    /// Inverse time scale of the inter-arrival law.
    pub alpha: f64,
    /// Shape of the inter-arrival law.
    pub beta: f64,
    /// Index value at the projection origin.
    pub k0: f64,
}

impl JumpDiffusionParams {
    pub fn validate(&self) -> Result<()> {
        let ok = [self.sigma, self.eta, self.alpha, self.beta].iter().all(|v| *v > 0.0 && v.is_finite())
            && self.mu.is_finite()
            && self.k0.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(alloc::format!("jump-diffusion parameters out of range: {self:?}")))
        }
    }

    /// Mean of the diffusive part of a one-year increment.
    pub fn drift(&self) -> f64 {
        self.mu - 0.5 * self.sigma * self.sigma
    }

    pub fn law(&self, family: RenewalFamily) -> Result<RenewalLaw> {
        RenewalLaw::new(family, self.alpha, self.beta)
    }
}

/// Log of `f(r | n)`.
pub fn ln_conditional_increment_density(r: f64, n: usize, p: &JumpDiffusionParams, quad_tol: f64) -> Result<f64> {
    let s2 = p.sigma * p.sigma;
    let c = r - p.drift();
    let ln_norm = -0.5 * libm::log(2.0 * PI * s2);
    if n == 0 {
        return Ok(ln_norm - c * c / (2.0 * s2));
    }
    let term = JumpTerm { n, ln_coef: n as f64 * libm::log(p.eta) - ln_gamma(n as f64) };
    Ok(ln_norm + ln_jump_integral(c, &[term], p.eta, s2, quad_tol)?)
}

/// `exp(ln_coef) X^(n-1)` inside the jump-size integral.
#[derive(Debug, Clone, Copy, PartialEq)]
struct JumpTerm {
    n: usize,
    ln_coef: f64,
}

/// Log of `∫_0^∞ Σ_j exp(ln_coef_j) X^(n_j - 1) exp(-ηX - (c - X)²/(2σ²)) dX`.
///
/// Each term is log-concave with a closed-form mode. Terms whose peak sits
/// below 1e-16 of the largest peak are dropped, the window is cut where every
/// remaining term has fallen below that level, and the adaptive rule starts
/// from panels split at the modes.
fn ln_jump_integral(c: f64, terms: &[JumpTerm], eta: f64, s2: f64, quad_tol: f64) -> Result<f64> {
    let drop = libm::log(1e16);
    let q = |x: f64| -eta * x - (c - x) * (c - x) / (2.0 * s2);
    let h = |t: &JumpTerm, x: f64| {
        let power = if t.n == 1 { 0.0 } else { (t.n - 1) as f64 * libm::log(x) };
        t.ln_coef + power + q(x)
    };
    let b0 = c - eta * s2;
    let mut modes: Vec<(f64, f64)> = Vec::with_capacity(terms.len());
    for t in terms {
        let shape = (t.n - 1) as f64;
        let mode = if t.n == 1 { b0.max(0.0) } else { 0.5 * (b0 + libm::sqrt(b0 * b0 + 4.0 * shape * s2)) };
        modes.push((mode, h(t, mode)));
    }
    let top = modes.iter().map(|m| m.1).fold(f64::NEG_INFINITY, f64::max);
    if !top.is_finite() {
        return Ok(f64::NEG_INFINITY);
    }
    let floor = top - drop;
    let mut points: Vec<f64> = Vec::with_capacity(terms.len() + 2);
    let (mut lower, mut upper) = (f64::INFINITY, 0.0f64);
    let mut max_n = 1;
    let mut ln_coef_max = f64::NEG_INFINITY;
    for (t, &(mode, peak)) in terms.iter().zip(&modes) {
        if peak < floor {
            continue;
        }
        max_n = max_n.max(t.n);
        ln_coef_max = ln_coef_max.max(t.ln_coef);
        let shape = (t.n - 1) as f64;
        let width =
            if mode > 0.0 { 1.0 / libm::sqrt(shape / (mode * mode) + 1.0 / s2) } else { f64::min(libm::sqrt(s2), 1.0 / eta) };
        let mut step = width;
        while h(t, mode + step) > floor {
            step *= 2.0;
        }
        upper = upper.max(mode + step);
        let mut lo = 0.0;
        if mode > 0.0 {
            let mut step = width;
            while mode - step > 0.0 {
                if h(t, mode - step) < floor {
                    lo = mode - step;
                    break;
                }
                step *= 2.0;
            }
        }
        lower = lower.min(lo);
        points.push(mode);
    }
    // Polynomial coefficients relative to the largest one.
    let mut poly = alloc::vec![0.0; max_n];
    for t in terms {
        if t.n <= max_n {
            poly[t.n - 1] += libm::exp(t.ln_coef - ln_coef_max);
        }
    }
    points.push(lower);
    points.push(upper);
    points.sort_by(f64::total_cmp);
    points.retain(|&x| x >= lower && x <= upper);
    let shift = ln_coef_max - top;
    let integrand = |x: f64| {
        let value = poly.iter().rev().fold(0.0, |acc, &b| acc * x + b);
        if value <= 0.0 {
            return 0.0;
        }
        libm::exp(libm::log(value) + shift + q(x))
    };
    let quad = Quadrature { abs_tol: quad_tol, rel_tol: 1e-12, max_intervals: 200 };
    let total = quad.integrate_points(integrand, &points)?.value;
    if !(total > 0.0) {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(top + libm::log(total))
}

/// `f(r | n)`: density of a one-year increment given `n` jumps in the year.
pub fn conditional_increment_density(r: f64, n: usize, p: &JumpDiffusionParams, quad_tol: f64) -> Result<f64> {
    Ok(libm::exp(ln_conditional_increment_density(r, n, p, quad_tol)?))
}

/// Unconditional one-year increment law for fixed parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct IncrementLaw {
    pub params: JumpDiffusionParams,
    pub counts: JumpCountDistribution,
    pub quad_tol: f64,
    jump_terms: Vec<JumpTerm>,
}

impl IncrementLaw {
    pub fn new(params: JumpDiffusionParams, family: RenewalFamily, opts: &JumpCountOptions) -> Result<Self> {
        params.validate()?;
        let counts = renewal_jump_probabilities(1.0, &params.law(family)?, opts)?;
        let ln_eta = libm::log(params.eta);
        let jump_terms = counts
            .probs
            .iter()
            .enumerate()
            .skip(1)
            .filter(|(_, &pn)| pn > 0.0)
            .map(|(n, &pn)| JumpTerm { n, ln_coef: libm::log(pn) + n as f64 * ln_eta - ln_gamma(n as f64) })
            .collect();
        Ok(IncrementLaw { params, counts, quad_tol: opts.quad_tol, jump_terms })
    }

    /// `ln Σ_n P(n) f(r | n)`. The `n ≥ 1` terms share one integral over the
    /// total jump size, which equals the sum of the individual integrals.
    pub fn ln_density(&self, r: f64) -> Result<f64> {
        let p = &self.params;
        let s2 = p.sigma * p.sigma;
        let c = r - p.drift();
        let ln_norm = -0.5 * libm::log(2.0 * PI * s2);
        let p0 = self.counts.probs[0];
        let mut acc = if p0 > 0.0 { libm::log(p0) + ln_norm - c * c / (2.0 * s2) } else { f64::NEG_INFINITY };
        if !self.jump_terms.is_empty() {
            let jumps = ln_norm + ln_jump_integral(c, &self.jump_terms, p.eta, s2, self.quad_tol)?;
            acc = log_add_exp(acc, jumps);
        }
        Ok(acc)
    }

    pub fn density(&self, r: f64) -> Result<f64> {
        Ok(libm::exp(self.ln_density(r)?))
    }

    /// Expected one-year increment under the truncated count law.
    pub fn mean(&self) -> f64 {
        self.params.drift() + self.counts.mean() / self.params.eta
    }
}

/// `f(r) = Σ_n P(n) f(r | n)`.
pub fn increment_density(r: f64, p: &JumpDiffusionParams, family: RenewalFamily, opts: &JumpCountOptions) -> Result<f64> {
    IncrementLaw::new(*p, family, opts)?.density(r)
}

/// `Σ ln f(k_i - k_{i-1})`.
pub fn log_likelihood(k_series: &[f64], p: &JumpDiffusionParams, family: RenewalFamily, opts: &JumpCountOptions) -> Result<f64> {
    let law = IncrementLaw::new(*p, family, opts)?;
    k_series.windows(2).try_fold(0.0, |acc, w| Ok(acc + law.ln_density(w[1] - w[0])?))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationOptions {
    pub family: RenewalFamily,
    pub counts: JumpCountOptions,
    /// Number of Nelder–Mead starts (see [`start_grid`]).
    pub starts: usize,
    /// Evaluation budget of the short screening run from every start.
    pub screen_evaluations: usize,
    /// Screened starts carried on to a full Nelder–Mead run.
    pub finalists: usize,
    pub nelder_mead: NelderMead,
    /// Quasi-Newton polish of the best Nelder–Mead point.
    pub refine: bool,
    /// Curvature below which a jump-block direction counts as flat.
    pub weak_curvature: f64,
    /// Compute the jump-block Hessian. Without it the curvature is NaN and
    /// no weak-identification flag is raised.
    pub curvature: bool,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        CalibrationOptions {
            family: RenewalFamily::Gamma,
            counts: JumpCountOptions::default(),
            starts: 8,
            screen_evaluations: 60,
            finalists: 2,
            nelder_mead: NelderMead { max_evaluations: 800, f_tol: 1e-7, x_tol: 1e-6, initial_step: 0.3 },
            refine: true,
            weak_curvature: 0.5,
            curvature: true,
        }
    }
}

impl CalibrationOptions {
    /// Single Nelder–Mead run from the supplied start with a small budget and
    /// no diagnostics: the warm refit used inside bootstrap replicates.
    pub fn warm(&self, max_evaluations: usize) -> Self {
        CalibrationOptions {
            starts: 1,
            finalists: 1,
            nelder_mead: NelderMead { max_evaluations, initial_step: 0.1, ..self.nelder_mead },
            refine: false,
            curvature: false,
            ..*self
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub params: JumpDiffusionParams,
    pub family: RenewalFamily,
    pub loglik: f64,
    pub converged: bool,
    /// Likelihood flat in at least two of the jump directions (η, α, β).
    pub weak_identification: bool,
    /// Eigenvalues (ascending) of the negative log-likelihood Hessian in
    /// `(ln η, ln α, ln β)`.
    pub jump_curvature: [f64; 3],
    pub evaluations: usize,
}

const LOG_BOUND: (f64, f64) = (-25.0, 12.0);

fn to_theta(p: &JumpDiffusionParams) -> [f64; 5] {
    [p.mu, libm::log(p.sigma), libm::log(p.eta), libm::log(p.alpha), libm::log(p.beta)]
}

fn from_theta(theta: &[f64], k0: f64) -> Option<JumpDiffusionParams> {
    if theta[1..].iter().any(|v| !(LOG_BOUND.0..=LOG_BOUND.1).contains(v)) || !theta[0].is_finite() {
        return None;
    }
    Some(JumpDiffusionParams {
        mu: theta[0],
        sigma: libm::exp(theta[1]),
        eta: libm::exp(theta[2]),
        alpha: libm::exp(theta[3]),
        beta: libm::exp(theta[4]),
        k0,
    })
}

/// Deterministic start points built from the increment moments: σ ∈ {s, s/2},
/// η ∈ {1/s, 3/s}, α ∈ {0.05, 0.5}, β ∈ {1, 0.6}, with μ chosen so the
/// expected increment matches the sample mean. The first eight use β = 1.
pub fn start_grid(increments: &[f64], k0: f64) -> Vec<JumpDiffusionParams> {
    let mean = stats::mean(increments);
    let sd = stats::std_dev(increments).max(1e-6);
    let mut out = Vec::with_capacity(16);
    for beta in [1.0, 0.6] {
        for alpha in [0.05, 0.5] {
            for eta in [1.0 / sd, 3.0 / sd] {
                for sigma in [sd, 0.5 * sd] {
                    let mu = mean + 0.5 * sigma * sigma - alpha / eta;
                    out.push(JumpDiffusionParams { mu, sigma, eta, alpha, beta, k0 });
                }
            }
        }
    }
    out
}

/// Maximum-likelihood calibration of the increment mixture.
pub fn calibrate(k_series: &[f64], opts: &CalibrationOptions, init: Option<&JumpDiffusionParams>) -> Result<Calibration> {
    if k_series.len() < 6 {
        return Err(Error::DegenerateFit(alloc::format!(
            "{} increments cannot identify 5 jump-diffusion parameters",
            k_series.len().saturating_sub(1)
        )));
    }
    let k0 = *k_series.last().unwrap_or(&0.0);
    let increments: Vec<f64> = k_series.windows(2).map(|w| w[1] - w[0]).collect();
    let mut evaluations = 0usize;
    let mut objective = |theta: &[f64]| -> f64 {
        let Some(p) = from_theta(theta, k0) else { return f64::INFINITY };
        let Ok(law) = IncrementLaw::new(p, opts.family, &opts.counts) else { return f64::INFINITY };
        let mut ll = 0.0;
        for &r in &increments {
            match law.ln_density(r) {
                Ok(v) => ll += v,
                Err(_) => return f64::INFINITY,
            }
        }
        -ll
    };

    let mut starts: Vec<JumpDiffusionParams> = init.into_iter().copied().collect();
    starts.extend(start_grid(&increments, k0));
    starts.truncate(opts.starts.max(1));

    let screen = NelderMead { max_evaluations: opts.screen_evaluations, ..opts.nelder_mead };
    let mut screened: Vec<(Vec<f64>, f64)> = Vec::with_capacity(starts.len());
    if starts.len() <= opts.finalists.max(1) {
        screened.extend(starts.iter().map(|s| (to_theta(s).to_vec(), 0.0)));
    } else {
        for s in &starts {
            let m = screen.minimize(&mut objective, &to_theta(s));
            evaluations += m.evaluations;
            if m.value.is_finite() {
                screened.push((m.x, m.value));
            }
        }
    }
    // Stable sort: ties keep start order.
    screened.sort_by(|a, b| a.1.total_cmp(&b.1));
    let mut best: Option<(Vec<f64>, f64, bool)> = None;
    for (x, _) in screened.iter().take(opts.finalists.max(1)) {
        let m = opts.nelder_mead.minimize(&mut objective, x);
        evaluations += m.evaluations;
        if m.value.is_finite() && best.as_ref().is_none_or(|b| m.value < b.1) {
            best = Some((m.x, m.value, m.converged));
        }
    }
    let Some((mut theta, mut value, mut converged)) = best else {
        return Err(Error::NonConvergence { stage: "jump-diffusion calibration", iterations: evaluations });
    };
    if opts.refine {
        let m = Bfgs { max_iterations: 40, g_tol: 1e-5, f_tol: 1e-12 }.minimize(&mut objective, &theta);
        evaluations += m.evaluations;
        if m.value < value {
            theta = m.x;
            value = m.value;
            converged |= m.converged;
        }
    }
    let mut jump_curvature = [f64::NAN; 3];
    let mut weak_identification = false;
    if opts.curvature {
        let h = hessian(&mut objective, &theta, 1e-3);
        let block = Matrix3::from_fn(|i, j| h[(i + 2) * 5 + (j + 2)]);
        jump_curvature.copy_from_slice(block.symmetric_eigenvalues().as_slice());
        jump_curvature.sort_by(f64::total_cmp);
        // Annual counts pin the renewal law mostly through F(1), so one flat
        // direction in (ln α, ln β) is normal. Two flat directions mean the
        // jump component as a whole is not identified.
        weak_identification = !(jump_curvature[1] >= opts.weak_curvature);
    }
    let params =
        from_theta(&theta, k0).ok_or(Error::NonConvergence { stage: "jump-diffusion calibration", iterations: evaluations })?;
    Ok(Calibration { params, family: opts.family, loglik: -value, converged, weak_identification, jump_curvature, evaluations })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JumpPersistence {
    /// Jumps accumulate in the index.
    Permanent,
    /// A jump lifts the index only in the year it arrives.
    OneYear,
}

/// `k_1..k_horizon` from `k0`, with a continuing renewal clock across years.
pub fn simulate_k<R: Rng + ?Sized>(
    p: &JumpDiffusionParams,
    law: &RenewalLaw,
    horizon: usize,
    persistence: JumpPersistence,
    rng: &mut R,
) -> Vec<f64> {
    let drift = p.drift();
    let severity = Exp::new(p.eta).expect("positive jump rate");
    let mut next_arrival = law.sample(rng);
    let mut brownian = 0.0;
    let mut accumulated = 0.0;
    let mut path = Vec::with_capacity(horizon);
    for t in 1..=horizon {
        let z: f64 = StandardNormal.sample(rng);
        brownian += p.sigma * z;
        let mut this_year = 0.0;
        while next_arrival <= t as f64 {
            this_year += severity.sample(rng);
            next_arrival += law.sample(rng);
        }
        accumulated += this_year;
        let jumps = match persistence {
            JumpPersistence::Permanent => accumulated,
            JumpPersistence::OneYear => this_year,
        };
        path.push(p.k0 + drift * t as f64 + brownian + jumps);
    }
    path
}

/// `m[x, t] = exp(a_x + b_x k_t)` over the years following `first_year - 1`.
pub fn project_rates(lc: &LcParams, k_path: &[f64], first_year: i32) -> Result<RateSurface> {
    let years = Span::new(first_year, first_year + k_path.len() as i32 - 1)
        .ok_or_else(|| Error::InvalidParameter("empty index path".into()))?;
    let values = Grid::from_fn(lc.a.len(), k_path.len(), |i, j| libm::exp(lc.a[i] + lc.b[i] * k_path[j]));
    RateSurface::new(lc.ages, years, RateKind::Central, values)
}

/// Published England & Wales males calibration (ages 60–89, 1961–2016), `k0 = 0`.
pub fn ew_males_reference_params() -> JumpDiffusionParams {
    JumpDiffusionParams { mu: -0.2640, sigma: 0.2764, eta: 1.4792, alpha: 0.0015, beta: 0.6173, k0: 0.0 }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{domain, substream};
    use std::vec;
    use std::vec::Vec;

    fn unit() -> JumpDiffusionParams {
        JumpDiffusionParams { mu: 0.0, sigma: 1.0, eta: 1.0, alpha: 1.0, beta: 1.0, k0: 0.0 }
    }

    fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(a + i as f64 * h);
        }
        s * h / 3.0
    }

    // Exponentially modified Gaussian: N(m, σ²) + Exp(η).
    fn emg(r: f64, p: &JumpDiffusionParams) -> f64 {
        let m = p.mu - 0.5 * p.sigma * p.sigma;
        let (s, e) = (p.sigma, p.eta);
        let z = (r - m - e * s * s) / s;
        e * (e * (m - r) + 0.5 * e * e * s * s).exp() * statrs::function::erf::erfc(-z / std::f64::consts::SQRT_2) / 2.0
    }

    #[test]
    fn normal_mode_value() {
        let p = JumpDiffusionParams { mu: 0.3, sigma: 0.4, ..unit() };
        let f = conditional_increment_density(p.drift(), 0, &p, 1e-10).unwrap();
        assert!((f - 1.0 / (0.4 * (2.0 * PI).sqrt())).abs() < 1e-14);
    }

    #[test]
    fn single_jump_matches_emg() {
        for p in [
            unit(),
            JumpDiffusionParams { mu: -0.26, sigma: 0.28, eta: 1.48, ..unit() },
            JumpDiffusionParams { mu: 0.1, sigma: 0.05, eta: 20.0, ..unit() },
        ] {
            for i in 0..=40 {
                let r = -3.0 + 0.2 * i as f64;
                let got = conditional_increment_density(r, 1, &p, 1e-12).unwrap();
                let want = emg(r, &p);
                assert!((got - want).abs() <= 1e-9 * want.max(1e-300) + 1e-14, "r={r} got={got} want={want}");
            }
        }
    }

    #[test]
    fn multi_jump_matches_brute_force() {
        let p = JumpDiffusionParams { mu: -0.2, sigma: 0.3, eta: 1.5, ..unit() };
        let m = p.drift();
        for n in [2usize, 3, 5] {
            for r in [-1.0, 0.0, 1.0, 2.5, 6.0] {
                let g = |x: f64| x.powi(n as i32 - 1) * (-p.eta * x - (r - x - m).powi(2) / (2.0 * p.sigma * p.sigma)).exp();
                let c = p.eta.powi(n as i32) / statrs::function::gamma::gamma(n as f64) / (p.sigma * (2.0 * PI).sqrt());
                let want = c * simpson(g, 0.0, 40.0, 400_000);
                let got = conditional_increment_density(r, n, &p, 1e-12).unwrap();
                assert!((got - want).abs() <= 1e-8 * want + 1e-15, "n={n} r={r} got={got} want={want}");
            }
        }
    }

    #[test]
    fn conditional_densities_normalise() {
        let p = JumpDiffusionParams { mu: -0.26, sigma: 0.28, eta: 1.48, ..unit() };
        for n in [1usize, 2, 4] {
            let total = simpson(|r| conditional_increment_density(r, n, &p, 1e-12).unwrap(), -4.0, 25.0, 6000);
            assert!((total - 1.0).abs() < 1e-8, "n={n} total={total}");
        }
    }

    #[test]
    fn monte_carlo_single_jump_density() {
        let p = unit();
        let mut rng = substream(11, domain::SYNTHETIC, 0);
        let exp = Exp::new(1.0).unwrap();
        let (n, h) = (1_000_000usize, 0.05);
        let hits = (0..n)
            .filter(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                (exp.sample(&mut rng) + z - 0.5).abs() < h
            })
            .count();
        let pr = hits as f64 / n as f64;
        let est = pr / (2.0 * h);
        let se = (pr * (1.0 - pr) / n as f64).sqrt() / (2.0 * h);
        let f = conditional_increment_density(0.0, 1, &p, 1e-10).unwrap();
        assert!((est - f).abs() < 3.0 * se, "est={est} f={f} se={se}");
    }

    #[test]
    fn pooled_mixture_equals_term_by_term_sum() {
        let opts = JumpCountOptions::default();
        let p = JumpDiffusionParams { mu: -0.3, sigma: 0.3, eta: 2.0, alpha: 0.5, beta: 1.5, k0: 0.0 };
        let law = IncrementLaw::new(p, RenewalFamily::Gamma, &opts).unwrap();
        for r in [-1.5, -0.3, 0.0, 0.4, 1.0, 3.0, 8.0] {
            let direct: f64 = law
                .counts
                .probs
                .iter()
                .enumerate()
                .map(|(n, pn)| pn * conditional_increment_density(r, n, &p, 1e-12).unwrap())
                .sum();
            let pooled = law.density(r).unwrap();
            assert!((pooled - direct).abs() <= 1e-10 * direct, "r={r} pooled={pooled} direct={direct}");
        }
    }

    #[test]
    fn no_jump_law_gives_normal_density() {
        let p = JumpDiffusionParams { alpha: 1e-300, ..ew_males_reference_params() };
        let opts = JumpCountOptions::default();
        for r in [-1.0, -0.26, 0.0, 0.5] {
            let f = increment_density(r, &p, RenewalFamily::Gamma, &opts).unwrap();
            let f0 = conditional_increment_density(r, 0, &p, 1e-10).unwrap();
            assert_eq!(f, f0);
        }
    }

    #[test]
    fn mixture_normalises_over_parameter_grid() {
        let opts = JumpCountOptions::default();
        let base = ew_males_reference_params();
        let grid = [
            base,
            JumpDiffusionParams { alpha: 0.5, beta: 1.5, eta: 2.0, sigma: 0.3, mu: -0.3, k0: 0.0 },
            JumpDiffusionParams { alpha: 0.2, beta: 0.8, eta: 4.0, sigma: 0.1, mu: 0.05, k0: 0.0 },
        ];
        for family in [RenewalFamily::Gamma, RenewalFamily::Weibull] {
            for p in &grid {
                let law = IncrementLaw::new(*p, family, &opts).unwrap();
                let total = simpson(|r| law.density(r).unwrap(), -5.0, 25.0, 6000);
                assert!((total - 1.0).abs() < 1e-6, "{family:?} {p:?} total={total}");
                for r in [-1.0, 0.0, 0.7, 3.0] {
                    let f = law.density(r).unwrap();
                    assert!(f > 0.0);
                    let f0 = law.counts.probs[0] * conditional_increment_density(r, 0, p, 1e-10).unwrap();
                    assert!(f >= f0);
                }
            }
        }
    }

    #[test]
    fn deterministic_drift_path() {
        let p = JumpDiffusionParams { mu: -0.25, sigma: 0.0, eta: 1.0, alpha: 1e-300, beta: 1.0, k0: 2.0 };
        let law = RenewalLaw::new(RenewalFamily::Weibull, 1e-300, 1.0).unwrap();
        let mut rng = substream(1, domain::SYNTHETIC, 0);
        for persistence in [JumpPersistence::Permanent, JumpPersistence::OneYear] {
            let path = simulate_k(&p, &law, 20, persistence, &mut rng);
            for (t, k) in path.iter().enumerate() {
                assert_eq!(*k, 2.0 - 0.25 * (t + 1) as f64);
            }
        }
    }

    #[test]
    fn simulated_increment_mean_matches_counts() {
        let p = JumpDiffusionParams { mu: -0.3, sigma: 0.3, eta: 2.0, alpha: 0.5, beta: 1.5, k0: 0.0 };
        let family = RenewalFamily::Gamma;
        let law = p.law(family).unwrap();
        let counts = renewal_jump_probabilities(1.0, &law, &JumpCountOptions::default()).unwrap();
        let mut rng = substream(5, domain::SYNTHETIC, 0);
        let draws: Vec<f64> = (0..1_000_000).map(|_| simulate_k(&p, &law, 1, JumpPersistence::OneYear, &mut rng)[0]).collect();
        let want = p.drift() + counts.mean() / p.eta;
        let (m, se) = (stats::mean(&draws), stats::standard_error(&draws));
        assert!((m - want).abs() < 3.0 * se, "mean={m} want={want} se={se}");
    }

    #[test]
    fn jump_free_increment_variance() {
        let p = JumpDiffusionParams { mu: 0.1, sigma: 0.4, eta: 1.0, alpha: 1e-300, beta: 1.0, k0: 0.0 };
        let law = p.law(RenewalFamily::Gamma).unwrap();
        let mut rng = substream(6, domain::SYNTHETIC, 0);
        let draws: Vec<f64> = (0..1_000_000).map(|_| simulate_k(&p, &law, 1, JumpPersistence::Permanent, &mut rng)[0]).collect();
        let v = stats::variance(&draws);
        // SE of a normal sample variance: σ² sqrt(2/(n-1)).
        let se = 0.16 * (2.0 / 999_999.0f64).sqrt();
        assert!((v - 0.16).abs() < 3.0 * se, "var={v}");
    }

    #[test]
    fn persistence_modes_differ_only_in_jumps() {
        let p = JumpDiffusionParams { mu: -0.3, sigma: 0.3, eta: 2.0, alpha: 0.5, beta: 1.5, k0: 1.0 };
        let law = p.law(RenewalFamily::Gamma).unwrap();
        let perm = simulate_k(&p, &law, 30, JumpPersistence::Permanent, &mut substream(9, domain::SYNTHETIC, 3));
        let again = simulate_k(&p, &law, 30, JumpPersistence::Permanent, &mut substream(9, domain::SYNTHETIC, 3));
        let once = simulate_k(&p, &law, 30, JumpPersistence::OneYear, &mut substream(9, domain::SYNTHETIC, 3));
        assert_eq!(perm, again);
        // Same draws: the gap is the jumps accumulated before each year, non-decreasing.
        let gaps: Vec<f64> = perm.iter().zip(&once).map(|(a, b)| a - b).collect();
        assert!(gaps.windows(2).all(|w| w[1] >= w[0] - 1e-12));
        assert!(*gaps.last().unwrap() > 0.0);
    }

    #[test]
    fn projection_closed_form() {
        let ages = Span::new(60, 62).unwrap();
        let years = Span::new(2000, 2002).unwrap();
        let lc = LcParams { ages, years, a: vec![-4.0, -3.5, -3.0], b: vec![0.5, 0.3, 0.2], k: vec![1.0, 0.0, -1.0] };
        let zero = project_rates(&lc, &[0.0; 3], 2003).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(zero.values[(i, j)], lc.a[i].exp());
            }
        }
        let path = [-1.5, -2.0, -2.5];
        let m = project_rates(&lc, &path, 2003).unwrap();
        assert_eq!(m.years, Span::new(2003, 2005).unwrap());
        assert!((m.get(61, 2004).unwrap() - (-3.5f64 + 0.3 * -2.0).exp()).abs() < 1e-16);
        for i in 0..3 {
            for j in 0..3 {
                let want = (lc.a[i] + lc.b[i] * path[j]).exp();
                assert!((m.values[(i, j)] - want).abs() <= 1e-15 * want);
            }
        }
    }

    #[test]
    fn short_series_is_degenerate() {
        let err = calibrate(&[0.0, -0.2, -0.5, -0.6, -0.9], &CalibrationOptions::default(), None).unwrap_err();
        assert!(matches!(err, Error::DegenerateFit(_)));
    }

    #[test]
    fn pure_diffusion_is_weakly_identified() {
        let p = JumpDiffusionParams { mu: -0.2, sigma: 0.3, eta: 1.0, alpha: 1e-300, beta: 1.0, k0: 0.0 };
        let law = p.law(RenewalFamily::Gamma).unwrap();
        let mut k = vec![0.0];
        k.extend(simulate_k(&p, &law, 60, JumpPersistence::Permanent, &mut substream(3, domain::SYNTHETIC, 0)));
        let opts = CalibrationOptions { starts: 2, ..CalibrationOptions::default() };
        let fit = calibrate(&k, &opts, None).unwrap();
        assert!(fit.weak_identification, "{fit:?}");
    }
}
