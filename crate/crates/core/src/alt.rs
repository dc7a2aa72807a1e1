//! Comparison models: two-population Lee–Carter with transitory jumps, and
//! a reference Lee–Carter with a cohort term plus a common-age-effect book.
//!
//! Jump model dynamics, with `k̂` the jump-free indices and `Δ̂ = k̂¹ - k̂²`:
//!
//! ```text
//! k̂¹[t+1] = k̂¹[t] + μ_k + Z_k            Z_k ~ N(0, V_Z)
//! Δ̂[t+1]  = μ_Δ + φ_Δ Δ̂[t] + Z_Δ         Z_Δ ~ N(0, V_ZΔ)
//! k^i[t]   = k̂^i[t] + N^i[t] Y^i[t]        Y^i ~ N(μ_Y^i, V_Y^i)
//! ```
//!
//! A jump lasts one year. The joint law of `(N¹, N²)` is a pmf over the four
//! states `(0,0), (0,1), (1,0), (1,1)`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::book::{fit_book, BookFamily, BookFitOptions, BookModelFit};
use crate::cohort::{CohortIndex, MIN_COHORT_CELLS};
use crate::error::{Error, Result};
use crate::grid::{Grid, Span};
use crate::lc::{fit_lc, fit_lc_from, poisson_loglik, LcOptions, LcParams};
use crate::panel::{MortalityPanel, RateKind, RateSurface};

fn sq(x: f64) -> f64 {
    x * x
}

/// Joint jump states in pmf order: `(N¹, N²)`.
pub const JUMP_STATES: [(bool, bool); 4] = [(false, false), (false, true), (true, false), (true, true)];

/// Which severity population 2 receives when it jumps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Jump2Source {
    /// `k² = k̂² + N² Y²`.
    #[default]
    Own,
    /// `k² = k̂² + N¹ Y¹`, the last recursion as printed.
    Population1,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZhouStyleParams {
    pub ages1: Span,
    pub a1: Vec<f64>,
    pub b1: Vec<f64>,
    pub ages2: Span,
    pub a2: Vec<f64>,
    pub b2: Vec<f64>,
    pub mu_k: f64,
    pub v_z: f64,
    pub mu_y1: f64,
    pub mu_y2: f64,
    pub v_y1: f64,
    pub v_y2: f64,
    pub mu_dk: f64,
    pub phi_dk: f64,
    pub v_zdk: f64,
    pub jump_joint_pmf: [f64; 4],
    /// Jump-free `k̂¹` at the projection origin.
    pub k1_hat_last: f64,
    /// Last estimated spread `Δ̂`, `spread_lag` years before the origin.
    pub spread_last: f64,
    pub spread_lag: usize,
}

impl ZhouStyleParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [("V_Z", self.v_z), ("V_Y1", self.v_y1), ("V_Y2", self.v_y2), ("V_ZDk", self.v_zdk)];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidParameter(format!("{name} = {v} must be positive")));
            }
        }
        if self.jump_joint_pmf.iter().any(|p| !(*p >= 0.0)) {
            return Err(Error::InvalidParameter("negative jump probability".into()));
        }
        let total: f64 = self.jump_joint_pmf.iter().sum();
        if libm::fabs(total - 1.0) > 1e-12 {
            return Err(Error::InvalidParameter(format!("jump pmf sums to {total}")));
        }
        if self.a1.len() != self.ages1.len() || self.b1.len() != self.ages1.len() {
            return Err(Error::DimensionMismatch("population 1 age effects".into()));
        }
        if self.a2.len() != self.ages2.len() || self.b2.len() != self.ages2.len() {
            return Err(Error::DimensionMismatch("population 2 age effects".into()));
        }
        Ok(())
    }
}

/// Ages 60–89 of the published LC-with-jumps book-side age effects.
pub const PUBLISHED_BOOK_LC_A: [f64; 30] = [
    -0.8348, -0.8006, -0.7823, -0.7775, -0.7879, -0.8082, -0.7920, -0.8199, -0.7798, -0.7650, -0.7193, -0.6876, -0.6941, -0.6655,
    -0.6572, -0.6154, -0.6021, -0.5548, -0.5528, -0.5282, -0.4969, -0.4566, -0.4905, -0.4426, -0.4414, -0.4493, -0.4449, -0.4244,
    -0.3931, -0.4136,
];
pub const PUBLISHED_BOOK_LC_B: [f64; 30] = [
    0.0234, 0.0230, 0.0217, 0.0222, 0.0225, 0.0234, 0.0205, 0.0199, 0.0199, 0.0194, 0.0189, 0.0177, 0.0191, 0.0175, 0.0168,
    0.0188, 0.0166, 0.0167, 0.0159, 0.0146, 0.0153, 0.0136, 0.0126, 0.0131, 0.0124, 0.0124, 0.0140, 0.0131, 0.0106, 0.0113,
];
/// Ages 60–89 of the published LC+Cohorts book level differences.
pub const PUBLISHED_CAE_BOOK_A: [f64; 30] = [
    -0.5431, -0.5123, -0.4981, -0.4897, -0.4995, -0.5207, -0.5223, -0.5495, -0.5135, -0.5032, -0.4664, -0.4513, -0.4500, -0.4293,
    -0.4287, -0.3930, -0.3886, -0.3545, -0.3569, -0.3419, -0.3171, -0.2893, -0.3201, -0.2828, -0.2801, -0.2988, -0.2904, -0.2846,
    -0.2639, -0.2944,
];

/// Published joint pmf; the `(1,0)` state is not printed and receives the
/// remaining mass.
pub fn published_jump_pmf() -> [f64; 4] {
    let (p00, p01, p11) = (0.7763, 0.0967, 0.1269);
    [p00, p01, 1.0 - p00 - p01 - p11, p11]
}

/// Published jump-model parameters with the given population 1 age effects
/// and the book-side age effects as population 2. Only one innovation
/// variance is printed, so it is used for both `Z_k` and `Z_Δ`.
pub fn published_zhou_params(ages1: Span, a1: Vec<f64>, b1: Vec<f64>) -> ZhouStyleParams {
    ZhouStyleParams {
        ages1,
        a1,
        b1,
        ages2: Span { first: 60, last: 89 },
        a2: PUBLISHED_BOOK_LC_A.to_vec(),
        b2: PUBLISHED_BOOK_LC_B.to_vec(),
        mu_k: -0.4973,
        v_z: 0.3915,
        mu_y1: 4.2915,
        mu_y2: 4.5614,
        v_y1: 0.5608,
        v_y2: 0.6849,
        mu_dk: -0.3108,
        phi_dk: 0.0496,
        v_zdk: 0.3915,
        jump_joint_pmf: published_jump_pmf(),
        k1_hat_last: 0.0,
        spread_last: 0.0,
        spread_lag: 0,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZhouPaths {
    pub k1: Vec<f64>,
    pub k2: Vec<f64>,
}

fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

fn draw_state<R: Rng + ?Sized>(pmf: &[f64; 4], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (s, p) in pmf.iter().enumerate() {
        acc += p;
        if u < acc {
            return s;
        }
    }
    // Rounding left u above the cumulative sum: last state with mass.
    pmf.iter().rposition(|p| *p > 0.0).unwrap_or(0)
}

/// Paired index paths for years `1..=horizon` after the origin.
///
/// Per year the draws are: `Z_k`, `Z_Δ`, the state uniform, then `Y¹` and
/// `Y²` only for populations that jump.
pub fn simulate_zhou<R: Rng + ?Sized>(p: &ZhouStyleParams, source: Jump2Source, horizon: usize, rng: &mut R) -> ZhouPaths {
    let (sz, sd, s1, s2) = (libm::sqrt(p.v_z), libm::sqrt(p.v_zdk), libm::sqrt(p.v_y1), libm::sqrt(p.v_y2));
    let mut spread = p.spread_last;
    for _ in 0..p.spread_lag {
        spread = p.mu_dk + p.phi_dk * spread + sd * normal(rng);
    }
    let mut k1_hat = p.k1_hat_last;
    let mut out = ZhouPaths { k1: Vec::with_capacity(horizon), k2: Vec::with_capacity(horizon) };
    for _ in 0..horizon {
        k1_hat += p.mu_k + sz * normal(rng);
        spread = p.mu_dk + p.phi_dk * spread + sd * normal(rng);
        let (n1, n2) = JUMP_STATES[draw_state(&p.jump_joint_pmf, rng)];
        let y1 = if n1 { p.mu_y1 + s1 * normal(rng) } else { 0.0 };
        let j2 = match source {
            Jump2Source::Own if n2 => p.mu_y2 + s2 * normal(rng),
            Jump2Source::Own => 0.0,
            Jump2Source::Population1 => y1,
        };
        out.k1.push(k1_hat + y1);
        out.k2.push(k1_hat - spread + j2);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZhouFitOptions {
    pub lc: LcOptions,
    pub max_iterations: usize,
    /// Stop when no parameter moves by more than this.
    pub tol: f64,
    /// Posterior state probabilities below this are set to zero.
    pub prune: f64,
}

impl Default for ZhouFitOptions {
    fn default() -> Self {
        ZhouFitOptions { lc: LcOptions::default(), max_iterations: 500, tol: 1e-8, prune: 1e-12 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZhouFit {
    pub params: ZhouStyleParams,
    pub lc1: LcParams,
    pub lc2: LcParams,
    /// Years over which the joint jump model was estimated.
    pub years: Span,
    /// Smoothed state probabilities per year, in `JUMP_STATES` order.
    pub state_probs: Vec<[f64; 4]>,
    /// Expected jump sizes per year.
    pub expected_jumps: Vec<[f64; 2]>,
    pub iterations: usize,
    pub converged: bool,
    /// Filter log-likelihood of the indices under the returned parameters.
    pub loglik: f64,
    /// Whether the jump mixture beat the jump-free model on BIC.
    pub jumps_selected: bool,
}

/// Two-dimensional Gaussian `N(mean, cov)` in `(y1, y2)`.
#[derive(Debug, Clone, Copy)]
struct Gauss2 {
    mean: [f64; 2],
    cov: [[f64; 2]; 2],
}

impl Gauss2 {
    fn inverse(&self) -> ([[f64; 2]; 2], f64) {
        let c = self.cov;
        let det = c[0][0] * c[1][1] - c[0][1] * c[1][0];
        ([[c[1][1] / det, -c[0][1] / det], [-c[1][0] / det, c[0][0] / det]], det)
    }

    fn ln_pdf(&self, y: [f64; 2]) -> f64 {
        let (inv, det) = self.inverse();
        let r = [y[0] - self.mean[0], y[1] - self.mean[1]];
        let q = r[0] * (inv[0][0] * r[0] + inv[0][1] * r[1]) + r[1] * (inv[1][0] * r[0] + inv[1][1] * r[1]);
        -libm::log(2.0 * core::f64::consts::PI) - 0.5 * libm::log(det) - 0.5 * q
    }
}

struct JumpEm<'a> {
    y: &'a [[f64; 2]],
    prune: f64,
}

/// Parameters the EM iterates on.
#[derive(Debug, Clone, Copy, PartialEq)]
struct EmState {
    mu_k: f64,
    v_z: f64,
    mu_dk: f64,
    phi_dk: f64,
    v_zdk: f64,
    mu_y: [f64; 2],
    v_y: [f64; 2],
    pmf: [f64; 4],
}

impl EmState {
    fn max_change(&self, o: &EmState) -> f64 {
        let a = [self.mu_k, self.v_z, self.mu_dk, self.phi_dk, self.v_zdk, self.mu_y[0], self.mu_y[1], self.v_y[0], self.v_y[1]];
        let b = [o.mu_k, o.v_z, o.mu_dk, o.phi_dk, o.v_zdk, o.mu_y[0], o.mu_y[1], o.v_y[0], o.v_y[1]];
        let pars = a.iter().zip(&b).map(|(x, y)| libm::fabs(x - y));
        let probs = self.pmf.iter().zip(&o.pmf).map(|(x, y)| libm::fabs(x - y));
        pars.chain(probs).fold(0.0, f64::max)
    }
}

struct EStep {
    probs: Vec<[f64; 4]>,
    /// Posterior mean and variance of each jump given each state.
    jump_mean: Vec<[[f64; 2]; 4]>,
    jump_var: Vec<[[f64; 2]; 4]>,
    expected: Vec<[f64; 2]>,
    /// Posterior variances of `J¹`, `J²` and `J¹ - J²`.
    spread_var: Vec<[f64; 3]>,
}

impl JumpEm<'_> {
    /// Gaussian for the jump-free `(k̂¹, k̂²)` of year `t` implied by the
    /// dynamics and the neighbouring years' current estimates.
    fn local_prior(&self, s: &EmState, x: &[[f64; 2]], t: usize) -> Gauss2 {
        let n = x.len();
        let z1 = |u: usize| x[u][0];
        let z2 = |u: usize| x[u][0] - x[u][1];
        // Level: random walk neighbours.
        let (mut p1, mut m1) = (0.0, 0.0);
        if t > 0 {
            p1 += 1.0 / s.v_z;
            m1 += (z1(t - 1) + s.mu_k) / s.v_z;
        }
        if t + 1 < n {
            p1 += 1.0 / s.v_z;
            m1 += (z1(t + 1) - s.mu_k) / s.v_z;
        }
        // Spread: AR(1) neighbours, stationary law for the first year.
        let (mut p2, mut m2) = (0.0, 0.0);
        if t > 0 {
            p2 += 1.0 / s.v_zdk;
            m2 += (s.mu_dk + s.phi_dk * z2(t - 1)) / s.v_zdk;
        } else if libm::fabs(s.phi_dk) < 1.0 {
            let v = s.v_zdk / (1.0 - s.phi_dk * s.phi_dk);
            p2 += 1.0 / v;
            m2 += s.mu_dk / (1.0 - s.phi_dk) / v;
        }
        if t + 1 < n {
            p2 += s.phi_dk * s.phi_dk / s.v_zdk;
            m2 += s.phi_dk * (z2(t + 1) - s.mu_dk) / s.v_zdk;
        }
        if !(p2 > 0.0) {
            // Unit-root spread with no previous year: effectively flat.
            p2 = 1e-12 / s.v_zdk;
            m2 = 0.0;
        }
        let (v1, v2) = (1.0 / p1, 1.0 / p2);
        let (m1, m2) = (m1 * v1, m2 * v2);
        Gauss2 { mean: [m1, m1 - m2], cov: [[v1, v1], [v1, v1 + v2]] }
    }

    fn e_step(&self, s: &EmState, x: &[[f64; 2]]) -> EStep {
        let n = self.y.len();
        let mut out = EStep {
            probs: vec![[0.0; 4]; n],
            jump_mean: vec![[[0.0; 2]; 4]; n],
            jump_var: vec![[[0.0; 2]; 4]; n],
            expected: vec![[0.0; 2]; n],
            spread_var: vec![[0.0; 3]; n],
        };
        for t in 0..n {
            let prior = self.local_prior(s, x, t);
            let mut ln_w = [f64::NEG_INFINITY; 4];
            let mut cross = [0.0; 4];
            for (st, &(n1, n2)) in JUMP_STATES.iter().enumerate() {
                if s.pmf[st] <= 0.0 {
                    continue;
                }
                let on = [n1, n2];
                let mut g = prior;
                for i in 0..2 {
                    if on[i] {
                        g.mean[i] += s.mu_y[i];
                        g.cov[i][i] += s.v_y[i];
                    }
                }
                ln_w[st] = libm::log(s.pmf[st]) + g.ln_pdf(self.y[t]);
                // E[J | y, state] = μ_J + Σ_J S⁻¹ (y - mean), Var = Σ_J - Σ_J S⁻¹ Σ_J.
                let (inv, _) = g.inverse();
                let r = [self.y[t][0] - g.mean[0], self.y[t][1] - g.mean[1]];
                for i in 0..2 {
                    if on[i] {
                        let gain = s.v_y[i] * (inv[i][0] * r[0] + inv[i][1] * r[1]);
                        out.jump_mean[t][st][i] = s.mu_y[i] + gain;
                        out.jump_var[t][st][i] = s.v_y[i] - s.v_y[i] * s.v_y[i] * inv[i][i];
                    }
                }
                if n1 && n2 {
                    cross[st] = -s.v_y[0] * s.v_y[1] * inv[0][1];
                }
            }
            let top = ln_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut w = [0.0; 4];
            for st in 0..4 {
                w[st] = libm::exp(ln_w[st] - top);
            }
            let total: f64 = w.iter().sum();
            for v in w.iter_mut() {
                *v /= total;
                if *v < self.prune {
                    *v = 0.0;
                }
            }
            let total: f64 = w.iter().sum();
            for v in w.iter_mut() {
                *v /= total;
            }
            let (mut m2, mut c12) = ([0.0; 2], 0.0);
            for st in 0..4 {
                let (jm, jv) = (out.jump_mean[t][st], out.jump_var[t][st]);
                for i in 0..2 {
                    out.expected[t][i] += w[st] * jm[i];
                    m2[i] += w[st] * (jv[i] + jm[i] * jm[i]);
                }
                c12 += w[st] * (cross[st] + jm[0] * jm[1]);
            }
            let ex = out.expected[t];
            let (v1, v2) = (m2[0] - ex[0] * ex[0], m2[1] - ex[1] * ex[1]);
            let cov = c12 - ex[0] * ex[1];
            out.spread_var[t] = [v1.max(0.0), v2.max(0.0), (v1 + v2 - 2.0 * cov).max(0.0)];
            out.probs[t] = w;
        }
        out
    }

    fn m_step(&self, prev: &EmState, e: &EStep, floors: [f64; 3]) -> (EmState, Vec<[f64; 2]>) {
        let n = self.y.len();
        let mut s = *prev;
        for st in 0..4 {
            s.pmf[st] = e.probs.iter().map(|w| w[st]).sum::<f64>() / n as f64;
        }
        for i in 0..2 {
            let (mut w_sum, mut m_sum) = (0.0, 0.0);
            for t in 0..n {
                for (st, on) in JUMP_STATES.iter().enumerate() {
                    if [on.0, on.1][i] {
                        w_sum += e.probs[t][st];
                        m_sum += e.probs[t][st] * e.jump_mean[t][st][i];
                    }
                }
            }
            // A severity law with no posterior mass keeps its previous value.
            if w_sum > 1e-8 {
                let mu = m_sum / w_sum;
                let mut v_sum = 0.0;
                for t in 0..n {
                    for (st, on) in JUMP_STATES.iter().enumerate() {
                        if [on.0, on.1][i] {
                            let d = e.jump_mean[t][st][i] - mu;
                            v_sum += e.probs[t][st] * (e.jump_var[t][st][i] + d * d);
                        }
                    }
                }
                s.mu_y[i] = mu;
                s.v_y[i] = (v_sum / w_sum).max(floors[2]);
            }
        }
        let x: Vec<[f64; 2]> = (0..n).map(|t| [self.y[t][0] - e.expected[t][0], self.y[t][1] - e.expected[t][1]]).collect();
        let d1: Vec<f64> = x.windows(2).map(|w| w[1][0] - w[0][0]).collect();
        s.mu_k = d1.iter().sum::<f64>() / d1.len() as f64;
        // Plug-in residuals plus the posterior uncertainty of the removed jumps.
        let jv = &e.spread_var;
        let ss1: f64 = d1.iter().enumerate().map(|(t, d)| sq(d - s.mu_k) + jv[t][0] + jv[t + 1][0]).sum();
        s.v_z = (ss1 / d1.len() as f64).max(floors[0]);
        let z2: Vec<f64> = x.iter().map(|v| v[0] - v[1]).collect();
        let (lag, lead) = (&z2[..n - 1], &z2[1..]);
        let m = (n - 1) as f64;
        let (mx, my) = (lag.iter().sum::<f64>() / m, lead.iter().sum::<f64>() / m);
        let sxx: f64 = lag.iter().map(|v| (v - mx) * (v - mx)).sum();
        let sxy: f64 = lag.iter().zip(lead).map(|(u, v)| (u - mx) * (v - my)).sum();
        s.phi_dk = if sxx > 1e-300 { sxy / sxx } else { 0.0 };
        s.mu_dk = my - s.phi_dk * mx;
        let ss2: f64 = lag
            .iter()
            .zip(lead)
            .enumerate()
            .map(|(t, (u, v))| sq(v - s.mu_dk - s.phi_dk * u) + jv[t + 1][2] + s.phi_dk * s.phi_dk * jv[t][2])
            .sum();
        s.v_zdk = (ss2 / m).max(floors[1]);
        (s, x)
    }
}

type M2 = [[f64; 2]; 2];

fn mul2(a: &M2, b: &M2) -> M2 {
    let mut c = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            c[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    c
}

fn transpose2(a: &M2) -> M2 {
    [[a[0][0], a[1][0]], [a[0][1], a[1][1]]]
}

/// Log-likelihood of the indices by a Kalman filter on `(k̂¹, Δ̂)` whose
/// observation noise is the four-state jump mixture, collapsed to one
/// Gaussian after each year. The first year is taken as jump-free and
/// conditioned on.
fn filter_loglik(s: &EmState, y: &[[f64; 2]]) -> f64 {
    let h: M2 = [[1.0, 0.0], [1.0, -1.0]];
    let ht = transpose2(&h);
    let mut m = [y[0][0], y[0][0] - y[0][1]];
    let mut p: M2 = [[0.0; 2]; 2];
    let mut ll = 0.0;
    for obs in &y[1..] {
        m = [m[0] + s.mu_k, s.mu_dk + s.phi_dk * m[1]];
        p = [[p[0][0] + s.v_z, s.phi_dk * p[0][1]], [s.phi_dk * p[1][0], s.phi_dk * s.phi_dk * p[1][1] + s.v_zdk]];
        let hp = mul2(&h, &p);
        let s_base = mul2(&hp, &ht);
        let y_base = [m[0], m[0] - m[1]];
        let mut lw = [f64::NEG_INFINITY; 4];
        let mut means = [[0.0; 2]; 4];
        let mut covs = [[[0.0; 2]; 2]; 4];
        for (st, &(n1, n2)) in JUMP_STATES.iter().enumerate() {
            if s.pmf[st] <= 0.0 {
                continue;
            }
            let mut g = Gauss2 { mean: y_base, cov: s_base };
            for (i, on) in [n1, n2].into_iter().enumerate() {
                if on {
                    g.mean[i] += s.mu_y[i];
                    g.cov[i][i] += s.v_y[i];
                }
            }
            lw[st] = libm::log(s.pmf[st]) + g.ln_pdf(*obs);
            let (inv, _) = g.inverse();
            let gain = mul2(&mul2(&p, &ht), &inv);
            let r = [obs[0] - g.mean[0], obs[1] - g.mean[1]];
            means[st] = [m[0] + gain[0][0] * r[0] + gain[0][1] * r[1], m[1] + gain[1][0] * r[0] + gain[1][1] * r[1]];
            let khp = mul2(&gain, &hp);
            covs[st] = [[p[0][0] - khp[0][0], p[0][1] - khp[0][1]], [p[1][0] - khp[1][0], p[1][1] - khp[1][1]]];
        }
        let top = lw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let w: [f64; 4] = core::array::from_fn(|st| libm::exp(lw[st] - top));
        let total: f64 = w.iter().sum();
        ll += top + libm::log(total);
        let mut nm = [0.0; 2];
        for st in 0..4 {
            for i in 0..2 {
                nm[i] += w[st] / total * means[st][i];
            }
        }
        let mut np: M2 = [[0.0; 2]; 2];
        for st in 0..4 {
            let d = [means[st][0] - nm[0], means[st][1] - nm[1]];
            for i in 0..2 {
                for j in 0..2 {
                    np[i][j] += w[st] / total * (covs[st][i][j] + d[i] * d[j]);
                }
            }
        }
        m = nm;
        p = np;
    }
    ll
}

/// Jump-free dynamics by least squares on the raw indices.
fn no_jump_state(y: &[[f64; 2]], floors: [f64; 3], template: &EmState) -> EmState {
    let d1: Vec<f64> = y.windows(2).map(|w| w[1][0] - w[0][0]).collect();
    let mu_k = d1.iter().sum::<f64>() / d1.len() as f64;
    let v_z = (d1.iter().map(|d| sq(d - mu_k)).sum::<f64>() / d1.len() as f64).max(floors[0]);
    let z2: Vec<f64> = y.iter().map(|v| v[0] - v[1]).collect();
    let (lag, lead) = (&z2[..z2.len() - 1], &z2[1..]);
    let m = lag.len() as f64;
    let (mx, my) = (lag.iter().sum::<f64>() / m, lead.iter().sum::<f64>() / m);
    let sxx: f64 = lag.iter().map(|v| (v - mx) * (v - mx)).sum();
    let sxy: f64 = lag.iter().zip(lead).map(|(u, v)| (u - mx) * (v - my)).sum();
    let phi_dk = if sxx > 1e-300 { sxy / sxx } else { 0.0 };
    let mu_dk = my - phi_dk * mx;
    let v_zdk = (lag.iter().zip(lead).map(|(u, v)| sq(v - mu_dk - phi_dk * u)).sum::<f64>() / m).max(floors[1]);
    EmState { mu_k, v_z, mu_dk, phi_dk, v_zdk, pmf: [1.0, 0.0, 0.0, 0.0], ..*template }
}

/// Jump-model fit on pre-fitted Lee–Carter indices over their common years.
pub fn fit_zhou_indices(
    lc1: &LcParams,
    lc2: &LcParams,
    init: Option<&ZhouStyleParams>,
    opts: &ZhouFitOptions,
) -> Result<ZhouFit> {
    let years = lc1.years.intersect(&lc2.years).ok_or(Error::EmptyYearOverlap)?;
    if years.len() < 4 {
        return Err(Error::DegenerateFit(format!("{} common years are too few for the jump model", years.len())));
    }
    let (o1, o2) = (lc1.years.offset(years.first).unwrap_or(0), lc2.years.offset(years.first).unwrap_or(0));
    let y: Vec<[f64; 2]> = (0..years.len()).map(|j| [lc1.k[o1 + j], lc2.k[o2 + j]]).collect();
    let incr_var = |i: usize| {
        let d: Vec<f64> = y.windows(2).map(|w| w[1][i] - w[0][i]).collect();
        let m = d.iter().sum::<f64>() / d.len() as f64;
        (d.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / d.len() as f64).max(1e-12)
    };
    let scale = incr_var(0).max(incr_var(1));
    let floors = [1e-10 * scale, 1e-10 * scale, 1e-4 * scale];
    let mut state = match init {
        Some(p) => EmState {
            mu_k: p.mu_k,
            v_z: p.v_z,
            mu_dk: p.mu_dk,
            phi_dk: p.phi_dk,
            v_zdk: p.v_zdk,
            mu_y: [p.mu_y1, p.mu_y2],
            v_y: [p.v_y1, p.v_y2],
            pmf: p.jump_joint_pmf,
        },
        None => {
            let sd = libm::sqrt(scale);
            EmState {
                mu_k: (y[y.len() - 1][0] - y[0][0]) / (y.len() - 1) as f64,
                v_z: incr_var(0),
                mu_dk: 0.0,
                phi_dk: 0.5,
                v_zdk: incr_var(0).min(incr_var(1)),
                mu_y: [4.0 * sd, 4.0 * sd],
                v_y: [scale, scale],
                pmf: [0.97, 0.01, 0.01, 0.01],
            }
        }
    };
    // Every state keeps a sliver of mass at the start so none is lost for good.
    for p in state.pmf.iter_mut() {
        *p = p.max(1e-3);
    }
    let total: f64 = state.pmf.iter().sum();
    state.pmf.iter_mut().for_each(|p| *p /= total);

    let em = JumpEm { y: &y, prune: opts.prune };
    let mut x: Vec<[f64; 2]> = y.clone();
    let mut e = em.e_step(&state, &x);
    let mut converged = false;
    let mut iterations = 0;
    for iter in 1..=opts.max_iterations {
        iterations = iter;
        let (next, nx) = em.m_step(&state, &e, floors);
        let change = next.max_change(&state);
        let finite =
            [next.mu_k, next.v_z, next.mu_dk, next.phi_dk, next.v_zdk, next.mu_y[0], next.mu_y[1], next.v_y[0], next.v_y[1]]
                .iter()
                .all(|v| v.is_finite());
        if !finite {
            return Err(Error::NonConvergence { stage: "jump model EM", iterations: iter });
        }
        state = next;
        x = nx;
        e = em.e_step(&state, &x);
        if change <= opts.tol {
            converged = true;
            break;
        }
    }
    // The jump mixture is only kept when it beats the jump-free model on BIC
    // (seven extra parameters: two severity laws and three free probabilities).
    let ln_n = libm::log((y.len() - 1) as f64);
    let loglik_jumps = filter_loglik(&state, &y);
    let plain = no_jump_state(&y, floors, &state);
    let loglik_plain = filter_loglik(&plain, &y);
    let jumps_selected = -2.0 * loglik_jumps + 12.0 * ln_n < -2.0 * loglik_plain + 5.0 * ln_n;
    let loglik = if jumps_selected { loglik_jumps } else { loglik_plain };
    if !jumps_selected {
        state = plain;
        x = y.clone();
        e = em.e_step(&state, &x);
    }
    let last = y.len() - 1;
    let origin = lc1.years.last;
    let k1_hat_last = if origin == years.last { x[last][0] } else { lc1.k[lc1.k.len() - 1] };
    let params = ZhouStyleParams {
        ages1: lc1.ages,
        a1: lc1.a.clone(),
        b1: lc1.b.clone(),
        ages2: lc2.ages,
        a2: lc2.a.clone(),
        b2: lc2.b.clone(),
        mu_k: state.mu_k,
        v_z: state.v_z,
        mu_y1: state.mu_y[0],
        mu_y2: state.mu_y[1],
        v_y1: state.v_y[0],
        v_y2: state.v_y[1],
        mu_dk: state.mu_dk,
        phi_dk: state.phi_dk,
        v_zdk: state.v_zdk,
        jump_joint_pmf: state.pmf,
        k1_hat_last,
        spread_last: x[last][0] - x[last][1],
        spread_lag: (origin - years.last).max(0) as usize,
    };
    Ok(ZhouFit {
        params,
        lc1: lc1.clone(),
        lc2: lc2.clone(),
        years,
        state_probs: e.probs,
        expected_jumps: e.expected,
        iterations,
        converged,
        loglik,
        jumps_selected,
    })
}

/// Lee–Carter on each population's own panel, then the joint jump model.
pub fn fit_zhou(reference: &MortalityPanel, book: &MortalityPanel, opts: &ZhouFitOptions) -> Result<ZhouFit> {
    let lc1 = fit_lc(reference, &opts.lc)?.params;
    let lc2 = fit_lc(book, &opts.lc)?.params;
    fit_zhou_indices(&lc1, &lc2, None, opts)
}

/// Refit warm-started from `base` (bootstrap replicates).
pub fn refit_zhou(reference: &MortalityPanel, book: &MortalityPanel, base: &ZhouFit, opts: &ZhouFitOptions) -> Result<ZhouFit> {
    let lc1 = fit_lc_from(reference, &base.lc1, &opts.lc)?.params;
    let lc2 = fit_lc_from(book, &base.lc2, &opts.lc)?.params;
    fit_zhou_indices(&lc1, &lc2, Some(&base.params), opts)
}

/// Reference `ln m = a + b k + γ[t - x]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LcCohortParams {
    pub lc: LcParams,
    pub gamma: Vec<f64>,
    pub cohorts: CohortIndex,
}

impl LcCohortParams {
    /// Cohort effect for a cell; zero for cohorts outside the fitted panel.
    pub fn gamma_at(&self, age: i32, year: i32) -> f64 {
        self.cohorts.group(year - age).map_or(0.0, |g| self.gamma[g])
    }

    pub fn log_rate(&self, i: usize, j: usize) -> f64 {
        self.lc.log_rate(i, j) + self.gamma_at(self.lc.ages.at(i), self.lc.years.at(j))
    }

    pub fn log_rates(&self) -> Grid {
        Grid::from_fn(self.lc.ages.len(), self.lc.years.len(), |i, j| self.log_rate(i, j))
    }

    /// `(Σb - 1, Σk, Σγ, Σ g γ)`.
    pub fn constraint_residuals(&self) -> [f64; 4] {
        let (rb, rk) = self.lc.constraint_residuals();
        let sg: f64 = self.gamma.iter().sum();
        let tg: f64 = self.gamma.iter().enumerate().map(|(g, v)| g as f64 * v).sum();
        [rb, rk, sg, tg]
    }

    /// Central rates over the fitted ages for the given years and indices.
    pub fn project(&self, years: Span, k: &[f64]) -> Result<RateSurface> {
        if k.len() != years.len() {
            return Err(Error::DimensionMismatch(format!("{} years but {} indices", years.len(), k.len())));
        }
        let ages = self.lc.ages;
        let values = Grid::from_fn(ages.len(), years.len(), |i, j| {
            let (x, t) = (ages.at(i), years.at(j));
            libm::exp(self.lc.a[i] + self.lc.b[i] * k[j] + self.gamma_at(x, t))
        });
        RateSurface::new(ages, years, RateKind::Central, values)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LcCohortsFit {
    pub reference: LcCohortParams,
    pub reference_loglik: f64,
    /// Common-age-effect book difference against the cohort reference.
    pub book: BookModelFit,
}

impl LcCohortsFit {
    /// Fitted reference rates over the reference panel.
    pub fn reference_rates(&self) -> Result<RateSurface> {
        let p = &self.reference.lc;
        RateSurface::new(p.ages, p.years, RateKind::Central, self.reference.log_rates().map(libm::exp))
    }
}

/// Poisson fit of the cohort reference by Fisher scoring on `(a, b, k, γ)`
/// jointly, with `Σb = 1`, `Σk = 0`, `Σγ = 0`, `Σ gγ = 0` imposed through a
/// KKT system. Every iterate stays feasible.
pub fn fit_lc_cohort_reference(
    panel: &MortalityPanel,
    init: Option<&LcCohortParams>,
    opts: &LcOptions,
) -> Result<(LcCohortParams, f64)> {
    let (ages, years) = (panel.ages(), panel.years());
    let (nx, nt) = (ages.len(), years.len());
    let cohorts = CohortIndex::new(ages, years, MIN_COHORT_CELLS);
    let ng = cohorts.n_groups();
    let mut theta: Vec<f64> = match init {
        Some(p) if p.lc.ages == ages && p.lc.years == years && p.cohorts == cohorts => {
            p.lc.a.iter().chain(&p.lc.b).chain(&p.lc.k).chain(&p.gamma).copied().collect()
        }
        _ => {
            let lc = fit_lc(panel, opts)?.params;
            lc.a.iter().chain(&lc.b).chain(&lc.k).copied().chain(core::iter::repeat(0.0).take(ng)).collect()
        }
    };
    let (ob, ok, og) = (nx, 2 * nx, 2 * nx + nt);
    let np = og + ng;
    let group: Vec<usize> = (0..nx * nt).map(|c| cohorts.group(years.at(c % nt) - ages.at(c / nt)).unwrap_or(0)).collect();
    let (deaths, exposures) = (panel.deaths(), panel.exposures());
    let eta = |th: &[f64], i: usize, j: usize| th[i] + th[ob + i] * th[ok + j] + th[og + group[i * nt + j]];
    let kernel = |th: &[f64]| {
        let mut s = 0.0;
        for i in 0..nx {
            for j in 0..nt {
                let e = eta(th, i, j);
                s += deaths[(i, j)] * e - exposures[(i, j)] * libm::exp(e);
            }
        }
        s
    };

    let n_con = 4;
    let mut kkt = DMatrix::<f64>::zeros(np + n_con, np + n_con);
    let mut constrain = |r: usize, c: usize, v: f64| {
        kkt[(np + r, c)] = v;
        kkt[(c, np + r)] = v;
    };
    for i in 0..nx {
        constrain(0, ob + i, 1.0);
    }
    for j in 0..nt {
        constrain(1, ok + j, 1.0);
    }
    for g in 0..ng {
        constrain(2, og + g, 1.0);
        constrain(3, og + g, g as f64);
    }
    let mut ll = kernel(&theta);
    for iter in 1..=opts.max_iterations {
        let before = ll;
        let mut score = DVector::<f64>::zeros(np + n_con);
        for r in 0..np {
            for c in 0..np {
                kkt[(r, c)] = 0.0;
            }
        }
        for i in 0..nx {
            for j in 0..nt {
                let mu = exposures[(i, j)] * libm::exp(eta(&theta, i, j));
                let resid = deaths[(i, j)] - mu;
                let idx = [i, ob + i, ok + j, og + group[i * nt + j]];
                let d = [1.0, theta[ok + j], theta[ob + i], 1.0];
                for u in 0..4 {
                    score[idx[u]] += resid * d[u];
                    for v in 0..4 {
                        kkt[(idx[u], idx[v])] += mu * d[u] * d[v];
                    }
                }
            }
        }
        let step =
            kkt.clone().lu().solve(&score).ok_or_else(|| Error::DegenerateFit("singular cohort information matrix".into()))?;
        let mut scale = 1.0;
        for _ in 0..40 {
            let trial: Vec<f64> = theta.iter().enumerate().map(|(r, t)| t + scale * step[r]).collect();
            let t_ll = kernel(&trial);
            if t_ll >= ll {
                theta = trial;
                ll = t_ll;
                break;
            }
            scale *= 0.5;
        }
        if !ll.is_finite() {
            return Err(Error::NonConvergence { stage: "cohort reference", iterations: iter });
        }
        let change = libm::fabs(ll - before);
        if change <= opts.rel_tol * libm::fabs(ll) || change <= opts.abs_tol {
            let lc = LcParams { ages, years, a: theta[..ob].to_vec(), b: theta[ob..ok].to_vec(), k: theta[ok..og].to_vec() };
            let params = LcCohortParams { lc, gamma: theta[og..].to_vec(), cohorts };
            let loglik = poisson_loglik(deaths, exposures, &params.log_rates());
            return Ok((params, loglik));
        }
    }
    Err(Error::NonConvergence { stage: "cohort reference", iterations: opts.max_iterations })
}

fn cohorts_book(reference: &LcCohortParams, book: &MortalityPanel, opts: &BookFitOptions) -> Result<BookModelFit> {
    let (ages, years) = (book.ages(), book.years());
    let values = Grid::from_fn(ages.len(), years.len(), |i, j| {
        let (x, t) = (ages.at(i), years.at(j));
        match (reference.lc.ages.offset(x), reference.lc.years.offset(t)) {
            (Some(r), Some(c)) => libm::exp(reference.log_rate(r, c)),
            _ => f64::NAN,
        }
    });
    let rates = RateSurface::new(ages, years, RateKind::Central, values)?;
    fit_book(BookFamily::Cae, &reference.lc, &rates, book, opts)
}

/// Cohort reference plus common-age-effect book, both by Poisson likelihood.
pub fn fit_lc_cohorts(reference: &MortalityPanel, book: &MortalityPanel, lc: &LcOptions) -> Result<LcCohortsFit> {
    let (params, reference_loglik) = fit_lc_cohort_reference(reference, None, lc)?;
    let book = cohorts_book(&params, book, &BookFitOptions::default())?;
    Ok(LcCohortsFit { reference: params, reference_loglik, book })
}

pub fn refit_lc_cohorts(
    reference: &MortalityPanel,
    book: &MortalityPanel,
    base: &LcCohortsFit,
    lc: &LcOptions,
) -> Result<LcCohortsFit> {
    let (params, reference_loglik) = fit_lc_cohort_reference(reference, Some(&base.reference), lc)?;
    let book = cohorts_book(&params, book, &BookFitOptions::default())?;
    Ok(LcCohortsFit { reference: params, reference_loglik, book })
}

/// Random walk with drift `k[t+1] = k[t] + drift + sd ε`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RandomWalk {
    pub drift: f64,
    pub sd: f64,
}

pub fn fit_random_walk(series: &[f64]) -> Result<RandomWalk> {
    if series.len() < 3 {
        return Err(Error::DegenerateSeries);
    }
    let d: Vec<f64> = series.windows(2).map(|w| w[1] - w[0]).collect();
    let drift = d.iter().sum::<f64>() / d.len() as f64;
    let ss: f64 = d.iter().map(|v| (v - drift) * (v - drift)).sum();
    Ok(RandomWalk { drift, sd: libm::sqrt(ss / (d.len() - 1) as f64) })
}

impl RandomWalk {
    pub fn simulate<R: Rng + ?Sized>(&self, k_last: f64, horizon: usize, rng: &mut R) -> Vec<f64> {
        let mut k = k_last;
        (0..horizon)
            .map(|_| {
                k += self.drift + self.sd * normal(rng);
                k
            })
            .collect()
    }
}
