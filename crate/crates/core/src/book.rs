//! Relative models for the book population, fitted against the reference.
//!
//! Every family is a difference from the fitted reference surface `m̂^R`:
//!
//! * `RelLc`: `ln m^B = ln m̂^R + a + b k`
//! * `Cae`:   `ln m^B = ln m̂^R + a + b^R k` (the reference's own `b`)
//! * `Apc`:   `ln m^B = ln m̂^R + a + k + γ[t - x]`
//! * `Cbd`:   `logit q^B = logit q̂^R + κ1 + (x - x̄) κ2`, `m^B = -ln(1 - q^B)`
//!
//! Book deaths are Poisson with mean `E m^B`. Period indices follow AR(1)
//! dynamics for projection.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::cohort::{CohortIndex, MIN_COHORT_CELLS};
use crate::error::{Error, Result};
use crate::grid::{Grid, Span};
use crate::lc::{poisson_loglik, svd_fit, LcOptions, LcParams, PoissonProblem};
use crate::panel::{MortalityPanel, RateKind, RateSurface};
use crate::special::logistic;

fn sq(x: f64) -> f64 {
    x * x
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum BookFamily {
    #[serde(rename = "relLC", alias = "rellc")]
    RelLc,
    #[serde(rename = "cae")]
    Cae,
    #[serde(rename = "apc")]
    Apc,
    #[serde(rename = "cbd")]
    Cbd,
}

impl BookFamily {
    pub const ALL: [BookFamily; 4] = [BookFamily::RelLc, BookFamily::Cae, BookFamily::Apc, BookFamily::Cbd];

    pub fn name(&self) -> &'static str {
        match self {
            BookFamily::RelLc => "relLC",
            BookFamily::Cae => "cae",
            BookFamily::Apc => "apc",
            BookFamily::Cbd => "cbd",
        }
    }
}

impl core::str::FromStr for BookFamily {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rellc" | "lc" => Ok(BookFamily::RelLc),
            "cae" => Ok(BookFamily::Cae),
            "apc" => Ok(BookFamily::Apc),
            "cbd" => Ok(BookFamily::Cbd),
            other => Err(Error::InvalidParameter(format!("unknown book family {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum BookParams {
    RelLc {
        a: Vec<f64>,
        b: Vec<f64>,
        k: Vec<f64>,
    },
    /// `b_ref` is the reference sensitivity over the book ages; it is an input,
    /// not a fitted parameter.
    Cae {
        a: Vec<f64>,
        k: Vec<f64>,
        b_ref: Vec<f64>,
    },
    Apc {
        a: Vec<f64>,
        k: Vec<f64>,
        gamma: Vec<f64>,
        cohorts: CohortIndex,
    },
    Cbd {
        kappa1: Vec<f64>,
        kappa2: Vec<f64>,
        xbar: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BookModelFit {
    pub family: BookFamily,
    pub ages: Span,
    pub years: Span,
    pub params: BookParams,
    pub loglik: f64,
    pub n_params: usize,
    pub n_obs: usize,
    pub bic: f64,
}

/// `-2 ll + p ln N`.
pub fn bic(loglik: f64, n_params: usize, n_obs: usize) -> f64 {
    -2.0 * loglik + n_params as f64 * libm::log(n_obs as f64)
}

/// Lowest BIC; ties go to fewer parameters, then to the earlier family.
pub fn select_model(fits: &[BookModelFit]) -> Result<&BookModelFit> {
    fits.iter()
        .min_by(|x, y| x.bic.total_cmp(&y.bic).then(x.n_params.cmp(&y.n_params)).then(x.family.cmp(&y.family)))
        .ok_or(Error::EmptyList)
}

/// Per-period book indices: `k` for the log-scale families, `(κ1, κ2)` for CBD.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BookPath {
    pub k: Vec<f64>,
    /// CBD slope index; empty for the other families.
    pub k2: Vec<f64>,
}

impl BookModelFit {
    /// Fitted indices over the observed years.
    pub fn fitted_path(&self) -> BookPath {
        match &self.params {
            BookParams::RelLc { k, .. } | BookParams::Cae { k, .. } | BookParams::Apc { k, .. } => {
                BookPath { k: k.clone(), k2: Vec::new() }
            }
            BookParams::Cbd { kappa1, kappa2, .. } => BookPath { k: kappa1.clone(), k2: kappa2.clone() },
        }
    }

    /// Book central rate in age row `i` for a reference rate, period index and year.
    fn compose(&self, i: usize, year: i32, m_ref: f64, k: f64, k2: f64) -> f64 {
        let age = self.ages.at(i);
        match &self.params {
            BookParams::RelLc { a, b, .. } => libm::exp(libm::log(m_ref) + a[i] + b[i] * k),
            BookParams::Cae { a, b_ref, .. } => libm::exp(libm::log(m_ref) + a[i] + b_ref[i] * k),
            BookParams::Apc { a, gamma, cohorts, .. } => {
                let g = cohorts.group(year - age).map_or(0.0, |g| gamma[g]);
                libm::exp(libm::log(m_ref) + a[i] + k + g)
            }
            BookParams::Cbd { xbar, .. } => {
                let eta = logit_q_from_m(m_ref) + k + (age as f64 - xbar) * k2;
                softplus(eta)
            }
        }
    }

    /// Constraint residuals of the family (all should be ~0).
    pub fn constraint_residuals(&self) -> Vec<f64> {
        match &self.params {
            BookParams::RelLc { b, k, .. } => vec![b.iter().sum::<f64>() - 1.0, k.iter().sum()],
            BookParams::Cae { k, .. } => vec![k.iter().sum()],
            BookParams::Apc { k, gamma, .. } => {
                vec![k.iter().sum(), gamma.iter().sum(), gamma.iter().enumerate().map(|(g, v)| g as f64 * v).sum()]
            }
            BookParams::Cbd { .. } => Vec::new(),
        }
    }
}

/// `ln(q / (1 - q))` for `q = 1 - exp(-m)`.
fn logit_q_from_m(m: f64) -> f64 {
    libm::log(-libm::expm1(-m)) + m
}

/// `-ln(1 - logistic(η)) = ln(1 + e^η)`.
fn softplus(eta: f64) -> f64 {
    if eta > 0.0 {
        eta + libm::log1p(libm::exp(-eta))
    } else {
        libm::log1p(libm::exp(eta))
    }
}

/// Fitted reference rates `exp(a + b k)` over the given ages and years.
pub fn reference_rates(ref_fit: &LcParams, ages: Span, years: Span) -> Result<RateSurface> {
    let (Some(i0), Some(j0)) = (ref_fit.ages.offset(ages.first), ref_fit.years.offset(years.first)) else {
        return Err(Error::DimensionMismatch("requested cells lie outside the reference fit".into()));
    };
    if !ref_fit.ages.contains(ages.last) || !ref_fit.years.contains(years.last) {
        return Err(Error::DimensionMismatch("requested cells lie outside the reference fit".into()));
    }
    let values = Grid::from_fn(ages.len(), years.len(), |i, j| libm::exp(ref_fit.log_rate(i0 + i, j0 + j)));
    RateSurface::new(ages, years, RateKind::Central, values)
}

fn reference_grid(ref_rates: &RateSurface, ages: Span, years: Span) -> Result<Grid> {
    let mut out = Grid::zeros(ages.len(), years.len());
    for (i, x) in ages.iter().enumerate() {
        for (j, t) in years.iter().enumerate() {
            let m = ref_rates
                .get(x, t)
                .ok_or_else(|| Error::DimensionMismatch(format!("reference rate missing at age {x}, year {t}")))?;
            if !(m > 0.0) || !m.is_finite() {
                return Err(Error::DomainError(format!("reference rate {m} at age {x}, year {t}")));
            }
            out[(i, j)] = m;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BookFitOptions {
    pub rel_tol: f64,
    pub max_iterations: usize,
}

impl Default for BookFitOptions {
    fn default() -> Self {
        BookFitOptions { rel_tol: 1e-12, max_iterations: 500 }
    }
}

/// Fit one relative family. `ref_rates` must cover the book's cells;
/// `ref_fit` supplies `b^R` for the common-age-effect family.
pub fn fit_book(
    family: BookFamily,
    ref_fit: &LcParams,
    ref_rates: &RateSurface,
    book: &MortalityPanel,
    opts: &BookFitOptions,
) -> Result<BookModelFit> {
    let (ages, years) = (book.ages(), book.years());
    let m_ref = reference_grid(ref_rates, ages, years)?;
    let deaths = book.deaths();
    let exposures = book.exposures();
    let n_obs = book.n_cells();
    let (nx, nt) = (ages.len(), years.len());
    let lc_opts = LcOptions { rel_tol: opts.rel_tol, abs_tol: 0.0, max_iterations: opts.max_iterations, ..LcOptions::default() };
    let offset = m_ref.map(libm::log);

    let (params, n_params) = match family {
        BookFamily::Cae => {
            let i0 = ref_fit
                .ages
                .offset(ages.first)
                .filter(|_| ref_fit.ages.contains(ages.last))
                .ok_or_else(|| Error::DimensionMismatch("book ages outside the reference fit".into()))?;
            let b_ref = ref_fit.b[i0..i0 + nx].to_vec();
            let problem = PoissonProblem { deaths, exposures, offset: Some(&offset) };
            let raw = problem.fit(vec![0.0; nx], b_ref.clone(), vec![0.0; nt], true, &lc_opts)?;
            (BookParams::Cae { a: raw.a, k: raw.k, b_ref }, nx + nt - 1)
        }
        BookFamily::RelLc => {
            if nt < 2 {
                return Err(Error::DegenerateFit("relative Lee–Carter needs at least two years".into()));
            }
            let problem = PoissonProblem { deaths, exposures, offset: Some(&offset) };
            let zero = (vec![0.0; nx], vec![1.0 / nx as f64; nx], vec![0.0; nt]);
            // Start from the SVD of the log-rate differences when that beats
            // the zero-difference point.
            let diff = Grid::from_fn(nx, nt, |i, j| {
                let m = deaths[(i, j)].max(0.5) / exposures[(i, j)];
                libm::log(m) - offset[(i, j)]
            });
            let start = match svd_fit(ages, years, &diff) {
                Ok(p) if problem.kernel(&p.a, &p.b, &p.k) > problem.kernel(&zero.0, &zero.1, &zero.2) => (p.a, p.b, p.k),
                _ => zero,
            };
            let raw = problem.fit(start.0, start.1, start.2, false, &lc_opts)?;
            let p = crate::lc::apply_constraints(ages, years, &raw.a, &raw.b, &raw.k)?;
            (BookParams::RelLc { a: p.a, b: p.b, k: p.k }, 2 * nx + nt - 2)
        }
        BookFamily::Apc => {
            let cohorts = CohortIndex::new(ages, years, MIN_COHORT_CELLS);
            let (a, k, gamma) = fit_apc(deaths, exposures, &offset, ages, years, &cohorts, opts)?;
            let ng = cohorts.n_groups();
            (BookParams::Apc { a, k, gamma, cohorts }, nx + nt + ng - 3)
        }
        BookFamily::Cbd => {
            let xbar = ages.mean();
            let (kappa1, kappa2) = fit_cbd(deaths, exposures, &m_ref, ages, xbar, opts)?;
            (BookParams::Cbd { kappa1, kappa2, xbar }, 2 * nt)
        }
    };
    let mut fit = BookModelFit { family, ages, years, params, loglik: 0.0, n_params, n_obs, bic: 0.0 };
    let path = fit.fitted_path();
    let log_m = Grid::from_fn(nx, nt, |i, j| {
        libm::log(fit.compose(i, years.at(j), m_ref[(i, j)], path.k[j], path.k2.get(j).copied().unwrap_or(0.0)))
    });
    fit.loglik = poisson_loglik(deaths, exposures, &log_m);
    if !fit.loglik.is_finite() {
        return Err(Error::NonConvergence { stage: "book model", iterations: opts.max_iterations });
    }
    fit.bic = bic(fit.loglik, n_params, n_obs);
    Ok(fit)
}

/// Poisson APC by Newton's method on the full parameter vector, with the
/// three identifiability constraints imposed through a KKT system.
fn fit_apc(
    deaths: &Grid,
    exposures: &Grid,
    offset: &Grid,
    ages: Span,
    years: Span,
    cohorts: &CohortIndex,
    opts: &BookFitOptions,
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let (nx, nt, ng) = (ages.len(), years.len(), cohorts.n_groups());
    let group: Vec<usize> = (0..nx * nt)
        .map(|c| {
            let (i, j) = (c / nt, c % nt);
            cohorts.group(years.at(j) - ages.at(i)).unwrap_or(0)
        })
        .collect();
    let np = nx + nt + ng;
    let eta = |theta: &[f64], i: usize, j: usize| offset[(i, j)] + theta[i] + theta[nx + j] + theta[nx + nt + group[i * nt + j]];
    let kernel = |theta: &[f64]| {
        let mut ll = 0.0;
        for i in 0..nx {
            for j in 0..nt {
                let e = eta(theta, i, j);
                ll += deaths[(i, j)] * e - exposures[(i, j)] * libm::exp(e);
            }
        }
        ll
    };
    let mut theta = vec![0.0; np];
    for i in 0..nx {
        let (d, mu) =
            (0..nt).fold((0.0, 0.0), |(d, mu), j| (d + deaths[(i, j)], mu + exposures[(i, j)] * libm::exp(offset[(i, j)])));
        theta[i] = libm::log(d.max(0.5) / mu);
    }
    let n_con = 3;
    let mut kkt = DMatrix::<f64>::zeros(np + n_con, np + n_con);
    for j in 0..nt {
        kkt[(np, nx + j)] = 1.0;
        kkt[(nx + j, np)] = 1.0;
    }
    for g in 0..ng {
        kkt[(np + 1, nx + nt + g)] = 1.0;
        kkt[(nx + nt + g, np + 1)] = 1.0;
        kkt[(np + 2, nx + nt + g)] = g as f64;
        kkt[(nx + nt + g, np + 2)] = g as f64;
    }
    let mut ll = kernel(&theta);
    for iter in 1..=opts.max_iterations {
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
                let idx = [i, nx + j, nx + nt + group[i * nt + j]];
                for &r in &idx {
                    score[r] += resid;
                    for &c in &idx {
                        kkt[(r, c)] += mu;
                    }
                }
            }
        }
        let step =
            kkt.clone().lu().solve(&score).ok_or_else(|| Error::DegenerateFit("singular APC information matrix".into()))?;
        let mut scale = 1.0;
        let before = ll;
        let mut accepted = false;
        for _ in 0..40 {
            let trial: Vec<f64> = theta.iter().enumerate().map(|(r, t)| t + scale * step[r]).collect();
            let trial_ll = kernel(&trial);
            if trial_ll >= ll {
                theta = trial;
                ll = trial_ll;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !ll.is_finite() {
            return Err(Error::NonConvergence { stage: "apc book model", iterations: iter });
        }
        if !accepted || libm::fabs(ll - before) <= opts.rel_tol * libm::fabs(ll) {
            let a = theta[..nx].to_vec();
            let k = theta[nx..nx + nt].to_vec();
            let gamma = theta[nx + nt..].to_vec();
            return Ok((a, k, gamma));
        }
    }
    Err(Error::NonConvergence { stage: "apc book model", iterations: opts.max_iterations })
}

/// Per-year Fisher scoring for `(κ1, κ2)` on the logit-q scale.
fn fit_cbd(
    deaths: &Grid,
    exposures: &Grid,
    m_ref: &Grid,
    ages: Span,
    xbar: f64,
    opts: &BookFitOptions,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let (nx, nt) = m_ref.shape();
    let z: Vec<f64> = ages.iter().map(|x| x as f64 - xbar).collect();
    let mut kappa1 = vec![0.0; nt];
    let mut kappa2 = vec![0.0; nt];
    for j in 0..nt {
        let base: Vec<f64> = (0..nx).map(|i| logit_q_from_m(m_ref[(i, j)])).collect();
        let year_ll = |k1: f64, k2: f64| {
            let mut ll = 0.0;
            for i in 0..nx {
                let m = softplus(base[i] + k1 + z[i] * k2);
                ll += if deaths[(i, j)] > 0.0 { deaths[(i, j)] * libm::log(m) } else { 0.0 } - exposures[(i, j)] * m;
            }
            ll
        };
        let (mut k1, mut k2) = (0.0, 0.0);
        let mut ll = year_ll(k1, k2);
        let mut done = false;
        for _ in 0..opts.max_iterations {
            let (mut g1, mut g2, mut h11, mut h12, mut h22) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for i in 0..nx {
                let eta = base[i] + k1 + z[i] * k2;
                let (q, m) = (logistic(eta), softplus(eta));
                let (d, e) = (deaths[(i, j)], exposures[(i, j)]);
                let s = (d / m - e) * q;
                let w = e * q * q / m;
                g1 += s;
                g2 += s * z[i];
                h11 += w;
                h12 += w * z[i];
                h22 += w * z[i] * z[i];
            }
            let det = h11 * h22 - h12 * h12;
            if !(det > 0.0) {
                return Err(Error::DegenerateFit(format!("CBD information singular in year {}", j)));
            }
            let (s1, s2) = ((h22 * g1 - h12 * g2) / det, (h11 * g2 - h12 * g1) / det);
            let before = ll;
            let mut scale = 1.0;
            let mut accepted = false;
            for _ in 0..40 {
                let trial = year_ll(k1 + scale * s1, k2 + scale * s2);
                if trial >= ll {
                    k1 += scale * s1;
                    k2 += scale * s2;
                    ll = trial;
                    accepted = true;
                    break;
                }
                scale *= 0.5;
            }
            if !accepted || libm::fabs(ll - before) <= opts.rel_tol * libm::fabs(ll) {
                done = true;
                break;
            }
        }
        if !done || !ll.is_finite() {
            return Err(Error::NonConvergence { stage: "cbd book model", iterations: opts.max_iterations });
        }
        kappa1[j] = k1;
        kappa2[j] = k2;
    }
    Ok((kappa1, kappa2))
}

/// `k_t = ψ0 + ψ1 k_{t-1} + ξ_t`, `ξ_t ~ N(0, sd²)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ar1Params {
    pub psi0: f64,
    pub psi1: f64,
    pub innovation_sd: f64,
    pub stationary: bool,
}

impl Ar1Params {
    pub fn new(psi0: f64, psi1: f64, innovation_sd: f64) -> Self {
        Ar1Params { psi0, psi1, innovation_sd, stationary: libm::fabs(psi1) < 1.0 }
    }

    /// `ψ0 / (1 - ψ1)` for a stationary process.
    pub fn long_run_mean(&self) -> Option<f64> {
        self.stationary.then(|| self.psi0 / (1.0 - self.psi1))
    }
}

/// Conditional least squares on `(k_{t-1}, k_t)` pairs.
pub fn fit_ar1(series: &[f64]) -> Result<Ar1Params> {
    if series.len() < 4 {
        return Err(Error::DegenerateSeries);
    }
    let x = &series[..series.len() - 1];
    let y = &series[1..];
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(u, v)| (u - mx) * (v - my)).sum();
    if !(sxx > 1e-300 * (1.0 + mx * mx)) {
        return Err(Error::DegenerateSeries);
    }
    let psi1 = sxy / sxx;
    let psi0 = my - psi1 * mx;
    let rss: f64 = x.iter().zip(y).map(|(u, v)| sq(v - psi0 - psi1 * u)).sum();
    Ok(Ar1Params::new(psi0, psi1, libm::sqrt(rss / (n - 2.0))))
}

/// `k_1..k_horizon` from `k_last`.
pub fn project_book_k<R: Rng + ?Sized>(p: &Ar1Params, k_last: f64, horizon: usize, rng: &mut R) -> Vec<f64> {
    let mut k = k_last;
    (0..horizon)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            k = p.psi0 + p.psi1 * k + p.innovation_sd * z;
            k
        })
        .collect()
}

/// AR(1) dynamics of the book indices: one for `k`, plus one for `κ2` under CBD
/// (the two CBD indices are treated as independent).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BookDynamics {
    pub k: Ar1Params,
    pub k2: Option<Ar1Params>,
}

pub fn fit_book_dynamics(fit: &BookModelFit) -> Result<BookDynamics> {
    let path = fit.fitted_path();
    let k = fit_ar1(&path.k)?;
    let k2 = if path.k2.is_empty() { None } else { Some(fit_ar1(&path.k2)?) };
    Ok(BookDynamics { k, k2 })
}

/// Projected book indices from the last fitted year.
pub fn simulate_book_path<R: Rng + ?Sized>(dynamics: &BookDynamics, fit: &BookModelFit, horizon: usize, rng: &mut R) -> BookPath {
    let fitted = fit.fitted_path();
    let k = project_book_k(&dynamics.k, *fitted.k.last().unwrap_or(&0.0), horizon, rng);
    let k2 = match &dynamics.k2 {
        Some(p) => project_book_k(p, *fitted.k2.last().unwrap_or(&0.0), horizon, rng),
        None => Vec::new(),
    };
    BookPath { k, k2 }
}

/// Book central rates over the years of `ref_rates`, one period index per year.
/// Cohorts outside the fitted panel get a zero cohort effect.
pub fn book_rates(fit: &BookModelFit, ref_rates: &RateSurface, path: &BookPath) -> Result<RateSurface> {
    let years = ref_rates.years;
    if path.k.len() != years.len() || (fit.family == BookFamily::Cbd && path.k2.len() != years.len()) {
        return Err(Error::DimensionMismatch(format!(
            "{} years of reference rates but {} book indices",
            years.len(),
            path.k.len()
        )));
    }
    let m_ref = reference_grid(ref_rates, fit.ages, years)?;
    let values = Grid::from_fn(fit.ages.len(), years.len(), |i, j| {
        fit.compose(i, years.at(j), m_ref[(i, j)], path.k[j], path.k2.get(j).copied().unwrap_or(0.0))
    });
    RateSurface::new(fit.ages, years, RateKind::Central, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::Population;
    use crate::rng::{domain, substream};
    use rand_distr::Poisson;
    use std::vec::Vec;

    fn reference() -> LcParams {
        let ages = Span::new(60, 69).unwrap();
        let years = Span::new(1990, 2009).unwrap();
        let a: Vec<f64> = (0..10).map(|i| -4.5 + 0.1 * i as f64).collect();
        let b: Vec<f64> = (0..10).map(|i| 0.13 - 0.006 * i as f64).collect();
        let sb: f64 = b.iter().sum();
        let b: Vec<f64> = b.iter().map(|v| v / sb).collect();
        let k: Vec<f64> = (0..20).map(|j| 9.5 - j as f64).collect();
        LcParams { ages, years, a, b, k }
    }

    fn book_from(fit_like: &BookModelFit, ref_rates: &RateSurface, exposure: f64, noise: Option<u64>) -> MortalityPanel {
        let m = book_rates(fit_like, ref_rates, &fit_like.fitted_path()).unwrap();
        let e = Grid::filled(m.values.rows(), m.values.cols(), exposure);
        let d = match noise {
            None => m.values.map(|v| v * exposure),
            Some(seed) => {
                let mut rng = substream(seed, domain::SYNTHETIC, 0);
                Grid::from_fn(m.values.rows(), m.values.cols(), |i, j| {
                    Poisson::new(m.values[(i, j)] * exposure).unwrap().sample(&mut rng)
                })
            }
        };
        MortalityPanel::new(Population::Book, m.ages, m.years, d, e).unwrap()
    }

    fn cae_truth(r: &LcParams) -> BookModelFit {
        let a: Vec<f64> = (0..10).map(|i| -0.3 + 0.02 * i as f64).collect();
        let k: Vec<f64> = (0..20).map(|j| 0.8 * ((j as f64) * 0.4).sin()).collect();
        let mk = k.iter().sum::<f64>() / 20.0;
        let k: Vec<f64> = k.iter().map(|v| v - mk).collect();
        BookModelFit {
            family: BookFamily::Cae,
            ages: r.ages,
            years: r.years,
            params: BookParams::Cae { a, k, b_ref: r.b.clone() },
            loglik: 0.0,
            n_params: 0,
            n_obs: 0,
            bic: 0.0,
        }
    }

    fn fit_all(r: &LcParams, rr: &RateSurface, book: &MortalityPanel) -> Vec<BookModelFit> {
        BookFamily::ALL.iter().map(|&f| fit_book(f, r, rr, book, &BookFitOptions::default()).unwrap()).collect()
    }

    #[test]
    fn bic_formula() {
        assert_eq!(bic(0.0, 0, 10), 0.0);
        assert!((bic(-5.0, 8, 100) - bic(-5.0, 4, 100) - 4.0 * libm::log(100.0)).abs() < 1e-12);
        assert!((bic(-3.0, 2, 1) - 6.0).abs() < 1e-15);
    }

    #[test]
    fn selection_tie_breaks() {
        let r = reference();
        let base = cae_truth(&r);
        let mk = |family, bic, n_params| BookModelFit { family, bic, n_params, ..base.clone() };
        let fits = [mk(BookFamily::RelLc, 10.0, 5), mk(BookFamily::Cae, 9.0, 5), mk(BookFamily::Apc, 11.0, 1)];
        assert_eq!(select_model(&fits).unwrap().family, BookFamily::Cae);
        let fits = [mk(BookFamily::RelLc, 9.0, 5), mk(BookFamily::Cbd, 9.0, 3)];
        assert_eq!(select_model(&fits).unwrap().family, BookFamily::Cbd);
        let fits = [mk(BookFamily::Cbd, 9.0, 3), mk(BookFamily::Apc, 9.0, 3)];
        assert_eq!(select_model(&fits).unwrap().family, BookFamily::Apc);
        assert!(matches!(select_model(&[]), Err(Error::EmptyList)));
    }

    #[test]
    fn zero_difference_book() {
        let r = reference();
        let rr = reference_rates(&r, r.ages, r.years).unwrap();
        let e = Grid::filled(10, 20, 1e5);
        let d = rr.values.map(|m| m * 1e5);
        let book = MortalityPanel::new(Population::Book, r.ages, r.years, d, e).unwrap();
        let fit = fit_book(BookFamily::Cae, &r, &rr, &book, &BookFitOptions::default()).unwrap();
        let BookParams::Cae { a, k, .. } = &fit.params else { panic!() };
        assert!(a.iter().chain(k).all(|v| v.abs() < 1e-9));
        for f in fit_all(&r, &rr, &book) {
            assert!(f.constraint_residuals().iter().all(|v| v.abs() < 1e-8), "{:?}", f.family);
        }
    }

    #[test]
    fn noiseless_surfaces_are_reproduced() {
        let r = reference();
        let rr = reference_rates(&r, r.ages, r.years).unwrap();
        let truth = cae_truth(&r);
        let book = book_from(&truth, &rr, 1e6, None);
        let target = book_rates(&truth, &rr, &truth.fitted_path()).unwrap();
        for family in [BookFamily::Cae, BookFamily::RelLc] {
            let fit = fit_book(family, &r, &rr, &book, &BookFitOptions::default()).unwrap();
            let got = book_rates(&fit, &rr, &fit.fitted_path()).unwrap();
            let err = got.values.zip_map(&target.values, |x, y| (x.ln() - y.ln()).abs());
            assert!(err.as_slice().iter().all(|&v| v < 1e-6), "{family:?}");
        }
        // APC-generated surface.
        let cohorts = CohortIndex::new(r.ages, r.years, MIN_COHORT_CELLS);
        let ng = cohorts.n_groups();
        let mut gamma: Vec<f64> = (0..ng).map(|g| 0.05 * ((g as f64) * 0.9).cos()).collect();
        // Project onto the constraint set.
        let mean = gamma.iter().sum::<f64>() / ng as f64;
        gamma.iter_mut().for_each(|v| *v -= mean);
        let gbar = (ng as f64 - 1.0) / 2.0;
        let sgg: f64 = (0..ng).map(|g| sq(g as f64 - gbar)).sum();
        let slope: f64 = gamma.iter().enumerate().map(|(g, v)| (g as f64 - gbar) * v).sum::<f64>() / sgg;
        gamma.iter_mut().enumerate().for_each(|(g, v)| *v -= slope * (g as f64 - gbar));
        let BookParams::Cae { a, k, .. } = truth.params.clone() else { panic!() };
        let apc = BookModelFit { family: BookFamily::Apc, params: BookParams::Apc { a, k, gamma, cohorts }, ..truth.clone() };
        let book = book_from(&apc, &rr, 1e6, None);
        let target = book_rates(&apc, &rr, &apc.fitted_path()).unwrap();
        let fit = fit_book(BookFamily::Apc, &r, &rr, &book, &BookFitOptions::default()).unwrap();
        let got = book_rates(&fit, &rr, &fit.fitted_path()).unwrap();
        let err = got.values.zip_map(&target.values, |x, y| (x.ln() - y.ln()).abs());
        assert!(err.as_slice().iter().all(|&v| v < 1e-6));
        assert!(fit.constraint_residuals().iter().all(|v| v.abs() < 1e-8));
        // CBD-generated surface, compared in q-space.
        let kappa1: Vec<f64> = (0..20).map(|j| -0.1 + 0.01 * j as f64).collect();
        let kappa2: Vec<f64> = (0..20).map(|j| 0.02 - 0.001 * j as f64).collect();
        let cbd = BookModelFit { family: BookFamily::Cbd, params: BookParams::Cbd { kappa1, kappa2, xbar: 64.5 }, ..truth };
        let book = book_from(&cbd, &rr, 1e6, None);
        let target = book_rates(&cbd, &rr, &cbd.fitted_path()).unwrap().q_from_m().unwrap();
        let fit = fit_book(BookFamily::Cbd, &r, &rr, &book, &BookFitOptions::default()).unwrap();
        let got = book_rates(&fit, &rr, &fit.fitted_path()).unwrap().q_from_m().unwrap();
        assert!(got.values.max_abs_diff(&target.values) < 1e-6);
    }

    #[test]
    fn fits_beat_zero_difference() {
        let r = reference();
        let rr = reference_rates(&r, r.ages, r.years).unwrap();
        let book = book_from(&cae_truth(&r), &rr, 2e4, Some(4));
        let zero = poisson_loglik(book.deaths(), book.exposures(), &rr.values.map(libm::log));
        for f in fit_all(&r, &rr, &book) {
            assert!(f.loglik >= zero, "{:?}", f.family);
            assert_eq!(f.n_obs, 200);
        }
    }

    #[test]
    fn parameter_counts() {
        let r = reference();
        let rr = reference_rates(&r, r.ages, r.years).unwrap();
        let book = book_from(&cae_truth(&r), &rr, 2e4, Some(5));
        let fits = fit_all(&r, &rr, &book);
        let ng = CohortIndex::new(r.ages, r.years, MIN_COHORT_CELLS).n_groups();
        let counts: Vec<usize> = fits.iter().map(|f| f.n_params).collect();
        assert_eq!(counts, [2 * 10 + 20 - 2, 10 + 20 - 1, 10 + 20 + ng - 3, 40]);
    }

    #[test]
    fn cae_recovery_from_noisy_book() {
        let r = reference();
        let rr = reference_rates(&r, r.ages, r.years).unwrap();
        let truth = cae_truth(&r);
        let BookParams::Cae { a: ta, k: tk, .. } = &truth.params else { panic!() };
        let mut a_hat: Vec<Vec<f64>> = vec![Vec::new(); ta.len()];
        let mut k_hat: Vec<Vec<f64>> = vec![Vec::new(); tk.len()];
        for seed in 0..20 {
            let book = book_from(&truth, &rr, 1e6, Some(seed));
            let fit = fit_book(BookFamily::Cae, &r, &rr, &book, &BookFitOptions::default()).unwrap();
            let BookParams::Cae { a, k, .. } = &fit.params else { panic!() };
            a.iter().zip(&mut a_hat).for_each(|(v, h)| h.push(*v));
            k.iter().zip(&mut k_hat).for_each(|(v, h)| h.push(*v));
        }
        // Elementwise: the median estimate of every parameter.
        for (h, t) in a_hat.iter().zip(ta) {
            assert!((crate::stats::median(h) - t).abs() < 0.01);
        }
        for (h, t) in k_hat.iter().zip(tk) {
            assert!((crate::stats::median(h) - t).abs() < 0.05);
        }
    }

    #[test]
    fn ar1_exact_and_degenerate() {
        let mut s = vec![1.0];
        for _ in 0..30 {
            let last = *s.last().unwrap();
            s.push(0.2 + 0.7 * last);
        }
        let p = fit_ar1(&s).unwrap();
        assert!((p.psi0 - 0.2).abs() < 1e-10 && (p.psi1 - 0.7).abs() < 1e-10);
        assert!(p.innovation_sd < 1e-10 && p.stationary);
        assert!((p.long_run_mean().unwrap() - 0.2 / 0.3).abs() < 1e-9);
        assert!(matches!(fit_ar1(&[2.0; 10]), Err(Error::DegenerateSeries)));
        assert!(matches!(fit_ar1(&[1.0, 2.0, 3.0]), Err(Error::DegenerateSeries)));
    }

    #[test]
    fn ar1_recovery() {
        let p = Ar1Params::new(0.0, 0.5, 0.1);
        let s = project_book_k(&p, 0.0, 1000, &mut substream(1, domain::SYNTHETIC, 0));
        let f = fit_ar1(&s).unwrap();
        assert!(f.psi0.abs() < 0.05 && (f.psi1 - 0.5).abs() < 0.05 && (f.innovation_sd - 0.1).abs() < 0.05);
    }

    #[test]
    fn ar1_long_run_mean_by_simulation() {
        let p = Ar1Params::new(0.3, 0.6, 0.2);
        let ends: Vec<f64> = (0..100_000)
            .map(|i| *project_book_k(&p, 0.0, 200, &mut substream(2, domain::SYNTHETIC, i)).last().unwrap())
            .collect();
        let (m, se) = (crate::stats::mean(&ends), crate::stats::standard_error(&ends));
        assert!((m - 0.75).abs() < 3.0 * se, "{m} {se}");
    }

    #[test]
    fn projection_determinism_and_noise_free() {
        let p = Ar1Params::new(0.1, 0.9, 0.0);
        let path = project_book_k(&p, 1.0, 3, &mut substream(0, domain::SYNTHETIC, 0));
        assert_eq!(path, vec![1.0, 0.1 + 0.9, 0.1 + 0.9 * 1.0]);
        let q = Ar1Params::new(0.1, 0.9, 0.3);
        let x = project_book_k(&q, 1.0, 10, &mut substream(3, domain::SYNTHETIC, 1));
        let y = project_book_k(&q, 1.0, 10, &mut substream(3, domain::SYNTHETIC, 1));
        assert_eq!(x, y);
    }

    #[test]
    fn book_rates_cells() {
        let r = reference();
        let rr = reference_rates(&r, r.ages, r.years).unwrap();
        let truth = cae_truth(&r);
        let zero =
            BookModelFit { params: BookParams::Cae { a: vec![0.0; 10], k: vec![0.0; 20], b_ref: r.b.clone() }, ..truth.clone() };
        let same = book_rates(&zero, &rr, &zero.fitted_path()).unwrap();
        assert!(same.values.max_abs_diff(&rr.values) < 1e-15);
        let m = book_rates(&truth, &rr, &truth.fitted_path()).unwrap();
        let BookParams::Cae { a, k, b_ref } = &truth.params else { panic!() };
        let want = (rr.get(63, 1995).unwrap().ln() + a[3] + b_ref[3] * k[5]).exp();
        assert!((m.get(63, 1995).unwrap() - want).abs() < 1e-15 * want.max(1.0));
        let bad = BookPath { k: vec![0.0; 3], k2: vec![] };
        assert!(book_rates(&truth, &rr, &bad).is_err());
    }

    #[test]
    fn noiseless_cae_wins_bic() {
        let r = reference();
        let rr = reference_rates(&r, r.ages, r.years).unwrap();
        let book = book_from(&cae_truth(&r), &rr, 1e5, None);
        let fits = fit_all(&r, &rr, &book);
        assert_eq!(select_model(&fits).unwrap().family, BookFamily::Cae);
    }
}
