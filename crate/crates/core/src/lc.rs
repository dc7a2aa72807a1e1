//! Lee–Carter fitting: `log m[x,t] = a[x] + b[x] k[t]` with `Σ b = 1`, `Σ k = 0`.
//!
//! Two estimators are provided. The SVD fit takes the first singular triple of
//! the row-centred log-rate matrix; the Poisson fit maximises
//! `Σ D log(E m) - E m - log D!` by alternating one-dimensional Newton steps on
//! `a`, `k` and `b` (each block guarded by step halving so the likelihood never
//! decreases). The Poisson fitter also accepts a log-rate offset and a fixed
//! `b`, which is how the relative book models reuse it.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid, Span};
use crate::panel::{MortalityPanel, DEFAULT_FLOOR_RATE};
use crate::special::ln_factorial;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LcParams {
    pub ages: Span,
    pub years: Span,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub k: Vec<f64>,
}

impl LcParams {
    pub fn log_rate(&self, i: usize, j: usize) -> f64 {
        self.a[i] + self.b[i] * self.k[j]
    }

    pub fn log_rates(&self) -> Grid {
        Grid::from_fn(self.a.len(), self.k.len(), |i, j| self.log_rate(i, j))
    }

    pub fn rates(&self) -> Grid {
        self.log_rates().map(libm::exp)
    }

    /// `(Σb - 1, Σk)`.
    pub fn constraint_residuals(&self) -> (f64, f64) {
        (self.b.iter().sum::<f64>() - 1.0, self.k.iter().sum::<f64>())
    }
}

/// Normalise an unconstrained `(a, b, k)` to `Σb = 1`, `Σk = 0` without
/// changing any fitted log-rate.
pub fn apply_constraints(ages: Span, years: Span, a: &[f64], b: &[f64], k: &[f64]) -> Result<LcParams> {
    if a.len() != ages.len() || b.len() != ages.len() || k.len() != years.len() {
        return Err(Error::DimensionMismatch(format!(
            "a/b/k lengths {}/{}/{} for {} ages and {} years",
            a.len(),
            b.len(),
            k.len(),
            ages.len(),
            years.len()
        )));
    }
    let sum_b: f64 = b.iter().sum();
    if sum_b == 0.0 || !sum_b.is_finite() {
        return Err(Error::DegenerateB);
    }
    let mean_k = k.iter().sum::<f64>() / k.len() as f64;
    Ok(LcParams {
        ages,
        years,
        a: a.iter().zip(b).map(|(a, b)| a + b * mean_k).collect(),
        b: b.iter().map(|b| b / sum_b).collect(),
        k: k.iter().map(|k| (k - mean_k) * sum_b).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LcMethod {
    SvdOnLogRates,
    PoissonMle,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LcOptions {
    pub method: LcMethod,
    /// Stop when `|Δ loglik| <= rel_tol * |loglik|` ...
    pub rel_tol: f64,
    /// ... or when `|Δ loglik| <= abs_tol`.
    pub abs_tol: f64,
    pub max_iterations: usize,
    /// Substitute for zero central rates in the log-rate initialisation;
    /// `None` makes zero-death cells an error.
    pub floor_rate: Option<f64>,
}

impl Default for LcOptions {
    fn default() -> Self {
        LcOptions {
            method: LcMethod::PoissonMle,
            rel_tol: 1e-10,
            abs_tol: 0.0,
            max_iterations: 500,
            floor_rate: Some(DEFAULT_FLOOR_RATE),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LcFit {
    pub params: LcParams,
    pub loglik: f64,
    pub deviance: f64,
    pub iterations: usize,
    /// Log-likelihood after each Poisson iteration (empty for the SVD fit).
    pub loglik_trace: Vec<f64>,
}

/// Full Poisson log-likelihood `Σ D log(E m) - E m - log D!`.
pub fn poisson_loglik(deaths: &Grid, exposures: &Grid, log_rates: &Grid) -> f64 {
    let mut ll = 0.0;
    for ((&d, &e), &eta) in deaths.as_slice().iter().zip(exposures.as_slice()).zip(log_rates.as_slice()) {
        let mu = e * libm::exp(eta);
        ll += if d > 0.0 { d * libm::log(mu) } else { 0.0 } - mu - ln_factorial(d);
    }
    ll
}

/// Poisson deviance `2 Σ [D log(D/μ) - (D - μ)]`.
pub fn poisson_deviance(deaths: &Grid, exposures: &Grid, log_rates: &Grid) -> f64 {
    let mut dev = 0.0;
    for ((&d, &e), &eta) in deaths.as_slice().iter().zip(exposures.as_slice()).zip(log_rates.as_slice()) {
        let mu = e * libm::exp(eta);
        dev += if d > 0.0 { d * libm::log(d / mu) } else { 0.0 } - (d - mu);
    }
    2.0 * dev
}

pub fn fit_lc(panel: &MortalityPanel, opts: &LcOptions) -> Result<LcFit> {
    if panel.years().len() < 2 {
        return Err(Error::DegenerateFit(format!("{} year of data leaves k identically zero", panel.years().len())));
    }
    let log_m = log_central_rates(panel, opts.floor_rate)?;
    let svd = svd_fit(panel.ages(), panel.years(), &log_m)?;
    match opts.method {
        LcMethod::SvdOnLogRates => {
            let lr = svd.log_rates();
            Ok(LcFit {
                loglik: poisson_loglik(panel.deaths(), panel.exposures(), &lr),
                deviance: poisson_deviance(panel.deaths(), panel.exposures(), &lr),
                params: svd,
                iterations: 0,
                loglik_trace: Vec::new(),
            })
        }
        LcMethod::PoissonMle => fit_lc_from(panel, &svd, opts),
    }
}

/// Poisson fit started from `init` (warm start for refits on resampled data).
pub fn fit_lc_from(panel: &MortalityPanel, init: &LcParams, opts: &LcOptions) -> Result<LcFit> {
    if init.ages != panel.ages() || init.years != panel.years() {
        return Err(Error::DimensionMismatch("initial parameters do not match the panel".into()));
    }
    let problem = PoissonProblem { deaths: panel.deaths(), exposures: panel.exposures(), offset: None };
    let raw = problem.fit(init.a.clone(), init.b.clone(), init.k.clone(), false, opts)?;
    let params = apply_constraints(panel.ages(), panel.years(), &raw.a, &raw.b, &raw.k)?;
    let lr = params.log_rates();
    Ok(LcFit {
        loglik: poisson_loglik(panel.deaths(), panel.exposures(), &lr),
        deviance: poisson_deviance(panel.deaths(), panel.exposures(), &lr),
        params,
        iterations: raw.iterations,
        loglik_trace: raw.trace,
    })
}

pub(crate) fn log_central_rates(panel: &MortalityPanel, floor: Option<f64>) -> Result<Grid> {
    let (m, zeros) = panel.central_rates();
    if let Some(z) = zeros.first() {
        match floor {
            None => return Err(Error::ZeroRateCell { age: z.age, year: z.year }),
            Some(f) => log::warn!("{} zero-rate cells floored at {f:e}", zeros.len()),
        }
    }
    let floor = floor.unwrap_or(f64::MIN_POSITIVE);
    Ok(m.values.map(|v| libm::log(if v > 0.0 { v } else { floor })))
}

/// Classical first-singular-vector fit of a log-rate matrix.
pub fn svd_fit(ages: Span, years: Span, log_m: &Grid) -> Result<LcParams> {
    let (nx, nt) = log_m.shape();
    let a: Vec<f64> = (0..nx).map(|i| log_m.row(i).iter().sum::<f64>() / nt as f64).collect();
    let centred = DMatrix::from_fn(nx, nt, |i, j| log_m[(i, j)] - a[i]);
    let svd = centred.svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(Error::DegenerateFit("singular value decomposition failed".into())),
    };
    let lead =
        (0..svd.singular_values.len()).max_by(|&x, &y| svd.singular_values[x].total_cmp(&svd.singular_values[y])).unwrap_or(0);
    let s = svd.singular_values[lead];
    let b: Vec<f64> = (0..nx).map(|i| u[(i, lead)]).collect();
    let k: Vec<f64> = (0..nt).map(|j| s * v_t[(lead, j)]).collect();
    if b.iter().sum::<f64>().abs() < 1e-300 {
        // Pure noise around the row means: any unit-sum b with k = 0 is exact.
        let b = vec![1.0 / nx as f64; nx];
        return apply_constraints(ages, years, &a, &b, &vec![0.0; nt]);
    }
    apply_constraints(ages, years, &a, &b, &k)
}

pub(crate) struct RawFit {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub k: Vec<f64>,
    pub iterations: usize,
    pub trace: Vec<f64>,
}

/// Poisson counts with optional log-rate offset.
pub(crate) struct PoissonProblem<'a> {
    pub deaths: &'a Grid,
    pub exposures: &'a Grid,
    pub offset: Option<&'a Grid>,
}

impl PoissonProblem<'_> {
    fn eta(&self, i: usize, j: usize, a: &[f64], b: &[f64], k: &[f64]) -> f64 {
        self.offset.map_or(0.0, |o| o[(i, j)]) + a[i] + b[i] * k[j]
    }

    /// Log-likelihood without the parameter-free `D log E - log D!` part.
    pub(crate) fn kernel(&self, a: &[f64], b: &[f64], k: &[f64]) -> f64 {
        let (nx, nt) = self.deaths.shape();
        let mut ll = 0.0;
        for i in 0..nx {
            for j in 0..nt {
                let eta = self.eta(i, j, a, b, k);
                ll += self.deaths[(i, j)] * eta - self.exposures[(i, j)] * libm::exp(eta);
            }
        }
        ll
    }

    fn fitted(&self, a: &[f64], b: &[f64], k: &[f64]) -> Grid {
        let (nx, nt) = self.deaths.shape();
        Grid::from_fn(nx, nt, |i, j| self.exposures[(i, j)] * libm::exp(self.eta(i, j, a, b, k)))
    }

    /// Apply `step`, halving until the kernel does not decrease.
    fn guarded(&self, current: f64, params: &mut Vec<f64>, step: &[f64], eval: impl Fn(&[f64]) -> f64) -> f64 {
        let base = params.clone();
        let mut scale = 1.0;
        for _ in 0..40 {
            let trial: Vec<f64> = base.iter().zip(step).map(|(p, s)| p + scale * s).collect();
            let ll = eval(&trial);
            if ll >= current {
                *params = trial;
                return ll;
            }
            scale *= 0.5;
        }
        current
    }

    /// One pass of guarded Newton steps on `a`, `k` and (unless fixed) `b`,
    /// followed by renormalisation to `Σk = 0` (and `Σb = 1`). Returns the new kernel.
    pub(crate) fn sweep(&self, ll: f64, a: &mut Vec<f64>, b: &mut Vec<f64>, k: &mut Vec<f64>, fixed_b: bool) -> f64 {
        let (nx, nt) = self.deaths.shape();
        let fit = self.fitted(a, b, k);
        let step: Vec<f64> = (0..nx)
            .map(|i| {
                let (num, den) = (0..nt).fold((0.0, 0.0), |(n, d), j| (n + self.deaths[(i, j)] - fit[(i, j)], d + fit[(i, j)]));
                if den > 0.0 {
                    num / den
                } else {
                    0.0
                }
            })
            .collect();
        let mut ll = self.guarded(ll, a, &step, |t| self.kernel(t, b, k));

        let fit = self.fitted(a, b, k);
        let step: Vec<f64> = (0..nt)
            .map(|j| {
                let (num, den) = (0..nx).fold((0.0, 0.0), |(n, d), i| {
                    (n + (self.deaths[(i, j)] - fit[(i, j)]) * b[i], d + fit[(i, j)] * b[i] * b[i])
                });
                if den > 0.0 {
                    num / den
                } else {
                    0.0
                }
            })
            .collect();
        ll = self.guarded(ll, k, &step, |t| self.kernel(a, b, t));

        if !fixed_b {
            let fit = self.fitted(a, b, k);
            let step: Vec<f64> = (0..nx)
                .map(|i| {
                    let (num, den) = (0..nt).fold((0.0, 0.0), |(n, d), j| {
                        (n + (self.deaths[(i, j)] - fit[(i, j)]) * k[j], d + fit[(i, j)] * k[j] * k[j])
                    });
                    if den > 0.0 {
                        num / den
                    } else {
                        0.0
                    }
                })
                .collect();
            ll = self.guarded(ll, b, &step, |t| self.kernel(a, t, k));
            let sum_b: f64 = b.iter().sum();
            if sum_b.abs() > 1e-300 {
                b.iter_mut().for_each(|v| *v /= sum_b);
                k.iter_mut().for_each(|v| *v *= sum_b);
            }
        }
        let mean_k = k.iter().sum::<f64>() / nt as f64;
        k.iter_mut().for_each(|v| *v -= mean_k);
        a.iter_mut().zip(b.iter()).for_each(|(a, b)| *a += b * mean_k);
        ll
    }

    pub fn fit(&self, mut a: Vec<f64>, mut b: Vec<f64>, mut k: Vec<f64>, fixed_b: bool, opts: &LcOptions) -> Result<RawFit> {
        let mut ll = self.kernel(&a, &b, &k);
        let mut trace = Vec::new();
        for iter in 1..=opts.max_iterations {
            let before = ll;
            ll = self.sweep(ll, &mut a, &mut b, &mut k, fixed_b);
            if !ll.is_finite() {
                return Err(Error::NonConvergence { stage: "poisson lee-carter", iterations: iter });
            }
            trace.push(ll);
            let change = libm::fabs(ll - before);
            if change <= opts.rel_tol * libm::fabs(ll) || change <= opts.abs_tol {
                return Ok(RawFit { a, b, k, iterations: iter, trace });
            }
        }
        Err(Error::NonConvergence { stage: "poisson lee-carter", iterations: opts.max_iterations })
    }
}
