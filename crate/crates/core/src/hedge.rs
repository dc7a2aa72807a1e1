//! Longevity swap hedge of a book annuity: liability and swap present values
//! per scenario, the variance-minimising swap weight and the risk reduction.
//!
//! All reductions go through [`crate::stats`], whose summation order is fixed.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelChoice;
use crate::scenario::ScenarioSet;
use crate::stats::{covariance, mean, pairwise_sum, variance};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HedgeConfig {
    pub interest_rate: f64,
    /// Years of payments valued (and swap length).
    pub horizon: usize,
    pub annuity_start_age: i32,
    /// Paid per survivor per year.
    pub payment: f64,
    pub book_sizes: Vec<u32>,
}

impl Default for HedgeConfig {
    fn default() -> Self {
        HedgeConfig {
            interest_rate: 0.03,
            horizon: 10,
            annuity_start_age: 65,
            payment: 1.0,
            book_sizes: alloc::vec![5_000, 10_000, 100_000],
        }
    }
}

impl HedgeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.interest_rate > -1.0) || !self.interest_rate.is_finite() {
            return Err(Error::InvalidParameter(format!("interest rate {} must exceed -1", self.interest_rate)));
        }
        if self.horizon == 0 {
            return Err(Error::InvalidParameter("hedge horizon must be at least 1".into()));
        }
        Ok(())
    }

    fn discount(&self, t: usize) -> f64 {
        libm::pow(1.0 + self.interest_rate, -(t as f64))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RiskMeasure {
    Variance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HedgeResult {
    pub l_samples: Vec<f64>,
    pub s_samples: Vec<f64>,
    pub w: f64,
    pub rr: f64,
    pub var_unhedged: f64,
    pub var_hedged: f64,
    pub risk_measure: RiskMeasure,
}

/// `Σ_{t=1}^{H} payment · l_t (1+r)^{-t}`; `lives[0]` is the initial count.
pub fn liability_pv(lives: &[u32], cfg: &HedgeConfig) -> Result<f64> {
    if lives.len() < cfg.horizon + 1 {
        return Err(Error::DimensionMismatch(format!("{} lives for horizon {}", lives.len(), cfg.horizon)));
    }
    let terms: Vec<f64> = (1..=cfg.horizon).map(|t| cfg.payment * lives[t] as f64 * cfg.discount(t)).collect();
    Ok(pairwise_sum(&terms))
}

/// `_t p = Π_{s<t} (1 - q_s)`.
pub fn survivor_index(q_path: &[f64], t: usize) -> Result<f64> {
    if t > q_path.len() {
        return Err(Error::DimensionMismatch(format!("survivor index at {t} from {} probabilities", q_path.len())));
    }
    let mut p = 1.0;
    for &q in &q_path[..t] {
        if !(0.0..=1.0).contains(&q) {
            return Err(Error::DomainError(format!("death probability {q} outside [0, 1]")));
        }
        p *= 1.0 - q;
    }
    Ok(p)
}

/// `_t p` for `t = 1..=horizon`.
pub fn survivor_curve(q_path: &[f64], horizon: usize) -> Result<Vec<f64>> {
    (1..=horizon).map(|t| survivor_index(q_path, t)).collect()
}

/// In-sample mean of the survivor curves, year by year.
pub fn forward_curve(curves: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = curves.first().ok_or(Error::EmptyList)?;
    let mut column = Vec::with_capacity(curves.len());
    (0..first.len())
        .map(|t| {
            column.clear();
            for c in curves {
                column.push(*c.get(t).ok_or_else(|| Error::DimensionMismatch("ragged survivor curves".into()))?);
            }
            Ok(mean(&column))
        })
        .collect()
}

/// Forward survivor index at `t` (1-based) of a scenario set.
pub fn forward_survivor_index(set: &ScenarioSet, t: usize) -> Result<f64> {
    let curves = (0..set.scenarios.len()).map(|s| survivor_index(&set.reference_q_path(s)?, t)).collect::<Result<Vec<f64>>>()?;
    if curves.is_empty() {
        return Err(Error::EmptyList);
    }
    Ok(mean(&curves))
}

/// Floating-leg receiver: `Σ (_t p - forward_t)(1+r)^{-t}`, `t = 1..=H`.
pub fn swap_pv(curve: &[f64], forwards: &[f64], cfg: &HedgeConfig) -> Result<f64> {
    if curve.len() < cfg.horizon || forwards.len() < cfg.horizon {
        return Err(Error::DimensionMismatch("survivor or forward curve shorter than the horizon".into()));
    }
    let terms: Vec<f64> = (1..=cfg.horizon).map(|t| (curve[t - 1] - forwards[t - 1]) * cfg.discount(t)).collect();
    Ok(pairwise_sum(&terms))
}

/// `Cov(L, S) / Var(S)`.
pub fn optimal_weight(l: &[f64], s: &[f64]) -> Result<f64> {
    if l.len() != s.len() {
        return Err(Error::DimensionMismatch("liability and swap samples differ in length".into()));
    }
    let vs = variance(s);
    if !(vs > 0.0) {
        return Err(Error::ZeroSwapVariance);
    }
    Ok(covariance(l, s) / vs)
}

fn hedged(l: &[f64], s: &[f64], w: f64) -> Vec<f64> {
    l.iter().zip(s).map(|(a, b)| a - w * b).collect()
}

/// `1 - Var(L - wS) / Var(L)`.
pub fn risk_reduction(l: &[f64], s: &[f64], w: f64) -> Result<f64> {
    let vl = variance(l);
    if !(vl > 0.0) {
        return Err(Error::ZeroUnhedgedVariance);
    }
    Ok(1.0 - variance(&hedged(l, s, w)) / vl)
}

/// Optimal hedge from paired samples.
pub fn hedge_samples(l_samples: Vec<f64>, s_samples: Vec<f64>) -> Result<HedgeResult> {
    let w = optimal_weight(&l_samples, &s_samples)?;
    let var_unhedged = variance(&l_samples);
    if !(var_unhedged > 0.0) {
        return Err(Error::ZeroUnhedgedVariance);
    }
    let var_hedged = variance(&hedged(&l_samples, &s_samples, w));
    Ok(HedgeResult {
        l_samples,
        s_samples,
        w,
        rr: 1.0 - var_hedged / var_unhedged,
        var_unhedged,
        var_hedged,
        risk_measure: RiskMeasure::Variance,
    })
}

/// Swap present values of every scenario against the set's own forwards.
pub fn swap_samples(set: &ScenarioSet, cfg: &HedgeConfig) -> Result<Vec<f64>> {
    swap_samples_with(set, cfg, None)
}

/// Swap present values against a supplied forward curve (`t = 1..=H`), or the
/// in-sample forwards when `None`.
pub fn swap_samples_with(set: &ScenarioSet, cfg: &HedgeConfig, forwards: Option<&[f64]>) -> Result<Vec<f64>> {
    check_set(set, cfg)?;
    let curves =
        (0..set.scenarios.len()).map(|s| survivor_curve(&set.reference_q_path(s)?, cfg.horizon)).collect::<Result<Vec<_>>>()?;
    let forwards = match forwards {
        Some(f) => f.to_vec(),
        None => forward_curve(&curves)?,
    };
    curves.iter().map(|c| swap_pv(c, &forwards, cfg)).collect()
}

fn check_set(set: &ScenarioSet, cfg: &HedgeConfig) -> Result<()> {
    cfg.validate()?;
    if set.config.horizon < cfg.horizon {
        return Err(Error::DimensionMismatch(format!(
            "scenarios cover {} years, the hedge needs {}",
            set.config.horizon, cfg.horizon
        )));
    }
    if set.config.annuity_start_age != cfg.annuity_start_age {
        return Err(Error::InvalidParameter("scenario and hedge start ages differ".into()));
    }
    Ok(())
}

/// Hedge a book of `book_size` initial lives on a scenario set.
pub fn hedge_scenarios(set: &ScenarioSet, cfg: &HedgeConfig, book_size: u32) -> Result<HedgeResult> {
    let s_samples = swap_samples(set, cfg)?;
    let l_samples = set.lives_for(book_size)?.iter().map(|l| liability_pv(l, cfg)).collect::<Result<Vec<_>>>()?;
    hedge_samples(l_samples, s_samples)
}

/// One line of the risk-reduction report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub model: ModelChoice,
    pub book_size: u32,
    pub w: f64,
    pub rr: f64,
    pub var_unhedged: f64,
    pub var_hedged: f64,
    pub n_scenarios: usize,
    pub seed: u64,
}

/// Rows for every configured book size on one scenario set.
pub fn report_rows(set: &ScenarioSet, cfg: &HedgeConfig) -> Result<Vec<ReportRow>> {
    report_rows_with(set, cfg, None)
}

/// [`report_rows`] with an optional external forward curve.
pub fn report_rows_with(set: &ScenarioSet, cfg: &HedgeConfig, forwards: Option<&[f64]>) -> Result<Vec<ReportRow>> {
    let s_samples = swap_samples_with(set, cfg, forwards)?;
    cfg.book_sizes
        .iter()
        .map(|&size| {
            let l = set.lives_for(size)?.iter().map(|l| liability_pv(l, cfg)).collect::<Result<Vec<_>>>()?;
            let h = hedge_samples(l, s_samples.clone())?;
            Ok(ReportRow {
                model: set.config.model_choice,
                book_size: size,
                w: h.w,
                rr: h.rr,
                var_unhedged: h.var_unhedged,
                var_hedged: h.var_hedged,
                n_scenarios: set.scenarios.len(),
                seed: set.config.master_seed,
            })
        })
        .collect()
}
