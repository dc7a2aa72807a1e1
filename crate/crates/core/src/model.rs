//! The three two-population models behind a common interface: fit on a
//! reference and a book panel, refit warm on resampled panels, and project
//! both central-rate surfaces forward from the reference's last year.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::alt::{
    fit_lc_cohorts, fit_random_walk, fit_zhou, refit_lc_cohorts, refit_zhou, simulate_zhou, Jump2Source, LcCohortsFit,
    RandomWalk, ZhouFit, ZhouFitOptions,
};
use crate::book::{
    book_rates, fit_book, fit_book_dynamics, reference_rates, simulate_book_path, BookDynamics, BookFamily, BookFitOptions,
    BookModelFit, BookPath,
};
use crate::error::{Error, Result};
use crate::grid::{Grid, Span};
use crate::jump::{calibrate, project_rates, simulate_k, Calibration, CalibrationOptions, JumpPersistence};
use crate::lc::{fit_lc, fit_lc_from, LcOptions, LcParams};
use crate::panel::{MortalityPanel, RateKind, RateSurface};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelChoice {
    /// Lee–Carter reference with renewal jumps, relative book model.
    RenewalJump,
    /// Separate Lee–Carter fits linked by common and own transitory jumps.
    ZhouJumps,
    /// Lee–Carter with cohort effects, random-walk index, CAE book.
    LcCohorts,
}

impl ModelChoice {
    pub const ALL: [ModelChoice; 3] = [ModelChoice::RenewalJump, ModelChoice::ZhouJumps, ModelChoice::LcCohorts];

    pub fn name(&self) -> &'static str {
        match self {
            ModelChoice::RenewalJump => "renewal_jump",
            ModelChoice::ZhouJumps => "zhou_jumps",
            ModelChoice::LcCohorts => "lc_cohorts",
        }
    }
}

impl core::str::FromStr for ModelChoice {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "renewal_jump" | "renewal" => Ok(ModelChoice::RenewalJump),
            "zhou_jumps" | "zhou" => Ok(ModelChoice::ZhouJumps),
            "lc_cohorts" | "cohorts" => Ok(ModelChoice::LcCohorts),
            other => Err(Error::InvalidParameter(format!("unknown model {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelOptions {
    pub lc: LcOptions,
    pub calibration: CalibrationOptions,
    /// Nelder–Mead budget of the warm jump recalibration in a bootstrap refit.
    pub refit_evaluations: usize,
    pub persistence: JumpPersistence,
    pub book_family: BookFamily,
    pub book: BookFitOptions,
    pub zhou: ZhouFitOptions,
    pub jump2_source: Jump2Source,
}

impl Default for ModelOptions {
    fn default() -> Self {
        ModelOptions {
            lc: LcOptions::default(),
            calibration: CalibrationOptions::default(),
            refit_evaluations: 30,
            persistence: JumpPersistence::OneYear,
            book_family: BookFamily::Cae,
            book: BookFitOptions::default(),
            zhou: ZhouFitOptions::default(),
            jump2_source: Jump2Source::Own,
        }
    }
}

/// Projected central rates of both populations over the same future years.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub reference: RateSurface,
    pub book: RateSurface,
}

pub trait TwoPopulationModel {
    fn choice(&self) -> ModelChoice;
    /// Fitted central rates over the reference panel's cells.
    fn fitted_reference(&self) -> Result<RateSurface>;
    /// Fitted central rates over the book panel's cells.
    fn fitted_book(&self) -> Result<RateSurface>;
    /// Last reference year; projections start the year after.
    fn origin(&self) -> i32;
    /// Refit on new panels of the same shape, starting from `self`.
    fn refit(&self, reference: &MortalityPanel, book: &MortalityPanel, opts: &ModelOptions) -> Result<Self>
    where
        Self: Sized;
    fn project<R: Rng + ?Sized>(&self, horizon: usize, opts: &ModelOptions, rng: &mut R) -> Result<Projection>;
}

fn check_panels(reference: &MortalityPanel, book: &MortalityPanel) -> Result<()> {
    let (ra, ba) = (reference.ages(), book.ages());
    if !ra.contains(ba.first) || !ra.contains(ba.last) {
        return Err(Error::DimensionMismatch("book ages must lie within the reference ages".into()));
    }
    if book.years().last > reference.years().last || book.years().first < reference.years().first {
        return Err(Error::DimensionMismatch("book years must lie within the reference years".into()));
    }
    Ok(())
}

fn future_years(origin: i32, horizon: usize) -> Result<Span> {
    Span::new(origin + 1, origin + horizon as i32).ok_or_else(|| Error::InvalidParameter("horizon must be positive".into()))
}

/// Restrict a surface to the given ages (all years kept).
fn restrict_ages(s: &RateSurface, ages: Span) -> Result<RateSurface> {
    let i0 = s
        .ages
        .offset(ages.first)
        .filter(|_| s.ages.contains(ages.last))
        .ok_or_else(|| Error::DimensionMismatch("ages outside the surface".into()))?;
    RateSurface::new(ages, s.years, s.kind, s.values.slice(i0, ages.len(), 0, s.years.len()))
}

/// Book indices over the projection years when the book ends `lag` years
/// before the reference: the first `lag` simulated steps are discarded.
fn lagged_book_path<R: Rng + ?Sized>(
    dynamics: &BookDynamics,
    fit: &BookModelFit,
    origin: i32,
    horizon: usize,
    rng: &mut R,
) -> BookPath {
    let lag = (origin - fit.years.last).max(0) as usize;
    let full = simulate_book_path(dynamics, fit, lag + horizon, rng);
    BookPath { k: full.k[lag..].to_vec(), k2: if full.k2.is_empty() { Vec::new() } else { full.k2[lag..].to_vec() } }
}

/// Lee–Carter reference whose index is a jump-diffusion with renewal jump
/// arrivals; the book is a relative model fitted against the reference rates.
#[derive(Debug, Clone, PartialEq)]
pub struct RenewalJumpModel {
    pub reference: LcParams,
    pub jumps: Calibration,
    pub book: BookModelFit,
    pub book_dynamics: BookDynamics,
}

impl RenewalJumpModel {
    pub fn fit(reference: &MortalityPanel, book: &MortalityPanel, opts: &ModelOptions) -> Result<Self> {
        check_panels(reference, book)?;
        let lc = fit_lc(reference, &opts.lc)?.params;
        let jumps = calibrate(&lc.k, &opts.calibration, None)?;
        Self::assemble(lc, jumps, book, opts)
    }

    fn assemble(lc: LcParams, jumps: Calibration, book: &MortalityPanel, opts: &ModelOptions) -> Result<Self> {
        let rates = reference_rates(&lc, book.ages(), book.years())?;
        let fit = fit_book(opts.book_family, &lc, &rates, book, &opts.book)?;
        let book_dynamics = fit_book_dynamics(&fit)?;
        Ok(RenewalJumpModel { reference: lc, jumps, book: fit, book_dynamics })
    }
}

impl TwoPopulationModel for RenewalJumpModel {
    fn choice(&self) -> ModelChoice {
        ModelChoice::RenewalJump
    }

    fn fitted_reference(&self) -> Result<RateSurface> {
        reference_rates(&self.reference, self.reference.ages, self.reference.years)
    }

    fn fitted_book(&self) -> Result<RateSurface> {
        let rates = reference_rates(&self.reference, self.book.ages, self.book.years)?;
        book_rates(&self.book, &rates, &self.book.fitted_path())
    }

    fn origin(&self) -> i32 {
        self.reference.years.last
    }

    fn refit(&self, reference: &MortalityPanel, book: &MortalityPanel, opts: &ModelOptions) -> Result<Self> {
        let lc = fit_lc_from(reference, &self.reference, &opts.lc)?.params;
        let warm = opts.calibration.warm(opts.refit_evaluations);
        let jumps = calibrate(&lc.k, &warm, Some(&self.jumps.params))?;
        Self::assemble(lc, jumps, book, opts)
    }

    fn project<R: Rng + ?Sized>(&self, horizon: usize, opts: &ModelOptions, rng: &mut R) -> Result<Projection> {
        let years = future_years(self.origin(), horizon)?;
        let law = self.jumps.params.law(self.jumps.family)?;
        let k = simulate_k(&self.jumps.params, &law, horizon, opts.persistence, rng);
        let reference = project_rates(&self.reference, &k, years.first)?;
        let path = lagged_book_path(&self.book_dynamics, &self.book, self.origin(), horizon, rng);
        let book = book_rates(&self.book, &restrict_ages(&reference, self.book.ages)?, &path)?;
        Ok(Projection { reference, book })
    }
}

/// Separate Lee–Carter fits whose indices share a trend, an AR(1) spread and
/// correlated transitory jumps.
#[derive(Debug, Clone, PartialEq)]
pub struct ZhouModel {
    pub fit: ZhouFit,
}

impl ZhouModel {
    pub fn fit(reference: &MortalityPanel, book: &MortalityPanel, opts: &ModelOptions) -> Result<Self> {
        check_panels(reference, book)?;
        Ok(ZhouModel { fit: fit_zhou(reference, book, &Self::options(opts))? })
    }

    fn options(opts: &ModelOptions) -> ZhouFitOptions {
        ZhouFitOptions { lc: opts.lc, ..opts.zhou }
    }
}

fn lc_surface(p: &LcParams) -> Result<RateSurface> {
    RateSurface::new(p.ages, p.years, RateKind::Central, p.rates())
}

fn index_surface(ages: Span, a: &[f64], b: &[f64], years: Span, k: &[f64]) -> Result<RateSurface> {
    let values = Grid::from_fn(ages.len(), years.len(), |i, j| libm::exp(a[i] + b[i] * k[j]));
    RateSurface::new(ages, years, RateKind::Central, values)
}

impl TwoPopulationModel for ZhouModel {
    fn choice(&self) -> ModelChoice {
        ModelChoice::ZhouJumps
    }

    fn fitted_reference(&self) -> Result<RateSurface> {
        lc_surface(&self.fit.lc1)
    }

    fn fitted_book(&self) -> Result<RateSurface> {
        lc_surface(&self.fit.lc2)
    }

    fn origin(&self) -> i32 {
        self.fit.lc1.years.last
    }

    fn refit(&self, reference: &MortalityPanel, book: &MortalityPanel, opts: &ModelOptions) -> Result<Self> {
        Ok(ZhouModel { fit: refit_zhou(reference, book, &self.fit, &Self::options(opts))? })
    }

    fn project<R: Rng + ?Sized>(&self, horizon: usize, opts: &ModelOptions, rng: &mut R) -> Result<Projection> {
        let years = future_years(self.origin(), horizon)?;
        let p = &self.fit.params;
        let paths = simulate_zhou(p, opts.jump2_source, horizon, rng);
        Ok(Projection {
            reference: index_surface(p.ages1, &p.a1, &p.b1, years, &paths.k1)?,
            book: index_surface(p.ages2, &p.a2, &p.b2, years, &paths.k2)?,
        })
    }
}

/// Cohort reference with a random-walk index and a common-age-effect book.
#[derive(Debug, Clone, PartialEq)]
pub struct LcCohortsModel {
    pub fit: LcCohortsFit,
    pub walk: RandomWalk,
    pub book_dynamics: BookDynamics,
}

impl LcCohortsModel {
    pub fn fit(reference: &MortalityPanel, book: &MortalityPanel, opts: &ModelOptions) -> Result<Self> {
        check_panels(reference, book)?;
        Self::assemble(fit_lc_cohorts(reference, book, &opts.lc)?)
    }

    fn assemble(fit: LcCohortsFit) -> Result<Self> {
        let walk = fit_random_walk(&fit.reference.lc.k)?;
        let book_dynamics = fit_book_dynamics(&fit.book)?;
        Ok(LcCohortsModel { fit, walk, book_dynamics })
    }
}

impl TwoPopulationModel for LcCohortsModel {
    fn choice(&self) -> ModelChoice {
        ModelChoice::LcCohorts
    }

    fn fitted_reference(&self) -> Result<RateSurface> {
        self.fit.reference_rates()
    }

    fn fitted_book(&self) -> Result<RateSurface> {
        let all = self.fit.reference_rates()?;
        let b = &self.fit.book;
        let (i0, j0) = (all.ages.offset(b.ages.first).unwrap_or(0), all.years.offset(b.years.first).unwrap_or(0));
        let rates = RateSurface::new(b.ages, b.years, RateKind::Central, all.values.slice(i0, b.ages.len(), j0, b.years.len()))?;
        book_rates(b, &rates, &b.fitted_path())
    }

    fn origin(&self) -> i32 {
        self.fit.reference.lc.years.last
    }

    fn refit(&self, reference: &MortalityPanel, book: &MortalityPanel, opts: &ModelOptions) -> Result<Self> {
        Self::assemble(refit_lc_cohorts(reference, book, &self.fit, &opts.lc)?)
    }

    fn project<R: Rng + ?Sized>(&self, horizon: usize, _opts: &ModelOptions, rng: &mut R) -> Result<Projection> {
        let years = future_years(self.origin(), horizon)?;
        let k_last = *self.fit.reference.lc.k.last().ok_or(Error::EmptyList)?;
        let k = self.walk.simulate(k_last, horizon, rng);
        let reference = self.fit.reference.project(years, &k)?;
        let path = lagged_book_path(&self.book_dynamics, &self.fit.book, self.origin(), horizon, rng);
        let book = book_rates(&self.fit.book, &restrict_ages(&reference, self.fit.book.ages)?, &path)?;
        Ok(Projection { reference, book })
    }
}

/// Any of the three models.
#[derive(Debug, Clone, PartialEq)]
pub enum FittedModel {
    RenewalJump(RenewalJumpModel),
    ZhouJumps(ZhouModel),
    LcCohorts(LcCohortsModel),
}

pub fn fit_model(
    choice: ModelChoice,
    reference: &MortalityPanel,
    book: &MortalityPanel,
    opts: &ModelOptions,
) -> Result<FittedModel> {
    Ok(match choice {
        ModelChoice::RenewalJump => FittedModel::RenewalJump(RenewalJumpModel::fit(reference, book, opts)?),
        ModelChoice::ZhouJumps => FittedModel::ZhouJumps(ZhouModel::fit(reference, book, opts)?),
        ModelChoice::LcCohorts => FittedModel::LcCohorts(LcCohortsModel::fit(reference, book, opts)?),
    })
}

macro_rules! each {
    ($self:expr, $m:ident => $body:expr) => {
        match $self {
            FittedModel::RenewalJump($m) => $body,
            FittedModel::ZhouJumps($m) => $body,
            FittedModel::LcCohorts($m) => $body,
        }
    };
}

impl TwoPopulationModel for FittedModel {
    fn choice(&self) -> ModelChoice {
        each!(self, m => m.choice())
    }

    fn fitted_reference(&self) -> Result<RateSurface> {
        each!(self, m => m.fitted_reference())
    }

    fn fitted_book(&self) -> Result<RateSurface> {
        each!(self, m => m.fitted_book())
    }

    fn origin(&self) -> i32 {
        each!(self, m => m.origin())
    }

    fn refit(&self, reference: &MortalityPanel, book: &MortalityPanel, opts: &ModelOptions) -> Result<Self> {
        Ok(match self {
            FittedModel::RenewalJump(m) => FittedModel::RenewalJump(m.refit(reference, book, opts)?),
            FittedModel::ZhouJumps(m) => FittedModel::ZhouJumps(m.refit(reference, book, opts)?),
            FittedModel::LcCohorts(m) => FittedModel::LcCohorts(m.refit(reference, book, opts)?),
        })
    }

    fn project<R: Rng + ?Sized>(&self, horizon: usize, opts: &ModelOptions, rng: &mut R) -> Result<Projection> {
        each!(self, m => m.project(horizon, opts, rng))
    }
}
