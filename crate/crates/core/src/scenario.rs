//! Bootstrap scenario generation.
//!
//! Each scenario resamples both panels from the base fit, refits the model
//! warm from the base parameters (parameter error), projects both populations
//! (process error) and thins the book's initial lives year by year (sampling
//! risk). Scenario `s` draws only from its own substream, so the set does not
//! depend on the order in which scenarios are computed.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Binomial, Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid, Span};
use crate::jump::JumpPersistence;
use crate::model::{fit_model, FittedModel, ModelChoice, ModelOptions, TwoPopulationModel};
use crate::panel::{q_from_m, MortalityPanel, DEFAULT_FLOOR_RATE};
use crate::rng::{domain, substream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub n_scenarios: usize,
    pub horizon: usize,
    pub master_seed: u64,
    pub book_size_l65: u32,
    pub model_choice: ModelChoice,
    pub jump_persistence: JumpPersistence,
    pub floor_rate: f64,
    /// `false` skips resampling and refitting: every scenario projects from
    /// the base fit. Diagnostic only.
    pub resample: bool,
    /// First age of the lives path.
    pub annuity_start_age: i32,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            n_scenarios: 10_000,
            horizon: 10,
            master_seed: 0,
            book_size_l65: 10_000,
            model_choice: ModelChoice::RenewalJump,
            jump_persistence: JumpPersistence::OneYear,
            floor_rate: DEFAULT_FLOOR_RATE,
            resample: true,
            annuity_start_age: 65,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_scenarios == 0 || self.horizon == 0 || self.book_size_l65 == 0 {
            return Err(Error::InvalidParameter("n_scenarios, horizon and book_size_l65 must be at least 1".into()));
        }
        if !(self.floor_rate > 0.0) {
            return Err(Error::InvalidParameter(format!("floor_rate {} must be positive", self.floor_rate)));
        }
        Ok(())
    }

    /// Refit failures tolerated before the run is abandoned (1%).
    pub fn allowed_failures(&self) -> usize {
        self.n_scenarios / 100
    }
}

/// One projected future. Grids are age by future year.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub reference_m: Grid,
    pub book_m: Grid,
    pub book_q: Grid,
    /// `l_{x0+t}` for `t = 0..=horizon`.
    pub lives: Vec<u32>,
    /// Draws discarded before this one succeeded.
    pub redraws: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSet {
    pub config: ScenarioConfig,
    pub reference_ages: Span,
    pub book_ages: Span,
    /// Projection years.
    pub years: Span,
    pub scenarios: Vec<Scenario>,
}

impl ScenarioSet {
    pub fn failures(&self) -> usize {
        self.scenarios.iter().map(|s| s.redraws as usize).sum()
    }

    fn diagonal(grid: &Grid, ages: Span, start_age: i32, horizon: usize) -> Result<Vec<f64>> {
        let i0 = ages
            .offset(start_age)
            .filter(|_| ages.contains(start_age + horizon as i32 - 1))
            .ok_or_else(|| Error::DimensionMismatch(format!("ages {start_age}+{horizon} not covered by {ages:?}")))?;
        Ok((0..horizon).map(|t| grid[(i0 + t, t)]).collect())
    }

    /// Book `q_{x0+t, t}`, `t = 0..horizon`, of scenario `s`.
    pub fn book_q_path(&self, s: usize) -> Result<Vec<f64>> {
        let c = &self.config;
        Self::diagonal(&self.scenarios[s].book_q, self.book_ages, c.annuity_start_age, c.horizon)
    }

    /// Reference `q_{x0+t, t}`, `t = 0..horizon`, of scenario `s`.
    pub fn reference_q_path(&self, s: usize) -> Result<Vec<f64>> {
        let c = &self.config;
        let m = Self::diagonal(&self.scenarios[s].reference_m, self.reference_ages, c.annuity_start_age, c.horizon)?;
        m.into_iter().map(q_from_m).collect()
    }

    /// Lives paths for a different initial book size. The rate scenarios are
    /// unchanged; lives use the same per-scenario streams as the stored paths.
    pub fn lives_for(&self, l0: u32) -> Result<Vec<Vec<u32>>> {
        if l0 == self.config.book_size_l65 {
            return Ok(self.scenarios.iter().map(|s| s.lives.clone()).collect());
        }
        (0..self.scenarios.len()).map(|s| lives_path(self.config.master_seed, s, l0, &self.book_q_path(s)?)).collect()
    }
}

/// Sequential binomial thinning `l_{t+1} ~ Bin(l_t, 1 - q_t)`.
pub fn simulate_lives<R: Rng + ?Sized>(l0: u32, q_path: &[f64], rng: &mut R) -> Result<Vec<u32>> {
    let mut lives = Vec::with_capacity(q_path.len() + 1);
    lives.push(l0);
    let mut l = l0;
    for &q in q_path {
        if !(0.0..=1.0).contains(&q) {
            return Err(Error::DomainError(format!("death probability {q} outside [0, 1]")));
        }
        l = Binomial::new(u64::from(l), 1.0 - q).map_err(|e| Error::DomainError(format!("{e}")))?.sample(rng) as u32;
        lives.push(l);
    }
    Ok(lives)
}

fn lives_path(seed: u64, s: usize, l0: u32, q: &[f64]) -> Result<Vec<u32>> {
    simulate_lives(l0, q, &mut substream(seed, domain::LIVES, s as u64))
}

/// The base fit, resampling inputs and options shared by every scenario.
#[derive(Debug, Clone)]
pub struct ScenarioEngine {
    pub config: ScenarioConfig,
    pub options: ModelOptions,
    pub base: FittedModel,
    reference: MortalityPanel,
    book: MortalityPanel,
    reference_mean: Grid,
    book_trials: Grid,
    book_q: Grid,
}

impl ScenarioEngine {
    /// Fit the base model and prepare resampling.
    pub fn new(
        reference: &MortalityPanel,
        book: &MortalityPanel,
        config: ScenarioConfig,
        options: &ModelOptions,
    ) -> Result<Self> {
        let options = Self::effective_options(&config, options);
        let base = fit_model(config.model_choice, reference, book, &options)?;
        Self::with_base(base, reference, book, config, &options)
    }

    fn effective_options(config: &ScenarioConfig, options: &ModelOptions) -> ModelOptions {
        let mut o = *options;
        o.persistence = config.jump_persistence;
        o.lc.floor_rate = Some(config.floor_rate);
        o
    }

    /// Use an existing base fit (for example one with altered dynamics).
    pub fn with_base(
        base: FittedModel,
        reference: &MortalityPanel,
        book: &MortalityPanel,
        config: ScenarioConfig,
        options: &ModelOptions,
    ) -> Result<Self> {
        config.validate()?;
        if base.choice() != config.model_choice {
            return Err(Error::InvalidParameter(format!(
                "base fit is {} but the configuration asks for {}",
                base.choice().name(),
                config.model_choice.name()
            )));
        }
        let last_age = config.annuity_start_age + config.horizon as i32 - 1;
        if !book.ages().contains(config.annuity_start_age) || !book.ages().contains(last_age) {
            return Err(Error::InvalidParameter(format!(
                "book ages {:?} do not cover the lives path {}..={last_age}",
                book.ages(),
                config.annuity_start_age
            )));
        }
        let options = Self::effective_options(&config, options);
        let reference_mean = base.fitted_reference()?.values.zip_map(reference.exposures(), |m, e| m * e);
        let book_trials = book.exposures().map(libm::round);
        let book_q = base.fitted_book()?.values.map(|m| -libm::expm1(-m));
        Ok(ScenarioEngine {
            config,
            options,
            base,
            reference: reference.clone(),
            book: book.clone(),
            reference_mean,
            book_trials,
            book_q,
        })
    }

    /// Poisson reference deaths and binomial book deaths around the base fit.
    pub fn resample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<(MortalityPanel, MortalityPanel)> {
        let mut d_ref = Grid::zeros(self.reference_mean.rows(), self.reference_mean.cols());
        for i in 0..d_ref.rows() {
            for j in 0..d_ref.cols() {
                let lambda = self.reference_mean[(i, j)];
                d_ref[(i, j)] = if lambda > 0.0 {
                    Poisson::new(lambda).map_err(|e| Error::DomainError(format!("{e}")))?.sample(rng)
                } else {
                    0.0
                };
            }
        }
        let mut d_book = Grid::zeros(self.book_q.rows(), self.book_q.cols());
        for i in 0..d_book.rows() {
            for j in 0..d_book.cols() {
                let n = self.book_trials[(i, j)] as u64;
                d_book[(i, j)] =
                    Binomial::new(n, self.book_q[(i, j)]).map_err(|e| Error::DomainError(format!("{e}")))?.sample(rng) as f64;
            }
        }
        Ok((self.reference.with_deaths(d_ref)?, self.book.with_deaths(d_book)?))
    }

    fn draw(&self, s: usize, attempt: u64) -> Result<(Grid, Grid, Grid)> {
        let mut rng = substream(self.config.master_seed, domain::SCENARIO, (attempt << 32) | s as u64);
        let refit;
        let model = if self.config.resample {
            let (reference, book) = self.resample(&mut rng)?;
            refit = self.base.refit(&reference, &book, &self.options)?;
            &refit
        } else {
            &self.base
        };
        let p = model.project(self.config.horizon, &self.options, &mut rng)?;
        let positive = |g: &Grid| g.as_slice().iter().all(|m| *m > 0.0 && m.is_finite());
        if !positive(&p.reference.values) || !positive(&p.book.values) {
            return Err(Error::DomainError("projected rate not positive and finite".into()));
        }
        let book_q = p.book.values.map(|m| -libm::expm1(-m));
        if book_q.as_slice().iter().any(|q| !(*q > 0.0 && *q < 1.0)) {
            return Err(Error::DomainError("projected book death probability outside (0, 1)".into()));
        }
        Ok((p.reference.values, p.book.values, book_q))
    }

    /// Scenario `s`, redrawn on failure from fresh substreams. Returns an error
    /// once more draws have failed than the whole run may absorb.
    pub fn run_one(&self, s: usize) -> Result<Scenario> {
        let allowed = self.config.allowed_failures();
        let mut attempt = 0u64;
        loop {
            match self.draw(s, attempt) {
                Ok((reference_m, book_m, book_q)) => {
                    let start = self.book.ages().offset(self.config.annuity_start_age).unwrap_or(0);
                    let q: Vec<f64> = (0..self.config.horizon).map(|t| book_q[(start + t, t)]).collect();
                    let lives = lives_path(self.config.master_seed, s, self.config.book_size_l65, &q)?;
                    return Ok(Scenario { reference_m, book_m, book_q, lives, redraws: attempt as u32 });
                }
                Err(e) => {
                    log::warn!("scenario {s} draw {attempt} failed: {e}");
                    attempt += 1;
                    if attempt as usize > allowed {
                        return Err(Error::ScenarioRefitFailure { failed: attempt as usize, allowed });
                    }
                }
            }
        }
    }

    /// Assemble per-scenario results computed in any order.
    pub fn collect(&self, results: Vec<Result<Scenario>>) -> Result<ScenarioSet> {
        let scenarios = results.into_iter().collect::<Result<Vec<_>>>()?;
        let failed: usize = scenarios.iter().map(|s| s.redraws as usize).sum();
        let allowed = self.config.allowed_failures();
        if failed > allowed {
            return Err(Error::ScenarioRefitFailure { failed, allowed });
        }
        if failed > 0 {
            log::info!("{failed} scenario draws failed and were redrawn");
        }
        let origin = self.base.origin();
        Ok(ScenarioSet {
            config: self.config,
            reference_ages: self.reference.ages(),
            book_ages: self.book.ages(),
            years: Span { first: origin + 1, last: origin + self.config.horizon as i32 },
            scenarios,
        })
    }

    /// All scenarios in index order on the calling thread.
    pub fn run(&self) -> Result<ScenarioSet> {
        self.collect((0..self.config.n_scenarios).map(|s| self.run_one(s)).collect())
    }
}

/// Fit the base model and generate the scenario set.
pub fn bootstrap_scenarios(
    reference: &MortalityPanel,
    book: &MortalityPanel,
    config: ScenarioConfig,
    options: &ModelOptions,
) -> Result<ScenarioSet> {
    ScenarioEngine::new(reference, book, config, options)?.run()
}
