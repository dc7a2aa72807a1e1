//! Synthetic two-population data.
//!
//! The reference surface is Lee–Carter with a jump-diffusion period index, so
//! jumps hit both populations at once; the book adds a common-age-effect
//! difference with an AR(1) book index. Deaths are Poisson.

use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::alt::PUBLISHED_CAE_BOOK_A;
use crate::book::{project_book_k, Ar1Params};
use crate::error::{Error, Result};
use crate::grid::{Grid, Span};
use crate::jump::{simulate_k, JumpDiffusionParams, JumpPersistence};
use crate::panel::{MortalityPanel, Population};
use crate::renewal::RenewalFamily;
use crate::rng::{domain, substream};

/// Published England & Wales males age pattern, ages 60–89.
pub const EW_MALES_A: [f64; 30] = [
    -4.2486, -4.1505, -4.0451, -3.9482, -3.8408, -3.7472, -3.6598, -3.5517, -3.4593, -3.3607, -3.2684, -3.1758, -3.0687, -2.9749,
    -2.8755, -2.7879, -2.6909, -2.6061, -2.5122, -2.4167, -2.3246, -2.2401, -2.1366, -2.0461, -1.9495, -1.8587, -1.7637, -1.6793,
    -1.5959, -1.5088,
];
/// Published England & Wales males sensitivities, ages 60–89.
pub const EW_MALES_B: [f64; 30] = [
    0.0388, 0.0391, 0.0399, 0.0402, 0.0408, 0.0409, 0.0401, 0.0410, 0.0404, 0.0401, 0.0392, 0.0378, 0.0381, 0.0379, 0.0369,
    0.0356, 0.0349, 0.0335, 0.0325, 0.0314, 0.0298, 0.0278, 0.0272, 0.0257, 0.0250, 0.0233, 0.0227, 0.0213, 0.0195, 0.0179,
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticWorld {
    pub ages: Span,
    pub reference_years: Span,
    /// Must lie within the reference years.
    pub book_years: Span,
    pub a_ref: Vec<f64>,
    pub b_ref: Vec<f64>,
    /// `k0` is the index in the first reference year.
    pub jumps: JumpDiffusionParams,
    pub family: RenewalFamily,
    pub persistence: JumpPersistence,
    /// Book level difference `a^B`.
    pub a_book: Vec<f64>,
    pub k_book: Ar1Params,
    /// Book index in the year before the first book year.
    pub k_book_start: f64,
    /// Exposure per age, the same every year.
    pub reference_exposure: Vec<f64>,
    pub book_exposure: Vec<f64>,
}

impl SyntheticWorld {
    /// Ages 60–89 on the published reference age pattern, reference years
    /// 1961–2016, a pension-book-sized population observed 1971–2010, and
    /// frequent common jumps in the reference index.
    pub fn ew_style() -> Self {
        let ages = Span { first: 60, last: 89 };
        let decay = |scale: f64| -> Vec<f64> { (0..30).map(|i| scale * libm::exp(-0.09 * i as f64)).collect() };
        SyntheticWorld {
            ages,
            reference_years: Span { first: 1961, last: 2016 },
            book_years: Span { first: 1971, last: 2010 },
            a_ref: EW_MALES_A.to_vec(),
            b_ref: EW_MALES_B.to_vec(),
            jumps: JumpDiffusionParams { mu: -0.264, sigma: 0.2764, eta: 0.6, alpha: 0.15, beta: 1.0, k0: 7.4 },
            family: RenewalFamily::Gamma,
            persistence: JumpPersistence::Permanent,
            a_book: PUBLISHED_CAE_BOOK_A.to_vec(),
            k_book: Ar1Params::new(0.0, 0.5, 0.6),
            k_book_start: 0.0,
            reference_exposure: decay(3.0e5),
            book_exposure: decay(3.0e4),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.ages.len();
        let lens =
            [self.a_ref.len(), self.b_ref.len(), self.a_book.len(), self.reference_exposure.len(), self.book_exposure.len()];
        if lens.iter().any(|&l| l != n) {
            return Err(Error::DimensionMismatch("per-age vectors must match the age range".into()));
        }
        if !self.reference_years.contains(self.book_years.first) || !self.reference_years.contains(self.book_years.last) {
            return Err(Error::DimensionMismatch("book years must lie within the reference years".into()));
        }
        if self.reference_exposure.iter().chain(&self.book_exposure).any(|e| !(*e > 0.0)) {
            return Err(Error::InvalidParameter("exposures must be positive".into()));
        }
        self.jumps.validate()
    }
}

/// Generated panels and the true indices behind them.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticPanels {
    pub reference: MortalityPanel,
    pub book: MortalityPanel,
    /// True reference index over the reference years.
    pub k_reference: Vec<f64>,
    /// True book index over the book years.
    pub k_book: Vec<f64>,
    /// True central rates.
    pub m_reference: Grid,
    pub m_book: Grid,
}

fn deaths<R: Rng + ?Sized>(m: &Grid, exposure: &[f64], poisson: bool, rng: &mut R) -> Result<Grid> {
    let mut out = Grid::zeros(m.rows(), m.cols());
    for i in 0..m.rows() {
        for j in 0..m.cols() {
            let mean = m[(i, j)] * exposure[i];
            out[(i, j)] = if !poisson {
                mean
            } else {
                Poisson::new(mean).map_err(|_| Error::DomainError(alloc::format!("Poisson mean {mean}")))?.sample(rng)
            };
        }
    }
    Ok(out)
}

/// One draw of the world. With `poisson = false` deaths equal their
/// expectation (the index paths are still random).
pub fn generate(world: &SyntheticWorld, seed: u64, poisson: bool) -> Result<SyntheticPanels> {
    world.validate()?;
    let mut rng = substream(seed, domain::SYNTHETIC, 0);
    let nt = world.reference_years.len();
    let law = world.jumps.law(world.family)?;
    let mut k_reference = Vec::with_capacity(nt);
    k_reference.push(world.jumps.k0);
    k_reference.extend(simulate_k(&world.jumps, &law, nt - 1, world.persistence, &mut rng));
    let k_book = project_book_k(&world.k_book, world.k_book_start, world.book_years.len(), &mut rng);

    let m_reference = Grid::from_fn(world.ages.len(), nt, |i, j| libm::exp(world.a_ref[i] + world.b_ref[i] * k_reference[j]));
    let j0 = (world.book_years.first - world.reference_years.first) as usize;
    let m_book = Grid::from_fn(world.ages.len(), k_book.len(), |i, j| {
        m_reference[(i, j0 + j)] * libm::exp(world.a_book[i] + world.b_ref[i] * k_book[j])
    });

    let d_ref = deaths(&m_reference, &world.reference_exposure, poisson, &mut rng)?;
    let d_book = deaths(&m_book, &world.book_exposure, poisson, &mut rng)?;
    let e_ref = Grid::from_fn(world.ages.len(), nt, |i, _| world.reference_exposure[i]);
    let e_book = Grid::from_fn(world.ages.len(), k_book.len(), |i, _| world.book_exposure[i]);
    Ok(SyntheticPanels {
        reference: MortalityPanel::new(Population::Reference, world.ages, world.reference_years, d_ref, e_ref)?,
        book: MortalityPanel::new(Population::Book, world.ages, world.book_years, d_book, e_book)?,
        k_reference,
        k_book,
        m_reference,
        m_book,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn published_sensitivities_sum_to_one() {
        let s: f64 = EW_MALES_B.iter().sum();
        assert!((s - 1.0).abs() < 0.01, "{s}");
    }

    #[test]
    fn noiseless_deaths_are_expectations() {
        let w = SyntheticWorld::ew_style();
        let p = generate(&w, 3, false).unwrap();
        let (i, j) = (5, 12);
        let e = p.reference.exposures()[(i, j)];
        assert!((p.reference.deaths()[(i, j)] - p.m_reference[(i, j)] * e).abs() < 1e-9 * e);
        // Book rate = reference rate times the level and index difference.
        let jb = 2;
        let ratio = p.m_book[(i, jb)] / p.m_reference[(i, jb + 10)];
        assert!((ratio.ln() - (w.a_book[i] + w.b_ref[i] * p.k_book[jb])).abs() < 1e-12);
    }

    #[test]
    fn same_seed_same_panels() {
        let w = SyntheticWorld::ew_style();
        assert_eq!(generate(&w, 9, true).unwrap(), generate(&w, 9, true).unwrap());
        assert_ne!(generate(&w, 9, true).unwrap().k_reference, generate(&w, 10, true).unwrap().k_reference);
    }
}
