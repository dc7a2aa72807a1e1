//! Deaths/exposures panels and rate surfaces.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid, Span};

/// Default substitute for exact-zero central rates before taking logs.
pub const DEFAULT_FLOOR_RATE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Population {
    Reference,
    Book,
}

/// Rectangular grid of death counts and exposures for one population.
#[derive(Debug, Clone, PartialEq)]
pub struct MortalityPanel {
    population: Population,
    ages: Span,
    years: Span,
    deaths: Grid,
    exposures: Grid,
}

impl MortalityPanel {
    pub fn new(population: Population, ages: Span, years: Span, deaths: Grid, exposures: Grid) -> Result<Self> {
        let shape = (ages.len(), years.len());
        if deaths.shape() != shape || exposures.shape() != shape {
            return Err(Error::DimensionMismatch(format!(
                "expected {}x{} deaths and exposures, got {:?} and {:?}",
                shape.0,
                shape.1,
                deaths.shape(),
                exposures.shape()
            )));
        }
        for i in 0..shape.0 {
            for j in 0..shape.1 {
                let (age, year) = (ages.at(i), years.at(j));
                let e = exposures[(i, j)];
                if !(e > 0.0) || !e.is_finite() {
                    return Err(Error::NonPositiveExposure { age, year });
                }
                let d = deaths[(i, j)];
                if !(d >= 0.0) || !d.is_finite() {
                    return Err(Error::InvalidDeaths { age, year });
                }
            }
        }
        Ok(MortalityPanel { population, ages, years, deaths, exposures })
    }

    pub fn population(&self) -> Population {
        self.population
    }

    pub fn ages(&self) -> Span {
        self.ages
    }

    pub fn years(&self) -> Span {
        self.years
    }

    pub fn deaths(&self) -> &Grid {
        &self.deaths
    }

    pub fn exposures(&self) -> &Grid {
        &self.exposures
    }

    pub fn n_cells(&self) -> usize {
        self.ages.len() * self.years.len()
    }

    /// Panel restricted to `ages` × `years`, both of which must lie inside
    /// the panel's own ranges.
    pub fn restrict(&self, ages: Span, years: Span) -> Result<Self> {
        let (Some(r0), Some(c0)) = (self.ages.offset(ages.first), self.years.offset(years.first)) else {
            return Err(Error::DimensionMismatch(format!("{ages:?} x {years:?} not inside panel")));
        };
        if !self.ages.contains(ages.last) || !self.years.contains(years.last) {
            return Err(Error::DimensionMismatch(format!("{ages:?} x {years:?} not inside panel")));
        }
        Ok(MortalityPanel {
            population: self.population,
            ages,
            years,
            deaths: self.deaths.slice(r0, ages.len(), c0, years.len()),
            exposures: self.exposures.slice(r0, ages.len(), c0, years.len()),
        })
    }

    /// Same exposures, different death counts.
    pub fn with_deaths(&self, deaths: Grid) -> Result<Self> {
        MortalityPanel::new(self.population, self.ages, self.years, deaths, self.exposures.clone())
    }

    /// Element-wise D/E. Cells with zero deaths are listed as warnings; the
    /// surface keeps the exact zero.
    pub fn central_rates(&self) -> (RateSurface, Vec<ZeroRateCell>) {
        let values = self.deaths.zip_map(&self.exposures, |d, e| d / e);
        let zeros = self.zero_cells(&values);
        let surface = RateSurface { ages: self.ages, years: self.years, kind: RateKind::Central, values };
        (surface, zeros)
    }

    /// Central rates with exact zeros replaced by `floor`.
    pub fn floored_rates(&self, floor: f64) -> (RateSurface, Vec<ZeroRateCell>) {
        let (mut surface, zeros) = self.central_rates();
        surface.values = surface.values.map(|m| if m > 0.0 { m } else { floor });
        if !zeros.is_empty() {
            log::warn!("{} zero-death cells floored to {floor:e}", zeros.len());
        }
        (surface, zeros)
    }

    fn zero_cells(&self, values: &Grid) -> Vec<ZeroRateCell> {
        let mut out = Vec::new();
        for i in 0..values.rows() {
            for j in 0..values.cols() {
                if values[(i, j)] == 0.0 {
                    out.push(ZeroRateCell { age: self.ages.at(i), year: self.years.at(j) });
                }
            }
        }
        out
    }
}

/// Warning marker for a cell whose central rate is exactly zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ZeroRateCell {
    pub age: i32,
    pub year: i32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RateKind {
    /// Central death rate m.
    Central,
    /// One-year death probability q.
    Probability,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateSurface {
    pub ages: Span,
    pub years: Span,
    pub kind: RateKind,
    pub values: Grid,
}

impl RateSurface {
    pub fn new(ages: Span, years: Span, kind: RateKind, values: Grid) -> Result<Self> {
        if values.shape() != (ages.len(), years.len()) {
            return Err(Error::DimensionMismatch(format!("rate grid {:?}", values.shape())));
        }
        Ok(RateSurface { ages, years, kind, values })
    }

    pub fn get(&self, age: i32, year: i32) -> Option<f64> {
        Some(self.values[(self.ages.offset(age)?, self.years.offset(year)?)])
    }

    /// `q = 1 - exp(-m)`.
    pub fn q_from_m(&self) -> Result<RateSurface> {
        if self.kind != RateKind::Central {
            return Err(Error::DomainError("q_from_m expects a central-rate surface".into()));
        }
        let mut values = self.values.clone();
        for i in 0..values.rows() {
            for j in 0..values.cols() {
                values[(i, j)] = q_from_m(values[(i, j)])?;
            }
        }
        Ok(RateSurface { kind: RateKind::Probability, values, ..*self })
    }

    /// `m = -ln(1 - q)`.
    pub fn m_from_q(&self) -> Result<RateSurface> {
        if self.kind != RateKind::Probability {
            return Err(Error::DomainError("m_from_q expects a probability surface".into()));
        }
        let mut values = self.values.clone();
        for i in 0..values.rows() {
            for j in 0..values.cols() {
                values[(i, j)] = m_from_q(values[(i, j)])?;
            }
        }
        Ok(RateSurface { kind: RateKind::Central, values, ..*self })
    }
}

pub fn q_from_m(m: f64) -> Result<f64> {
    if !(m >= 0.0) || !m.is_finite() {
        return Err(Error::DomainError(format!("central rate {m} is not finite and non-negative")));
    }
    Ok(-libm::expm1(-m))
}

pub fn m_from_q(q: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&q) {
        return Err(Error::DomainError(format!("death probability {q} outside [0, 1)")));
    }
    Ok(-libm::log1p(-q))
}

/// Both panels on their common ages, each keeping its own years, plus the
/// calendar years they share.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedPair {
    pub reference: MortalityPanel,
    pub book: MortalityPanel,
    pub overlap: Span,
}

pub fn align_panels(reference: &MortalityPanel, book: &MortalityPanel) -> Result<AlignedPair> {
    let ages = reference.ages.intersect(&book.ages).ok_or(Error::EmptyAgeIntersection)?;
    let overlap = reference.years.intersect(&book.years).ok_or(Error::EmptyYearOverlap)?;
    Ok(AlignedPair { reference: reference.restrict(ages, reference.years)?, book: book.restrict(ages, book.years)?, overlap })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn panel(pop: Population, ages: (i32, i32), years: (i32, i32), d: f64, e: f64) -> MortalityPanel {
        let ages = Span::new(ages.0, ages.1).unwrap();
        let years = Span::new(years.0, years.1).unwrap();
        MortalityPanel::new(pop, ages, years, Grid::filled(ages.len(), years.len(), d), Grid::filled(ages.len(), years.len(), e))
            .unwrap()
    }

    #[test]
    fn single_cell_rate() {
        let p = panel(Population::Reference, (65, 65), (2000, 2000), 10.0, 1000.0);
        let (m, zeros) = p.central_rates();
        assert_eq!(m.get(65, 2000), Some(0.01));
        assert!(zeros.is_empty());
    }

    #[test]
    fn zero_deaths_flagged() {
        let p = panel(Population::Book, (65, 65), (2000, 2000), 0.0, 1000.0);
        let (m, zeros) = p.central_rates();
        assert_eq!(m.get(65, 2000), Some(0.0));
        assert_eq!(zeros, vec![ZeroRateCell { age: 65, year: 2000 }]);
        let (f, _) = p.floored_rates(DEFAULT_FLOOR_RATE);
        assert_eq!(f.get(65, 2000), Some(1e-10));
    }

    #[test]
    fn zero_exposure_rejected() {
        let ages = Span::new(65, 66).unwrap();
        let years = Span::new(2000, 2000).unwrap();
        let e = Grid::from_vec(2, 1, vec![100.0, 0.0]).unwrap();
        let err = MortalityPanel::new(Population::Reference, ages, years, Grid::zeros(2, 1), e).unwrap_err();
        assert_eq!(err, Error::NonPositiveExposure { age: 66, year: 2000 });
    }

    #[test]
    fn q_m_closed_forms() {
        assert_eq!(q_from_m(0.0).unwrap(), 0.0);
        assert!((m_from_q(0.5).unwrap() - core::f64::consts::LN_2).abs() < 1e-15);
        assert!(m_from_q(1.0).is_err());
        for m in [0.001, 0.1, 1.0] {
            let back = m_from_q(q_from_m(m).unwrap()).unwrap();
            assert!((back - m).abs() < 1e-12);
        }
    }

    #[test]
    fn align_overlap_years() {
        let r = panel(Population::Reference, (60, 89), (1961, 2016), 10.0, 1000.0);
        let b = panel(Population::Book, (60, 89), (1961, 2005), 1.0, 100.0);
        let pair = align_panels(&r, &b).unwrap();
        assert_eq!(pair.overlap, Span::new(1961, 2005).unwrap());
        assert_eq!(pair.reference.years(), r.years());
        let again = align_panels(&pair.reference, &pair.book).unwrap();
        assert_eq!(again, pair);
    }

    #[test]
    fn align_disjoint_ages() {
        let r = panel(Population::Reference, (60, 70), (1961, 2016), 10.0, 1000.0);
        let b = panel(Population::Book, (71, 80), (1961, 2005), 1.0, 100.0);
        assert_eq!(align_panels(&r, &b).unwrap_err(), Error::EmptyAgeIntersection);
        let b = panel(Population::Book, (60, 70), (1950, 1960), 1.0, 100.0);
        assert_eq!(align_panels(&r, &b).unwrap_err(), Error::EmptyYearOverlap);
    }

    proptest::proptest! {
        #[test]
        fn q_m_roundtrip(q in 1e-9f64..0.999_999) {
            let back = q_from_m(m_from_q(q).unwrap()).unwrap();
            proptest::prop_assert!((back - q).abs() < 1e-12);
        }
    }
}
