//! Panel CSV: header `population,age,year,deaths,exposure`, one row per cell.
//! A file may hold both populations; rows of the other population are skipped.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use longbasis_core::error::{Error, Result};
use longbasis_core::{Grid, MortalityPanel, Population, Span};

const HEADER: [&str; 5] = ["population", "age", "year", "deaths", "exposure"];

fn malformed(line: u64, reason: impl Into<String>) -> Error {
    Error::MalformedRow { line: line as usize, reason: reason.into() }
}

fn parse_population(s: &str) -> Option<Population> {
    match s.trim().to_ascii_lowercase().as_str() {
        "reference" | "ref" | "r" => Some(Population::Reference),
        "book" | "b" => Some(Population::Book),
        _ => None,
    }
}

/// Read one population's panel. Filters are inclusive ranges; when given they
/// also fix the grid, so a filtered range with holes is a `MissingCell`.
pub fn load_panel<R: Read>(
    source: R,
    population: Population,
    age_filter: Option<Span>,
    year_filter: Option<Span>,
) -> Result<MortalityPanel> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(source);
    let header = reader.headers().map_err(|e| malformed(1, e.to_string()))?.clone();
    let names: Vec<String> = header.iter().map(|h| h.to_ascii_lowercase()).collect();
    if names != HEADER {
        return Err(malformed(1, format!("expected header {}, got {}", HEADER.join(","), names.join(","))));
    }
    let mut cells: BTreeMap<(i32, i32), (f64, f64)> = BTreeMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| malformed(e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = record.position().map_or(0, |p| p.line());
        let pop = parse_population(&record[0]).ok_or_else(|| malformed(line, format!("unknown population {:?}", &record[0])))?;
        if pop != population {
            continue;
        }
        let age: i32 = record[1].parse().map_err(|_| malformed(line, format!("age {:?}", &record[1])))?;
        let year: i32 = record[2].parse().map_err(|_| malformed(line, format!("year {:?}", &record[2])))?;
        if age_filter.is_some_and(|f| !f.contains(age)) || year_filter.is_some_and(|f| !f.contains(year)) {
            continue;
        }
        let deaths: f64 = record[3].parse().map_err(|_| malformed(line, format!("deaths {:?}", &record[3])))?;
        let exposure: f64 = record[4].parse().map_err(|_| malformed(line, format!("exposure {:?}", &record[4])))?;
        if !(deaths >= 0.0) || !deaths.is_finite() {
            return Err(Error::InvalidDeaths { age, year });
        }
        if !(exposure > 0.0) || !exposure.is_finite() {
            return Err(Error::NonPositiveExposure { age, year });
        }
        if cells.insert((age, year), (deaths, exposure)).is_some() {
            return Err(malformed(line, format!("duplicate cell age {age}, year {year}")));
        }
    }
    if cells.is_empty() {
        return Err(Error::EmptyList);
    }
    let range = |f: Option<Span>, pick: fn(&(i32, i32)) -> i32| {
        f.unwrap_or_else(|| {
            let (lo, hi) = cells.keys().map(pick).fold((i32::MAX, i32::MIN), |(lo, hi), v| (lo.min(v), hi.max(v)));
            Span { first: lo, last: hi }
        })
    };
    let ages = range(age_filter, |k| k.0);
    let years = range(year_filter, |k| k.1);
    let mut deaths = Grid::zeros(ages.len(), years.len());
    let mut exposures = Grid::zeros(ages.len(), years.len());
    for (i, age) in ages.iter().enumerate() {
        for (j, year) in years.iter().enumerate() {
            let (d, e) = cells.get(&(age, year)).ok_or(Error::MissingCell { age, year })?;
            deaths[(i, j)] = *d;
            exposures[(i, j)] = *e;
        }
    }
    MortalityPanel::new(population, ages, years, deaths, exposures)
}

fn tag(p: Population) -> &'static str {
    match p {
        Population::Reference => "reference",
        Population::Book => "book",
    }
}

/// Write panels in the same format; numbers use the shortest round-trip form.
pub fn write_panels<W: Write>(sink: W, panels: &[&MortalityPanel]) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(HEADER)?;
    for p in panels {
        for (i, age) in p.ages().iter().enumerate() {
            for (j, year) in p.years().iter().enumerate() {
                w.write_record([
                    tag(p.population()).to_string(),
                    age.to_string(),
                    year.to_string(),
                    p.deaths()[(i, j)].to_string(),
                    p.exposures()[(i, j)].to_string(),
                ])?;
            }
        }
    }
    w.flush()
}
