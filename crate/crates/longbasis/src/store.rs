//! Scenario store: a directory with `manifest.json` and `scenarios.bin`.
//!
//! `scenarios.bin` is little-endian with no header. Each scenario is, in order:
//! `reference_m` (reference ages × horizon `f64`, age-major), `book_m` and
//! `book_q` (book ages × horizon `f64`, age-major), `lives` (horizon + 1 `u32`)
//! and `redraws` (`u32`).

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use longbasis_core::scenario::{Scenario, ScenarioConfig, ScenarioSet};
use longbasis_core::{Grid, Span};
use serde::{Deserialize, Serialize};

use crate::error::{PipelineError, Result};

pub const MANIFEST: &str = "manifest.json";
pub const SCENARIOS: &str = "scenarios.bin";
pub const FORMAT_VERSION: u32 = 1;

const LAYOUT: &str = "little-endian; per scenario: reference_m [reference_ages x horizon f64, age-major], \
book_m [book_ages x horizon f64], book_q [book_ages x horizon f64], lives [horizon+1 u32], redraws u32";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub config: ScenarioConfig,
    pub reference_ages: Span,
    pub book_ages: Span,
    pub years: Span,
    pub n_scenarios: usize,
    pub failures: usize,
    pub bytes_per_scenario: usize,
    pub layout: String,
}

impl Manifest {
    pub fn for_set(set: &ScenarioSet) -> Self {
        Manifest {
            format_version: FORMAT_VERSION,
            config: set.config,
            reference_ages: set.reference_ages,
            book_ages: set.book_ages,
            years: set.years,
            n_scenarios: set.scenarios.len(),
            failures: set.failures(),
            bytes_per_scenario: record_len(set.reference_ages.len(), set.book_ages.len(), set.config.horizon),
            layout: LAYOUT.to_string(),
        }
    }
}

fn record_len(n_ref: usize, n_book: usize, horizon: usize) -> usize {
    8 * horizon * (n_ref + 2 * n_book) + 4 * (horizon + 2)
}

pub fn write_store(dir: &Path, set: &ScenarioSet) -> Result<()> {
    fs::create_dir_all(dir).map_err(PipelineError::io(dir))?;
    let manifest = Manifest::for_set(set);
    let path = dir.join(SCENARIOS);
    let mut w = BufWriter::new(fs::File::create(&path).map_err(PipelineError::io(&path))?);
    let mut put = |bytes: &[u8]| w.write_all(bytes).map_err(PipelineError::io(&path));
    for s in &set.scenarios {
        for g in [&s.reference_m, &s.book_m, &s.book_q] {
            for v in g.as_slice() {
                put(&v.to_le_bytes())?;
            }
        }
        for l in &s.lives {
            put(&l.to_le_bytes())?;
        }
        put(&s.redraws.to_le_bytes())?;
    }
    w.flush().map_err(PipelineError::io(&path))?;
    let mpath = dir.join(MANIFEST);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serialises");
    fs::write(&mpath, text + "\n").map_err(PipelineError::io(&mpath))
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(PipelineError::io(&path))?;
    let m: Manifest =
        serde_json::from_str(&text).map_err(|e| PipelineError::Format { path: path.clone(), reason: e.to_string() })?;
    if m.format_version != FORMAT_VERSION {
        return Err(PipelineError::Format { path, reason: format!("unsupported format version {}", m.format_version) });
    }
    Ok(m)
}

pub fn read_store(dir: &Path) -> Result<ScenarioSet> {
    let m = read_manifest(dir)?;
    let path = dir.join(SCENARIOS);
    let bad = |reason: String| PipelineError::Format { path: path.clone(), reason };
    let h = m.config.horizon;
    let expected = record_len(m.reference_ages.len(), m.book_ages.len(), h);
    if expected != m.bytes_per_scenario || m.years.len() != h {
        return Err(bad("manifest dimensions are inconsistent".into()));
    }
    let len = fs::metadata(&path).map_err(PipelineError::io(&path))?.len() as usize;
    if len != expected * m.n_scenarios {
        return Err(bad(format!("{len} bytes, expected {}", expected * m.n_scenarios)));
    }
    let mut r = BufReader::new(fs::File::open(&path).map_err(PipelineError::io(&path))?);
    let mut buf = vec![0u8; expected];
    let mut scenarios = Vec::with_capacity(m.n_scenarios);
    for _ in 0..m.n_scenarios {
        r.read_exact(&mut buf).map_err(PipelineError::io(&path))?;
        let mut at = 0;
        let mut grid = |rows: usize| {
            let data = buf[at..at + 8 * rows * h].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            at += 8 * rows * h;
            Grid::from_vec(rows, h, data).expect("sized above")
        };
        let reference_m = grid(m.reference_ages.len());
        let book_m = grid(m.book_ages.len());
        let book_q = grid(m.book_ages.len());
        let words: Vec<u32> = buf[at..].chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().unwrap())).collect();
        let (lives, redraws) = (words[..h + 1].to_vec(), words[h + 1]);
        scenarios.push(Scenario { reference_m, book_m, book_q, lives, redraws });
    }
    let set =
        ScenarioSet { config: m.config, reference_ages: m.reference_ages, book_ages: m.book_ages, years: m.years, scenarios };
    if set.failures() != m.failures {
        return Err(bad("redraw count disagrees with the manifest".into()));
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_set() -> ScenarioSet {
        let config = ScenarioConfig { n_scenarios: 2, horizon: 2, annuity_start_age: 65, ..ScenarioConfig::default() };
        let scenario = |s: usize| Scenario {
            reference_m: Grid::from_fn(3, 2, |i, j| 0.01 * (1 + i + j + s) as f64 / 3.0),
            book_m: Grid::from_fn(2, 2, |i, j| 0.02 + 1e-17 * (i * 2 + j) as f64),
            book_q: Grid::from_fn(2, 2, |i, j| 0.019 + 0.001 * (i + j) as f64),
            lives: vec![10_000, 9_800 - s as u32, 9_500],
            redraws: s as u32,
        };
        ScenarioSet {
            config,
            reference_ages: Span { first: 64, last: 66 },
            book_ages: Span { first: 65, last: 66 },
            years: Span { first: 2017, last: 2018 },
            scenarios: vec![scenario(0), scenario(1)],
        }
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let set = tiny_set();
        write_store(dir.path(), &set).unwrap();
        let back = read_store(dir.path()).unwrap();
        assert_eq!(back, set);
        let len = fs::metadata(dir.path().join(SCENARIOS)).unwrap().len();
        assert_eq!(len as usize, 2 * (8 * 2 * (3 + 4) + 4 * 4));
    }

    #[test]
    fn truncated_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_store(dir.path(), &tiny_set()).unwrap();
        let path = dir.path().join(SCENARIOS);
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 1]).unwrap();
        assert!(matches!(read_store(dir.path()), Err(PipelineError::Format { .. })));
    }
}
