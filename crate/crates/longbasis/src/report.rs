//! Report CSV, the human-readable risk-reduction table and plot data.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;

use longbasis_core::hedge::ReportRow;
use longbasis_core::lc::LcParams;
use longbasis_core::scenario::ScenarioSet;
use longbasis_core::stats::{median, quantile};

pub const REPORT_HEADER: [&str; 8] = ["model", "book_size", "w", "rr", "var_unhedged", "var_hedged", "n_scenarios", "seed"];

pub fn write_report<W: Write>(sink: W, rows: &[ReportRow]) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(REPORT_HEADER)?;
    for r in rows {
        w.write_record([
            r.model.name().to_string(),
            r.book_size.to_string(),
            r.w.to_string(),
            r.rr.to_string(),
            r.var_unhedged.to_string(),
            r.var_hedged.to_string(),
            r.n_scenarios.to_string(),
            r.seed.to_string(),
        ])?;
    }
    w.flush()
}

pub fn read_report<R: std::io::Read>(source: R) -> Result<Vec<ReportRow>, String> {
    let mut reader = csv::Reader::from_reader(source);
    let header: Vec<String> = reader.headers().map_err(|e| e.to_string())?.iter().map(str::to_string).collect();
    if header != REPORT_HEADER {
        return Err(format!("expected header {}", REPORT_HEADER.join(",")));
    }
    reader
        .records()
        .map(|rec| {
            let rec = rec.map_err(|e| e.to_string())?;
            let f = |i: usize| rec[i].parse::<f64>().map_err(|e| format!("{}: {e}", REPORT_HEADER[i]));
            let u = |i: usize| rec[i].parse::<u64>().map_err(|e| format!("{}: {e}", REPORT_HEADER[i]));
            Ok(ReportRow {
                model: rec[0].parse().map_err(|e| format!("{e}"))?,
                book_size: u(1)? as u32,
                w: f(2)?,
                rr: f(3)?,
                var_unhedged: f(4)?,
                var_hedged: f(5)?,
                n_scenarios: u(6)? as usize,
                seed: u(7)?,
            })
        })
        .collect()
}

/// Risk reduction by model (rows) and book size (columns), like the published
/// comparison table. Several seeds for one cell are summarised by their median.
pub fn render_table(rows: &[ReportRow]) -> String {
    let mut sizes: Vec<u32> = rows.iter().map(|r| r.book_size).collect();
    sizes.sort_unstable();
    sizes.dedup();
    let mut cells: BTreeMap<(&str, u32), Vec<f64>> = BTreeMap::new();
    let mut models: Vec<&str> = Vec::new();
    for r in rows {
        let name = r.model.name();
        if !models.contains(&name) {
            models.push(name);
        }
        cells.entry((name, r.book_size)).or_default().push(r.rr);
    }
    let mut out = String::new();
    let _ = write!(out, "{:<16}", "model");
    for s in &sizes {
        let _ = write!(out, "{:>14}", format!("l(65)={s}"));
    }
    out.push('\n');
    for m in models {
        let _ = write!(out, "{m:<16}");
        for s in &sizes {
            match cells.get(&(m, *s)) {
                Some(v) => {
                    let _ = write!(out, "{:>14.4}", median(v));
                }
                None => {
                    let _ = write!(out, "{:>14}", "-");
                }
            }
        }
        out.push('\n');
    }
    out
}

/// `year,population,p10,p50,p90` of the central rate at `age` across scenarios.
pub fn write_fan<W: Write>(sink: W, set: &ScenarioSet, age: i32) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["year", "population", "p10", "p50", "p90"])?;
    let pops = [("reference", set.reference_ages.offset(age), true), ("book", set.book_ages.offset(age), false)];
    for (name, row, is_ref) in pops {
        let Some(i) = row else { continue };
        for (j, year) in set.years.iter().enumerate() {
            let v: Vec<f64> =
                set.scenarios.iter().map(|s| if is_ref { s.reference_m[(i, j)] } else { s.book_m[(i, j)] }).collect();
            w.write_record([
                year.to_string(),
                name.to_string(),
                quantile(&v, 0.1).to_string(),
                quantile(&v, 0.5).to_string(),
                quantile(&v, 0.9).to_string(),
            ])?;
        }
    }
    w.flush()
}

/// `age,a,b` of a Lee–Carter fit.
pub fn write_age_curves<W: Write>(sink: W, p: &LcParams) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["age", "a", "b"])?;
    for (i, age) in p.ages.iter().enumerate() {
        w.write_record([age.to_string(), p.a[i].to_string(), p.b[i].to_string()])?;
    }
    w.flush()
}

/// `year,k` of a Lee–Carter fit.
pub fn write_index<W: Write>(sink: W, p: &LcParams) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["year", "k"])?;
    for (j, year) in p.years.iter().enumerate() {
        w.write_record([year.to_string(), p.k[j].to_string()])?;
    }
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use longbasis_core::model::ModelChoice;

    fn row(model: ModelChoice, size: u32, rr: f64) -> ReportRow {
        ReportRow { model, book_size: size, w: 1.5, rr, var_unhedged: 2.0, var_hedged: 0.1, n_scenarios: 10, seed: 3 }
    }

    #[test]
    fn report_roundtrip() {
        let rows = vec![row(ModelChoice::RenewalJump, 5000, 0.1 + 0.2), row(ModelChoice::LcCohorts, 100_000, -1e-300)];
        let mut buf = Vec::new();
        write_report(&mut buf, &rows).unwrap();
        assert!(buf.starts_with(b"model,book_size,w,rr,var_unhedged,var_hedged,n_scenarios,seed\nrenewal_jump,5000,"));
        assert_eq!(read_report(buf.as_slice()).unwrap(), rows);
    }

    #[test]
    fn table_takes_medians() {
        let rows = vec![
            row(ModelChoice::ZhouJumps, 5000, 0.2),
            row(ModelChoice::ZhouJumps, 5000, 0.4),
            row(ModelChoice::ZhouJumps, 5000, 0.9),
            row(ModelChoice::ZhouJumps, 10_000, 0.5),
        ];
        let t = render_table(&rows);
        assert!(t.contains("zhou_jumps"));
        assert!(t.lines().nth(1).unwrap().contains("0.4000"));
    }
}
