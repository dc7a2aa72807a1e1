//! The commands behind the CLI. Each reads the run configuration and input
//! files and writes its outputs under `out`; none reads the clock.

use std::fs;
use std::path::{Path, PathBuf};

use longbasis_core::book::{fit_book, reference_rates, select_model, BookModelFit};
use longbasis_core::hedge::{report_rows_with, swap_samples_with, ReportRow};
use longbasis_core::jump::{calibrate, Calibration};
use longbasis_core::lc::{fit_lc, LcFit};
use longbasis_core::model::ModelChoice;
use longbasis_core::scenario::{ScenarioEngine, ScenarioSet};
use longbasis_core::stats::{mean, standard_error};
use longbasis_core::{align_panels, MortalityPanel, Population};
use serde::Serialize;
use serde_json::json;

use crate::config::RunConfig;
use crate::driver::run_parallel;
use crate::error::{PipelineError, Result, StageExt};
use crate::{panel_csv, params, report, store};

pub const REPORT_FILE: &str = "report.csv";
pub const SCENARIO_DIR: &str = "scenarios";

/// Write through a buffer so a failed writer never leaves a partial file.
fn write_with(path: &Path, f: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(PipelineError::io(dir))?;
    }
    let mut buf = Vec::new();
    f(&mut buf).map_err(PipelineError::io(path))?;
    fs::write(path, buf).map_err(PipelineError::io(path))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    write_with(path, |b| {
        b.extend_from_slice(text.as_bytes());
        Ok(())
    })
}

fn write_json(path: &Path, v: &serde_json::Value) -> Result<()> {
    write_text(path, &(serde_json::to_string_pretty(v).expect("json") + "\n"))
}

pub struct Panels {
    pub reference: MortalityPanel,
    pub book: MortalityPanel,
}

fn load_one(cfg: &RunConfig, file: &Path, pop: Population) -> Result<MortalityPanel> {
    let path = cfg.path(file);
    let f = fs::File::open(&path).map_err(PipelineError::io(&path))?;
    let (ages, years) = match pop {
        Population::Reference => (cfg.age_filter()?, cfg.reference_year_filter()?),
        Population::Book => (cfg.book_age_filter()?, cfg.book_year_filter()?),
    };
    panel_csv::load_panel(f, pop, ages, years).map_err(|e| PipelineError::Format { path, reason: e.to_string() })
}

pub fn load_panels(cfg: &RunConfig) -> Result<Panels> {
    let reference = load_one(cfg, &cfg.data.reference, Population::Reference)?;
    let book = load_one(cfg, &cfg.data.book, Population::Book)?;
    let aligned = align_panels(&reference, &book).stage("ingest")?;
    if aligned.book.ages() != book.ages() {
        log::warn!("book ages restricted to {:?} shared with the reference", aligned.book.ages());
    }
    Ok(Panels { reference: aligned.reference, book: aligned.book })
}

fn panel_summary(p: &MortalityPanel) -> serde_json::Value {
    let zeros = p.central_rates().1.len();
    json!({
        "ages": [p.ages().first, p.ages().last],
        "years": [p.years().first, p.years().last],
        "cells": p.n_cells(),
        "total_deaths": p.deaths().as_slice().iter().sum::<f64>(),
        "zero_death_cells": zeros,
    })
}

/// Validate and normalise the input panels: `panels.csv` plus `ingest.json`.
pub fn ingest(cfg: &RunConfig, out: &Path) -> Result<Panels> {
    let panels = load_panels(cfg)?;
    write_with(&out.join("panels.csv"), |b| panel_csv::write_panels(b, &[&panels.reference, &panels.book]))?;
    write_json(
        &out.join("ingest.json"),
        &json!({ "reference": panel_summary(&panels.reference), "book": panel_summary(&panels.book) }),
    )?;
    Ok(panels)
}

pub fn fit_reference(cfg: &RunConfig, panels: &Panels) -> Result<LcFit> {
    fit_lc(&panels.reference, &cfg.lc_options()).stage("fit")
}

/// Reference Lee–Carter fit: `reference_lc.csv`.
pub fn fit(cfg: &RunConfig, out: &Path) -> Result<LcFit> {
    let panels = load_panels(cfg)?;
    let lc = fit_reference(cfg, &panels)?;
    let mut t = params::lc_to_table(&lc.params);
    t.push("loglik", 0, lc.loglik);
    t.push("deviance", 0, lc.deviance);
    t.push("iterations", 0, lc.iterations);
    write_with(&out.join("reference_lc.csv"), |b| t.write(b))?;
    Ok(lc)
}

fn calibration_table(c: &Calibration) -> params::ParamTable {
    let mut t = params::jump_to_table(&c.params, c.family);
    t.push("loglik", 0, c.loglik);
    t.push("converged", 0, c.converged);
    t.push("weak_identification", 0, c.weak_identification);
    t.push_series("jump_curvature", 0, &c.jump_curvature);
    t.push("evaluations", 0, c.evaluations);
    t
}

/// Reference fit plus jump-diffusion calibration of its index: `jumps.csv`.
pub fn calibrate_jumps(cfg: &RunConfig, out: &Path) -> Result<Calibration> {
    let lc = fit(cfg, out)?;
    let c = calibrate(&lc.params.k, &cfg.calibration_options(), None).stage("calibrate-jumps")?;
    if c.weak_identification {
        log::warn!("jump parameters are weakly identified (curvature {:?})", c.jump_curvature);
    }
    write_with(&out.join("jumps.csv"), |b| calibration_table(&c).write(b))?;
    Ok(c)
}

pub fn fit_book_families(cfg: &RunConfig, panels: &Panels, lc: &LcFit) -> Result<Vec<BookModelFit>> {
    let rates = reference_rates(&lc.params, panels.book.ages(), panels.book.years()).stage("fit-book")?;
    cfg.book
        .families
        .iter()
        .map(|f| fit_book(*f, &lc.params, &rates, &panels.book, &Default::default()).stage("fit-book"))
        .collect()
}

fn write_bic(path: &Path, fits: &[BookModelFit]) -> Result<()> {
    let best = select_model(fits).stage("fit-book")?.family;
    write_with(path, |b| {
        let mut w = csv::Writer::from_writer(b);
        w.write_record(["family", "loglik", "n_params", "n_obs", "bic", "selected"])?;
        for f in fits {
            w.write_record([
                f.family.name().to_string(),
                f.loglik.to_string(),
                f.n_params.to_string(),
                f.n_obs.to_string(),
                f.bic.to_string(),
                (f.family == best).to_string(),
            ])?;
        }
        w.flush()
    })
}

/// Every configured book family: `book_<family>.csv` and `bic.csv`.
pub fn fit_books(cfg: &RunConfig, out: &Path) -> Result<Vec<BookModelFit>> {
    let panels = load_panels(cfg)?;
    let lc = fit_reference(cfg, &panels)?;
    let fits = fit_book_families(cfg, &panels, &lc)?;
    for f in &fits {
        write_with(&out.join(format!("book_{}.csv", f.family.name())), |b| params::book_to_table(f).write(b))?;
    }
    write_bic(&out.join("bic.csv"), &fits)?;
    Ok(fits)
}

/// Scenario set for `model` under the configured scenario settings.
pub fn simulate_model(cfg: &RunConfig, panels: &Panels, model: ModelChoice, threads: Option<usize>) -> Result<ScenarioSet> {
    let mut sc = cfg.scenario_config();
    sc.model_choice = model;
    let engine = ScenarioEngine::new(&panels.reference, &panels.book, sc, &cfg.model_options()).stage("fit")?;
    run_parallel(&engine, threads)
}

/// Bootstrap scenarios written as a store under `out`.
pub fn simulate(cfg: &RunConfig, out: &Path, threads: Option<usize>) -> Result<ScenarioSet> {
    let panels = load_panels(cfg)?;
    let set = simulate_model(cfg, &panels, cfg.scenario.model, threads)?;
    store::write_store(out, &set)?;
    write_text(&out.join("config.resolved.toml"), &cfg.resolved())?;
    Ok(set)
}

/// External forward curve `t,forward` for `t = 1..=H`, if configured.
pub fn load_forwards(cfg: &RunConfig) -> Result<Option<Vec<f64>>> {
    let Some(file) = &cfg.hedge.forwards else { return Ok(None) };
    let path = cfg.path(file);
    let bad = |reason: String| PipelineError::Format { path: path.clone(), reason };
    let mut r = csv::Reader::from_path(&path).map_err(|e| bad(e.to_string()))?;
    let mut curve = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let t: usize = rec.get(0).and_then(|v| v.trim().parse().ok()).ok_or_else(|| bad(format!("row {}: t", i + 1)))?;
        let f: f64 = rec.get(1).and_then(|v| v.trim().parse().ok()).ok_or_else(|| bad(format!("row {}: forward", i + 1)))?;
        if t != i + 1 {
            return Err(bad(format!("row {} has t = {t}; expected consecutive t from 1", i + 1)));
        }
        curve.push(f);
    }
    if curve.len() < cfg.hedge.liability_horizon {
        return Err(bad(format!("{} forwards for a {}-year swap", curve.len(), cfg.hedge.liability_horizon)));
    }
    Ok(Some(curve))
}

pub fn hedge_rows(cfg: &RunConfig, set: &ScenarioSet) -> Result<Vec<ReportRow>> {
    let forwards = load_forwards(cfg)?;
    report_rows_with(set, &cfg.hedge_config(), forwards.as_deref()).stage("hedge")
}

fn write_report_files(out: &Path, rows: &[ReportRow]) -> Result<()> {
    write_with(&out.join(REPORT_FILE), |b| report::write_report(b, rows))?;
    write_text(&out.join("report.txt"), &report::render_table(rows))
}

/// Hedge a stored scenario set: `report.csv` and `report.txt`.
pub fn hedge(cfg: &RunConfig, scenarios: &Path, out: &Path) -> Result<Vec<ReportRow>> {
    let set = store::read_store(scenarios)?;
    let rows = hedge_rows(cfg, &set)?;
    write_report_files(out, &rows)?;
    Ok(rows)
}

/// Book-family BIC table plus a risk-reduction report for every model in
/// `compare.models`, all on the configured seed.
pub fn compare(cfg: &RunConfig, out: &Path, threads: Option<usize>) -> Result<Vec<ReportRow>> {
    let panels = load_panels(cfg)?;
    let lc = fit_reference(cfg, &panels)?;
    write_bic(&out.join("bic.csv"), &fit_book_families(cfg, &panels, &lc)?)?;
    let mut rows = Vec::new();
    for model in &cfg.compare.models {
        log::info!("comparing {}", model.name());
        let set = simulate_model(cfg, &panels, *model, threads)?;
        rows.extend(hedge_rows(cfg, &set)?);
    }
    write_report_files(out, &rows)?;
    Ok(rows)
}

/// Render `out/report.csv`; with `plot_data`, also write the `m_65` fan from
/// the scenario store and the reference age and period curves under `out/plot`.
pub fn report(cfg: &RunConfig, scenarios: Option<&Path>, out: &Path, plot_data: bool) -> Result<String> {
    let path = out.join(REPORT_FILE);
    let text = fs::read(&path).map_err(PipelineError::io(&path))?;
    let rows = report::read_report(text.as_slice()).map_err(|reason| PipelineError::Format { path: path.clone(), reason })?;
    let table = report::render_table(&rows);
    write_text(&out.join("report.txt"), &table)?;
    if plot_data {
        let plot = out.join("plot");
        let default_dir = out.join(SCENARIO_DIR);
        let set = store::read_store(scenarios.unwrap_or(&default_dir))?;
        let age = cfg.hedge.annuity_start_age;
        write_with(&plot.join(format!("m{age}_fan.csv")), |b| report::write_fan(b, &set, age))?;
        let lc = fit_reference(cfg, &load_panels(cfg)?)?;
        write_with(&plot.join("k_t.csv"), |b| report::write_index(b, &lc.params))?;
        write_with(&plot.join("a_x_b_x.csv"), |b| report::write_age_curves(b, &lc.params))?;
    }
    Ok(table)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &str, passed: bool, detail: impl Into<String>) -> Check {
    Check { name: name.into(), passed, detail: detail.into() }
}

fn scenario_checks(cfg: &RunConfig, set: &ScenarioSet) -> Result<Vec<Check>> {
    let mut lives_ok = true;
    let mut positive = true;
    let mut q_gap = 0.0f64;
    let l0 = set.config.book_size_l65;
    for s in &set.scenarios {
        lives_ok &= s.lives.first() == Some(&l0) && s.lives.windows(2).all(|w| w[1] <= w[0]);
        positive &= s.reference_m.as_slice().iter().chain(s.book_m.as_slice()).all(|m| *m > 0.0 && m.is_finite());
        positive &= s.book_q.as_slice().iter().all(|q| *q > 0.0 && *q < 1.0);
        for (m, q) in s.book_m.as_slice().iter().zip(s.book_q.as_slice()) {
            q_gap = q_gap.max((q - -(-m).exp_m1()).abs());
        }
    }
    let mut out = vec![
        check("lives_nonincreasing", lives_ok, format!("{} scenarios, l0 = {l0}", set.scenarios.len())),
        check("rates_positive_q_in_unit_interval", positive, ""),
        check("q_matches_m", q_gap <= 1e-12, format!("max |q - (1 - exp(-m))| = {q_gap:e}")),
    ];
    if set.scenarios.len() >= 2 {
        let forwards = load_forwards(cfg)?;
        let h = cfg.hedge_config();
        let s = swap_samples_with(set, &h, forwards.as_deref()).stage("validate")?;
        let rows = report_rows_with(set, &h, forwards.as_deref()).stage("validate")?;
        for r in &rows {
            let l: Vec<f64> = set
                .lives_for(r.book_size)
                .stage("validate")?
                .iter()
                .map(|p| longbasis_core::hedge::liability_pv(p, &h))
                .collect::<longbasis_core::Result<_>>()
                .stage("validate")?;
            let c = longbasis_core::stats::covariance(&l, &s);
            let corr2 = c * c / (longbasis_core::stats::variance(&l) * longbasis_core::stats::variance(&s));
            let gap = (r.rr - corr2).abs();
            out.push(check(&format!("rr_equals_corr2_l{}", r.book_size), gap <= 1e-10, format!("|rr - corr^2| = {gap:e}")));
        }
        if forwards.is_none() {
            let (m, se) = (mean(&s), standard_error(&s));
            out.push(check("swap_mean_zero", m.abs() <= 3.0 * se + 1e-15, format!("mean {m:e}, se {se:e}")));
        }
    }
    Ok(out)
}

/// Invariant suite on the configured data set and, when given, a scenario
/// store. Writes `validation.json`; any failed check is an error.
pub fn validate(cfg: &RunConfig, scenarios: Option<&Path>, out: &Path) -> Result<Vec<Check>> {
    let panels = load_panels(cfg)?;
    let mut checks = Vec::new();
    for (name, p) in [("reference", &panels.reference), ("book", &panels.book)] {
        let zeros = p.central_rates().1.len();
        checks.push(check(&format!("{name}_panel"), true, format!("{} cells, {zeros} zero-death cells", p.n_cells())));
    }
    let lc = fit_reference(cfg, &panels)?;
    let (rb, rk) = lc.params.constraint_residuals();
    checks.push(check("lc_constraints", rb.abs() <= 1e-10 && rk.abs() <= 1e-8, format!("sum b - 1 = {rb:e}, sum k = {rk:e}")));
    let monotone = lc.loglik_trace.windows(2).all(|w| w[1] >= w[0] - 1e-8 * w[0].abs());
    checks.push(check("lc_loglik_nondecreasing", monotone, format!("{} iterations", lc.iterations)));
    for f in fit_book_families(cfg, &panels, &lc)? {
        let worst = f.constraint_residuals().iter().fold(0.0f64, |a, r| a.max(r.abs()));
        let bic = longbasis_core::book::bic(f.loglik, f.n_params, f.n_obs);
        checks.push(check(
            &format!("book_{}_fit", f.family.name()),
            worst <= 1e-8 && (bic - f.bic).abs() <= 1e-9 * bic.abs(),
            format!("constraint residual {worst:e}, bic {}", f.bic),
        ));
    }
    if let Some(dir) = scenarios {
        checks.extend(scenario_checks(cfg, &store::read_store(dir)?)?);
    }
    write_json(&out.join("validation.json"), &json!({ "checks": checks }))?;
    let failed: Vec<&str> = checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
    if failed.is_empty() {
        Ok(checks)
    } else {
        Err(PipelineError::Validation(failed.join(", ")))
    }
}

/// Default output directory: `--out`, else `output.dir` relative to the config.
pub fn output_dir(cfg: &RunConfig, flag: Option<&Path>) -> PathBuf {
    flag.map(Path::to_path_buf).unwrap_or_else(|| cfg.path(&cfg.output.dir))
}
