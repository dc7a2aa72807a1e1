use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use longbasis::panel_csv::load_panel;
use longbasis::params::{lc_from_table, ParamTable};
use longbasis_core::lc::{fit_lc, LcOptions};
use longbasis_core::Population;
use serde_json::Value;

fn panels() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/synthetic/panels.csv").canonicalize().unwrap()
}

/// A fast configuration on the bundled panel: the cohort model and few scenarios.
fn write_config(dir: &Path, extra: &str) -> PathBuf {
    let text = format!(
        r#"
[data]
reference = "{p}"
book = "{p}"
ages = [60, 89]
book_years = [1971, 2010]

[scenario]
model = "lc_cohorts"
n_scenarios = 24
master_seed = 5
{extra}
"#,
        p = panels().display()
    );
    let path = dir.join("run.toml");
    fs::write(&path, text).unwrap();
    path
}

fn longbasis(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_longbasis")).args(args).env("LONGBASIS_LOG", "error").output().unwrap()
}

fn ok(out: Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn error_json(out: &Output) -> Value {
    assert!(!out.status.success());
    serde_json::from_slice(&out.stderr).unwrap()
}

#[test]
fn help_lists_every_subcommand() {
    let help = ok(longbasis(&["--help"]));
    for cmd in ["ingest", "fit", "calibrate-jumps", "fit-book", "compare", "simulate", "hedge", "report", "validate"] {
        assert!(help.contains(cmd), "{cmd} missing from help");
    }
    for flag in ["--config", "--seed", "--threads", "--out", "--floor-rate", "--no-resample"] {
        assert!(help.contains(flag), "{flag} missing from help");
    }
}

#[test]
fn errors_are_json_on_stderr() {
    let dir = tempfile::tempdir().unwrap();
    let e = error_json(&longbasis(&["fit"]));
    assert_eq!(e["error"], "ConfigError");

    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[data]\nreference = \"x.csv\"\nbook = \"x.csv\"\n[scenario]\nmaster_seed = 1\nbogus = 2\n").unwrap();
    assert_eq!(error_json(&longbasis(&["--config", cfg.to_str().unwrap(), "fit"]))["error"], "ConfigError");

    fs::write(dir.path().join("x.csv"), "population,age,year,deaths,exposure\nreference,65,2000,1,0\n").unwrap();
    fs::write(&cfg, "[data]\nreference = \"x.csv\"\nbook = \"x.csv\"\n[scenario]\nmaster_seed = 1\n").unwrap();
    let e = error_json(&longbasis(&["--config", cfg.to_str().unwrap(), "ingest"]));
    assert_eq!(e["error"], "FormatError");
    assert!(e["message"].as_str().unwrap().contains("exposure"));
}

#[test]
fn fit_exports_the_library_fit() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let out = dir.path().join("out");
    ok(longbasis(&["--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "fit"]));
    let table = ParamTable::read(fs::File::open(out.join("reference_lc.csv")).unwrap()).unwrap();
    let exported = lc_from_table(&table).unwrap();
    let panel =
        load_panel(fs::File::open(panels()).unwrap(), Population::Reference, longbasis_core::Span::new(60, 89), None).unwrap();
    let direct = fit_lc(&panel, &LcOptions::default()).unwrap().params;
    assert_eq!((exported.a[0], exported.b[0]), (direct.a[0], direct.b[0]));
    assert_eq!(exported, direct);
}

#[test]
fn simulate_hedge_report_validate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let cfg = cfg.to_str().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(longbasis(&["--config", cfg, "--out", a.to_str().unwrap(), "simulate"]));
    ok(longbasis(&["--config", cfg, "--out", b.to_str().unwrap(), "--threads", "4", "simulate"]));
    for f in ["manifest.json", "scenarios.bin", "config.resolved.toml"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f} differs");
    }
    let manifest: Value = serde_json::from_slice(&fs::read(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["n_scenarios"], 24);
    assert_eq!(manifest["config"]["master_seed"], 5);

    let seeded = dir.path().join("seeded");
    ok(longbasis(&["--config", cfg, "--out", seeded.to_str().unwrap(), "--seed", "6", "simulate"]));
    assert_ne!(fs::read(a.join("scenarios.bin")).unwrap(), fs::read(seeded.join("scenarios.bin")).unwrap());

    let rep = dir.path().join("rep");
    let table = ok(longbasis(&["--config", cfg, "--out", rep.to_str().unwrap(), "hedge", "--scenarios", a.to_str().unwrap()]));
    assert!(table.contains("lc_cohorts"));
    let csv = fs::read_to_string(rep.join("report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    assert!(csv.starts_with("model,book_size,w,rr,var_unhedged,var_hedged,n_scenarios,seed\n"));

    ok(longbasis(&[
        "--config",
        cfg,
        "--out",
        rep.to_str().unwrap(),
        "report",
        "--scenarios",
        a.to_str().unwrap(),
        "--emit-plot-data",
    ]));
    for f in ["plot/m65_fan.csv", "plot/k_t.csv", "plot/a_x_b_x.csv", "report.txt"] {
        assert!(rep.join(f).exists(), "{f} missing");
    }
    let fan = fs::read_to_string(rep.join("plot/m65_fan.csv")).unwrap();
    assert_eq!(fan.lines().count(), 1 + 2 * 10);

    let v = dir.path().join("v");
    let text = ok(longbasis(&["--config", cfg, "--out", v.to_str().unwrap(), "validate", "--scenarios", a.to_str().unwrap()]));
    assert!(text.contains("rr_equals_corr2_l10000"));
    assert!(v.join("validation.json").exists());
}

#[test]
fn ingest_and_book_fits() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let out = dir.path().join("out");
    ok(longbasis(&["--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "ingest"]));
    let summary: Value = serde_json::from_slice(&fs::read(out.join("ingest.json")).unwrap()).unwrap();
    assert_eq!(summary["reference"]["cells"], 30 * 56);
    assert_eq!(summary["book"]["years"], serde_json::json!([1971, 2010]));

    ok(longbasis(&["--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "fit-book"]));
    let bic = fs::read_to_string(out.join("bic.csv")).unwrap();
    assert_eq!(bic.lines().count(), 5);
    let selected: Vec<&str> = bic.lines().filter(|l| l.ends_with(",true")).collect();
    assert_eq!(selected.len(), 1);
    for f in ["relLC", "cae", "apc", "cbd"] {
        let t = ParamTable::read(fs::File::open(out.join(format!("book_{f}.csv"))).unwrap()).unwrap();
        let back = longbasis::params::book_from_table(&t).unwrap();
        assert_eq!(back.family.name(), f);
    }
}
