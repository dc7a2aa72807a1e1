//! Run configuration: one TOML file per run. Paths are relative to the file.
//! Only `scenario.master_seed` is mandatory; every other default is written
//! back out by [`RunConfig::resolved`] so a run's numbers never depend on an
//! unrecorded value.

use std::path::{Path, PathBuf};

use longbasis_core::alt::{Jump2Source, ZhouFitOptions};
use longbasis_core::book::{BookFamily, BookFitOptions};
use longbasis_core::hedge::HedgeConfig;
use longbasis_core::jump::{CalibrationOptions, JumpPersistence};
use longbasis_core::lc::{LcMethod, LcOptions};
use longbasis_core::model::{ModelChoice, ModelOptions};
use longbasis_core::panel::DEFAULT_FLOOR_RATE;
use longbasis_core::renewal::RenewalFamily;
use longbasis_core::scenario::ScenarioConfig;
use longbasis_core::Span;
use serde::{Deserialize, Serialize};

use crate::error::{PipelineError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataSection,
    #[serde(default)]
    pub lc: LcSection,
    #[serde(default)]
    pub renewal: RenewalSection,
    #[serde(default)]
    pub quadrature: QuadratureSection,
    #[serde(default)]
    pub optimizer: OptimizerSection,
    #[serde(default)]
    pub book: BookSection,
    #[serde(default)]
    pub zhou: ZhouSection,
    #[serde(default)]
    pub compare: CompareSection,
    pub scenario: ScenarioSection,
    #[serde(default)]
    pub hedge: HedgeSection,
    #[serde(default)]
    pub output: OutputSection,
    /// Directory the relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub reference: PathBuf,
    /// May be the same file as `reference`; rows are split by `population`.
    pub book: PathBuf,
    pub ages: Option<[i32; 2]>,
    pub book_ages: Option<[i32; 2]>,
    pub reference_years: Option<[i32; 2]>,
    pub book_years: Option<[i32; 2]>,
    #[serde(default = "default_floor")]
    pub floor_rate: f64,
}

fn default_floor() -> f64 {
    DEFAULT_FLOOR_RATE
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LcSection {
    pub method: LcMethod,
    pub rel_tol: f64,
    pub max_iterations: usize,
}

impl Default for LcSection {
    fn default() -> Self {
        let d = LcOptions::default();
        LcSection { method: d.method, rel_tol: d.rel_tol, max_iterations: d.max_iterations }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenewalSection {
    pub family: RenewalFamily,
    pub n_max: usize,
    pub tail_tol: f64,
}

impl Default for RenewalSection {
    fn default() -> Self {
        let d = CalibrationOptions::default();
        RenewalSection { family: d.family, n_max: d.counts.n_max, tail_tol: d.counts.tail_tol }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuadratureSection {
    pub tol: f64,
}

impl Default for QuadratureSection {
    fn default() -> Self {
        QuadratureSection { tol: CalibrationOptions::default().counts.quad_tol }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerSection {
    pub starts: usize,
    pub max_evaluations: usize,
    /// Budget of the warm jump recalibration inside each bootstrap scenario.
    pub refit_evaluations: usize,
}

impl Default for OptimizerSection {
    fn default() -> Self {
        let d = CalibrationOptions::default();
        OptimizerSection {
            starts: d.starts,
            max_evaluations: d.nelder_mead.max_evaluations,
            refit_evaluations: ModelOptions::default().refit_evaluations,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BookSection {
    /// Families fitted and ranked by `fit-book`.
    pub families: Vec<BookFamily>,
    /// Family used by the renewal-jump model.
    pub family: BookFamily,
}

impl Default for BookSection {
    fn default() -> Self {
        BookSection { families: BookFamily::ALL.to_vec(), family: BookFamily::Cae }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ZhouSection {
    pub jump2_source: Jump2Source,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareSection {
    pub models: Vec<ModelChoice>,
}

impl Default for CompareSection {
    fn default() -> Self {
        CompareSection { models: ModelChoice::ALL.to_vec() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSection {
    #[serde(default = "default_model")]
    pub model: ModelChoice,
    #[serde(default = "default_n")]
    pub n_scenarios: usize,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    /// Required: there is no clock-derived seed.
    pub master_seed: u64,
    #[serde(default = "default_l65")]
    pub book_size_l65: u32,
    #[serde(default = "default_persistence")]
    pub jump_persistence: JumpPersistence,
    #[serde(default = "default_true")]
    pub resample: bool,
}

fn default_model() -> ModelChoice {
    ScenarioConfig::default().model_choice
}
fn default_n() -> usize {
    ScenarioConfig::default().n_scenarios
}
fn default_horizon() -> usize {
    ScenarioConfig::default().horizon
}
fn default_l65() -> u32 {
    ScenarioConfig::default().book_size_l65
}
fn default_persistence() -> JumpPersistence {
    ScenarioConfig::default().jump_persistence
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HedgeSection {
    pub interest_rate: f64,
    /// Years of payments valued; also the swap length.
    pub liability_horizon: usize,
    pub annuity_start_age: i32,
    pub payment: f64,
    pub book_sizes: Vec<u32>,
    /// CSV `t,forward` replacing the in-sample forward survivor curve.
    pub forwards: Option<PathBuf>,
}

impl Default for HedgeSection {
    fn default() -> Self {
        let d = HedgeConfig::default();
        HedgeSection {
            interest_rate: d.interest_rate,
            liability_horizon: d.horizon,
            annuity_start_age: d.annuity_start_age,
            payment: d.payment,
            book_sizes: d.book_sizes,
            forwards: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
    pub log_level: String,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { dir: PathBuf::from("out"), log_level: "info".into() }
    }
}

fn span(r: Option<[i32; 2]>, key: &str) -> Result<Option<Span>> {
    r.map(|[a, b]| Span::new(a, b).ok_or_else(|| PipelineError::Config(format!("{key}: empty range [{a}, {b}]")))).transpose()
}

impl RunConfig {
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        cfg.base_dir = base_dir.to_path_buf();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(PipelineError::io(path))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_toml(&text, &base)
    }

    pub fn validate(&self) -> Result<()> {
        self.age_filter()?;
        self.book_age_filter()?;
        self.reference_year_filter()?;
        self.book_year_filter()?;
        self.scenario_config().validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        self.hedge_config().validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        if self.book.families.is_empty() || self.compare.models.is_empty() {
            return Err(PipelineError::Config("book.families and compare.models must not be empty".into()));
        }
        if self.optimizer.starts == 0 || self.optimizer.refit_evaluations == 0 {
            return Err(PipelineError::Config("optimizer budgets must be positive".into()));
        }
        Ok(())
    }

    /// Resolve a path from the config against the config's directory.
    pub fn path(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn age_filter(&self) -> Result<Option<Span>> {
        span(self.data.ages, "data.ages")
    }

    pub fn book_age_filter(&self) -> Result<Option<Span>> {
        Ok(span(self.data.book_ages, "data.book_ages")?.or(self.age_filter()?))
    }

    pub fn reference_year_filter(&self) -> Result<Option<Span>> {
        span(self.data.reference_years, "data.reference_years")
    }

    pub fn book_year_filter(&self) -> Result<Option<Span>> {
        span(self.data.book_years, "data.book_years")
    }

    pub fn lc_options(&self) -> LcOptions {
        LcOptions {
            method: self.lc.method,
            rel_tol: self.lc.rel_tol,
            max_iterations: self.lc.max_iterations,
            floor_rate: Some(self.data.floor_rate),
            ..LcOptions::default()
        }
    }

    pub fn calibration_options(&self) -> CalibrationOptions {
        let mut c = CalibrationOptions { family: self.renewal.family, starts: self.optimizer.starts, ..Default::default() };
        c.counts.n_max = self.renewal.n_max;
        c.counts.tail_tol = self.renewal.tail_tol;
        c.counts.quad_tol = self.quadrature.tol;
        c.nelder_mead.max_evaluations = self.optimizer.max_evaluations;
        c.finalists = c.finalists.min(c.starts);
        c
    }

    pub fn model_options(&self) -> ModelOptions {
        let lc = self.lc_options();
        ModelOptions {
            lc,
            calibration: self.calibration_options(),
            refit_evaluations: self.optimizer.refit_evaluations,
            persistence: self.scenario.jump_persistence,
            book_family: self.book.family,
            book: BookFitOptions::default(),
            zhou: ZhouFitOptions { lc, ..ZhouFitOptions::default() },
            jump2_source: self.zhou.jump2_source,
        }
    }

    pub fn scenario_config(&self) -> ScenarioConfig {
        ScenarioConfig {
            n_scenarios: self.scenario.n_scenarios,
            horizon: self.scenario.horizon,
            master_seed: self.scenario.master_seed,
            book_size_l65: self.scenario.book_size_l65,
            model_choice: self.scenario.model,
            jump_persistence: self.scenario.jump_persistence,
            floor_rate: self.data.floor_rate,
            resample: self.scenario.resample,
            annuity_start_age: self.hedge.annuity_start_age,
        }
    }

    pub fn hedge_config(&self) -> HedgeConfig {
        HedgeConfig {
            interest_rate: self.hedge.interest_rate,
            horizon: self.hedge.liability_horizon,
            annuity_start_age: self.hedge.annuity_start_age,
            payment: self.hedge.payment,
            book_sizes: self.hedge.book_sizes.clone(),
        }
    }

    /// The configuration with every default filled in, as TOML.
    pub fn resolved(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[data]
reference = "panels.csv"
book = "panels.csv"

[scenario]
master_seed = 7
"#;

    #[test]
    fn minimal_config_takes_documented_defaults() {
        let cfg = RunConfig::from_toml(MINIMAL, Path::new("/cfg")).unwrap();
        assert_eq!(cfg.scenario_config(), ScenarioConfig { master_seed: 7, ..ScenarioConfig::default() });
        assert_eq!(cfg.hedge_config(), HedgeConfig::default());
        assert_eq!(cfg.path(&cfg.data.reference), PathBuf::from("/cfg/panels.csv"));
        let again = RunConfig::from_toml(&cfg.resolved(), Path::new("/cfg")).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn seed_is_required() {
        let text = MINIMAL.replace("master_seed = 7", "n_scenarios = 5");
        assert!(matches!(RunConfig::from_toml(&text, Path::new(".")), Err(PipelineError::Config(_))));
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        let typo = MINIMAL.replace("[scenario]", "[scenario]\nn_scenario = 5");
        assert!(RunConfig::from_toml(&typo, Path::new(".")).is_err());
        let zero = MINIMAL.replace("[scenario]", "[scenario]\nhorizon = 0");
        assert!(RunConfig::from_toml(&zero, Path::new(".")).is_err());
        let range = MINIMAL.replace("[data]", "[data]\nages = [89, 60]");
        assert!(RunConfig::from_toml(&range, Path::new(".")).is_err());
    }

    #[test]
    fn sections_map_to_options() {
        let text = format!(
            "{MINIMAL}\n[renewal]\nfamily = \"weibull\"\nn_max = 12\n[quadrature]\ntol = 1e-8\n[book]\nfamily = \"apc\"\n[zhou]\njump2_source = \"population1\"\n"
        );
        let cfg = RunConfig::from_toml(&text, Path::new(".")).unwrap();
        let m = cfg.model_options();
        assert_eq!(m.calibration.family, RenewalFamily::Weibull);
        assert_eq!(m.calibration.counts.n_max, 12);
        assert_eq!(m.calibration.counts.quad_tol, 1e-8);
        assert_eq!(m.book_family, BookFamily::Apc);
        assert_eq!(m.jump2_source, Jump2Source::Population1);
    }
}
