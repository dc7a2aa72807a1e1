use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("missing cell at age {age}, year {year}")]
    MissingCell { age: i32, year: i32 },
    #[error("non-positive exposure at age {age}, year {year}")]
    NonPositiveExposure { age: i32, year: i32 },
    #[error("invalid death count at age {age}, year {year}")]
    InvalidDeaths { age: i32, year: i32 },
    #[error("malformed row at line {line}: {reason}")]
    MalformedRow { line: usize, reason: String },
    #[error("zero central rate at age {age}, year {year}")]
    ZeroRateCell { age: i32, year: i32 },
    #[error("domain error: {0}")]
    DomainError(String),
    #[error("age ranges do not intersect")]
    EmptyAgeIntersection,
    #[error("year ranges do not overlap")]
    EmptyYearOverlap,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("{stage} did not converge after {iterations} iterations")]
    NonConvergence { stage: &'static str, iterations: usize },
    #[error("degenerate fit: {0}")]
    DegenerateFit(String),
    #[error("sum of b is zero; constraints cannot be applied")]
    DegenerateB,
    #[error("constant series has no autoregressive structure")]
    DegenerateSeries,
    #[error("quadrature failed to reach tolerance {tolerance:e} (estimated error {estimate:e})")]
    QuadratureFailure { tolerance: f64, estimate: f64 },
    #[error("empty list")]
    EmptyList,
    #[error("{failed} scenario refits failed, more than the {allowed} allowed")]
    ScenarioRefitFailure { failed: usize, allowed: usize },
    #[error("swap PV samples have zero variance")]
    ZeroSwapVariance,
    #[error("liability PV samples have zero variance")]
    ZeroUnhedgedVariance,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}
