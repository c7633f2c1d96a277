//! Error type shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Resonator geometry outside the stability region (or marginally
    /// stable without a defined mode).
    #[error("unstable resonator: g1*g2 = {g1g2} outside (0, 1)")]
    UnstableResonator { g1g2: f64 },

    /// An energy argument exceeds the current trap depth.
    #[error("energy {energy_uk} µK exceeds trap depth {depth_uk} µK")]
    EnergyExceedsDepth { energy_uk: f64, depth_uk: f64 },

    /// Argument outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A duration is not an integer number of bins.
    #[error("window of {window_us} µs is not an integer number of {bin_us} µs bins")]
    MisalignedWindow { window_us: f64, bin_us: f64 },

    /// Iterative procedure exhausted its iteration budget.
    #[error("{what} did not converge within {iterations} iterations")]
    NonConvergence { what: String, iterations: usize },

    /// Input data cannot constrain the requested fit.
    #[error("degenerate data: {0}")]
    DegenerateData(String),

    /// Empty input where at least one sample is required.
    #[error("empty input: {0}")]
    EmptyInput(String),

    /// Root bracketing failed; indicates broken monotonicity upstream.
    #[error("bracketing failure: {0}")]
    Bracketing(String),

    /// Escape time outside the ramp window.
    #[error("escape time {t_ms} ms outside ramp of {ramp_ms} ms")]
    OutOfRamp { t_ms: f64, ramp_ms: f64 },

    /// Samples outside the admissible range of a fit.
    #[error("out-of-range samples: {0}")]
    OutOfRange(String),

    /// No interval passed the selection criterion.
    #[error("no intervals passed selection (threshold {threshold})")]
    NoSelectedIntervals { threshold: f64 },

    /// No toggle phase passed the selection criterion.
    #[error("no toggle phases passed selection (threshold {threshold})")]
    NoSelectedPhases { threshold: f64 },

    /// Configuration value violates an invariant.
    #[error("invalid config: {key}: {message}")]
    InvalidConfig { key: String, message: String },

    /// Aggregation over records produced under different configurations.
    #[error("mixed configurations: expected hash {expected}, found {found}")]
    MixedConfig { expected: String, found: String },

    /// Calibration target unreachable within the search range.
    #[error("calibration target not bracketed: {0}")]
    CalibrationRange(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}
