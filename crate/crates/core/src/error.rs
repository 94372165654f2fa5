use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument or configuration value outside its allowed domain.
    #[error("parameter out of domain: {0}")]
    ParameterDomain(String),

    #[error("ill-conditioned transfer-matrix product at {wavelength_nm} nm (seed {seed}): {detail}")]
    Conditioning {
        wavelength_nm: f64,
        seed: u64,
        detail: String,
    },

    #[error("degenerate outgoing solutions at {wavelength_nm} nm: Wronskian {wronskian:e}")]
    DegenerateSolution { wavelength_nm: f64, wronskian: f64 },

    #[error("outside calibration range: {0}")]
    CalibrationRange(String),

    #[error("under-resolved scan: {0}")]
    UnderResolved(String),

    #[error("resolution-limited peak: apparent width {apparent_nm} nm vs instrument {irf_nm} nm")]
    ResolutionLimited { apparent_nm: f64, irf_nm: f64 },

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("model mismatch: {0}")]
    ModelMismatch(String),

    #[error("numerical integration failed: {0}")]
    Integration(String),

    #[error("{file}:{line}: {detail}")]
    Parse {
        file: String,
        line: usize,
        detail: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Coarse classification used by front ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Data,
    Numerical,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Conditioning { .. }
            | Error::DegenerateSolution { .. }
            | Error::Integration(_)
            | Error::ModelMismatch(_)
            | Error::CalibrationRange(_)
            | Error::UnderResolved(_) => ErrorClass::Numerical,
            _ => ErrorClass::Data,
        }
    }

    /// Short stable identifier, used in machine-readable error output.
    pub fn code(&self) -> &'static str {
        match self {
            Error::ParameterDomain(_) => "parameter_domain",
            Error::Conditioning { .. } => "conditioning",
            Error::DegenerateSolution { .. } => "degenerate_solution",
            Error::CalibrationRange(_) => "calibration_range",
            Error::UnderResolved(_) => "under_resolved",
            Error::ResolutionLimited { .. } => "resolution_limited",
            Error::EmptyDataset(_) => "empty_dataset",
            Error::ModelMismatch(_) => "model_mismatch",
            Error::Integration(_) => "integration",
            Error::Parse { .. } => "parse",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::ParameterDomain(msg.into())
}
