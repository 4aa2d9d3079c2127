use studpar_core::distill::DistillError;
use studpar_core::nn::NnError;
use studpar_core::perf::PerfError;
use studpar_core::sim::SimError;

pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_NUMERIC: u8 = 3;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad input from the user: config, paths, schemas, infeasible setups.
    #[error("{0}")]
    Config(String),
    /// Training produced a non-finite value.
    #[error("numeric failure: {0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Numeric(_) => EXIT_NUMERIC,
        }
    }

    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }
}

impl From<DistillError> for CliError {
    fn from(e: DistillError) -> Self {
        if e.is_numeric() {
            CliError::Numeric(e.to_string())
        } else {
            CliError::Config(e.to_string())
        }
    }
}

impl From<NnError> for CliError {
    fn from(e: NnError) -> Self {
        DistillError::from(e).into()
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<PerfError> for CliError {
    fn from(e: PerfError) -> Self {
        CliError::Config(e.to_string())
    }
}
