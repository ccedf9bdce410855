//! Training harness: configuration, the macura/mbpo/sac training loops,
//! evaluation, grid and bound diagnostics, and artifact export.

pub mod config;
pub mod export;
pub mod log;
pub mod run;
pub mod study;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("{0}")]
    Core(macura_core::Error),

    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),

    #[error("missing run artifact: {0}")]
    MissingRun(String),
}

impl From<macura_core::Error> for HarnessError {
    fn from(e: macura_core::Error) -> Self {
        use macura_core::Error as E;
        match e {
            E::NonFinite { .. } | E::DivergedLoss { .. } => HarnessError::Numerical(e.to_string()),
            other => HarnessError::Core(other),
        }
    }
}

impl HarnessError {
    /// Process exit code: 2 for config errors, 3 for numerical failures,
    /// 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            HarnessError::Numerical(_) => 3,
            _ => 1,
        }
    }
}
