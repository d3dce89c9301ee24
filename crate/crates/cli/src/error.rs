use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("I/O error: {0}")]
    Io(String),
    #[error("compatibility violation: {0}")]
    Compatibility(String),
    #[error("verification failed: {0}")]
    Verification(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Io(_) => 2,
            CliError::Compatibility(_) => 3,
            CliError::Verification(_) => 4,
            CliError::Numerical(_) => 5,
        }
    }
}

impl From<layerpot::Error> for CliError {
    fn from(e: layerpot::Error) -> Self {
        use layerpot::Error as E;
        match e {
            E::Compatibility { .. } => CliError::Compatibility(e.to_string()),
            E::Pole | E::EvaluationPoint(_) | E::NumericalRank(_) | E::Singular(_) | E::Accuracy(_) => {
                CliError::Numerical(e.to_string())
            }
            E::Geometry(_) | E::UnsupportedGeometry(_) | E::Parse { .. } | E::Spec(_) | E::Validation(_) | E::Dimension(_) => {
                CliError::Config(e.to_string())
            }
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
