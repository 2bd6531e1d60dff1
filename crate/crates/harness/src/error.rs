pub type Result<T, E = HarnessError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),

    #[error("{0}")]
    Usage(String),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Dl(#[from] rhomap_dl::DlError),

    #[error(transparent)]
    Nn(#[from] rhomap_nn::NnError),

    #[error(transparent)]
    Core(#[from] rhomap_core::Error),
}

impl HarnessError {
    pub fn config(msg: impl Into<String>) -> Self {
        HarnessError::Config(msg.into())
    }
}
