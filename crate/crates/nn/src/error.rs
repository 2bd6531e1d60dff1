pub type Result<T, E = NnError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("layer {layer}: shape mismatch: {msg}")]
    Shape { layer: usize, msg: String },

    #[error("tensor shape {shape:?} does not match data length {len}")]
    TensorLength { shape: [usize; 4], len: usize },

    #[error("backward called without a preceding train-mode forward")]
    BackwardWithoutForward,

    #[error("empty mask")]
    EmptyMask,

    #[error("invalid network: {0}")]
    InvalidSpec(String),

    #[error("optimizer state does not match parameters: {0}")]
    OptimizerMismatch(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Core(#[from] rhomap_core::Error),
}

impl NnError {
    pub(crate) fn shape(layer: usize, msg: impl Into<String>) -> Self {
        NnError::Shape { layer, msg: msg.into() }
    }
}
