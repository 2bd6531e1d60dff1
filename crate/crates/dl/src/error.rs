pub type Result<T, E = DlError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum DlError {
    #[error("empty dataset")]
    EmptyDataset,

    #[error("empty mask ({0})")]
    EmptyMask(String),

    #[error("patch {patch} larger than slice {nx}x{ny}")]
    PatchTooLarge { patch: usize, nx: usize, ny: usize },

    #[error("slice {nx}x{ny} is smaller than the 8 px minimum")]
    VolumeTooSmall { nx: usize, ny: usize },

    #[error("length mismatch: {got} values for {expected} ROI voxels")]
    LengthMismatch { expected: usize, got: usize },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("training log: {0}")]
    Log(#[from] csv::Error),

    #[error(transparent)]
    Nn(#[from] rhomap_nn::NnError),

    #[error(transparent)]
    Core(#[from] rhomap_core::Error),
}
