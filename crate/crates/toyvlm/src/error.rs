use laser_core::vat::DecodeError;
use laser_core::LaserError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ToyError {
    #[error("invalid toy model configuration: {0}")]
    Config(String),
    #[error("image {width}x{height} is smaller than one {patch_px}px patch")]
    ImageTooSmall { width: u32, height: u32, patch_px: u32 },
    #[error("sequence of {len} tokens exceeds model capacity {limit}")]
    Capacity { len: usize, limit: usize },
    #[error("token id {0} outside the vocabulary")]
    Token(usize),
    #[error("unknown scripted scenario '{0}'")]
    UnknownScenario(String),
    #[error(transparent)]
    Engine(#[from] LaserError),
    #[error(transparent)]
    Decode(#[from] DecodeError),
}
