use std::path::PathBuf;

use laser_core::LaserError;
use laser_toyvlm::ToyError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Engine(#[from] LaserError),
    #[error(transparent)]
    Toy(#[from] ToyError),
    #[error("cannot write {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("invalid benchmark configuration: {0}")]
    Config(String),
}
