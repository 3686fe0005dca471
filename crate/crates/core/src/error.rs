use crate::autodiff::AutodiffError;
use crate::worlds::WorldError;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error("model: {0}")]
    Model(String),
    #[error("non-finite values: {0}")]
    NonFinite(String),
    #[error("probe: {0}")]
    Probe(String),
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
