use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("empty tensor")]
    EmptyTensor,
    #[error("non-finite value produced in {0}")]
    NonFinite(&'static str),
    #[error("region map does not cover weights: {0}")]
    UncoveredRegion(String),
    #[error("K*P = {0} is not an integer in per-filter mode")]
    NonIntegerSplit(f64),
    #[error("packing requires an inter-filter signed-binary layer, got {0}")]
    Unpackable(&'static str),
    #[error("tile [{lo}, {hi}) crosses region boundary (region size {region})")]
    TileCrossesRegion { lo: usize, hi: usize, region: usize },
    #[error("corrupt file: {0}")]
    CorruptFile(String),
    #[error("missing dataset: {0}")]
    MissingDataset(String),
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
