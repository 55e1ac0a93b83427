use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid background: {0}")]
    InvalidBackground(String),

    #[error("no collision reachable from x = {x0} with velocity {v} (accumulated rate {reached} < {budget})")]
    NoCollision {
        x0: f64,
        v: f64,
        reached: f64,
        budget: f64,
    },

    #[error("invalid level set: {0}")]
    InvalidLevelSet(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
