use crate::dyadic::DyadicInterval;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("singularity: evaluation point {0} collides with an atom")]
    Singularity(f64),
    #[error("Haar function undefined on level {} index {}: a child carries no mass", .0.level, .0.index)]
    UndefinedHaar(DyadicInterval),
    #[error("precondition violated: {0}")]
    Precondition(String),
}

pub type Result<T> = std::result::Result<T, Error>;
