use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),

    #[error("singular design matrix: {0}")]
    SingularDesign(String),

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("basis system is rank deficient (rank {rank} of {cols}); solution is not unique")]
    NonUniqueSolution { rank: usize, cols: usize },

    #[error("degenerate rotation: |(h1, h2)| = {0:e}")]
    DegenerateRotation(f64),

    #[error("unsupported derivative order {0} (at most 2)")]
    UnsupportedOrder(usize),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("parse error in {file}: {msg}")]
    Parse { file: String, msg: String },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("{failed} of {total} trials failed (more than 1%)")]
    TooManyFailures { failed: usize, total: usize },

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn at(stage: &'static str) -> impl FnOnce(Error) -> Error {
        move |source| Error::Stage {
            stage,
            source: Box::new(source),
        }
    }
}
