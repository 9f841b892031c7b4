use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("index {index} out of range (valid: 0..={max})")]
    IndexOutOfRange { index: usize, max: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite value at node {node}, component {component}, particle {particle}")]
    NonFinite {
        node: usize,
        component: usize,
        particle: usize,
    },

    #[error("picard iteration diverged: {0}")]
    Diverged(String),

    #[error("unknown fixture `{0}`")]
    UnknownFixture(String),

    #[error("fixture `{fixture}` carries no {certificate} certificate")]
    MissingCertificate {
        fixture: String,
        certificate: &'static str,
    },

    #[error("resource budget exceeded: {requested} > {budget}")]
    BudgetExceeded { requested: u64, budget: u64 },

    #[error("refused: {0}")]
    Refused(String),

    #[error("root bracket failure: {0}")]
    Bracket(String),

    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
