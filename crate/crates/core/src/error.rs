use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("numerical range error: {0}")]
    Range(String),

    #[error("construction failed: {0}")]
    Construction(String),

    #[error("NaN encountered in {0}")]
    NotANumber(String),

    #[error("no feasible input at state {0:?}: every candidate has infinite cost")]
    NoFeasibleInput(Vec<f64>),

    #[error("enumeration budget exceeded: {needed} sequences requested, budget is {budget}")]
    Budget { needed: f64, budget: usize },

    #[error("state {state:?} projects to elevation {elevation:.6} outside the gridded hemisphere")]
    UncoveredAngle { state: Vec<f64>, elevation: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Dimension {
            context,
            expected,
            got,
        })
    }
}
