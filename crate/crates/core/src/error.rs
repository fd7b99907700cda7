use std::fmt;

use crate::metric::ZPoint;

pub type Result<T> = std::result::Result<T, Error>;

/// A pair of samples that breaks the (A2) inequality for some hypothesis.
#[derive(Debug, Clone)]
pub struct A2Witness {
    pub hypothesis: String,
    pub z: ZPoint,
    pub zbar: Option<ZPoint>,
    pub observed: f64,
    pub ell_h: f64,
}

impl fmt::Display for A2Witness {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.zbar {
            Some(zbar) => write!(
                f,
                "hypothesis {} has Lipschitz ratio {} > ell_H = {} on z = {:?}, zbar = {:?}",
                self.hypothesis, self.observed, self.ell_h, self.z, zbar
            ),
            None => write!(
                f,
                "hypothesis {} has loss {} > ell_H = {} at z = {:?}",
                self.hypothesis, self.observed, self.ell_h, self.z
            ),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("size limit exceeded: {0}")]
    Size(String),
    #[error("assumption violated: {0}")]
    Assumption(String),
    #[error("assumption (A2) violated: {0}")]
    A2Violation(Box<A2Witness>),
    #[error("generator contract violated: {0}")]
    GeneratorContract(String),
    #[error("invalid probe: {0}")]
    InvalidProbe(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    /// True for the failures that mean (A1) or (A2) does not hold.
    pub fn is_assumption_violation(&self) -> bool {
        matches!(self, Error::Assumption(_) | Error::A2Violation(_))
    }
}
