use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid panel: {0}")]
    InvalidPanel(String),
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("unit {unit} has degenerate residual scale (mean square {mean_square:e})")]
    DegenerateUnitScale { unit: usize, mean_square: f64 },
    #[error("requested {m} components but the data support fewer (eigenvalue ratio {ratio:e})")]
    RankDeficient { m: usize, ratio: f64 },
    #[error("bias correction is degenerate: 1 - theta = {one_minus_theta:e}")]
    DegenerateCorrection { one_minus_theta: f64 },
    #[error("X'MX is singular for unit {0}")]
    SingularUnitDesign(usize),
    #[error("D'D is singular")]
    SingularCommonDesign,
    #[error("regressor cross-product matrix is singular")]
    SingularDesign,
    #[error("I - rho W is numerically singular")]
    SingularSpatialSystem,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("unbalanced panel: {0}")]
    UnbalancedPanel(String),
    #[error("duplicate cell: {0}")]
    DuplicateCell(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    /// True for failures caused by the numbers rather than the input layout.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::DegenerateUnitScale { .. }
                | Error::RankDeficient { .. }
                | Error::DegenerateCorrection { .. }
                | Error::SingularUnitDesign(_)
                | Error::SingularCommonDesign
                | Error::SingularDesign
                | Error::SingularSpatialSystem
        )
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
