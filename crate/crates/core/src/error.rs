use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Which half of a two-part model an error came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Part {
    Presence,
    Strength,
}

impl std::fmt::Display for Part {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Part::Presence => f.write_str("presence"),
            Part::Strength => f.write_str("strength"),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("matrix is not square: {rows} rows, row {row} has {cols} fields")]
    NonSquare { rows: usize, row: usize, cols: usize },

    #[error("matrix asymmetry {diff:e} at ({row},{col}) exceeds tolerance")]
    Asymmetric { row: usize, col: usize, diff: f64 },

    #[error("weight ≥ 1 at ({row},{col})")]
    WeightTooLarge { row: usize, col: usize },

    #[error("invalid weight {value} at ({row},{col})")]
    InvalidWeight { row: usize, col: usize, value: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("missing covariates for subject {0}")]
    MissingCovariates(String),

    #[error("unknown term `{0}`")]
    UnknownTerm(String),

    #[error("invalid model specification: {0}")]
    InvalidSpec(String),

    #[error("fixed-effect design is rank deficient: column `{column}` is aliased with earlier columns")]
    RankDeficient { column: String },

    #[error("optimizer did not converge after {iterations} iterations (last objective {last_objective})")]
    NonConvergence {
        iterations: usize,
        last_objective: f64,
        trace: Vec<f64>,
    },

    #[error("quasi-separation: {0}")]
    Separation(String),

    #[error("presence response constant")]
    ConstantResponse,

    #[error("no edges")]
    NoEdges,

    #[error("all node pairs are disconnected")]
    Disconnected,

    #[error("singular contrast covariance; redundant contrast rows {rows:?}")]
    SingularContrast { rows: Vec<usize> },

    #[error("empty arm: {0}")]
    EmptyArm(String),

    #[error("infeasible truth: {0}")]
    InfeasibleTruth(String),

    #[error("{part} model: {source}")]
    InPart {
        part: Part,
        #[source]
        source: Box<Error>,
    },

    #[error("serialization error: {0}")]
    Serde(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn in_part(self, part: Part) -> Self {
        Error::InPart {
            part,
            source: Box::new(self),
        }
    }

    /// True for optimizer / estimation failures as opposed to bad inputs.
    pub fn is_convergence(&self) -> bool {
        match self {
            Error::NonConvergence { .. } | Error::Separation(_) => true,
            Error::InPart { source, .. } => source.is_convergence(),
            _ => false,
        }
    }
}
