use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid camera rig: {0}")]
    InvalidRig(String),

    #[error("invalid reflectance model: {0}")]
    InvalidModel(String),

    #[error("invalid surface: {0}")]
    InvalidSurface(String),

    #[error("point ({}, {}) lies outside the image domain", .0[0], .0[1])]
    OutsideDomain([f64; 2]),

    /// The effective intensity `I - k_A I_A` must be strictly positive.
    #[error("nonpositive effective intensity {value:e} at ({}, {})", .x[0], .x[1])]
    NonpositiveIntensity { value: f64, x: [f64; 2] },

    #[error("boundary band intensity {min:e} at node ({}, {}) is below the floor {floor:e}", .node.0, .node.1)]
    BoundaryBand {
        min: f64,
        floor: f64,
        node: (usize, usize),
    },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    /// Model / boundary condition combinations without a uniqueness guarantee.
    #[error("ill-posed problem: {0}")]
    IllPosed(String),

    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),

    #[error("solver produced a non-finite value at iteration {iteration}")]
    Diverged { iteration: usize },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::IllPosed(_) => 2,
            _ => 1,
        }
    }
}
