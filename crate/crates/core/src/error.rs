use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("inconsistent configuration: {0}")]
    Config(String),

    #[error("outside the domain of validity: {0}")]
    Domain(String),

    #[error("integration diverged at t = {time} (|a| = {magnitude:e}); reduce dt")]
    Diverged { time: f64, magnitude: f64 },

    #[error("trajectory {index} failed: {source}")]
    Trajectory {
        index: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("singular linear system: {0}")]
    Singular(String),

    #[error("Fock cutoff {cutoff} too small: top-level population {population:e} at t = {time}")]
    CutoffTooSmall {
        cutoff: usize,
        population: f64,
        time: f64,
    },

    #[error("sample grids differ: {0}")]
    GridMismatch(String),

    #[error("spectral window T = {window} is shorter than {required}; stationarity not established")]
    WindowTooShort { window: f64, required: f64 },

    #[error("site index {index} out of range for {len} sites")]
    SiteOutOfRange { index: usize, len: usize },
}

impl Error {
    /// True for failures of the numerics (divergence, Fock cutoff) as opposed
    /// to bad input.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::Diverged { .. } | Error::CutoffTooSmall { .. } | Error::Singular(_) => true,
            Error::Trajectory { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}
