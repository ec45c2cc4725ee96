use thiserror::Error;

/// Errors produced by model construction, solvers, and file I/O.
#[derive(Debug, Error)]
pub enum Error {
    /// A data sequence is shorter than the requested Hankel depth.
    #[error("sequence of {len} samples is too short for depth {depth}")]
    TooShort { len: usize, depth: usize },

    /// Trajectories mixed into one model disagree on channel count, input
    /// count, rate, or channel names.
    #[error("channel mismatch: {0}")]
    ChannelMismatch(String),

    /// An index set refers past the end of the flattened trajectory.
    #[error("index {index} out of bounds for length {len}")]
    OutOfBounds { index: usize, len: usize },

    /// Matrix or vector dimensions do not line up.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// A parameter value is outside its admissible range.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// The random excitation collapsed to the zero signal on the sample grid.
    #[error("excitation signal degenerate after {redraws} re-draws")]
    DegenerateSignal { redraws: usize },

    /// The constraint system of a recovery problem leaves no free directions.
    #[error("nullspace of the constrained model is empty")]
    DegenerateNullspace,

    /// Simulation state left the admissible region (divergence or NaN).
    #[error("non-finite or diverging state at sample {sample}")]
    NonFiniteState { sample: usize },

    /// The solver concluded the constraints admit no solution.
    #[error("problem is infeasible: {0}")]
    Infeasible(String),

    /// The solver hit its iteration limit before reaching the tolerances.
    #[error("iteration limit reached: {0}")]
    MaxIters(String),

    /// Every cell of a tuning grid failed or was infeasible.
    #[error("no feasible cell in the tuning grid")]
    AllInfeasible,

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// A file being read does not match the expected schema.
    #[error("format error in {path}: {reason}")]
    Format { path: String, reason: String },
}
