//! Data-driven modeling and anti-sway trajectory generation for rotary cranes.
//!
//! The library identifies a nonparametric behavioral model of a crane (or any
//! discrete-time system) directly from recorded input-output trajectories: windows
//! of the data are stacked into a depth-L block Hankel matrix whose column span
//! captures every length-L behavior the data exhibits. New trajectories are then
//! recovered, simulated, or designed by solving a convex program over the column
//! coefficients, with an L1 penalty selecting a sparse combination of data windows.
//!
//! Main pieces:
//! - [`crane`]: slewing-crane dynamics (boom rotation plus spherical-pendulum load),
//!   fixed-step RK4 simulation, and a closed-form controllability test.
//! - [`excitation`]: randomized sum-of-sines input signals for data collection.
//! - [`hankel`]: Hankel model construction, rank diagnostics, column subset
//!   selection, and singular-value denoising.
//! - [`qp`]: an operator-splitting solver for composite quadratic programs with an
//!   L1 term, linear equalities, and linear inequalities, plus KKT certification.
//! - [`recovery`]: trajectory recovery from partial data, nonparametric simulation,
//!   and constrained slewing-trajectory generation (direct and nullspace-based).
//! - [`tuning`]: grid-search workflows for the model and trajectory hyperparameters
//!   and scalar quality metrics for candidate trajectories.
//! - [`waypoint`]: a model-based waypoint trajectory optimizer used as a benchmark,
//!   with an independent rollout feasibility check and a comparison report.
//! - [`io`]: CSV trajectory files and binary model persistence.
//!
//! With the `parallel` feature (default) grid evaluations and multi-starts run on
//! rayon; without it the same code paths run sequentially.

pub mod crane;
pub mod error;
pub mod excitation;
pub mod hankel;
pub mod io;
pub(crate) mod linalg;
pub mod qp;
pub mod recovery;
pub mod trajectory;
pub mod tuning;
pub mod waypoint;

pub use error::Error;
pub use trajectory::{ChannelLayout, IndexSet, Trajectory};

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;
