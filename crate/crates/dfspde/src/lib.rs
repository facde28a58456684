//! Simulation and verification engine for distribution-function-valued
//! stochastic PDEs driven by space-time Gaussian white noise, specialized to
//! interacting super-Brownian motions and interacting Fleming-Viot
//! processes.
//!
//! The state is a discretized nondecreasing function on a spatial grid (the
//! cumulative mass to the left of each node). One time step applies
//! half-Laplacian drift plus noise aggregated over mass-level bins, then
//! restores monotonicity by exact L2 isotonic projection. A 1D SDE oracle
//! for the total mass, coefficient-condition certification, and a set of
//! statistical diagnostics (martingale mean, quadratic variation, weak-form
//! bookkeeping, coupled-path comparison, density reconstruction) verify the
//! dynamics at desk scale.

pub mod diagnostics;
pub mod error;
pub mod field;
pub mod grid;
pub mod integrator;
pub mod isotonic;
pub mod mass_sde;
pub mod models;
pub mod noise;

pub use error::{Error, Result};
pub use field::{MonotoneField, WeightedNorm};
pub use grid::{FvRect, LevelGrid, SpatialGrid};
pub use integrator::{
    run, run_ensemble, step, DriftMode, EnsembleSummary, SchemeConfig, StepReport,
    TrajectoryRecord, MASS_FLOOR_FRACTION,
};
pub use isotonic::isotonic_project;
pub use models::{CoefficientModel, FvModel, ModelKind, SbmModel};
pub use noise::{LevelAggregate, NoisePanel, SeedSpec};
