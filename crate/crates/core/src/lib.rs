//! Integer-valued GARCH processes driven by their conditional second moment.
//!
//! - [`dist`]: conditional count laws `Q_v` with `E X^2 = v`.
//! - [`model`]: volatility recursions and simulation.
//! - [`coupling`]: the two-chain coupling kernel, contraction weights and
//!   mixing bounds.
//! - [`estimate`]: least squares for the squared-count ARCH regression.
//! - [`mc`]: replication studies.

pub mod cli;
pub mod coupling;
pub mod dist;
pub mod estimate;
pub mod io;
pub mod mc;
pub mod model;
pub mod rng;
pub mod stats;

pub use dist::{Family, SquareLaw};
pub use model::{ChainState, SeriesRecord, SquaredState, VolatilitySpec};
