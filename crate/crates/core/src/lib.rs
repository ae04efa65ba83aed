//! Grid-based recursive Bayes filtering for hybrid GNSS / terrestrial radio
//! positioning.
//!
//! The posterior over position is held as probability mass on an
//! equidistant lattice ([`grid`]). Observations are turned into per-cell
//! likelihoods through their geometric relation to reference points
//! ([`geometry`], [`noise`], [`update`]); odometry drives a grid-based
//! motion prediction ([`prediction`]); [`engine`] sequences multi-rate
//! events and [`estimation`] extracts positions. [`sim`] and [`metrics`]
//! provide synthetic scenarios and error statistics, and [`io`] the file
//! formats used by the command-line tool.

pub mod engine;
pub mod error;
pub mod estimation;
pub mod geometry;
pub mod grid;
pub mod io;
pub mod metrics;
pub mod noise;
pub mod prediction;
pub mod sim;
pub mod update;

pub use engine::{Admission, FilterConfig, FilterState, GridFilter, RejectReason, RunReport};
pub use error::{Error, Result};
pub use estimation::Estimate;
pub use geometry::{ReferenceKind, ReferencePoint};
pub use grid::{GridIndex, GridSpec, LikelihoodField, Position};
pub use noise::{GmmModel, NoiseModel};
pub use update::{CombineMode, Observation, Payload, Sensor, Visibility};
