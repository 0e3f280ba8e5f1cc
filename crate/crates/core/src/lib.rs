//! Cross-regime analogue forecasting on forced 2D turbulence.
//!
//! The crate covers the whole pipeline: a pseudo-spectral vorticity solver
//! for generating regimes, state encoders, the relay database and rollout,
//! error and spectral diagnostics, and the file formats and experiment
//! drivers used by the command-line tool.

pub mod config;
pub mod diagnostics;
pub mod error;
pub mod experiment;
pub mod field;
pub mod harness;
pub mod io;
pub mod relay;
pub mod repr;
pub mod spectral;

pub use error::{Error, Result};
pub use field::{Grid, VorticityField};
pub use relay::{RelayDatabase, RolloutConfig, RolloutResult, UpdateRule};
pub use repr::{EncoderSpec, FrameKey, LatentTable, LatentVector, PcaModel};
pub use spectral::{SolverConfig, Trajectory};
