//! Round-robin differential-phase-shift QKD: asymptotic and finite-key rate
//! analysis, a photon-level Monte Carlo, and loss models for the receiver's
//! variable-delay interferometer.

pub mod config;
pub mod error;
pub mod interferometer;
pub mod keyrate;
pub mod model;
pub mod montecarlo;
pub mod optimize;
pub mod output;

pub use config::RunConfig;
pub use error::{Error, Result};
pub use interferometer::{MeasuredTable, SchemeKind, SchemeSpec};
pub use keyrate::{ProtocolParams, RateReport};
pub use model::{LinkParams, Objective};
pub use montecarlo::{run_session, SessionOptions, SessionRun};
pub use optimize::{distance_sweep, max_distance, optimize_mu, DistanceSearch};
