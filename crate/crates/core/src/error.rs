use std::io;

use thiserror::Error;

/// Errors produced by the rate analysis, simulation and configuration layers.
#[derive(Debug, Error)]
pub enum Error {
    /// A parameter violated its documented range. `field` is the config key.
    #[error("invalid {field}: {reason}")]
    InvalidParameter { field: &'static str, reason: String },

    #[error("probability {value} is outside [0, 1]")]
    ProbabilityDomain { value: f64 },

    #[error("delay {r} is outside 1..={max}")]
    DelayOutOfRange { r: u32, max: u32 },

    /// The multi-photon tag fraction e_src·N_em/N exceeded one.
    #[error("insufficient sifted key for tag fraction: p1 = {p1} > 1")]
    InsufficientSiftedKey { p1: f64 },

    /// Neither signal nor dark counts can click, so e_b is 0/0.
    #[error("bit error rate undefined: no signal and no dark counts")]
    UndefinedErrorRate,

    #[error("event (k = {k}, r = {r}) does not fit in a packet of {len} pulses")]
    EventOutOfPacket { k: u32, r: u32, len: u32 },

    #[error("no positive key rate at 0 km")]
    NoKeyAtOrigin,

    #[error("scheme cannot be resized to L = {new_len}: {reason}")]
    IncompatibleScheme { new_len: u32, reason: String },

    #[error("measured table, line {line}: {reason}")]
    MeasuredTable { line: u64, reason: String },

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            field,
            reason: reason.into(),
        }
    }

    /// True for errors caused by bad user input (as opposed to I/O failures).
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::Io(_))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
