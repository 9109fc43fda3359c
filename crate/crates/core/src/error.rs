//! Error taxonomy shared by every module in this crate.

use std::io;

/// Everything that can go wrong between record generation and the final merge.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A parameter combination the engine cannot run (bad K, r, spans, ...).
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// A key that falls outside the partitioned key domain.
    #[error("key {key:#x} is outside the key domain{}", context_suffix(.context))]
    OutOfDomain { key: u128, context: String },

    /// An API misuse: arguments that violate a documented precondition.
    #[error("invalid call: {0}")]
    InvalidCall(String),

    /// An internal invariant broke; indicates a placement or pipeline bug.
    #[error("internal consistency violation: {0}")]
    Inconsistency(String),

    /// A coded packet that cannot be parsed or is missing metadata.
    #[error("malformed packet: {0}")]
    MalformedPacket(String),

    /// Serialized records or values whose framing does not add up.
    #[error("malformed data: {0}")]
    MalformedData(String),

    /// A transfer failed in socket mode; carries the schedule slot.
    #[error("transmission failed at slot {slot}: {reason}")]
    Transmission { slot: usize, reason: String },

    #[error("i/o error: {0}")]
    Io(#[from] io::Error),

    #[error("protocol error: {0}")]
    Protocol(String),
}

fn context_suffix(context: &str) -> String {
    if context.is_empty() {
        String::new()
    } else {
        format!(" ({context})")
    }
}

pub type Result<T> = std::result::Result<T, Error>;
