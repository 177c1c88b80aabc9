//! Client side of a line-delimited JSON protocol that lets external
//! processes serve the speaker, similarity and language-model roles, plus an
//! in-process loopback server that wraps local scorers for testing.

pub mod client;
pub mod loopback;
pub mod protocol;
pub mod scorers;

pub use client::{BridgeClient, ClientOptions, Endpoint};
pub use protocol::{Kind, PROTOCOL_VERSION};
pub use scorers::{BridgeLm, BridgeSimilarity, BridgeSpeaker};

use std::time::Duration;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BridgeError {
    #[error("bad endpoint {0}")]
    Endpoint(String),
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("handshake rejected: {0}")]
    UnsupportedVersion(String),
    #[error("server does not offer `{0}`")]
    MissingCapability(Kind),
    #[error("request {id} timed out after {timeout:?}")]
    Timeout { id: u64, timeout: Duration },
    #[error("connection poisoned: {0}")]
    Poisoned(String),
    #[error("server error: {0}")]
    Remote(String),
    #[error("malformed response: {0}")]
    Malformed(String),
}

impl From<BridgeError> for pragcap_core::Error {
    fn from(e: BridgeError) -> Self {
        pragcap_core::Error::Scorer(e.to_string())
    }
}
