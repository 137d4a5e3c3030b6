//! Live operation of the controller over WebSocket.
//!
//! The control loop runs on its own thread at a fixed rate. Clients write
//! into a mailbox (one slot per continuous channel, last writer wins) and
//! read a lock-free snapshot of the latest cycle, which each connection
//! forwards as state frames.

pub mod engine;
pub mod protocol;
pub mod server;

use thiserror::Error;

pub use engine::{Engine, Mailbox};
pub use protocol::{Command, Frame, Hello, State};
pub use server::{LiveService, ServiceConfig, DEFAULT_BROADCAST_INTERVAL};

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error(transparent)]
    Scenario(#[from] tankbarrier::error::ScenarioError),
    #[error("invalid service configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
