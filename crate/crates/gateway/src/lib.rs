//! Command-line entry points and the live negotiation service.

pub mod chat;
pub mod cli;
pub mod error;
pub mod protocol;
pub mod server;
pub mod service;
pub mod store;

pub use error::{GatewayError, Result};
