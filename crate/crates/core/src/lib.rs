//! Modular price-negotiation agent: corpus handling, item valuation, dialogue
//! encoding, action and price policies, utterance generation, sessions,
//! training and evaluation.

pub mod config;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod generator;
pub mod learn;
pub mod model;
pub mod policy;
pub mod session;
pub mod synthetic;
pub mod valuation;

pub use error::{Error, Result};
