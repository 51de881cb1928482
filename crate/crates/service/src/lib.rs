//! Pipeline service for the wheelchair twin: wires frames through feature
//! extraction, classification, decoding and the chair simulator, fans the
//! results out to operator consoles over NDJSON and WebSocket, and records
//! sessions for deterministic replay.

pub mod bench;
pub mod config;
pub mod error;
pub mod hub;
pub mod pipeline;
pub mod session;
pub mod training;
pub mod transport;
pub mod wire;

pub use config::ServiceConfig;
pub use error::{ServiceError, ServiceResult};
pub use pipeline::Service;
pub use wire::{MessageType, Payload, WireMessage};
