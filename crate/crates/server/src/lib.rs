//! Policy serving over WebSocket with MessagePack frames, plus the native
//! blocking client the evaluation harness uses.
//!
//! Requests are decoded concurrently; predictions run one at a time on a
//! dedicated model thread fed by a bounded queue, so results never depend
//! on how many clients are connected.

pub mod client;
mod service;
pub mod wire;

pub use client::{ClientOptions, PolicyClient};
pub use service::{resolve_port, serve, ServeOptions, ServerHandle, PORT_ENV};
