//! Pulse-sequencer server for RFSoC boards with a simulated qubit backend.
//!
//! Requests describe a pulse sequence and optional real-time sweepers. The
//! server validates and compiles them onto the converter clocks, executes
//! them on [`backend::BackendState`] and returns IQ data over a
//! length-prefixed JSON protocol (see [`wire`]).

pub mod backend;
pub mod bench;
pub mod client;
pub mod components;
pub mod programs;
pub mod server;
pub mod wire;
