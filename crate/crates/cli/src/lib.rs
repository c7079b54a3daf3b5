//! Pipeline driver and HTTP service around `plumeshine-core`.

pub mod config;
pub mod error;
pub mod pipeline;
pub mod service;
