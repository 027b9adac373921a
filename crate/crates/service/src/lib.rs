//! HTTP API and command line for the value-per-unit productivity engine.

pub mod api;
pub mod app;
pub mod cli;

pub use app::App;
