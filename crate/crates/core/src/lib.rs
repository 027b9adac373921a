//! Value-per-unit (VPU) clinical productivity engine.
//!
//! Each delivered service is credited with its revenue measured in expected
//! billable hours, adjusted by quality and eligibility modifiers and
//! optionally by client outcome change. Monthly credit is compared against a
//! universal target of 100 per 1.0 clinical FTE.

pub mod analytics;
pub mod billing;
pub mod engine;
pub mod exact;
pub mod model;
pub mod pipeline;
pub mod rules;
pub mod stats;
pub mod store;
pub mod wire;

pub use exact::Exact;
