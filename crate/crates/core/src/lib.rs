//! Two-stage reference-free evaluation of generated text.
//!
//! Stage 1 flags which principal error categories occur in an output; stage
//! 2, run only when something was flagged, produces a diagnostic report whose
//! severities sum to the score.

pub mod annotation;
pub mod api;
pub mod backend;
pub mod bench;
pub mod config;
pub mod datamodel;
pub mod fixture;
pub mod metrics;
pub mod parser;
pub mod pipeline;
pub mod prompt;
pub mod taxonomy;
