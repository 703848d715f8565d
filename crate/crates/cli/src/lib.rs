//! Command-line front end: unit-aware configuration, curve CSV interchange,
//! fit reports and SVG plots around the `superbunch` library.

pub mod commands;
pub mod config;
pub mod csvio;
pub mod plot;
pub mod report;
pub mod units;
