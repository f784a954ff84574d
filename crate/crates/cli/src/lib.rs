//! Command-line front end: configuration, experiment drivers, output tables and plots.

pub mod config;
pub mod experiments;
pub mod output;
pub mod plot;
