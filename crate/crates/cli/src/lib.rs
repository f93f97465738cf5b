//! Command-line front end: analysis reports, exports and subcommands.

pub mod commands;
pub mod export;
pub mod format;
pub mod report;

pub use commands::{run, Cli, EXIT_ERROR, EXIT_OK, EXIT_SRM};
pub use report::{analyze, AnalysisReport, AnalyzeConfig};
