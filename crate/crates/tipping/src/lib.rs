//! File formats, the experiment harness, reports, and the `tipping` command.

pub mod cli;
pub mod conversation;
pub mod experiments;
pub mod files;
pub mod format;
pub mod report;
