//! File formats, model bundles and the command-line pipeline around
//! `tsshdl-core`.

pub mod io;
pub mod bundle;
pub mod config;
pub mod dataset;
pub mod pipeline;
pub mod report;
pub mod cli;
