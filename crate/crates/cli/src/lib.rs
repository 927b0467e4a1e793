//! Command-line driver and HTTP service for `panocompose`.

pub mod cli;
pub mod serve;
