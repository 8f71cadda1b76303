//! `proclens` command line and local review service.

pub mod cli;
pub mod server;
