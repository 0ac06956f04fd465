//! Command line and HTTP front ends for `etho-core`.

pub mod cli;
pub mod engine;
pub mod server;
