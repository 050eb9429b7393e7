//! Library surface of the batch CLI: experiment configuration and file
//! emission, shared by the binary and the acceptance suite.

pub mod config;
pub mod output;
