//! Command line and HTTP front ends for `latent_revise`.

pub mod cli;
pub mod http;
