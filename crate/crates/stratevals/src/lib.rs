//! Command-line front end and Monte-Carlo harness for the stratified
//! e-process library.
//!
//! The heavy lifting lives in `stratevals-core`; this crate adds what needs
//! an operating system: the event-stream file format, the declarative
//! simulation configs, the replicated experiment runner, and the `stratevals`
//! binary with its `test`, `confseq`, and `simulate` subcommands.

pub mod cli;
pub mod config;
pub mod events;
pub mod report;
pub mod sim;

pub use stratevals_core as core;
