//! Command-line driver: flat key-value configuration, mode dispatch and
//! verification suites.

pub mod config;
pub mod run;
pub mod verify;
