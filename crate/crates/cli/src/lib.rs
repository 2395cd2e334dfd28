//! Command-line front end: session server, batch self-play, corpus
//! analysis and log audits.

pub mod app_config;
pub mod audit;
pub mod commands;
pub mod server;
