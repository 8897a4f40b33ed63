//! Command-line interface and HTTP service for the `dialogue-cache` library.

pub mod commands;
pub mod components;
pub mod service;
