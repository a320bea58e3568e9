//! CLI and HTTP front end over `grg-core`: config, on-disk stores, backend
//! adapters, pipeline commands and the query service.

pub mod adapters;
pub mod commands;
pub mod config;
pub mod error;
pub mod service;
pub mod store;
