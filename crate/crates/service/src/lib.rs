//! HTTP service and CLI over semantic panel sessions.

pub mod api;
pub mod cli;
pub mod config;
pub mod store;
