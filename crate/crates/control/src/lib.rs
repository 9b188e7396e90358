//! Control plane for twinpilot sessions: HTTP service and CLI helpers.

pub mod server;
