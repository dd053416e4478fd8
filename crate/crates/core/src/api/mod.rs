//! The HTTP API: sessions, role checks, and the handlers behind each route.

mod assign;
mod auth;
mod error;
mod rbac;
mod server;
mod service;
mod staging;
pub mod types;

use std::time::Duration;

pub use assign::{plan_assignment, tasks_by_annotator};
pub use auth::{hash_secret, unix_now, verify_secret, Session, Sessions};
pub use error::{ApiError, RegionViolation};
pub use rbac::{enforce, DenyReason, EndpointClass, PermissionMatrix, Resource};
pub use server::{router, serve, shutdown_signal, ServeOptions};
pub use service::Service;
pub use staging::Staging;

use crate::gateway::GatewayOptions;

pub const EXPORT_RECORDS_HEADER: &str = "x-export-records";
pub const EXPORT_EMPTY_HEADER: &str = "x-export-empty";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ServiceConfig {
    pub token_ttl: Duration,
    /// How long unaccepted predictions are kept.
    pub staging_ttl: Duration,
    pub gateway: GatewayOptions,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            token_ttl: Duration::from_secs(24 * 3600),
            staging_ttl: Duration::from_secs(3600),
            gateway: GatewayOptions::default(),
        }
    }
}
