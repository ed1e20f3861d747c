//! HTTP API and operator CLI on top of `gradecast-core`.

pub mod api;
pub mod cli;
pub mod config;
pub mod error;
pub mod store;
pub mod views;

pub use api::{router, ApiSettings, AppState};
pub use config::ServiceConfig;
pub use store::{ModelStore, Snapshot, StoreSettings};
