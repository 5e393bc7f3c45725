//! Annotation service for the human refinement and rating workflows.

pub mod config;
pub mod http;
pub mod workflow;

pub use config::{RaterConfig, ServiceConfig};
pub use workflow::{Task, TaskKind, Workflow, WorkflowError};
