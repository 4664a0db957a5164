//! Command-line entry points and a local HTTP job service for the
//! omnitext engine.

pub mod cli;
pub mod config;
pub mod error;
pub mod http;
pub mod imaging;
pub mod jobs;
pub mod run;

pub use config::ServiceConfig;
pub use error::{ServiceError, ServiceResult};
pub use jobs::{JobManager, JobRecord, JobRequest, JobState};
