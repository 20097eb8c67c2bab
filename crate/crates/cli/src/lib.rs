//! Operator commands: run a session server, run a party, verify against the
//! plaintext oracle and benchmark encoding.

use thiserror::Error;

pub mod bench;
pub mod commands;
pub mod config;
pub mod verify;

pub use config::RunConfig;

/// Errors that end a command; each class maps to one process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("input error: {0}")]
    Input(String),
    #[error("session error: {0}")]
    Session(String),
    #[error("verification failed: {0}")]
    VerifyFailed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::VerifyFailed(_) => 1,
            CliError::Config(_) | CliError::Input(_) => 2,
            CliError::Session(_) => 3,
        }
    }
}

impl From<okra_client::ClientError> for CliError {
    fn from(e: okra_client::ClientError) -> Self {
        use okra_client::ClientError as E;
        match e {
            E::Invalid(_) | E::Encode(_) | E::Key(_) => CliError::Input(e.to_string()),
            _ => CliError::Session(e.to_string()),
        }
    }
}

impl From<okra_transport::SessionError> for CliError {
    fn from(e: okra_transport::SessionError) -> Self {
        match e {
            okra_transport::SessionError::InvalidConfig(_) => CliError::Config(e.to_string()),
            _ => CliError::Session(e.to_string()),
        }
    }
}
