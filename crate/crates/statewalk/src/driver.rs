//! Application driver abstraction.
//!
//! A driver owns one session against a target application and exposes the
//! four primitives the rest of the system needs: navigate, observe, perform
//! an action, and reset to the pristine initial state. One session is used
//! from one thread at a time.

use thiserror::Error;

use crate::state::{Action, Observation};

#[derive(Debug, Error, Clone)]
pub enum DriverError {
    /// The session is gone and cannot be recovered by retrying.
    #[error("driver unavailable: {0}")]
    Unavailable(String),
    /// Navigation target could not be fetched.
    #[error("navigation failed: {0}")]
    NavigationFailed(String),
    /// The action's target element does not exist in the current page.
    #[error("no such element: {0}")]
    NoSuchElement(String),
    /// Transient fault (timeout, injected flakiness); retrying may succeed.
    #[error("transient driver fault: {0}")]
    Transient(String),
    /// Wire-protocol or response-shape problem.
    #[error("protocol error: {0}")]
    Protocol(String),
}

impl DriverError {
    /// Whether an executor retry could plausibly succeed.
    pub fn is_retryable(&self) -> bool {
        !matches!(self, DriverError::Unavailable(_))
    }
}

pub trait AppDriver {
    fn navigate(&mut self, url: &str) -> Result<(), DriverError>;

    /// Capture the current page source, screenshot digest, and metadata.
    /// Reflects all effects of previously performed actions.
    fn observe(&mut self) -> Result<Observation, DriverError>;

    /// Apply one action to the current page. Navigate actions route through
    /// `navigate` with the action payload.
    fn perform(&mut self, action: &Action) -> Result<(), DriverError>;

    /// Return to the initial session state (fresh session, cleared state).
    fn reset(&mut self) -> Result<(), DriverError>;

    /// Monotonic session clock in milliseconds. Simulated drivers advance it
    /// by synthetic per-action costs so timing comparisons stay meaningful.
    fn now_ms(&self) -> u64;

    /// Hint for drivers that send their own requests. Default: ignored.
    fn set_user_agent(&mut self, _user_agent: &str) {}
}
