//! Action execution with state validation, retries, and recovery.
//!
//! `execute` applies one action through a driver, captures a fresh
//! observation, and reports whether anything meaningful changed. Driver
//! faults (including stale selectors) consume retries; the selector is
//! re-resolved against a fresh observation on every attempt. `recover`
//! restores a known state by resetting the session and replaying the
//! root-to-target discovery path recorded in the graph.

use thiserror::Error;

use crate::dom::Dom;
use crate::driver::{AppDriver, DriverError};
use crate::graph::KnowledgeGraph;
use crate::obs_store::ObservationStore;
use crate::state::{
    diff, fingerprint, Action, ActionType, FingerprintConfig, Observation, StateDelta,
    StateFingerprint,
};

#[derive(Debug, Error)]
pub enum ExecutorError {
    /// Driver-session loss where recovery is impossible.
    #[error("driver session lost: {0}")]
    SessionLost(String),
    #[error(transparent)]
    State(#[from] crate::state::StateError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum ExecutionOutcome {
    /// The action produced a meaningful state change.
    Changed,
    /// The action executed but the state fingerprint is unchanged.
    Unchanged,
    /// The action could not be executed within the retry budget.
    Failed,
}

/// What one action execution did.
#[derive(Debug, Clone)]
pub struct ExecutionResult {
    pub outcome: ExecutionOutcome,
    pub before: StateFingerprint,
    pub after: Option<StateFingerprint>,
    pub delta: Option<StateDelta>,
    /// 1 + number of driver errors encountered.
    pub attempts: u32,
    pub error: Option<String>,
    /// Fresh observation after the successful attempt.
    pub after_observation: Option<Observation>,
    /// Content-store key of that observation.
    pub observation_ref: Option<String>,
}

impl ExecutionResult {
    pub fn first_failed(&self) -> bool {
        self.attempts > 1
    }

    pub fn succeeded(&self) -> bool {
        !matches!(self.outcome, ExecutionOutcome::Failed)
    }
}

#[derive(Debug, Clone)]
pub struct ExecutorConfig {
    /// Maximum number of attempts for each action beyond the first.
    pub max_retries: u32,
    pub fingerprint: FingerprintConfig,
}

impl Default for ExecutorConfig {
    fn default() -> Self {
        ExecutorConfig {
            max_retries: 3,
            fingerprint: FingerprintConfig::default(),
        }
    }
}

/// Execute one action against the driver.
///
/// Never returns `Err` for action-level faults: those become
/// `ExecutionOutcome::Failed` after the retry budget is spent. Only an
/// unrecoverable session loss raises.
pub fn execute(
    driver: &mut dyn AppDriver,
    action: &Action,
    before_obs: &Observation,
    config: &ExecutorConfig,
    obs_store: &mut dyn ObservationStore,
) -> Result<ExecutionResult, ExecutorError> {
    let before = fingerprint(before_obs, &config.fingerprint)?;
    let mut attempts = 0u32;
    let mut last_error: Option<String> = None;

    while attempts <= config.max_retries {
        attempts += 1;
        // Re-resolve the selector each attempt; the page may have shifted.
        let current_obs = if attempts == 1 {
            before_obs.clone()
        } else {
            match driver.observe() {
                Ok(obs) => obs,
                Err(e) if e.is_retryable() => {
                    last_error = Some(e.to_string());
                    continue;
                }
                Err(e) => return Err(ExecutorError::SessionLost(e.to_string())),
            }
        };
        if let Err(e) = resolve_target(&current_obs, action) {
            last_error = Some(e);
            continue;
        }
        match driver.perform(action) {
            Ok(()) => {
                let after_obs = match driver.observe() {
                    Ok(obs) => obs,
                    Err(e) if e.is_retryable() => {
                        last_error = Some(e.to_string());
                        continue;
                    }
                    Err(e) => return Err(ExecutorError::SessionLost(e.to_string())),
                };
                let delta = diff(before_obs, &after_obs, &config.fingerprint)?;
                let after = fingerprint(&after_obs, &config.fingerprint)?;
                let outcome = if delta.changed {
                    ExecutionOutcome::Changed
                } else {
                    ExecutionOutcome::Unchanged
                };
                let observation_ref = obs_store.put(&after_obs);
                return Ok(ExecutionResult {
                    outcome,
                    before,
                    after: Some(after),
                    delta: Some(delta),
                    attempts,
                    error: last_error,
                    after_observation: Some(after_obs),
                    observation_ref: Some(observation_ref),
                });
            }
            Err(e) if e.is_retryable() => {
                last_error = Some(e.to_string());
            }
            Err(e) => return Err(ExecutorError::SessionLost(e.to_string())),
        }
    }

    Ok(ExecutionResult {
        outcome: ExecutionOutcome::Failed,
        before,
        after: None,
        delta: None,
        attempts,
        error: Some(last_error.unwrap_or_else(|| "retries exhausted".into())),
        after_observation: None,
        observation_ref: None,
    })
}

/// Execute actions in order, stopping at the first failure. Each step's
/// before-observation is the previous step's after-observation.
pub fn execute_sequence(
    driver: &mut dyn AppDriver,
    actions: &[Action],
    config: &ExecutorConfig,
    obs_store: &mut dyn ObservationStore,
) -> Result<Vec<ExecutionResult>, ExecutorError> {
    let mut results = Vec::with_capacity(actions.len());
    let mut current_obs = match driver.observe() {
        Ok(obs) => obs,
        Err(e) => return Err(ExecutorError::SessionLost(e.to_string())),
    };
    for action in actions {
        let result = execute(driver, action, &current_obs, config, obs_store)?;
        let failed = !result.succeeded();
        if let Some(obs) = &result.after_observation {
            current_obs = obs.clone();
        }
        results.push(result);
        if failed {
            break;
        }
    }
    Ok(results)
}

/// Reset the driver and replay the root-to-target discovery path.
///
/// True iff the replay lands on a state whose fingerprint equals the
/// target. Divergence (a replayed action failing or landing elsewhere)
/// yields false, never an action-level error.
pub fn recover(
    driver: &mut dyn AppDriver,
    graph: &KnowledgeGraph,
    target: &str,
    config: &ExecutorConfig,
    obs_store: &mut dyn ObservationStore,
) -> Result<bool, ExecutorError> {
    if let Err(e) = driver.reset() {
        return Err(ExecutorError::SessionLost(e.to_string()));
    }
    let Some(path) = graph.discovery_path(target) else {
        return Ok(false);
    };
    let mut current_obs = match driver.observe() {
        Ok(obs) => obs,
        Err(e) => return Err(ExecutorError::SessionLost(e.to_string())),
    };
    for edge in &path {
        let result = execute(driver, &edge.action, &current_obs, config, obs_store)?;
        if !result.succeeded() {
            return Ok(false);
        }
        match result.after_observation {
            Some(obs) => current_obs = obs,
            None => return Ok(false),
        }
    }
    let landed = fingerprint(&current_obs, &config.fingerprint)?;
    Ok(landed.digest == target)
}

/// Check the action's selector resolves to exactly one element, and that a
/// Navigate action carries a URL payload.
fn resolve_target(obs: &Observation, action: &Action) -> Result<(), String> {
    if action.action_type == ActionType::Navigate {
        if action.payload.as_deref().unwrap_or("").is_empty() {
            return Err("navigate action without a URL payload".into());
        }
        // Navigation does not require a live element; links vanish from
        // history pages without making the URL unreachable.
        return Ok(());
    }
    let dom = Dom::parse(&obs.page_source).map_err(|e| e.to_string())?;
    dom.resolve(&action.target_selector)
        .map(|_| ())
        .map_err(|e| e.to_string())
}

/// Map a driver error on session setup to the executor error space.
pub fn session_error(e: DriverError) -> ExecutorError {
    ExecutorError::SessionLost(e.to_string())
}
