//! Reward/penalty scoring of executed actions.
//!
//! Every executed action gets a score in [-1, +1]. Discovering a brand-new
//! state earns the top reward; landing on a known state via a new edge is
//! mildly positive; no-ops, dead ends, and failures are penalized. The score
//! drives retrials (values just under the threshold get another attempt) and
//! path halting (a state whose actions all score at or below the threshold
//! is abandoned).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::executor::{ExecutionOutcome, ExecutionResult};
use crate::graph::KnowledgeGraph;
use crate::inference::ExploredStore;

#[derive(Debug, Error)]
pub enum RewardConfigError {
    #[error("reward value {0} for {1} is outside [-1, 1]")]
    OutOfRange(f64, &'static str),
    #[error("reward value for {0} must be {1}")]
    WrongSign(&'static str, &'static str),
    #[error("retry_band must be non-negative, got {0}")]
    NegativeBand(f64),
}

/// Why a score was assigned. Exactly one reason fires per result.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RewardReason {
    /// Transition to a fingerprint not yet in the graph.
    NewState,
    /// Transition to a known fingerprint via a new interaction.
    NewEdgeKnownState,
    /// The action executed but nothing observable changed.
    NoChange,
    /// Landed on an already-exhausted terminal state.
    LeafDeadEnd,
    /// The action could not be executed within the retry budget.
    Failure,
}

/// Score in [-1, +1] assigned to one executed action's outcome.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardScore {
    pub value: f64,
    pub reason: RewardReason,
}

/// Score table plus retrial/halting thresholds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    /// Minimum threshold for reward-based transitions: scores at or below it
    /// count as unproductive.
    pub min_reward: f64,
    /// Width of the band below `min_reward` in which an action is re-tried.
    pub retry_band: f64,
    /// Maximum number of attempts for each action.
    pub max_retries: u32,
    pub new_state: f64,
    pub new_edge_known_state: f64,
    pub no_change: f64,
    pub leaf_dead_end: f64,
    pub failure: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            min_reward: 0.0,
            retry_band: 0.2,
            max_retries: 3,
            new_state: 1.0,
            new_edge_known_state: 0.25,
            no_change: -0.5,
            leaf_dead_end: -1.0,
            failure: -1.0,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<(), RewardConfigError> {
        let ranged = [
            (self.new_state, "new_state"),
            (self.new_edge_known_state, "new_edge_known_state"),
            (self.no_change, "no_change"),
            (self.leaf_dead_end, "leaf_dead_end"),
            (self.failure, "failure"),
            (self.min_reward, "min_reward"),
        ];
        for (value, name) in ranged {
            if !(-1.0..=1.0).contains(&value) || !value.is_finite() {
                return Err(RewardConfigError::OutOfRange(value, name));
            }
        }
        if self.new_state <= 0.0 {
            return Err(RewardConfigError::WrongSign("new_state", "positive"));
        }
        for (value, name) in [
            (self.no_change, "no_change"),
            (self.leaf_dead_end, "leaf_dead_end"),
            (self.failure, "failure"),
        ] {
            if value >= 0.0 {
                return Err(RewardConfigError::WrongSign(name, "negative"));
            }
        }
        if self.retry_band < 0.0 || !self.retry_band.is_finite() {
            return Err(RewardConfigError::NegativeBand(self.retry_band));
        }
        Ok(())
    }

    fn value_for(&self, reason: RewardReason) -> f64 {
        match reason {
            RewardReason::NewState => self.new_state,
            RewardReason::NewEdgeKnownState => self.new_edge_known_state,
            RewardReason::NoChange => self.no_change,
            RewardReason::LeafDeadEnd => self.leaf_dead_end,
            RewardReason::Failure => self.failure,
        }
    }
}

/// Score one execution result against the current graph and explored store.
///
/// Case order (total and mutually exclusive): failure, no change, new state,
/// exhausted terminal leaf, then new-edge-to-known-state for everything else.
/// The dead-end case requires the target to be both terminal (no out-edges)
/// and candidate-exhausted, so the first arrival at a genuinely new terminal
/// page still earns the discovery reward.
pub fn score(
    result: &ExecutionResult,
    graph: &KnowledgeGraph,
    store: &ExploredStore,
    config: &RewardConfig,
) -> RewardScore {
    let reason = match result.outcome {
        ExecutionOutcome::Failed => RewardReason::Failure,
        ExecutionOutcome::Unchanged => RewardReason::NoChange,
        ExecutionOutcome::Changed => {
            let after = result
                .after
                .as_ref()
                .expect("changed result carries the resulting fingerprint");
            if !graph.contains(&after.digest) {
                RewardReason::NewState
            } else if graph.out_degree(&after.digest) == 0
                && store.is_candidate_exhausted(&after.digest)
            {
                RewardReason::LeafDeadEnd
            } else {
                RewardReason::NewEdgeKnownState
            }
        }
    };
    RewardScore {
        value: config.value_for(reason),
        reason,
    }
}

/// Whether to re-execute an action whose score landed close under the
/// threshold: true iff `min_reward - retry_band <= value <= min_reward`
/// and the attempt budget is not exhausted.
pub fn should_retry(score: &RewardScore, attempts: u32, config: &RewardConfig) -> bool {
    attempts <= config.max_retries
        && score.value >= config.min_reward - config.retry_band
        && score.value <= config.min_reward
}

/// Whether exploration of the current path should halt: true iff the
/// frontier produced no rewards at all, or none above the threshold.
pub fn should_halt_path(frontier_rewards: &[RewardScore], config: &RewardConfig) -> bool {
    frontier_rewards
        .iter()
        .all(|r| r.value <= config.min_reward)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reward(value: f64) -> RewardScore {
        RewardScore {
            value,
            reason: RewardReason::NoChange,
        }
    }

    #[test]
    fn default_config_is_valid_and_matches_documented_values() {
        let config = RewardConfig::default();
        config.validate().unwrap();
        assert_eq!(config.min_reward, 0.0);
        assert_eq!(config.max_retries, 3);
        assert_eq!(config.new_state, 1.0);
        assert_eq!(config.new_edge_known_state, 0.25);
        assert_eq!(config.no_change, -0.5);
        assert_eq!(config.leaf_dead_end, -1.0);
        assert_eq!(config.failure, -1.0);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let config = RewardConfig {
            new_state: 1.5,
            ..RewardConfig::default()
        };
        assert!(config.validate().is_err());

        let config = RewardConfig {
            no_change: 0.1,
            ..RewardConfig::default()
        };
        assert!(config.validate().is_err());

        let config = RewardConfig {
            retry_band: -0.1,
            ..RewardConfig::default()
        };
        assert!(config.validate().is_err());
    }

    #[test]
    fn retry_fires_only_in_the_band_below_threshold() {
        let config = RewardConfig::default();
        assert!(should_retry(&reward(-0.1), 1, &config));
        assert!(should_retry(&reward(0.0), 1, &config));
        assert!(should_retry(&reward(-0.2), 1, &config));
        assert!(!should_retry(&reward(-0.21), 1, &config));
        assert!(!should_retry(&reward(0.5), 1, &config));
        // Attempt budget exhausted.
        assert!(!should_retry(&reward(-0.1), 4, &config));
        assert!(should_retry(&reward(-0.1), 3, &config));
    }

    #[test]
    fn halt_truth_table() {
        let config = RewardConfig::default();
        assert!(should_halt_path(&[], &config));
        assert!(should_halt_path(&[reward(-1.0), reward(-0.5), reward(0.0)], &config));
        assert!(!should_halt_path(&[reward(-1.0), reward(0.25)], &config));
        // Single-element case reduces to a threshold comparison.
        assert!(should_halt_path(&[reward(0.0)], &config));
        assert!(!should_halt_path(&[reward(0.001)], &config));
    }
}
