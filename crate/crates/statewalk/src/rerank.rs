//! Candidate-action reranking.
//!
//! Priority is a convex combination of three terms computed purely from the
//! explored store: the Shannon entropy of the action class's observed
//! outcome distribution (uncertain classes are worth probing), the expected
//! reward (exact recorded value, else the class mean, else an optimistic
//! prior), and novelty (untried pairs first). Actions on the trivial-action
//! denylist (hover, right-click and friends) are pinned to priority -1.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

use crate::inference::{CandidateAction, ExploredStore};
use crate::state::Action;

#[derive(Debug, Error)]
pub enum RerankConfigError {
    #[error("rerank weights must be non-negative, got {0}")]
    NegativeWeight(f64),
    #[error("rerank weights must sum to 1, got {0}")]
    BadWeightSum(f64),
}

/// Weights, denylist, and selection thresholds for ranking.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RerankConfig {
    pub w_entropy: f64,
    pub w_reward: f64,
    pub w_novelty: f64,
    /// Expected reward for action classes with no history.
    pub optimistic_prior: f64,
    /// Selection floor used by `select_next`: only priorities strictly
    /// above it are eligible.
    pub priority_floor: f64,
    /// Substrings identifying trivial interactions; matched case-
    /// insensitively against an action's payload and description.
    pub denylist: Vec<String>,
}

impl Default for RerankConfig {
    fn default() -> Self {
        RerankConfig {
            w_entropy: 0.2,
            w_reward: 0.4,
            w_novelty: 0.4,
            optimistic_prior: 0.5,
            priority_floor: 0.0,
            denylist: vec![
                "hover".into(),
                "right-click".into(),
                "rightclick".into(),
                "contextmenu".into(),
                "focus".into(),
            ],
        }
    }
}

impl RerankConfig {
    pub fn validate(&self) -> Result<(), RerankConfigError> {
        for w in [self.w_entropy, self.w_reward, self.w_novelty] {
            if w < 0.0 || !w.is_finite() {
                return Err(RerankConfigError::NegativeWeight(w));
            }
        }
        let sum = self.w_entropy + self.w_reward + self.w_novelty;
        if (sum - 1.0).abs() > 1e-9 {
            return Err(RerankConfigError::BadWeightSum(sum));
        }
        Ok(())
    }

    pub fn is_denylisted(&self, action: &Action) -> bool {
        let haystacks = [
            action.payload.clone().unwrap_or_default().to_ascii_lowercase(),
            action.description.to_ascii_lowercase(),
        ];
        self.denylist.iter().any(|entry| {
            let needle = entry.to_ascii_lowercase();
            haystacks.iter().any(|h| h.contains(&needle))
        })
    }
}

/// A candidate with its computed ranking terms.
#[derive(Debug, Clone)]
pub struct RankedAction {
    pub action: Action,
    /// `w_e * entropy + w_r * expected_reward + w_n * novelty`, or -1 for
    /// denylisted actions.
    pub priority: f64,
    pub entropy_term: f64,
    pub expected_reward_term: f64,
    pub novelty_term: f64,
}

/// Shannon entropy (natural log) of the empirical distribution over
/// resulting states recorded for an action class. Zero when the class has
/// fewer than two recorded outcomes.
pub fn outcome_entropy(store: &ExploredStore, class_key: &str) -> f64 {
    let outcomes = store.class_outcomes(class_key);
    if outcomes.len() < 2 {
        return 0.0;
    }
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for outcome in &outcomes {
        *counts.entry(outcome.result.as_str()).or_default() += 1;
    }
    let total = outcomes.len() as f64;
    -counts
        .values()
        .map(|&c| {
            let p = c as f64 / total;
            p * p.ln()
        })
        .sum::<f64>()
}

/// Expected reward for executing `action` from state `state`: the recorded
/// value for the exact pair when present, else the mean recorded reward of
/// the action's class, else the optimistic prior.
pub fn expected_reward(
    store: &ExploredStore,
    state: &str,
    action: &Action,
    optimistic_prior: f64,
) -> f64 {
    if let Some(recorded) = store.recorded_reward(state, &action.key()) {
        return recorded;
    }
    let class = store.class_outcomes(&action.class_key());
    if class.is_empty() {
        return optimistic_prior;
    }
    class.iter().map(|o| o.reward.value).sum::<f64>() / class.len() as f64
}

/// Order candidates by descending priority.
///
/// The output is a permutation of the input. Ties keep the input order,
/// which the heuristic reasoner emits in document order of the target
/// elements. Denylisted actions sink to the bottom with priority -1.
pub fn rerank(
    candidates: &[CandidateAction],
    store: &ExploredStore,
    state: &str,
    config: &RerankConfig,
) -> Vec<RankedAction> {
    let mut ranked: Vec<RankedAction> = candidates
        .iter()
        .map(|candidate| {
            let entropy_term = outcome_entropy(store, &candidate.action.class_key());
            let expected_reward_term =
                expected_reward(store, state, &candidate.action, config.optimistic_prior);
            let novelty_term = candidate.novelty;
            let priority = if config.is_denylisted(&candidate.action) {
                -1.0
            } else {
                config.w_entropy * entropy_term
                    + config.w_reward * expected_reward_term
                    + config.w_novelty * novelty_term
            };
            RankedAction {
                action: candidate.action.clone(),
                priority,
                entropy_term,
                expected_reward_term,
                novelty_term,
            }
        })
        .collect();
    // Stable sort: ties preserve candidate (document) order.
    ranked.sort_by(|a, b| b.priority.partial_cmp(&a.priority).unwrap_or(std::cmp::Ordering::Equal));
    ranked
}
