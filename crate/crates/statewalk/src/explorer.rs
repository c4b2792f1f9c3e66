//! The exploration loop: infer, rerank, select, execute, score, record.
//!
//! Scheduling is an oldest-first frontier queue with exhaust-marking: the
//! loop always works the earliest-discovered state that still has untried
//! candidates, recovering to it (reset plus replay of its discovery path)
//! whenever the driver sits elsewhere. A state is exhausted when selection
//! yields nothing above the priority floor, when recovery to it diverges,
//! or when its out-degree hits the leaf-branch cap. Only meaningful
//! (state-changing) executions become graph edges; no-ops and failures are
//! still recorded in the explored store so they are never re-tried.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::driver::AppDriver;
use crate::executor::{execute, recover, ExecutionOutcome, ExecutorConfig, ExecutorError};
use crate::graph::{GraphMeta, KnowledgeGraph, StateNode, TransitionEdge};
use crate::inference::{
    infer_candidates, record_outcome, select_next, ExploredStore, Reasoner,
};
use crate::obs_store::ObservationStore;
use crate::rerank::{rerank, RerankConfig};
use crate::reward::{score, should_halt_path, should_retry, RewardConfig, RewardReason};
use crate::state::{fingerprint, FingerprintConfig, StateError};

#[derive(Debug, Error)]
pub enum ExploreError {
    #[error("driver unavailable at start: {0}")]
    DriverUnavailable(String),
    #[error(transparent)]
    Executor(#[from] ExecutorError),
    #[error(transparent)]
    State(#[from] StateError),
    #[error("invalid exploration config: {0}")]
    InvalidConfig(String),
}

/// Hyperparameters of the exploration loop.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ExplorationConfig {
    /// Minimum threshold for reward-based transitions.
    pub min_reward: f64,
    /// Out-edges a state may accumulate before expansion stops.
    pub max_leaf_branches: u32,
    /// Consecutive actions within a single state before a forced switch.
    pub max_consecutive_actions: u32,
    /// Maximum attempts per action.
    pub max_retries: u32,
    pub seed: u64,
    /// Optional cap on total executed steps.
    pub budget: Option<u64>,
    pub start_url: String,
    /// Actions taken per selection round.
    pub actions_per_step: usize,
    pub fingerprint: FingerprintConfig,
    pub rerank: RerankConfig,
    pub reward: RewardConfig,
}

impl Default for ExplorationConfig {
    fn default() -> Self {
        ExplorationConfig {
            min_reward: 0.0,
            max_leaf_branches: 999,
            max_consecutive_actions: 5,
            max_retries: 3,
            seed: 0,
            budget: None,
            start_url: String::new(),
            actions_per_step: 1,
            fingerprint: FingerprintConfig::default(),
            rerank: RerankConfig::default(),
            reward: RewardConfig::default(),
        }
    }
}

impl ExplorationConfig {
    /// Reward table with the loop-level threshold and retry budget applied.
    pub fn reward_config(&self) -> RewardConfig {
        RewardConfig {
            min_reward: self.min_reward,
            max_retries: self.max_retries,
            ..self.reward.clone()
        }
    }

    pub fn executor_config(&self) -> ExecutorConfig {
        ExecutorConfig {
            max_retries: self.max_retries,
            fingerprint: self.fingerprint.clone(),
        }
    }

    /// Stable digest of the parameters that shape the produced graph.
    pub fn config_hash(&self) -> String {
        let body = serde_json::to_vec(self).expect("config serializes");
        crate::state::sha256_hex(&[b"statewalk-config-v1", body.as_slice()])[..16].to_string()
    }

    pub fn validate(&self) -> Result<(), ExploreError> {
        if self.max_leaf_branches == 0 {
            return Err(ExploreError::InvalidConfig("max_leaf_branches must be positive".into()));
        }
        if self.max_consecutive_actions == 0 {
            return Err(ExploreError::InvalidConfig(
                "max_consecutive_actions must be positive".into(),
            ));
        }
        if self.actions_per_step == 0 {
            return Err(ExploreError::InvalidConfig("actions_per_step must be positive".into()));
        }
        self.rerank
            .validate()
            .map_err(|e| ExploreError::InvalidConfig(e.to_string()))?;
        self.reward_config()
            .validate()
            .map_err(|e| ExploreError::InvalidConfig(e.to_string()))?;
        Ok(())
    }
}

/// One executed step.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LogRecord {
    pub step: u64,
    /// State the action was taken from.
    pub state: String,
    pub action_key: String,
    pub description: String,
    pub outcome: ExecutionOutcome,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result_state: Option<String>,
    pub reward_value: f64,
    pub reward_reason: RewardReason,
    pub attempts: u32,
    pub first_failed: bool,
    pub wall_ms: u64,
    /// Whether a frontier switch (recover or rotation) preceded this step.
    pub switched: bool,
}

/// Ordered step records plus run bookkeeping; serialized as JSON lines.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ExplorationLog {
    pub records: Vec<LogRecord>,
    pub started_ms: u64,
    pub finished_ms: u64,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl ExplorationLog {
    pub fn total_wall_ms(&self) -> u64 {
        self.finished_ms.saturating_sub(self.started_ms)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        let header = serde_json::json!({
            "started_ms": self.started_ms,
            "finished_ms": self.finished_ms,
            "warnings": self.warnings,
        });
        out.push_str(&header.to_string());
        out.push('\n');
        for record in &self.records {
            out.push_str(&serde_json::to_string(record).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<ExplorationLog, serde_json::Error> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let mut log = ExplorationLog::default();
        if let Some(first) = lines.next() {
            let header: serde_json::Value = serde_json::from_str(first)?;
            log.started_ms = header["started_ms"].as_u64().unwrap_or(0);
            log.finished_ms = header["finished_ms"].as_u64().unwrap_or(0);
            if let Some(warnings) = header["warnings"].as_array() {
                log.warnings = warnings
                    .iter()
                    .filter_map(|w| w.as_str().map(String::from))
                    .collect();
            }
        }
        for line in lines {
            log.records.push(serde_json::from_str(line)?);
        }
        Ok(log)
    }
}

/// States that still have untried candidates and are not marked exhausted,
/// oldest (earliest-discovered) first. A state whose candidates were never
/// proposed counts as having untried work.
pub fn frontier(graph: &KnowledgeGraph, store: &ExploredStore) -> Vec<String> {
    graph
        .nodes()
        .map(|n| n.digest().to_string())
        .filter(|digest| {
            !store.is_exhausted(digest)
                && match store.untried_for(digest) {
                    None => true,
                    Some(untried) => !untried.is_empty(),
                }
        })
        .collect()
}

/// Run the exploration loop until the frontier empties or the budget is hit.
pub fn explore(
    driver: &mut dyn AppDriver,
    reasoner: &dyn Reasoner,
    config: &ExplorationConfig,
    obs_store: &mut dyn ObservationStore,
) -> Result<(KnowledgeGraph, ExplorationLog, ExploredStore), ExploreError> {
    config.validate()?;
    let reward_config = config.reward_config();
    let executor_config = config.executor_config();
    let floor = config.rerank.priority_floor;

    // The start navigation shares the per-action retry budget; transient
    // faults at step zero should not kill the whole run.
    let mut start_attempts = 0u32;
    loop {
        start_attempts += 1;
        match driver.navigate(&config.start_url) {
            Ok(()) => break,
            Err(e) if e.is_retryable() && start_attempts <= config.max_retries => continue,
            Err(e) => return Err(ExploreError::DriverUnavailable(e.to_string())),
        }
    }
    let root_obs = driver
        .observe()
        .map_err(|e| ExploreError::DriverUnavailable(e.to_string()))?;
    let root_fp = fingerprint(&root_obs, &config.fingerprint)?;
    let root_digest = root_fp.digest.clone();
    let root_ref = obs_store.put(&root_obs);

    let meta = GraphMeta {
        app: config.start_url.clone(),
        config_hash: config.config_hash(),
        created_at: 0,
        fingerprint_algo: crate::FINGERPRINT_ALGO.to_string(),
    };
    let mut graph = KnowledgeGraph::new(
        StateNode::new(root_fp, driver.now_ms(), root_ref),
        meta,
    );
    let mut store = ExploredStore::new();
    store.mark_visited(&root_digest);

    let mut log = ExplorationLog {
        started_ms: driver.now_ms(),
        ..ExplorationLog::default()
    };

    // Driver position: the state the driver is known to sit on, with its
    // freshest observation. None forces a recover before the next step.
    let mut position: Option<(String, crate::state::Observation)> =
        Some((root_digest.clone(), root_obs));
    let mut consecutive: u32 = 0;
    let mut force_switch = false;
    let mut switched = false;
    let mut step_index: u64 = 0;

    loop {
        if let Some(budget) = config.budget {
            if step_index >= budget {
                log.warnings.push(format!("budget of {budget} steps reached"));
                break;
            }
        }
        let frontier_states = frontier(&graph, &store);
        let Some(oldest) = frontier_states.first() else {
            break;
        };

        // Oldest-first scheduling; a forced switch rotates past the current
        // state when any alternative exists.
        let mut target = oldest.clone();
        if force_switch {
            if let Some((cur, _)) = &position {
                if &target == cur && frontier_states.len() > 1 {
                    target = frontier_states[1].clone();
                }
            }
            force_switch = false;
        }

        let at_target = position.as_ref().is_some_and(|(cur, _)| cur == &target);
        if !at_target {
            let ok = recover(driver, &graph, &target, &executor_config, obs_store)?;
            switched = true;
            consecutive = 0;
            if !ok {
                store.mark_exhausted(&target);
                log.warnings
                    .push(format!("recovery to {} diverged; state exhausted", &target[..12]));
                position = None;
                continue;
            }
            let obs = driver
                .observe()
                .map_err(|e| ExploreError::DriverUnavailable(e.to_string()))?;
            position = Some((target.clone(), obs));
        }
        let (current, current_obs) = position.clone().expect("position set after recovery");

        let inference = infer_candidates(reasoner, &current_obs, &store, &config.fingerprint)?;
        log.warnings.extend(inference.warnings.iter().cloned());
        store.record_proposed(
            &current,
            inference.candidates.iter().map(|c| c.action.key()).collect(),
        );

        let ranked = rerank(&inference.candidates, &store, &current, &config.rerank);
        let novel: Vec<_> = ranked
            .iter()
            .filter(|r| r.novelty_term > 0.0)
            .cloned()
            .collect();
        let selected = select_next(&novel, config.actions_per_step, floor);
        if selected.is_empty() {
            // Nothing promising left here; the recorded rewards confirm the
            // path is not worth continuing.
            let recorded: Vec<_> = store
                .outcomes()
                .filter(|((s, _), _)| s == &current)
                .map(|(_, o)| o.reward)
                .collect();
            debug_assert!(
                !store.is_candidate_exhausted(&current)
                    || should_halt_path(&recorded, &reward_config)
                    || recorded.iter().any(|r| r.value > reward_config.min_reward)
            );
            store.mark_exhausted(&current);
            continue;
        }

        for action in selected {
            let step_started = driver.now_ms();
            let mut result = execute(driver, &action, &current_obs, &executor_config, obs_store)?;
            let first_failed = result.attempts > 1;
            let mut attempts_total = result.attempts;
            let mut reward = score(&result, &graph, &store, &reward_config);
            // Reward-level retrials: re-execute while the score sits in the
            // band just under the threshold and attempts remain.
            while should_retry(&reward, attempts_total, &reward_config) {
                let again = execute(driver, &action, &current_obs, &executor_config, obs_store)?;
                attempts_total += again.attempts;
                result = again;
                reward = score(&result, &graph, &store, &reward_config);
            }

            let result_digest = result
                .after
                .as_ref()
                .map(|f| f.digest.clone())
                .unwrap_or_else(|| current.clone());
            record_outcome(&mut store, &current, &action, &result_digest, reward);

            log.records.push(LogRecord {
                step: step_index,
                state: current.clone(),
                action_key: action.key(),
                description: action.description.clone(),
                outcome: result.outcome,
                result_state: result.after.as_ref().map(|f| f.digest.clone()),
                reward_value: reward.value,
                reward_reason: reward.reason,
                attempts: attempts_total,
                first_failed,
                wall_ms: driver.now_ms().saturating_sub(step_started),
                switched,
            });
            switched = false;
            step_index += 1;

            match result.outcome {
                ExecutionOutcome::Changed => {
                    let after_fp = result.after.clone().expect("changed result has after");
                    let after_digest = after_fp.digest.clone();
                    graph.add_state(StateNode::new(
                        after_fp,
                        driver.now_ms(),
                        result.observation_ref.clone().unwrap_or_default(),
                    ));
                    store.mark_visited(&after_digest);
                    graph
                        .add_transition(TransitionEdge {
                            from: current.clone(),
                            to: after_digest.clone(),
                            action: action.clone(),
                            reward: Some(reward),
                            attempts: attempts_total,
                            first_failed,
                        })
                        .expect("source state exists");
                    let after_obs = result.after_observation.clone().expect("changed has obs");
                    position = Some((after_digest, after_obs));
                    consecutive = 0;
                }
                ExecutionOutcome::Unchanged => {
                    consecutive += 1;
                    if let Some(obs) = result.after_observation.clone() {
                        position = Some((current.clone(), obs));
                    }
                }
                ExecutionOutcome::Failed => {
                    consecutive += 1;
                    // Driver state is unknown after a hard failure.
                    position = None;
                }
            }

            // Leaf-branch pruning: stop expanding states at the cap.
            if graph.out_degree(&current) >= config.max_leaf_branches as usize {
                store.mark_exhausted(&current);
            }
        }

        if consecutive >= config.max_consecutive_actions {
            force_switch = true;
            consecutive = 0;
            switched = true;
        }
    }

    let mut meta = graph.meta().clone();
    meta.created_at = driver.now_ms();
    graph.set_meta(meta);
    log.finished_ms = driver.now_ms();
    Ok((graph, log, store))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference::HeuristicReasoner;
    use crate::obs_store::MemObsStore;
    use crate::simapp::{load_spec, SimDriver};

    fn explore_fixture(source: &str, seed: u64) -> (KnowledgeGraph, ExplorationLog, ExploredStore) {
        let spec = load_spec(source).unwrap();
        let mut driver = SimDriver::new(spec, seed);
        let config = ExplorationConfig {
            seed,
            start_url: driver.start_url(),
            ..ExplorationConfig::default()
        };
        let mut obs = MemObsStore::new();
        explore(&mut driver, &HeuristicReasoner::default(), &config, &mut obs).unwrap()
    }

    const SINGLE: &str = r#"
        name = "single"
        base_url = "http://one.local"
        initial_state = "only"

        [[states]]
        id = "only"
        path = "/"
        title = "Only"
        text = "Nothing here."
    "#;

    #[test]
    fn single_static_page_terminates_with_one_node() {
        let (graph, log, _) = explore_fixture(SINGLE, 7);
        assert_eq!(graph.node_count(), 1);
        assert_eq!(graph.edge_count(), 0);
        assert!(log.records.is_empty());
    }

    const TWO_HOP: &str = r#"
        name = "twohop"
        base_url = "http://two.local"
        initial_state = "a"

        [[states]]
        id = "a"
        path = "/"
        title = "A"
        links = [{ id = "go", href = "/b", text = "B" }]

        [[states]]
        id = "b"
        path = "/b"
        title = "B"
        buttons = [{ id = "press", text = "Press" }]

        [[states]]
        id = "c"
        path = "/c"
        title = "C"

        [[transitions]]
        from = "b"
        action = "click:#press"
        to = "c"
    "#;

    #[test]
    fn explores_links_and_buttons_to_exhaustion() {
        let (graph, log, store) = explore_fixture(TWO_HOP, 7);
        assert_eq!(graph.node_count(), 3);
        assert_eq!(graph.edge_count(), 2);
        assert_eq!(log.records.len(), 2);
        assert!(frontier(&graph, &store).is_empty());
        // Both steps discovered new states.
        assert!(log
            .records
            .iter()
            .all(|r| r.reward_reason == RewardReason::NewState && r.reward_value == 1.0));
    }

    #[test]
    fn same_seed_gives_identical_logs() {
        let (g1, l1, _) = explore_fixture(TWO_HOP, 42);
        let (g2, l2, _) = explore_fixture(TWO_HOP, 42);
        assert!(g1.structural_eq(&g2));
        assert_eq!(
            serde_json::to_string(&l1.records).unwrap(),
            serde_json::to_string(&l2.records).unwrap()
        );
    }

    #[test]
    fn budget_caps_total_steps() {
        let spec = load_spec(TWO_HOP).unwrap();
        let mut driver = SimDriver::new(spec, 7);
        let config = ExplorationConfig {
            start_url: driver.start_url(),
            budget: Some(1),
            ..ExplorationConfig::default()
        };
        let mut obs = MemObsStore::new();
        let (graph, log, _) =
            explore(&mut driver, &HeuristicReasoner::default(), &config, &mut obs).unwrap();
        assert_eq!(log.records.len(), 1);
        assert_eq!(graph.node_count(), 2);
        assert!(log.warnings.iter().any(|w| w.contains("budget")));
    }

    const MANY_NOOPS: &str = r#"
        name = "noops"
        base_url = "http://noop.local"
        initial_state = "root"

        [session_vars]
        f1 = ""
        f2 = ""
        f3 = ""
        f4 = ""
        f5 = ""
        f6 = ""
        f7 = ""

        [[states]]
        id = "root"
        path = "/"
        title = "Forms"
        forms = [
          { id = "big-form", action = "/submit", fields = [
            { name = "f1", var = "f1" }, { name = "f2", var = "f2" },
            { name = "f3", var = "f3" }, { name = "f4", var = "f4" },
            { name = "f5", var = "f5" }, { name = "f6", var = "f6" },
            { name = "f7", var = "f7" },
          ] },
        ]

        [[states]]
        id = "done"
        path = "/done"
        title = "Done"

        [[transitions]]
        from = "root"
        action = "submit:#big-form"
        to = "done"
    "#;

    #[test]
    fn consecutive_noop_runs_respect_the_cap() {
        let (graph, log, _) = explore_fixture(MANY_NOOPS, 3);
        assert_eq!(graph.node_count(), 2);
        // 7 fills (no-ops) + 1 submit; runs of same-state steps between
        // switch markers never exceed the default cap of 5.
        let mut run = 0u32;
        let mut max_run = 0u32;
        for record in &log.records {
            if record.switched {
                run = 0;
            }
            run += 1;
            max_run = max_run.max(run);
        }
        assert!(log.records.len() >= 8);
        assert!(
            max_run <= 5,
            "same-state run of {max_run} exceeds max_consecutive_actions"
        );
    }

    #[test]
    fn leaf_branch_cap_stops_expansion() {
        let spec = load_spec(TWO_HOP).unwrap();
        let mut driver = SimDriver::new(spec, 7);
        let config = ExplorationConfig {
            start_url: driver.start_url(),
            max_leaf_branches: 1,
            ..ExplorationConfig::default()
        };
        let mut obs = MemObsStore::new();
        let (graph, _, store) =
            explore(&mut driver, &HeuristicReasoner::default(), &config, &mut obs).unwrap();
        for node in graph.nodes() {
            assert!(graph.out_degree(node.digest()) <= 1);
        }
        assert!(store.is_exhausted(graph.root()));
    }

    #[test]
    fn frontier_matches_brute_force_recomputation() {
        let (graph, _, store) = explore_fixture(TWO_HOP, 9);
        let expected: Vec<String> = graph
            .nodes()
            .map(|n| n.digest().to_string())
            .filter(|d| {
                if store.is_exhausted(d) {
                    return false;
                }
                match store.proposed_for(d) {
                    None => true,
                    Some(keys) => keys.iter().any(|k| !store.was_executed(d, k)),
                }
            })
            .collect();
        assert_eq!(frontier(&graph, &store), expected);
    }

    #[test]
    fn fresh_graph_frontier_is_root_only() {
        let spec = load_spec(SINGLE).unwrap();
        let mut driver = SimDriver::new(spec, 1);
        driver.navigate("http://one.local/").unwrap();
        let obs = driver.observe().unwrap();
        let fp = fingerprint(&obs, &FingerprintConfig::default()).unwrap();
        let graph = KnowledgeGraph::new(StateNode::new(fp, 0, "r".into()), GraphMeta::default());
        let store = ExploredStore::new();
        assert_eq!(frontier(&graph, &store), vec![graph.root().to_string()]);
    }
}
