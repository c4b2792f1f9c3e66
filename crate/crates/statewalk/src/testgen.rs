//! Procedural test-case generation from root-to-leaf graph paths.
//!
//! Every root-to-leaf path is one user flow; a test case replays the
//! path's actions and asserts the state fingerprint after each step.
//! Enumeration treats the graph as a DAG: edges closing a cycle back onto
//! the current path are skipped, and paths are emitted in depth-first,
//! edge-insertion order, capped by a configurable budget.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::driver::AppDriver;
use crate::executor::{execute, ExecutorConfig, ExecutorError};
use crate::graph::{KnowledgeGraph, TransitionEdge};
use crate::obs_store::ObservationStore;
use crate::state::{fingerprint, Action};

#[derive(Debug, Error)]
pub enum TestGenError {
    #[error("malformed test case file: {0}")]
    MalformedCase(String),
    #[error(transparent)]
    Executor(#[from] ExecutorError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// One step: perform the action, expect to land on the fingerprint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestStep {
    #[serde(flatten)]
    pub action: Action,
    pub expected_fingerprint: String,
}

/// An executable user-flow test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestCase {
    /// Stable hash of the path's edge sequence.
    pub id: String,
    pub title: String,
    #[serde(default)]
    pub tags: Vec<String>,
    pub steps: Vec<TestStep>,
}

impl TestCase {
    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("test case serializes")
    }

    pub fn from_toml(text: &str) -> Result<TestCase, TestGenError> {
        toml::from_str(text).map_err(|e| TestGenError::MalformedCase(e.to_string()))
    }
}

/// Substring rule assigning a tag to matching flows.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TagRule {
    pub pattern: String,
    pub tag: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TestGenConfig {
    /// Maximum number of paths enumerated before truncation.
    pub path_budget: usize,
    pub tag_rules: Vec<TagRule>,
}

impl Default for TestGenConfig {
    fn default() -> Self {
        TestGenConfig {
            path_budget: 1000,
            tag_rules: vec![
                TagRule { pattern: "checkout".into(), tag: "checkout".into() },
                TagRule { pattern: "purchase".into(), tag: "checkout".into() },
                TagRule { pattern: "cart".into(), tag: "cart".into() },
                TagRule { pattern: "login".into(), tag: "auth".into() },
                TagRule { pattern: "sign in".into(), tag: "auth".into() },
                TagRule { pattern: "search".into(), tag: "search".into() },
            ],
        }
    }
}

/// All simple root-to-leaf edge paths, plus whether the budget truncated
/// the enumeration.
pub fn enumerate_paths(
    graph: &KnowledgeGraph,
    budget: usize,
) -> (Vec<Vec<&TransitionEdge>>, bool) {
    let mut paths = Vec::new();
    let mut truncated = false;
    let mut on_path: Vec<&str> = vec![graph.root()];
    let mut current: Vec<&TransitionEdge> = Vec::new();

    fn walk<'g>(
        graph: &'g KnowledgeGraph,
        node: &'g str,
        on_path: &mut Vec<&'g str>,
        current: &mut Vec<&'g TransitionEdge>,
        paths: &mut Vec<Vec<&'g TransitionEdge>>,
        truncated: &mut bool,
        budget: usize,
    ) {
        if paths.len() >= budget {
            *truncated = true;
            return;
        }
        let traversable: Vec<&TransitionEdge> = graph
            .out_edges(node)
            .filter(|e| !on_path.contains(&e.to.as_str()))
            .collect();
        if traversable.is_empty() {
            if !current.is_empty() {
                paths.push(current.clone());
            }
            return;
        }
        for edge in traversable {
            if paths.len() >= budget {
                *truncated = true;
                return;
            }
            on_path.push(&edge.to);
            current.push(edge);
            walk(graph, &edge.to, on_path, current, paths, truncated, budget);
            current.pop();
            on_path.pop();
        }
    }

    walk(
        graph,
        graph.root(),
        &mut on_path,
        &mut current,
        &mut paths,
        &mut truncated,
        budget,
    );
    (paths, truncated)
}

fn case_id(path: &[&TransitionEdge]) -> String {
    let joined = path
        .iter()
        .map(|e| format!("{}>{}>{}", e.from, e.action.key(), e.to))
        .collect::<Vec<_>>()
        .join("|");
    crate::state::sha256_hex(&[b"statewalk-case-v1", joined.as_bytes()])[..16].to_string()
}

/// One test case per enumerated root-to-leaf path. Deterministic: the same
/// graph always produces byte-identical cases.
pub fn generate(graph: &KnowledgeGraph, config: &TestGenConfig) -> Vec<TestCase> {
    let (paths, truncated) = enumerate_paths(graph, config.path_budget);
    if truncated {
        log::warn!(
            "path enumeration truncated at {} paths; raise path_budget for full coverage",
            config.path_budget
        );
    }
    paths
        .iter()
        .map(|path| {
            let title = path
                .iter()
                .map(|e| e.action.description.as_str())
                .collect::<Vec<_>>()
                .join(" -> ");
            let haystack = {
                let mut h = title.to_ascii_lowercase();
                for edge in path {
                    if let Some(node) = graph.node(&edge.to) {
                        h.push(' ');
                        h.push_str(&node.fingerprint.url_path.to_ascii_lowercase());
                    }
                }
                h
            };
            let mut tags: Vec<String> = config
                .tag_rules
                .iter()
                .filter(|rule| haystack.contains(&rule.pattern.to_ascii_lowercase()))
                .map(|rule| rule.tag.clone())
                .collect();
            tags.sort();
            tags.dedup();
            TestCase {
                id: case_id(path),
                title,
                tags,
                steps: path
                    .iter()
                    .map(|edge| TestStep {
                        action: edge.action.clone(),
                        expected_fingerprint: edge.to.clone(),
                    })
                    .collect(),
            }
        })
        .collect()
}

/// Write one `<id>.case` file per test case into `dir` (atomically).
pub fn write_cases(cases: &[TestCase], dir: &std::path::Path) -> Result<Vec<std::path::PathBuf>, TestGenError> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::with_capacity(cases.len());
    for case in cases {
        let path = dir.join(format!("{}.case", case.id));
        crate::graph_io::write_atomic(&path, &case.to_toml())?;
        written.push(path);
    }
    Ok(written)
}

pub fn read_case(path: &std::path::Path) -> Result<TestCase, TestGenError> {
    let text = std::fs::read_to_string(path)?;
    TestCase::from_toml(&text)
}

/// Replay outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Verdict {
    Pass,
    /// Zero-based index of the failing step plus a diagnostic.
    FailAt { step: usize, reason: String },
}

impl Verdict {
    pub fn passed(&self) -> bool {
        matches!(self, Verdict::Pass)
    }
}

/// Replay a test case from the initial state, comparing the fingerprint
/// after every step to the recorded expectation. Failures are verdict
/// data, never errors; only driver-session loss raises.
pub fn replay(
    driver: &mut dyn AppDriver,
    case: &TestCase,
    config: &ExecutorConfig,
    obs_store: &mut dyn ObservationStore,
) -> Result<Verdict, TestGenError> {
    if let Err(e) = driver.reset() {
        return Err(TestGenError::Executor(crate::executor::session_error(e)));
    }
    let mut current_obs = match driver.observe() {
        Ok(obs) => obs,
        Err(e) => return Err(TestGenError::Executor(crate::executor::session_error(e))),
    };
    for (index, step) in case.steps.iter().enumerate() {
        let result = execute(driver, &step.action, &current_obs, config, obs_store)?;
        if !result.succeeded() {
            return Ok(Verdict::FailAt {
                step: index,
                reason: result
                    .error
                    .unwrap_or_else(|| "action failed".to_string()),
            });
        }
        let after_obs = result.after_observation.expect("successful step has observation");
        let landed = fingerprint(&after_obs, &config.fingerprint)
            .map_err(|e| TestGenError::MalformedCase(e.to_string()))?;
        if landed.digest != step.expected_fingerprint {
            return Ok(Verdict::FailAt {
                step: index,
                reason: format!(
                    "expected state {} but landed on {} ({})",
                    &step.expected_fingerprint[..12.min(step.expected_fingerprint.len())],
                    &landed.digest[..12],
                    landed.url_path
                ),
            });
        }
        current_obs = after_obs;
    }
    Ok(Verdict::Pass)
}
