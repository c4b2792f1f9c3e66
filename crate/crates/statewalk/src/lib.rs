//! Exploration engine that represents a web application as a knowledge graph.
//!
//! Nodes are fingerprinted application states, edges are the user actions that
//! transition between them. The graph is built by a reward-guided loop: infer
//! candidate actions for the current state, rerank them by entropy/expected
//! reward/novelty, execute the best one through an application driver, score
//! the outcome, and record it. A traditional queue-based hyperlink crawler is
//! included as the comparison baseline, along with graph metrics and
//! procedural test-case generation from root-to-leaf paths.
//!
//! Everything is verifiable at desk scale against deterministic in-process
//! simulated applications (see [`simapp`]), so no browser is required for
//! tests. A W3C WebDriver client ([`webdriver`]) covers real targets.

pub mod baseline;
pub mod config;
pub mod dom;
pub mod driver;
pub mod executor;
pub mod explorer;
pub mod graph;
pub mod graph_io;
pub mod inference;
pub mod metrics;
pub mod obs_store;
pub mod remote;
pub mod rerank;
pub mod reward;
pub mod simapp;
pub mod state;
pub mod testgen;
pub mod webdriver;

pub use config::Config;
pub use driver::{AppDriver, DriverError};
pub use graph::{KnowledgeGraph, StateNode, TransitionEdge};
pub use state::{Action, ActionType, FingerprintConfig, Observation, StateDelta, StateFingerprint};

/// Identifier recorded in graph metadata so persisted graphs are
/// self-describing about how fingerprints were computed.
pub const FINGERPRINT_ALGO: &str = "sha256/v1";
