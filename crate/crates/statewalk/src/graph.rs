//! The knowledge graph: fingerprinted states as nodes, actions as edges.
//!
//! Nodes are only ever added together with the observation that produced
//! them; edges are only added when their source already exists, so every
//! node stays reachable from the root by construction. The exploration loop
//! is the sole mutator; reads happen on `&` borrows or cloned snapshots.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::reward::RewardScore;
use crate::state::{Action, StateFingerprint};

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("transition source state {0} is not in the graph")]
    MissingSourceState(String),
}

/// One unique application state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateNode {
    pub fingerprint: StateFingerprint,
    /// Driver-clock timestamp (ms) of first discovery.
    pub first_seen_at: u64,
    /// Content-address of the full observation in the observation store.
    pub observation_ref: String,
    /// How many times exploration landed on this state.
    pub visit_count: u64,
}

impl StateNode {
    pub fn new(fingerprint: StateFingerprint, first_seen_at: u64, observation_ref: String) -> Self {
        StateNode {
            fingerprint,
            first_seen_at,
            observation_ref,
            visit_count: 1,
        }
    }

    pub fn digest(&self) -> &str {
        &self.fingerprint.digest
    }
}

/// A user action connecting two states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionEdge {
    /// Digest of the source state.
    pub from: String,
    /// Digest of the target state.
    pub to: String,
    pub action: Action,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reward: Option<RewardScore>,
    /// Total execution attempts behind this edge (at least 1).
    pub attempts: u32,
    /// Whether the first attempt failed before a later one succeeded.
    pub first_failed: bool,
}

impl TransitionEdge {
    /// Identity under which duplicate insertions collapse.
    pub fn key(&self) -> (String, String, String) {
        (self.from.clone(), self.action.key(), self.to.clone())
    }
}

/// Free-form provenance carried inside the graph file.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphMeta {
    /// Application name or start URL.
    pub app: String,
    /// Digest of the configuration the graph was built under.
    pub config_hash: String,
    /// Driver-clock timestamp (ms) when the graph was finalized.
    pub created_at: u64,
    /// Fingerprint algorithm identifier, e.g. "sha256/v1".
    pub fingerprint_algo: String,
}

/// Directed multigraph of states and transitions with a designated root.
#[derive(Debug, Clone)]
pub struct KnowledgeGraph {
    root: String,
    nodes: Vec<StateNode>,
    node_index: HashMap<String, usize>,
    edges: Vec<TransitionEdge>,
    edge_index: HashMap<(String, String, String), usize>,
    meta: GraphMeta,
}

impl KnowledgeGraph {
    pub fn new(root: StateNode, meta: GraphMeta) -> Self {
        let digest = root.digest().to_string();
        let mut node_index = HashMap::new();
        node_index.insert(digest.clone(), 0);
        KnowledgeGraph {
            root: digest,
            nodes: vec![root],
            node_index,
            edges: Vec::new(),
            edge_index: HashMap::new(),
            meta,
        }
    }

    pub fn root(&self) -> &str {
        &self.root
    }

    pub fn root_node(&self) -> &StateNode {
        &self.nodes[self.node_index[&self.root]]
    }

    pub fn meta(&self) -> &GraphMeta {
        &self.meta
    }

    pub fn set_meta(&mut self, meta: GraphMeta) {
        self.meta = meta;
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn contains(&self, digest: &str) -> bool {
        self.node_index.contains_key(digest)
    }

    pub fn node(&self, digest: &str) -> Option<&StateNode> {
        self.node_index.get(digest).map(|&i| &self.nodes[i])
    }

    /// Nodes in insertion (discovery) order.
    pub fn nodes(&self) -> impl Iterator<Item = &StateNode> {
        self.nodes.iter()
    }

    /// Edges in insertion order.
    pub fn edges(&self) -> impl Iterator<Item = &TransitionEdge> {
        self.edges.iter()
    }

    /// Insert a node, or bump its visit count when already present.
    /// Returns true when the node was newly inserted.
    pub fn add_state(&mut self, node: StateNode) -> bool {
        match self.node_index.get(node.digest()) {
            Some(&i) => {
                self.nodes[i].visit_count += 1;
                false
            }
            None => {
                let digest = node.digest().to_string();
                self.node_index.insert(digest, self.nodes.len());
                self.nodes.push(node);
                true
            }
        }
    }

    /// Insert an edge. The source must already exist; an unknown target gets
    /// a minimal node synthesized from the edge (callers with the full
    /// observation should `add_state` first). Duplicate (from, action, to)
    /// triples collapse, keeping the larger attempt count and latest reward.
    pub fn add_transition(&mut self, edge: TransitionEdge) -> Result<(), GraphError> {
        if !self.contains(&edge.from) {
            return Err(GraphError::MissingSourceState(edge.from.clone()));
        }
        if !self.contains(&edge.to) {
            let stub = StateNode::new(
                StateFingerprint {
                    digest: edge.to.clone(),
                    url_path: String::new(),
                    dom_signature: String::new(),
                    metadata_keys: Vec::new(),
                },
                0,
                String::new(),
            );
            self.add_state(stub);
        }
        match self.edge_index.get(&edge.key()) {
            Some(&i) => {
                let existing = &mut self.edges[i];
                existing.attempts = existing.attempts.max(edge.attempts);
                existing.first_failed = existing.first_failed || edge.first_failed;
                if edge.reward.is_some() {
                    existing.reward = edge.reward;
                }
            }
            None => {
                self.edge_index.insert(edge.key(), self.edges.len());
                self.edges.push(edge);
            }
        }
        Ok(())
    }

    pub fn out_degree(&self, digest: &str) -> usize {
        self.edges.iter().filter(|e| e.from == digest).count()
    }

    pub fn out_edges<'a>(&'a self, digest: &'a str) -> impl Iterator<Item = &'a TransitionEdge> {
        self.edges.iter().filter(move |e| e.from == digest)
    }

    /// States with no outgoing transitions, in discovery order.
    pub fn leaves(&self) -> Vec<&StateFingerprint> {
        self.nodes
            .iter()
            .filter(|n| self.out_degree(n.digest()) == 0)
            .map(|n| &n.fingerprint)
            .collect()
    }

    /// Number of distinct (from, to) ordered pairs with at least one edge.
    pub fn distinct_pair_count(&self) -> usize {
        let mut pairs: Vec<(&str, &str)> = self
            .edges
            .iter()
            .map(|e| (e.from.as_str(), e.to.as_str()))
            .collect();
        pairs.sort();
        pairs.dedup();
        pairs.len()
    }

    /// The first inbound edge of a node in insertion order: the edge that
    /// discovered it. The root has none.
    pub fn discovery_edge(&self, digest: &str) -> Option<&TransitionEdge> {
        self.edges.iter().find(|e| e.to == digest && e.from != digest)
    }

    /// Root-to-target path along first-discovery edges. Empty for the root;
    /// None when the target is missing or a discovery chain cannot be
    /// traced back to the root.
    pub fn discovery_path(&self, target: &str) -> Option<Vec<&TransitionEdge>> {
        if !self.contains(target) {
            return None;
        }
        let mut path = Vec::new();
        let mut cursor = target.to_string();
        while cursor != self.root {
            let edge = self.discovery_edge(&cursor)?;
            path.push(edge);
            cursor = edge.from.clone();
            if path.len() > self.nodes.len() {
                return None;
            }
        }
        path.reverse();
        Some(path)
    }

    /// Digests reachable from the root, following edges.
    pub fn reachable_from_root(&self) -> Vec<&str> {
        let mut seen: Vec<&str> = vec![self.root.as_str()];
        let mut queue = std::collections::VecDeque::from([self.root.as_str()]);
        while let Some(cur) = queue.pop_front() {
            for edge in self.edges.iter().filter(|e| e.from == cur) {
                if !seen.contains(&edge.to.as_str()) {
                    seen.push(edge.to.as_str());
                    queue.push_back(edge.to.as_str());
                }
            }
        }
        seen
    }

    /// Rebuild a graph from persisted parts, preserving order and counts.
    pub fn from_parts(
        root: String,
        nodes: Vec<StateNode>,
        edges: Vec<TransitionEdge>,
        meta: GraphMeta,
    ) -> Result<Self, String> {
        let mut node_index = HashMap::new();
        for (i, node) in nodes.iter().enumerate() {
            if node_index.insert(node.digest().to_string(), i).is_some() {
                return Err(format!("duplicate node fingerprint {}", node.digest()));
            }
        }
        if !node_index.contains_key(&root) {
            return Err(format!("root {root} is not among the nodes"));
        }
        let mut edge_index = HashMap::new();
        for (i, edge) in edges.iter().enumerate() {
            if !node_index.contains_key(&edge.from) {
                return Err(format!("edge source {} is not among the nodes", edge.from));
            }
            if !node_index.contains_key(&edge.to) {
                return Err(format!("edge target {} is not among the nodes", edge.to));
            }
            edge_index.insert(edge.key(), i);
        }
        Ok(KnowledgeGraph {
            root,
            nodes,
            node_index,
            edges,
            edge_index,
            meta,
        })
    }

    /// Structural equality: same root, node fingerprint set, and edge
    /// (from, action, to, attempts, first_failed, reward) multiset. Node
    /// bookkeeping fields and meta are not compared; this is the contract
    /// export/import round-trips preserve across all formats.
    pub fn structural_eq(&self, other: &KnowledgeGraph) -> bool {
        if self.root != other.root || self.nodes.len() != other.nodes.len() {
            return false;
        }
        let mut mine: Vec<&String> = self.nodes.iter().map(|n| &n.fingerprint.digest).collect();
        let mut theirs: Vec<&String> = other.nodes.iter().map(|n| &n.fingerprint.digest).collect();
        mine.sort();
        theirs.sort();
        if mine != theirs {
            return false;
        }
        let edge_key = |e: &TransitionEdge| {
            (
                e.from.clone(),
                e.action.key(),
                e.to.clone(),
                e.attempts,
                e.first_failed,
                e.reward.map(|r| (r.value.to_bits(), format!("{:?}", r.reason))),
            )
        };
        let mut my_edges: Vec<_> = self.edges.iter().map(edge_key).collect();
        let mut their_edges: Vec<_> = other.edges.iter().map(edge_key).collect();
        my_edges.sort();
        their_edges.sort();
        my_edges == their_edges
    }
}
