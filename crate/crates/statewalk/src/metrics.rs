//! Evaluation metrics over knowledge graphs and run logs.
//!
//! Graph metrics treat the graph as directed and unweighted. Multi-edges
//! between the same ordered pair count once for density and path metrics
//! (the pair either is or is not connected) but each counts in edge
//! complexity, which measures captured interactions.

use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use thiserror::Error;

use crate::executor::ExecutionOutcome;
use crate::explorer::ExplorationLog;
use crate::graph::KnowledgeGraph;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("malformed comparison CSV at line {line}: {message}")]
    MalformedCsv { line: usize, message: String },
}

/// The seven evaluation metrics for one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub state_coverage: usize,
    pub edge_complexity: usize,
    /// Absent when no action ever failed on its first attempt.
    pub failure_recovery_rate: Option<f64>,
    pub time_to_completion_s: f64,
    pub graph_density: f64,
    pub avg_shortest_path: f64,
    pub avg_betweenness: f64,
}

/// Number of unique states visited.
pub fn state_coverage(graph: &KnowledgeGraph) -> usize {
    graph.node_count()
}

/// Total interactions captured: distinct (from, action, to) triples.
pub fn edge_complexity(graph: &KnowledgeGraph) -> usize {
    graph.edge_count()
}

/// Ratio of first-attempt failures that still succeeded within the retry
/// budget. Absent when nothing ever failed on the first attempt.
pub fn failure_recovery_rate(log: &ExplorationLog) -> Option<f64> {
    let first_failed: Vec<_> = log.records.iter().filter(|r| r.first_failed).collect();
    if first_failed.is_empty() {
        return None;
    }
    let recovered = first_failed
        .iter()
        .filter(|r| r.outcome != ExecutionOutcome::Failed)
        .count();
    Some(recovered as f64 / first_failed.len() as f64)
}

pub fn time_to_completion_s(log: &ExplorationLog) -> f64 {
    log.total_wall_ms() as f64 / 1000.0
}

/// Directed density: connected ordered pairs over n(n-1). Self-loops are
/// outside the pair space. Zero for graphs with fewer than two nodes.
pub fn graph_density(graph: &KnowledgeGraph) -> f64 {
    let n = graph.node_count();
    if n < 2 {
        return 0.0;
    }
    let mut pairs: Vec<(&str, &str)> = graph
        .edges()
        .filter(|e| e.from != e.to)
        .map(|e| (e.from.as_str(), e.to.as_str()))
        .collect();
    pairs.sort();
    pairs.dedup();
    pairs.len() as f64 / (n * (n - 1)) as f64
}

/// Directed adjacency lists over deduplicated pairs, indexed by node
/// discovery order.
fn adjacency(graph: &KnowledgeGraph) -> Vec<Vec<usize>> {
    let index: std::collections::HashMap<&str, usize> = graph
        .nodes()
        .enumerate()
        .map(|(i, n)| (n.digest(), i))
        .collect();
    let mut adj = vec![Vec::new(); graph.node_count()];
    for edge in graph.edges() {
        if edge.from == edge.to {
            continue;
        }
        let (f, t) = (index[edge.from.as_str()], index[edge.to.as_str()]);
        if !adj[f].contains(&t) {
            adj[f].push(t);
        }
    }
    for list in &mut adj {
        list.sort_unstable();
    }
    adj
}

fn bfs_distances(adj: &[Vec<usize>], source: usize) -> Vec<Option<usize>> {
    let mut dist = vec![None; adj.len()];
    dist[source] = Some(0);
    let mut queue = VecDeque::from([source]);
    while let Some(v) = queue.pop_front() {
        let d = dist[v].expect("queued nodes have distances");
        for &w in &adj[v] {
            if dist[w].is_none() {
                dist[w] = Some(d + 1);
                queue.push_back(w);
            }
        }
    }
    dist
}

/// Mean directed shortest-path length over all ordered pairs with a finite
/// path; unreachable pairs are excluded. Zero when no pair is connected.
pub fn avg_shortest_path(graph: &KnowledgeGraph) -> f64 {
    let adj = adjacency(graph);
    let n = adj.len();
    if n < 2 {
        return 0.0;
    }
    let mut total = 0usize;
    let mut pairs = 0usize;
    for source in 0..n {
        for (target, dist) in bfs_distances(&adj, source).into_iter().enumerate() {
            if target == source {
                continue;
            }
            if let Some(d) = dist {
                total += d;
                pairs += 1;
            }
        }
    }
    if pairs == 0 {
        0.0
    } else {
        total as f64 / pairs as f64
    }
}

/// Mean normalized betweenness centrality (Brandes, directed, unweighted).
///
/// Per node: the sum over ordered pairs (s, t), s != t != v, of the
/// fraction of all shortest s-t paths passing through v, normalized by
/// (n-1)(n-2). Zero for graphs with fewer than three nodes.
pub fn avg_betweenness(graph: &KnowledgeGraph) -> f64 {
    let adj = adjacency(graph);
    let n = adj.len();
    if n < 3 {
        return 0.0;
    }
    let mut betweenness = vec![0.0f64; n];

    for source in 0..n {
        let mut stack: Vec<usize> = Vec::new();
        let mut preds: Vec<Vec<usize>> = vec![Vec::new(); n];
        let mut sigma = vec![0.0f64; n];
        let mut dist: Vec<i64> = vec![-1; n];
        sigma[source] = 1.0;
        dist[source] = 0;
        let mut queue = VecDeque::from([source]);
        while let Some(v) = queue.pop_front() {
            stack.push(v);
            for &w in &adj[v] {
                if dist[w] < 0 {
                    dist[w] = dist[v] + 1;
                    queue.push_back(w);
                }
                if dist[w] == dist[v] + 1 {
                    sigma[w] += sigma[v];
                    preds[w].push(v);
                }
            }
        }
        let mut delta = vec![0.0f64; n];
        while let Some(w) = stack.pop() {
            for &v in &preds[w] {
                delta[v] += (sigma[v] / sigma[w]) * (1.0 + delta[w]);
            }
            if w != source {
                betweenness[w] += delta[w];
            }
        }
    }

    let norm = ((n - 1) * (n - 2)) as f64;
    betweenness.iter().map(|b| b / norm).sum::<f64>() / n as f64
}

/// Compute all seven metrics. The log contributes recovery rate and timing;
/// without one those fields are absent/zero.
pub fn compute(graph: &KnowledgeGraph, log: Option<&ExplorationLog>) -> MetricsReport {
    MetricsReport {
        state_coverage: state_coverage(graph),
        edge_complexity: edge_complexity(graph),
        failure_recovery_rate: log.and_then(failure_recovery_rate),
        time_to_completion_s: log.map(time_to_completion_s).unwrap_or(0.0),
        graph_density: graph_density(graph),
        avg_shortest_path: avg_shortest_path(graph),
        avg_betweenness: avg_betweenness(graph),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Winner {
    A,
    B,
    Tie,
}

/// Which direction is better for each metric, matching the conventions of
/// the comparison table this mirrors: more states, more captured
/// interactions, higher recovery, less time, lower density, longer paths,
/// higher centrality.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Direction {
    Higher,
    Lower,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub metric: String,
    pub a: Option<f64>,
    pub b: Option<f64>,
    pub winner: Winner,
}

/// Side-by-side comparison of two runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub label_a: String,
    pub label_b: String,
    pub rows: Vec<ComparisonRow>,
}

pub fn compare(a: &MetricsReport, b: &MetricsReport) -> ComparisonTable {
    compare_labeled(a, b, "a", "b")
}

pub fn compare_labeled(
    a: &MetricsReport,
    b: &MetricsReport,
    label_a: &str,
    label_b: &str,
) -> ComparisonTable {
    let spec: [(&str, Option<f64>, Option<f64>, Direction); 7] = [
        (
            "state_coverage",
            Some(a.state_coverage as f64),
            Some(b.state_coverage as f64),
            Direction::Higher,
        ),
        (
            "edge_complexity",
            Some(a.edge_complexity as f64),
            Some(b.edge_complexity as f64),
            Direction::Higher,
        ),
        (
            "failure_recovery_rate",
            a.failure_recovery_rate,
            b.failure_recovery_rate,
            Direction::Higher,
        ),
        (
            "time_to_completion_s",
            Some(a.time_to_completion_s),
            Some(b.time_to_completion_s),
            Direction::Lower,
        ),
        (
            "graph_density",
            Some(a.graph_density),
            Some(b.graph_density),
            Direction::Lower,
        ),
        (
            "avg_shortest_path",
            Some(a.avg_shortest_path),
            Some(b.avg_shortest_path),
            Direction::Higher,
        ),
        (
            "avg_betweenness",
            Some(a.avg_betweenness),
            Some(b.avg_betweenness),
            Direction::Higher,
        ),
    ];
    let rows = spec
        .into_iter()
        .map(|(metric, va, vb, direction)| {
            let winner = match (va, vb) {
                (None, None) => Winner::Tie,
                (Some(_), None) => Winner::A,
                (None, Some(_)) => Winner::B,
                (Some(x), Some(y)) if x == y => Winner::Tie,
                (Some(x), Some(y)) => match direction {
                    Direction::Higher => {
                        if x > y {
                            Winner::A
                        } else {
                            Winner::B
                        }
                    }
                    Direction::Lower => {
                        if x < y {
                            Winner::A
                        } else {
                            Winner::B
                        }
                    }
                },
            };
            ComparisonRow {
                metric: metric.to_string(),
                a: va,
                b: vb,
                winner,
            }
        })
        .collect();
    ComparisonTable {
        label_a: label_a.to_string(),
        label_b: label_b.to_string(),
        rows,
    }
}

fn format_value(value: Option<f64>) -> String {
    match value {
        None => "n/a".to_string(),
        Some(v) => {
            if v.fract() == 0.0 && v.abs() < 1e12 {
                format!("{}", v as i64)
            } else {
                format!("{v:.4}")
            }
        }
    }
}

impl ComparisonTable {
    /// Aligned text table with a winner marker per row.
    pub fn to_text(&self) -> String {
        let metric_width = self
            .rows
            .iter()
            .map(|r| r.metric.len())
            .max()
            .unwrap_or(6)
            .max("metric".len());
        let col = 16usize.max(self.label_a.len() + 2).max(self.label_b.len() + 2);
        let mut out = String::new();
        out.push_str(&format!(
            "{:<metric_width$}  {:>col$}  {:>col$}  winner\n",
            "metric", self.label_a, self.label_b
        ));
        for row in &self.rows {
            let (mark_a, mark_b) = match row.winner {
                Winner::A => ("*", " "),
                Winner::B => (" ", "*"),
                Winner::Tie => (" ", " "),
            };
            let winner = match row.winner {
                Winner::A => &self.label_a,
                Winner::B => &self.label_b,
                Winner::Tie => "tie",
            };
            out.push_str(&format!(
                "{:<metric_width$}  {:>width_a$}{} {:>width_b$}{}  {}\n",
                row.metric,
                format_value(row.a),
                mark_a,
                format_value(row.b),
                mark_b,
                winner,
                width_a = col - 1,
                width_b = col,
            ));
        }
        out
    }

    /// CSV with full-precision values so a reimport is lossless.
    pub fn to_csv(&self) -> String {
        let mut out = format!("metric,{},{},winner\n", self.label_a, self.label_b);
        for row in &self.rows {
            let fmt = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
            let winner = match row.winner {
                Winner::A => "a",
                Winner::B => "b",
                Winner::Tie => "tie",
            };
            out.push_str(&format!(
                "{},{},{},{}\n",
                row.metric,
                fmt(row.a),
                fmt(row.b),
                winner
            ));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<ComparisonTable, MetricsError> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or(MetricsError::MalformedCsv {
            line: 1,
            message: "empty input".into(),
        })?;
        let head: Vec<&str> = header.split(',').collect();
        if head.len() != 4 || head[0] != "metric" || head[3] != "winner" {
            return Err(MetricsError::MalformedCsv {
                line: 1,
                message: format!("unexpected header {header:?}"),
            });
        }
        let mut table = ComparisonTable {
            label_a: head[1].to_string(),
            label_b: head[2].to_string(),
            rows: Vec::new(),
        };
        for (idx, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split(',').collect();
            if parts.len() != 4 {
                return Err(MetricsError::MalformedCsv {
                    line: idx + 1,
                    message: format!("expected 4 fields, got {}", parts.len()),
                });
            }
            let parse = |s: &str| -> Result<Option<f64>, MetricsError> {
                if s.is_empty() {
                    return Ok(None);
                }
                s.parse::<f64>().map(Some).map_err(|e| MetricsError::MalformedCsv {
                    line: idx + 1,
                    message: format!("bad number {s:?}: {e}"),
                })
            };
            let winner = match parts[3] {
                "a" => Winner::A,
                "b" => Winner::B,
                "tie" => Winner::Tie,
                other => {
                    return Err(MetricsError::MalformedCsv {
                        line: idx + 1,
                        message: format!("bad winner {other:?}"),
                    })
                }
            };
            table.rows.push(ComparisonRow {
                metric: parts[0].to_string(),
                a: parse(parts[1])?,
                b: parse(parts[2])?,
                winner,
            });
        }
        Ok(table)
    }
}
