//! Traditional queue-based hyperlink crawler, used as the comparison
//! baseline.
//!
//! The algorithm: seed a queue with the start page; while the queue is
//! non-empty, dequeue a page, fetch it if its URL was not visited, store it
//! as a node, extract its hyperlinks, and enqueue the unseen ones while
//! under the depth bound. "Visited" is keyed by normalized URL, not by
//! state fingerprint, faithfully reproducing why this approach undercounts
//! dynamic applications. Every hyperlink between two visited pages is
//! recorded as an edge, including links back to already-visited targets.

use std::collections::{HashMap, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dom::{Dom, DomError};
use crate::driver::AppDriver;
use crate::explorer::{ExplorationLog, LogRecord};
use crate::graph::{GraphMeta, KnowledgeGraph, StateNode, TransitionEdge};
use crate::obs_store::ObservationStore;
use crate::reward::RewardReason;
use crate::state::{fingerprint, Action, ActionType, FingerprintConfig, StateError};

#[derive(Debug, Error)]
pub enum CrawlError {
    #[error("driver unavailable: {0}")]
    DriverUnavailable(String),
    #[error(transparent)]
    State(#[from] StateError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CrawlStrategy {
    /// Queue (breadth-first); the default.
    Bfs,
    /// Stack (depth-first) variant.
    Dfs,
}

impl std::str::FromStr for CrawlStrategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "bfs" => Ok(CrawlStrategy::Bfs),
            "dfs" => Ok(CrawlStrategy::Dfs),
            other => Err(format!("unknown strategy {other:?}; use bfs or dfs")),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct CrawlConfig {
    pub max_depth: u32,
    pub follow_redirects: bool,
    pub max_concurrent: u32,
    /// Rotated round-robin across fetches.
    pub user_agents: Vec<String>,
    pub strategy: CrawlStrategy,
    #[serde(skip)]
    pub fingerprint: FingerprintConfig,
}

impl Default for CrawlConfig {
    fn default() -> Self {
        CrawlConfig {
            max_depth: 3,
            follow_redirects: true,
            max_concurrent: 8,
            user_agents: vec![
                "Mozilla/5.0 (X11; Linux x86_64) statewalk-crawler/1.0".into(),
                "Mozilla/5.0 (Windows NT 10.0; Win64) statewalk-crawler/1.0".into(),
                "Mozilla/5.0 (Macintosh; Intel Mac OS X) statewalk-crawler/1.0".into(),
            ],
            strategy: CrawlStrategy::Bfs,
            fingerprint: FingerprintConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct CrawlStats {
    pub pages_fetched: usize,
    pub fetch_errors: usize,
    pub wall_ms: u64,
    /// (page URL, depth) in first-visit order.
    pub visit_order: Vec<(String, u32)>,
}

/// Absolute same-origin hyperlink targets of a page, resolved against
/// `base_url`, fragments stripped, duplicates removed keeping the first
/// occurrence.
pub fn extract_hyperlinks(page_source: &str, base_url: &str) -> Result<Vec<String>, DomError> {
    let dom = Dom::parse(page_source)?;
    let Ok(base) = url::Url::parse(base_url) else {
        return Ok(Vec::new());
    };
    let mut seen = Vec::new();
    for elem in &dom.elements {
        if elem.tag != "a" {
            continue;
        }
        let Some(href) = elem.attr("href") else { continue };
        let Ok(mut resolved) = base.join(href) else { continue };
        resolved.set_fragment(None);
        if resolved.origin() != base.origin() {
            continue;
        }
        let target = resolved.to_string();
        if !seen.contains(&target) {
            seen.push(target);
        }
    }
    Ok(seen)
}

fn normalize_visit_key(raw: &str) -> String {
    match url::Url::parse(raw) {
        Ok(mut parsed) => {
            parsed.set_fragment(None);
            parsed.to_string()
        }
        Err(_) => raw.to_string(),
    }
}

fn link_action(target: &str) -> Action {
    let path = url::Url::parse(target)
        .map(|u| u.path().to_string())
        .unwrap_or_else(|_| target.to_string());
    let mut attrs = std::collections::BTreeMap::new();
    attrs.insert("tag".to_string(), "a".to_string());
    attrs.insert("href".to_string(), target.to_string());
    Action {
        action_type: ActionType::Navigate,
        target_selector: format!("a[href={path}]"),
        target_attributes: attrs,
        payload: Some(target.to_string()),
        description: format!("link {path}"),
    }
}

/// Crawl from `start_url`, producing a graph, a per-fetch log, and stats.
///
/// Per-page fetch errors are counted and skipped; only an unreachable
/// start page is fatal.
pub fn crawl(
    driver: &mut dyn AppDriver,
    start_url: &str,
    config: &CrawlConfig,
    obs_store: &mut dyn ObservationStore,
) -> Result<(KnowledgeGraph, ExplorationLog, CrawlStats), CrawlError> {
    let started_ms = driver.now_ms();
    let mut stats = CrawlStats::default();
    let mut log = ExplorationLog {
        started_ms,
        ..ExplorationLog::default()
    };

    // Pending pages; pops from the front for BFS, from the back for DFS.
    let mut pending: VecDeque<(String, u32)> = VecDeque::from([(start_url.to_string(), 0)]);
    let mut enqueued: Vec<String> = vec![normalize_visit_key(start_url)];
    let mut visited: HashMap<String, String> = HashMap::new();
    let mut page_links: Vec<(String, String)> = Vec::new();
    let mut graph: Option<KnowledgeGraph> = None;
    let mut ua_index = 0usize;
    let mut step = 0u64;

    while let Some((url, depth)) = match config.strategy {
        CrawlStrategy::Bfs => pending.pop_front(),
        CrawlStrategy::Dfs => pending.pop_back(),
    } {
        let key = normalize_visit_key(&url);
        if visited.contains_key(&key) {
            continue;
        }
        if !config.user_agents.is_empty() {
            driver.set_user_agent(&config.user_agents[ua_index % config.user_agents.len()]);
            ua_index += 1;
        }
        let fetch_started = driver.now_ms();
        if let Err(e) = driver.navigate(&url) {
            if graph.is_none() {
                return Err(CrawlError::DriverUnavailable(e.to_string()));
            }
            log::warn!("skipping {url}: {e}");
            log.warnings.push(format!("fetch failed for {url}: {e}"));
            stats.fetch_errors += 1;
            continue;
        }
        let obs = match driver.observe() {
            Ok(obs) => obs,
            Err(e) => {
                if graph.is_none() {
                    return Err(CrawlError::DriverUnavailable(e.to_string()));
                }
                log.warnings.push(format!("observe failed for {url}: {e}"));
                stats.fetch_errors += 1;
                continue;
            }
        };
        let fp = fingerprint(&obs, &config.fingerprint)?;
        let digest = fp.digest.clone();
        let obs_ref = obs_store.put(&obs);
        let node = StateNode::new(fp, driver.now_ms(), obs_ref);
        match graph.as_mut() {
            None => {
                let meta = GraphMeta {
                    app: start_url.to_string(),
                    config_hash: crate::state::sha256_hex(&[
                        b"statewalk-crawl-v1",
                        serde_json::to_vec(config).expect("config serializes").as_slice(),
                    ])[..16]
                        .to_string(),
                    created_at: 0,
                    fingerprint_algo: crate::FINGERPRINT_ALGO.to_string(),
                };
                graph = Some(KnowledgeGraph::new(node, meta));
            }
            Some(g) => {
                g.add_state(node);
            }
        }
        visited.insert(key, digest.clone());
        stats.pages_fetched += 1;
        stats.visit_order.push((url.clone(), depth));
        log.records.push(LogRecord {
            step,
            state: digest.clone(),
            action_key: format!("fetch:{url}"),
            description: format!("fetch depth {depth}"),
            outcome: crate::executor::ExecutionOutcome::Changed,
            result_state: Some(digest),
            reward_value: 0.0,
            reward_reason: RewardReason::NewState,
            attempts: 1,
            first_failed: false,
            wall_ms: driver.now_ms().saturating_sub(fetch_started),
            switched: false,
        });
        step += 1;

        let links = match extract_hyperlinks(&obs.page_source, &url) {
            Ok(links) => links,
            Err(e) => {
                log.warnings.push(format!("unparseable page at {url}: {e}"));
                Vec::new()
            }
        };
        // Sorted before enqueueing so the crawl order is deterministic
        // regardless of how the driver orders anchors.
        let mut sorted = links.clone();
        sorted.sort();
        for link in &links {
            page_links.push((url.clone(), link.clone()));
        }
        if depth < config.max_depth {
            for link in sorted {
                let link_key = normalize_visit_key(&link);
                if !visited.contains_key(&link_key) && !enqueued.contains(&link_key) {
                    enqueued.push(link_key);
                    pending.push_back((link, depth + 1));
                }
            }
        }
    }

    let mut graph = graph.ok_or_else(|| {
        CrawlError::DriverUnavailable("no page could be fetched".to_string())
    })?;

    // Record every hyperlink between visited pages, even when the target
    // was already visited via another route.
    for (from_url, to_url) in page_links {
        let (Some(from), Some(to)) = (
            visited.get(&normalize_visit_key(&from_url)),
            visited.get(&normalize_visit_key(&to_url)),
        ) else {
            continue;
        };
        graph
            .add_transition(TransitionEdge {
                from: from.clone(),
                to: to.clone(),
                action: link_action(&to_url),
                reward: None,
                attempts: 1,
                first_failed: false,
            })
            .expect("link sources are visited nodes");
    }

    let mut meta = graph.meta().clone();
    meta.created_at = driver.now_ms();
    graph.set_meta(meta);
    stats.wall_ms = driver.now_ms().saturating_sub(started_ms);
    log.finished_ms = driver.now_ms();
    Ok((graph, log, stats))
}
