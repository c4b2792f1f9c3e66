//! Remote reasoner client.
//!
//! Posts the current observation (page source truncated to a byte budget,
//! screenshot digest, metadata) plus a summary of explored actions to an
//! HTTP endpoint, and maps the returned candidate list into actions. A
//! composite reasoner merges these with the heuristic enumeration;
//! endpoint failures degrade to heuristic-only with a warning, never a
//! hard error. Malformed candidate entries are dropped with a warning.

use serde::{Deserialize, Serialize};

use crate::inference::{
    CandidateSource, ExploredSummary, HeuristicReasoner, Proposals, Reasoner, ReasonerError,
};
use crate::state::{Action, ActionType, Observation};

pub const ENV_URL: &str = "STATEWALK_REASONER_URL";
pub const ENV_TOKEN: &str = "STATEWALK_REASONER_TOKEN";
pub const ENV_TIMEOUT_MS: &str = "STATEWALK_REASONER_TIMEOUT_MS";

const DEFAULT_TIMEOUT_MS: u64 = 10_000;
const DEFAULT_PAGE_BYTE_BUDGET: usize = 65_536;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RemoteConfig {
    pub url: String,
    #[serde(default)]
    pub token: Option<String>,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_page_byte_budget")]
    pub page_byte_budget: usize,
}

fn default_timeout_ms() -> u64 {
    DEFAULT_TIMEOUT_MS
}

fn default_page_byte_budget() -> usize {
    DEFAULT_PAGE_BYTE_BUDGET
}

impl RemoteConfig {
    /// Read the endpoint from the environment; None when no URL is set.
    pub fn from_env() -> Option<RemoteConfig> {
        let url = std::env::var(ENV_URL).ok()?;
        if url.is_empty() {
            return None;
        }
        let token = std::env::var(ENV_TOKEN).ok().filter(|t| !t.is_empty());
        let timeout_ms = std::env::var(ENV_TIMEOUT_MS)
            .ok()
            .and_then(|v| v.parse().ok())
            .unwrap_or(DEFAULT_TIMEOUT_MS);
        Some(RemoteConfig {
            url,
            token,
            timeout_ms,
            page_byte_budget: DEFAULT_PAGE_BYTE_BUDGET,
        })
    }

    /// Environment variables override file-config fields when present.
    pub fn with_env_overrides(mut self) -> RemoteConfig {
        if let Ok(url) = std::env::var(ENV_URL) {
            if !url.is_empty() {
                self.url = url;
            }
        }
        if let Ok(token) = std::env::var(ENV_TOKEN) {
            if !token.is_empty() {
                self.token = Some(token);
            }
        }
        if let Some(timeout) = std::env::var(ENV_TIMEOUT_MS).ok().and_then(|v| v.parse().ok()) {
            self.timeout_ms = timeout;
        }
        self
    }
}

#[derive(Serialize)]
struct ReasonerRequest<'a> {
    page_source: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    screenshot_ref: Option<&'a str>,
    metadata: &'a indexmap::IndexMap<String, String>,
    explored: &'a ExploredSummary,
}

#[derive(Deserialize)]
struct ReasonerResponse {
    #[serde(default)]
    candidates: Vec<RemoteCandidate>,
}

#[derive(Deserialize)]
struct RemoteCandidate {
    action_type: String,
    selector: String,
    #[serde(default)]
    payload: Option<String>,
    #[serde(default)]
    description: Option<String>,
}

/// HTTP-backed reasoner.
pub struct RemoteReasoner {
    config: RemoteConfig,
    agent: ureq::Agent,
}

impl RemoteReasoner {
    pub fn new(config: RemoteConfig) -> RemoteReasoner {
        let agent_config = ureq::Agent::config_builder()
            .timeout_global(Some(std::time::Duration::from_millis(config.timeout_ms)))
            .build();
        RemoteReasoner {
            config,
            agent: ureq::Agent::new_with_config(agent_config),
        }
    }

    fn truncated_source<'a>(&self, page_source: &'a str) -> &'a str {
        let budget = self.config.page_byte_budget;
        if page_source.len() <= budget {
            return page_source;
        }
        let mut cut = budget;
        while cut > 0 && !page_source.is_char_boundary(cut) {
            cut -= 1;
        }
        &page_source[..cut]
    }
}

impl Reasoner for RemoteReasoner {
    fn propose(
        &self,
        obs: &Observation,
        summary: &ExploredSummary,
    ) -> Result<Proposals, ReasonerError> {
        let request = ReasonerRequest {
            page_source: self.truncated_source(&obs.page_source),
            screenshot_ref: obs.screenshot_ref.as_deref(),
            metadata: &obs.metadata,
            explored: summary,
        };
        let mut builder = self.agent.post(&self.config.url);
        if let Some(token) = &self.config.token {
            builder = builder.header("Authorization", &format!("Bearer {token}"));
        }
        let mut response = builder
            .send_json(&request)
            .map_err(|e| ReasonerError::RemoteUnavailable(e.to_string()))?;
        let parsed: ReasonerResponse = response
            .body_mut()
            .read_json()
            .map_err(|e| ReasonerError::RemoteUnavailable(format!("bad response body: {e}")))?;

        let mut proposals = Proposals::default();
        for entry in parsed.candidates {
            let Ok(action_type) = entry.action_type.parse::<ActionType>() else {
                proposals.warnings.push(format!(
                    "dropped remote candidate with unknown action type {:?}",
                    entry.action_type
                ));
                continue;
            };
            let description = entry
                .description
                .unwrap_or_else(|| format!("{action_type} {}", entry.selector));
            proposals.push(
                Action {
                    action_type,
                    target_selector: entry.selector,
                    target_attributes: Default::default(),
                    payload: entry.payload,
                    description,
                },
                CandidateSource::Remote,
            );
        }
        Ok(proposals)
    }

    fn name(&self) -> &'static str {
        "remote"
    }
}

/// Heuristic enumeration plus optional remote suggestions.
///
/// Remote failures never propagate: the heuristic output is returned with
/// a degradation warning instead.
pub struct CompositeReasoner {
    heuristic: HeuristicReasoner,
    remote: Option<RemoteReasoner>,
}

impl CompositeReasoner {
    pub fn new(heuristic: HeuristicReasoner, remote: Option<RemoteReasoner>) -> CompositeReasoner {
        CompositeReasoner { heuristic, remote }
    }
}

impl Reasoner for CompositeReasoner {
    fn propose(
        &self,
        obs: &Observation,
        summary: &ExploredSummary,
    ) -> Result<Proposals, ReasonerError> {
        let mut proposals = self.heuristic.propose(obs, summary)?;
        if let Some(remote) = &self.remote {
            match remote.propose(obs, summary) {
                Ok(extra) => {
                    proposals.warnings.extend(extra.warnings);
                    proposals.actions.extend(extra.actions);
                }
                Err(e) => {
                    log::warn!("remote reasoner unavailable: {e}");
                    proposals
                        .warnings
                        .push(format!("remote reasoner degraded: {e}"));
                }
            }
        }
        Ok(proposals)
    }

    fn name(&self) -> &'static str {
        "composite"
    }
}
