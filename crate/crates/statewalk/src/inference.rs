//! Candidate-action inference and the explored-functionality store.
//!
//! The store remembers which states were visited, which actions were
//! proposed and executed from each, and what each execution produced. The
//! default reasoner enumerates candidates straight from the DOM; a remote
//! reasoner (see [`crate::remote`]) can contribute extra candidates, which
//! are validated against the DOM and merged. Selection takes the top ranked
//! actions whose priority clears a configured floor.

use indexmap::{IndexMap, IndexSet};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dom::Dom;
use crate::rerank::RankedAction;
use crate::reward::RewardScore;
use crate::state::{
    fingerprint, Action, ActionType, FingerprintConfig, Observation, StateError,
};

#[derive(Debug, Error)]
pub enum ReasonerError {
    #[error("remote reasoner unavailable: {0}")]
    RemoteUnavailable(String),
    #[error("observation not usable: {0}")]
    InvalidObservation(String),
}

/// Where a candidate came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CandidateSource {
    Heuristic,
    Remote,
}

/// A proposed action with its novelty against the explored store.
#[derive(Debug, Clone)]
pub struct CandidateAction {
    pub action: Action,
    /// 1.0 when the (state, action) pair was never executed, else 0.0.
    pub novelty: f64,
    pub source: CandidateSource,
}

/// One recorded execution outcome.
#[derive(Debug, Clone)]
pub struct OutcomeRecord {
    /// Digest of the state the action led to.
    pub result: String,
    pub reward: RewardScore,
    /// Action class key at recording time, for entropy/expected-reward
    /// statistics.
    pub class_key: String,
}

/// History of everything the system has seen and done.
///
/// Single-owner mutable structure confined to the exploration loop.
#[derive(Debug, Default, Clone)]
pub struct ExploredStore {
    visited: IndexSet<String>,
    /// Candidate action keys proposed per state, in candidate order.
    proposed: IndexMap<String, Vec<String>>,
    executed: IndexMap<String, IndexSet<String>>,
    outcomes: IndexMap<(String, String), OutcomeRecord>,
    exhausted: IndexSet<String>,
}

impl ExploredStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn mark_visited(&mut self, state: &str) {
        self.visited.insert(state.to_string());
    }

    pub fn is_visited(&self, state: &str) -> bool {
        self.visited.contains(state)
    }

    pub fn visited_count(&self) -> usize {
        self.visited.len()
    }

    /// Record the candidate list proposed for a state. Overwrites; the
    /// heuristic is deterministic so repeat proposals agree.
    pub fn record_proposed(&mut self, state: &str, keys: Vec<String>) {
        self.proposed.insert(state.to_string(), keys);
    }

    pub fn proposed_for(&self, state: &str) -> Option<&[String]> {
        self.proposed.get(state).map(Vec::as_slice)
    }

    pub fn executed_for(&self, state: &str) -> Vec<String> {
        self.executed
            .get(state)
            .map(|set| set.iter().cloned().collect())
            .unwrap_or_default()
    }

    pub fn was_executed(&self, state: &str, action_key: &str) -> bool {
        self.executed
            .get(state)
            .is_some_and(|set| set.contains(action_key))
    }

    pub fn recorded_reward(&self, state: &str, action_key: &str) -> Option<f64> {
        self.outcomes
            .get(&(state.to_string(), action_key.to_string()))
            .map(|o| o.reward.value)
    }

    /// All recorded outcomes for one action class.
    pub fn class_outcomes(&self, class_key: &str) -> Vec<&OutcomeRecord> {
        self.outcomes
            .values()
            .filter(|o| o.class_key == class_key)
            .collect()
    }

    pub fn outcome_count(&self) -> usize {
        self.outcomes.len()
    }

    /// Proposed-but-unexecuted action keys for a state, in proposal order.
    /// A state with no recorded proposal is treated as having untried work.
    pub fn untried_for(&self, state: &str) -> Option<Vec<String>> {
        let proposed = self.proposed.get(state)?;
        Some(
            proposed
                .iter()
                .filter(|k| !self.was_executed(state, k))
                .cloned()
                .collect(),
        )
    }

    /// True when the state's candidates are known and all executed.
    pub fn is_candidate_exhausted(&self, state: &str) -> bool {
        match self.untried_for(state) {
            Some(untried) => untried.is_empty(),
            None => false,
        }
    }

    pub fn mark_exhausted(&mut self, state: &str) {
        self.exhausted.insert(state.to_string());
    }

    pub fn is_exhausted(&self, state: &str) -> bool {
        self.exhausted.contains(state)
    }

    pub fn outcomes(&self) -> impl Iterator<Item = (&(String, String), &OutcomeRecord)> {
        self.outcomes.iter()
    }
}

/// Read everything the store knows about one state.
pub fn query_explored<'a>(
    store: &'a ExploredStore,
    state: &str,
) -> (bool, Vec<String>, Vec<(&'a str, &'a OutcomeRecord)>) {
    let visited = store.is_visited(state);
    let executed = store.executed_for(state);
    let outcomes = store
        .outcomes
        .iter()
        .filter(|((s, _), _)| s == state)
        .map(|((_, key), record)| (key.as_str(), record))
        .collect();
    (visited, executed, outcomes)
}

/// Record one execution outcome. Idempotent for identical tuples; a later
/// reward for the same (state, action) pair overwrites the earlier one.
pub fn record_outcome(
    store: &mut ExploredStore,
    state: &str,
    action: &Action,
    result_state: &str,
    reward: RewardScore,
) {
    store.mark_visited(state);
    store
        .executed
        .entry(state.to_string())
        .or_default()
        .insert(action.key());
    store.outcomes.insert(
        (state.to_string(), action.key()),
        OutcomeRecord {
            result: result_state.to_string(),
            reward,
            class_key: action.class_key(),
        },
    );
}

/// Explored-state context handed to reasoners.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ExploredSummary {
    pub visited: bool,
    pub executed_keys: Vec<String>,
    pub outcome_count: usize,
}

/// Raw reasoner output before validation and novelty scoring.
#[derive(Debug, Clone, Default)]
pub struct Proposals {
    pub actions: Vec<(Action, CandidateSource)>,
    /// Non-fatal problems encountered while proposing.
    pub warnings: Vec<String>,
}

impl Proposals {
    pub fn push(&mut self, action: Action, source: CandidateSource) {
        self.actions.push((action, source));
    }
}

/// Produces plausible actions for an observation.
pub trait Reasoner {
    fn propose(
        &self,
        obs: &Observation,
        summary: &ExploredSummary,
    ) -> Result<Proposals, ReasonerError>;

    fn name(&self) -> &'static str;
}

/// Maps form-field names/types to fill payloads.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ValueDictionary {
    /// Substring patterns (matched case-insensitively against the field
    /// name, then the field type) to payloads. Order matters.
    pub entries: IndexMap<String, String>,
    pub default: String,
}

impl Default for ValueDictionary {
    fn default() -> Self {
        let mut entries = IndexMap::new();
        for (pattern, value) in [
            ("email", "qa.tester@example.com"),
            ("password", "Sup3rSecret!"),
            ("search", "widget"),
            ("q", "widget"),
            ("location", "Springfield"),
            ("address", "221B Baker Street"),
            ("city", "Springfield"),
            ("zip", "62704"),
            ("postal", "62704"),
            ("phone", "555-0100"),
            ("tel", "555-0100"),
            ("name", "Alex Tester"),
            ("message", "Looks great"),
            ("comment", "Looks great"),
        ] {
            entries.insert(pattern.to_string(), value.to_string());
        }
        ValueDictionary {
            entries,
            default: "test-input".to_string(),
        }
    }
}

impl ValueDictionary {
    pub fn lookup(&self, field_name: &str, field_type: &str) -> String {
        let name = field_name.to_ascii_lowercase();
        let ftype = field_type.to_ascii_lowercase();
        for (pattern, value) in &self.entries {
            if name.contains(pattern.as_str()) {
                return value.clone();
            }
        }
        for (pattern, value) in &self.entries {
            if !ftype.is_empty() && ftype.contains(pattern.as_str()) {
                return value.clone();
            }
        }
        self.default.clone()
    }
}

const FILLABLE_INPUT_TYPES: [&str; 8] = [
    "", "text", "email", "password", "search", "number", "tel", "url",
];

/// DOM-driven candidate enumeration; the default reasoner.
///
/// Walks elements in document order and emits one Navigate per same-origin
/// anchor, one Click per button outside a form, one FillField per text
/// input (payload from the value dictionary), a KeyInput (Enter) right
/// after the fill for search boxes, and one SubmitForm per form placed
/// after all of the form's field candidates.
#[derive(Debug, Clone, Default)]
pub struct HeuristicReasoner {
    pub values: ValueDictionary,
}

impl HeuristicReasoner {
    pub fn new(values: ValueDictionary) -> Self {
        HeuristicReasoner { values }
    }
}

impl Reasoner for HeuristicReasoner {
    fn propose(
        &self,
        obs: &Observation,
        _summary: &ExploredSummary,
    ) -> Result<Proposals, ReasonerError> {
        let dom = Dom::parse(&obs.page_source)
            .map_err(|e| ReasonerError::InvalidObservation(e.to_string()))?;
        let base_url = obs
            .url()
            .map_err(|e| ReasonerError::InvalidObservation(e.to_string()))?;
        let base = url::Url::parse(base_url).ok();

        // (sort position, tie rank) so form submits land after their fields
        // and a search box's KeyInput lands after its fill.
        let mut staged: Vec<(usize, u8, Action)> = Vec::new();

        for (idx, elem) in dom.elements.iter().enumerate() {
            let position = elem.doc_index;
            match elem.tag.as_str() {
                "a" => {
                    let Some(href) = elem.attr("href") else { continue };
                    let Some(base) = &base else { continue };
                    let Ok(resolved) = base.join(href) else { continue };
                    let mut resolved = resolved;
                    resolved.set_fragment(None);
                    if resolved.origin() != base.origin() {
                        continue;
                    }
                    let label = pick_label(&[&elem.text, href]);
                    staged.push((
                        position,
                        0,
                        build_action(
                            ActionType::Navigate,
                            &dom,
                            idx,
                            Some(resolved.to_string()),
                            format!("open {label}"),
                        ),
                    ));
                }
                "button" => {
                    if in_form(&dom, idx) || elem.attr("type") == Some("submit") {
                        continue;
                    }
                    let label = pick_label(&[&elem.text, elem.id().unwrap_or("button")]);
                    staged.push((
                        position,
                        0,
                        build_action(ActionType::Click, &dom, idx, None, format!("click {label}")),
                    ));
                }
                "input" | "textarea" => {
                    let itype = elem.attr("type").unwrap_or("");
                    if elem.tag == "input" && !FILLABLE_INPUT_TYPES.contains(&itype) {
                        continue;
                    }
                    let name = elem.attr("name").unwrap_or("");
                    let payload = self.values.lookup(name, itype);
                    let label = pick_label(&[name, elem.id().unwrap_or("field")]);
                    staged.push((
                        position,
                        0,
                        build_action(
                            ActionType::FillField,
                            &dom,
                            idx,
                            Some(payload),
                            format!("fill {label}"),
                        ),
                    ));
                    if itype == "search" {
                        staged.push((
                            position,
                            1,
                            build_action(
                                ActionType::KeyInput,
                                &dom,
                                idx,
                                Some("Enter".to_string()),
                                format!("press Enter in {label}"),
                            ),
                        ));
                    }
                }
                "form" => {
                    let last_descendant = subtree_last_doc_index(&dom, idx);
                    let label = pick_label(&[elem.id().unwrap_or(""), elem.attr("action").unwrap_or("form")]);
                    staged.push((
                        last_descendant,
                        2,
                        build_action(
                            ActionType::SubmitForm,
                            &dom,
                            idx,
                            None,
                            format!("submit {label}"),
                        ),
                    ));
                }
                _ => {}
            }
        }

        staged.sort_by_key(|(position, rank, _)| (*position, *rank));
        Ok(Proposals {
            actions: staged
                .into_iter()
                .map(|(_, _, action)| (action, CandidateSource::Heuristic))
                .collect(),
            warnings: Vec::new(),
        })
    }

    fn name(&self) -> &'static str {
        "heuristic"
    }
}

fn pick_label(options: &[&str]) -> String {
    options
        .iter()
        .find(|s| !s.is_empty())
        .unwrap_or(&"element")
        .to_string()
}

fn in_form(dom: &Dom, idx: usize) -> bool {
    let mut cursor = dom.elements[idx].parent;
    while let Some(i) = cursor {
        if dom.elements[i].tag == "form" {
            return true;
        }
        cursor = dom.elements[i].parent;
    }
    false
}

fn subtree_last_doc_index(dom: &Dom, idx: usize) -> usize {
    let elem = &dom.elements[idx];
    elem.children
        .iter()
        .map(|&c| subtree_last_doc_index(dom, c))
        .max()
        .unwrap_or(elem.doc_index)
}

fn build_action(
    action_type: ActionType,
    dom: &Dom,
    idx: usize,
    payload: Option<String>,
    description: String,
) -> Action {
    let elem = &dom.elements[idx];
    let mut target_attributes = std::collections::BTreeMap::new();
    target_attributes.insert("tag".to_string(), elem.tag.clone());
    for key in ["id", "class", "name", "type", "href", "action"] {
        if let Some(value) = elem.attr(key) {
            target_attributes.insert(key.to_string(), value.to_string());
        }
    }
    if !elem.text.is_empty() {
        target_attributes.insert("text".to_string(), elem.text.clone());
    }
    Action {
        action_type,
        target_selector: dom.selector_for(idx),
        target_attributes,
        payload,
        description,
    }
}

/// A reasoner run's validated output.
#[derive(Debug, Clone, Default)]
pub struct InferenceResult {
    pub candidates: Vec<CandidateAction>,
    /// Non-fatal problems: remote degradation, dropped invalid proposals.
    pub warnings: Vec<String>,
}

/// Produce the candidate list for an observation.
///
/// Proposals whose selector does not resolve to exactly one element are
/// dropped with a warning. Duplicates under (action type, selector,
/// payload) collapse to the first occurrence. Novelty is 1.0 unless the
/// store already saw the (state, action) pair executed.
pub fn infer_candidates(
    reasoner: &dyn Reasoner,
    obs: &Observation,
    store: &ExploredStore,
    fp_config: &FingerprintConfig,
) -> Result<InferenceResult, StateError> {
    let state = fingerprint(obs, fp_config)?;
    let (visited, executed_keys, outcome_list) = query_explored(store, &state.digest);
    let summary = ExploredSummary {
        visited,
        executed_keys,
        outcome_count: outcome_list.len(),
    };

    let mut result = InferenceResult::default();
    let proposals = match reasoner.propose(obs, &summary) {
        Ok(proposals) => proposals,
        Err(ReasonerError::RemoteUnavailable(msg)) => {
            // Non-fatal: degrade to the heuristic enumeration.
            let mut fallback = HeuristicReasoner::default()
                .propose(obs, &summary)
                .unwrap_or_default();
            fallback
                .warnings
                .push(format!("remote reasoner degraded: {msg}"));
            fallback
        }
        Err(other) => Proposals {
            actions: Vec::new(),
            warnings: vec![format!("reasoner failed: {other}")],
        },
    };
    result.warnings.extend(proposals.warnings);

    let dom = Dom::parse(&obs.page_source)?;
    let mut seen_keys: IndexSet<String> = IndexSet::new();
    for (action, source) in proposals.actions {
        if dom.resolve(&action.target_selector).is_err() {
            result.warnings.push(format!(
                "dropped candidate with unresolvable selector {:?}",
                action.target_selector
            ));
            continue;
        }
        let key = action.key();
        if !seen_keys.insert(key.clone()) {
            continue;
        }
        let novelty = if store.was_executed(&state.digest, &key) {
            0.0
        } else {
            1.0
        };
        result.candidates.push(CandidateAction {
            action,
            novelty,
            source,
        });
    }
    Ok(result)
}

/// Take the first `k` ranked actions whose priority exceeds the floor.
/// May return fewer than `k`; empty means "no promising action here".
/// Output preserves ranking order and is always a subset of the input.
pub fn select_next(ranked: &[RankedAction], k: usize, priority_floor: f64) -> Vec<Action> {
    ranked
        .iter()
        .filter(|r| r.priority > priority_floor)
        .take(k)
        .map(|r| r.action.clone())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use indexmap::IndexMap as Map;

    pub(crate) fn obs(url: &str, page: &str) -> Observation {
        let mut metadata = Map::new();
        metadata.insert("url".to_string(), url.to_string());
        metadata.insert("status".to_string(), "200".to_string());
        Observation {
            page_source: page.to_string(),
            screenshot_ref: None,
            metadata,
            captured_at: 0,
        }
    }

    fn digest_of(o: &Observation) -> String {
        fingerprint(o, &FingerprintConfig::default()).unwrap().digest
    }

    fn fill_action(selector: &str) -> Action {
        Action {
            action_type: ActionType::FillField,
            target_selector: selector.to_string(),
            target_attributes: Default::default(),
            payload: Some("x".into()),
            description: format!("fill {selector}"),
        }
    }

    #[test]
    fn empty_store_answers_empty() {
        let store = ExploredStore::new();
        let (visited, executed, outcomes) = query_explored(&store, "deadbeef");
        assert!(!visited);
        assert!(executed.is_empty());
        assert!(outcomes.is_empty());
    }

    #[test]
    fn recorded_outcome_is_queryable_and_overwritable() {
        let mut store = ExploredStore::new();
        let action = fill_action("input[name=q]");
        let reward1 = RewardScore {
            value: -0.5,
            reason: crate::reward::RewardReason::NoChange,
        };
        record_outcome(&mut store, "s1", &action, "s1", reward1);
        let (visited, executed, outcomes) = query_explored(&store, "s1");
        assert!(visited);
        assert_eq!(executed, vec![action.key()]);
        assert_eq!(outcomes.len(), 1);

        let reward2 = RewardScore {
            value: 0.25,
            reason: crate::reward::RewardReason::NewEdgeKnownState,
        };
        record_outcome(&mut store, "s1", &action, "s2", reward2);
        assert_eq!(store.outcome_count(), 1);
        assert_eq!(store.recorded_reward("s1", &action.key()), Some(0.25));
    }

    #[test]
    fn heuristic_enumerates_link_and_button() {
        let page = r#"<a id="l" href="/next">Next</a><button id="b">Go</button>"#;
        let o = obs("http://app.local/", page);
        let store = ExploredStore::new();
        let result = infer_candidates(
            &HeuristicReasoner::default(),
            &o,
            &store,
            &FingerprintConfig::default(),
        )
        .unwrap();
        assert_eq!(result.candidates.len(), 2);
        assert_eq!(result.candidates[0].action.action_type, ActionType::Navigate);
        assert_eq!(
            result.candidates[0].action.payload.as_deref(),
            Some("http://app.local/next")
        );
        assert_eq!(result.candidates[1].action.action_type, ActionType::Click);
        assert!(result.candidates.iter().all(|c| c.novelty == 1.0));
    }

    #[test]
    fn heuristic_counts_login_form_parts() {
        let page = r#"
            <form id="login-form" action="/login">
              <input type="text" name="email">
              <input type="password" name="password">
            </form>"#;
        let o = obs("http://app.local/login", page);
        let result = infer_candidates(
            &HeuristicReasoner::default(),
            &o,
            &ExploredStore::new(),
            &FingerprintConfig::default(),
        )
        .unwrap();
        let types: Vec<ActionType> = result
            .candidates
            .iter()
            .map(|c| c.action.action_type)
            .collect();
        assert_eq!(
            types,
            vec![ActionType::FillField, ActionType::FillField, ActionType::SubmitForm]
        );
        // Payloads come from the value dictionary.
        assert_eq!(
            result.candidates[0].action.payload.as_deref(),
            Some("qa.tester@example.com")
        );
    }

    #[test]
    fn search_box_gets_fill_then_key() {
        let page = r#"<input type="search" name="q" id="q">"#;
        let o = obs("http://app.local/", page);
        let result = infer_candidates(
            &HeuristicReasoner::default(),
            &o,
            &ExploredStore::new(),
            &FingerprintConfig::default(),
        )
        .unwrap();
        let types: Vec<ActionType> = result
            .candidates
            .iter()
            .map(|c| c.action.action_type)
            .collect();
        assert_eq!(types, vec![ActionType::FillField, ActionType::KeyInput]);
        assert_eq!(result.candidates[1].action.payload.as_deref(), Some("Enter"));
    }

    #[test]
    fn cross_origin_links_are_skipped() {
        let page = r#"<a href="http://other.site/x">out</a><a href="/in">in</a>"#;
        let o = obs("http://app.local/", page);
        let result = infer_candidates(
            &HeuristicReasoner::default(),
            &o,
            &ExploredStore::new(),
            &FingerprintConfig::default(),
        )
        .unwrap();
        assert_eq!(result.candidates.len(), 1);
        assert_eq!(
            result.candidates[0].action.payload.as_deref(),
            Some("http://app.local/in")
        );
    }

    #[test]
    fn fully_explored_state_has_zero_novelty() {
        let page = r#"<a href="/a">A</a>"#;
        let o = obs("http://app.local/", page);
        let mut store = ExploredStore::new();
        let first = infer_candidates(
            &HeuristicReasoner::default(),
            &o,
            &store,
            &FingerprintConfig::default(),
        )
        .unwrap();
        let digest = digest_of(&o);
        for c in &first.candidates {
            record_outcome(
                &mut store,
                &digest,
                &c.action,
                "elsewhere",
                RewardScore {
                    value: 1.0,
                    reason: crate::reward::RewardReason::NewState,
                },
            );
        }
        let second = infer_candidates(
            &HeuristicReasoner::default(),
            &o,
            &store,
            &FingerprintConfig::default(),
        )
        .unwrap();
        assert!(second.candidates.iter().all(|c| c.novelty == 0.0));
    }

    #[test]
    fn heuristic_is_deterministic() {
        let page = r#"
            <a href="/a">A</a><button id="b1">B</button>
            <form id="f"><input name="x"></form>
            <input type="search" name="q">"#;
        let o = obs("http://app.local/", page);
        let store = ExploredStore::new();
        let runs: Vec<Vec<String>> = (0..3)
            .map(|_| {
                infer_candidates(
                    &HeuristicReasoner::default(),
                    &o,
                    &store,
                    &FingerprintConfig::default(),
                )
                .unwrap()
                .candidates
                .iter()
                .map(|c| c.action.key())
                .collect()
            })
            .collect();
        assert_eq!(runs[0], runs[1]);
        assert_eq!(runs[1], runs[2]);
        // No duplicates under the dedup key.
        let mut sorted = runs[0].clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), runs[0].len());
    }

    #[test]
    fn select_next_honors_floor_and_k() {
        let mk = |priority: f64, selector: &str| RankedAction {
            action: fill_action(selector),
            priority,
            entropy_term: 0.0,
            expected_reward_term: 0.0,
            novelty_term: 1.0,
        };
        let ranked = vec![mk(0.9, "a"), mk(0.5, "b"), mk(-0.2, "c")];
        let top = select_next(&ranked, 1, 0.0);
        assert_eq!(top.len(), 1);
        assert_eq!(top[0].target_selector, "a");

        let two = select_next(&ranked, 5, 0.0);
        assert_eq!(two.len(), 2);

        let none = select_next(&ranked, 3, 0.95);
        assert!(none.is_empty());
    }

    #[test]
    fn untried_and_exhaustion_accounting() {
        let mut store = ExploredStore::new();
        assert!(!store.is_candidate_exhausted("s"));
        store.record_proposed("s", vec!["k1".into(), "k2".into()]);
        assert_eq!(store.untried_for("s").unwrap(), vec!["k1", "k2"]);
        let action = fill_action("input[name=q]");
        // Executing under key k1 requires the action key to match; build one.
        store.executed.entry("s".into()).or_default().insert("k1".into());
        assert_eq!(store.untried_for("s").unwrap(), vec!["k2"]);
        assert!(!store.is_candidate_exhausted("s"));
        store.executed.entry("s".into()).or_default().insert("k2".into());
        assert!(store.is_candidate_exhausted("s"));
        let _ = action;
    }
}
