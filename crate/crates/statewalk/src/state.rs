//! Observations, state fingerprints, and action representations.
//!
//! A state's identity is the digest of three ingredients: the normalized URL
//! path, the canonical DOM signature, and a configurable whitelist of
//! metadata values. That combination distinguishes same-URL states (a
//! checkout page with and without items in the cart) while staying blind to
//! dynamic text, cosmetic attributes, and rotating session tokens.

use std::fmt;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dom::{Dom, DomError};

#[derive(Debug, Error)]
pub enum StateError {
    #[error(transparent)]
    Dom(#[from] DomError),
    #[error("observation metadata is missing the required \"url\" key")]
    MissingUrlMetadata,
    #[error("invalid fingerprint config: {0}")]
    InvalidConfig(String),
}

/// Raw capture of the application at one moment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    /// Markup text of the page. Non-empty for any successful capture.
    pub page_source: String,
    /// Content digest of the screenshot, when one was taken. Never parsed;
    /// visual understanding belongs to pluggable reasoners.
    pub screenshot_ref: Option<String>,
    /// Session metadata in capture order. Always contains "url".
    pub metadata: IndexMap<String, String>,
    /// Monotonic capture timestamp in milliseconds.
    pub captured_at: u64,
}

impl Observation {
    pub fn url(&self) -> Result<&str, StateError> {
        self.metadata
            .get("url")
            .map(String::as_str)
            .ok_or(StateError::MissingUrlMetadata)
    }

    /// Content-address of the serialized observation.
    pub fn content_digest(&self) -> String {
        let body = serde_json::to_vec(self).expect("observation serializes");
        sha256_hex(&[b"statewalk-obs-v1", body.as_slice()])
    }
}

/// Controls which parts of an observation participate in state identity.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FingerprintConfig {
    /// Metadata keys whose values are hashed into the fingerprint. The URL
    /// always participates through its normalized path, so it is not listed
    /// here by default.
    pub metadata_include_keys: Vec<String>,
    /// Attributes stripped from the canonical DOM even when structural.
    pub volatile_attributes: Vec<String>,
    /// When true, the query string is dropped from the normalized path.
    pub ignore_query_params: bool,
}

impl Default for FingerprintConfig {
    fn default() -> Self {
        FingerprintConfig {
            metadata_include_keys: vec!["status".into(), "auth_cookie".into()],
            volatile_attributes: vec![
                "style".into(),
                "data-timestamp".into(),
                "nonce".into(),
                "data-nonce".into(),
                "csrf".into(),
            ],
            ignore_query_params: false,
        }
    }
}

impl FingerprintConfig {
    /// Load from a key-value config file (the `[fingerprint]` section of the
    /// main config format, or a bare file with the same keys).
    pub fn from_toml(text: &str) -> Result<Self, StateError> {
        #[derive(Deserialize)]
        struct Wrapper {
            #[serde(default)]
            fingerprint: Option<FingerprintConfig>,
        }
        if let Ok(w) = toml::from_str::<Wrapper>(text) {
            if let Some(cfg) = w.fingerprint {
                return Ok(cfg);
            }
        }
        toml::from_str::<FingerprintConfig>(text)
            .map_err(|e| StateError::InvalidConfig(e.to_string()))
    }

    /// Normalized path component for fingerprinting: path, plus the sorted
    /// query pairs unless configured to ignore them. Fragments never count.
    pub fn normalize_url_path(&self, raw_url: &str) -> String {
        match url::Url::parse(raw_url) {
            Ok(parsed) => {
                let mut path = parsed.path().to_string();
                if !self.ignore_query_params {
                    if let Some(query) = parsed.query() {
                        let mut pairs: Vec<(String, String)> = parsed
                            .query_pairs()
                            .map(|(k, v)| (k.into_owned(), v.into_owned()))
                            .collect();
                        if pairs.is_empty() && !query.is_empty() {
                            path.push('?');
                            path.push_str(query);
                        } else {
                            pairs.sort();
                            let joined: Vec<String> =
                                pairs.iter().map(|(k, v)| format!("{k}={v}")).collect();
                            path.push('?');
                            path.push_str(&joined.join("&"));
                        }
                    }
                }
                path
            }
            // Relative or otherwise unparseable: use the raw string minus
            // any fragment so fingerprinting still works.
            Err(_) => raw_url.split('#').next().unwrap_or("").to_string(),
        }
    }
}

/// Canonical identity of a state.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct StateFingerprint {
    /// 64 hex chars; pure function of the other fields.
    pub digest: String,
    pub url_path: String,
    pub dom_signature: String,
    /// Sorted metadata keys that were present and included in hashing.
    pub metadata_keys: Vec<String>,
}

impl StateFingerprint {
    pub fn short(&self) -> &str {
        &self.digest[..12.min(self.digest.len())]
    }
}

impl fmt::Display for StateFingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.digest)
    }
}

/// Kinds of user-initiated operations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ActionType {
    Navigate,
    Click,
    FillField,
    SubmitForm,
    KeyInput,
    ScriptEvent,
}

impl fmt::Display for ActionType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            ActionType::Navigate => "navigate",
            ActionType::Click => "click",
            ActionType::FillField => "fill",
            ActionType::SubmitForm => "submit",
            ActionType::KeyInput => "key",
            ActionType::ScriptEvent => "script",
        };
        f.write_str(name)
    }
}

impl std::str::FromStr for ActionType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "navigate" => Ok(ActionType::Navigate),
            "click" => Ok(ActionType::Click),
            "fill" => Ok(ActionType::FillField),
            "submit" => Ok(ActionType::SubmitForm),
            "key" => Ok(ActionType::KeyInput),
            "script" => Ok(ActionType::ScriptEvent),
            other => Err(format!("unknown action type {other:?}")),
        }
    }
}

/// A user-initiated operation bound to a DOM context.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Action {
    pub action_type: ActionType,
    /// Attribute-based locator resolving to exactly one element in the
    /// source observation's DOM.
    pub target_selector: String,
    /// Element context captured at inference time (tag, id, text, ...).
    #[serde(default, skip_serializing_if = "std::collections::BTreeMap::is_empty")]
    pub target_attributes: std::collections::BTreeMap<String, String>,
    /// Input value(s): the URL for Navigate, the text for FillField, the
    /// key for KeyInput, the event name for ScriptEvent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<String>,
    pub description: String,
}

impl Action {
    /// Deduplication and explored-store key.
    pub fn key(&self) -> String {
        format!(
            "{}:{}:{}",
            self.action_type,
            self.target_selector,
            self.payload.as_deref().unwrap_or("")
        )
    }

    /// Grouping key for entropy/expected-reward statistics:
    /// action type plus target element tag.
    pub fn class_key(&self) -> String {
        let tag = self
            .target_attributes
            .get("tag")
            .cloned()
            .unwrap_or_else(|| {
                let sel = &self.target_selector;
                let end = sel
                    .find(['#', '[', ':'])
                    .unwrap_or(sel.len());
                sel[..end].to_string()
            });
        format!("{}/{}", self.action_type, tag)
    }
}

/// Outcome of comparing two observations.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateDelta {
    pub changed: bool,
    pub url_changed: bool,
    /// Canonical-DOM elements present in exactly one of the two documents.
    pub dom_distance: usize,
    /// Metadata keys whose values differ, sorted.
    pub metadata_diff: Vec<String>,
}

/// Canonical structural summary of markup.
///
/// Keeps element tags, id/name/type/href/action attributes and form-field
/// names in document order; strips text, volatile attributes, and script
/// bodies.
pub fn normalize_dom(page_source: &str, volatile: &[String]) -> Result<String, DomError> {
    Ok(Dom::parse(page_source)?.signature(volatile))
}

/// Compute the canonical identity of an observation.
///
/// Deterministic across runs and platforms: the digest is a SHA-256 over a
/// domain-separated, length-prefixed encoding of the normalized URL path,
/// the DOM signature, and the selected metadata key/value pairs.
pub fn fingerprint(
    obs: &Observation,
    config: &FingerprintConfig,
) -> Result<StateFingerprint, StateError> {
    let raw_url = obs.url()?;
    let url_path = config.normalize_url_path(raw_url);
    let dom_signature = normalize_dom(&obs.page_source, &config.volatile_attributes)?;

    let mut keys: Vec<String> = config
        .metadata_include_keys
        .iter()
        .filter(|k| obs.metadata.contains_key(*k))
        .cloned()
        .collect();
    keys.sort();
    keys.dedup();

    let mut fields: Vec<&[u8]> = vec![b"statewalk-fp-v1", url_path.as_bytes(), dom_signature.as_bytes()];
    let mut kv_storage: Vec<String> = Vec::with_capacity(keys.len());
    for key in &keys {
        kv_storage.push(format!("{key}={}", obs.metadata[key]));
    }
    for kv in &kv_storage {
        fields.push(kv.as_bytes());
    }

    Ok(StateFingerprint {
        digest: sha256_hex(&fields),
        url_path,
        dom_signature,
        metadata_keys: keys,
    })
}

/// Compare two observations.
///
/// `changed` is true exactly when the two fingerprints differ; the remaining
/// fields break the difference down by ingredient.
pub fn diff(
    before: &Observation,
    after: &Observation,
    config: &FingerprintConfig,
) -> Result<StateDelta, StateError> {
    let fp_before = fingerprint(before, config)?;
    let fp_after = fingerprint(after, config)?;

    let tokens_before = Dom::parse(&before.page_source)?.path_tokens(&config.volatile_attributes);
    let tokens_after = Dom::parse(&after.page_source)?.path_tokens(&config.volatile_attributes);
    let dom_distance = symmetric_difference_count(&tokens_before, &tokens_after);

    let mut metadata_diff: Vec<String> = Vec::new();
    for key in before.metadata.keys().chain(after.metadata.keys()) {
        if metadata_diff.iter().any(|k| k == key) {
            continue;
        }
        if before.metadata.get(key) != after.metadata.get(key) {
            metadata_diff.push(key.clone());
        }
    }
    metadata_diff.sort();

    Ok(StateDelta {
        changed: fp_before.digest != fp_after.digest,
        url_changed: fp_before.url_path != fp_after.url_path,
        dom_distance,
        metadata_diff,
    })
}

fn symmetric_difference_count(a: &[String], b: &[String]) -> usize {
    // Both inputs are sorted; count entries present in exactly one side.
    let (mut i, mut j, mut count) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => {
                count += 1;
                i += 1;
            }
            std::cmp::Ordering::Greater => {
                count += 1;
                j += 1;
            }
            std::cmp::Ordering::Equal => {
                i += 1;
                j += 1;
            }
        }
    }
    count + (a.len() - i) + (b.len() - j)
}

pub fn sha256_hex(fields: &[&[u8]]) -> String {
    let mut hasher = Sha256::new();
    for field in fields {
        hasher.update((field.len() as u64).to_be_bytes());
        hasher.update(field);
    }
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for byte in digest {
        out.push_str(&format!("{byte:02x}"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obs(url: &str, page: &str, extra: &[(&str, &str)]) -> Observation {
        let mut metadata = IndexMap::new();
        metadata.insert("url".to_string(), url.to_string());
        metadata.insert("status".to_string(), "200".to_string());
        for (k, v) in extra {
            metadata.insert(k.to_string(), v.to_string());
        }
        Observation {
            page_source: page.to_string(),
            screenshot_ref: None,
            metadata,
            captured_at: 0,
        }
    }

    #[test]
    fn identical_observations_fingerprint_identically() {
        let config = FingerprintConfig::default();
        let a = obs("http://s/a", "<div id=\"x\"><a href=\"/b\"></a></div>", &[]);
        let first = fingerprint(&a, &config).unwrap();
        for _ in 0..100 {
            assert_eq!(fingerprint(&a, &config).unwrap(), first);
        }
        assert_eq!(first.digest.len(), 64);
        assert!(first.digest.chars().all(|c| c.is_ascii_hexdigit()));
    }

    #[test]
    fn dynamic_text_does_not_change_fingerprint() {
        let config = FingerprintConfig::default();
        let a = obs("http://s/", "<div><span>cart: 0</span></div>", &[]);
        let b = obs("http://s/", "<div><span>cart: 3</span></div>", &[]);
        assert_eq!(
            fingerprint(&a, &config).unwrap().digest,
            fingerprint(&b, &config).unwrap().digest
        );
    }

    #[test]
    fn structural_change_always_changes_fingerprint() {
        let config = FingerprintConfig::default();
        let a = obs("http://s/", "<div><a href=\"/x\"></a></div>", &[]);
        let b = obs("http://s/", "<div><a href=\"/x\"></a><form action=\"/f\"></form></div>", &[]);
        assert_ne!(
            fingerprint(&a, &config).unwrap().digest,
            fingerprint(&b, &config).unwrap().digest
        );
    }

    #[test]
    fn excluded_metadata_is_ignored() {
        let config = FingerprintConfig::default();
        let a = obs("http://s/", "<div></div>", &[("session_token", "tok-1")]);
        let b = obs("http://s/", "<div></div>", &[("session_token", "tok-2")]);
        assert_eq!(
            fingerprint(&a, &config).unwrap().digest,
            fingerprint(&b, &config).unwrap().digest
        );
    }

    #[test]
    fn included_metadata_participates() {
        let config = FingerprintConfig::default();
        let a = obs("http://s/", "<div></div>", &[("auth_cookie", "yes")]);
        let b = obs("http://s/", "<div></div>", &[]);
        assert_ne!(
            fingerprint(&a, &config).unwrap().digest,
            fingerprint(&b, &config).unwrap().digest
        );
        let fp = fingerprint(&a, &config).unwrap();
        assert_eq!(fp.metadata_keys, vec!["auth_cookie", "status"]);
    }

    #[test]
    fn query_params_normalize_sorted() {
        let config = FingerprintConfig::default();
        let a = obs("http://s/p?b=2&a=1", "<div></div>", &[]);
        let b = obs("http://s/p?a=1&b=2", "<div></div>", &[]);
        assert_eq!(
            fingerprint(&a, &config).unwrap().url_path,
            fingerprint(&b, &config).unwrap().url_path
        );
        let ignoring = FingerprintConfig {
            ignore_query_params: true,
            ..FingerprintConfig::default()
        };
        assert_eq!(fingerprint(&a, &ignoring).unwrap().url_path, "/p");
    }

    #[test]
    fn diff_of_identical_is_unchanged() {
        let config = FingerprintConfig::default();
        let a = obs("http://s/", "<div><p></p></div>", &[]);
        let delta = diff(&a, &a, &config).unwrap();
        assert!(!delta.changed);
        assert!(!delta.url_changed);
        assert_eq!(delta.dom_distance, 0);
        assert!(delta.metadata_diff.is_empty());
    }

    #[test]
    fn diff_reports_url_and_dom_changes() {
        let config = FingerprintConfig::default();
        let a = obs("http://s/", "<div><a href=\"/r\"></a></div>", &[]);
        let b = obs("http://s/r", "<div><ul><li></li></ul></div>", &[]);
        let delta = diff(&a, &b, &config).unwrap();
        assert!(delta.changed);
        assert!(delta.url_changed);
        assert!(delta.dom_distance > 0);
        assert_eq!(delta.metadata_diff, vec!["url"]);
    }

    #[test]
    fn diff_changed_matches_fingerprint_inequality() {
        // The invariant: changed == (dom differs || url differs || selected
        // metadata differs) == fingerprint inequality.
        let config = FingerprintConfig::default();
        let cases = [
            ("http://s/", "<div></div>", "http://s/", "<div></div>"),
            ("http://s/", "<div></div>", "http://s/x", "<div></div>"),
            ("http://s/", "<div></div>", "http://s/", "<p></p>"),
            ("http://s/", "<div><p></p><span></span></div>", "http://s/", "<div><p><span></span></p></div>"),
        ];
        for (ua, pa, ub, pb) in cases {
            let a = obs(ua, pa, &[]);
            let b = obs(ub, pb, &[]);
            let delta = diff(&a, &b, &config).unwrap();
            let fp_neq = fingerprint(&a, &config).unwrap().digest
                != fingerprint(&b, &config).unwrap().digest;
            assert_eq!(delta.changed, fp_neq, "case {ua} {pa} vs {ub} {pb}");
            let recomposed = delta.dom_distance > 0
                || delta.url_changed
                || delta
                    .metadata_diff
                    .iter()
                    .any(|k| config.metadata_include_keys.contains(k));
            assert_eq!(delta.changed, recomposed);
        }
    }

    #[test]
    fn diff_changed_is_symmetric() {
        let config = FingerprintConfig::default();
        let a = obs("http://s/", "<div><a href=\"/x\"></a></div>", &[]);
        let b = obs("http://s/y", "<div></div>", &[]);
        assert_eq!(
            diff(&a, &b, &config).unwrap().changed,
            diff(&b, &a, &config).unwrap().changed
        );
    }

    #[test]
    fn action_key_includes_payload() {
        let mk = |payload: Option<&str>| Action {
            action_type: ActionType::FillField,
            target_selector: "input[name=q]".into(),
            target_attributes: Default::default(),
            payload: payload.map(String::from),
            description: "fill q".into(),
        };
        assert_ne!(mk(Some("a")).key(), mk(Some("b")).key());
        assert_eq!(mk(None).key(), "fill:input[name=q]:");
    }

    #[test]
    fn class_key_uses_tag() {
        let mut attrs = std::collections::BTreeMap::new();
        attrs.insert("tag".to_string(), "a".to_string());
        let action = Action {
            action_type: ActionType::Navigate,
            target_selector: "a#home".into(),
            target_attributes: attrs,
            payload: Some("http://s/".into()),
            description: "go home".into(),
        };
        assert_eq!(action.class_key(), "navigate/a");
    }

    #[test]
    fn fingerprint_config_loads_from_toml() {
        let text = r#"
            metadata_include_keys = ["status"]
            volatile_attributes = ["style", "href"]
            ignore_query_params = true
        "#;
        let cfg = FingerprintConfig::from_toml(text).unwrap();
        assert!(cfg.ignore_query_params);
        assert_eq!(cfg.volatile_attributes, vec!["style", "href"]);
    }
}
