//! Graph persistence: JSONGraph (normative), DOT, and GraphML.
//!
//! JSONGraph round-trips every field. DOT and GraphML carry the structural
//! content (root, node fingerprints and bookkeeping, edge actions, rewards,
//! attempts) as attributes so `import(export(g))` is structurally equal to
//! `g` in all three formats; an action's captured element attributes travel
//! only in JSONGraph. The DOT/GraphML readers parse exactly the shape this
//! module emits, one element per line, and report the line of the first
//! problem they hit.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{GraphMeta, KnowledgeGraph, StateNode, TransitionEdge};
use crate::reward::{RewardReason, RewardScore};
use crate::state::{Action, ActionType, StateFingerprint};

#[derive(Debug, Error)]
#[error("malformed graph file at line {line}: {message}")]
pub struct MalformedGraphFile {
    pub line: usize,
    pub message: String,
}

fn malformed(line: usize, message: impl Into<String>) -> MalformedGraphFile {
    MalformedGraphFile {
        line,
        message: message.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GraphFormat {
    JsonGraph,
    Dot,
    GraphMl,
}

impl std::str::FromStr for GraphFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "json" | "jsongraph" => Ok(GraphFormat::JsonGraph),
            "dot" => Ok(GraphFormat::Dot),
            "graphml" => Ok(GraphFormat::GraphMl),
            other => Err(format!("unknown graph format {other:?}")),
        }
    }
}

pub fn export(graph: &KnowledgeGraph, format: GraphFormat) -> String {
    match format {
        GraphFormat::JsonGraph => to_json(graph),
        GraphFormat::Dot => to_dot(graph),
        GraphFormat::GraphMl => to_graphml(graph),
    }
}

pub fn import(source: &str, format: GraphFormat) -> Result<KnowledgeGraph, MalformedGraphFile> {
    match format {
        GraphFormat::JsonGraph => from_json(source),
        GraphFormat::Dot => from_dot(source),
        GraphFormat::GraphMl => from_graphml(source),
    }
}

// ---------------------------------------------------------------------------
// JSONGraph
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct JsonGraph {
    root: String,
    nodes: Vec<StateNode>,
    edges: Vec<TransitionEdge>,
    meta: GraphMeta,
}

pub fn to_json(graph: &KnowledgeGraph) -> String {
    let mirror = JsonGraph {
        root: graph.root().to_string(),
        nodes: graph.nodes().cloned().collect(),
        edges: graph.edges().cloned().collect(),
        meta: graph.meta().clone(),
    };
    let mut out = serde_json::to_string_pretty(&mirror).expect("graph serializes");
    out.push('\n');
    out
}

pub fn from_json(source: &str) -> Result<KnowledgeGraph, MalformedGraphFile> {
    let mirror: JsonGraph = serde_json::from_str(source)
        .map_err(|e| malformed(e.line(), e.to_string()))?;
    KnowledgeGraph::from_parts(mirror.root, mirror.nodes, mirror.edges, mirror.meta)
        .map_err(|message| malformed(0, message))
}

// ---------------------------------------------------------------------------
// DOT
// ---------------------------------------------------------------------------

fn dot_escape(value: &str) -> String {
    let mut out = String::with_capacity(value.len());
    for ch in value.chars() {
        match ch {
            '\\' => out.push_str("\\\\"),
            '"' => out.push_str("\\\""),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            _ => out.push(ch),
        }
    }
    out
}

fn dot_unescape(value: &str) -> String {
    let mut out = String::with_capacity(value.len());
    let mut chars = value.chars();
    while let Some(ch) = chars.next() {
        if ch != '\\' {
            out.push(ch);
            continue;
        }
        match chars.next() {
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            Some(other) => out.push(other),
            None => out.push('\\'),
        }
    }
    out
}

fn join_keys(keys: &[String]) -> String {
    keys.join(";")
}

fn split_keys(joined: &str) -> Vec<String> {
    if joined.is_empty() {
        Vec::new()
    } else {
        joined.split(';').map(String::from).collect()
    }
}

fn reward_attrs(reward: &Option<RewardScore>) -> Vec<(&'static str, String)> {
    match reward {
        None => Vec::new(),
        Some(r) => vec![
            ("reward_value", format!("{}", r.value)),
            ("reward_reason", format!("{:?}", r.reason)),
        ],
    }
}

fn parse_reward(
    attrs: &std::collections::BTreeMap<String, String>,
    line: usize,
) -> Result<Option<RewardScore>, MalformedGraphFile> {
    let Some(value) = attrs.get("reward_value") else {
        return Ok(None);
    };
    let value: f64 = value
        .parse()
        .map_err(|e| malformed(line, format!("bad reward_value: {e}")))?;
    let reason = match attrs.get("reward_reason").map(String::as_str) {
        Some("NewState") => RewardReason::NewState,
        Some("NewEdgeKnownState") => RewardReason::NewEdgeKnownState,
        Some("NoChange") => RewardReason::NoChange,
        Some("LeafDeadEnd") => RewardReason::LeafDeadEnd,
        Some("Failure") => RewardReason::Failure,
        other => return Err(malformed(line, format!("bad reward_reason {other:?}"))),
    };
    Ok(Some(RewardScore { value, reason }))
}

pub fn to_dot(graph: &KnowledgeGraph) -> String {
    let mut out = String::from("digraph statewalk {\n  rankdir=LR;\n");
    let meta = graph.meta();
    out.push_str(&format!(
        "  graph [root=\"{}\", app=\"{}\", config_hash=\"{}\", created_at=\"{}\", fingerprint_algo=\"{}\"];\n",
        dot_escape(graph.root()),
        dot_escape(&meta.app),
        dot_escape(&meta.config_hash),
        meta.created_at,
        dot_escape(&meta.fingerprint_algo),
    ));
    for node in graph.nodes() {
        let fp = &node.fingerprint;
        out.push_str(&format!(
            "  \"{}\" [label=\"{}\", fingerprint=\"{}\", url_path=\"{}\", dom_signature=\"{}\", metadata_keys=\"{}\", first_seen_at=\"{}\", observation_ref=\"{}\", visit_count=\"{}\"];\n",
            &fp.digest[..12.min(fp.digest.len())],
            dot_escape(&fp.url_path),
            fp.digest,
            dot_escape(&fp.url_path),
            dot_escape(&fp.dom_signature),
            dot_escape(&join_keys(&fp.metadata_keys)),
            node.first_seen_at,
            dot_escape(&node.observation_ref),
            node.visit_count,
        ));
    }
    for edge in graph.edges() {
        let label = match &edge.reward {
            Some(r) => format!("{} [{}]", edge.action.description, r.value),
            None => edge.action.description.clone(),
        };
        let mut attrs = vec![
            ("label", label),
            ("from", edge.from.clone()),
            ("to", edge.to.clone()),
            ("action_type", edge.action.action_type.to_string()),
            ("selector", edge.action.target_selector.clone()),
            ("description", edge.action.description.clone()),
            ("attempts", edge.attempts.to_string()),
            ("first_failed", edge.first_failed.to_string()),
        ];
        if let Some(payload) = &edge.action.payload {
            attrs.push(("payload", payload.clone()));
        }
        attrs.extend(reward_attrs(&edge.reward));
        let rendered: Vec<String> = attrs
            .iter()
            .map(|(k, v)| format!("{k}=\"{}\"", dot_escape(v)))
            .collect();
        out.push_str(&format!(
            "  \"{}\" -> \"{}\" [{}];\n",
            &edge.from[..12.min(edge.from.len())],
            &edge.to[..12.min(edge.to.len())],
            rendered.join(", "),
        ));
    }
    out.push_str("}\n");
    out
}

/// Parse a `key="value", key="value"` attribute list (the shape `to_dot`
/// emits), honoring backslash escapes inside values.
fn parse_attr_list(
    text: &str,
    line: usize,
) -> Result<std::collections::BTreeMap<String, String>, MalformedGraphFile> {
    let mut attrs = std::collections::BTreeMap::new();
    let mut rest = text;
    loop {
        rest = rest.trim_start_matches([' ', ',']);
        if rest.is_empty() {
            break;
        }
        let eq = rest
            .find('=')
            .ok_or_else(|| malformed(line, "attribute without '='"))?;
        let key = rest[..eq].trim().to_string();
        rest = &rest[eq + 1..];
        if !rest.starts_with('"') {
            return Err(malformed(line, format!("attribute {key:?} value is not quoted")));
        }
        rest = &rest[1..];
        // Scan bytes for the closing unescaped quote; quote and backslash
        // are ASCII, so continuation bytes of multibyte chars never match.
        let bytes = rest.as_bytes();
        let mut i = 0;
        let mut end = None;
        while i < bytes.len() {
            match bytes[i] {
                b'\\' => i += 2,
                b'"' => {
                    end = Some(i);
                    break;
                }
                _ => i += 1,
            }
        }
        let end = end.ok_or_else(|| malformed(line, format!("unterminated value for {key:?}")))?;
        attrs.insert(key, dot_unescape(&rest[..end]));
        rest = &rest[end + 1..];
    }
    Ok(attrs)
}

pub fn from_dot(source: &str) -> Result<KnowledgeGraph, MalformedGraphFile> {
    let mut root = None;
    let mut meta = GraphMeta::default();
    let mut nodes: Vec<StateNode> = Vec::new();
    let mut edges: Vec<TransitionEdge> = Vec::new();

    for (idx, raw_line) in source.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw_line.trim();
        if line.is_empty()
            || line.starts_with("digraph")
            || line.starts_with('}')
            || line.starts_with("rankdir")
            || line.starts_with("//")
        {
            continue;
        }
        let body = line.trim_end_matches(';');
        let Some(open) = body.find('[') else {
            return Err(malformed(line_no, "statement without attribute list"));
        };
        let Some(close) = body.rfind(']') else {
            return Err(malformed(line_no, "unterminated attribute list"));
        };
        let head = body[..open].trim();
        let attrs = parse_attr_list(&body[open + 1..close], line_no)?;

        if head == "graph" {
            root = attrs.get("root").cloned();
            meta = GraphMeta {
                app: attrs.get("app").cloned().unwrap_or_default(),
                config_hash: attrs.get("config_hash").cloned().unwrap_or_default(),
                created_at: attrs
                    .get("created_at")
                    .and_then(|v| v.parse().ok())
                    .unwrap_or(0),
                fingerprint_algo: attrs.get("fingerprint_algo").cloned().unwrap_or_default(),
            };
        } else if head.contains("->") {
            let from = attrs
                .get("from")
                .ok_or_else(|| malformed(line_no, "edge without from attribute"))?;
            let to = attrs
                .get("to")
                .ok_or_else(|| malformed(line_no, "edge without to attribute"))?;
            let action_type: ActionType = attrs
                .get("action_type")
                .ok_or_else(|| malformed(line_no, "edge without action_type"))?
                .parse()
                .map_err(|e: String| malformed(line_no, e))?;
            edges.push(TransitionEdge {
                from: from.clone(),
                to: to.clone(),
                action: Action {
                    action_type,
                    target_selector: attrs.get("selector").cloned().unwrap_or_default(),
                    target_attributes: Default::default(),
                    payload: attrs.get("payload").cloned(),
                    description: attrs.get("description").cloned().unwrap_or_default(),
                },
                reward: parse_reward(&attrs, line_no)?,
                attempts: attrs
                    .get("attempts")
                    .and_then(|v| v.parse().ok())
                    .unwrap_or(1),
                first_failed: attrs.get("first_failed").map(|v| v == "true").unwrap_or(false),
            });
        } else {
            let digest = attrs
                .get("fingerprint")
                .ok_or_else(|| malformed(line_no, "node without fingerprint attribute"))?;
            nodes.push(StateNode {
                fingerprint: StateFingerprint {
                    digest: digest.clone(),
                    url_path: attrs.get("url_path").cloned().unwrap_or_default(),
                    dom_signature: attrs.get("dom_signature").cloned().unwrap_or_default(),
                    metadata_keys: split_keys(attrs.get("metadata_keys").map(String::as_str).unwrap_or("")),
                },
                first_seen_at: attrs
                    .get("first_seen_at")
                    .and_then(|v| v.parse().ok())
                    .unwrap_or(0),
                observation_ref: attrs.get("observation_ref").cloned().unwrap_or_default(),
                visit_count: attrs
                    .get("visit_count")
                    .and_then(|v| v.parse().ok())
                    .unwrap_or(1),
            });
        }
    }

    let root = root.ok_or_else(|| malformed(0, "missing graph root attribute"))?;
    KnowledgeGraph::from_parts(root, nodes, edges, meta).map_err(|m| malformed(0, m))
}

// ---------------------------------------------------------------------------
// GraphML
// ---------------------------------------------------------------------------

fn xml_escape(value: &str) -> String {
    let mut out = String::with_capacity(value.len());
    for ch in value.chars() {
        match ch {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            '\n' => out.push_str("&#10;"),
            '\r' => out.push_str("&#13;"),
            '\t' => out.push_str("&#9;"),
            _ => out.push(ch),
        }
    }
    out
}

fn xml_unescape(value: &str) -> String {
    let mut out = String::with_capacity(value.len());
    let mut rest = value;
    while let Some(pos) = rest.find('&') {
        out.push_str(&rest[..pos]);
        rest = &rest[pos..];
        let Some(end) = rest.find(';') else {
            out.push_str(rest);
            return out;
        };
        match &rest[..=end] {
            "&amp;" => out.push('&'),
            "&lt;" => out.push('<'),
            "&gt;" => out.push('>'),
            "&quot;" => out.push('"'),
            "&apos;" => out.push('\''),
            "&#10;" => out.push('\n'),
            "&#13;" => out.push('\r'),
            "&#9;" => out.push('\t'),
            other => out.push_str(other),
        }
        rest = &rest[end + 1..];
    }
    out.push_str(rest);
    out
}

const GRAPHML_NODE_KEYS: [&str; 6] = [
    "url_path",
    "dom_signature",
    "metadata_keys",
    "first_seen_at",
    "observation_ref",
    "visit_count",
];
const GRAPHML_EDGE_KEYS: [&str; 8] = [
    "action_type",
    "selector",
    "payload",
    "description",
    "attempts",
    "first_failed",
    "reward_value",
    "reward_reason",
];
const GRAPHML_GRAPH_KEYS: [&str; 5] = [
    "root",
    "app",
    "config_hash",
    "created_at",
    "fingerprint_algo",
];

pub fn to_graphml(graph: &KnowledgeGraph) -> String {
    let mut out = String::from(
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<graphml xmlns=\"http://graphml.graphdrawing.org/xmlns\">\n",
    );
    for key in GRAPHML_GRAPH_KEYS {
        out.push_str(&format!(
            "  <key id=\"{key}\" for=\"graph\" attr.name=\"{key}\" attr.type=\"string\"/>\n"
        ));
    }
    for key in GRAPHML_NODE_KEYS {
        out.push_str(&format!(
            "  <key id=\"{key}\" for=\"node\" attr.name=\"{key}\" attr.type=\"string\"/>\n"
        ));
    }
    for key in GRAPHML_EDGE_KEYS {
        out.push_str(&format!(
            "  <key id=\"{key}\" for=\"edge\" attr.name=\"{key}\" attr.type=\"string\"/>\n"
        ));
    }
    out.push_str("  <graph id=\"statewalk\" edgedefault=\"directed\">\n");
    let meta = graph.meta();
    let graph_data = [
        ("root", graph.root().to_string()),
        ("app", meta.app.clone()),
        ("config_hash", meta.config_hash.clone()),
        ("created_at", meta.created_at.to_string()),
        ("fingerprint_algo", meta.fingerprint_algo.clone()),
    ];
    for (key, value) in graph_data {
        out.push_str(&format!(
            "    <data key=\"{key}\">{}</data>\n",
            xml_escape(&value)
        ));
    }
    for node in graph.nodes() {
        let fp = &node.fingerprint;
        out.push_str(&format!("    <node id=\"{}\">\n", fp.digest));
        let data = [
            ("url_path", fp.url_path.clone()),
            ("dom_signature", fp.dom_signature.clone()),
            ("metadata_keys", join_keys(&fp.metadata_keys)),
            ("first_seen_at", node.first_seen_at.to_string()),
            ("observation_ref", node.observation_ref.clone()),
            ("visit_count", node.visit_count.to_string()),
        ];
        for (key, value) in data {
            out.push_str(&format!(
                "      <data key=\"{key}\">{}</data>\n",
                xml_escape(&value)
            ));
        }
        out.push_str("    </node>\n");
    }
    for edge in graph.edges() {
        out.push_str(&format!(
            "    <edge source=\"{}\" target=\"{}\">\n",
            edge.from, edge.to
        ));
        let mut data = vec![
            ("action_type", edge.action.action_type.to_string()),
            ("selector", edge.action.target_selector.clone()),
            ("description", edge.action.description.clone()),
            ("attempts", edge.attempts.to_string()),
            ("first_failed", edge.first_failed.to_string()),
        ];
        if let Some(payload) = &edge.action.payload {
            data.push(("payload", payload.clone()));
        }
        for (key, value) in reward_attrs(&edge.reward) {
            data.push((key, value));
        }
        for (key, value) in data {
            out.push_str(&format!(
                "      <data key=\"{key}\">{}</data>\n",
                xml_escape(&value)
            ));
        }
        out.push_str("    </edge>\n");
    }
    out.push_str("  </graph>\n</graphml>\n");
    out
}

/// Pull `name="value"` out of a single tag line.
fn tag_attr(line: &str, name: &str) -> Option<String> {
    let marker = format!("{name}=\"");
    let start = line.find(&marker)? + marker.len();
    let end = line[start..].find('"')? + start;
    Some(xml_unescape(&line[start..end]))
}

pub fn from_graphml(source: &str) -> Result<KnowledgeGraph, MalformedGraphFile> {
    enum Scope {
        Graph,
        Node,
        Edge,
    }
    let mut scope = Scope::Graph;
    let mut graph_attrs: std::collections::BTreeMap<String, String> = Default::default();
    let mut current: std::collections::BTreeMap<String, String> = Default::default();
    let mut current_id = String::new();
    let mut current_endpoints: (String, String) = Default::default();
    let mut nodes: Vec<StateNode> = Vec::new();
    let mut edges: Vec<TransitionEdge> = Vec::new();

    for (idx, raw_line) in source.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw_line.trim();
        if line.starts_with("<?xml")
            || line.starts_with("<graphml")
            || line.starts_with("</graphml")
            || line.starts_with("<key")
            || line.starts_with("<graph ")
            || line.starts_with("</graph>")
            || line.is_empty()
        {
            continue;
        }
        if let Some(rest) = line.strip_prefix("<node") {
            current_id = tag_attr(rest, "id")
                .ok_or_else(|| malformed(line_no, "node without id"))?;
            current.clear();
            scope = Scope::Node;
        } else if line.starts_with("</node>") {
            nodes.push(StateNode {
                fingerprint: StateFingerprint {
                    digest: current_id.clone(),
                    url_path: current.get("url_path").cloned().unwrap_or_default(),
                    dom_signature: current.get("dom_signature").cloned().unwrap_or_default(),
                    metadata_keys: split_keys(
                        current.get("metadata_keys").map(String::as_str).unwrap_or(""),
                    ),
                },
                first_seen_at: current
                    .get("first_seen_at")
                    .and_then(|v| v.parse().ok())
                    .unwrap_or(0),
                observation_ref: current.get("observation_ref").cloned().unwrap_or_default(),
                visit_count: current
                    .get("visit_count")
                    .and_then(|v| v.parse().ok())
                    .unwrap_or(1),
            });
            scope = Scope::Graph;
        } else if let Some(rest) = line.strip_prefix("<edge") {
            current_endpoints = (
                tag_attr(rest, "source")
                    .ok_or_else(|| malformed(line_no, "edge without source"))?,
                tag_attr(rest, "target")
                    .ok_or_else(|| malformed(line_no, "edge without target"))?,
            );
            current.clear();
            scope = Scope::Edge;
        } else if line.starts_with("</edge>") {
            let action_type: ActionType = current
                .get("action_type")
                .ok_or_else(|| malformed(line_no, "edge without action_type"))?
                .parse()
                .map_err(|e: String| malformed(line_no, e))?;
            edges.push(TransitionEdge {
                from: current_endpoints.0.clone(),
                to: current_endpoints.1.clone(),
                action: Action {
                    action_type,
                    target_selector: current.get("selector").cloned().unwrap_or_default(),
                    target_attributes: Default::default(),
                    payload: current.get("payload").cloned(),
                    description: current.get("description").cloned().unwrap_or_default(),
                },
                reward: parse_reward(&current, line_no)?,
                attempts: current
                    .get("attempts")
                    .and_then(|v| v.parse().ok())
                    .unwrap_or(1),
                first_failed: current.get("first_failed").map(|v| v == "true").unwrap_or(false),
            });
            scope = Scope::Graph;
        } else if line.starts_with("<data") {
            let key = tag_attr(line, "key")
                .ok_or_else(|| malformed(line_no, "data element without key"))?;
            let open_end = line
                .find('>')
                .ok_or_else(|| malformed(line_no, "unterminated data tag"))?;
            let close = line
                .rfind("</data>")
                .ok_or_else(|| malformed(line_no, "data element without closing tag"))?;
            if close < open_end {
                return Err(malformed(line_no, "malformed data element"));
            }
            let value = xml_unescape(&line[open_end + 1..close]);
            match scope {
                Scope::Graph => graph_attrs.insert(key, value),
                Scope::Node | Scope::Edge => current.insert(key, value),
            };
        } else {
            return Err(malformed(line_no, format!("unrecognized line {line:?}")));
        }
    }

    let root = graph_attrs
        .get("root")
        .cloned()
        .ok_or_else(|| malformed(0, "missing graph root"))?;
    let meta = GraphMeta {
        app: graph_attrs.get("app").cloned().unwrap_or_default(),
        config_hash: graph_attrs.get("config_hash").cloned().unwrap_or_default(),
        created_at: graph_attrs
            .get("created_at")
            .and_then(|v| v.parse().ok())
            .unwrap_or(0),
        fingerprint_algo: graph_attrs
            .get("fingerprint_algo")
            .cloned()
            .unwrap_or_default(),
    };
    KnowledgeGraph::from_parts(root, nodes, edges, meta).map_err(|m| malformed(0, m))
}

/// Write atomically: temp file in the same directory, then rename.
pub fn write_atomic(path: &std::path::Path, contents: &str) -> std::io::Result<()> {
    let dir = path.parent().unwrap_or_else(|| std::path::Path::new("."));
    std::fs::create_dir_all(dir)?;
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    std::fs::write(&tmp, contents)?;
    std::fs::rename(&tmp, path)
}
