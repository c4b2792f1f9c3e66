//! Lenient markup parsing and canonical DOM signatures.
//!
//! The canonical form keeps what defines a page's interactive structure
//! (element tags plus the id/name/type/href/action attributes) and drops
//! everything volatile: text nodes, style and other cosmetic attributes,
//! script and style bodies, comments. Two renders of the same page that
//! differ only in dynamic text therefore canonicalize identically.
//!
//! Parsing is deliberately forgiving: unclosed tags are auto-closed, stray
//! close tags are ignored, attributes may be unquoted. The only hard failure
//! is input with no recoverable element structure at all.

use std::collections::BTreeMap;

use thiserror::Error;

/// Attributes that participate in the canonical form, in token order.
/// `id` is rendered separately as a `#id` suffix.
const STRUCTURAL_ATTRS: [&str; 4] = ["name", "type", "href", "action"];

const VOID_ELEMENTS: [&str; 14] = [
    "area", "base", "br", "col", "embed", "hr", "img", "input", "link", "meta", "param", "source",
    "track", "wbr",
];

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DomError {
    /// No element structure at all could be recovered from the input.
    #[error("unparseable markup: no element structure recovered")]
    UnparseableMarkup,
    #[error("selector {0:?} matched no element")]
    SelectorNotFound(String),
    #[error("selector {0:?} matched {1} elements")]
    SelectorAmbiguous(String, usize),
}

/// One element of the parsed document.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Element {
    pub tag: String,
    pub attrs: BTreeMap<String, String>,
    /// Indices into `Dom::elements` of direct element children.
    pub children: Vec<usize>,
    /// Index of this element among its parent's element children
    /// (or among the roots for top-level elements).
    pub ordinal: usize,
    pub parent: Option<usize>,
    /// Position in the flattened document-order walk.
    pub doc_index: usize,
    /// Direct text content, whitespace-collapsed. Never part of the
    /// canonical form; kept for action descriptions.
    pub text: String,
}

impl Element {
    pub fn attr(&self, name: &str) -> Option<&str> {
        self.attrs.get(name).map(String::as_str)
    }

    pub fn id(&self) -> Option<&str> {
        self.attr("id")
    }

    /// Canonical per-element token: tag, optional `#id`, then the retained
    /// structural attributes in fixed order. Attributes listed in `volatile`
    /// are dropped even when structural.
    pub fn token(&self, volatile: &[String]) -> String {
        let mut out = self.tag.clone();
        if !volatile.iter().any(|v| v == "id") {
            if let Some(id) = self.id() {
                out.push('#');
                out.push_str(&escape_token(id));
            }
        }
        for attr in STRUCTURAL_ATTRS {
            if volatile.iter().any(|v| v == attr) {
                continue;
            }
            if let Some(value) = self.attr(attr) {
                out.push('[');
                out.push_str(attr);
                out.push('=');
                out.push_str(&escape_token(value));
                out.push(']');
            }
        }
        out
    }
}

fn escape_token(value: &str) -> String {
    let mut out = String::with_capacity(value.len());
    for ch in value.chars() {
        if matches!(ch, '\\' | ']' | '(' | ')' | ',' | '>' | '#' | '[') {
            out.push('\\');
        }
        out.push(ch);
    }
    out
}

/// A parsed document: a forest of elements in document order.
#[derive(Debug, Clone, Default)]
pub struct Dom {
    pub elements: Vec<Element>,
    pub roots: Vec<usize>,
}

impl Dom {
    /// Parse markup leniently. Fails only when no element can be recovered.
    pub fn parse(markup: &str) -> Result<Dom, DomError> {
        let dom = parse_lenient(markup);
        if dom.elements.is_empty() {
            return Err(DomError::UnparseableMarkup);
        }
        Ok(dom)
    }

    /// Canonical structural signature of the whole document.
    ///
    /// Leaf elements appear as their token; an element with one child is
    /// `parent>child`; multiple children are grouped `parent>(a,b,c)`.
    /// Sibling roots are comma-joined.
    pub fn signature(&self, volatile: &[String]) -> String {
        let parts: Vec<String> = self
            .roots
            .iter()
            .map(|&idx| self.subtree_signature(idx, volatile))
            .collect();
        parts.join(",")
    }

    fn subtree_signature(&self, idx: usize, volatile: &[String]) -> String {
        let elem = &self.elements[idx];
        let mut out = elem.token(volatile);
        match elem.children.len() {
            0 => {}
            1 => {
                out.push('>');
                out.push_str(&self.subtree_signature(elem.children[0], volatile));
            }
            _ => {
                out.push_str(">(");
                let inner: Vec<String> = elem
                    .children
                    .iter()
                    .map(|&c| self.subtree_signature(c, volatile))
                    .collect();
                out.push_str(&inner.join(","));
                out.push(')');
            }
        }
        out
    }

    /// One path token per element: the chain of `ordinal:token` steps from
    /// the root down to the element. Distinct elements always get distinct
    /// path tokens, and the token set determines the signature, so two
    /// documents differ in signature iff their path-token sets differ.
    pub fn path_tokens(&self, volatile: &[String]) -> Vec<String> {
        let mut tokens = Vec::with_capacity(self.elements.len());
        for idx in 0..self.elements.len() {
            let mut chain = Vec::new();
            let mut cur = Some(idx);
            while let Some(i) = cur {
                let e = &self.elements[i];
                chain.push(format!("{}:{}", e.ordinal, e.token(volatile)));
                cur = e.parent;
            }
            chain.reverse();
            tokens.push(chain.join("/"));
        }
        tokens.sort();
        tokens
    }

    /// Document-order indices of all elements matching a selector.
    pub fn query(&self, selector: &Selector) -> Vec<usize> {
        let mut hits: Vec<usize> = (0..self.elements.len())
            .filter(|&i| selector.matches(&self.elements[i]))
            .collect();
        hits.sort_by_key(|&i| self.elements[i].doc_index);
        if let Some(nth) = selector.nth {
            return hits.into_iter().skip(nth).take(1).collect();
        }
        hits
    }

    /// Resolve a selector string to exactly one element.
    pub fn resolve(&self, selector: &str) -> Result<&Element, DomError> {
        let sel = Selector::parse(selector);
        let hits = self.query(&sel);
        match hits.len() {
            0 => Err(DomError::SelectorNotFound(selector.to_string())),
            1 => Ok(&self.elements[hits[0]]),
            n => Err(DomError::SelectorAmbiguous(selector.to_string(), n)),
        }
    }

    /// Build a selector string that uniquely identifies `idx`, preferring
    /// `tag#id`, then `tag[name=..]`, then falling back to a document-order
    /// index suffix `:nth(k)` when the attribute form is ambiguous.
    pub fn selector_for(&self, idx: usize) -> String {
        let elem = &self.elements[idx];
        if let Some(id) = elem.id() {
            let sel = format!("{}#{}", elem.tag, id);
            if self.query(&Selector::parse(&sel)).len() == 1 {
                return sel;
            }
        }
        if let Some(name) = elem.attr("name") {
            let sel = format!("{}[name={}]", elem.tag, name);
            if self.query(&Selector::parse(&sel)).len() == 1 {
                return sel;
            }
        }
        let base = Selector {
            tag: Some(elem.tag.clone()),
            id: None,
            name: None,
            nth: None,
        };
        let hits = self.query(&base);
        let position = hits.iter().position(|&i| i == idx).unwrap_or(0);
        format!("{}:nth({})", elem.tag, position)
    }
}

/// Parsed form of an attribute-based element selector.
///
/// Grammar: `tag`, `tag#id`, `#id`, `tag[name=value]`, each optionally
/// followed by `:nth(k)` to pick the k-th match in document order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Selector {
    pub tag: Option<String>,
    pub id: Option<String>,
    pub name: Option<String>,
    pub nth: Option<usize>,
}

impl Selector {
    pub fn parse(input: &str) -> Selector {
        let mut rest = input.trim();
        let mut nth = None;
        if let Some(pos) = rest.rfind(":nth(") {
            if let Some(close) = rest[pos..].find(')') {
                if let Ok(k) = rest[pos + 5..pos + close].parse::<usize>() {
                    nth = Some(k);
                    rest = rest[..pos].trim_end();
                }
            }
        }
        let mut tag = None;
        let mut id = None;
        let mut name = None;
        if let Some(hash) = rest.find('#') {
            if hash > 0 {
                tag = Some(rest[..hash].to_ascii_lowercase());
            }
            id = Some(rest[hash + 1..].to_string());
        } else if let Some(open) = rest.find('[') {
            tag = Some(rest[..open].to_ascii_lowercase());
            let inner = rest[open + 1..].trim_end_matches(']');
            if let Some(eq) = inner.find('=') {
                let (key, value) = inner.split_at(eq);
                if key == "name" {
                    name = Some(value[1..].to_string());
                }
            }
        } else if !rest.is_empty() {
            tag = Some(rest.to_ascii_lowercase());
        }
        Selector { tag, id, name, nth }
    }

    fn matches(&self, elem: &Element) -> bool {
        if let Some(tag) = &self.tag {
            if &elem.tag != tag {
                return false;
            }
        }
        if let Some(id) = &self.id {
            if elem.id() != Some(id.as_str()) {
                return false;
            }
        }
        if let Some(name) = &self.name {
            if elem.attr("name") != Some(name.as_str()) {
                return false;
            }
        }
        true
    }
}

// ---------------------------------------------------------------------------
// Tokenizer
// ---------------------------------------------------------------------------

fn parse_lenient(markup: &str) -> Dom {
    let bytes = markup.as_bytes();
    let mut dom = Dom::default();
    // Stack of indices into dom.elements for currently-open elements.
    let mut stack: Vec<usize> = Vec::new();
    let mut pos = 0;
    let mut doc_index = 0;

    while pos < bytes.len() {
        let Some(lt) = find_byte(bytes, b'<', pos) else {
            break;
        };
        if lt > pos {
            if let Some(&open) = stack.last() {
                push_text(&mut dom.elements[open].text, &markup[pos..lt]);
            }
        }
        pos = lt + 1;
        if pos >= bytes.len() {
            break;
        }
        match bytes[pos] {
            b'!' => {
                // Comment or doctype: skip to the closing marker.
                if bytes[pos..].starts_with(b"!--") {
                    pos = match find_seq(bytes, b"-->", pos) {
                        Some(end) => end + 3,
                        None => bytes.len(),
                    };
                } else {
                    pos = match find_byte(bytes, b'>', pos) {
                        Some(end) => end + 1,
                        None => bytes.len(),
                    };
                }
            }
            b'/' => {
                let end = match find_byte(bytes, b'>', pos) {
                    Some(e) => e,
                    None => bytes.len(),
                };
                let tag = trim_tag(&markup[pos + 1..end]);
                // Close the nearest matching open element, abandoning any
                // unclosed elements opened after it. Unmatched close tags
                // are ignored.
                if let Some(depth) = stack
                    .iter()
                    .rposition(|&i| dom.elements[i].tag == tag)
                {
                    stack.truncate(depth);
                }
                pos = end + 1;
            }
            b'?' => {
                pos = match find_byte(bytes, b'>', pos) {
                    Some(end) => end + 1,
                    None => bytes.len(),
                };
            }
            c if c.is_ascii_alphabetic() => {
                let (tag, attrs, self_closed, after) = parse_open_tag(markup, pos);
                pos = after;
                let parent = stack.last().copied();
                let ordinal = match parent {
                    Some(p) => dom.elements[p].children.len(),
                    None => dom.roots.len(),
                };
                let idx = dom.elements.len();
                dom.elements.push(Element {
                    tag: tag.clone(),
                    attrs,
                    children: Vec::new(),
                    ordinal,
                    parent,
                    doc_index,
                    text: String::new(),
                });
                doc_index += 1;
                match parent {
                    Some(p) => dom.elements[p].children.push(idx),
                    None => dom.roots.push(idx),
                }
                let void = VOID_ELEMENTS.contains(&tag.as_str());
                if tag == "script" || tag == "style" {
                    // Never recurse into script/style bodies.
                    let close = format!("</{tag}");
                    pos = match find_seq_ci(markup, &close, pos) {
                        Some(found) => match find_byte(bytes, b'>', found) {
                            Some(end) => end + 1,
                            None => bytes.len(),
                        },
                        None => bytes.len(),
                    };
                } else if !void && !self_closed {
                    stack.push(idx);
                }
            }
            _ => {
                // Stray '<' in text; keep scanning.
            }
        }
    }
    dom
}

fn parse_open_tag(
    markup: &str,
    start: usize,
) -> (String, BTreeMap<String, String>, bool, usize) {
    let bytes = markup.as_bytes();
    let mut pos = start;
    while pos < bytes.len() && (bytes[pos].is_ascii_alphanumeric() || bytes[pos] == b'-') {
        pos += 1;
    }
    let tag = markup[start..pos].to_ascii_lowercase();
    let mut attrs = BTreeMap::new();
    let mut self_closed = false;

    loop {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos >= bytes.len() {
            break;
        }
        match bytes[pos] {
            b'>' => {
                pos += 1;
                break;
            }
            b'/' => {
                self_closed = true;
                pos += 1;
            }
            _ => {
                let name_start = pos;
                while pos < bytes.len()
                    && !bytes[pos].is_ascii_whitespace()
                    && !matches!(bytes[pos], b'=' | b'>' | b'/')
                {
                    pos += 1;
                }
                let name = markup[name_start..pos].to_ascii_lowercase();
                while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                    pos += 1;
                }
                let mut value = String::new();
                if pos < bytes.len() && bytes[pos] == b'=' {
                    pos += 1;
                    while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                        pos += 1;
                    }
                    if pos < bytes.len() && (bytes[pos] == b'"' || bytes[pos] == b'\'') {
                        let quote = bytes[pos];
                        pos += 1;
                        let value_start = pos;
                        while pos < bytes.len() && bytes[pos] != quote {
                            pos += 1;
                        }
                        value = markup[value_start..pos].to_string();
                        pos = (pos + 1).min(bytes.len());
                    } else {
                        let value_start = pos;
                        while pos < bytes.len()
                            && !bytes[pos].is_ascii_whitespace()
                            && bytes[pos] != b'>'
                        {
                            pos += 1;
                        }
                        value = markup[value_start..pos].to_string();
                    }
                }
                if !name.is_empty() {
                    attrs.entry(name).or_insert(value);
                }
            }
        }
    }
    (tag, attrs, self_closed, pos)
}

fn trim_tag(raw: &str) -> String {
    raw.trim().trim_end_matches('/').trim().to_ascii_lowercase()
}

fn push_text(target: &mut String, raw: &str) {
    const TEXT_CAP: usize = 80;
    for word in raw.split_whitespace() {
        if target.len() >= TEXT_CAP {
            return;
        }
        if !target.is_empty() {
            target.push(' ');
        }
        target.push_str(word);
    }
}

fn find_byte(bytes: &[u8], needle: u8, from: usize) -> Option<usize> {
    bytes[from.min(bytes.len())..]
        .iter()
        .position(|&b| b == needle)
        .map(|p| p + from)
}

fn find_seq(bytes: &[u8], needle: &[u8], from: usize) -> Option<usize> {
    if from >= bytes.len() {
        return None;
    }
    bytes[from..]
        .windows(needle.len())
        .position(|w| w == needle)
        .map(|p| p + from)
}

fn find_seq_ci(markup: &str, needle: &str, from: usize) -> Option<usize> {
    let lower = markup[from.min(markup.len())..].to_ascii_lowercase();
    lower.find(&needle.to_ascii_lowercase()).map(|p| p + from)
}
