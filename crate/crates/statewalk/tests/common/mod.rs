//! Shared test oracles. Everything here recomputes expectations by brute
//! force, independently of the library's implementation paths.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use statewalk::graph::{GraphMeta, KnowledgeGraph, StateNode, TransitionEdge};
use statewalk::simapp::{render, Guard, SimAppSpec, SimSession};
use statewalk::state::{
    fingerprint, sha256_hex, Action, ActionType, FingerprintConfig, StateFingerprint,
};

// ---------------------------------------------------------------------------
// Brute-force graph metric references
// ---------------------------------------------------------------------------

/// Deduplicated directed pairs, self-loops excluded.
pub fn oracle_pairs(graph: &KnowledgeGraph) -> BTreeSet<(String, String)> {
    graph
        .edges()
        .filter(|e| e.from != e.to)
        .map(|e| (e.from.clone(), e.to.clone()))
        .collect()
}

pub fn oracle_density(graph: &KnowledgeGraph) -> f64 {
    let n = graph.node_count();
    if n < 2 {
        return 0.0;
    }
    oracle_pairs(graph).len() as f64 / (n * (n - 1)) as f64
}

fn oracle_adjacency(graph: &KnowledgeGraph) -> (Vec<String>, Vec<Vec<usize>>) {
    let nodes: Vec<String> = graph.nodes().map(|n| n.digest().to_string()).collect();
    let index: BTreeMap<&str, usize> = nodes
        .iter()
        .enumerate()
        .map(|(i, d)| (d.as_str(), i))
        .collect();
    let mut adjacency = vec![Vec::new(); nodes.len()];
    for (from, to) in oracle_pairs(graph) {
        adjacency[index[from.as_str()]].push(index[to.as_str()]);
    }
    for list in &mut adjacency {
        list.sort_unstable();
        list.dedup();
    }
    (nodes, adjacency)
}

fn oracle_bfs(adjacency: &[Vec<usize>], source: usize) -> Vec<Option<usize>> {
    let mut dist = vec![None; adjacency.len()];
    dist[source] = Some(0);
    let mut queue = VecDeque::from([source]);
    while let Some(v) = queue.pop_front() {
        let d = dist[v].expect("queued nodes have distances");
        for &w in &adjacency[v] {
            if dist[w].is_none() {
                dist[w] = Some(d + 1);
                queue.push_back(w);
            }
        }
    }
    dist
}

/// All-pairs BFS reference for the mean shortest-path length.
pub fn oracle_avg_shortest_path(graph: &KnowledgeGraph) -> f64 {
    let (nodes, adjacency) = oracle_adjacency(graph);
    let mut total = 0usize;
    let mut count = 0usize;
    for source in 0..nodes.len() {
        for (target, d) in oracle_bfs(&adjacency, source).into_iter().enumerate() {
            if target == source {
                continue;
            }
            if let Some(d) = d {
                total += d;
                count += 1;
            }
        }
    }
    if count == 0 {
        0.0
    } else {
        total as f64 / count as f64
    }
}

/// Every shortest path from `source` to `target`, enumerated exhaustively
/// by depth-first search along distance-increasing edges.
fn enumerate_shortest_paths(
    adjacency: &[Vec<usize>],
    dist: &[Option<usize>],
    source: usize,
    target: usize,
) -> Vec<Vec<usize>> {
    let Some(target_dist) = dist[target] else {
        return Vec::new();
    };
    let mut paths = Vec::new();
    let mut stack = vec![source];
    fn extend(
        adjacency: &[Vec<usize>],
        dist: &[Option<usize>],
        stack: &mut Vec<usize>,
        target: usize,
        target_dist: usize,
        paths: &mut Vec<Vec<usize>>,
    ) {
        let cur = *stack.last().expect("stack nonempty");
        if cur == target {
            if stack.len() - 1 == target_dist {
                paths.push(stack.clone());
            }
            return;
        }
        if stack.len() > target_dist {
            return;
        }
        for &next in &adjacency[cur] {
            if dist[next] == Some(stack.len()) {
                stack.push(next);
                extend(adjacency, dist, stack, target, target_dist, paths);
                stack.pop();
            }
        }
    }
    extend(adjacency, dist, &mut stack, target, target_dist, &mut paths);
    paths
}

/// Mean normalized betweenness by exhaustive shortest-path counting.
pub fn oracle_avg_betweenness(graph: &KnowledgeGraph) -> f64 {
    let (nodes, adjacency) = oracle_adjacency(graph);
    let n = nodes.len();
    if n < 3 {
        return 0.0;
    }
    let mut score = vec![0.0f64; n];
    for source in 0..n {
        let dist = oracle_bfs(&adjacency, source);
        for target in 0..n {
            if target == source {
                continue;
            }
            let paths = enumerate_shortest_paths(&adjacency, &dist, source, target);
            if paths.is_empty() {
                continue;
            }
            let sigma = paths.len() as f64;
            for path in &paths {
                for &v in &path[1..path.len() - 1] {
                    score[v] += 1.0 / sigma;
                }
            }
        }
    }
    let norm = ((n - 1) * (n - 2)) as f64;
    score.iter().map(|v| v / norm).sum::<f64>() / n as f64
}

// ---------------------------------------------------------------------------
// Random graph generation
// ---------------------------------------------------------------------------

pub fn test_fp(tag: &str) -> StateFingerprint {
    StateFingerprint {
        digest: sha256_hex(&[b"test-node", tag.as_bytes()]),
        url_path: format!("/{tag}"),
        dom_signature: format!("div#{tag}"),
        metadata_keys: vec!["status".into()],
    }
}

/// Seeded random directed graph built through the public graph API.
/// `spice` adds hostile strings to action payloads and descriptions.
pub fn random_graph(seed: u64, max_nodes: usize, spice: bool) -> KnowledgeGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 1 + rng.random_range(0..max_nodes);
    let tags: Vec<String> = (0..n).map(|i| format!("s{seed}-{i}")).collect();
    let mut graph = KnowledgeGraph::new(
        StateNode::new(test_fp(&tags[0]), 0, String::new()),
        GraphMeta {
            app: "oracle".into(),
            config_hash: format!("{seed:x}"),
            created_at: seed,
            fingerprint_algo: "sha256/v1".into(),
        },
    );
    for tag in &tags[1..] {
        graph.add_state(StateNode::new(test_fp(tag), 0, String::new()));
    }
    let edge_probability = if n > 1 { 1.8 / n as f64 } else { 0.0 };
    let nasty = [
        "plain",
        "with \"quotes\"",
        "back\\slash",
        "angle <b> & amp",
        "comma, bracket ] paren )",
        "line\nbreak",
        "unicode \u{00e9}\u{4e16}",
    ];
    for from in &tags {
        for to in &tags {
            if rng.random::<f64>() >= edge_probability {
                continue;
            }
            let flavor = nasty[rng.random_range(0..nasty.len())];
            let (payload, description) = if spice {
                (
                    Some(format!("http://x/{flavor}")),
                    format!("go {flavor}"),
                )
            } else {
                (Some(format!("http://x/{to}")), format!("go {to}"))
            };
            let reward = if rng.random::<f64>() < 0.5 {
                Some(statewalk::reward::RewardScore {
                    value: (rng.random::<f64>() * 2.0) - 1.0,
                    reason: statewalk::reward::RewardReason::NewState,
                })
            } else {
                None
            };
            graph
                .add_transition(TransitionEdge {
                    from: test_fp(from).digest,
                    to: test_fp(to).digest,
                    action: Action {
                        action_type: ActionType::Navigate,
                        target_selector: format!("a#{from}-{to}"),
                        target_attributes: Default::default(),
                        payload,
                        description,
                    },
                    reward,
                    attempts: 1 + rng.random_range(0..3),
                    first_failed: rng.random::<f64>() < 0.2,
                })
                .expect("source exists");
        }
    }
    graph
}

// ---------------------------------------------------------------------------
// Simapp ground truth by exhaustive transition-system search
// ---------------------------------------------------------------------------

/// A ground-truth state: the page id plus the projection of its
/// identity-relevant session variables to emptiness classes.
pub type GroundState = (String, BTreeMap<String, bool>);

fn guard_of(when: &Option<String>) -> Option<Guard> {
    when.as_deref().and_then(|g| Guard::parse(g).ok())
}

fn guard_ok(when: &Option<String>, vars: &indexmap::IndexMap<String, String>) -> bool {
    match guard_of(when) {
        None => true,
        Some(guard) => guard.eval(vars),
    }
}

/// Variables that alter a state's rendered identity: element guards, the
/// state's entry guard, and every metadata-published variable (global).
fn referenced_vars(spec: &SimAppSpec, state_id: &str) -> BTreeSet<String> {
    let mut vars: BTreeSet<String> = spec.metadata_vars.values().cloned().collect();
    let Some(state) = spec.state(state_id) else {
        return vars;
    };
    let whens = state
        .links
        .iter()
        .map(|l| &l.when)
        .chain(state.buttons.iter().map(|b| &b.when))
        .chain(state.forms.iter().map(|f| &f.when))
        .chain(state.search_boxes.iter().map(|s| &s.when));
    for when in whens {
        if let Some(guard) = guard_of(when) {
            vars.insert(guard.var);
        }
    }
    if let Some(guard) = guard_of(&state.enter_when) {
        vars.insert(guard.var);
    }
    vars
}

fn project(spec: &SimAppSpec, state_id: &str, vars: &indexmap::IndexMap<String, String>) -> GroundState {
    let projection = referenced_vars(spec, state_id)
        .into_iter()
        .map(|v| {
            let nonempty = vars.get(&v).map(|x| !x.is_empty()).unwrap_or(false);
            (v, nonempty)
        })
        .collect();
    (state_id.to_string(), projection)
}

/// Resolve a navigation to `path` exactly as the app does: explicit nav
/// transition first, then path + entry-guard lookup.
fn resolve_nav(
    spec: &SimAppSpec,
    current: &str,
    vars: &indexmap::IndexMap<String, String>,
    href: &str,
) -> Option<(String, Vec<(String, String)>)> {
    let base = url::Url::parse(&spec.base_url).ok()?;
    let resolved = base.join(href).ok()?;
    if resolved.origin() != base.origin() {
        return None;
    }
    let path = resolved.path().to_string();
    let key = format!("nav:{path}");
    for t in spec.transitions_from(current) {
        if t.action == key && guard_ok(&t.when, vars) {
            return Some((
                t.to.clone(),
                t.set.iter().map(|(k, v)| (k.clone(), v.clone())).collect(),
            ));
        }
    }
    spec.states
        .iter()
        .filter(|s| s.path == path)
        .find(|s| guard_ok(&s.enter_when, vars))
        .map(|s| (s.id.clone(), Vec::new()))
}

/// Exhaustive reachable-state enumeration over the simapp's transition
/// system. With `links_only` the walk follows hyperlinks exclusively,
/// mirroring what a traditional crawler can ever see. Fills write a
/// canonical non-empty value, which is exact because guards only test
/// emptiness.
pub fn oracle_reachable(spec: &SimAppSpec, links_only: bool) -> BTreeSet<GroundState> {
    let initial = {
        let session = SimSession::new(spec);
        (spec.initial_state.clone(), session.vars)
    };
    let mut seen_full: BTreeSet<(String, Vec<(String, String)>)> = BTreeSet::new();
    let mut queue = VecDeque::from([initial]);
    let mut projected: BTreeSet<GroundState> = BTreeSet::new();

    while let Some((state_id, vars)) = queue.pop_front() {
        let full_key = (
            state_id.clone(),
            vars.iter().map(|(k, v)| (k.clone(), v.clone())).collect(),
        );
        if !seen_full.insert(full_key) {
            continue;
        }
        projected.insert(project(spec, &state_id, &vars));
        let Some(state) = spec.state(&state_id) else {
            continue;
        };

        let mut successors: Vec<(String, indexmap::IndexMap<String, String>)> = Vec::new();

        for link in state.links.iter().filter(|l| guard_ok(&l.when, &vars)) {
            if let Some((target, sets)) = resolve_nav(spec, &state_id, &vars, &link.href) {
                let mut next_vars = vars.clone();
                for (k, v) in sets {
                    next_vars.insert(k, v);
                }
                successors.push((target, next_vars));
            }
        }

        if !links_only {
            let mut keys: Vec<String> = Vec::new();
            for button in state.buttons.iter().filter(|b| guard_ok(&b.when, &vars)) {
                keys.push(format!("click:#{}", button.id));
            }
            for form in state.forms.iter().filter(|f| guard_ok(&f.when, &vars)) {
                keys.push(format!("submit:#{}", form.id));
            }
            for sbox in state.search_boxes.iter().filter(|s| guard_ok(&s.when, &vars)) {
                keys.push(format!("key:#{}", sbox.id));
            }
            for key in keys {
                if let Some(t) = spec
                    .transitions_from(&state_id)
                    .find(|t| t.action == key && guard_ok(&t.when, &vars))
                {
                    let mut next_vars = vars.clone();
                    for (k, v) in &t.set {
                        next_vars.insert(k.clone(), v.clone());
                    }
                    successors.push((t.to.clone(), next_vars));
                }
            }
            // Fills: set each writable var to a canonical non-empty value.
            let writable: Vec<String> = state
                .forms
                .iter()
                .filter(|f| guard_ok(&f.when, &vars))
                .flat_map(|f| f.fields.iter().filter_map(|field| field.var.clone()))
                .chain(
                    state
                        .search_boxes
                        .iter()
                        .filter(|s| guard_ok(&s.when, &vars))
                        .filter_map(|s| s.var.clone()),
                )
                .collect();
            for var in writable {
                let mut next_vars = vars.clone();
                next_vars.insert(var, "x".to_string());
                successors.push((state_id.clone(), next_vars));
            }
        }

        queue.extend(successors);
    }
    projected
}

/// Fingerprints of every ground-truth state, computed by rendering a
/// representative session per projection.
pub fn oracle_fingerprints(
    spec: &SimAppSpec,
    links_only: bool,
    config: &FingerprintConfig,
) -> BTreeMap<String, GroundState> {
    // Walk again keeping full var assignments so each projection has a
    // concrete representative to render.
    let mut representatives: BTreeMap<GroundState, indexmap::IndexMap<String, String>> =
        BTreeMap::new();
    let initial = {
        let session = SimSession::new(spec);
        (spec.initial_state.clone(), session.vars)
    };
    let mut seen_full: BTreeSet<(String, Vec<(String, String)>)> = BTreeSet::new();
    let mut queue = VecDeque::from([initial]);
    while let Some((state_id, vars)) = queue.pop_front() {
        let full_key = (
            state_id.clone(),
            vars.iter().map(|(k, v)| (k.clone(), v.clone())).collect(),
        );
        if !seen_full.insert(full_key) {
            continue;
        }
        representatives
            .entry(project(spec, &state_id, &vars))
            .or_insert_with(|| vars.clone());

        let Some(state) = spec.state(&state_id) else { continue };
        for link in state.links.iter().filter(|l| guard_ok(&l.when, &vars)) {
            if let Some((target, sets)) = resolve_nav(spec, &state_id, &vars, &link.href) {
                let mut next_vars = vars.clone();
                for (k, v) in sets {
                    next_vars.insert(k, v);
                }
                queue.push_back((target, next_vars));
            }
        }
        if !links_only {
            let mut keys: Vec<String> = Vec::new();
            for button in state.buttons.iter().filter(|b| guard_ok(&b.when, &vars)) {
                keys.push(format!("click:#{}", button.id));
            }
            for form in state.forms.iter().filter(|f| guard_ok(&f.when, &vars)) {
                keys.push(format!("submit:#{}", form.id));
            }
            for sbox in state.search_boxes.iter().filter(|s| guard_ok(&s.when, &vars)) {
                keys.push(format!("key:#{}", sbox.id));
            }
            for key in keys {
                if let Some(t) = spec
                    .transitions_from(&state_id)
                    .find(|t| t.action == key && guard_ok(&t.when, &vars))
                {
                    let mut next_vars = vars.clone();
                    for (k, v) in &t.set {
                        next_vars.insert(k.clone(), v.clone());
                    }
                    queue.push_back((t.to.clone(), next_vars));
                }
            }
            let writable: Vec<String> = state
                .forms
                .iter()
                .filter(|f| guard_ok(&f.when, &vars))
                .flat_map(|f| f.fields.iter().filter_map(|field| field.var.clone()))
                .chain(
                    state
                        .search_boxes
                        .iter()
                        .filter(|s| guard_ok(&s.when, &vars))
                        .filter_map(|s| s.var.clone()),
                )
                .collect();
            for var in writable {
                let mut next_vars = vars.clone();
                next_vars.insert(var, "x".to_string());
                queue.push_back((state_id.clone(), next_vars));
            }
        }
    }

    representatives
        .into_iter()
        .map(|(ground, vars)| {
            let mut session = SimSession::new(spec);
            session.current = ground.0.clone();
            session.vars = vars;
            let obs = render(spec, &session);
            let fp = fingerprint(&obs, config).expect("representative renders");
            (fp.digest, ground)
        })
        .collect()
}
