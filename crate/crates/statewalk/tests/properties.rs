//! Property suites for the spec-level invariants that hold over arbitrary
//! inputs: fingerprint determinism and ignorability, reranking laws,
//! reward-model totality, and persistence round trips.

mod common;

use proptest::prelude::*;

use statewalk::graph_io::{self, GraphFormat};
use statewalk::inference::{CandidateAction, CandidateSource, ExploredStore};
use statewalk::rerank::{rerank, RerankConfig};
use statewalk::reward::{should_halt_path, RewardConfig, RewardReason, RewardScore};
use statewalk::state::{diff, fingerprint, Action, ActionType, FingerprintConfig, Observation};

fn observation(url: &str, page: &str, token: &str) -> Observation {
    let mut metadata = indexmap::IndexMap::new();
    metadata.insert("url".to_string(), url.to_string());
    metadata.insert("status".to_string(), "200".to_string());
    metadata.insert("session_token".to_string(), token.to_string());
    Observation {
        page_source: page.to_string(),
        screenshot_ref: None,
        metadata,
        captured_at: 0,
    }
}

fn text_strategy() -> impl Strategy<Value = String> {
    // Arbitrary inline text, excluding markup metacharacters.
    "[ -;=?-~]{0,24}"
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Perturbing only text nodes, style attributes, or excluded metadata
    /// never changes the fingerprint; structural edits always do.
    #[test]
    fn fingerprint_ignorability_and_sensitivity(
        text_a in text_strategy(),
        text_b in text_strategy(),
        style in "[a-z:;0-9 ]{0,16}",
        token_a in "[a-z0-9]{4,12}",
        token_b in "[a-z0-9]{4,12}",
    ) {
        let config = FingerprintConfig::default();
        let page = |text: &str, style: &str| {
            format!(
                "<div id=\"box\" style=\"{style}\"><p>{text}</p><a href=\"/next\">{text}</a></div>"
            )
        };
        let base = observation("http://s/p", &page(&text_a, ""), &token_a);
        let perturbed = observation("http://s/p", &page(&text_b, &style), &token_b);
        let fp_base = fingerprint(&base, &config).unwrap();
        let fp_perturbed = fingerprint(&perturbed, &config).unwrap();
        prop_assert_eq!(&fp_base.digest, &fp_perturbed.digest);

        // Adding a form is a structural change: the fingerprint must move.
        let grown = observation(
            "http://s/p",
            &format!("{}<form action=\"/f\"></form>", page(&text_a, "")),
            &token_a,
        );
        let fp_grown = fingerprint(&grown, &config).unwrap();
        prop_assert_ne!(&fp_base.digest, &fp_grown.digest);

        // And diff agrees with fingerprint inequality in both directions.
        let delta = diff(&base, &grown, &config).unwrap();
        prop_assert!(delta.changed);
        prop_assert_eq!(delta.changed, diff(&grown, &base, &config).unwrap().changed);
    }

    /// Reranking is a permutation, priorities equal the weighted terms,
    /// and raising novelty never drops an action below an unchanged peer.
    #[test]
    fn rerank_permutation_and_novelty_monotonicity(
        novelties in proptest::collection::vec(0..=1u8, 1..8),
        bump_index in 0usize..8,
    ) {
        let store = ExploredStore::new();
        let config = RerankConfig::default();
        let candidates: Vec<CandidateAction> = novelties
            .iter()
            .enumerate()
            .map(|(i, &novel)| CandidateAction {
                action: Action {
                    action_type: ActionType::Click,
                    target_selector: format!("button#b{i}"),
                    target_attributes: Default::default(),
                    payload: None,
                    description: format!("click {i}"),
                },
                novelty: novel as f64,
                source: CandidateSource::Heuristic,
            })
            .collect();
        let ranked = rerank(&candidates, &store, "state", &config);

        // Permutation of the input.
        prop_assert_eq!(ranked.len(), candidates.len());
        let mut in_keys: Vec<String> = candidates.iter().map(|c| c.action.key()).collect();
        let mut out_keys: Vec<String> = ranked.iter().map(|r| r.action.key()).collect();
        in_keys.sort();
        out_keys.sort();
        prop_assert_eq!(in_keys, out_keys);

        // Scale consistency.
        for r in &ranked {
            let expected = config.w_entropy * r.entropy_term
                + config.w_reward * r.expected_reward_term
                + config.w_novelty * r.novelty_term;
            prop_assert!((r.priority - expected).abs() < 1e-12);
        }

        // Monotonicity: bumping one candidate's novelty to 1 never lowers
        // its position.
        let bump = bump_index % candidates.len();
        let position = |rs: &[statewalk::rerank::RankedAction], key: &str| {
            rs.iter().position(|r| r.action.key() == key).unwrap()
        };
        let key = candidates[bump].action.key();
        let before = position(&ranked, &key);
        let mut bumped = candidates.clone();
        bumped[bump].novelty = 1.0;
        let reranked = rerank(&bumped, &store, "state", &config);
        let after = position(&reranked, &key);
        prop_assert!(after <= before, "bumping novelty moved {key} from {before} to {after}");
    }

    /// Any valid reward config keeps emitted values inside [-1, 1] and the
    /// single-score halting rule reduces to a threshold comparison.
    #[test]
    fn reward_values_stay_in_range(
        new_state in 0.01f64..=1.0,
        new_edge in -1.0f64..=1.0,
        no_change in -1.0f64..=-0.01,
        min_reward in -1.0f64..=1.0,
        probe in -1.0f64..=1.0,
    ) {
        let config = RewardConfig {
            min_reward,
            new_state,
            new_edge_known_state: new_edge,
            no_change,
            ..RewardConfig::default()
        };
        config.validate().unwrap();
        for value in [config.new_state, config.new_edge_known_state, config.no_change,
                      config.leaf_dead_end, config.failure] {
            prop_assert!((-1.0..=1.0).contains(&value));
        }
        let single = RewardScore { value: probe, reason: RewardReason::NewState };
        prop_assert_eq!(
            should_halt_path(&[single], &config),
            probe <= config.min_reward
        );
    }

    /// Export->import is structurally lossless for every format on random
    /// graphs with hostile strings.
    #[test]
    fn persistence_round_trip(seed in 0u64..500) {
        let graph = common::random_graph(seed, 40, true);
        for format in [GraphFormat::JsonGraph, GraphFormat::Dot, GraphFormat::GraphMl] {
            let exported = graph_io::export(&graph, format);
            let imported = graph_io::import(&exported, format).unwrap();
            prop_assert!(graph.structural_eq(&imported), "{:?} seed {}", format, seed);
        }
    }

    /// Graph size counters are monotone under insertion.
    #[test]
    fn graph_counters_are_monotone(seed in 0u64..200) {
        use statewalk::graph::{GraphMeta, KnowledgeGraph, StateNode};
        let sample = common::random_graph(seed, 20, false);
        let mut rebuilt = KnowledgeGraph::new(
            sample.root_node().clone(),
            GraphMeta::default(),
        );
        let mut last_nodes = rebuilt.node_count();
        let mut last_edges = rebuilt.edge_count();
        for node in sample.nodes() {
            rebuilt.add_state(StateNode::new(node.fingerprint.clone(), 0, String::new()));
            prop_assert!(rebuilt.node_count() >= last_nodes);
            last_nodes = rebuilt.node_count();
        }
        for edge in sample.edges() {
            rebuilt.add_transition(edge.clone()).unwrap();
            prop_assert!(rebuilt.edge_count() >= last_edges);
            prop_assert!(rebuilt.node_count() >= last_nodes);
            last_edges = rebuilt.edge_count();
        }
        // Every node stays reachable from the root in the original sample,
        // which was built through exploration-style insertions.
        prop_assert_eq!(
            sample.reachable_from_root().len() <= sample.node_count(),
            true
        );
    }
}
