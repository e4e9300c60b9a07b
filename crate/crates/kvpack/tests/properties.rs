//! Property tests for the value-type invariants: serialization round-trips,
//! slicing algebra, comparison monotonicity, tokenizer inverses, and metric
//! conventions.

use proptest::prelude::*;

use kvpack::kv::{caches_equal, KnowledgePack, KvCache};
use kvpack::model::{detokenize, tokenize, ModelConfig, SpecialTokens};
use kvpack::routing::embed_text;
use kvpack::steering::LayerRange;
use kvpack::verify::{exact_match, normalize_answer, token_f1};

fn arb_cache() -> impl Strategy<Value = KvCache> {
    (1usize..=3, 1usize..=2, prop_oneof![Just(2usize), Just(4)], 0usize..=6, 0usize..=40).prop_flat_map(
        |(n_layers, n_heads, d_head, len, offset)| {
            let width = n_heads * d_head;
            let tensor = proptest::collection::vec(-1.0f32..1.0, len * width);
            proptest::collection::vec((tensor.clone(), tensor), n_layers).prop_map(
                move |layers| {
                    let config = ModelConfig {
                        n_layers,
                        n_heads,
                        d_head,
                        d_model: n_heads * d_head,
                        ..ModelConfig::default()
                    };
                    KvCache::from_layer_data(
                        config.fingerprint(),
                        n_heads,
                        d_head,
                        offset,
                        layers,
                    )
                    .unwrap()
                },
            )
        },
    )
}

fn arb_pack() -> impl Strategy<Value = KnowledgePack> {
    (arb_cache(), proptest::collection::vec(".{0,24}", 0..4), any::<bool>()).prop_map(
        |(cache, facts, use_template)| {
            let config = ModelConfig {
                n_layers: cache.n_layers(),
                n_heads: cache.n_heads(),
                d_head: cache.d_head(),
                d_model: cache.n_heads() * cache.d_head(),
                ..ModelConfig::default()
            };
            KnowledgePack {
                embeddings: facts.iter().map(|f| embed_text(f)).collect(),
                facts,
                dialect: "chatml".to_string(),
                use_template,
                config,
                cache,
            }
        },
    )
}

proptest! {
    #[test]
    fn pack_round_trip_is_bit_exact(pack in arb_pack()) {
        let bytes = pack.to_bytes();
        let back = KnowledgePack::from_bytes(&bytes).unwrap();
        prop_assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn slicing_twice_is_slicing_to_the_min(cache in arb_cache(), t1 in 0usize..=6, t2 in 0usize..=6) {
        let t1 = t1.min(cache.len());
        let t2 = t2.min(t1);
        let twice = cache.slice_prefix(t1).unwrap().slice_prefix(t2).unwrap();
        let once = cache.slice_prefix(t2).unwrap();
        prop_assert!(caches_equal(&twice, &once, 0.0).equal());
    }

    #[test]
    fn comparison_is_reflexive_symmetric_monotone(
        cache in arb_cache(),
        layer_pick in any::<prop::sample::Index>(),
        elem_pick in any::<prop::sample::Index>(),
        bump in 0.0f32..2.0,
        tol_lo in 0.0f64..1.0,
        tol_extra in 0.0f64..2.0,
    ) {
        prop_assert!(caches_equal(&cache, &cache, 0.0).equal());

        let mut other = cache.clone();
        if !cache.is_empty() {
            let l = layer_pick.index(cache.n_layers());
            let width = cache.row_width() * cache.len();
            let i = elem_pick.index(width);
            // Perturb through the public slice, reconstructing the cache.
            let mut layers: Vec<(Vec<f32>, Vec<f32>)> = (0..cache.n_layers())
                .map(|ll| (cache.layer_k(ll).to_vec(), cache.layer_v(ll).to_vec()))
                .collect();
            layers[l].1[i] += bump;
            other = KvCache::from_layer_data(
                cache.fingerprint(),
                cache.n_heads(),
                cache.d_head(),
                cache.position_offset(),
                layers,
            )
            .unwrap();
        }

        let lo = caches_equal(&cache, &other, tol_lo);
        let hi = caches_equal(&cache, &other, tol_lo + tol_extra);
        // Monotone: anything equal at a tight tolerance stays equal looser.
        prop_assert!(!lo.equal() || hi.equal());
        // Symmetric.
        let flipped = caches_equal(&other, &cache, tol_lo);
        prop_assert_eq!(lo.equal(), flipped.equal());
        prop_assert_eq!(lo.max_diff(), flipped.max_diff());
    }

    #[test]
    fn byte_tokenization_inverts(bytes in proptest::collection::vec(any::<u8>(), 0..64)) {
        let tokens = tokenize(&bytes, None);
        prop_assert_eq!(detokenize(&tokens, None), bytes);
    }

    #[test]
    fn special_tokenization_inverts(words in proptest::collection::vec("[a-z]{0,6}", 0..8)) {
        let mut reg = SpecialTokens::new();
        reg.register("<|a|>");
        reg.register("<|bb|>");
        let text = words.join("<|a|>") + "<|bb|>";
        let tokens = tokenize(text.as_bytes(), Some(&reg));
        prop_assert_eq!(detokenize(&tokens, Some(&reg)), text.into_bytes());
    }

    #[test]
    fn terciles_partition_any_stack(n in 1usize..=64) {
        let mut joined: Vec<usize> = LayerRange::Early
            .resolve(n)
            .into_iter()
            .chain(LayerRange::Mid.resolve(n))
            .chain(LayerRange::Late.resolve(n))
            .collect();
        joined.sort_unstable();
        prop_assert_eq!(joined, LayerRange::All.resolve(n));
    }

    #[test]
    fn exact_match_is_reflexive(s in ".{0,40}") {
        prop_assert!(exact_match(&s, &s));
    }

    #[test]
    fn f1_is_symmetric_and_bounded(a in "[a-c ]{0,16}", b in "[a-c ]{0,16}") {
        let ab = token_f1(&a, &b);
        let ba = token_f1(&b, &a);
        prop_assert!((ab - ba).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&ab));
    }

    #[test]
    fn normalization_is_idempotent(s in ".{0,40}") {
        let once = normalize_answer(&s);
        prop_assert_eq!(normalize_answer(&once), once);
    }

    #[test]
    fn embeddings_are_unit_or_zero(s in ".{0,40}") {
        let norm = embed_text(&s).norm();
        prop_assert!(norm.abs() < 1e-6 || (norm - 1.0).abs() < 1e-6);
    }
}
