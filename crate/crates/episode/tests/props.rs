//! Property tests for episode invariants: within-episode disjointness across
//! many seeds, determinism of the episode stream, and shape stability under
//! class relabeling.

use hypergen_episode::{sample_episode, synth_glyphs, DatasetIndex};
use proptest::prelude::*;

fn glyphs() -> DatasetIndex {
    synth_glyphs(12, 9, 16, 21).unwrap()
}

/// All images drawn in one episode are pairwise distinct tensors. With
/// augmentation off and continuous-valued glyphs, sampling any dataset item
/// twice would produce byte-identical data, so pairwise distinctness is
/// exactly without-replacement sampling.
#[test]
fn support_and_query_are_disjoint_over_1000_seeds() {
    let idx = glyphs();
    for seed in 0..1000u64 {
        let ep = sample_episode(&idx, 4, 1, 1, 1, seed).unwrap();
        let mut all: Vec<&[f32]> = ep.support.iter().map(|s| s.image.data()).collect();
        all.extend(ep.query.iter().map(|q| q.image.data()));
        for i in 0..all.len() {
            for j in i + 1..all.len() {
                assert_ne!(all[i], all[j], "seed {}: duplicate sample {} {}", seed, i, j);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    /// Episode structure is fully determined by (shape, seed).
    #[test]
    fn episode_stream_is_deterministic(seed in 0u64..10_000, n in 2usize..5, k in 1usize..3) {
        let idx = glyphs();
        let a = sample_episode(&idx, n, k, 2, 1, seed).unwrap();
        let b = sample_episode(&idx, n, k, 2, 1, seed).unwrap();
        prop_assert_eq!(&a.class_map, &b.class_map);
        for (sa, sb) in a.support.iter().zip(&b.support) {
            prop_assert_eq!(sa.label, sb.label);
            for (x, y) in sa.image.data().iter().zip(sb.image.data()) {
                prop_assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    /// Relabeling (permuting) the classes in the index changes class_map but
    /// never shapes or counts.
    #[test]
    fn relabeled_index_preserves_shapes(seed in 0u64..10_000) {
        let idx = glyphs();
        let mut relabeled = idx.clone();
        relabeled.classes.reverse();
        let a = sample_episode(&idx, 5, 1, 2, 0, seed).unwrap();
        let b = sample_episode(&relabeled, 5, 1, 2, 0, seed).unwrap();
        prop_assert_eq!(a.support.len(), b.support.len());
        prop_assert_eq!(a.query.len(), b.query.len());
        for (sa, sb) in a.support.iter().zip(&b.support) {
            prop_assert_eq!(sa.image.shape(), sb.image.shape());
            prop_assert_eq!(sa.label, sb.label);
        }
        // The positional draw is identical, so the mapping to class names
        // (identities) changes while all structure stays fixed.
        prop_assert_eq!(&a.class_map, &b.class_map);
        let names_a: Vec<&str> = a.class_map.iter().map(|&c| idx.classes[c].name.as_str()).collect();
        let names_b: Vec<&str> = b.class_map.iter().map(|&c| relabeled.classes[c].name.as_str()).collect();
        prop_assert_ne!(names_a, names_b);
    }

    /// Labeled counts are exact for any admissible episode shape.
    #[test]
    fn per_class_counts_hold(n in 2usize..6, k in 1usize..3, q in 1usize..3, u in 0usize..3) {
        let idx = glyphs();
        prop_assume!(k + q + u <= 9);
        let ep = sample_episode(&idx, n, k, q, u, 4242).unwrap();
        prop_assert_eq!(ep.labeled_count(), n * k);
        prop_assert_eq!(ep.unlabeled_count(), n * u);
        prop_assert_eq!(ep.query.len(), n * q);
    }
}
