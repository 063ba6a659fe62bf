mod common;

use gravnorm::data::synth_generate;
use gravnorm::gravconv::{edge_messages, gravnet_conv, gravnetnorm_conv, GravLayerParams, NodeBlock, Variant};
use gravnorm::model::ForwardMode;
use gravnorm::spatial::{knn_neighbors, radius_neighbors, PointSet};
use gravnorm::{Tagger, TaggerConfig, Tensor};
use common::{dense_conv, rows};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_case(seed: u64) -> (NodeBlock, GravLayerParams) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(10..=50);
    let f = rng.random_range(2..=12);
    let x = Tensor::from_matrix(n, f, (0..n * f).map(|_| rng.random_range(-1.5..1.5)).collect()).unwrap();
    let p = GravLayerParams::init(f, 3, 6, 16, 5, rng.random_range(1.0..5.0), rng.random_range(0.5..2.0), &mut rng).unwrap();
    (NodeBlock { features: x }, p)
}

fn max_abs_diff(a: &[Vec<f64>], b: &Tensor) -> f64 {
    a.iter().flatten().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn norm_and_original_match_dense_oracle() {
    for seed in 0..20 {
        let (block, p) = random_case(seed);
        let x = rows(&block.features);
        let norm = gravnetnorm_conv(&block, &p, None).unwrap();
        let (agg, out) = dense_conv(&p, &x, Variant::Norm, 0);
        assert!(max_abs_diff(&agg, &norm.aggregate) < 1e-10, "seed {seed}");
        assert!(max_abs_diff(&out, &norm.block.features) < 1e-10, "seed {seed}");

        let orig = gravnet_conv(&block, &p, 16, None).unwrap();
        let (agg, out) = dense_conv(&p, &x, Variant::Original, 16);
        assert!(max_abs_diff(&agg, &orig.aggregate) < 1e-10, "seed {seed}");
        assert!(max_abs_diff(&out, &orig.block.features) < 1e-10, "seed {seed}");
    }
}

fn messages_case(seed: u64) -> (Tensor, Tensor, gravnorm::spatial::EdgeList) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 30;
    let s = Tensor::from_matrix(n, 3, (0..n * 3).map(|_| rng.random_range(0.0..1.5)).collect()).unwrap();
    let h = Tensor::from_matrix(n, 22, (0..n * 22).map(|_| rng.random_range(-4.0..4.0)).collect()).unwrap();
    let edges = radius_neighbors(&PointSet::new(s.clone()).unwrap(), 1.0).unwrap();
    (s, h, edges)
}

#[test]
fn scaling_hidden_features() {
    for seed in 0..5 {
        let (s, h, edges) = messages_case(seed);
        let norm = edge_messages(Variant::Norm, &s, &h, &edges, 3.0, 1.0).unwrap();
        let orig = edge_messages(Variant::Original, &s, &h, &edges, 3.0, 1.0).unwrap();
        for c in [0.1, 10.0] {
            let hc = h.map(|v| c * v);
            let norm_c = edge_messages(Variant::Norm, &s, &hc, &edges, 3.0, 1.0).unwrap();
            let orig_c = edge_messages(Variant::Original, &s, &hc, &edges, 3.0, 1.0).unwrap();
            for (a, b) in norm.data().iter().zip(norm_c.data()) {
                assert!((a - b).abs() < 1e-12);
            }
            for (a, b) in orig.data().iter().zip(orig_c.data()) {
                assert!((c * a - b).abs() < 1e-10);
            }
        }
    }
}

#[test]
fn knn_topology_matches_embedding() {
    let (block, p) = random_case(99);
    let out = gravnet_conv(&block, &p, 5, None).unwrap();
    let expect = knn_neighbors(&PointSet::new(out.embedding.clone()).unwrap(), 5).unwrap();
    assert_eq!(out.edges.sorted_pairs(), expect.sorted_pairs());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn tagger_is_permutation_invariant(seed in 0u64..1000, variant in prop_oneof![Just(Variant::Norm), Just(Variant::Original)]) {
        let t = Tagger::new(TaggerConfig::desk(variant, 7), seed).unwrap();
        let jets = synth_generate(seed, 2, 3, 30).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for jet in &jets.jets {
            let (base, _) = t.forward(jet, ForwardMode::Inference).unwrap();
            let mut perm: Vec<usize> = (0..jet.n_nodes()).collect();
            perm.shuffle(&mut rng);
            let (moved, _) = t.forward(&jet.permuted(&perm).unwrap(), ForwardMode::Inference).unwrap();
            prop_assert!((base - moved).abs() < 1e-9);
        }
    }

    #[test]
    fn norm_aggregate_bounded_by_degree(seed in 0u64..1000) {
        let (block, p) = random_case(seed);
        let out = gravnetnorm_conv(&block, &p, None).unwrap();
        let deg = out.edges.degrees(block.features.rows());
        for (i, &d) in deg.iter().enumerate() {
            let l1: f64 = out.aggregate.row(i).iter().map(|v| v.abs()).sum();
            prop_assert!(l1 <= d as f64 + 1e-9);
        }
    }
}

#[test]
fn training_mode_dropout_changes_scores_only_in_training() {
    let t = Tagger::new(TaggerConfig::desk(Variant::Norm, 7), 1).unwrap();
    let jet = &synth_generate(3, 1, 20, 20).unwrap().jets[0];
    let (a, _) = t.forward(jet, ForwardMode::Inference).unwrap();
    let (b, _) = t.forward(jet, ForwardMode::Inference).unwrap();
    assert_eq!(a, b);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (c, _) = t.forward(jet, ForwardMode::Training(&mut rng)).unwrap();
    assert_ne!(a, c);
}
