use gravnorm::bench::{bench_inference, BenchOptions};
use gravnorm::data::{synth_generate, DESK_FEATURES};
use gravnorm::model::ForwardMode;
use gravnorm::{Tagger, TaggerConfig, Variant};

fn opts(parallel: bool) -> BenchOptions {
    BenchOptions {
        batch_size: 16,
        n_trials: 5,
        n_warmup: 1,
        parallel,
    }
}

#[test]
fn reported_degrees_recount_from_edges() {
    let jets = synth_generate(21, 16, 5, 30).unwrap().jets;
    for variant in [Variant::Norm, Variant::Original] {
        let tagger = Tagger::new(TaggerConfig::desk(variant, DESK_FEATURES), 2).unwrap();
        let out = bench_inference(&tagger, &jets, &opts(false)).unwrap();
        assert_eq!(out.n_nodes, jets.iter().map(|j| j.n_nodes()).sum::<usize>());
        for (e, &reported) in out.edges.iter().zip(&out.report.per_layer_mean_degree) {
            assert!((e.len() as f64 / out.n_nodes as f64 - reported).abs() < 1e-12);
        }
        if variant == Variant::Original {
            let expect: usize = jets.iter().map(|j| j.n_nodes() * 16.min(j.n_nodes() - 1)).sum();
            assert!(out.edges.iter().all(|e| e.len() == expect));
        }

        // batched edges are the per-jet edges shifted by each jet's offset
        let mut offset = 0;
        let mut per_jet = vec![Vec::new(); out.edges.len()];
        for jet in &jets {
            let (_, edges) = tagger.forward(jet, ForwardMode::Inference).unwrap();
            for (acc, e) in per_jet.iter_mut().zip(&edges) {
                acc.extend(e.sorted_pairs().into_iter().map(|(i, j)| (i + offset, j + offset)));
            }
            offset += jet.n_nodes();
        }
        for (batched, mut single) in out.edges.iter().zip(per_jet) {
            single.sort();
            assert_eq!(batched.sorted_pairs(), single);
        }

        let par = bench_inference(&tagger, &jets, &opts(true)).unwrap();
        for (a, b) in out.edges.iter().zip(&par.edges) {
            assert_eq!(a.sorted_pairs(), b.sorted_pairs());
        }
    }
}

#[test]
fn report_fields_are_consistent() {
    let jets = synth_generate(22, 16, 5, 30).unwrap().jets;
    let tagger = Tagger::new(TaggerConfig::desk(Variant::Norm, DESK_FEATURES), 2).unwrap();
    let r = bench_inference(&tagger, &jets, &opts(false)).unwrap().report;
    assert_eq!((r.batch_size, r.n_trials, r.n_warmup), (16, 5, 1));
    assert!(r.per_jet_construction_micros <= r.per_jet_micros);
    assert!(r.per_jet_micros > 0.0);
    let mean = r.per_layer_mean_degree.iter().sum::<f64>() / r.per_layer_mean_degree.len() as f64;
    assert!((mean - r.mean_degree).abs() < 1e-12);
    assert!(bench_inference(&tagger, &jets[..4], &opts(false)).is_err());
}
