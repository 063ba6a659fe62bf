//! Trains a GravNetNorm tagger on synthetic jets and reports validation metrics.
//!
//! cargo run --release --example train_tagger -- [epochs] [seed] [norm|original]

use std::time::Instant;

use gravnorm::data::{synth_generate_with, SplitRole, SynthParams, DESK_FEATURES};
use gravnorm::metrics::{MetricsReport, ScoredSet};
use gravnorm::spatial::neighborhood_stats;
use gravnorm::train::{train_with, TrainConfig};
use gravnorm::{Result, TaggerConfig, Variant};

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args: Vec<String> = std::env::args().collect();
    let epochs = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(10);
    let seed = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(0);
    let variant: Variant = args.get(3).map_or(Ok(Variant::Norm), |s| s.parse())?;

    let train = synth_generate_with(&SynthParams::new(100 + seed, 2000, 10, 40), SplitRole::Train)?;
    let val = synth_generate_with(&SynthParams::new(200 + seed, 500, 10, 40), SplitRole::Val)?;
    let model = TaggerConfig::desk(variant, DESK_FEATURES);
    let cfg = TrainConfig {
        epochs,
        seed,
        ..TrainConfig::default()
    };

    let started = Instant::now();
    let outcome = train_with(&train, &val, &model, &cfg, |_| false)?;
    println!(
        "trained {} epochs in {:.1}s, best epoch {}",
        outcome.history.len(),
        started.elapsed().as_secs_f64(),
        outcome.best_epoch
    );

    let tagger = &outcome.best;
    let scores = tagger.predict(&val.jets, 32, true)?;
    let labels = val.jets.iter().map(|j| j.label).collect();
    let report = MetricsReport::compute(&ScoredSet::new(scores, labels)?)?;
    println!("{}", serde_json::to_string_pretty(&report)?);

    let mut degrees = vec![0.0; model.blocks.len()];
    for jet in val.jets.iter().take(100) {
        let (_, edges) = tagger.forward(jet, gravnorm::model::ForwardMode::Inference)?;
        for (acc, e) in degrees.iter_mut().zip(&edges) {
            *acc += neighborhood_stats(e, jet.n_nodes()).mean_degree / 100.0;
        }
    }
    println!("mean degree per block: {degrees:.2?}");
    Ok(())
}
