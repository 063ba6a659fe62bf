//! Per-jet inference time and allocator peak for both variants on the same
//! batch. The norm model is trained briefly first so its neighborhoods are
//! learned rather than random.
//!
//! cargo run --release --example bench_inference -- [train_epochs]

use gravnorm::alloc::PeakAlloc;
use gravnorm::bench::{bench_inference, write_reports_csv, BenchOptions};
use gravnorm::data::{synth_generate_with, SplitRole, SynthParams, DESK_FEATURES};
use gravnorm::train::{train_with, TrainConfig};
use gravnorm::{Result, Tagger, TaggerConfig, Variant};

#[global_allocator]
static ALLOC: PeakAlloc = PeakAlloc;

fn main() -> Result<()> {
    let epochs = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(8);
    let train = synth_generate_with(&SynthParams::new(1, 2000, 10, 40), SplitRole::Train)?;
    let val = synth_generate_with(&SynthParams::new(2, 500, 10, 40), SplitRole::Val)?;
    let batch = synth_generate_with(&SynthParams::new(3, 64, 10, 40), SplitRole::Test)?;

    let cfg = TrainConfig {
        epochs,
        ..TrainConfig::default()
    };
    let norm = train_with(&train, &val, &TaggerConfig::desk(Variant::Norm, DESK_FEATURES), &cfg, |r| {
        r.val_acc >= 0.97
    })?
    .best;
    // KNN cost does not depend on the weights
    let original = Tagger::new(TaggerConfig::desk(Variant::Original, DESK_FEATURES), 0)?;

    let opts = BenchOptions::default();
    let mut reports = Vec::new();
    for tagger in [&norm, &original] {
        let out = bench_inference(tagger, &batch.jets, &opts)?;
        println!("{}", serde_json::to_string_pretty(&out.report)?);
        reports.push(out.report);
    }
    write_reports_csv(std::io::stdout(), &reports)?;
    Ok(())
}
