//! Generates synthetic jets, writes them as JSONL and binary, and reads both back.
//!
//! cargo run --example data_io -- [dir]

use std::path::PathBuf;

use gravnorm::data::{load_jets, save_jets, synth_generate, Format, SplitRole};
use gravnorm::Result;

fn main() -> Result<()> {
    let dir = std::env::args().nth(1).map_or_else(std::env::temp_dir, PathBuf::from);
    let split = synth_generate(42, 200, 5, 60)?;
    println!("{} jets, {} signal, {:?} features", split.len(), split.n_signal(), split.feature_dim());

    for format in [Format::Jsonl, Format::Bin] {
        let path = dir.join(format!("gravnorm_example.{}", format.extension()));
        save_jets(&path, &split, format)?;
        let back = load_jets(&path, format, SplitRole::Train)?;
        let bytes = std::fs::metadata(&path)?.len();
        println!("{}: {bytes} bytes, round trip exact: {}", path.display(), back.jets == split.jets);
    }
    Ok(())
}
