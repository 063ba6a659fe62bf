//! Compares tape gradients of the full tagger loss against central finite
//! differences, with topology frozen so the objective is smooth.
//!
//! cargo run --release --example gradient_check -- [step]

use std::sync::Arc;

use gravnorm::data::{synth_generate, Jet};
use gravnorm::gradcheck::finite_diff_check;
use gravnorm::model::{forward_batch, BoundTagger, GraphBatch};
use gravnorm::{Result, Tagger, TaggerConfig, Variant};

fn main() -> Result<()> {
    let step = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1e-6);
    let data = synth_generate(11, 5, 8, 8)?;
    let jets: Vec<&Jet> = data.jets.iter().collect();
    let batch = GraphBatch::from_jets(&jets)?;

    for variant in [Variant::Norm, Variant::Original] {
        let mut cfg = TaggerConfig::desk(variant, 7);
        cfg.dropout = 0.0;
        let tagger = Tagger::new(cfg.clone(), 3)?;
        let edges = tagger.infer_batch(&batch)?.edges;
        let labels: Arc<[f64]> = batch.labels.clone().into();
        let params: Vec<_> = tagger.params.tensors().cloned().collect();

        let check = finite_diff_check(
            |tape, vars| {
                let bound = BoundTagger::from_vars(&tagger.params, vars)?;
                let out = forward_batch(tape, &bound, &cfg, &batch, None, Some(&edges))?;
                tape.bce(out.scores, labels.clone())
            },
            &params,
            step,
        )?;
        let names = tagger.params.tensor_names();
        println!(
            "{variant}: {} entries in {} tensors, max relative error {:.3e} ({})",
            check.n_checked,
            names.len(),
            check.max_rel_error,
            check.worst_tensor.map_or("-", |t| names[t].as_str())
        );
        if let Some((t, e)) = check.worst_entry {
            println!(
                "  worst single entry {}[{e}]: analytic {:.3e}, numeric {:.3e}",
                names[t], check.analytic, check.numeric
            );
        }
    }
    Ok(())
}
