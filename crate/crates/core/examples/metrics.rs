//! Accuracy, ROC AUC and background rejection on a small hand-made set.
//!
//! cargo run --example metrics

use gravnorm::metrics::{accuracy, rejection_at_efficiency, roc_auc, MetricsReport, ScoredSet};
use gravnorm::Result;

fn main() -> Result<()> {
    let set = ScoredSet::new(vec![0.9, 0.6, 0.3, 0.8, 0.4, 0.1], vec![1, 1, 1, 0, 0, 0])?;
    println!("accuracy at 0.5: {:.3}", accuracy(&set, 0.5)?);
    println!("AUC: {:.4}", roc_auc(&set)?);
    for eff in [1.0 / 3.0, 0.5, 0.9] {
        let wp = rejection_at_efficiency(&set, eff)?;
        println!(
            "signal efficiency ≥ {eff:.3}: threshold {}, eps_B {:.3}, rejection {}",
            wp.threshold, wp.background_efficiency, wp.rejection
        );
    }
    println!("{}", serde_json::to_string_pretty(&MetricsReport::compute(&set)?)?);
    Ok(())
}
