//! Radius-graph versus brute-force KNN construction time at fixed point
//! density, written as a CSV table.
//!
//! cargo run --release --example topology_scaling -- [out.csv]

use gravnorm::bench::{bench_topology_scaling, write_scaling_csv, ScalingOptions};
use gravnorm::Result;

fn main() -> Result<()> {
    let opts = ScalingOptions::default();
    let rows = bench_topology_scaling(&opts)?;
    println!("{:>6} {:>12} {:>12} {:>8} {:>9}", "N", "t_radius", "t_knn", "degree", "verified");
    for r in &rows {
        println!(
            "{:>6} {:>12.6} {:>12.6} {:>8.2} {:>9}",
            r.n,
            r.radius_secs,
            r.knn_secs,
            r.radius_mean_degree,
            r.verified.unwrap_or(false)
        );
    }
    for w in rows.windows(2) {
        println!(
            "N {} → {}: radius ×{:.2}, knn ×{:.2}",
            w[0].n,
            w[1].n,
            w[1].radius_secs / w[0].radius_secs,
            w[1].knn_secs / w[0].knn_secs
        );
    }
    if let Some(path) = std::env::args().nth(1) {
        write_scaling_csv(path.as_ref(), &rows)?;
    }
    Ok(())
}
