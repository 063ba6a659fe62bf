//! One GravNetNorm block next to one original GravNet block on the same
//! random point cloud.
//!
//! cargo run --example gravnetnorm_layer

use gravnorm::gravconv::{gravnet_conv, gravnetnorm_conv, GravLayerParams, NodeBlock};
use gravnorm::spatial::neighborhood_stats;
use gravnorm::{Result, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (n, f) = (30, 8);
    let x = Tensor::from_matrix(n, f, (0..n * f).map(|_| rng.random_range(-1.0..1.0)).collect())?;
    let block = NodeBlock { features: x };
    let params = GravLayerParams::init(f, 4, 22, 64, 48, 3.0, 1.0, &mut rng)?;

    let norm = gravnetnorm_conv(&block, &params, None)?;
    let orig = gravnet_conv(&block, &params, 16, None)?;
    for (name, out) in [("gravnetnorm", &norm), ("gravnet k=16", &orig)] {
        let stats = neighborhood_stats(&out.edges, n);
        let agg_l1: f64 = out.aggregate.data().iter().map(|v| v.abs()).sum::<f64>() / n as f64;
        println!(
            "{name:>13}: output {:?}, mean degree {:.2}, mean aggregate L1 {:.3}",
            out.block.features.shape(),
            stats.mean_degree,
            agg_l1
        );
    }
    Ok(())
}
