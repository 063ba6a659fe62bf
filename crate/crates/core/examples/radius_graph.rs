//! Fixed-radius neighbor search on a uniform grid.
//!
//! cargo run --example radius_graph

use gravnorm::spatial::{build_grid, neighborhood_stats, radius_neighbors, PointSet};
use gravnorm::{Result, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> Result<()> {
    let line = PointSet::from_rows(&[[0.0], [0.5], [2.0]])?;
    let edges = radius_neighbors(&line, 1.0)?;
    println!("1D {{0, 0.5, 2}} with r = 1: {:?} dists {:?}", edges.sorted_pairs(), edges.dist);

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (n, dim, r) = (500, 3, 0.15);
    let data = (0..n * dim).map(|_| rng.random::<f64>()).collect();
    let points = PointSet::new(Tensor::from_matrix(n, dim, data)?)?;
    let grid = build_grid(&points, r)?;
    let edges = radius_neighbors(&points, r)?;
    edges.validate(&points)?;
    let stats = neighborhood_stats(&edges, n);
    println!(
        "{n} uniform points in the unit cube, r = {r}: {} occupied cells, {} edges, mean degree {:.2}, max {}",
        grid.n_cells(),
        edges.len(),
        stats.mean_degree,
        stats.max_degree
    );
    println!("degree histogram: {:?}", stats.histogram);
    Ok(())
}
