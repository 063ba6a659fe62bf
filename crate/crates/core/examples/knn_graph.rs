//! Brute-force k-nearest-neighbor graphs, including ties and small sets.
//!
//! cargo run --example knn_graph

use gravnorm::spatial::{knn_neighbors, PointSet};
use gravnorm::Result;

fn main() -> Result<()> {
    let line = PointSet::from_rows(&[[0.0], [1.0], [2.0], [3.0]])?;
    let edges = knn_neighbors(&line, 1)?;
    // node 1 is equidistant from 0 and 2; the lower index wins
    println!("k = 1 on 0,1,2,3: {:?}", edges.sorted_pairs());

    let pair = PointSet::from_rows(&[[0.0, 0.0], [3.0, 4.0]])?;
    let edges = knn_neighbors(&pair, 16)?;
    println!("k = 16 on two points clamps to 1: {:?} dists {:?}", edges.sorted_pairs(), edges.dist);
    Ok(())
}
