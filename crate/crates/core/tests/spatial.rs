mod common;

use gravnorm::spatial::{
    build_grid, knn_neighbors, neighborhood_stats, radius_neighbors, radius_neighbors_with, PointSet, RadiusOptions,
    TopologyRule,
};
use gravnorm::Tensor;
use common::{brute_knn, brute_radius};
use proptest::prelude::*;

fn cloud(max_n: usize, dims: std::ops::RangeInclusive<usize>) -> impl Strategy<Value = Vec<Vec<f64>>> {
    (dims, 1..=max_n).prop_flat_map(|(d, n)| prop::collection::vec(prop::collection::vec(-2.0..2.0f64, d), n))
}

fn points(rows: &[Vec<f64>]) -> PointSet {
    PointSet::from_rows(rows).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn radius_matches_brute_force(rows in cloud(120, 1..=5), r in 0.05..1.5f64) {
        let ps = points(&rows);
        let e = radius_neighbors(&ps, r).unwrap();
        e.validate(&ps).unwrap();
        prop_assert_eq!(e.sorted_pairs(), brute_radius(&rows, r));
    }

    #[test]
    fn radius_is_symmetric(rows in cloud(80, 2..=4), r in 0.1..1.0f64) {
        let e = radius_neighbors(&points(&rows), r).unwrap();
        let pairs = e.sorted_pairs();
        for &(i, j) in &pairs {
            prop_assert!(pairs.binary_search(&(j, i)).is_ok());
        }
    }

    #[test]
    fn knn_matches_brute_force(rows in cloud(80, 1..=4), k in 1usize..20) {
        let ps = points(&rows);
        let e = knn_neighbors(&ps, k).unwrap();
        e.validate(&ps).unwrap();
        prop_assert_eq!(e.sorted_pairs(), brute_knn(&rows, k));
        let expect = k.min(rows.len() - 1);
        prop_assert!(e.degrees(rows.len()).iter().all(|&d| d == expect));
    }

    #[test]
    fn knn_ties_on_integer_lattice(xs in prop::collection::vec(-3i32..3, 2..30), k in 1usize..6) {
        let rows: Vec<Vec<f64>> = xs.iter().map(|&x| vec![f64::from(x)]).collect();
        let e = knn_neighbors(&points(&rows), k).unwrap();
        prop_assert_eq!(e.sorted_pairs(), brute_knn(&rows, k));
    }

    #[test]
    fn capped_radius_keeps_nearest(rows in cloud(60, 2..=3), cap in 1usize..6) {
        let ps = points(&rows);
        let full = radius_neighbors(&ps, 1.0).unwrap();
        let capped = radius_neighbors_with(&ps, 1.0, RadiusOptions { max_degree: Some(cap) }).unwrap();
        let deg_full = full.degrees(rows.len());
        let deg_cap = capped.degrees(rows.len());
        for i in 0..rows.len() {
            prop_assert_eq!(deg_cap[i], deg_full[i].min(cap));
        }
        for e in 0..capped.len() {
            let i = capped.src[e];
            let worst_kept = (0..capped.len()).filter(|&x| capped.src[x] == i).map(|x| capped.dist[x]).fold(0.0, f64::max);
            let dropped_min = (0..full.len())
                .filter(|&x| full.src[x] == i && !capped.sorted_pairs().contains(&(i, full.dst[x])))
                .map(|x| full.dist[x])
                .fold(f64::INFINITY, f64::min);
            prop_assert!(worst_kept <= dropped_min);
        }
    }

    #[test]
    fn segments_never_connect(rows in cloud(60, 2..=2), cut in 0usize..60) {
        let n = rows.len();
        let cut = cut.min(n);
        let data: Vec<f64> = rows.iter().flatten().copied().collect();
        let coords = Tensor::from_matrix(n, 2, data).unwrap();
        for rule in [TopologyRule::Radius { r: 3.0, max_degree: None }, TopologyRule::Knn { k: 4 }] {
            let e = rule.build_segmented(&coords, &[0..cut, cut..n]).unwrap();
            for x in 0..e.len() {
                prop_assert_eq!(e.src[x] < cut, e.dst[x] < cut);
            }
        }
    }

    #[test]
    fn grid_partitions_every_point(rows in cloud(100, 1..=6), cell in 0.1..2.0f64) {
        let ps = points(&rows);
        let grid = build_grid(&ps, cell).unwrap();
        let mut all: Vec<usize> = grid.cells().into_iter().flat_map(|(_, m)| m).collect();
        all.sort();
        prop_assert_eq!(all, (0..rows.len()).collect::<Vec<_>>());
        for (i, row) in rows.iter().enumerate() {
            let c = grid.cell_of(row);
            prop_assert!(grid.cell_members(&c).contains(&i));
        }
    }
}

#[test]
fn degenerate_inputs() {
    let one = PointSet::from_rows(&[[0.3, 0.1]]).unwrap();
    assert!(radius_neighbors(&one, 5.0).unwrap().is_empty());
    assert!(knn_neighbors(&one, 16).unwrap().is_empty());
    assert!(radius_neighbors(&one, 0.0).is_err());
    assert!(knn_neighbors(&one, 0).is_err());
    assert!(PointSet::from_rows(&[[f64::NAN, 0.0]]).is_err());
    let seven = PointSet::from_rows(&[[0.0; 7]]).unwrap();
    assert!(build_grid(&seven, 1.0).is_err());
}

#[test]
fn stats_histogram_counts_isolated_nodes() {
    let ps = PointSet::from_rows(&[[0.0], [0.5], [5.0]]).unwrap();
    let e = radius_neighbors(&ps, 1.0).unwrap();
    let s = neighborhood_stats(&e, 3);
    assert_eq!(s.histogram, vec![1, 2]);
    assert!((s.mean_degree - 2.0 / 3.0).abs() < 1e-15);
}
