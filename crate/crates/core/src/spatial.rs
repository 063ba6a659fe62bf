//! Neighborhood construction in a learned embedding space.
//!
//! Radius graphs use a uniform grid with `cell_size = r`, so every neighbor
//! of a point lies in one of the `3^D` cells around its own. KNN graphs are
//! built by exhaustive search and serve as the original-GravNet baseline.

use rustc_hash::FxHashMap as HashMap;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Largest embedding dimension accepted by the grid (3^6 = 729 cells per query).
pub const MAX_GRID_DIM: usize = 6;

/// Embedding coordinates, one row per node.
#[derive(Clone, Debug, PartialEq)]
pub struct PointSet {
    coords: Tensor,
}

impl PointSet {
    pub fn new(coords: Tensor) -> Result<Self> {
        coords.require_matrix("point set")?;
        if let Some(pos) = coords.data().iter().position(|v| !v.is_finite()) {
            let d = coords.cols().max(1);
            return Err(Error::Input(format!(
                "non-finite coordinate at node {}, axis {}",
                pos / d,
                pos % d
            )));
        }
        Ok(Self { coords })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        Self::new(Tensor::from_rows(rows)?)
    }

    pub fn len(&self) -> usize {
        self.coords.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.coords.cols()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        self.coords.row(i)
    }

    pub fn coords(&self) -> &Tensor {
        &self.coords
    }
}

pub fn l2_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Directed neighbor pairs. Edge `k` says that node `dst[k]` is a neighbor of
/// node `src[k]`; during aggregation messages flow from `dst` into `src`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EdgeList {
    pub src: Vec<usize>,
    pub dst: Vec<usize>,
    pub dist: Vec<f64>,
}

impl EdgeList {
    pub fn len(&self) -> usize {
        self.src.len()
    }

    pub fn is_empty(&self) -> bool {
        self.src.is_empty()
    }

    fn push(&mut self, src: usize, dst: usize, dist: f64) {
        self.src.push(src);
        self.dst.push(dst);
        self.dist.push(dist);
    }

    /// Appends `other` with every node index shifted by `offset`.
    pub fn extend_offset(&mut self, other: &EdgeList, offset: usize) {
        self.src.extend(other.src.iter().map(|i| i + offset));
        self.dst.extend(other.dst.iter().map(|j| j + offset));
        self.dist.extend_from_slice(&other.dist);
    }

    /// Out-degree of each of `n_nodes` nodes.
    pub fn degrees(&self, n_nodes: usize) -> Vec<usize> {
        let mut deg = vec![0; n_nodes];
        for &i in &self.src {
            if let Some(d) = deg.get_mut(i) {
                *d += 1;
            }
        }
        deg
    }

    /// Edges as sorted `(src, dst)` pairs, for order-independent comparison.
    pub fn sorted_pairs(&self) -> Vec<(usize, usize)> {
        let mut pairs: Vec<_> = self.src.iter().copied().zip(self.dst.iter().copied()).collect();
        pairs.sort_unstable();
        pairs
    }

    /// Checks the structural invariants against the points the edges were built on.
    pub fn validate(&self, points: &PointSet) -> Result<()> {
        if self.src.len() != self.dst.len() || self.src.len() != self.dist.len() {
            return Err(Error::Contract("edge list columns differ in length".into()));
        }
        let n = points.len();
        for k in 0..self.len() {
            let (i, j) = (self.src[k], self.dst[k]);
            if i >= n || j >= n {
                return Err(Error::Contract(format!("edge {k} ({i}→{j}) out of range for {n} nodes")));
            }
            if i == j {
                return Err(Error::Contract(format!("self-edge at node {i}")));
            }
            let expect = l2_distance(points.point(i), points.point(j));
            if (expect - self.dist[k]).abs() > 1e-12 {
                return Err(Error::Contract(format!(
                    "edge {k} distance {} differs from recomputed {expect}",
                    self.dist[k]
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
struct CellKey([i64; MAX_GRID_DIM]);

/// Uniform grid partition of a point set.
#[derive(Clone, Debug)]
pub struct GridIndex {
    cell_size: f64,
    dim: usize,
    cells: HashMap<CellKey, Vec<usize>>,
}

impl GridIndex {
    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    /// Integer cell coordinates of a point (`floor(x / cell_size)` per axis).
    pub fn cell_of(&self, p: &[f64]) -> Vec<i64> {
        self.key(p).0[..self.dim].to_vec()
    }

    pub fn cell_members(&self, cell: &[i64]) -> &[usize] {
        let mut key = [0i64; MAX_GRID_DIM];
        key[..cell.len()].copy_from_slice(cell);
        self.cells.get(&CellKey(key)).map_or(&[], Vec::as_slice)
    }

    /// `(cell coordinates, members)` for every occupied cell, sorted by cell.
    pub fn cells(&self) -> Vec<(Vec<i64>, Vec<usize>)> {
        let mut out: Vec<_> = self
            .cells
            .iter()
            .map(|(k, v)| (k.0[..self.dim].to_vec(), v.clone()))
            .collect();
        out.sort();
        out
    }

    fn key(&self, p: &[f64]) -> CellKey {
        let mut key = [0i64; MAX_GRID_DIM];
        for (k, &x) in key.iter_mut().zip(p) {
            *k = (x / self.cell_size).floor() as i64;
        }
        CellKey(key)
    }

    /// Member lists of the occupied cells in the `3^D` block centred on
    /// `center`. Sparse grids match occupied cells by key instead of probing
    /// every offset.
    fn near_cells(&self, center: &CellKey) -> Vec<&[usize]> {
        let n_offsets = 3usize.pow(self.dim as u32);
        if self.cells.len() < n_offsets {
            return self
                .cells
                .iter()
                .filter(|(k, _)| (0..self.dim).all(|d| k.0[d].abs_diff(center.0[d]) <= 1))
                .map(|(_, v)| v.as_slice())
                .collect();
        }
        let mut out = Vec::new();
        for code in 0..n_offsets {
            let mut key = center.0;
            let mut c = code;
            for k in key.iter_mut().take(self.dim) {
                *k = k.saturating_add((c % 3) as i64 - 1);
                c /= 3;
            }
            if let Some(members) = self.cells.get(&CellKey(key)) {
                out.push(members.as_slice());
            }
        }
        out
    }
}

pub fn build_grid(points: &PointSet, cell_size: f64) -> Result<GridIndex> {
    if !(cell_size > 0.0) || !cell_size.is_finite() {
        return Err(Error::Parameter(format!("cell size must be > 0, got {cell_size}")));
    }
    if points.dim() > MAX_GRID_DIM {
        return Err(Error::Parameter(format!(
            "grid supports at most {MAX_GRID_DIM} dimensions, got {}",
            points.dim()
        )));
    }
    let mut grid = GridIndex {
        cell_size,
        dim: points.dim(),
        cells: HashMap::default(),
    };
    for i in 0..points.len() {
        let key = grid.key(points.point(i));
        grid.cells.entry(key).or_default().push(i);
    }
    Ok(grid)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RadiusOptions {
    /// Keep only the nearest `max_degree` neighbors of each node.
    pub max_degree: Option<usize>,
}

/// All directed pairs `i → j`, `i ≠ j`, with `d_ij ≤ r`.
pub fn radius_neighbors(points: &PointSet, r: f64) -> Result<EdgeList> {
    radius_neighbors_with(points, r, RadiusOptions::default())
}

pub fn radius_neighbors_with(points: &PointSet, r: f64, opts: RadiusOptions) -> Result<EdgeList> {
    if !(r > 0.0) || !r.is_finite() {
        return Err(Error::Parameter(format!("radius must be > 0, got {r}")));
    }
    let grid = build_grid(points, r)?;
    let mut edges = EdgeList::default();
    let mut found: Vec<(f64, usize)> = Vec::new();
    let mut near: HashMap<CellKey, Vec<&[usize]>> = HashMap::with_capacity_and_hasher(grid.cells.len(), Default::default());
    for i in 0..points.len() {
        let p = points.point(i);
        found.clear();
        let key = grid.key(p);
        let cells = near.entry(key).or_insert_with(|| grid.near_cells(&key));
        for &j in cells.iter().flat_map(|c| c.iter()) {
            if j != i {
                let d = l2_distance(p, points.point(j));
                if d <= r {
                    found.push((d, j));
                }
            }
        }
        if let Some(cap) = opts.max_degree {
            if found.len() > cap {
                found.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                found.truncate(cap);
            }
        }
        found.sort_unstable_by_key(|&(_, j)| j);
        for &(d, j) in &found {
            edges.push(i, j, d);
        }
    }
    Ok(edges)
}

/// For each node, edges to its `k` nearest other nodes (ties broken by lower
/// index), in order of increasing distance. `k` is clamped to `N − 1`.
pub fn knn_neighbors(points: &PointSet, k: usize) -> Result<EdgeList> {
    if k < 1 {
        return Err(Error::Parameter("k must be at least 1".into()));
    }
    let n = points.len();
    let k = k.min(n.saturating_sub(1));
    let mut edges = EdgeList::default();
    if k == 0 {
        return Ok(edges);
    }
    let by_dist = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    let mut cand: Vec<(f64, usize)> = Vec::with_capacity(n);
    for i in 0..n {
        let p = points.point(i);
        cand.clear();
        cand.extend((0..n).filter(|&j| j != i).map(|j| (l2_distance(p, points.point(j)), j)));
        if k < cand.len() {
            cand.select_nth_unstable_by(k - 1, by_dist);
            cand.truncate(k);
        }
        cand.sort_unstable_by(by_dist);
        for &(d, j) in &cand {
            edges.push(i, j, d);
        }
    }
    Ok(edges)
}

/// How neighborhoods are formed in one message-passing step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TopologyRule {
    Radius {
        r: f64,
        #[serde(default)]
        max_degree: Option<usize>,
    },
    Knn {
        k: usize,
    },
}

impl TopologyRule {
    pub fn build(&self, points: &PointSet) -> Result<EdgeList> {
        match *self {
            TopologyRule::Radius { r, max_degree } => {
                radius_neighbors_with(points, r, RadiusOptions { max_degree })
            }
            TopologyRule::Knn { k } => knn_neighbors(points, k),
        }
    }

    /// Builds the graph independently inside each row range of `coords`, so
    /// no edge crosses between segments. Indices refer to rows of `coords`.
    pub fn build_segmented(&self, coords: &Tensor, segments: &[Range<usize>]) -> Result<EdgeList> {
        let mut all = EdgeList::default();
        for seg in segments {
            let idx: Vec<usize> = seg.clone().collect();
            let points = PointSet::new(coords.gather_rows(&idx)?)?;
            let local = self.build(&points)?;
            all.extend_offset(&local, seg.start);
        }
        Ok(all)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeighborhoodStats {
    pub mean_degree: f64,
    pub max_degree: usize,
    /// `histogram[d]` is the number of nodes with out-degree `d`.
    pub histogram: Vec<usize>,
}

/// Out-degree summary; isolated nodes count with degree 0.
pub fn neighborhood_stats(edges: &EdgeList, n_nodes: usize) -> NeighborhoodStats {
    let deg = edges.degrees(n_nodes);
    let max_degree = deg.iter().copied().max().unwrap_or(0);
    let mut histogram = vec![0; max_degree + 1];
    for &d in &deg {
        histogram[d] += 1;
    }
    let mean_degree = if n_nodes == 0 {
        0.0
    } else {
        edges.len() as f64 / n_nodes as f64
    };
    NeighborhoodStats {
        mean_degree,
        max_degree,
        histogram,
    }
}
