//! Inference timing, allocator-peak accounting and topology-construction
//! scaling.

use std::io::Write;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::alloc;
use crate::data::Jet;
use crate::error::{Error, Result};
use crate::gravconv::Variant;
use crate::model::{GraphBatch, Tagger};
use crate::spatial::{knn_neighbors, l2_distance, neighborhood_stats, radius_neighbors, EdgeList, PointSet};
use crate::tensor::Tensor;

pub const PEAK_LABEL: &str = "allocator peak";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchOptions {
    pub batch_size: usize,
    pub n_trials: usize,
    pub n_warmup: usize,
    /// run jets of the batch in chunks on the rayon pool
    pub parallel: bool,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self {
            batch_size: 64,
            n_trials: 5,
            n_warmup: 2,
            parallel: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub variant: Variant,
    /// "radius" or "knn"
    pub construction: String,
    pub batch_size: usize,
    pub n_warmup: usize,
    pub n_trials: usize,
    pub parallel: bool,
    /// median batch time / batch size, construction included
    pub per_jet_micros: f64,
    pub per_jet_construction_micros: f64,
    pub per_jet_forward_micros: f64,
    /// high-water mark above the pre-trial heap, max over trials
    pub peak_bytes: usize,
    pub peak_label: String,
    pub per_layer_mean_degree: Vec<f64>,
    pub mean_degree: f64,
}

impl BenchReport {
    pub const CSV_HEADER: &'static str = "variant,construction,batch_size,n_warmup,n_trials,parallel,per_jet_micros,per_jet_construction_micros,per_jet_forward_micros,peak_bytes,mean_degree,per_layer_mean_degree";

    pub fn csv_row(&self) -> String {
        let layers: Vec<String> = self.per_layer_mean_degree.iter().map(|d| format!("{d}")).collect();
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            self.variant,
            self.construction,
            self.batch_size,
            self.n_warmup,
            self.n_trials,
            self.parallel,
            self.per_jet_micros,
            self.per_jet_construction_micros,
            self.per_jet_forward_micros,
            self.peak_bytes,
            self.mean_degree,
            layers.join(";")
        )
    }
}

/// A report plus the topology of the final trial, one edge list per block.
#[derive(Clone, Debug)]
pub struct BenchOutcome {
    pub report: BenchReport,
    pub edges: Vec<EdgeList>,
    pub n_nodes: usize,
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

const PARALLEL_CHUNK: usize = 8;

fn run_once(tagger: &Tagger, batch: &GraphBatch, chunks: &[GraphBatch], parallel: bool) -> Result<(Duration, Vec<EdgeList>)> {
    if !parallel {
        let out = tagger.infer_batch(batch)?;
        return Ok((out.construction, out.edges));
    }
    let parts = chunks
        .par_iter()
        .map(|c| tagger.infer_batch(c))
        .collect::<Result<Vec<_>>>()?;
    let n_layers = tagger.config.blocks.len();
    let mut edges = vec![EdgeList::default(); n_layers];
    let mut construction = Duration::ZERO;
    let mut offset = 0;
    for (part, c) in parts.iter().zip(chunks) {
        construction += part.construction;
        for (all, e) in edges.iter_mut().zip(&part.edges) {
            all.extend_offset(e, offset);
        }
        offset += c.n_nodes();
    }
    Ok((construction, edges))
}

/// Times inference of the first `batch_size` jets. Batch assembly happens
/// before timing; only topology construction and the forward pass count.
pub fn bench_inference(tagger: &Tagger, jets: &[Jet], opts: &BenchOptions) -> Result<BenchOutcome> {
    if opts.batch_size == 0 {
        return Err(Error::Parameter("batch_size must be positive".into()));
    }
    if opts.n_trials < 5 {
        return Err(Error::Parameter(format!("need at least 5 trials, got {}", opts.n_trials)));
    }
    if jets.len() < opts.batch_size {
        return Err(Error::Contract(format!(
            "dataset has {} jets, batch needs {}",
            jets.len(),
            opts.batch_size
        )));
    }
    let refs: Vec<&Jet> = jets[..opts.batch_size].iter().collect();
    let batch = GraphBatch::from_jets(&refs)?;
    let chunks = if opts.parallel {
        refs.chunks(PARALLEL_CHUNK).map(GraphBatch::from_jets).collect::<Result<Vec<_>>>()?
    } else {
        Vec::new()
    };

    for _ in 0..opts.n_warmup {
        run_once(tagger, &batch, &chunks, opts.parallel)?;
    }
    let mut totals = Vec::with_capacity(opts.n_trials);
    let mut builds = Vec::with_capacity(opts.n_trials);
    let mut peak = 0;
    let mut edges = Vec::new();
    for _ in 0..opts.n_trials {
        let started = Instant::now();
        let (res, bytes) = alloc::measure_peak(|| run_once(tagger, &batch, &chunks, opts.parallel));
        let total = started.elapsed();
        let (construction, e) = res?;
        totals.push(total.as_secs_f64());
        builds.push(construction.as_secs_f64());
        peak = peak.max(bytes);
        edges = e;
    }
    let per_jet = |secs: f64| secs * 1e6 / opts.batch_size as f64;
    let total = median(&mut totals);
    let build = median(&mut builds);
    let n_nodes = batch.n_nodes();
    let per_layer: Vec<f64> = edges.iter().map(|e| neighborhood_stats(e, n_nodes).mean_degree).collect();
    let mean_degree = if per_layer.is_empty() {
        0.0
    } else {
        per_layer.iter().sum::<f64>() / per_layer.len() as f64
    };
    let construction = match tagger.config.variant {
        Variant::Norm => "radius",
        Variant::Original => "knn",
    };
    Ok(BenchOutcome {
        report: BenchReport {
            variant: tagger.config.variant,
            construction: construction.into(),
            batch_size: opts.batch_size,
            n_warmup: opts.n_warmup,
            n_trials: opts.n_trials,
            parallel: opts.parallel,
            per_jet_micros: per_jet(total),
            per_jet_construction_micros: per_jet(build),
            per_jet_forward_micros: per_jet(total - build),
            peak_bytes: peak,
            peak_label: PEAK_LABEL.into(),
            per_layer_mean_degree: per_layer,
            mean_degree,
        },
        edges,
        n_nodes,
    })
}

pub fn write_reports_csv<W: Write>(mut out: W, reports: &[BenchReport]) -> Result<()> {
    writeln!(out, "{}", BenchReport::CSV_HEADER)?;
    for r in reports {
        writeln!(out, "{}", r.csv_row())?;
    }
    Ok(())
}

/// Volume of a `dim`-ball of radius `r`.
pub fn ball_volume(dim: usize, r: f64) -> f64 {
    match dim {
        0 => 1.0,
        1 => 2.0 * r,
        d => ball_volume(d - 2, r) * 2.0 * std::f64::consts::PI * r * r / d as f64,
    }
}

/// Side of the cube holding `n` uniform points with `expected_degree`
/// neighbors within `r` on average (boundary effects ignored).
pub fn box_side(n: usize, dim: usize, r: f64, expected_degree: f64) -> f64 {
    (n as f64 * ball_volume(dim, r) / expected_degree).powf(1.0 / dim as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingOptions {
    /// strictly increasing point counts
    pub sizes: Vec<usize>,
    pub dim: usize,
    pub r: f64,
    pub k: usize,
    pub expected_degree: f64,
    pub n_trials: usize,
    pub seed: u64,
    /// compare the grid output against a brute-force scan at every size
    pub verify: bool,
}

impl Default for ScalingOptions {
    fn default() -> Self {
        Self {
            sizes: vec![2000, 4000, 8000, 16000],
            dim: 4,
            r: 1.0,
            k: 16,
            expected_degree: 16.0,
            n_trials: 5,
            seed: 0,
            verify: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub n: usize,
    pub box_side: f64,
    pub radius_secs: f64,
    pub knn_secs: f64,
    pub radius_mean_degree: f64,
    /// None when verification was skipped
    pub verified: Option<bool>,
}

/// Sorted `(i, j)` pairs within `r` by exhaustive scan.
pub fn brute_force_radius_pairs(points: &PointSet, r: f64) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    for i in 0..points.len() {
        for j in 0..points.len() {
            if i != j && l2_distance(points.point(i), points.point(j)) <= r {
                pairs.push((i, j));
            }
        }
    }
    pairs
}

fn uniform_points(n: usize, dim: usize, side: f64, rng: &mut impl Rng) -> Result<PointSet> {
    let data = (0..n * dim).map(|_| rng.random_range(0.0..side.max(f64::MIN_POSITIVE))).collect();
    PointSet::new(Tensor::from_matrix(n, dim, data)?)
}

/// Median radius-graph and brute-force KNN construction times per size.
pub fn bench_topology_scaling(opts: &ScalingOptions) -> Result<Vec<ScalingRow>> {
    if opts.sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Parameter("sizes must be strictly increasing".into()));
    }
    if opts.n_trials == 0 || opts.dim == 0 || !(opts.expected_degree > 0.0) {
        return Err(Error::Parameter("need trials, dim and expected degree all positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut rows = Vec::with_capacity(opts.sizes.len());
    for &n in &opts.sizes {
        let side = box_side(n, opts.dim, opts.r, opts.expected_degree);
        let points = uniform_points(n, opts.dim, side, &mut rng)?;
        let mut radius_t = Vec::with_capacity(opts.n_trials);
        let mut knn_t = Vec::with_capacity(opts.n_trials);
        let mut radius_edges = EdgeList::default();
        for _ in 0..opts.n_trials {
            let t = Instant::now();
            radius_edges = radius_neighbors(&points, opts.r)?;
            radius_t.push(t.elapsed().as_secs_f64());
            let t = Instant::now();
            let knn = knn_neighbors(&points, opts.k)?;
            knn_t.push(t.elapsed().as_secs_f64());
            drop(knn);
        }
        let verified = opts
            .verify
            .then(|| radius_edges.sorted_pairs() == brute_force_radius_pairs(&points, opts.r));
        rows.push(ScalingRow {
            n,
            box_side: side,
            radius_secs: median(&mut radius_t),
            knn_secs: median(&mut knn_t),
            radius_mean_degree: neighborhood_stats(&radius_edges, n).mean_degree,
            verified,
        });
    }
    Ok(rows)
}

pub fn write_scaling_csv(path: &Path, rows: &[ScalingRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["n", "t_radius", "t_knn", "radius_mean_degree", "verified"])?;
    for r in rows {
        w.write_record([
            r.n.to_string(),
            r.radius_secs.to_string(),
            r.knn_secs.to_string(),
            r.radius_mean_degree.to_string(),
            r.verified.map_or_else(String::new, |v| v.to_string()),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_generate;
    use crate::model::TaggerConfig;

    #[test]
    fn ball_volumes() {
        let pi = std::f64::consts::PI;
        assert!((ball_volume(2, 1.0) - pi).abs() < 1e-12);
        assert!((ball_volume(3, 2.0) - 4.0 / 3.0 * pi * 8.0).abs() < 1e-9);
        assert!((ball_volume(4, 1.0) - pi * pi / 2.0).abs() < 1e-12);
    }

    #[test]
    fn median_odd_even() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn trivial_single_node_jets() {
        let data = synth_generate(1, 4, 1, 1).unwrap();
        let t = Tagger::new(TaggerConfig::desk(Variant::Norm, 7), 0).unwrap();
        let opts = BenchOptions {
            batch_size: 1,
            ..BenchOptions::default()
        };
        let out = bench_inference(&t, &data.jets, &opts).unwrap();
        assert!(out.report.per_jet_micros.is_finite());
        assert!(out.report.per_layer_mean_degree.iter().all(|&d| d == 0.0));
    }

    #[test]
    fn insufficient_data_is_contract_error() {
        let data = synth_generate(1, 3, 2, 4).unwrap();
        let t = Tagger::new(TaggerConfig::desk(Variant::Norm, 7), 0).unwrap();
        let err = bench_inference(&t, &data.jets, &BenchOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn parallel_mode_reports_same_topology() {
        let data = synth_generate(2, 20, 5, 15).unwrap();
        let t = Tagger::new(TaggerConfig::desk(Variant::Original, 7), 0).unwrap();
        let mut opts = BenchOptions {
            batch_size: 20,
            ..BenchOptions::default()
        };
        let serial = bench_inference(&t, &data.jets, &opts).unwrap();
        opts.parallel = true;
        let par = bench_inference(&t, &data.jets, &opts).unwrap();
        assert_eq!(serial.report.per_layer_mean_degree, par.report.per_layer_mean_degree);
        assert!(serial.report.csv_row().split(',').count() == BenchReport::CSV_HEADER.split(',').count());
    }

    #[test]
    fn single_point_scaling() {
        let rows = bench_topology_scaling(&ScalingOptions {
            sizes: vec![1, 50],
            n_trials: 1,
            ..ScalingOptions::default()
        })
        .unwrap();
        assert_eq!(rows[0].radius_mean_degree, 0.0);
        assert!(rows.iter().all(|r| r.verified == Some(true)));
        assert!(bench_topology_scaling(&ScalingOptions {
            sizes: vec![5, 5],
            ..ScalingOptions::default()
        })
        .is_err());
    }
}
