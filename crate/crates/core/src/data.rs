//! Jets, kinematic features, the synthetic generator, and file formats.
//!
//! # File formats
//!
//! **JSONL**: one jet per line,
//! `{"id": str, "label": 0|1, "p4": [[E,px,py,pz], ...], "feat": [[...], ...]}`.
//! `feat` is optional; when absent the desk kinematic features are computed
//! on load.
//!
//! **Binary** (all integers and floats little-endian):
//!
//! ```text
//! b"GNRM"  u16 version (=1)  u64 n_jets
//! per jet: u32 id_len, id (UTF-8), u8 label, u32 n_nodes, u32 n_features,
//!          f64[n_nodes * 4] four-vectors, f64[n_nodes * n_features] features
//! ```

use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Most constituents a jet may carry.
pub const MAX_CONSTITUENTS: usize = 200;

/// Width of the desk feature set produced by [`compute_features`].
pub const DESK_FEATURES: usize = 7;

pub const BIN_MAGIC: &[u8; 4] = b"GNRM";
pub const BIN_VERSION: u16 = 1;

/// Fraction of malformed records tolerated by the loaders.
pub const MALFORMED_TOLERANCE: f64 = 0.01;

/// One point cloud: constituent four-vectors `(E, px, py, pz)` in GeV,
/// per-node features and a binary label.
#[derive(Clone, Debug, PartialEq)]
pub struct Jet {
    pub id: String,
    pub label: u8,
    pub four_vectors: Tensor,
    pub features: Tensor,
}

impl Jet {
    pub fn new(id: impl Into<String>, label: u8, four_vectors: Tensor, features: Tensor) -> Result<Self> {
        let jet = Self {
            id: id.into(),
            label,
            four_vectors,
            features,
        };
        jet.validate()?;
        Ok(jet)
    }

    /// Builds a jet whose features are the desk kinematic set.
    pub fn from_four_vectors(id: impl Into<String>, label: u8, four_vectors: Tensor) -> Result<Self> {
        let axis = JetAxis::from_constituents(&four_vectors)?;
        let feats = compute_features(&four_vectors, &axis)?;
        Self::new(id, label, four_vectors, feats.matrix)
    }

    pub fn n_nodes(&self) -> usize {
        self.four_vectors.rows()
    }

    pub fn validate(&self) -> Result<()> {
        if self.label > 1 {
            return Err(Error::Input(format!("label must be 0 or 1, got {}", self.label)));
        }
        let (n, four) = self.four_vectors.require_matrix("four-vectors")?;
        if four != 4 {
            return Err(Error::dim("four-vectors", self.four_vectors.shape(), &[n, 4]));
        }
        if n == 0 || n > MAX_CONSTITUENTS {
            return Err(Error::Input(format!(
                "jet {} has {n} constituents, expected 1..={MAX_CONSTITUENTS}",
                self.id
            )));
        }
        let (nf, _) = self.features.require_matrix("features")?;
        if nf != n {
            return Err(Error::dim("features", self.features.shape(), self.four_vectors.shape()));
        }
        if !self.four_vectors.is_finite() || !self.features.is_finite() {
            return Err(Error::Input(format!("jet {} has non-finite entries", self.id)));
        }
        if (0..n).any(|i| self.four_vectors.get(i, 0) < 0.0) {
            return Err(Error::Input(format!("jet {} has a negative-energy constituent", self.id)));
        }
        Ok(())
    }

    /// A copy with constituents reordered so that new node `i` is old `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        Ok(Self {
            id: self.id.clone(),
            label: self.label,
            four_vectors: self.four_vectors.permute_rows(perm)?,
            features: self.features.permute_rows(perm)?,
        })
    }
}

/// Kinematics of the summed jet four-vector.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JetAxis {
    pub pt: f64,
    pub energy: f64,
    pub eta: f64,
    pub phi: f64,
}

impl JetAxis {
    pub fn from_constituents(four_vectors: &Tensor) -> Result<Self> {
        let (_, cols) = four_vectors.require_matrix("four-vectors")?;
        if cols != 4 {
            return Err(Error::dim("four-vectors", four_vectors.shape(), &[0, 4]));
        }
        let mut sum = [0.0; 4];
        for i in 0..four_vectors.rows() {
            for (s, v) in sum.iter_mut().zip(four_vectors.row(i)) {
                *s += v;
            }
        }
        Self::from_p4(sum)
    }

    pub fn from_p4([e, px, py, pz]: [f64; 4]) -> Result<Self> {
        let pt = px.hypot(py);
        if !(pt > 0.0) {
            return Err(Error::Input("jet has zero total transverse momentum".into()));
        }
        Ok(Self {
            pt,
            energy: e,
            eta: (pz / pt).asinh(),
            phi: py.atan2(px),
        })
    }
}

/// Wraps an angle into `(−π, π]`.
pub fn wrap_phi(x: f64) -> f64 {
    let y = x.rem_euclid(2.0 * PI);
    if y > PI {
        y - 2.0 * PI
    } else {
        y
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Features {
    pub matrix: Tensor,
    /// Constituents with zero transverse momentum; their rows are all zeros.
    pub degenerate: usize,
}

/// Desk kinematic features per constituent, in column order:
/// `ln pT, ln E, ln(pT/pT_jet), ln(E/E_jet), Δη, Δφ, ΔR`.
pub fn compute_features(four_vectors: &Tensor, axis: &JetAxis) -> Result<Features> {
    let (n, cols) = four_vectors.require_matrix("four-vectors")?;
    if cols != 4 {
        return Err(Error::dim("four-vectors", four_vectors.shape(), &[n, 4]));
    }
    if !(axis.pt > 0.0) || !(axis.energy > 0.0) {
        return Err(Error::Input("jet axis needs positive pT and energy".into()));
    }
    let mut data = Vec::with_capacity(n * DESK_FEATURES);
    let mut degenerate = 0;
    for i in 0..n {
        let [e, px, py, pz] = [0, 1, 2, 3].map(|k| four_vectors.get(i, k));
        let pt = px.hypot(py);
        if !(pt > 0.0) || !(e > 0.0) {
            degenerate += 1;
            data.extend([0.0; DESK_FEATURES]);
            continue;
        }
        let eta = (pz / pt).asinh();
        let d_eta = eta - axis.eta;
        let d_phi = wrap_phi(py.atan2(px) - axis.phi);
        data.extend([
            pt.ln(),
            e.ln(),
            (pt / axis.pt).ln(),
            (e / axis.energy).ln(),
            d_eta,
            d_phi,
            d_eta.hypot(d_phi),
        ]);
    }
    if degenerate > 0 {
        log::warn!("{degenerate} zero-momentum constituents given all-zero feature rows");
    }
    Ok(Features {
        matrix: Tensor::from_matrix(n, DESK_FEATURES, data)?,
        degenerate,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitRole {
    Train,
    Val,
    Test,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSplit {
    pub role: SplitRole,
    pub jets: Vec<Jet>,
}

impl DatasetSplit {
    pub fn len(&self) -> usize {
        self.jets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.jets.is_empty()
    }

    pub fn n_signal(&self) -> usize {
        self.jets.iter().filter(|j| j.label == 1).count()
    }

    pub fn feature_dim(&self) -> Option<usize> {
        self.jets.first().map(|j| j.features.cols())
    }
}

/// Knobs of the synthetic two-class generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub seed: u64,
    pub n_jets: usize,
    pub n_min: usize,
    pub n_max: usize,
    /// angular width of the single blob in background jets
    pub blob_width: f64,
    /// distance of each prong from the signal jet axis
    pub prong_radius: (f64, f64),
    /// angular width of each prong
    pub prong_width: f64,
}

impl SynthParams {
    pub fn new(seed: u64, n_jets: usize, n_min: usize, n_max: usize) -> Self {
        Self {
            seed,
            n_jets,
            n_min,
            n_max,
            blob_width: 0.1,
            prong_radius: (0.25, 0.5),
            prong_width: 0.04,
        }
    }
}

/// Deterministic synthetic jets. Even-indexed jets are background (one
/// Gaussian angular blob), odd-indexed jets are signal (three prongs).
pub fn synth_generate(seed: u64, n_jets: usize, n_min: usize, n_max: usize) -> Result<DatasetSplit> {
    synth_generate_with(&SynthParams::new(seed, n_jets, n_min, n_max), SplitRole::Train)
}

pub fn synth_generate_with(p: &SynthParams, role: SplitRole) -> Result<DatasetSplit> {
    if p.n_min < 1 || p.n_max > MAX_CONSTITUENTS || p.n_min > p.n_max {
        return Err(Error::Parameter(format!(
            "constituent range {}..={} must lie within 1..={MAX_CONSTITUENTS}",
            p.n_min, p.n_max
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let blob = Normal::new(0.0, p.blob_width).map_err(|e| Error::Parameter(e.to_string()))?;
    let prong = Normal::new(0.0, p.prong_width).map_err(|e| Error::Parameter(e.to_string()))?;
    let share = Exp::new(1.0).expect("unit rate");

    let mut jets = Vec::with_capacity(p.n_jets);
    for idx in 0..p.n_jets {
        let label = (idx % 2) as u8;
        let n = rng.random_range(p.n_min..=p.n_max);
        let eta0 = rng.random_range(-1.5..1.5);
        let phi0 = rng.random_range(-PI..PI);
        let jet_pt = rng.random_range(350.0..450.0);

        let centers: Vec<(f64, f64)> = if label == 0 {
            vec![(0.0, 0.0)]
        } else {
            let rot = rng.random_range(0.0..2.0 * PI);
            (0..3)
                .map(|k| {
                    let rho = rng.random_range(p.prong_radius.0..p.prong_radius.1);
                    let ang = rot + 2.0 * PI * k as f64 / 3.0 + rng.random_range(-0.3..0.3);
                    (rho * ang.cos(), rho * ang.sin())
                })
                .collect()
        };

        let weights: Vec<f64> = (0..n).map(|_| share.sample(&mut rng)).collect();
        let total: f64 = weights.iter().sum();
        let mut p4 = Vec::with_capacity(n * 4);
        for w in weights {
            let (d_eta, d_phi) = if label == 0 {
                (blob.sample(&mut rng), blob.sample(&mut rng))
            } else {
                let u: f64 = rng.random();
                let c = centers[if u < 0.5 { 0 } else if u < 0.8 { 1 } else { 2 }];
                (c.0 + prong.sample(&mut rng), c.1 + prong.sample(&mut rng))
            };
            let pt = (jet_pt * w / total).max(1e-3);
            let eta = eta0 + d_eta;
            let phi = wrap_phi(phi0 + d_phi);
            p4.extend([pt * eta.cosh(), pt * phi.cos(), pt * phi.sin(), pt * eta.sinh()]);
        }
        let four_vectors = Tensor::from_matrix(n, 4, p4)?;
        jets.push(Jet::from_four_vectors(format!("synth-{}-{idx}", p.seed), label, four_vectors)?);
    }
    Ok(DatasetSplit { role, jets })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Jsonl,
    Bin,
}

impl Format {
    /// `.bin` files are binary; everything else is treated as JSONL.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("bin") => Format::Bin,
            _ => Format::Jsonl,
        }
    }

    pub fn extension(self) -> &'static str {
        match self {
            Format::Jsonl => "jsonl",
            Format::Bin => "bin",
        }
    }
}

impl std::str::FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "jsonl" => Ok(Format::Jsonl),
            "bin" => Ok(Format::Bin),
            other => Err(Error::Parameter(format!("unknown format {other:?}"))),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct JetRecord {
    id: String,
    label: u8,
    p4: Vec<[f64; 4]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    feat: Option<Vec<Vec<f64>>>,
}

impl JetRecord {
    fn into_jet(self) -> Result<Jet> {
        let p4 = Tensor::from_rows(&self.p4)?;
        match self.feat {
            Some(rows) => Jet::new(self.id, self.label, p4, Tensor::from_rows(&rows)?),
            None => Jet::from_four_vectors(self.id, self.label, p4),
        }
    }

    fn from_jet(jet: &Jet) -> Self {
        let p4 = (0..jet.n_nodes())
            .map(|i| {
                let r = jet.four_vectors.row(i);
                [r[0], r[1], r[2], r[3]]
            })
            .collect();
        let feat = (0..jet.n_nodes()).map(|i| jet.features.row(i).to_vec()).collect();
        Self {
            id: jet.id.clone(),
            label: jet.label,
            p4,
            feat: Some(feat),
        }
    }
}

pub fn save_jets(path: &Path, split: &DatasetSplit, format: Format) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    match format {
        Format::Jsonl => {
            for jet in &split.jets {
                serde_json::to_writer(&mut w, &JetRecord::from_jet(jet))?;
                w.write_all(b"\n")?;
            }
        }
        Format::Bin => {
            w.write_all(BIN_MAGIC)?;
            w.write_all(&BIN_VERSION.to_le_bytes())?;
            w.write_all(&(split.jets.len() as u64).to_le_bytes())?;
            for jet in &split.jets {
                let id = jet.id.as_bytes();
                w.write_all(&(id.len() as u32).to_le_bytes())?;
                w.write_all(id)?;
                w.write_all(&[jet.label])?;
                w.write_all(&(jet.n_nodes() as u32).to_le_bytes())?;
                w.write_all(&(jet.features.cols() as u32).to_le_bytes())?;
                for v in jet.four_vectors.data().iter().chain(jet.features.data()) {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Tracks malformed records and enforces the tolerance.
struct Ingest {
    path: PathBuf,
    total: usize,
    malformed: usize,
    first: Option<(usize, String)>,
    width: Option<usize>,
}

impl Ingest {
    fn new(path: &Path) -> Self {
        Self {
            path: path.to_path_buf(),
            total: 0,
            malformed: 0,
            first: None,
            width: None,
        }
    }

    fn accept(&mut self, line: usize, parsed: Result<Jet>, jets: &mut Vec<Jet>) {
        self.total += 1;
        let checked = parsed.and_then(|jet| {
            let w = jet.features.cols();
            match self.width {
                Some(expected) if expected != w => Err(Error::Input(format!(
                    "feature width {w} differs from {expected} of earlier records"
                ))),
                _ => {
                    self.width = Some(w);
                    Ok(jet)
                }
            }
        });
        match checked {
            Ok(jet) => jets.push(jet),
            Err(e) => {
                self.malformed += 1;
                if self.first.is_none() {
                    self.first = Some((line, e.to_string()));
                }
            }
        }
    }

    fn finish(self, role: SplitRole, jets: Vec<Jet>) -> Result<DatasetSplit> {
        if self.total == 0 {
            log::warn!("{} contains no jets", self.path.display());
        }
        if self.malformed as f64 > MALFORMED_TOLERANCE * self.total as f64 {
            let (first_line, reason) = self.first.unwrap_or_default();
            return Err(Error::Ingestion {
                path: self.path,
                malformed: self.malformed,
                total: self.total,
                first_line,
                reason,
            });
        }
        if self.malformed > 0 {
            log::warn!(
                "skipped {} malformed records of {} in {}",
                self.malformed,
                self.total,
                self.path.display()
            );
        }
        Ok(DatasetSplit { role, jets })
    }
}

/// Loads a split, validating every jet. Malformed records are skipped as
/// long as they make up at most 1% of the file.
pub fn load_jets(path: &Path, format: Format, role: SplitRole) -> Result<DatasetSplit> {
    let file = File::open(path)?;
    let mut ingest = Ingest::new(path);
    let mut jets = Vec::new();
    match format {
        Format::Jsonl => {
            for (i, line) in BufReader::new(file).lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let parsed = serde_json::from_str::<JetRecord>(&line)
                    .map_err(Error::from)
                    .and_then(JetRecord::into_jet);
                ingest.accept(i + 1, parsed, &mut jets);
            }
        }
        Format::Bin => {
            let mut r = BufReader::new(file);
            let structural = |reason: String| Error::Ingestion {
                path: path.to_path_buf(),
                malformed: 0,
                total: 0,
                first_line: 0,
                reason,
            };
            let mut magic = [0u8; 4];
            if r.read_exact(&mut magic).is_err() {
                log::warn!("{} is empty", path.display());
                return Ok(DatasetSplit { role, jets });
            }
            if &magic != BIN_MAGIC {
                return Err(structural(format!("bad magic {magic:?}")));
            }
            let version = u16::from_le_bytes(read_array(&mut r)?);
            if version != BIN_VERSION {
                return Err(structural(format!("unsupported version {version}")));
            }
            let n_jets = u64::from_le_bytes(read_array(&mut r)?);
            for k in 0..n_jets {
                let record = read_bin_jet(&mut r).map_err(|e| structural(format!("record {}: {e}", k + 1)))?;
                ingest.accept(k as usize + 1, record.into_jet(), &mut jets);
            }
        }
    }
    ingest.finish(role, jets)
}

struct BinRecord {
    id: String,
    label: u8,
    n_nodes: usize,
    p4: Vec<f64>,
    n_features: usize,
    features: Vec<f64>,
}

impl BinRecord {
    fn into_jet(self) -> Result<Jet> {
        Jet::new(
            self.id,
            self.label,
            Tensor::from_matrix(self.n_nodes, 4, self.p4)?,
            Tensor::from_matrix(self.n_nodes, self.n_features, self.features)?,
        )
    }
}

fn read_array<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

fn read_f64s(r: &mut impl Read, n: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; n * 8];
    r.read_exact(&mut buf)?;
    Ok(buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect())
}

fn read_bin_jet(r: &mut impl Read) -> Result<BinRecord> {
    let id_len = u32::from_le_bytes(read_array(r)?) as usize;
    let mut id = vec![0u8; id_len];
    r.read_exact(&mut id)?;
    let id = String::from_utf8(id).map_err(|e| Error::Input(e.to_string()))?;
    let [label] = read_array::<1>(r)?;
    let n_nodes = u32::from_le_bytes(read_array(r)?) as usize;
    let n_features = u32::from_le_bytes(read_array(r)?) as usize;
    // bound allocations before trusting the header
    if n_nodes > 1 << 20 || n_features > 1 << 16 {
        return Err(Error::Input(format!("implausible jet header {n_nodes}x{n_features}")));
    }
    let p4 = read_f64s(r, n_nodes * 4)?;
    let features = read_f64s(r, n_nodes * n_features)?;
    Ok(BinRecord {
        id,
        label,
        n_nodes,
        p4,
        n_features,
        features,
    })
}
