//! The jet tagger: encoder MLP, a stack of conv blocks, mean pooling over
//! nodes and a classification head ending in a sigmoid.

use std::fs;
use std::ops::Range;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Jet;
use crate::error::{Error, Result};
use crate::gravconv::{conv_forward, BoundGravLayer, GravLayerParams, Variant};
use crate::mlp::{Activation, BoundMlp, Dropout, MlpParams};
use crate::spatial::{EdgeList, TopologyRule};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub const CHECKPOINT_FORMAT: &str = "gravnorm-ckpt-v1";

/// Shape and constants of one conv block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockConfig {
    /// embedding dimension D_s
    pub space_dim: usize,
    /// hidden feature width F_h
    pub hidden_dim: usize,
    pub out_dim: usize,
    pub mlp_width: usize,
    pub g: f64,
    /// radius for the norm variant
    pub r: f64,
    /// neighbor count for the original variant
    pub k: usize,
    #[serde(default)]
    pub max_degree: Option<usize>,
    /// Multiplier on the initial embedding weights. Larger values spread
    /// nodes further apart in embedding space and start from sparser graphs.
    #[serde(default = "default_embed_gain")]
    pub embed_gain: f64,
}

fn default_embed_gain() -> f64 {
    4.0
}

impl Default for BlockConfig {
    fn default() -> Self {
        Self {
            space_dim: 4,
            hidden_dim: 22,
            out_dim: 48,
            mlp_width: 64,
            g: 3.0,
            r: 1.0,
            k: 16,
            max_degree: None,
            embed_gain: default_embed_gain(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaggerConfig {
    pub variant: Variant,
    pub input_dim: usize,
    /// Hidden widths of the encoder; empty means features feed the first block directly.
    pub encoder_widths: Vec<usize>,
    pub blocks: Vec<BlockConfig>,
    /// Hidden widths of the head; a final linear layer to one logit is implied.
    pub head_widths: Vec<usize>,
    pub dropout: f64,
}

impl TaggerConfig {
    /// Encoder `input_dim → 64`, three blocks of `(D_s 4, F_h 22, F_out 48)`,
    /// head `48 → 64 → 1`, dropout 0.2.
    pub fn desk(variant: Variant, input_dim: usize) -> Self {
        Self {
            variant,
            input_dim,
            encoder_widths: vec![64],
            blocks: vec![BlockConfig::default(); 3],
            head_widths: vec![64],
            dropout: 0.2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.blocks.is_empty() {
            return Err(Error::Parameter("a tagger needs at least one conv block".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Parameter(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.input_dim == 0 {
            return Err(Error::Parameter("input_dim must be positive".into()));
        }
        for (i, b) in self.blocks.iter().enumerate() {
            if b.space_dim == 0 || b.hidden_dim == 0 || b.out_dim == 0 || b.mlp_width == 0 {
                return Err(Error::Parameter(format!("block {i} has a zero width")));
            }
            if !(b.embed_gain > 0.0) || !b.embed_gain.is_finite() {
                return Err(Error::Parameter(format!("block {i} needs a positive embed_gain")));
            }
            if !(b.g > 0.0) || !(b.r > 0.0) {
                return Err(Error::Parameter(format!("block {i} needs G > 0 and r > 0")));
            }
            if self.variant == Variant::Original && b.k < 1 {
                return Err(Error::Parameter(format!("block {i} needs k ≥ 1")));
            }
        }
        Ok(())
    }

    pub fn rule(&self, block: &BlockConfig) -> TopologyRule {
        match self.variant {
            Variant::Norm => TopologyRule::Radius {
                r: block.r,
                max_degree: block.max_degree,
            },
            Variant::Original => TopologyRule::Knn { k: block.k },
        }
    }

    fn encoder_out(&self) -> usize {
        self.encoder_widths.last().copied().unwrap_or(self.input_dim)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaggerParams {
    pub encoder: MlpParams,
    pub blocks: Vec<GravLayerParams>,
    /// pooled features → 1 logit
    pub head: MlpParams,
}

impl TaggerParams {
    pub fn init(cfg: &TaggerConfig, rng: &mut impl RngCore) -> Result<Self> {
        cfg.validate()?;
        let mut enc_dims = vec![cfg.input_dim];
        enc_dims.extend(&cfg.encoder_widths);
        let encoder = MlpParams::init(&enc_dims, Activation::Relu, Activation::Relu, rng);
        let mut width = cfg.encoder_out();
        let mut blocks = Vec::with_capacity(cfg.blocks.len());
        for b in &cfg.blocks {
            let mut layer = GravLayerParams::init(
                width,
                b.space_dim,
                b.hidden_dim,
                b.mlp_width,
                b.out_dim,
                b.g,
                b.r,
                rng,
            )?;
            for l in &mut layer.s_mlp.layers {
                l.weight.data_mut().iter_mut().for_each(|w| *w *= b.embed_gain);
            }
            blocks.push(layer);
            width = b.out_dim;
        }
        let mut head_dims = vec![width];
        head_dims.extend(&cfg.head_widths);
        head_dims.push(1);
        let head = MlpParams::init(&head_dims, Activation::Relu, Activation::Linear, rng);
        Ok(Self { encoder, blocks, head })
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.encoder
            .tensors()
            .chain(self.blocks.iter().flat_map(|b| b.tensors()))
            .chain(self.head.tensors())
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.encoder
            .tensors_mut()
            .chain(self.blocks.iter_mut().flat_map(|b| b.tensors_mut()))
            .chain(self.head.tensors_mut())
    }

    /// Stable names in [`Self::tensors`] order, e.g. `block1.h_mlp.0.weight`.
    pub fn tensor_names(&self) -> Vec<String> {
        fn mlp(prefix: &str, m: &MlpParams, out: &mut Vec<String>) {
            for (i, l) in m.layers.iter().enumerate() {
                out.push(format!("{prefix}.{i}.weight"));
                if l.bias.is_some() {
                    out.push(format!("{prefix}.{i}.bias"));
                }
            }
        }
        let mut names = Vec::new();
        mlp("encoder", &self.encoder, &mut names);
        for (i, b) in self.blocks.iter().enumerate() {
            mlp(&format!("block{i}.s_mlp"), &b.s_mlp, &mut names);
            mlp(&format!("block{i}.h_mlp"), &b.h_mlp, &mut names);
            mlp(&format!("block{i}.out_mlp"), &b.out_mlp, &mut names);
        }
        mlp("head", &self.head, &mut names);
        names
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundTagger {
        let vars: Vec<Var> = self.tensors().map(|t| tape.param(t.clone())).collect();
        BoundTagger::from_vars(self, &vars).expect("one var per tensor")
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().all(Tensor::is_finite)
    }
}

/// Exact number of scalar weights and biases.
pub fn param_count(params: &TaggerParams) -> usize {
    params.tensors().map(Tensor::len).sum()
}

/// Tagger parameters registered on a tape.
#[derive(Clone, Debug)]
pub struct BoundTagger {
    pub encoder: BoundMlp,
    pub blocks: Vec<BoundGravLayer>,
    pub head: BoundMlp,
}

impl BoundTagger {
    /// Pairs `params` with vars given in [`TaggerParams::tensors`] order.
    pub fn from_vars(params: &TaggerParams, vars: &[Var]) -> Result<Self> {
        let expected = params.tensors().count();
        if vars.len() != expected {
            return Err(Error::Contract(format!("expected {expected} parameter vars, got {}", vars.len())));
        }
        let mut it = vars.iter().copied();
        let encoder = BoundMlp::from_vars(&params.encoder, &mut it)?;
        let blocks = params
            .blocks
            .iter()
            .map(|b| BoundGravLayer::from_vars(b, &mut it))
            .collect::<Result<_>>()?;
        let head = BoundMlp::from_vars(&params.head, &mut it)?;
        Ok(Self { encoder, blocks, head })
    }
}

/// Several jets concatenated into one disjoint graph.
#[derive(Clone, Debug)]
pub struct GraphBatch {
    pub features: Tensor,
    pub segments: Vec<Range<usize>>,
    /// graph index of every node
    pub node_graph: Arc<[usize]>,
    pub labels: Vec<f64>,
}

impl GraphBatch {
    pub fn from_jets(jets: &[&Jet]) -> Result<Self> {
        let Some(first) = jets.first() else {
            return Err(Error::Input("cannot batch zero jets".into()));
        };
        let width = first.features.cols();
        let total: usize = jets.iter().map(|j| j.n_nodes()).sum();
        let mut data = Vec::with_capacity(total * width);
        let mut segments = Vec::with_capacity(jets.len());
        let mut node_graph = Vec::with_capacity(total);
        for (g, jet) in jets.iter().enumerate() {
            if jet.n_nodes() == 0 {
                return Err(Error::Input(format!("jet {} has no constituents", jet.id)));
            }
            if jet.features.cols() != width {
                return Err(Error::dim("batch features", first.features.shape(), jet.features.shape()));
            }
            let start = node_graph.len();
            data.extend_from_slice(jet.features.data());
            node_graph.extend(std::iter::repeat_n(g, jet.n_nodes()));
            segments.push(start..node_graph.len());
        }
        Ok(Self {
            features: Tensor::from_matrix(total, width, data)?,
            segments,
            node_graph: node_graph.into(),
            labels: jets.iter().map(|j| f64::from(j.label)).collect(),
        })
    }

    pub fn n_graphs(&self) -> usize {
        self.segments.len()
    }

    pub fn n_nodes(&self) -> usize {
        self.node_graph.len()
    }
}

/// What a batched forward pass left on the tape.
#[derive(Clone, Debug)]
pub struct BatchForward {
    /// `[B, 1]` sigmoid scores
    pub scores: Var,
    /// one edge list per conv block, indexed over batch nodes
    pub edges: Vec<EdgeList>,
    pub construction: Duration,
}

/// Batched forward pass. With `dropout` the pass is in training mode.
/// `fixed` supplies one edge list per block in place of topology construction.
pub fn forward_batch(
    tape: &mut Tape,
    model: &BoundTagger,
    cfg: &TaggerConfig,
    batch: &GraphBatch,
    mut dropout: Option<&mut Dropout<'_>>,
    fixed: Option<&[EdgeList]>,
) -> Result<BatchForward> {
    if cfg.blocks.len() != model.blocks.len() {
        return Err(Error::Contract("config and parameters disagree on block count".into()));
    }
    if let Some(f) = fixed {
        if f.len() != cfg.blocks.len() {
            return Err(Error::Contract(format!("{} fixed edge lists for {} blocks", f.len(), cfg.blocks.len())));
        }
    }
    let x = tape.constant(batch.features.clone());
    let mut h = model.encoder.forward(tape, x, dropout.as_deref_mut())?;
    let mut edges = Vec::with_capacity(cfg.blocks.len());
    let mut construction = Duration::ZERO;
    for (i, (layer, bcfg)) in model.blocks.iter().zip(&cfg.blocks).enumerate() {
        let step = conv_forward(
            tape,
            layer,
            h,
            cfg.variant,
            cfg.rule(bcfg),
            &batch.segments,
            fixed.map(|f| &f[i]),
            dropout.as_deref_mut(),
        )?;
        h = step.features;
        construction += step.construction;
        edges.push(step.edges);
    }
    let summed = tape.segment_sum(h, batch.node_graph.clone(), batch.n_graphs())?;
    let inv: Vec<f64> = batch.segments.iter().map(|s| 1.0 / s.len() as f64).collect();
    let inv = tape.constant(Tensor::from_matrix(batch.n_graphs(), 1, inv)?);
    let pooled = tape.mul_col(summed, inv)?;
    let logits = model.head.forward(tape, pooled, dropout.as_deref_mut())?;
    let scores = tape.sigmoid(logits);
    Ok(BatchForward {
        scores,
        edges,
        construction,
    })
}

/// Whether a forward pass applies dropout.
pub enum ForwardMode<'a> {
    Inference,
    Training(&'a mut dyn RngCore),
}

/// Configuration plus weights.
#[derive(Clone, Debug, PartialEq)]
pub struct Tagger {
    pub config: TaggerConfig,
    pub params: TaggerParams,
    pub seed: u64,
}

/// Scores and topology from an inference pass over a batch.
#[derive(Clone, Debug)]
pub struct BatchInference {
    pub scores: Vec<f64>,
    pub edges: Vec<EdgeList>,
    pub construction: Duration,
}

impl Tagger {
    pub fn new(config: TaggerConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = TaggerParams::init(&config, &mut rng)?;
        Ok(Self { config, params, seed })
    }

    pub fn param_count(&self) -> usize {
        param_count(&self.params)
    }

    /// Score one jet; also returns the edge list built by each block.
    pub fn forward(&self, jet: &Jet, mode: ForwardMode<'_>) -> Result<(f64, Vec<EdgeList>)> {
        if jet.n_nodes() == 0 {
            return Err(Error::Input("empty jet".into()));
        }
        let batch = GraphBatch::from_jets(&[jet])?;
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape);
        let out = match mode {
            ForwardMode::Inference => forward_batch(&mut tape, &bound, &self.config, &batch, None, None)?,
            ForwardMode::Training(rng) => {
                let mut d = Dropout::new(self.config.dropout, rng)?;
                forward_batch(&mut tape, &bound, &self.config, &batch, Some(&mut d), None)?
            }
        };
        Ok((tape.value(out.scores).data()[0], out.edges))
    }

    /// Inference over a prepared batch on a single tape.
    pub fn infer_batch(&self, batch: &GraphBatch) -> Result<BatchInference> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape);
        let out = forward_batch(&mut tape, &bound, &self.config, batch, None, None)?;
        Ok(BatchInference {
            scores: tape.value(out.scores).data().to_vec(),
            edges: out.edges,
            construction: out.construction,
        })
    }

    /// Inference over many jets in chunks, optionally on the rayon pool.
    pub fn predict(&self, jets: &[Jet], chunk: usize, parallel: bool) -> Result<Vec<f64>> {
        let chunk = chunk.max(1);
        let run = |c: &[Jet]| -> Result<Vec<f64>> {
            let refs: Vec<&Jet> = c.iter().collect();
            Ok(self.infer_batch(&GraphBatch::from_jets(&refs)?)?.scores)
        };
        let parts: Vec<Vec<f64>> = if parallel {
            jets.par_chunks(chunk).map(run).collect::<Result<_>>()?
        } else {
            jets.chunks(chunk).map(run).collect::<Result<_>>()?
        };
        Ok(parts.into_iter().flatten().collect())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let names = self.params.tensor_names();
        let tensors = names
            .into_iter()
            .zip(self.params.tensors())
            .map(|(name, t)| StoredTensor {
                name,
                shape: t.shape().to_vec(),
                data: t.data().to_vec(),
            })
            .collect();
        let file = CheckpointFile {
            format: CHECKPOINT_FORMAT.to_string(),
            config: self.config.clone(),
            seed: self.seed,
            tensors,
        };
        fs::write(path, serde_json::to_vec(&file)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file: CheckpointFile = serde_json::from_slice(&fs::read(path)?)?;
        if file.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!(
                "format tag {:?}, expected {CHECKPOINT_FORMAT:?}",
                file.format
            )));
        }
        let mut tagger = Tagger::new(file.config, file.seed)?;
        let names = tagger.params.tensor_names();
        if names.len() != file.tensors.len() {
            return Err(Error::Checkpoint(format!(
                "{} tensors stored, architecture needs {}",
                file.tensors.len(),
                names.len()
            )));
        }
        for ((name, slot), stored) in names.iter().zip(tagger.params.tensors_mut()).zip(file.tensors) {
            if *name != stored.name || slot.shape() != stored.shape.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "tensor {} {:?} does not match expected {name} {:?}",
                    stored.name,
                    stored.shape,
                    slot.shape()
                )));
            }
            *slot = Tensor::new(stored.shape, stored.data)?;
        }
        Ok(tagger)
    }
}

#[derive(Serialize, Deserialize)]
struct StoredTensor {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    config: TaggerConfig,
    seed: u64,
    tensors: Vec<StoredTensor>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_generate;

    #[test]
    fn single_linear_layer_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let params = TaggerParams {
            encoder: MlpParams::init(&[3, 2], Activation::Linear, Activation::Linear, &mut rng),
            blocks: vec![],
            head: MlpParams::identity(),
        };
        assert_eq!(param_count(&params), 8);
    }

    #[test]
    fn encoder_only_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let params = TaggerParams {
            encoder: MlpParams::init(&[17, 64], Activation::Relu, Activation::Relu, &mut rng),
            blocks: vec![],
            head: MlpParams::identity(),
        };
        assert_eq!(param_count(&params), 17 * 64 + 64);
    }

    #[test]
    fn desk_count_matches_layer_shapes() {
        let t = Tagger::new(TaggerConfig::desk(Variant::Norm, 7), 1).unwrap();
        // encoder 7→64; per block s: in→4 without bias, h: in→22, out: (in+22)→64→48; head 48→64→1
        let dense = |i: usize, o: usize| i * o + o;
        let block = |i: usize| i * 4 + dense(i, 22) + dense(i + 22, 64) + dense(64, 48);
        let expect = dense(7, 64) + block(64) + block(48) + block(48) + dense(48, 64) + dense(64, 1);
        assert_eq!(t.param_count(), expect);
        assert_eq!(t.params.tensor_names().len(), t.params.tensors().count());
    }

    #[test]
    fn zero_head_gives_even_odds() {
        let mut t = Tagger::new(TaggerConfig::desk(Variant::Norm, 7), 2).unwrap();
        for layer in &mut t.params.head.layers {
            layer.weight = layer.weight.zeros_like();
            if let Some(b) = &mut layer.bias {
                *b = b.zeros_like();
            }
        }
        let jets = synth_generate(5, 2, 3, 9).unwrap();
        for jet in &jets.jets {
            let (score, edges) = t.forward(jet, ForwardMode::Inference).unwrap();
            assert_eq!(score, 0.5);
            assert_eq!(edges.len(), 3);
        }
    }

    #[test]
    fn single_node_jet_runs() {
        let jets = synth_generate(6, 1, 1, 1).unwrap();
        for variant in [Variant::Norm, Variant::Original] {
            let t = Tagger::new(TaggerConfig::desk(variant, 7), 3).unwrap();
            let (score, edges) = t.forward(&jets.jets[0], ForwardMode::Inference).unwrap();
            assert!(score > 0.0 && score < 1.0);
            assert!(edges.iter().all(EdgeList::is_empty));
        }
    }

    #[test]
    fn inference_is_bit_stable() {
        let t = Tagger::new(TaggerConfig::desk(Variant::Norm, 7), 4).unwrap();
        let jets = synth_generate(8, 6, 5, 30).unwrap();
        let a = t.predict(&jets.jets, 4, false).unwrap();
        let b = t.predict(&jets.jets, 4, true).unwrap();
        let c: Vec<f64> = jets
            .jets
            .iter()
            .map(|j| t.forward(j, ForwardMode::Inference).unwrap().0)
            .collect();
        assert_eq!(a, b);
        for (x, y) in a.iter().zip(&c) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_batch_and_bad_config_are_rejected() {
        assert!(GraphBatch::from_jets(&[]).is_err());
        let mut cfg = TaggerConfig::desk(Variant::Norm, 7);
        cfg.blocks.clear();
        assert!(Tagger::new(cfg, 0).is_err());
        let mut cfg = TaggerConfig::desk(Variant::Norm, 7);
        cfg.dropout = 1.0;
        assert!(Tagger::new(cfg, 0).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt");
        let t = Tagger::new(TaggerConfig::desk(Variant::Original, 7), 9).unwrap();
        t.save(&path).unwrap();
        let back = Tagger::load(&path).unwrap();
        assert_eq!(back, t);

        let mut raw: serde_json::Value = serde_json::from_slice(&fs::read(&path).unwrap()).unwrap();
        raw["format"] = "something-else".into();
        fs::write(&path, serde_json::to_vec(&raw).unwrap()).unwrap();
        assert!(matches!(Tagger::load(&path), Err(Error::Checkpoint(_))));
    }
}
