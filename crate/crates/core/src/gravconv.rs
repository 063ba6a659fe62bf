//! GravNet-family message passing.
//!
//! Each layer learns two row-wise maps of its input: an embedding `s_i`
//! (where neighborhoods and distances live) and hidden features `h_i` (what
//! gets sent). Messages are `A_ij · ĥ_j` with `ĥ = h / |h|₁`:
//!
//! * [`Variant::Norm`]: `A_ij = exp(−G d_ij² / r²)` over the radius graph
//!   `d_ij ≤ r`. Attention depends on geometry alone.
//! * [`Variant::Original`]: `A_ij = |h_j|₁ exp(−G d_ij²)` over the KNN graph,
//!   so heavy neighbors weigh more regardless of distance.
//!
//! The layer output is `out_mlp(concat(x_i, Σ_j A_ij ĥ_j))`. Graph membership
//! is treated as a constant selection when differentiating; gradients flow
//! through `d_ij` of the selected edges.

use std::ops::Range;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mlp::{Activation, BoundMlp, Dropout, MlpParams};
use crate::spatial::{EdgeList, TopologyRule};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Added to the L1 norm before dividing, so all-zero rows stay zero.
pub const L1_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Distance-only attention over a radius graph.
    Norm,
    /// Size-weighted attention over a KNN graph.
    Original,
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Variant::Norm => "norm",
            Variant::Original => "original",
        })
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "norm" => Ok(Variant::Norm),
            "original" => Ok(Variant::Original),
            other => Err(Error::Parameter(format!("unknown variant {other:?}"))),
        }
    }
}

/// Weights and constants of one conv block.
#[derive(Clone, Debug, PartialEq)]
pub struct GravLayerParams {
    /// input → D_s embedding
    pub s_mlp: MlpParams,
    /// input → F_h hidden features
    pub h_mlp: MlpParams,
    /// (F_in + F_h) → F_out
    pub out_mlp: MlpParams,
    /// gravitational constant
    pub g: f64,
    /// neighborhood radius in embedding units
    pub r: f64,
}

impl GravLayerParams {
    #[allow(clippy::too_many_arguments)]
    pub fn init<R: Rng + ?Sized>(
        in_dim: usize,
        space_dim: usize,
        hidden_dim: usize,
        mlp_width: usize,
        out_dim: usize,
        g: f64,
        r: f64,
        rng: &mut R,
    ) -> Result<Self> {
        // only embedding differences matter, so a bias would be a dead parameter
        let s_mlp = MlpParams::init(&[in_dim, space_dim], Activation::Linear, Activation::Linear, rng).without_bias();
        let h_mlp = MlpParams::init(&[in_dim, hidden_dim], Activation::Linear, Activation::Linear, rng);
        let out_mlp = MlpParams::init(
            &[in_dim + hidden_dim, mlp_width, out_dim],
            Activation::Relu,
            Activation::Relu,
            rng,
        );
        let p = Self {
            s_mlp,
            h_mlp,
            out_mlp,
            g,
            r,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.g > 0.0) || !self.g.is_finite() {
            return Err(Error::Parameter(format!("G must be > 0, got {}", self.g)));
        }
        if !(self.r > 0.0) || !self.r.is_finite() {
            return Err(Error::Parameter(format!("r must be > 0, got {}", self.r)));
        }
        let in_dim = self.s_mlp.input_dim();
        if in_dim != self.h_mlp.input_dim() {
            return Err(Error::Contract("s-MLP and h-MLP read different input widths".into()));
        }
        let (Some(in_dim), Some(hidden)) = (in_dim, self.h_mlp.output_dim()) else {
            return Err(Error::Contract("s-MLP and h-MLP must have at least one layer".into()));
        };
        if self.s_mlp.output_dim().is_none() {
            return Err(Error::Contract("s-MLP has no layers".into()));
        }
        if self.out_mlp.input_dim() != Some(in_dim + hidden) {
            return Err(Error::Contract(format!(
                "out-MLP expects {:?} inputs, layer provides {}",
                self.out_mlp.input_dim(),
                in_dim + hidden
            )));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.s_mlp.input_dim().unwrap_or(0)
    }

    pub fn space_dim(&self) -> usize {
        self.s_mlp.output_dim().unwrap_or(0)
    }

    pub fn hidden_dim(&self) -> usize {
        self.h_mlp.output_dim().unwrap_or(0)
    }

    pub fn output_dim(&self) -> usize {
        self.out_mlp.output_dim().unwrap_or(0)
    }

    pub fn param_count(&self) -> usize {
        self.s_mlp.param_count() + self.h_mlp.param_count() + self.out_mlp.param_count()
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.s_mlp
            .tensors()
            .chain(self.h_mlp.tensors())
            .chain(self.out_mlp.tensors())
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.s_mlp
            .tensors_mut()
            .chain(self.h_mlp.tensors_mut())
            .chain(self.out_mlp.tensors_mut())
    }
}

/// Per-node hidden state entering or leaving a conv block.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeBlock {
    pub features: Tensor,
}

/// `ĥ_i = h_i / (|h_i|₁ + ε)`, row-wise.
pub fn l1_normalize(h: &Tensor) -> Tensor {
    let mut out = h.clone();
    let c = out.cols();
    if c > 0 {
        for row in out.data_mut().chunks_mut(c) {
            let denom = row.iter().map(|x| x.abs()).sum::<f64>() + L1_EPS;
            row.iter_mut().for_each(|x| *x /= denom);
        }
    }
    out
}

/// Geometry-only attention `exp(−G d² / r²)`.
pub fn attention_norm(d: f64, g: f64, r: f64) -> f64 {
    (-g * d * d / (r * r)).exp()
}

/// Size-weighted attention `|h_j|₁ · exp(−G d²)`.
pub fn attention_orig(d: f64, g: f64, h_neighbor: &[f64]) -> f64 {
    let mass: f64 = h_neighbor.iter().map(|x| x.abs()).sum();
    mass * (-g * d * d).exp()
}

/// A conv block whose parameters are registered on a tape.
#[derive(Clone, Debug)]
pub struct BoundGravLayer {
    pub s_mlp: BoundMlp,
    pub h_mlp: BoundMlp,
    pub out_mlp: BoundMlp,
    pub g: f64,
    pub r: f64,
}

impl BoundGravLayer {
    pub fn from_vars(params: &GravLayerParams, vars: &mut impl Iterator<Item = Var>) -> Result<Self> {
        Ok(Self {
            s_mlp: BoundMlp::from_vars(&params.s_mlp, vars)?,
            h_mlp: BoundMlp::from_vars(&params.h_mlp, vars)?,
            out_mlp: BoundMlp::from_vars(&params.out_mlp, vars)?,
            g: params.g,
            r: params.r,
        })
    }

    pub fn bind(params: &GravLayerParams, tape: &mut Tape) -> Self {
        let vars: Vec<Var> = params.tensors().map(|t| tape.param(t.clone())).collect();
        Self::from_vars(params, &mut vars.into_iter()).expect("one var per tensor")
    }
}

/// Everything a conv block produced on the tape.
#[derive(Clone, Debug)]
pub struct ConvStep {
    pub features: Var,
    pub embedding: Var,
    pub aggregate: Var,
    pub edges: EdgeList,
    /// Wall time spent building the topology.
    pub construction: Duration,
}

/// `[E, F]` messages `A_e · ĥ[dst_e]` on the tape, with `d_e²` recomputed
/// from the embedding so the distances are differentiable.
pub fn edge_messages_on_tape(
    tape: &mut Tape,
    variant: Variant,
    s: Var,
    h: Var,
    edges: &EdgeList,
    g: f64,
    r: f64,
) -> Result<Var> {
    let src: Arc<[usize]> = Arc::from(edges.src.as_slice());
    let dst: Arc<[usize]> = Arc::from(edges.dst.as_slice());
    let h_hat = tape.l1_normalize(h, L1_EPS)?;
    let s_src = tape.gather(s, src)?;
    let s_dst = tape.gather(s, dst.clone())?;
    let diff = tape.sub(s_src, s_dst)?;
    let sq = tape.mul(diff, diff)?;
    let d2 = tape.sum_rows(sq)?;
    let weight = match variant {
        Variant::Norm => {
            let z = tape.scale(d2, -g / (r * r));
            tape.exp(z)
        }
        Variant::Original => {
            let z = tape.scale(d2, -g);
            let falloff = tape.exp(z);
            let mass = tape.l1_norm_rows(h)?;
            let mass_dst = tape.gather(mass, dst.clone())?;
            tape.mul(mass_dst, falloff)?
        }
    };
    let h_dst = tape.gather(h_hat, dst)?;
    tape.mul_col(h_dst, weight)
}

/// Op-level message computation for fixed `s`, `h` and topology.
pub fn edge_messages(variant: Variant, s: &Tensor, h: &Tensor, edges: &EdgeList, g: f64, r: f64) -> Result<Tensor> {
    if s.rows() != h.rows() {
        return Err(Error::dim("edge_messages", s.shape(), h.shape()));
    }
    let mut tape = Tape::new();
    let sv = tape.constant(s.clone());
    let hv = tape.constant(h.clone());
    let m = edge_messages_on_tape(&mut tape, variant, sv, hv, edges, g, r)?;
    Ok(tape.value(m).clone())
}

/// Runs one conv block over a (possibly batched) node matrix. `segments`
/// delimits the graphs so topology never crosses between them; `fixed`
/// replaces topology construction with a given edge list.
#[allow(clippy::too_many_arguments)]
pub fn conv_forward(
    tape: &mut Tape,
    layer: &BoundGravLayer,
    x: Var,
    variant: Variant,
    rule: TopologyRule,
    segments: &[Range<usize>],
    fixed: Option<&EdgeList>,
    mut dropout: Option<&mut Dropout<'_>>,
) -> Result<ConvStep> {
    let n = tape.shape(x).first().copied().unwrap_or(0);
    let s = layer.s_mlp.forward(tape, x, None)?;
    let h = layer.h_mlp.forward(tape, x, None)?;

    let started = Instant::now();
    let edges = match fixed {
        Some(e) => e.clone(),
        None => rule.build_segmented(tape.value(s), segments)?,
    };
    let construction = started.elapsed();

    let messages = edge_messages_on_tape(tape, variant, s, h, &edges, layer.g, layer.r)?;
    let aggregate = tape.segment_sum(messages, Arc::from(edges.src.as_slice()), n)?;
    let joined = tape.concat(x, aggregate)?;
    let features = layer.out_mlp.forward(tape, joined, dropout.as_deref_mut())?;
    Ok(ConvStep {
        features,
        embedding: s,
        aggregate,
        edges,
        construction,
    })
}

/// Result of running a single block on one graph outside of training.
#[derive(Clone, Debug)]
pub struct ConvResult {
    pub block: NodeBlock,
    pub embedding: Tensor,
    pub aggregate: Tensor,
    pub edges: EdgeList,
}

fn single_graph_conv(
    block: &NodeBlock,
    params: &GravLayerParams,
    variant: Variant,
    rule: TopologyRule,
    tape: Option<&mut Tape>,
) -> Result<ConvResult> {
    params.validate()?;
    let (n, f) = block.features.require_matrix("conv input")?;
    if n == 0 {
        return Err(Error::Input("conv block needs at least one node".into()));
    }
    if f != params.input_dim() {
        return Err(Error::dim(
            "conv input",
            block.features.shape(),
            params.s_mlp.layers[0].weight.shape(),
        ));
    }
    let mut scratch = Tape::new();
    let tape = tape.unwrap_or(&mut scratch);
    let layer = BoundGravLayer::bind(params, tape);
    let x = tape.constant(block.features.clone());
    let step = conv_forward(tape, &layer, x, variant, rule, &[0..n], None, None)?;
    Ok(ConvResult {
        block: NodeBlock {
            features: tape.value(step.features).clone(),
        },
        embedding: tape.value(step.embedding).clone(),
        aggregate: tape.value(step.aggregate).clone(),
        edges: step.edges,
    })
}

/// GravNetNorm block: radius graph of radius `params.r`, distance-only attention.
pub fn gravnetnorm_conv(block: &NodeBlock, params: &GravLayerParams, tape: Option<&mut Tape>) -> Result<ConvResult> {
    let rule = TopologyRule::Radius {
        r: params.r,
        max_degree: None,
    };
    single_graph_conv(block, params, Variant::Norm, rule, tape)
}

/// Original GravNet block: `k`-nearest-neighbor graph, size-weighted attention.
pub fn gravnet_conv(block: &NodeBlock, params: &GravLayerParams, k: usize, tape: Option<&mut Tape>) -> Result<ConvResult> {
    if k < 1 {
        return Err(Error::Parameter("k must be at least 1".into()));
    }
    single_graph_conv(block, params, Variant::Original, TopologyRule::Knn { k }, tape)
}
