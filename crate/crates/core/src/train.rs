//! Mini-batch training with Adam, binary cross-entropy and early stopping on
//! validation AUC.

use std::io::Write;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{DatasetSplit, Jet};
use crate::error::{Error, Result};
use crate::metrics::{accuracy, roc_auc, ScoredSet};
use crate::mlp::Dropout;
use crate::model::{forward_batch, BoundTagger, GraphBatch, Tagger, TaggerConfig, TaggerParams};
use crate::tape::{Tape, Var, BCE_CLAMP};
use crate::tensor::Tensor;

/// Binary cross-entropy of one score, clamped away from 0 and 1.
pub fn bce_loss(score: f64, label: f64) -> f64 {
    let p = score.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
    -(label * p.ln() + (1.0 - label) * (1.0 - p).ln())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam moment estimates, one pair per parameter tensor.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step: u64,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &TaggerParams) -> Self {
        let m: Vec<Tensor> = params.tensors().map(Tensor::zeros_like).collect();
        Self {
            config,
            v: m.clone(),
            m,
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update. Every gradient is checked before any weight changes.
    pub fn step(&mut self, params: &mut TaggerParams, grads: &[Tensor]) -> Result<()> {
        if grads.len() != self.m.len() {
            return Err(Error::Contract(format!("{} gradients for {} tensors", grads.len(), self.m.len())));
        }
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient {
                param: params.tensor_names()[i].clone(),
            });
        }
        self.step += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (((p, g), m), v) in params.tensors_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            if p.shape() != g.shape() {
                return Err(Error::dim("adam", p.shape(), g.shape()));
            }
            let p = p.data_mut();
            let m = m.data_mut();
            let v = v.data_mut();
            for k in 0..p.len() {
                let gk = g.data()[k];
                m[k] = beta1 * m[k] + (1.0 - beta1) * gk;
                v[k] = beta2 * v[k] + (1.0 - beta2) * gk * gk;
                p[k] -= learning_rate * (m[k] / bc1) / ((v[k] / bc2).sqrt() + epsilon);
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    #[serde(flatten)]
    pub adam: AdamConfig,
    pub seed: u64,
    /// epochs without validation improvement before stopping
    pub patience: usize,
    /// jets per tape; fixed so results do not depend on the thread count
    pub chunk_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 64,
            adam: AdamConfig::default(),
            seed: 0,
            patience: 10,
            chunk_size: 8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.chunk_size == 0 {
            return Err(Error::Parameter("batch and chunk sizes must be positive".into()));
        }
        if !(self.adam.learning_rate > 0.0) {
            return Err(Error::Parameter(format!("learning rate {} must be > 0", self.adam.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.adam.beta1) || !(0.0..1.0).contains(&self.adam.beta2) {
            return Err(Error::Parameter("Adam betas must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Independent stream seed for one (seed, epoch, batch, chunk) tuple.
pub fn derive_seed(seed: u64, parts: &[u64]) -> u64 {
    // splitmix64 folding
    let mut z = seed;
    for &p in parts {
        z = z.wrapping_add(p).wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^= z >> 31;
    }
    z
}

/// Summed loss and gradients over one chunk of jets.
fn chunk_gradients(
    params: &TaggerParams,
    cfg: &TaggerConfig,
    jets: &[&Jet],
    dropout_seed: Option<u64>,
) -> Result<(f64, Vec<Tensor>)> {
    let batch = GraphBatch::from_jets(jets)?;
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.tensors().map(|t| tape.param(t.clone())).collect();
    let bound = BoundTagger::from_vars(params, &vars)?;
    let out = match dropout_seed {
        Some(s) if cfg.dropout > 0.0 => {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            let mut d = Dropout::new(cfg.dropout, &mut rng)?;
            forward_batch(&mut tape, &bound, cfg, &batch, Some(&mut d), None)?
        }
        _ => forward_batch(&mut tape, &bound, cfg, &batch, None, None)?,
    };
    let loss = tape.bce(out.scores, Arc::from(batch.labels.as_slice()))?;
    let value = tape.value(loss).item()?;
    let grads = tape.backward(loss)?;
    let grads = vars.iter().map(|&v| grads.wrt(v).cloned()).collect::<Result<_>>()?;
    Ok((value, grads))
}

/// Mean loss and mean gradients over a mini-batch, split into fixed chunks.
/// `dropout_seed` enables training mode.
pub fn batch_gradients(
    params: &TaggerParams,
    cfg: &TaggerConfig,
    jets: &[&Jet],
    chunk_size: usize,
    dropout_seed: Option<u64>,
) -> Result<(f64, Vec<Tensor>)> {
    if jets.is_empty() {
        return Err(Error::Input("empty mini-batch".into()));
    }
    let parts: Vec<(f64, Vec<Tensor>)> = jets
        .par_chunks(chunk_size.max(1))
        .enumerate()
        .map(|(c, chunk)| chunk_gradients(params, cfg, chunk, dropout_seed.map(|s| derive_seed(s, &[c as u64]))))
        .collect::<Result<_>>()?;
    let scale = 1.0 / jets.len() as f64;
    let mut parts = parts.into_iter();
    let (mut loss, mut grads) = parts.next().expect("at least one chunk");
    for (l, g) in parts {
        loss += l;
        for (acc, gk) in grads.iter_mut().zip(g) {
            for (a, b) in acc.data_mut().iter_mut().zip(gk.data()) {
                *a += b;
            }
        }
    }
    for g in &mut grads {
        g.data_mut().iter_mut().for_each(|x| *x *= scale);
    }
    Ok((loss * scale, grads))
}

/// One row of the training history.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// NaN when the validation split lacks a class
    pub val_auc: f64,
    pub val_acc: f64,
    pub wall_seconds: f64,
}

pub fn write_history(path: &Path, history: &[EpochRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for rec in history {
        w.serialize(rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_history_to<W: Write>(out: W, history: &[EpochRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for rec in history {
        w.serialize(rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Validation loss, AUC and accuracy of `tagger` on `split`.
pub fn evaluate(tagger: &Tagger, split: &DatasetSplit, chunk: usize) -> Result<(f64, f64, f64)> {
    let scores = tagger.predict(&split.jets, chunk, true)?;
    let labels: Vec<u8> = split.jets.iter().map(|j| j.label).collect();
    let loss = scores
        .iter()
        .zip(&labels)
        .map(|(&s, &l)| bce_loss(s, f64::from(l)))
        .sum::<f64>()
        / scores.len().max(1) as f64;
    let set = ScoredSet::new(scores, labels)?;
    let auc = roc_auc(&set).unwrap_or(f64::NAN);
    Ok((loss, auc, accuracy(&set, 0.5)?))
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// weights from the best validation epoch
    pub best: Tagger,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
}

/// Trains a fresh tagger. See [`train_with`].
pub fn train(
    train_split: &DatasetSplit,
    val_split: &DatasetSplit,
    model_cfg: &TaggerConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    train_with(train_split, val_split, model_cfg, cfg, |_| false)
}

/// Trains a fresh tagger, calling `stop` after every epoch; returning true
/// ends training early.
pub fn train_with(
    train_split: &DatasetSplit,
    val_split: &DatasetSplit,
    model_cfg: &TaggerConfig,
    cfg: &TrainConfig,
    mut stop: impl FnMut(&EpochRecord) -> bool,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_split.is_empty() {
        return Err(Error::Input("training split is empty".into()));
    }
    if val_split.is_empty() {
        return Err(Error::Input("validation split is empty".into()));
    }
    let mut tagger = Tagger::new(model_cfg.clone(), cfg.seed)?;
    let mut adam = Adam::new(cfg.adam, &tagger.params);
    let mut order: Vec<usize> = (0..train_split.len()).collect();
    let mut best: Option<(f64, usize, Tagger)> = None;
    let mut history = Vec::new();

    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        let mut shuffle = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[1, epoch as u64]));
        order.shuffle(&mut shuffle);
        let mut loss_sum = 0.0;
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let jets: Vec<&Jet> = idx.iter().map(|&i| &train_split.jets[i]).collect();
            let seed = derive_seed(cfg.seed, &[2, epoch as u64, b as u64]);
            let (loss, grads) = batch_gradients(&tagger.params, model_cfg, &jets, cfg.chunk_size, Some(seed))?;
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch, batch: b, loss });
            }
            adam.step(&mut tagger.params, &grads)?;
            loss_sum += loss * jets.len() as f64;
        }
        let (val_loss, val_auc, val_acc) = evaluate(&tagger, val_split, cfg.chunk_size)?;
        let rec = EpochRecord {
            epoch,
            train_loss: loss_sum / train_split.len() as f64,
            val_loss,
            val_auc,
            val_acc,
            wall_seconds: started.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}: train_loss {:.4} val_loss {:.4} val_auc {:.4} val_acc {:.4}",
            rec.train_loss,
            rec.val_loss,
            rec.val_auc,
            rec.val_acc
        );
        let score = if val_auc.is_nan() { -val_loss } else { val_auc };
        if best.as_ref().is_none_or(|(s, _, _)| score > *s) {
            best = Some((score, epoch, tagger.clone()));
        }
        let halt = stop(&rec);
        history.push(rec);
        let best_epoch = best.as_ref().map_or(0, |b| b.1);
        if halt || epoch - best_epoch >= cfg.patience {
            break;
        }
    }
    let (_, best_epoch, best) = match best {
        Some(b) => b,
        None => (f64::NAN, 0, tagger),
    };
    Ok(TrainOutcome {
        best,
        best_epoch,
        history,
    })
}
