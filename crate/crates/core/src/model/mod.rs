//! Encoder-only transformer with a linear prediction head over a pooled
//! sequence vector.
//!
//! Everything runs in `f64` so analytic gradients can be checked against
//! finite differences.

mod encoder;

use ndarray::{Array1, Array2, Array3, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use encoder::{EncoderWeights, LayerWeights};
use encoder::{DropoutMasks, Encoder};

use crate::parallel::Execution;
use crate::tokenizer::Batch;
use crate::trainer::loss::{sigmoid, Loss};
use crate::util::mix_seed;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("token id {id} out of range for vocabulary of {vocab}")]
    IdOutOfRange { id: u32, vocab: usize },
    #[error("sequence length {len} exceeds max_positions {max}")]
    TooLong { len: usize, max: usize },
    #[error("batch shape mismatch: {0}")]
    Shape(String),
    #[error("invalid encoder config: {0}")]
    Config(String),
}

/// Where initial encoder weights come from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderSource {
    /// Seeded random initialisation.
    ToyRandom { seed: u64 },
    /// A checkpoint directory whose encoder is adapted into this model.
    Pretrained { path: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub hidden_size: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub ffn_size: usize,
    /// Training-time only.
    pub dropout: f64,
    pub max_positions: usize,
    pub source: EncoderSource,
}

impl EncoderConfig {
    /// Small configuration used throughout the test suite.
    pub fn toy(vocab_size: usize, seed: u64) -> Self {
        EncoderConfig {
            vocab_size,
            hidden_size: 32,
            num_layers: 2,
            num_heads: 2,
            ffn_size: 64,
            dropout: 0.2,
            max_positions: 1024,
            source: EncoderSource::ToyRandom { seed },
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::Config(m.to_string()));
        if self.vocab_size == 0 || self.hidden_size == 0 || self.num_layers == 0 || self.num_heads == 0 {
            return bad("vocab_size, hidden_size, num_layers and num_heads must be positive");
        }
        if self.ffn_size == 0 || self.max_positions == 0 {
            return bad("ffn_size and max_positions must be positive");
        }
        if !self.hidden_size.is_multiple_of(self.num_heads) {
            return bad("hidden_size must be divisible by num_heads");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        Ok(())
    }

    fn layer_parameter_count(&self) -> usize {
        let (h, f) = (self.hidden_size, self.ffn_size);
        4 * h * h + 2 * h * f + 2 * h
    }

    /// Encoder plus a single-output linear head.
    pub fn encoder_parameter_count(&self) -> usize {
        let h = self.hidden_size;
        self.vocab_size * h + self.max_positions * h + self.num_layers * self.layer_parameter_count() + h + (h + 1)
    }

    /// Same-dimension encoder-decoder (decoder blocks add cross-attention and
    /// a third norm; output projection tied to the embedding).
    pub fn seq2seq_parameter_count(&self) -> usize {
        let (h, f) = (self.hidden_size, self.ffn_size);
        let encoder = self.vocab_size * h
            + self.max_positions * h
            + self.num_layers * self.layer_parameter_count()
            + h;
        let decoder_layer = 8 * h * h + 2 * h * f + 3 * h;
        encoder + self.max_positions * h + self.num_layers * decoder_layer + h
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadTask {
    Regression,
    BinaryClassification,
}

/// Sequence-vector pooling. `Cls` reads position 0 and requires the
/// pipeline to have prepended `[CLS]`; `MaskedMean` averages unmasked
/// positions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    Cls,
    MaskedMean,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionHead {
    pub weight: Array1<f64>,
    pub bias: f64,
    pub task: HeadTask,
}

impl PredictionHead {
    /// Zero bias, weights uniform in ±1/sqrt(hidden).
    pub fn random(hidden: usize, task: HeadTask, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 1.0 / (hidden as f64).sqrt();
        let dist = Uniform::new(-bound, bound).expect("valid bound");
        PredictionHead {
            weight: Array1::from_shape_fn(hidden, |_| dist.sample(&mut rng)),
            bias: 0.0,
            task,
        }
    }

    pub fn output(&self, pooled: &Array1<f64>) -> f64 {
        self.weight.dot(pooled) + self.bias
    }
}

/// Strictly inside (0, 1) for every finite logit.
pub fn probability(logit: f64) -> f64 {
    sigmoid(logit).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON)
}

/// `states[:, 0, :]`
pub fn pool_cls(states: &Array3<f64>) -> Array2<f64> {
    states.index_axis(Axis(1), 0).to_owned()
}

/// `sum(states * mask) / sum(mask)` per sequence; zero for an all-pad row.
pub fn pool_mean(states: &Array3<f64>, masks: &[Vec<u8>]) -> Array2<f64> {
    let (b, _, h) = states.dim();
    let mut out = Array2::zeros((b, h));
    for (i, mask) in masks.iter().enumerate() {
        let n = mask.iter().filter(|&&m| m != 0).count();
        if n == 0 {
            continue;
        }
        let mut row = out.row_mut(i);
        for (t, &m) in mask.iter().enumerate() {
            if m != 0 {
                row += &states.slice(ndarray::s![i, t, ..]);
            }
        }
        row /= n as f64;
    }
    out
}

/// Parameter gradients, shaped like the model.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub encoder: EncoderWeights,
    pub head_weight: Array1<f64>,
    pub head_bias: f64,
}

impl Gradients {
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut v: Vec<&[f64]> = self.encoder.tensors().into_iter().map(|(_, _, s)| s).collect();
        v.push(self.head_weight.as_slice().unwrap());
        v.push(std::slice::from_ref(&self.head_bias));
        v
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = self.encoder.tensors_mut();
        v.push(self.head_weight.as_slice_mut().unwrap());
        v.push(std::slice::from_mut(&mut self.head_bias));
        v
    }

    fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.slices_mut().into_iter().zip(other.slices()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.slices().iter().flat_map(|s| s.iter()).map(|g| g * g).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        for s in self.slices_mut() {
            s.iter_mut().for_each(|g| *g *= factor);
        }
    }
}

// Examples per gradient-accumulation chunk. Fixed so the reduction order
// does not depend on the thread count.
const GRAD_CHUNK: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: EncoderConfig,
    pub encoder: EncoderWeights,
    pub head: PredictionHead,
    pub pooling: Pooling,
}

impl Model {
    /// Fresh model with random encoder and head.
    pub fn random(config: EncoderConfig, task: HeadTask, pooling: Pooling, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let encoder = EncoderWeights::random(&config, seed);
        let head = PredictionHead::random(config.hidden_size, task, mix_seed(seed, 0x4EAD));
        Ok(Model {
            config,
            encoder,
            head,
            pooling,
        })
    }

    pub fn task(&self) -> HeadTask {
        self.head.task
    }

    pub fn loss(&self) -> Loss {
        match self.head.task {
            HeadTask::Regression => Loss::Mae,
            HeadTask::BinaryClassification => Loss::Bce,
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }

    pub fn slices(&self) -> Vec<&[f64]> {
        let mut v: Vec<&[f64]> = self.encoder.tensors().into_iter().map(|(_, _, s)| s).collect();
        v.push(self.head.weight.as_slice().unwrap());
        v.push(std::slice::from_ref(&self.head.bias));
        v
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = self.encoder.tensors_mut();
        v.push(self.head.weight.as_slice_mut().unwrap());
        v.push(std::slice::from_mut(&mut self.head.bias));
        v
    }

    pub fn zero_gradients(&self) -> Gradients {
        Gradients {
            encoder: self.encoder.zeros_like(),
            head_weight: Array1::zeros(self.head.weight.raw_dim()),
            head_bias: 0.0,
        }
    }

    fn encoder_view(&self) -> Encoder<'_> {
        Encoder {
            weights: &self.encoder,
            num_heads: self.config.num_heads,
        }
    }

    fn check_batch(&self, batch: &Batch) -> Result<(), ModelError> {
        if batch.masks.len() != batch.ids.len() {
            return Err(ModelError::Shape(format!(
                "{} id rows vs {} mask rows",
                batch.ids.len(),
                batch.masks.len()
            )));
        }
        if batch.length > self.config.max_positions {
            return Err(ModelError::TooLong {
                len: batch.length,
                max: self.config.max_positions,
            });
        }
        for (ids, mask) in batch.ids.iter().zip(&batch.masks) {
            if ids.len() != batch.length || mask.len() != batch.length {
                return Err(ModelError::Shape(format!(
                    "row of length {}/{} in batch of length {}",
                    ids.len(),
                    mask.len(),
                    batch.length
                )));
            }
            if let Some(&id) = ids.iter().find(|&&id| id as usize >= self.config.vocab_size) {
                return Err(ModelError::IdOutOfRange {
                    id,
                    vocab: self.config.vocab_size,
                });
            }
        }
        Ok(())
    }

    fn pool_one(&self, states: &Array2<f64>, mask: &[u8]) -> Array1<f64> {
        match self.pooling {
            Pooling::Cls => states.row(0).to_owned(),
            Pooling::MaskedMean => {
                let n = mask.iter().filter(|&&m| m != 0).count();
                let mut acc = Array1::zeros(states.ncols());
                if n == 0 {
                    return acc;
                }
                for (t, &m) in mask.iter().enumerate() {
                    if m != 0 {
                        acc += &states.row(t);
                    }
                }
                acc / n as f64
            }
        }
    }

    /// Eval-mode hidden states, shape `(batch, length, hidden)`.
    pub fn encode(&self, batch: &Batch) -> Result<Array3<f64>, ModelError> {
        self.encode_with(batch, Execution::Sequential)
    }

    pub fn encode_with(&self, batch: &Batch, exec: Execution) -> Result<Array3<f64>, ModelError> {
        self.check_batch(batch)?;
        let h = self.config.hidden_size;
        let rows: Vec<usize> = (0..batch.len()).collect();
        let states = exec.map(&rows, |&i| self.encoder_view().forward(&batch.ids[i], &batch.masks[i], None, false).0);
        let mut out = Array3::zeros((batch.len(), batch.length, h));
        for (i, s) in states.into_iter().enumerate() {
            out.index_axis_mut(Axis(0), i).assign(&s);
        }
        Ok(out)
    }

    /// Pooled vectors `(batch, hidden)` under this model's pooling mode.
    pub fn pool(&self, states: &Array3<f64>, masks: &[Vec<u8>]) -> Array2<f64> {
        match self.pooling {
            Pooling::Cls => pool_cls(states),
            Pooling::MaskedMean => pool_mean(states, masks),
        }
    }

    /// Raw head outputs (scaled-label space for regression, logits for
    /// classification).
    pub fn outputs(&self, batch: &Batch, exec: Execution) -> Result<Vec<f64>, ModelError> {
        self.check_batch(batch)?;
        let rows: Vec<usize> = (0..batch.len()).collect();
        Ok(exec.map(&rows, |&i| {
            let (states, _) = self.encoder_view().forward(&batch.ids[i], &batch.masks[i], None, false);
            self.head.output(&self.pool_one(&states, &batch.masks[i]))
        }))
    }

    /// Regression values, or probabilities in (0, 1) for classification.
    pub fn predict(&self, batch: &Batch, exec: Execution) -> Result<Vec<f64>, ModelError> {
        let out = self.outputs(batch, exec)?;
        Ok(match self.head.task {
            HeadTask::Regression => out,
            HeadTask::BinaryClassification => out.into_iter().map(probability).collect(),
        })
    }

    /// Mean loss over the batch (eval mode).
    pub fn batch_loss(&self, batch: &Batch, targets: &[f64], exec: Execution) -> Result<f64, ModelError> {
        let out = self.outputs(batch, exec)?;
        if out.len() != targets.len() || out.is_empty() {
            return Err(ModelError::Shape(format!("{} outputs vs {} targets", out.len(), targets.len())));
        }
        let loss = self.loss();
        Ok(out.iter().zip(targets).map(|(&o, &t)| loss.value_and_grad(o, t).0).sum::<f64>() / out.len() as f64)
    }

    /// Mean loss and its gradient over the batch. `dropout_seed` enables
    /// training-mode dropout with masks derived from the seed and the row
    /// index; `None` runs in eval mode.
    pub fn loss_and_gradients(
        &self,
        batch: &Batch,
        targets: &[f64],
        dropout_seed: Option<u64>,
        exec: Execution,
    ) -> Result<(f64, Gradients), ModelError> {
        self.check_batch(batch)?;
        if targets.len() != batch.len() || batch.is_empty() {
            return Err(ModelError::Shape(format!("{} targets for {} rows", targets.len(), batch.len())));
        }
        let n = batch.len() as f64;
        let loss = self.loss();
        let rows: Vec<usize> = (0..batch.len()).collect();
        let partials = exec.map_chunks(&rows, GRAD_CHUNK, |_, chunk| {
            let mut grad = self.zero_gradients();
            let mut total = 0.0;
            let enc = self.encoder_view();
            for &i in chunk {
                let (ids, mask) = (&batch.ids[i], &batch.masks[i]);
                let dropout = dropout_seed.and_then(|s| {
                    DropoutMasks::sample(
                        self.config.dropout,
                        ids.len(),
                        self.config.hidden_size,
                        self.config.num_layers,
                        mix_seed(s, i as u64),
                    )
                });
                let (states, cache) = enc.forward(ids, mask, dropout, true);
                let pooled = self.pool_one(&states, mask);
                let out = self.head.output(&pooled);
                let (l, dl) = loss.value_and_grad(out, targets[i]);
                total += l;
                let d_out = dl / n;
                grad.head_weight.scaled_add(d_out, &pooled);
                grad.head_bias += d_out;

                let d_pooled = &self.head.weight * d_out;
                let mut d_states = Array2::zeros(states.raw_dim());
                match self.pooling {
                    Pooling::Cls => d_states.row_mut(0).assign(&d_pooled),
                    Pooling::MaskedMean => {
                        let cnt = mask.iter().filter(|&&m| m != 0).count();
                        if cnt > 0 {
                            let share = &d_pooled / cnt as f64;
                            for (t, &m) in mask.iter().enumerate() {
                                if m != 0 {
                                    d_states.row_mut(t).assign(&share);
                                }
                            }
                        }
                    }
                }
                enc.backward(cache.as_ref().expect("cache requested"), d_states.view(), &mut grad.encoder);
            }
            (total, grad)
        });
        let mut iter = partials.into_iter();
        let (mut total, mut grad) = iter.next().expect("non-empty batch");
        for (t, g) in iter {
            total += t;
            grad.add_assign(&g);
        }
        Ok((total / n, grad))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::PAD_ID;
    use rand::Rng;

    fn toy(pooling: Pooling, task: HeadTask) -> Model {
        let mut cfg = EncoderConfig::toy(50, 1);
        cfg.hidden_size = 16;
        cfg.ffn_size = 32;
        cfg.dropout = 0.0;
        Model::random(cfg, task, pooling, 1).unwrap()
    }

    fn batch(rows: &[(&[u32], usize)], len: usize) -> Batch {
        let mut b = Batch {
            ids: vec![],
            masks: vec![],
            length: len,
        };
        for &(ids, real) in rows {
            let mut r = ids.to_vec();
            r.resize(len, PAD_ID);
            b.ids.push(r);
            b.masks.push((0..len).map(|t| (t < real) as u8).collect());
        }
        b
    }

    #[test]
    fn encode_shape_and_determinism() {
        let m = toy(Pooling::Cls, HeadTask::Regression);
        let b = batch(&[(&[2, 7, 8, 9], 4), (&[2, 10], 2)], 6);
        let s1 = m.encode(&b).unwrap();
        let s2 = m.encode_with(&b, Execution::Parallel).unwrap();
        assert_eq!(s1.dim(), (2, 6, 16));
        assert_eq!(s1, s2);
    }

    #[test]
    fn encode_rejects_bad_ids_and_shapes() {
        let m = toy(Pooling::Cls, HeadTask::Regression);
        let b = batch(&[(&[2, 77], 2)], 2);
        assert_eq!(m.encode(&b), Err(ModelError::IdOutOfRange { id: 77, vocab: 50 }));
        let mut b = batch(&[(&[2, 3], 2)], 2);
        b.masks[0].pop();
        assert!(matches!(m.encode(&b), Err(ModelError::Shape(_))));
    }

    #[test]
    fn padded_ids_do_not_leak() {
        let m = toy(Pooling::Cls, HeadTask::Regression);
        let a = batch(&[(&[2, 7, 8, 9, 0, 0, 0], 4)], 7);
        let mut b = a.clone();
        b.ids[0][4..].copy_from_slice(&[11, 12, 13]);
        let (sa, sb) = (m.encode(&a).unwrap(), m.encode(&b).unwrap());
        for t in 0..4 {
            for h in 0..16 {
                assert!((sa[[0, t, h]] - sb[[0, t, h]]).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn pooling_definitions() {
        let m = toy(Pooling::MaskedMean, HeadTask::Regression);
        let b = batch(&[(&[2, 7, 8], 3), (&[2], 1)], 3);
        let states = m.encode(&b).unwrap();
        let cls = pool_cls(&states);
        assert_eq!(cls.dim(), (2, 16));
        assert_eq!(cls.row(1), states.slice(ndarray::s![1, 0, ..]));
        let mean = pool_mean(&states, &b.masks);
        for h in 0..16 {
            let direct = (states[[0, 0, h]] + states[[0, 1, h]] + states[[0, 2, h]]) / 3.0;
            assert!((mean[[0, h]] - direct).abs() < 1e-15);
            assert_eq!(mean[[1, h]], states[[1, 0, h]]);
        }
        let single = batch(&[(&[2, 5], 2)], 2);
        assert_eq!(pool_cls(&m.encode(&single).unwrap()).dim(), (1, 16));
    }

    #[test]
    fn zero_weight_heads() {
        let mut m = toy(Pooling::Cls, HeadTask::Regression);
        m.head.weight.fill(0.0);
        m.head.bias = 1.75;
        let b = batch(&[(&[2, 7], 2), (&[2, 9, 9], 3)], 3);
        assert_eq!(m.predict(&b, Execution::Sequential).unwrap(), vec![1.75, 1.75]);
        let mut c = toy(Pooling::Cls, HeadTask::BinaryClassification);
        c.head.weight.fill(0.0);
        assert_eq!(c.predict(&b, Execution::Sequential).unwrap(), vec![0.5, 0.5]);
    }

    #[test]
    fn probabilities_stay_open() {
        for z in [-1e6, -800.0, 0.0, 40.0, 1e6] {
            let p = probability(z);
            assert!(p > 0.0 && p < 1.0);
        }
    }

    #[test]
    fn parallel_and_sequential_gradients_bitwise_equal() {
        let mut m = toy(Pooling::Cls, HeadTask::Regression);
        m.config.dropout = 0.2;
        let rows: Vec<Vec<u32>> = (0..11).map(|i| vec![2, 5 + i, 6, 7 + i % 3]).collect();
        let refs: Vec<(&[u32], usize)> = rows.iter().map(|r| (r.as_slice(), 4)).collect();
        let b = batch(&refs, 4);
        let t: Vec<f64> = (0..11).map(|i| i as f64 * 0.1).collect();
        let p = m.loss_and_gradients(&b, &t, Some(9), Execution::Parallel).unwrap();
        let s = m.loss_and_gradients(&b, &t, Some(9), Execution::Sequential).unwrap();
        assert_eq!(p, s);
    }

    #[test]
    fn gradients_match_finite_differences_small() {
        for pooling in [Pooling::Cls, Pooling::MaskedMean] {
            for task in [HeadTask::Regression, HeadTask::BinaryClassification] {
                let m = toy(pooling, task);
                let b = batch(&[(&[2, 7, 8, 9, 0], 4), (&[2, 11, 3], 3)], 5);
                let t = match task {
                    HeadTask::Regression => vec![3.0, -2.0],
                    HeadTask::BinaryClassification => vec![1.0, 0.0],
                };
                let (_, g) = m.loss_and_gradients(&b, &t, None, Execution::Sequential).unwrap();
                let gs = g.slices();
                let mut rng = ChaCha8Rng::seed_from_u64(2);
                for _ in 0..30 {
                    let ti = rng.random_range(0..gs.len());
                    if gs[ti].is_empty() {
                        continue;
                    }
                    let k = rng.random_range(0..gs[ti].len());
                    let eps = 1e-5;
                    let mut plus = m.clone();
                    plus.slices_mut()[ti][k] += eps;
                    let mut minus = m.clone();
                    minus.slices_mut()[ti][k] -= eps;
                    let num = (plus.batch_loss(&b, &t, Execution::Sequential).unwrap()
                        - minus.batch_loss(&b, &t, Execution::Sequential).unwrap())
                        / (2.0 * eps);
                    let ana = gs[ti][k];
                    assert!((num - ana).abs() <= 1e-6 + 1e-4 * num.abs().max(ana.abs()), "{num} vs {ana}");
                }
            }
        }
    }

    #[test]
    fn encoder_only_is_smaller_than_seq2seq() {
        let t5_small = EncoderConfig {
            vocab_size: 32_000,
            hidden_size: 512,
            num_layers: 6,
            num_heads: 8,
            ffn_size: 2048,
            dropout: 0.2,
            max_positions: 1024,
            source: EncoderSource::ToyRandom { seed: 0 },
        };
        let ratio = t5_small.encoder_parameter_count() as f64 / t5_small.seq2seq_parameter_count() as f64;
        assert!(ratio < 0.6, "{ratio}");
        let m = toy(Pooling::Cls, HeadTask::Regression);
        assert_eq!(m.parameter_count(), m.config.encoder_parameter_count());
        assert!((m.config.encoder_parameter_count() as f64) < 0.6 * m.config.seq2seq_parameter_count() as f64);
    }

    #[test]
    fn config_validation() {
        let mut c = EncoderConfig::toy(10, 0);
        c.num_heads = 3;
        assert!(c.validate().is_err());
        let mut c = EncoderConfig::toy(10, 0);
        c.dropout = 1.0;
        assert!(c.validate().is_err());
    }
}
