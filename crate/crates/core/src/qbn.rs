//! Quantized bottleneck networks: autoencoders whose code layer is ternary.
//!
//! The encoder has widths `[8B, 4B, B]` with `Tanh, Tanh, TernaryTanh`; the
//! decoder mirrors it with widths `[4B, 8B, input]`, `Tanh, Tanh` and a final
//! `ReLU6` for observation features or `Tanh` for hidden states. Training
//! backpropagates through the quantizer with the straight-through gradient.

use std::collections::HashSet;
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::neural::{
    clip_grad_norm, probe, probe_grad, Activation, Adam, Checkpoint, Differentiable, Mlp, Mode,
    Parameterized, Tensor,
};
use crate::{seed, Result, TernaryCode};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QbnError {
    #[error("training dataset is empty")]
    EmptyDataset,
    #[error("sample {index} has length {found}, expected {expected}")]
    SampleWidth {
        index: usize,
        expected: usize,
        found: usize,
    },
    #[error("invalid QBN size: {0}")]
    InvalidSize(String),
    #[error("checkpoint does not hold a QBN: {0}")]
    Checkpoint(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum QbnKind {
    /// Quantizes recurrent hidden states; decoder ends in Tanh.
    Hidden,
    /// Quantizes observation features; decoder ends in ReLU6.
    Observation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Qbn {
    pub kind: QbnKind,
    pub encoder: Mlp,
    pub decoder: Mlp,
}

const CHECKPOINT_KIND: &str = "qbn";

impl Qbn {
    pub fn new(input_dim: usize, bottleneck: usize, kind: QbnKind, seed: u64) -> Result<Self> {
        if input_dim == 0 || bottleneck == 0 {
            return Err(QbnError::InvalidSize(format!("input {input_dim}, bottleneck {bottleneck}")).into());
        }
        let b = bottleneck;
        let last = match kind {
            QbnKind::Hidden => Activation::Tanh,
            QbnKind::Observation => Activation::Relu6,
        };
        let mut rng = seed::rng(seed);
        let encoder = Mlp::new(
            &[input_dim, 8 * b, 4 * b, b],
            &[Activation::Tanh, Activation::Tanh, Activation::TernaryTanh],
            &mut rng,
        );
        let decoder = Mlp::new(
            &[b, 4 * b, 8 * b, input_dim],
            &[Activation::Tanh, Activation::Tanh, last],
            &mut rng,
        );
        Ok(Self { kind, encoder, decoder })
    }

    pub fn input_dim(&self) -> usize {
        self.encoder.input_dim()
    }

    pub fn bottleneck(&self) -> usize {
        self.encoder.output_dim()
    }

    /// Ternary code and the continuous pre-quantization vector it rounds.
    pub fn encode(&self, x: &[f64]) -> Result<(TernaryCode, Vec<f64>)> {
        let cache = self.encoder.forward(x, Mode::Quantized)?;
        let pre = cache.layers.last().expect("three layers").pre.clone();
        let code = TernaryCode::from_f64s(cache.output()).expect("quantizer output is ternary");
        Ok((code, pre))
    }

    pub fn decode(&self, code: &TernaryCode) -> Result<Vec<f64>> {
        Ok(self.decoder.output(&code.to_f64s(), Mode::Quantized)?)
    }

    pub fn reconstruct(&self, x: &[f64]) -> Result<Vec<f64>> {
        let (code, _) = self.encode(x)?;
        self.decode(&code)
    }

    /// Mean squared reconstruction error over a dataset.
    pub fn loss(&self, data: &[Vec<f64>]) -> Result<f64> {
        let mut total = 0.0;
        for x in data {
            let y = self.reconstruct(x)?;
            total += mse(&y, x);
        }
        Ok(total / data.len().max(1) as f64)
    }

    pub fn distinct_codes(&self, data: &[Vec<f64>]) -> Result<usize> {
        let mut seen = HashSet::new();
        for x in data {
            seen.insert(self.encode(x)?.0);
        }
        Ok(seen.len())
    }

    /// Accumulates the gradient of one sample's squared error, scaled by
    /// `scale`, into `grads` (encoder parameters, then decoder).
    fn accumulate_sample(&self, x: &[f64], scale: f64, mode: Mode, grads: &mut [Tensor]) -> Result<f64> {
        let enc = self.encoder.forward(x, mode)?;
        let dec = self.decoder.forward(enc.output(), mode)?;
        let y = dec.output();
        let d = x.len() as f64;
        let gy: Vec<f64> = y.iter().zip(x).map(|(y, x)| 2.0 * (y - x) / d * scale).collect();
        let split = 2 * self.encoder.layers.len();
        let (ge, gd) = grads.split_at_mut(split);
        let gcode = self.decoder.backward(&dec, &gy, gd);
        self.encoder.backward(&enc, &gcode, ge);
        Ok(mse(y, x))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let meta = serde_json::json!({
            "kind": self.kind,
            "input_dim": self.input_dim(),
            "bottleneck": self.bottleneck(),
        });
        let mut c = Checkpoint::new(CHECKPOINT_KIND, meta);
        for (name, t) in self.named_params() {
            c.push(name, t);
        }
        c
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        if c.kind != CHECKPOINT_KIND {
            return Err(QbnError::Checkpoint(format!("kind is `{}`", c.kind)).into());
        }
        let field = |k: &str| {
            c.meta
                .get(k)
                .cloned()
                .ok_or_else(|| QbnError::Checkpoint(format!("missing `{k}`")))
        };
        let kind: QbnKind = serde_json::from_value(field("kind")?)?;
        let input: usize = serde_json::from_value(field("input_dim")?)?;
        let b: usize = serde_json::from_value(field("bottleneck")?)?;
        let mut q = Self::new(input, b, kind, 0)?;
        let names: Vec<String> = q.named_params().into_iter().map(|(n, _)| n).collect();
        c.load_into(names.into_iter().zip(q.params_mut()).collect())?;
        Ok(q)
    }

    fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (part, net) in [("encoder", &self.encoder), ("decoder", &self.decoder)] {
            for (i, l) in net.layers.iter().enumerate() {
                out.push((format!("{part}.{i}.weight"), &l.weight));
                out.push((format!("{part}.{i}.bias"), &l.bias));
            }
        }
        out
    }
}

fn mse(y: &[f64], x: &[f64]) -> f64 {
    y.iter().zip(x).map(|(y, x)| (y - x).powi(2)).sum::<f64>() / x.len().max(1) as f64
}

impl Parameterized for Qbn {
    fn params(&self) -> Vec<&Tensor> {
        let mut p = self.encoder.params();
        p.extend(self.decoder.params());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = self.encoder.params_mut();
        p.extend(self.decoder.params_mut());
        p
    }
}

/// The smooth autoencoder path (quantizer replaced by its surrogate) with a
/// fixed probe objective on the reconstruction.
impl Differentiable for Qbn {
    fn objective(&self, x: &[f64]) -> f64 {
        let code = self.encoder.output(x, Mode::Smooth).expect("input width");
        let y = self.decoder.output(&code, Mode::Smooth).expect("code width");
        probe(&y)
    }

    fn gradient(&self, x: &[f64]) -> (Vec<Tensor>, Vec<f64>) {
        let enc = self.encoder.forward(x, Mode::Smooth).expect("input width");
        let dec = self.decoder.forward(enc.output(), Mode::Smooth).expect("code width");
        let gy = probe_grad(dec.output());
        let mut grads = self.zero_grads();
        let (ge, gd) = grads.split_at_mut(2 * self.encoder.layers.len());
        let gcode = self.decoder.backward(&dec, &gy, gd);
        let gx = self.encoder.backward(&enc, &gcode, ge);
        (grads, gx)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QbnTrainConfig {
    pub lr: f64,
    pub max_norm: f64,
    pub epochs: usize,
    pub batch: usize,
    /// Stop after this many epochs without a new best loss.
    pub patience: usize,
    pub seed: u64,
}

impl Default for QbnTrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            max_norm: 5.0,
            epochs: 200,
            batch: 32,
            patience: 20,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QbnTrainReport {
    /// Full-dataset loss before training, then after each epoch.
    pub history: Vec<f64>,
    /// Index into `history` of the parameters that were kept.
    pub best: usize,
}

impl QbnTrainReport {
    pub fn final_loss(&self) -> f64 {
        self.history[self.best]
    }
}

/// Minibatch Adam on the mean squared reconstruction error with global
/// gradient clipping. The parameters with the lowest full-dataset loss seen
/// (including the initial ones) are kept.
pub fn train_qbn(q: &mut Qbn, data: &[Vec<f64>], cfg: &QbnTrainConfig) -> Result<QbnTrainReport> {
    if data.is_empty() {
        return Err(QbnError::EmptyDataset.into());
    }
    for (index, x) in data.iter().enumerate() {
        if x.len() != q.input_dim() {
            return Err(QbnError::SampleWidth {
                index,
                expected: q.input_dim(),
                found: x.len(),
            }
            .into());
        }
    }
    let mut rng = seed::rng(cfg.seed);
    let mut adam = Adam::new(cfg.lr);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = vec![q.loss(data)?];
    let (mut best, mut best_params) = (0, q.clone());
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch.max(1)) {
            let mut grads = q.zero_grads();
            let scale = 1.0 / chunk.len() as f64;
            for &i in chunk {
                q.accumulate_sample(&data[i], scale, Mode::Quantized, &mut grads)?;
            }
            clip_grad_norm(&mut grads, cfg.max_norm);
            adam.step(q.params_mut(), &grads);
        }
        let loss = q.loss(data)?;
        history.push(loss);
        if loss < history[best] {
            best = epoch;
            best_params = q.clone();
        } else if epoch - best >= cfg.patience {
            break;
        }
    }
    *q = best_params;
    Ok(QbnTrainReport { history, best })
}

/// Reads one JSON array of numbers per non-empty line.
pub fn read_dataset<R: BufRead>(reader: R) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

pub fn write_dataset<W: Write>(mut w: W, data: &[Vec<f64>]) -> Result<()> {
    for x in data {
        serde_json::to_writer(&mut w, x)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}
