use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{log_softmax, softmax, AdamConfig, AdamState, ContextFeatures, PolicyParams};
use super::adam::adam_step;
use crate::error::{Error, Result};

/// Samples per parallel work unit; fixed so the reduction order never
/// depends on the thread count.
pub(crate) const CHUNK: usize = 8;

/// One supervised sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftSample {
    pub features: ContextFeatures,
    pub tokens: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SftConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub adam: AdamConfig,
}

impl Default for SftConfig {
    fn default() -> Self {
        Self {
            lr: 3e-3,
            batch_size: 32,
            steps: 1500,
            adam: AdamConfig::default(),
        }
    }
}

impl SftConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid("sft learning rate must be > 0"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("sft batch size must be >= 1"));
        }
        Ok(())
    }
}

/// Per-step mean token cross-entropy.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SftRecord {
    pub loss: Vec<f64>,
}

fn sample_loss_and_grad(params: &PolicyParams, s: &SftSample, scale: f64, grad: &mut PolicyParams) -> f64 {
    let l = s.tokens.len() as f64;
    let mut loss = 0.0;
    for (j, &y) in s.tokens.iter().enumerate() {
        let prev = params.context_token(&s.tokens, j);
        let (x, h) = params.trunk(&s.features, prev);
        let logits = params.head(j, &h);
        loss -= log_softmax(&logits)[y];
        let mut dz = softmax(&logits);
        dz[y] -= 1.0;
        for g in &mut dz {
            *g *= scale / l;
        }
        params.backward(grad, prev, j, &x, &h, &dz);
    }
    loss / l
}

/// Mean over the batch of the per-token cross-entropy, and its gradient.
pub fn sft_loss_and_grad(params: &PolicyParams, batch: &[SftSample]) -> Result<(f64, PolicyParams)> {
    if batch.is_empty() {
        return Err(Error::invalid("empty sft batch"));
    }
    for s in batch {
        if s.tokens.len() != params.shape().length {
            return Err(Error::LengthMismatch {
                expected: params.shape().length,
                got: s.tokens.len(),
            });
        }
        if let Some(t) = s.tokens.iter().find(|t| **t >= params.bins()) {
            return Err(Error::invalid(format!("token {t} out of range 0..{}", params.bins())));
        }
    }
    let scale = 1.0 / batch.len() as f64;
    let parts: Vec<(f64, PolicyParams)> = batch
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut g = params.zeros_like();
            let loss: f64 = chunk.iter().map(|s| sample_loss_and_grad(params, s, scale, &mut g)).sum();
            (loss, g)
        })
        .collect();
    let mut grad = params.zeros_like();
    let mut loss = 0.0;
    for (l, g) in &parts {
        loss += l;
        grad.add_scaled(g, 1.0);
    }
    Ok((loss * scale, grad))
}

/// Minibatch Adam on the cross-entropy; batches are drawn from a reshuffled
/// pass over `data` so every sample is visited once per epoch.
pub fn train_sft<R: Rng + ?Sized>(
    mut params: PolicyParams,
    data: &[SftSample],
    cfg: &SftConfig,
    rng: &mut R,
) -> Result<(PolicyParams, SftRecord)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::invalid("empty sft dataset"));
    }
    let mut state = AdamState::new(params.as_slice().len(), cfg.adam);
    let mut record = SftRecord::default();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut cursor = order.len();
    let mut batch = Vec::with_capacity(cfg.batch_size);
    for _ in 0..cfg.steps {
        batch.clear();
        while batch.len() < cfg.batch_size.min(data.len()) {
            if cursor == order.len() {
                order.shuffle(rng);
                cursor = 0;
            }
            batch.push(data[order[cursor]].clone());
            cursor += 1;
        }
        let (loss, grad) = sft_loss_and_grad(&params, &batch)?;
        adam_step(params.as_mut_slice(), grad.as_slice(), &mut state, cfg.lr);
        record.loss.push(loss);
    }
    Ok((params, record))
}
