//! Compact autoregressive token policy over normalized waypoints.
//!
//! Each position `j` sees the context features and the embedding of one
//! earlier token, the previous one by default (a reserved start row when
//! there is none):
//!
//! ```text
//! h_j      = tanh(W1 · [f ; e(prev)] + b1)
//! logits_j = A_j · h_j + d_j
//! ```
//!
//! Gradients are accumulated by hand; [`PolicyParams`] doubles as the
//! gradient buffer.

mod adam;
mod checkpoint;
mod features;
pub mod gradcheck;
mod sft;
mod tokenizer;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::Checkpoint;
pub use features::{ContextFeatures, N_FEATURES};
pub use sft::{sft_loss_and_grad, train_sft, SftConfig, SftRecord, SftSample};
pub use tokenizer::{TokenSeq, Tokenizer, SEQ_LEN};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::traj::denormalize;
use crate::world::Scenario;
use crate::{StepStats, Trajectory};

pub const EMBED: usize = 16;
pub const HIDDEN: usize = 32;
const INPUT: usize = N_FEATURES + EMBED;

/// Which earlier token a position is conditioned on.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Context {
    /// The immediately preceding token (`j - 1`).
    #[default]
    Previous,
    /// The preceding token of the same axis (`j - 2`); the first waypoint's
    /// two tokens both see the start row.
    SameAxis,
}

impl Context {
    pub(crate) fn code(self) -> u32 {
        match self {
            Context::Previous => 0,
            Context::SameAxis => 1,
        }
    }

    pub(crate) fn from_code(c: u32) -> Option<Self> {
        match c {
            0 => Some(Context::Previous),
            1 => Some(Context::SameAxis),
            _ => None,
        }
    }

    fn lag(self) -> usize {
        match self {
            Context::Previous => 1,
            Context::SameAxis => 2,
        }
    }
}

/// Layout of the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shape {
    pub bins: usize,
    pub features: usize,
    pub embed: usize,
    pub hidden: usize,
    pub length: usize,
    pub context: Context,
}

impl Shape {
    pub fn new(bins: usize) -> Self {
        Self::with_context(bins, Context::Previous)
    }

    pub fn with_context(bins: usize, context: Context) -> Self {
        Self {
            bins,
            features: N_FEATURES,
            embed: EMBED,
            hidden: HIDDEN,
            length: SEQ_LEN,
            context,
        }
    }

    fn emb(&self) -> usize {
        0
    }
    fn start(&self) -> usize {
        self.bins * self.embed
    }
    fn w1(&self) -> usize {
        self.start() + self.embed
    }
    fn b1(&self) -> usize {
        self.w1() + self.hidden * (self.features + self.embed)
    }
    fn a(&self) -> usize {
        self.b1() + self.hidden
    }
    fn d(&self) -> usize {
        self.a() + self.length * self.bins * self.hidden
    }
    /// Number of parameters.
    pub fn len(&self) -> usize {
        self.d() + self.length * self.bins
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn is_default_layout(&self) -> bool {
        self.features == N_FEATURES && self.embed == EMBED && self.hidden == HIDDEN && self.length == SEQ_LEN
    }
}

/// Embedding table, trunk and per-position heads in one flat vector.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    shape: Shape,
    data: Vec<f64>,
}

impl PolicyParams {
    pub fn zeros(bins: usize) -> Self {
        Self::zeros_shaped(Shape::new(bins))
    }

    pub fn zeros_shaped(shape: Shape) -> Self {
        Self {
            data: vec![0.0; shape.len()],
            shape,
        }
    }

    pub fn init<R: Rng + ?Sized>(bins: usize, rng: &mut R) -> Self {
        Self::init_shaped(Shape::new(bins), rng)
    }

    /// Gaussian initialisation; output heads start small so the initial
    /// policy is close to uniform.
    pub fn init_shaped<R: Rng + ?Sized>(shape: Shape, rng: &mut R) -> Self {
        let mut p = Self::zeros_shaped(shape);
        let s = p.shape;
        let mut fill = |lo: usize, hi: usize, std: f64, data: &mut [f64]| {
            let n = Normal::new(0.0, std).expect("positive std");
            for v in &mut data[lo..hi] {
                *v = n.sample(rng);
            }
        };
        fill(s.emb(), s.w1(), 0.5, &mut p.data);
        fill(s.w1(), s.b1(), 1.0 / (INPUT as f64).sqrt(), &mut p.data);
        fill(s.a(), s.d(), 0.01, &mut p.data);
        p
    }

    pub fn from_parts(shape: Shape, data: Vec<f64>) -> Result<Self> {
        if !shape.is_default_layout() || shape.bins < 2 {
            return Err(Error::Checkpoint(format!("unsupported parameter shape {shape:?}")));
        }
        if data.len() != shape.len() {
            return Err(Error::LengthMismatch {
                expected: shape.len(),
                got: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Checkpoint("non-finite parameter".into()));
        }
        Ok(Self { shape, data })
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }
    pub fn bins(&self) -> usize {
        self.shape.bins
    }
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }
    pub fn zeros_like(&self) -> Self {
        Self::zeros_shaped(self.shape)
    }

    /// Conditioning token for position `j` given the tokens before it.
    pub fn context_token(&self, prefix: &[usize], j: usize) -> Option<usize> {
        let lag = self.shape.context.lag();
        (j >= lag).then(|| prefix[j - lag])
    }

    /// `self += k · other`.
    pub fn add_scaled(&mut self, other: &Self, k: f64) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += k * b;
        }
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    fn embedding(&self, prev: Option<usize>) -> &[f64] {
        let s = &self.shape;
        let off = match prev {
            Some(t) => s.emb() + t * s.embed,
            None => s.start(),
        };
        &self.data[off..off + s.embed]
    }

    fn embedding_mut(&mut self, prev: Option<usize>) -> &mut [f64] {
        let s = self.shape;
        let off = match prev {
            Some(t) => s.emb() + t * s.embed,
            None => s.start(),
        };
        &mut self.data[off..off + s.embed]
    }

    /// Trunk activation for one position: `(input, hidden)`.
    pub(crate) fn trunk(&self, f: &ContextFeatures, prev: Option<usize>) -> ([f64; INPUT], [f64; HIDDEN]) {
        let s = &self.shape;
        let mut x = [0.0; INPUT];
        x[..N_FEATURES].copy_from_slice(&f.0);
        x[N_FEATURES..].copy_from_slice(self.embedding(prev));
        let w1 = &self.data[s.w1()..s.b1()];
        let b1 = &self.data[s.b1()..s.a()];
        let mut h = [0.0; HIDDEN];
        for (r, hr) in h.iter_mut().enumerate() {
            let row = &w1[r * INPUT..(r + 1) * INPUT];
            let z: f64 = row.iter().zip(&x).map(|(w, v)| w * v).sum();
            *hr = (z + b1[r]).tanh();
        }
        (x, h)
    }

    pub(crate) fn head(&self, j: usize, h: &[f64; HIDDEN]) -> Vec<f64> {
        let s = &self.shape;
        let a = &self.data[s.a() + j * s.bins * HIDDEN..s.a() + (j + 1) * s.bins * HIDDEN];
        let d = &self.data[s.d() + j * s.bins..s.d() + (j + 1) * s.bins];
        a.chunks_exact(HIDDEN)
            .zip(d)
            .map(|(row, bias)| row.iter().zip(h).map(|(w, v)| w * v).sum::<f64>() + bias)
            .collect()
    }

    /// Logits at position `j` (0-based) given its conditioning token.
    pub fn forward_logits(&self, f: &ContextFeatures, prev: Option<usize>, j: usize) -> Vec<f64> {
        let (_, h) = self.trunk(f, prev);
        self.head(j, &h)
    }

    /// Reverse pass for one position: accumulates into `grad` the gradient
    /// of a loss whose derivative with respect to the logits is `dz`.
    pub(crate) fn backward(
        &self,
        grad: &mut PolicyParams,
        prev: Option<usize>,
        j: usize,
        x: &[f64; INPUT],
        h: &[f64; HIDDEN],
        dz: &[f64],
    ) {
        let s = self.shape;
        let bins = s.bins;
        let a_off = s.a() + j * bins * HIDDEN;
        let d_off = s.d() + j * bins;
        let mut dh = [0.0; HIDDEN];
        for (k, &g) in dz.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            grad.data[d_off + k] += g;
            let row = &self.data[a_off + k * HIDDEN..a_off + (k + 1) * HIDDEN];
            let grow = &mut grad.data[a_off + k * HIDDEN..a_off + (k + 1) * HIDDEN];
            for r in 0..HIDDEN {
                grow[r] += g * h[r];
                dh[r] += g * row[r];
            }
        }
        let mut dx = [0.0; INPUT];
        for r in 0..HIDDEN {
            let da = dh[r] * (1.0 - h[r] * h[r]);
            if da == 0.0 {
                continue;
            }
            grad.data[s.b1() + r] += da;
            let w_off = s.w1() + r * INPUT;
            for c in 0..INPUT {
                grad.data[w_off + c] += da * x[c];
                dx[c] += da * self.data[w_off + c];
            }
        }
        for (g, d) in grad.embedding_mut(prev).iter_mut().zip(&dx[N_FEATURES..]) {
            *g += d;
        }
    }

    /// Log-probability of a full sequence at temperature 1.
    pub fn sequence_logprob(&self, f: &ContextFeatures, tokens: &[usize]) -> f64 {
        let mut lp = 0.0;
        for (j, &y) in tokens.iter().enumerate() {
            lp += log_softmax(&self.forward_logits(f, self.context_token(tokens, j), j))[y];
        }
        lp
    }

    /// Per-position log-distributions along a fixed token prefix.
    pub fn position_logprobs(&self, f: &ContextFeatures, tokens: &[usize]) -> Vec<Vec<f64>> {
        (0..tokens.len())
            .map(|j| log_softmax(&self.forward_logits(f, self.context_token(tokens, j), j)))
            .collect()
    }

    /// Ancestral sampling at `temperature`; the returned log-probability is
    /// the untempered policy's.
    pub fn sample_tokens<R: Rng + ?Sized>(
        &self,
        f: &ContextFeatures,
        temperature: f64,
        rng: &mut R,
    ) -> Result<(TokenSeq, f64)> {
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(Error::invalid(format!("temperature must be > 0, got {temperature}")));
        }
        let mut tokens = Vec::with_capacity(self.shape.length);
        let mut lp = 0.0;
        for j in 0..self.shape.length {
            let logits = self.forward_logits(f, self.context_token(&tokens, j), j);
            let scaled: Vec<f64> = logits.iter().map(|l| l / temperature).collect();
            let probs = softmax(&scaled);
            let u: f64 = rng.random();
            let y = draw(&probs, u);
            lp += log_softmax(&logits)[y];
            tokens.push(y);
        }
        Ok((tokens, lp))
    }

    /// Argmax decode (the zero-temperature limit); ties to the lowest bin.
    pub fn greedy_tokens(&self, f: &ContextFeatures) -> (TokenSeq, f64) {
        let mut tokens = Vec::with_capacity(self.shape.length);
        let mut lp = 0.0;
        for j in 0..self.shape.length {
            let logits = self.forward_logits(f, self.context_token(&tokens, j), j);
            let y = argmax(&logits);
            lp += log_softmax(&logits)[y];
            tokens.push(y);
        }
        (tokens, lp)
    }
}

/// A decoded sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub tokens: TokenSeq,
    pub trajectory: Trajectory,
    pub logprob: f64,
}

/// Everything needed to turn tokens back into meters.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    pub params: PolicyParams,
    pub tokenizer: Tokenizer,
    pub stats: StepStats,
}

/// How rollouts are decoded.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Decode {
    Sample { temperature: f64 },
    Greedy,
}

impl Policy {
    pub fn decode(&self, tokens: &[usize]) -> Result<Trajectory> {
        denormalize(&self.tokenizer.detokenize(tokens)?, &self.stats)
    }

    /// Samples one trajectory for `scenario` under its own intent prompt.
    pub fn sample<R: Rng + ?Sized>(&self, scenario: &Scenario, temperature: f64, rng: &mut R) -> Result<Rollout> {
        self.rollout(&ContextFeatures::from_scenario(scenario), Decode::Sample { temperature }, rng)
    }

    pub fn rollout<R: Rng + ?Sized>(&self, f: &ContextFeatures, decode: Decode, rng: &mut R) -> Result<Rollout> {
        let (tokens, logprob) = match decode {
            Decode::Sample { temperature } => self.params.sample_tokens(f, temperature, rng)?,
            Decode::Greedy => self.params.greedy_tokens(f),
        };
        Ok(Rollout {
            trajectory: self.decode(&tokens)?,
            tokens,
            logprob,
        })
    }
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
    logits.iter().map(|l| l - lse).collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Inverse-CDF draw; falls back to the last bin with mass on rounding.
fn draw(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.iter().rposition(|p| *p > 0.0).unwrap_or(0)
}
