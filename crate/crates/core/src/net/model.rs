//! Forward and backward passes of the convolutional classifier.
//!
//! embed -> dropout -> conv1d (valid) -> ReLU -> global max pool -> dense ->
//! ReLU -> dropout -> dense(1) -> sigmoid

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::config::ModelConfig;
use crate::corpus::PAD_ID;
use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};

/// Trainable weights, all row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    /// `num_filters x (filter_width * embed_dim)`
    pub conv_w: Vec<f64>,
    pub conv_b: Vec<f64>,
    /// `hidden_dim x num_filters`
    pub hidden_w: Vec<f64>,
    pub hidden_b: Vec<f64>,
    pub out_w: Vec<f64>,
    /// Single element.
    pub out_b: Vec<f64>,
}

pub const TENSOR_NAMES: [&str; 6] = ["conv_w", "conv_b", "hidden_w", "hidden_b", "out_w", "out_b"];

impl Params {
    pub fn zeros(c: &ModelConfig) -> Self {
        Params {
            conv_w: vec![0.0; c.num_filters * c.window()],
            conv_b: vec![0.0; c.num_filters],
            hidden_w: vec![0.0; c.hidden_dim * c.num_filters],
            hidden_b: vec![0.0; c.hidden_dim],
            out_w: vec![0.0; c.hidden_dim],
            out_b: vec![0.0],
        }
    }

    /// Glorot-uniform weights and zero biases.
    pub fn glorot(c: &ModelConfig, rng: &mut impl Rng) -> Self {
        let mut p = Params::zeros(c);
        let mut fill = |w: &mut [f64], fan_in: usize, fan_out: usize| {
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for x in w {
                *x = rng.random_range(-a..a);
            }
        };
        fill(&mut p.conv_w, c.window(), c.num_filters * c.filter_width);
        fill(&mut p.hidden_w, c.num_filters, c.hidden_dim);
        fill(&mut p.out_w, c.hidden_dim, 1);
        p
    }

    pub fn tensors(&self) -> [&[f64]; 6] {
        [&self.conv_w, &self.conv_b, &self.hidden_w, &self.hidden_b, &self.out_w, &self.out_b]
    }

    pub fn tensors_mut(&mut self) -> [&mut Vec<f64>; 6] {
        [
            &mut self.conv_w,
            &mut self.conv_b,
            &mut self.hidden_w,
            &mut self.hidden_b,
            &mut self.out_w,
            &mut self.out_b,
        ]
    }

    fn add_assign(&mut self, other: &Params) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|x| x.is_finite()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoherenceModel {
    pub config: ModelConfig,
    /// Row `i` holds the vector of vocabulary id `i`; row 0 is padding.
    pub embeddings: EmbeddingMatrix,
    pub params: Params,
}

/// Gradients with the shapes of [`Params`], plus embedding rows when they train.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub params: Params,
    /// Flat `rows x embed_dim`, empty when embeddings are frozen.
    pub embeddings: Vec<f64>,
}

impl Gradients {
    fn zeros(m: &CoherenceModel) -> Self {
        Gradients {
            params: Params::zeros(&m.config),
            embeddings: if m.config.train_embeddings {
                vec![0.0; m.embeddings.as_slice().len()]
            } else {
                Vec::new()
            },
        }
    }

    fn add_assign(&mut self, other: &Gradients) {
        self.params.add_assign(&other.params);
        for (x, y) in self.embeddings.iter_mut().zip(&other.embeddings) {
            *x += y;
        }
    }
}

/// Dropout behaviour of a pass.
pub enum Mode<'a> {
    Infer,
    Train(&'a mut ChaCha8Rng),
}

/// Right-pads with the pad id or truncates to `len`.
pub fn encode(sequence: &[u32], len: usize) -> Vec<u32> {
    let mut out: Vec<u32> = sequence.iter().take(len).copied().collect();
    out.resize(len, PAD_ID);
    out
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy of a logit against a 0/1 target.
pub fn bce_with_logit(z: f64, y: f64) -> f64 {
    z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()
}

/// Binary cross-entropy of a probability, clamped to [1e-12, 1 - 1e-12].
pub fn bce(score: f64, y: f64) -> f64 {
    let s = score.clamp(1e-12, 1.0 - 1e-12);
    -(y * s.ln() + (1.0 - y) * (1.0 - s).ln())
}

/// Intermediate values of one sample, kept for the backward pass.
struct Trace {
    ids: Vec<u32>,
    /// `max_seq_len x embed_dim` after dropout.
    x: Vec<f64>,
    /// Dropout scale per element of `x`; empty in infer mode.
    x_mask: Vec<f64>,
    argmax: Vec<usize>,
    pre_pool: Vec<f64>,
    pooled: Vec<f64>,
    hidden: Vec<f64>,
    h_mask: Vec<f64>,
    logit: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn dropout_mask(n: usize, rate: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let scale = 1.0 / (1.0 - rate);
    (0..n)
        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { scale })
        .collect()
}

impl CoherenceModel {
    pub fn new(config: ModelConfig, embeddings: EmbeddingMatrix) -> Result<Self> {
        config.validate()?;
        if embeddings.dim() != config.embed_dim {
            return Err(Error::Dimension {
                expected: config.embed_dim,
                found: embeddings.dim(),
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let params = Params::glorot(&config, &mut rng);
        Ok(CoherenceModel {
            config,
            embeddings,
            params,
        })
    }

    fn check_ids(&self, ids: &[u32]) -> Result<()> {
        let rows = self.embeddings.rows() as u32;
        match ids.iter().find(|&&id| id >= rows) {
            Some(id) => Err(Error::Validation(format!(
                "id {id} is outside the embedding table of {rows} rows"
            ))),
            None => Ok(()),
        }
    }

    fn trace(&self, sequence: &[u32], mode: Mode<'_>) -> Trace {
        let c = &self.config;
        let (d, f_n, h_n, win) = (c.embed_dim, c.num_filters, c.hidden_dim, c.window());
        let ids = encode(sequence, c.max_seq_len);
        let real = sequence.len().min(c.max_seq_len);
        let mut x = vec![0.0; c.max_seq_len * d];
        for (t, &id) in ids.iter().enumerate().take(real) {
            x[t * d..(t + 1) * d].copy_from_slice(self.embeddings.row(id as usize));
        }
        let (x_mask, h_mask_rng) = match mode {
            Mode::Infer => (Vec::new(), None),
            Mode::Train(rng) => {
                let m = if c.dropout_rate > 0.0 {
                    let m = dropout_mask(x.len(), c.dropout_rate, rng);
                    for (v, s) in x.iter_mut().zip(&m) {
                        *v *= s;
                    }
                    m
                } else {
                    Vec::new()
                };
                (m, Some(rng))
            }
        };

        let positions = c.positions();
        let mut pre_pool = vec![f64::NEG_INFINITY; f_n];
        let mut argmax = vec![0usize; f_n];
        for p in 0..positions {
            let start = p * c.stride;
            if start >= real {
                // windows of padding only contribute their bias
                for f in 0..f_n {
                    if self.params.conv_b[f] > pre_pool[f] {
                        pre_pool[f] = self.params.conv_b[f];
                        argmax[f] = p;
                    }
                }
                break;
            }
            let window = &x[start * d..start * d + win];
            for f in 0..f_n {
                let z = self.params.conv_b[f] + dot(&self.params.conv_w[f * win..(f + 1) * win], window);
                if z > pre_pool[f] {
                    pre_pool[f] = z;
                    argmax[f] = p;
                }
            }
        }
        let pooled: Vec<f64> = pre_pool.iter().map(|z| z.max(0.0)).collect();
        let mut hidden: Vec<f64> = (0..h_n)
            .map(|j| {
                let z = self.params.hidden_b[j] + dot(&self.params.hidden_w[j * f_n..(j + 1) * f_n], &pooled);
                z.max(0.0)
            })
            .collect();
        let h_mask = match h_mask_rng {
            Some(rng) if c.dropout_rate > 0.0 => {
                let m = dropout_mask(h_n, c.dropout_rate, rng);
                for (v, s) in hidden.iter_mut().zip(&m) {
                    *v *= s;
                }
                m
            }
            _ => Vec::new(),
        };
        let logit = self.params.out_b[0] + dot(&self.params.out_w, &hidden);
        Trace {
            ids,
            x,
            x_mask,
            argmax,
            pre_pool,
            pooled,
            hidden,
            h_mask,
            logit,
        }
    }

    /// Accumulates the gradient of `dlogit * logit` into `g`.
    fn backward(&self, t: &Trace, dlogit: f64, g: &mut Gradients) {
        let c = &self.config;
        let (d, f_n, h_n, win) = (c.embed_dim, c.num_filters, c.hidden_dim, c.window());
        let p = &self.params;
        g.params.out_b[0] += dlogit;
        let mut dpooled = vec![0.0; f_n];
        for j in 0..h_n {
            g.params.out_w[j] += dlogit * t.hidden[j];
            // hidden[j] > 0 exactly when the unit was active and kept
            if t.hidden[j] <= 0.0 {
                continue;
            }
            let scale = if t.h_mask.is_empty() { 1.0 } else { t.h_mask[j] };
            let dz = dlogit * p.out_w[j] * scale;
            g.params.hidden_b[j] += dz;
            let row = &p.hidden_w[j * f_n..(j + 1) * f_n];
            let grow = &mut g.params.hidden_w[j * f_n..(j + 1) * f_n];
            for (f, (gw, dp)) in grow.iter_mut().zip(dpooled.iter_mut()).enumerate() {
                *gw += dz * t.pooled[f];
                *dp += dz * row[f];
            }
        }
        for (f, &dz) in dpooled.iter().enumerate() {
            if t.pre_pool[f] <= 0.0 || dz == 0.0 {
                continue;
            }
            g.params.conv_b[f] += dz;
            let start = t.argmax[f] * c.stride * d;
            let window = &t.x[start..start + win];
            let gw = &mut g.params.conv_w[f * win..(f + 1) * win];
            for (gk, xk) in gw.iter_mut().zip(window) {
                *gk += dz * xk;
            }
            if c.train_embeddings {
                let w = &p.conv_w[f * win..(f + 1) * win];
                for (k, wk) in w.iter().enumerate() {
                    let pos = start + k;
                    let id = t.ids[pos / d] as usize;
                    if id == PAD_ID as usize {
                        continue;
                    }
                    let scale = if t.x_mask.is_empty() { 1.0 } else { t.x_mask[pos] };
                    g.embeddings[id * d + pos % d] += dz * wk * scale;
                }
            }
        }
    }

    /// Coherence logits of a batch.
    pub fn logits(&self, batch: &[Vec<u32>]) -> Result<Vec<f64>> {
        for s in batch {
            self.check_ids(s)?;
        }
        Ok(batch
            .par_iter()
            .map(|s| self.trace(s, Mode::Infer).logit)
            .collect())
    }

    /// Scores in (0, 1); `Train` mode applies dropout with masks drawn from `rng`.
    pub fn forward(&self, batch: &[Vec<u32>], mode: Mode<'_>) -> Result<Vec<f64>> {
        if batch.is_empty() {
            return Err(Error::Validation("empty batch".into()));
        }
        match mode {
            Mode::Infer => Ok(self.logits(batch)?.into_iter().map(sigmoid).collect()),
            Mode::Train(rng) => {
                for s in batch {
                    self.check_ids(s)?;
                }
                Ok(batch
                    .iter()
                    .map(|s| sigmoid(self.trace(s, Mode::Train(rng)).logit))
                    .collect())
            }
        }
    }

    /// Mean binary cross-entropy of a batch and its gradient.
    ///
    /// With `dropout_seed` set, sample `i` draws its dropout masks from
    /// stream `stream_base + i` of that seed; otherwise dropout is off.
    /// Samples are processed in fixed-size chunks whose partial sums are
    /// added in order, so the result does not depend on the thread count.
    pub fn loss_and_gradients(
        &self,
        batch: &[Vec<u32>],
        labels: &[f64],
        dropout_seed: Option<(u64, u64)>,
    ) -> Result<(f64, Gradients)> {
        if batch.is_empty() || batch.len() != labels.len() {
            return Err(Error::Validation(format!(
                "batch of {} sequences with {} labels",
                batch.len(),
                labels.len()
            )));
        }
        for s in batch {
            self.check_ids(s)?;
        }
        const CHUNK: usize = 8;
        let n = batch.len() as f64;
        let partials: Vec<(f64, Gradients)> = batch
            .par_chunks(CHUNK)
            .zip(labels.par_chunks(CHUNK))
            .enumerate()
            .map(|(ci, (seqs, ys))| {
                let mut g = Gradients::zeros(self);
                let mut loss = 0.0;
                for (k, (s, &y)) in seqs.iter().zip(ys).enumerate() {
                    let i = (ci * CHUNK + k) as u64;
                    let trace = match dropout_seed {
                        Some((seed, base)) => {
                            let mut rng = ChaCha8Rng::seed_from_u64(seed);
                            rng.set_stream(base + i);
                            self.trace(s, Mode::Train(&mut rng))
                        }
                        None => self.trace(s, Mode::Infer),
                    };
                    loss += bce_with_logit(trace.logit, y);
                    self.backward(&trace, (sigmoid(trace.logit) - y) / n, &mut g);
                }
                (loss, g)
            })
            .collect();
        let mut total = Gradients::zeros(self);
        let mut loss = 0.0;
        for (l, g) in &partials {
            loss += l;
            total.add_assign(g);
        }
        Ok((loss / n, total))
    }

    /// Coherence score of one sequence.
    pub fn score(&self, sequence: &[u32]) -> Result<f64> {
        self.check_ids(sequence)?;
        Ok(sigmoid(self.trace(sequence, Mode::Infer).logit))
    }

    pub fn scores(&self, batch: &[Vec<u32>]) -> Result<Vec<f64>> {
        Ok(self.logits(batch)?.into_iter().map(sigmoid).collect())
    }

    /// Embedding output and post-ReLU convolution output of one sequence.
    pub fn layer_activations(&self, sequence: &[u32]) -> Result<Activations> {
        self.check_ids(sequence)?;
        let c = &self.config;
        let (d, f_n, win) = (c.embed_dim, c.num_filters, c.window());
        let t = self.trace(sequence, Mode::Infer);
        let embedding: Vec<Vec<f64>> = t.x.chunks(d).map(<[f64]>::to_vec).collect();
        let conv = (0..c.positions())
            .map(|p| {
                let start = p * c.stride * d;
                let window = &t.x[start..start + win];
                (0..f_n)
                    .map(|f| {
                        let z = self.params.conv_b[f] + dot(&self.params.conv_w[f * win..(f + 1) * win], window);
                        z.max(0.0)
                    })
                    .collect()
            })
            .collect();
        Ok(Activations {
            tokens: t.ids,
            embedding,
            conv,
        })
    }
}

/// Per-layer activations for heatmaps.
#[derive(Debug, Clone, PartialEq)]
pub struct Activations {
    /// Padded input ids.
    pub tokens: Vec<u32>,
    /// `max_seq_len x embed_dim`
    pub embedding: Vec<Vec<f64>>,
    /// `positions x num_filters`
    pub conv: Vec<Vec<f64>>,
}
