//! Adam training with validation early stopping, and evaluation.

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{CoherenceModel, Gradients, Params};
use crate::error::{Error, Result};
use crate::sampler::{Label, LabeledSample};

/// Stops once `patience` consecutive epochs fail to strictly improve the best score.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<f64>,
    best_epoch: usize,
    stale: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StopDecision {
    pub improved: bool,
    pub stop: bool,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: None,
            best_epoch: 0,
            stale: 0,
        }
    }

    /// Records the score of `epoch` (1-based).
    pub fn observe(&mut self, epoch: usize, score: f64) -> StopDecision {
        let improved = self.best.is_none_or(|b| score > b);
        if improved {
            self.best = Some(score);
            self.best_epoch = epoch;
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        StopDecision {
            improved,
            stop: self.stale >= self.patience,
        }
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }
}

#[derive(Debug, Clone)]
struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: i32,
}

impl AdamState {
    fn new(shapes: &[usize]) -> Self {
        AdamState {
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            step: 0,
        }
    }
}

fn adam_update(
    model: &mut CoherenceModel,
    g: &Gradients,
    state: &mut AdamState,
) {
    let c = model.config.clone();
    state.step += 1;
    let bc1 = 1.0 - c.beta1.powi(state.step);
    let bc2 = 1.0 - c.beta2.powi(state.step);
    let apply = |w: &mut [f64], grad: &[f64], m: &mut [f64], v: &mut [f64]| {
        for i in 0..w.len() {
            m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * grad[i];
            v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * grad[i] * grad[i];
            let mhat = m[i] / bc1;
            let vhat = v[i] / bc2;
            w[i] -= c.learning_rate * mhat / (vhat.sqrt() + c.epsilon);
        }
    };
    let (ms, vs) = (&mut state.m, &mut state.v);
    for (k, (w, grad)) in model
        .params
        .tensors_mut()
        .into_iter()
        .zip(g.params.tensors())
        .enumerate()
    {
        apply(w, grad, &mut ms[k], &mut vs[k]);
    }
    if c.train_embeddings {
        let d = c.embed_dim;
        // the pad row is excluded so it stays zero
        apply(
            model.embeddings.vectors_mut(),
            &g.embeddings[d..],
            &mut ms[6],
            &mut vs[6],
        );
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    /// Number of epochs run.
    pub stopped_epoch: usize,
    /// Epoch whose parameters were kept.
    pub best_epoch: usize,
    pub best_validation_accuracy: f64,
}

fn split_xy(samples: &[LabeledSample]) -> (Vec<Vec<u32>>, Vec<f64>) {
    samples
        .iter()
        .map(|s| (s.sequence.clone(), s.label.target()))
        .unzip()
}

/// Fraction of samples classified correctly at threshold 0.5 (strictly above is coherent).
pub fn accuracy(model: &CoherenceModel, samples: &[LabeledSample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Validation("cannot measure accuracy on an empty split".into()));
    }
    let (xs, ys) = split_xy(samples);
    let scores = model.scores(&xs)?;
    let correct = scores
        .iter()
        .zip(&ys)
        .filter(|(s, y)| (**s > 0.5) == (**y == 1.0))
        .count();
    Ok(correct as f64 / samples.len() as f64)
}

/// Mini-batch Adam over `train`, keeping the parameters of the best validation epoch.
pub fn train(
    model: &mut CoherenceModel,
    train: &[LabeledSample],
    validation: &[LabeledSample],
) -> Result<TrainReport> {
    if train.is_empty() || validation.is_empty() {
        return Err(Error::Validation("training and validation splits must be non-empty".into()));
    }
    let c = model.config.clone();
    c.validate()?;
    let mut shapes: Vec<usize> = model.params.tensors().iter().map(|t| t.len()).collect();
    if c.train_embeddings {
        shapes.push(model.embeddings.vectors_mut().len());
    }
    let mut adam = AdamState::new(&shapes);
    let mut stopper = EarlyStopping::new(c.early_stop_patience);
    let mut best: Option<(Params, Option<crate::embedding::EmbeddingMatrix>)> = None;
    let mut epochs = Vec::new();
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=c.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
        rng.set_stream(epoch as u64);
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for (b, chunk) in order.chunks(c.batch_size).enumerate() {
            let xs: Vec<Vec<u32>> = chunk.iter().map(|&i| train[i].sequence.clone()).collect();
            let ys: Vec<f64> = chunk.iter().map(|&i| train[i].label.target()).collect();
            let stream_base = ((epoch as u64) << 40) | ((b * c.batch_size) as u64);
            let dropout = (c.dropout_rate > 0.0).then_some((c.seed ^ 0x5eed_d20f, stream_base));
            let (loss, g) = model.loss_and_gradients(&xs, &ys, dropout)?;
            loss_sum += loss * chunk.len() as f64;
            adam_update(model, &g, &mut adam);
        }
        let train_loss = loss_sum / train.len() as f64;
        let validation_accuracy = accuracy(model, validation)?;
        info!("epoch {epoch}: loss {train_loss:.5}, validation accuracy {validation_accuracy:.4}");
        epochs.push(EpochStats {
            epoch,
            train_loss,
            validation_accuracy,
        });
        let decision = stopper.observe(epoch, validation_accuracy);
        if decision.improved {
            let emb = c.train_embeddings.then(|| model.embeddings.clone());
            best = Some((model.params.clone(), emb));
        }
        if decision.stop {
            break;
        }
    }
    if let Some((params, emb)) = best {
        model.params = params;
        if let Some(e) = emb {
            model.embeddings = e;
        }
    }
    Ok(TrainReport {
        stopped_epoch: epochs.len(),
        best_epoch: stopper.best_epoch(),
        best_validation_accuracy: stopper.best().unwrap_or(0.0),
        epochs,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    /// Accuracy on coherent samples.
    pub tpos: f64,
    /// Accuracy on adversarial samples.
    pub tneg: f64,
    /// `(tpos + tneg) / 2`
    pub avg: f64,
    pub positives: usize,
    pub negatives: usize,
}

pub fn evaluate(model: &CoherenceModel, test: &[LabeledSample]) -> Result<Evaluation> {
    let (pos, neg): (Vec<LabeledSample>, Vec<LabeledSample>) =
        test.iter().cloned().partition(|s| s.label == Label::Coherent);
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::Validation(
            "evaluation needs both coherent and adversarial samples".into(),
        ));
    }
    let tpos = accuracy(model, &pos)?;
    let tneg = accuracy(model, &neg)?;
    Ok(Evaluation {
        tpos,
        tneg,
        avg: (tpos + tneg) / 2.0,
        positives: pos.len(),
        negatives: neg.len(),
    })
}
