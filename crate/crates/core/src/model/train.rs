//! Adam training loop for the toy generator.

use log::info;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::forward::loss_and_grads;
use super::weights::Weights;
use super::ModelConfig;
use crate::error::{Error, Result};
use crate::tokenizer::TokenSeq;

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;
const LOG_EVERY: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainHyper {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
    /// Window length sampled from each training sequence; capped at `max_pos`.
    pub seq_len: usize,
}

impl Default for TrainHyper {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch: 8,
            lr: 3e-3,
            seed: 0,
            seq_len: 128,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub weights: Weights<f32>,
    /// `(step, batch loss)` every 100 steps plus the last step.
    pub losses: Vec<(usize, f64)>,
}

impl TrainOutcome {
    pub fn initial_loss(&self) -> Option<f64> {
        self.losses.first().map(|l| l.1)
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.losses.last().map(|l| l.1)
    }
}

struct Adam {
    m: Weights<f32>,
    v: Weights<f32>,
    t: i32,
}

impl Adam {
    fn new(config: ModelConfig) -> Self {
        Self {
            m: Weights::zeros(config),
            v: Weights::zeros(config),
            t: 0,
        }
    }

    fn step(&mut self, w: &mut Weights<f32>, g: &Weights<f32>, lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - BETA1.powi(self.t);
        let bc2 = 1.0 - BETA2.powi(self.t);
        let step = (lr / bc1) as f32;
        let (b1, b2) = (BETA1 as f32, BETA2 as f32);
        let inv_bc2 = (1.0 / bc2) as f32;
        for ((((_, mut w), (_, g)), (_, mut m)), (_, mut v)) in w
            .params_mut()
            .into_iter()
            .zip(g.params())
            .zip(self.m.params_mut())
            .zip(self.v.params_mut())
        {
            ndarray::Zip::from(&mut w)
                .and(&g)
                .and(&mut m)
                .and(&mut v)
                .for_each(|w, &g, m, v| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *w -= step * *m / ((*v * inv_bc2).sqrt() + ADAM_EPS as f32);
                });
        }
    }
}

/// Trains a fresh seeded model on random windows of `corpus`.
pub fn train_toy(corpus: &[TokenSeq], config: ModelConfig, hyper: TrainHyper) -> Result<TrainOutcome> {
    if corpus.is_empty() {
        return Err(Error::CorpusEmpty);
    }
    config.validate()?;
    let seq_len = hyper.seq_len.min(config.max_pos);
    if seq_len < 2 || hyper.batch == 0 {
        return Err(Error::InvalidConfig(
            "training needs batch >= 1 and seq_len >= 2".into(),
        ));
    }
    let usable: Vec<&[u32]> = corpus
        .iter()
        .map(|s| s.ids())
        .filter(|s| s.len() >= 2)
        .collect();
    if usable.is_empty() {
        return Err(Error::SequenceTooShort { len: 1 });
    }

    let mut weights = Weights::<f32>::init(config, hyper.seed)?;
    let mut adam = Adam::new(config);
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut losses = Vec::new();

    for step in 0..hyper.steps {
        let batch: Vec<&[u32]> = (0..hyper.batch)
            .map(|_| {
                let seq = usable[rng.random_range(0..usable.len())];
                if seq.len() <= seq_len {
                    seq
                } else {
                    let start = rng.random_range(0..=seq.len() - seq_len);
                    &seq[start..start + seq_len]
                }
            })
            .collect();
        let (loss, grads) = loss_and_grads(&weights, &batch)?;
        if !loss.is_finite() {
            return Err(Error::TrainingDiverged { step });
        }
        if step % LOG_EVERY == 0 || step + 1 == hyper.steps {
            info!("step {step}: loss {loss:.4}");
            losses.push((step, loss));
        }
        adam.step(&mut weights, &grads, hyper.lr);
        if !weights.is_finite() {
            return Err(Error::TrainingDiverged { step });
        }
    }
    Ok(TrainOutcome { weights, losses })
}
