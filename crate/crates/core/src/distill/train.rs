//! Deterministic single-writer training loop.
//!
//! A batch is a set of claims; the batch loss is the mean of per-claim
//! combined losses. Gradients accumulate over the batch and one Adam step
//! updates the parameters. Runs are bit-reproducible given (seed, config,
//! data).

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{combined_loss_on, DistillError, LossConfig, TeacherLogitCache};
use crate::corpus::CandidateSet;
use crate::metrics::{evaluate, RankingReport, ScoreMap};
use crate::models::{Model, ModelParams};
use crate::tensor::Tape;

/// Optimizer and schedule settings. `data_fraction` subsamples the training
/// claims (dev and test are never touched), deterministically by seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub data_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            epochs: 3,
            batch_size: 8,
            seed: 0,
            data_fraction: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), DistillError> {
        if !self.lr.is_finite() || self.lr < 0.0 {
            return Err(DistillError::Config { detail: format!("lr {} must be >= 0", self.lr) });
        }
        if self.batch_size == 0 {
            return Err(DistillError::Config { detail: "batch_size must be positive".into() });
        }
        if !(self.data_fraction > 0.0 && self.data_fraction <= 1.0) {
            return Err(DistillError::Config {
                detail: format!("data_fraction {} outside (0,1]", self.data_fraction),
            });
        }
        Ok(())
    }
}

/// Adam with bias correction, one moment pair per parameter section.
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    step_count: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(cfg: &TrainConfig, params: &ModelParams) -> Self {
        Adam {
            lr: cfg.lr,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            epsilon: cfg.epsilon,
            step_count: 0,
            m: params.sections.iter().map(|s| vec![0.0; s.numel()]).collect(),
            v: params.sections.iter().map(|s| vec![0.0; s.numel()]).collect(),
        }
    }

    pub fn step(&mut self, params: &mut ModelParams, grads: &[Vec<f64>]) {
        self.step_count += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step_count as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step_count as i32);
        for (slot, section) in params.sections.iter_mut().enumerate() {
            let (m, v) = (&mut self.m[slot], &mut self.v[slot]);
            for (i, g) in grads[slot].iter().enumerate() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                section.values[i] -= self.lr * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
    }
}

/// Dataset splits plus the token lookups the models need.
pub struct TrainData<'a> {
    pub train: &'a [CandidateSet],
    pub dev: &'a [CandidateSet],
    pub claim_tokens: &'a HashMap<String, Vec<usize>>,
    pub doc_tokens: &'a HashMap<String, Vec<usize>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev: Option<RankingReport>,
}

pub struct TrainOutcome {
    /// Parameters of the best dev epoch (final parameters when no dev set).
    pub model: Model,
    pub best_epoch: usize,
    pub history: Vec<EpochReport>,
}

/// Forward-only candidate scores for a batch of claims, fanned out across
/// threads. Values are identical to sequential per-claim scoring.
pub fn score_sets(
    model: &Model,
    sets: &[CandidateSet],
    claim_tokens: &HashMap<String, Vec<usize>>,
    doc_tokens: &HashMap<String, Vec<usize>>,
) -> Result<ScoreMap, DistillError> {
    let scored: Result<Vec<(String, Vec<f64>)>, DistillError> = sets
        .par_iter()
        .map(|set| {
            let claim = claim_tokens.get(&set.claim_id).ok_or_else(|| {
                DistillError::Alignment { detail: format!("claim {} has no tokens", set.claim_id) }
            })?;
            let docs: Vec<&[usize]> = set
                .candidates
                .iter()
                .map(|id| {
                    doc_tokens.get(id).map(Vec::as_slice).ok_or_else(|| {
                        DistillError::Alignment {
                            detail: format!("candidate document {id} not in corpus"),
                        }
                    })
                })
                .collect::<Result<_, _>>()?;
            Ok((set.claim_id.clone(), model.score_candidates(claim, &docs)?))
        })
        .collect();
    Ok(scored?.into_iter().collect())
}

/// Trains the model, retaining the checkpoint of the best dev epoch (by
/// micro recall at 3, ties to the earlier epoch).
pub fn train(
    mut model: Model,
    data: &TrainData<'_>,
    loss_cfg: &LossConfig,
    train_cfg: &TrainConfig,
    cache: Option<&TeacherLogitCache>,
) -> Result<TrainOutcome, DistillError> {
    loss_cfg.validate()?;
    train_cfg.validate()?;
    let use_cache = loss_cfg.alpha > 0.0;
    if use_cache {
        let cache = cache.ok_or_else(|| DistillError::Cache {
            detail: format!("alpha {} > 0 requires a teacher logit cache", loss_cfg.alpha),
        })?;
        cache.check_alignment(data.train)?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(train_cfg.seed);
    // Subsample training claims; dev is untouched.
    let mut selected: Vec<usize> = (0..data.train.len()).collect();
    selected.shuffle(&mut rng);
    let keep = ((train_cfg.data_fraction * data.train.len() as f64).round() as usize)
        .clamp(1.min(data.train.len()), data.train.len());
    selected.truncate(keep);

    let mut adam = Adam::new(train_cfg, model.params());
    let mut history = Vec::with_capacity(train_cfg.epochs);
    let mut best: Option<(usize, f64, ModelParams)> = None;

    for epoch in 0..train_cfg.epochs {
        selected.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in selected.chunks(train_cfg.batch_size) {
            let mut grads: Vec<Vec<f64>> =
                model.params().sections.iter().map(|s| vec![0.0; s.numel()]).collect();
            let scale = 1.0 / chunk.len() as f64;
            for &idx in chunk {
                let set = &data.train[idx];
                let claim = data.claim_tokens.get(&set.claim_id).ok_or_else(|| {
                    DistillError::Alignment {
                        detail: format!("claim {} has no tokens", set.claim_id),
                    }
                })?;
                let docs: Vec<&[usize]> = set
                    .candidates
                    .iter()
                    .map(|id| {
                        data.doc_tokens.get(id).map(Vec::as_slice).ok_or_else(|| {
                            DistillError::Alignment {
                                detail: format!("candidate document {id} not in corpus"),
                            }
                        })
                    })
                    .collect::<Result<_, _>>()?;
                let teacher = if use_cache {
                    Some(cache.unwrap().get(&set.claim_id).unwrap())
                } else {
                    None
                };

                let mut tape = Tape::new();
                let binding = model.bind(&mut tape)?;
                let logit_ids = model.claim_logits_on(&mut tape, &binding, claim, &docs)?;
                let logits = tape.concat(&logit_ids, 0)?;
                let loss =
                    combined_loss_on(&mut tape, loss_cfg, &set.labels, teacher, logits)?;
                let loss_value = tape.value(loss)[0];
                if !loss_value.is_finite() {
                    return Err(DistillError::Divergence {
                        epoch,
                        checkpoint: Box::new(model.to_checkpoint()),
                    });
                }
                epoch_loss += loss_value;
                tape.backward(loss)?;
                for (slot, &pid) in binding.ids().iter().enumerate() {
                    let g = tape.grad(pid).unwrap();
                    for (acc, gi) in grads[slot].iter_mut().zip(g) {
                        *acc += gi * scale;
                    }
                }
            }
            adam.step(model.params_mut(), &grads);
        }

        let dev_report = if data.dev.is_empty() {
            None
        } else {
            let scores = score_sets(&model, data.dev, data.claim_tokens, data.doc_tokens)?;
            Some(evaluate(data.dev, &scores)?)
        };
        if let Some(report) = &dev_report {
            let better = match &best {
                None => true,
                Some((_, best_metric, _)) => report.recall_micro_3 > *best_metric,
            };
            if better {
                best = Some((epoch, report.recall_micro_3, model.params().clone()));
            }
        }
        history.push(EpochReport {
            epoch,
            train_loss: epoch_loss / selected.len().max(1) as f64,
            dev: dev_report,
        });
    }

    let (best_epoch, best_params) = match best {
        Some((epoch, _, params)) => (epoch, params),
        None => (train_cfg.epochs.saturating_sub(1), model.params().clone()),
    };
    *model.params_mut() = best_params;
    Ok(TrainOutcome { model, best_epoch, history })
}
