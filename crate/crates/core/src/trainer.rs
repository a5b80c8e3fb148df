//! Mini-batch training with Adam, global-norm clipping and early stopping on
//! validation AUC.
//!
//! Examples are grouped by history length so every micro-batch unrolls the
//! same number of steps. Per-example gradients are computed in parallel and
//! summed in batch order, which keeps runs bit-reproducible for a given seed.
//! Epoch `e` shuffles with stream `e` of a ChaCha generator keyed by the seed;
//! stream 0 initialises the weights.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoder::{DatasetSplit, TrainExample};
use crate::error::{Error, Result};
use crate::metrics::{auc, ScoredExample};
use crate::nnet::{backward_into, bce_loss, bidi_forward, predict, Dims, ModelParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub early_stop_patience: usize,
    pub grad_clip_norm: f64,
    pub seed: u64,
    pub hidden: usize,
    pub combo: usize,
    pub merge: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 16,
            max_epochs: 200,
            early_stop_patience: 20,
            grad_clip_norm: 5.0,
            seed: 0,
            hidden: Dims::DEFAULT_HIDDEN,
            combo: Dims::DEFAULT_COMBO,
            merge: Dims::DEFAULT_MERGE,
        }
    }
}

impl TrainConfig {
    /// Narrow layers and a faster rate for corpora of a few hundred students.
    /// At the default widths the history branch memorises individual
    /// transcripts within a couple of epochs, before the query branch has
    /// learned anything about course difficulty.
    pub fn compact() -> Self {
        TrainConfig {
            learning_rate: 3e-3,
            hidden: 4,
            combo: 8,
            merge: 8,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("learning_rate", self.learning_rate),
            ("eps", self.eps),
            ("grad_clip_norm", self.grad_clip_norm),
        ];
        if let Some((name, v)) = positive.iter().find(|(_, v)| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::invalid(format!("{name} must be positive, got {v}")));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::invalid(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::invalid("batch size and epoch count must be positive"));
        }
        if self.early_stop_patience >= self.max_epochs {
            return Err(Error::invalid(format!(
                "patience {} must be below max epochs {}",
                self.early_stop_patience, self.max_epochs
            )));
        }
        if self.hidden == 0 || self.combo == 0 || self.merge == 0 {
            return Err(Error::invalid("layer widths must be positive"));
        }
        Ok(())
    }

    pub fn dims(&self, catalog: usize) -> Dims {
        Dims {
            catalog,
            hidden: self.hidden,
            combo: self.combo,
            merge: self.merge,
        }
    }
}

/// Scales `grads` so their global L2 norm is at most `max_norm`. Returns the
/// norm before clipping.
pub fn clip_gradients(grads: &mut ModelParams, max_norm: f64) -> Result<f64> {
    if !(max_norm > 0.0) {
        return Err(Error::invalid(format!("clip norm must be positive, got {max_norm}")));
    }
    let norm = grads.norm();
    if !norm.is_finite() {
        return Err(Error::NonFinite("gradient norm".into()));
    }
    if norm > max_norm {
        grads.scale(max_norm / norm);
    }
    Ok(norm)
}

/// First and second moment estimates plus the step count.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: ModelParams,
    pub v: ModelParams,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        AdamState {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
        }
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(params: &mut ModelParams, grads: &ModelParams, state: &mut AdamState, config: &TrainConfig) -> Result<()> {
    if grads.dims != params.dims || state.m.dims != params.dims || state.v.dims != params.dims {
        return Err(Error::dim("Adam state, gradients and parameters differ in shape"));
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (config.beta1, config.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let lr = config.learning_rate;
    let eps = config.eps;

    let tensors = params
        .tensors_mut()
        .into_iter()
        .zip(grads.tensors())
        .zip(state.m.tensors_mut().into_iter().zip(state.v.tensors_mut()));
    for (((_, p), (_, g)), ((_, m), (_, v))) in tensors {
        let it = p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()));
        for ((p, &g), (m, v)) in it {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    /// `None` when the training set holds a single class.
    pub train_auc: Option<f64>,
    pub validation_auc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were returned.
    pub best_epoch: usize,
    pub stopped_early: bool,
    /// Where the caller stored the returned parameters, if anywhere.
    pub checkpoint: Option<String>,
}

impl TrainReport {
    pub fn best(&self) -> &EpochRecord {
        &self.epochs[self.best_epoch - 1]
    }

    /// One JSON object per epoch, newline separated.
    pub fn to_json_lines(&self) -> Result<String> {
        let mut out = String::new();
        for e in &self.epochs {
            out.push_str(&serde_json::to_string(e)?);
            out.push('\n');
        }
        Ok(out)
    }
}

/// Mean loss and AUC of `params` over a set of examples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub auc: Option<f64>,
}

pub fn predict_all(params: &ModelParams, examples: &[TrainExample]) -> Result<Vec<f64>> {
    examples
        .par_iter()
        .map(|e| predict(params, &e.history, &e.query))
        .collect()
}

pub fn evaluate(params: &ModelParams, examples: &[TrainExample]) -> Result<Evaluation> {
    if examples.is_empty() {
        return Err(Error::invalid("cannot evaluate on an empty set"));
    }
    let probs = predict_all(params, examples)?;
    let loss = probs
        .iter()
        .zip(examples)
        .map(|(&p, e)| bce_loss(p, e.label))
        .sum::<f64>()
        / examples.len() as f64;
    let scored: Vec<ScoredExample> = probs
        .iter()
        .zip(examples)
        .map(|(&p, e)| ScoredExample::new(p, e.label))
        .collect();
    let has_both = scored.iter().any(|s| s.label) && scored.iter().any(|s| !s.label);
    Ok(Evaluation {
        loss,
        auc: if has_both { Some(auc(&scored)?) } else { None },
    })
}

/// Shuffled micro-batches of indices into `examples`, each of one history length.
pub fn make_batches(examples: &[TrainExample], batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..examples.len()).collect();
    order.shuffle(rng);
    let mut by_len: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in order {
        by_len.entry(examples[i].history.len()).or_default().push(i);
    }
    let mut batches: Vec<Vec<usize>> = by_len
        .into_values()
        .flat_map(|group| group.chunks(batch_size).map(<[usize]>::to_vec).collect::<Vec<_>>())
        .collect();
    batches.shuffle(rng);
    batches
}

/// Mean loss and mean gradient over a batch.
pub fn batch_gradient(params: &ModelParams, batch: &[&TrainExample]) -> Result<(f64, ModelParams)> {
    let per_example: Vec<(f64, ModelParams)> = batch
        .par_iter()
        .map(|e| {
            let (p, trace) = bidi_forward(params, &e.history, &e.query)?;
            let mut g = params.zeros_like();
            backward_into(params, &trace, e.label, &mut g)?;
            Ok((bce_loss(p, e.label), g))
        })
        .collect::<Result<_>>()?;
    let mut total = params.zeros_like();
    let mut loss = 0.0;
    for (l, g) in &per_example {
        loss += l;
        total.axpy(1.0, g);
    }
    let n = batch.len() as f64;
    total.scale(1.0 / n);
    Ok((loss / n, total))
}

fn check_catalog(examples: &[TrainExample], catalog: usize) -> Result<()> {
    let bad = examples.iter().find(|e| {
        e.history.is_empty() || e.query.dim() != catalog || e.history.iter().any(|t| t.catalog_size() != catalog)
    });
    match bad {
        Some(e) => Err(Error::invalid(format!(
            "example for student {} does not match a catalog of {catalog} courses",
            e.student_id
        ))),
        None => Ok(()),
    }
}

/// Trains from a fresh initialisation and returns the parameters of the
/// epoch with the best validation AUC.
pub fn train(split: &DatasetSplit, config: &TrainConfig) -> Result<(ModelParams, TrainReport)> {
    config.validate()?;
    let first = split
        .train
        .first()
        .ok_or_else(|| Error::invalid("training set is empty"))?;
    if split.validation.is_empty() {
        return Err(Error::invalid("validation set is empty"));
    }
    let catalog = first.query.dim();
    check_catalog(&split.train, catalog)?;
    check_catalog(&split.validation, catalog)?;
    let val_labels = split.validation.iter().map(|e| e.label);
    if val_labels.clone().all(|l| l) || val_labels.clone().all(|l| !l) {
        return Err(Error::invalid("validation set needs both successes and failures"));
    }

    let mut params = ModelParams::init(config.dims(catalog), config.seed)?;
    let mut adam = AdamState::new(&params);
    let mut best: Option<(ModelParams, usize, f64)> = None;
    let mut epochs = Vec::new();
    let mut stale = 0;
    let mut stopped_early = false;

    for epoch in 1..=config.max_epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(epoch as u64);
        for (b, batch) in make_batches(&split.train, config.batch_size, &mut rng).iter().enumerate() {
            let diverged = |message: String| Error::Diverged {
                epoch,
                batch: b,
                message,
            };
            let examples: Vec<&TrainExample> = batch.iter().map(|&i| &split.train[i]).collect();
            let (loss, mut grads) = batch_gradient(&params, &examples).map_err(|e| diverged(e.to_string()))?;
            if !loss.is_finite() {
                return Err(diverged(format!("loss {loss}")));
            }
            clip_gradients(&mut grads, config.grad_clip_norm).map_err(|e| diverged(e.to_string()))?;
            adam_step(&mut params, &grads, &mut adam, config)?;
            if !params.is_finite() {
                return Err(diverged("parameters left the finite range".into()));
            }
        }

        let on_train = evaluate(&params, &split.train).map_err(|e| Error::Diverged {
            epoch,
            batch: 0,
            message: e.to_string(),
        })?;
        let validation_auc = evaluate(&params, &split.validation)?
            .auc
            .expect("validation holds both classes");
        epochs.push(EpochRecord {
            epoch,
            train_loss: on_train.loss,
            train_auc: on_train.auc,
            validation_auc,
        });

        if best.as_ref().is_none_or(|(_, _, a)| validation_auc > *a) {
            best = Some((params.clone(), epoch, validation_auc));
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.early_stop_patience {
                stopped_early = true;
                break;
            }
        }
    }

    let (params, best_epoch, _) = best.expect("at least one epoch ran");
    Ok((
        params,
        TrainReport {
            epochs,
            best_epoch,
            stopped_early,
            checkpoint: None,
        },
    ))
}
