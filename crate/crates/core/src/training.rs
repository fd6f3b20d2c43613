//! Minibatch training with early stopping on dev accuracy, and evaluation
//! with per-question-type buckets.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::QuestionType;
use crate::encodings::{ModelParams, PreparedInstance, RawInstance, Vocabulary};
use crate::error::{Error, Result};
use crate::gradients::{backward_prepared, Gradients};
use crate::model::{predict, Variant};
use crate::numerics::{rng_for, Mat};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    /// Plain stochastic gradient descent.
    #[default]
    Sgd,
    /// Heavy-ball momentum, coefficient 0.9.
    Momentum,
    /// Adam with `β1 = 0.9`, `β2 = 0.999`, `ε = 1e-8`.
    Adam,
}

impl std::str::FromStr for Optimizer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(Optimizer::Sgd),
            "momentum" => Ok(Optimizer::Momentum),
            "adam" => Ok(Optimizer::Adam),
            _ => Err(Error::Config(format!("unknown optimizer `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Epochs without a strict dev-accuracy improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    pub variant: Variant,
    pub optimizer: Optimizer,
    /// Rescale the joint gradient to at most this norm.
    pub clip: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.005,
            batch_size: 8,
            epochs: 50,
            patience: 10,
            seed: 0,
            variant: Variant::Hmmn,
            optimizer: Optimizer::Sgd,
            clip: None,
        }
    }
}

impl TrainConfig {
    /// `lr = 0` is accepted and leaves the parameters untouched.
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be >= 0, got {}",
                self.lr
            )));
        }
        if self.batch_size == 0 || self.epochs == 0 || self.patience == 0 {
            return Err(Error::Config(
                "batch size, epochs and patience must be >= 1".into(),
            ));
        }
        if let Some(c) = self.clip {
            if c.is_nan() || c <= 0.0 {
                return Err(Error::Config(format!("clip norm must be > 0, got {c}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bucket {
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean minibatch loss over the epoch; absent for the untrained epoch 0.
    pub train_loss: Option<f64>,
    pub dev_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub overall: f64,
    pub correct: usize,
    pub total: usize,
    /// Only question types that occur are listed.
    pub per_type: BTreeMap<QuestionType, Bucket>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub history: Vec<EpochRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub best_epoch: Option<usize>,
}

impl Metrics {
    fn from_outcomes(outcomes: &[(QuestionType, bool)]) -> Self {
        let mut per_type: BTreeMap<QuestionType, Bucket> = BTreeMap::new();
        for &(t, ok) in outcomes {
            let b = per_type.entry(t).or_insert(Bucket {
                correct: 0,
                total: 0,
                accuracy: 0.0,
            });
            b.total += 1;
            b.correct += usize::from(ok);
        }
        for b in per_type.values_mut() {
            b.accuracy = b.correct as f64 / b.total as f64;
        }
        let correct = outcomes.iter().filter(|(_, ok)| *ok).count();
        let total = outcomes.len();
        Metrics {
            overall: if total == 0 {
                0.0
            } else {
                correct as f64 / total as f64
            },
            correct,
            total,
            per_type,
            history: Vec::new(),
            best_epoch: None,
        }
    }

    /// Aligned plain-text table.
    pub fn to_table(&self) -> String {
        let mut out = format!(
            "{:<8} {:>8} {:>8} {:>9}\n",
            "type", "correct", "total", "accuracy"
        );
        for (t, b) in &self.per_type {
            out.push_str(&format!(
                "{:<8} {:>8} {:>8} {:>9.4}\n",
                t.as_str(),
                b.correct,
                b.total,
                b.accuracy
            ));
        }
        out.push_str(&format!(
            "{:<8} {:>8} {:>8} {:>9.4}\n",
            "overall", self.correct, self.total, self.overall
        ));
        out
    }
}

/// An instance prepared once and tagged with its question type.
pub struct Example {
    pub prepared: PreparedInstance,
    pub qtype: QuestionType,
}

pub fn prepare(instances: &[RawInstance], vocab: &Vocabulary, d_r: usize) -> Result<Vec<Example>> {
    instances
        .iter()
        .map(|raw| {
            Ok(Example {
                prepared: PreparedInstance::new(raw, vocab, d_r)?,
                qtype: QuestionType::of(&raw.question),
            })
        })
        .collect()
}

pub fn evaluate_examples(
    params: &ModelParams,
    examples: &[Example],
    vocab: &Vocabulary,
    variant: Variant,
) -> Result<Metrics> {
    let outcomes = examples
        .par_iter()
        .map(|ex| {
            let enc = ex.prepared.encode(vocab, params)?;
            let pred = predict(&enc, params, variant, false)?;
            Ok((ex.qtype, pred.argmax == ex.prepared.gold))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Metrics::from_outcomes(&outcomes))
}

/// Accuracy overall and per question type.
pub fn evaluate(
    params: &ModelParams,
    instances: &[RawInstance],
    vocab: &Vocabulary,
    variant: Variant,
) -> Result<Metrics> {
    if instances.is_empty() {
        return Err(Error::Config("cannot evaluate an empty dataset".into()));
    }
    let examples = prepare(instances, vocab, params.dims().d_r)?;
    evaluate_examples(params, &examples, vocab, variant)
}

struct OptimizerState {
    kind: Optimizer,
    step: i32,
    m1: Mat,
    m2: Mat,
    v1: Mat,
    v2: Mat,
}

impl OptimizerState {
    fn new(kind: Optimizer, params: &ModelParams) -> Self {
        let z1 = Mat::zeros(params.w1.rows(), params.w1.cols());
        let z2 = Mat::zeros(params.w2.rows(), params.w2.cols());
        OptimizerState {
            kind,
            step: 0,
            m1: z1.clone(),
            m2: z2.clone(),
            v1: z1,
            v2: z2,
        }
    }

    fn apply(&mut self, params: &mut ModelParams, g: &Gradients, lr: f64) {
        self.step += 1;
        match self.kind {
            Optimizer::Sgd => {
                params.w1.add_scaled(-lr, &g.dw1).expect("shapes");
                params.w2.add_scaled(-lr, &g.dw2).expect("shapes");
            }
            Optimizer::Momentum => {
                for (m, grad, w) in [
                    (&mut self.m1, &g.dw1, &mut params.w1),
                    (&mut self.m2, &g.dw2, &mut params.w2),
                ] {
                    m.scale(0.9);
                    m.add_scaled(1.0, grad).expect("shapes");
                    w.add_scaled(-lr, m).expect("shapes");
                }
            }
            Optimizer::Adam => {
                let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
                let c1 = 1.0 - b1.powi(self.step);
                let c2 = 1.0 - b2.powi(self.step);
                for (m, v, grad, w) in [
                    (&mut self.m1, &mut self.v1, &g.dw1, &mut params.w1),
                    (&mut self.m2, &mut self.v2, &g.dw2, &mut params.w2),
                ] {
                    let ms = m.as_mut_slice();
                    let vs = v.as_mut_slice();
                    let ws = w.as_mut_slice();
                    for (i, &gi) in grad.as_slice().iter().enumerate() {
                        ms[i] = b1 * ms[i] + (1.0 - b1) * gi;
                        vs[i] = b2 * vs[i] + (1.0 - b2) * gi * gi;
                        ws[i] -= lr * (ms[i] / c1) / ((vs[i] / c2).sqrt() + eps);
                    }
                }
            }
        }
    }
}

/// Trains from `init` and returns the parameters of the best dev epoch
/// (epoch 0 being the untrained model) together with dev metrics of those
/// parameters and the per-epoch history.
pub fn train(
    config: &TrainConfig,
    init: ModelParams,
    train_set: &[RawInstance],
    dev_set: &[RawInstance],
    vocab: &Vocabulary,
) -> Result<(ModelParams, Metrics)> {
    config.validate()?;
    init.validate()?;
    if train_set.is_empty() || dev_set.is_empty() {
        return Err(Error::Config("train and dev sets must be nonempty".into()));
    }
    let d_r = init.dims().d_r;
    let train_ex = prepare(train_set, vocab, d_r)?;
    let dev_ex = prepare(dev_set, vocab, d_r)?;
    let variant = config.variant;

    let mut params = init;
    let mut best_params = params.clone();
    let mut best = evaluate_examples(&params, &dev_ex, vocab, variant)?;
    let mut best_epoch = 0;
    let mut history = vec![EpochRecord {
        epoch: 0,
        train_loss: None,
        dev_accuracy: best.overall,
    }];
    let mut opt = OptimizerState::new(config.optimizer, &params);
    let mut stale = 0;
    let mut order: Vec<usize> = (0..train_ex.len()).collect();

    for epoch in 1..=config.epochs {
        order.sort_unstable();
        order.shuffle(&mut rng_for(config.seed, &format!("shuffle/{epoch}")));
        let mut loss_sum = 0.0;
        let mut batches = 0;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&PreparedInstance> =
                chunk.iter().map(|&i| &train_ex[i].prepared).collect();
            let mut g = backward_prepared(&batch, vocab, &params, variant)?;
            if !g.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    batch: b,
                    loss: g.loss,
                });
            }
            if let Some(max) = config.clip {
                let norm = g.norm();
                if norm > max {
                    g.dw1.scale(max / norm);
                    g.dw2.scale(max / norm);
                }
            }
            opt.apply(&mut params, &g, config.lr);
            loss_sum += g.loss;
            batches += 1;
        }
        let train_loss = loss_sum / batches as f64;
        let metrics = evaluate_examples(&params, &dev_ex, vocab, variant)?;
        log::info!(
            "epoch {epoch}: train loss {train_loss:.4}, dev accuracy {:.4}",
            metrics.overall
        );
        history.push(EpochRecord {
            epoch,
            train_loss: Some(train_loss),
            dev_accuracy: metrics.overall,
        });
        if metrics.overall > best.overall {
            best = metrics;
            best_params = params.clone();
            best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                break;
            }
        }
    }
    best.history = history;
    best.best_epoch = Some(best_epoch);
    Ok((best_params, best))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{random_instances, RandomSpec};
    use crate::encodings::Dims;

    fn toy_data(count: usize, seed: u64) -> (Vocabulary, Vec<RawInstance>) {
        random_instances(&RandomSpec::toy(), count, seed).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        for bad in [
            TrainConfig {
                lr: -1.0,
                ..TrainConfig::default()
            },
            TrainConfig {
                batch_size: 0,
                ..TrainConfig::default()
            },
            TrainConfig {
                patience: 0,
                ..TrainConfig::default()
            },
            TrainConfig {
                clip: Some(0.0),
                ..TrainConfig::default()
            },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let (vocab, data) = toy_data(12, 1);
        let init = ModelParams::init(Dims::toy(), 0.45, 2, 1).unwrap();
        let cfg = TrainConfig {
            lr: 0.0,
            epochs: 3,
            ..TrainConfig::default()
        };
        let (params, metrics) = train(&cfg, init.clone(), &data[..8], &data[8..], &vocab).unwrap();
        assert_eq!(params, init);
        let untrained = evaluate(&init, &data[8..], &vocab, Variant::Hmmn).unwrap();
        assert_eq!(metrics.overall, untrained.overall);
        assert_eq!(metrics.best_epoch, Some(0));
    }

    #[test]
    fn training_is_deterministic() {
        let (vocab, data) = toy_data(20, 2);
        let init = ModelParams::init(Dims::toy(), 0.45, 2, 2).unwrap();
        let cfg = TrainConfig {
            epochs: 3,
            lr: 0.05,
            ..TrainConfig::default()
        };
        let a = train(&cfg, init.clone(), &data[..15], &data[15..], &vocab).unwrap();
        let b = train(&cfg, init, &data[..15], &data[15..], &vocab).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn best_epoch_has_best_dev_accuracy() {
        let (vocab, data) = toy_data(30, 3);
        let init = ModelParams::init(Dims::toy(), 0.45, 2, 3).unwrap();
        let cfg = TrainConfig {
            epochs: 6,
            lr: 0.1,
            patience: 2,
            optimizer: Optimizer::Adam,
            ..TrainConfig::default()
        };
        let (params, m) = train(&cfg, init, &data[..20], &data[20..], &vocab).unwrap();
        let max = m.history.iter().map(|h| h.dev_accuracy).fold(0.0, f64::max);
        assert_eq!(m.overall, max);
        let first = m
            .history
            .iter()
            .find(|h| h.dev_accuracy == max)
            .unwrap()
            .epoch;
        assert_eq!(m.best_epoch, Some(first));
        let again = evaluate(&params, &data[20..], &vocab, Variant::Hmmn).unwrap();
        assert_eq!(again.overall, m.overall);
        assert!(m.history.len() <= 7);
    }

    #[test]
    fn evaluation_buckets_partition() {
        let (vocab, mut data) = toy_data(9, 4);
        for (i, inst) in data.iter_mut().enumerate() {
            inst.question[0] = ["what", "Who", "zzz"][i % 3].into();
        }
        let params = ModelParams::init(Dims::toy(), 0.45, 2, 4).unwrap();
        let m = evaluate(&params, &data, &vocab, Variant::Hmmn).unwrap();
        assert_eq!(m.per_type.values().map(|b| b.total).sum::<usize>(), 9);
        assert_eq!(m.per_type.len(), 3);
        assert_eq!(m.overall, m.correct as f64 / 9.0);
        let tripled: Vec<RawInstance> = data.iter().chain(&data).chain(&data).cloned().collect();
        let m3 = evaluate(&params, &tripled, &vocab, Variant::Hmmn).unwrap();
        assert_eq!(m3.overall, m.overall);
        assert!(m.to_table().lines().last().unwrap().starts_with("overall"));
    }

    #[test]
    fn separable_task_is_learned_quickly() {
        // gold answer repeats the question; other answers use unrelated words
        let d_w = 6;
        let entries: Vec<(String, Vec<f64>)> = (0..12)
            .map(|i| {
                let v = (0..d_w)
                    .map(|j| {
                        if j == i % d_w {
                            if i < 6 {
                                1.0
                            } else {
                                -1.0
                            }
                        } else {
                            0.0
                        }
                    })
                    .collect();
                (format!("t{i}"), v)
            })
            .collect();
        let vocab = Vocabulary::new(entries).unwrap();
        let (_, base) = toy_data(40, 5);
        let data: Vec<RawInstance> = base
            .into_iter()
            .enumerate()
            .map(|(i, mut inst)| {
                let key = format!("t{}", i % 6);
                inst.question = vec![key.clone()];
                for (k, a) in inst.answers.iter_mut().enumerate() {
                    *a = if k == inst.gold {
                        vec![key.clone()]
                    } else {
                        vec![format!("t{}", 6 + (i + k) % 6)]
                    };
                }
                inst
            })
            .collect();
        let init = ModelParams::init(Dims::toy(), 0.45, 2, 5).unwrap();
        let cfg = TrainConfig {
            epochs: 5,
            lr: 0.05,
            ..TrainConfig::default()
        };
        let (params, _) = train(&cfg, init, &data, &data[..10], &vocab).unwrap();
        let m = evaluate(&params, &data, &vocab, Variant::Hmmn).unwrap();
        assert_eq!(m.overall, 1.0);
    }
}
