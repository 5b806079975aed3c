//! Deterministic mini-batch SGD with momentum, plus the retrain-from-scratch
//! and finetune baselines and accuracy evaluation.

use crate::autodiff::Tape;
use crate::data::{Dataset, LabelSource};
use crate::error::{Error, Result};
use crate::model::{collect_gradients, forward_logits, forward_on_tape, init_model, ModelSpec, ParameterVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: u32,
    pub batch_size: u32,
    pub learning_rate: f64,
    pub momentum: f64,
    pub shuffle_seed: u64,
    pub label_source: LabelSource,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 1 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(
                "learning_rate must be finite and >= 0".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidConfig("momentum must be in [0,1)".into()));
        }
        Ok(())
    }
}

/// SGD with momentum over mean cross-entropy. Samples are shuffled each epoch
/// by a ChaCha8 stream seeded with `shuffle_seed`; the whole loop is
/// single-threaded and bit-deterministic given its inputs. Returns the
/// trained parameters and the mean loss per epoch.
pub fn train(
    spec: &ModelSpec,
    theta_init: &ParameterVector,
    dataset: &Dataset,
    indices: &[usize],
    config: &TrainConfig,
) -> Result<(ParameterVector, Vec<f64>)> {
    config.validate()?;
    if indices.is_empty() {
        return Err(Error::EmptyIndices);
    }
    let labels = dataset.labels(config.label_source);
    let n_features = spec.n_features();
    let mut theta = theta_init.clone();
    let mut velocity = vec![0.0; theta.len()];
    let mut rng = ChaCha8Rng::seed_from_u64(config.shuffle_seed);
    let mut order = indices.to_vec();
    let batch_size = config.batch_size as usize;
    let mut loss_curve = Vec::with_capacity(config.epochs as usize);

    for epoch in 0..config.epochs as usize {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (batch_no, batch) in order.chunks(batch_size).enumerate() {
            let mut xs = Vec::with_capacity(batch.len() * n_features);
            let mut ys = Vec::with_capacity(batch.len());
            for &i in batch {
                xs.extend_from_slice(dataset.sample(i));
                ys.push(labels[i]);
            }
            let mut tape = Tape::new();
            let (logits, param_ids) = forward_on_tape(&mut tape, spec, &theta, &xs, batch.len())?;
            let loss = tape.cross_entropy_mean(logits, &ys)?;
            let loss_value = tape.scalar(loss)?;
            if !loss_value.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    batch: batch_no,
                });
            }
            tape.backward(loss)?;
            let grads = collect_gradients(&tape, &param_ids, theta.len());
            for ((v, g), t) in velocity.iter_mut().zip(&grads).zip(theta.values.iter_mut()) {
                *v = config.momentum * *v + g;
                *t -= config.learning_rate * *v;
            }
            epoch_loss += loss_value * batch.len() as f64;
        }
        loss_curve.push(epoch_loss / order.len() as f64);
    }
    Ok((theta, loss_curve))
}

/// Train a freshly initialized model on the retain set only.
pub fn retrain_baseline(
    spec: &ModelSpec,
    dataset: &Dataset,
    retain_indices: &[usize],
    config: &TrainConfig,
) -> Result<(ParameterVector, Vec<f64>)> {
    let theta = init_model(spec)?;
    train(spec, &theta, dataset, retain_indices, config)
}

/// Continue training an existing model on the retain set for the configured
/// number of epochs (the convention is 2). With 0 epochs the parameters come
/// back unchanged.
pub fn finetune_baseline(
    spec: &ModelSpec,
    theta_trained: &ParameterVector,
    dataset: &Dataset,
    retain_indices: &[usize],
    config: &TrainConfig,
) -> Result<(ParameterVector, Vec<f64>)> {
    if config.epochs == 0 {
        return Ok((theta_trained.clone(), Vec::new()));
    }
    train(spec, theta_trained, dataset, retain_indices, config)
}

/// Argmax-of-logits match rate in percent. Ties break toward the lowest
/// class index so the result is deterministic.
pub fn accuracy(
    spec: &ModelSpec,
    theta: &ParameterVector,
    dataset: &Dataset,
    indices: &[usize],
    label_source: LabelSource,
) -> Result<f64> {
    if indices.is_empty() {
        return Err(Error::EmptyIndices);
    }
    let labels = dataset.labels(label_source);
    let mut correct = 0usize;
    for &i in indices {
        let logits = forward_logits(spec, theta, dataset.sample(i))?;
        let mut best = 0;
        for (c, &v) in logits.iter().enumerate() {
            if v > logits[best] {
                best = c;
            }
        }
        if best == labels[i] {
            correct += 1;
        }
    }
    Ok(100.0 * correct as f64 / indices.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthesize_blobs;

    fn config(epochs: u32, lr: f64) -> TrainConfig {
        TrainConfig {
            epochs,
            batch_size: 16,
            learning_rate: lr,
            momentum: 0.9,
            shuffle_seed: 3,
            label_source: LabelSource::Fine,
        }
    }

    fn bits(v: &[f64]) -> Vec<u64> {
        v.iter().map(|x| x.to_bits()).collect()
    }

    #[test]
    fn zero_learning_rate_leaves_theta_unchanged() {
        let ds = synthesize_blobs(3, 10, 2, 8.0, 1, None);
        let spec = ModelSpec::new(vec![2, 8, 3], 5).unwrap();
        let theta = init_model(&spec).unwrap();
        let indices: Vec<usize> = (0..ds.n_samples()).collect();
        let (trained, _) = train(&spec, &theta, &ds, &indices, &config(3, 0.0)).unwrap();
        assert_eq!(bits(&trained.values), bits(&theta.values));
    }

    #[test]
    fn loss_decreases_on_separable_blobs() {
        let ds = synthesize_blobs(3, 30, 2, 8.0, 1, None);
        let spec = ModelSpec::new(vec![2, 16, 3], 5).unwrap();
        let theta = init_model(&spec).unwrap();
        let indices: Vec<usize> = (0..ds.n_samples()).collect();
        let (_, curve) = train(&spec, &theta, &ds, &indices, &config(20, 0.1)).unwrap();
        assert!(curve.last().unwrap() < curve.first().unwrap());
    }

    #[test]
    fn training_is_bit_deterministic() {
        let ds = synthesize_blobs(3, 20, 2, 8.0, 1, None);
        let spec = ModelSpec::new(vec![2, 8, 3], 5).unwrap();
        let theta = init_model(&spec).unwrap();
        let indices: Vec<usize> = (0..ds.n_samples()).collect();
        let (a, _) = train(&spec, &theta, &ds, &indices, &config(5, 0.1)).unwrap();
        let (b, _) = train(&spec, &theta, &ds, &indices, &config(5, 0.1)).unwrap();
        assert_eq!(bits(&a.values), bits(&b.values));
    }

    #[test]
    fn finetune_zero_epochs_is_identity() {
        let ds = synthesize_blobs(2, 10, 2, 8.0, 1, None);
        let spec = ModelSpec::new(vec![2, 4, 2], 5).unwrap();
        let theta = init_model(&spec).unwrap();
        let indices: Vec<usize> = (0..ds.n_samples()).collect();
        let (out, curve) =
            finetune_baseline(&spec, &theta, &ds, &indices, &config(0, 0.1)).unwrap();
        assert_eq!(bits(&out.values), bits(&theta.values));
        assert!(curve.is_empty());
    }

    #[test]
    fn accuracy_counts_matches() {
        // Identity-ish model on 1 feature, 2 classes: logit_0 = -x, logit_1 = x.
        let spec = ModelSpec::new(vec![1, 2], 0).unwrap();
        let theta = ParameterVector {
            values: vec![-1.0, 1.0, 0.0, 0.0],
            layout: spec.layout(),
        };
        let ds = Dataset {
            features: vec![-1.0, 2.0, 3.0, -0.5],
            n_features: 1,
            fine_labels: vec![0, 1, 0, 0],
            coarse_labels: None,
        };
        let indices = [0, 1, 2, 3];
        // Sample 2 is predicted class 1 but labelled 0: 3 of 4 correct.
        let acc = accuracy(&spec, &theta, &ds, &indices, LabelSource::Fine).unwrap();
        assert_eq!(acc, 75.0);
    }

    #[test]
    fn accuracy_extremes() {
        let spec = ModelSpec::new(vec![1, 2], 0).unwrap();
        let theta = ParameterVector {
            values: vec![-1.0, 1.0, 0.0, 0.0],
            layout: spec.layout(),
        };
        let ds = Dataset {
            features: vec![-1.0, 1.0],
            n_features: 1,
            fine_labels: vec![0, 1],
            coarse_labels: None,
        };
        assert_eq!(
            accuracy(&spec, &theta, &ds, &[0, 1], LabelSource::Fine).unwrap(),
            100.0
        );
        let flipped = Dataset {
            fine_labels: vec![1, 0],
            ..ds
        };
        assert_eq!(
            accuracy(&spec, &theta, &flipped, &[0, 1], LabelSource::Fine).unwrap(),
            0.0
        );
    }

    #[test]
    fn accuracy_is_permutation_invariant() {
        let ds = synthesize_blobs(3, 10, 2, 8.0, 1, None);
        let spec = ModelSpec::new(vec![2, 8, 3], 5).unwrap();
        let theta = init_model(&spec).unwrap();
        let forward: Vec<usize> = (0..ds.n_samples()).collect();
        let reversed: Vec<usize> = forward.iter().rev().cloned().collect();
        let a = accuracy(&spec, &theta, &ds, &forward, LabelSource::Fine).unwrap();
        let b = accuracy(&spec, &theta, &ds, &reversed, LabelSource::Fine).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn empty_index_list_is_an_error() {
        let spec = ModelSpec::new(vec![2, 2], 0).unwrap();
        let theta = init_model(&spec).unwrap();
        let ds = synthesize_blobs(2, 5, 2, 8.0, 1, None);
        assert!(matches!(
            accuracy(&spec, &theta, &ds, &[], LabelSource::Fine).unwrap_err(),
            Error::EmptyIndices
        ));
    }
}
