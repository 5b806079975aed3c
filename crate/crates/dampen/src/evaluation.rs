//! Unlearning quality metrics: output entropy and the entropy-based
//! membership inference attack.
//!
//! The attack fits a 1-D logistic regression on output entropies of a seeded
//! balanced sample of retain rows ("seen") and held-out test rows ("unseen"),
//! then scores the forget rows: the MIA score is the percentage of forget
//! samples classified "seen" at probability threshold 0.5. The attacker only
//! ever sees the entropy scalar.

use crate::data::{Dataset, ForgetSplit, LabelSource};
use crate::error::{Error, Result};
use crate::model::{forward_logits, ModelSpec, ParameterVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MiaConfig {
    pub attack_seed: u64,
    pub members_per_class: u32,
    pub lr: f64,
    pub iterations: u32,
}

impl MiaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.members_per_class < 1 {
            return Err(Error::InvalidConfig("members_per_class must be >= 1".into()));
        }
        if self.iterations < 1 {
            return Err(Error::InvalidConfig("iterations must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiaReport {
    /// Percentage of forget samples classified "seen".
    pub mia_score: f64,
    pub attack_train_accuracy: f64,
    /// Entropy at which the fitted attack crosses probability 0.5.
    pub threshold_entropy: f64,
    /// Set when the attack barely separates seen from unseen on its own
    /// training data; the score carries little signal then.
    pub degenerate: bool,
}

/// Shannon entropy of the softmax distribution over the model's logits.
/// Terms with zero probability contribute zero.
pub fn output_entropy(spec: &ModelSpec, theta: &ParameterVector, x: &[f64]) -> Result<f64> {
    let logits = forward_logits(spec, theta, x)?;
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for &l in &logits {
        sum += (l - max).exp();
    }
    let mut entropy = 0.0;
    for &l in &logits {
        let p = (l - max).exp() / sum;
        if p > 0.0 {
            entropy -= p * p.ln();
        }
    }
    Ok(entropy)
}

/// Full-batch gradient descent on the logistic loss over a single feature.
/// Starts from w = 0, b = 0, so the pre-fit prediction is 0.5 everywhere.
pub fn fit_logistic_1d(features: &[f64], labels: &[bool], cfg: &MiaConfig) -> Result<(f64, f64)> {
    cfg.validate()?;
    assert_eq!(features.len(), labels.len());
    if labels.iter().all(|&l| l) || labels.iter().all(|&l| !l) {
        return Err(Error::SingleClassAttack);
    }
    let n = features.len() as f64;
    let mut w = 0.0;
    let mut b = 0.0;
    for _ in 0..cfg.iterations {
        let mut grad_w = 0.0;
        let mut grad_b = 0.0;
        for (&x, &y) in features.iter().zip(labels) {
            let p = sigmoid(w * x + b);
            let err = p - if y { 1.0 } else { 0.0 };
            grad_w += err * x;
            grad_b += err;
        }
        w -= cfg.lr * grad_w / n;
        b -= cfg.lr * grad_b / n;
    }
    Ok((w, b))
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Classified "seen" when the fitted probability strictly exceeds 0.5.
fn predicts_seen(w: f64, b: f64, x: f64) -> bool {
    sigmoid(w * x + b) > 0.5
}

/// Seeded per-class sample with exactly matched counts on both sides, so the
/// attack's training set is balanced even when a class is absent from the
/// retain set (full-class forgetting).
fn matched_samples(
    retain_indices: &[usize],
    retain_labels: &[usize],
    test_labels: &[usize],
    n_classes: usize,
    count: usize,
    rng: &mut ChaCha8Rng,
) -> (Vec<usize>, Vec<usize>) {
    let mut members = Vec::new();
    let mut unseen = Vec::new();
    for class in 0..n_classes {
        let mut m: Vec<usize> = retain_indices
            .iter()
            .cloned()
            .filter(|&i| retain_labels[i] == class)
            .collect();
        let mut t: Vec<usize> = (0..test_labels.len())
            .filter(|&i| test_labels[i] == class)
            .collect();
        let take = count.min(m.len()).min(t.len());
        if take == 0 {
            continue;
        }
        m.shuffle(rng);
        t.shuffle(rng);
        members.extend_from_slice(&m[..take]);
        unseen.extend_from_slice(&t[..take]);
    }
    members.sort_unstable();
    unseen.sort_unstable();
    (members, unseen)
}

/// Run the membership inference attack against one model.
#[allow(clippy::too_many_arguments)]
pub fn mia(
    spec: &ModelSpec,
    theta: &ParameterVector,
    dataset: &Dataset,
    split: &ForgetSplit,
    test_set: &Dataset,
    label_source: LabelSource,
    cfg: &MiaConfig,
) -> Result<MiaReport> {
    cfg.validate()?;
    if split.forget_indices.is_empty() {
        return Err(Error::EmptyForgetSet);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.attack_seed);
    let n_classes = spec.n_classes();
    let count = cfg.members_per_class as usize;

    let (member_rows, test_rows) = matched_samples(
        &split.retain_indices,
        dataset.labels(label_source),
        test_set.labels(label_source),
        n_classes,
        count,
        &mut rng,
    );

    let mut features = Vec::with_capacity(member_rows.len() + test_rows.len());
    let mut labels = Vec::with_capacity(features.capacity());
    for &i in &member_rows {
        features.push(output_entropy(spec, theta, dataset.sample(i))?);
        labels.push(true);
    }
    for &i in &test_rows {
        features.push(output_entropy(spec, theta, test_set.sample(i))?);
        labels.push(false);
    }
    let (w, b) = fit_logistic_1d(&features, &labels, cfg)?;

    let correct = features
        .iter()
        .zip(&labels)
        .filter(|(&x, &y)| predicts_seen(w, b, x) == y)
        .count();
    let attack_train_accuracy = 100.0 * correct as f64 / labels.len() as f64;

    let seen = split
        .forget_indices
        .iter()
        .map(|&i| output_entropy(spec, theta, dataset.sample(i)).map(|h| predicts_seen(w, b, h)))
        .collect::<Result<Vec<bool>>>()?;
    let mia_score =
        100.0 * seen.iter().filter(|&&s| s).count() as f64 / split.forget_indices.len() as f64;

    Ok(MiaReport {
        mia_score,
        attack_train_accuracy,
        threshold_entropy: if w != 0.0 { -b / w } else { 0.0 },
        // 55% is an artifact-defined cutoff for "no usable signal".
        degenerate: attack_train_accuracy <= 55.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synthesize_blobs, SplitRule};
    use crate::model::init_model;

    fn attack_cfg() -> MiaConfig {
        MiaConfig {
            attack_seed: 11,
            members_per_class: 10,
            lr: 1.0,
            iterations: 500,
        }
    }

    #[test]
    fn uniform_distribution_has_max_entropy() {
        let spec = ModelSpec::new(vec![2, 4], 0).unwrap();
        let theta = ParameterVector {
            values: vec![0.0; spec.n_params()],
            layout: spec.layout(),
        };
        let h = output_entropy(&spec, &theta, &[1.0, -1.0]).unwrap();
        assert!((h - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn one_hot_distribution_has_zero_entropy() {
        // Large logit gap drives the softmax to an exact one-hot in f64.
        let spec = ModelSpec::new(vec![1, 2], 0).unwrap();
        let theta = ParameterVector {
            values: vec![800.0, -800.0, 0.0, 0.0],
            layout: spec.layout(),
        };
        let h = output_entropy(&spec, &theta, &[1.0]).unwrap();
        assert_eq!(h, 0.0);
    }

    #[test]
    fn two_class_uniform_is_ln_two() {
        let spec = ModelSpec::new(vec![1, 2], 0).unwrap();
        let theta = ParameterVector {
            values: vec![0.0, 0.0, 0.0, 0.0],
            layout: spec.layout(),
        };
        let h = output_entropy(&spec, &theta, &[3.0]).unwrap();
        assert!((h - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn entropy_is_bounded_for_random_models() {
        for seed in 0..20 {
            let spec = ModelSpec::new(vec![3, 8, 5], seed).unwrap();
            let theta = init_model(&spec).unwrap();
            let h = output_entropy(&spec, &theta, &[0.5, -0.5, 2.0]).unwrap();
            assert!((0.0..=5f64.ln() + 1e-12).contains(&h));
        }
    }

    #[test]
    fn logistic_separates_separated_clusters() {
        let features: Vec<f64> = (0..20)
            .map(|i| if i < 10 { 0.1 + 0.01 * i as f64 } else { 2.0 + 0.01 * i as f64 })
            .collect();
        let labels: Vec<bool> = (0..20).map(|i| i < 10).collect();
        let (w, b) = fit_logistic_1d(&features, &labels, &attack_cfg()).unwrap();
        let correct = features
            .iter()
            .zip(&labels)
            .filter(|(&x, &y)| predicts_seen(w, b, x) == y)
            .count();
        assert_eq!(correct, 20);
    }

    #[test]
    fn flipping_labels_flips_the_boundary_sign() {
        let features = vec![0.0, 0.2, 0.4, 1.6, 1.8, 2.0];
        let labels = vec![true, true, true, false, false, false];
        let flipped: Vec<bool> = labels.iter().map(|&l| !l).collect();
        let (w1, b1) = fit_logistic_1d(&features, &labels, &attack_cfg()).unwrap();
        let (w2, b2) = fit_logistic_1d(&features, &flipped, &attack_cfg()).unwrap();
        // Mirror symmetry of the logistic loss, up to f64 rounding.
        assert!((w1 + w2).abs() < 1e-9);
        assert!((b1 + b2).abs() < 1e-9);
    }

    #[test]
    fn zero_weights_predict_half_everywhere() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(!predicts_seen(0.0, 0.0, 3.7));
    }

    #[test]
    fn single_class_attack_data_is_rejected() {
        let err = fit_logistic_1d(&[1.0, 2.0], &[true, true], &attack_cfg()).unwrap_err();
        assert!(matches!(err, Error::SingleClassAttack));
    }

    #[test]
    fn uniform_model_attack_is_degenerate() {
        let ds = synthesize_blobs(3, 20, 2, 8.0, 1, None);
        let test = synthesize_blobs(3, 20, 2, 8.0, 2, None);
        let spec = ModelSpec::new(vec![2, 3], 0).unwrap();
        // All-zero model: uniform output everywhere, no membership signal.
        let theta = ParameterVector {
            values: vec![0.0; spec.n_params()],
            layout: spec.layout(),
        };
        let split = crate::data::make_split(&ds, &SplitRule::FullClass { class: 0 }).unwrap();
        let report = mia(&spec, &theta, &ds, &split, &test, LabelSource::Fine, &attack_cfg()).unwrap();
        assert!(report.degenerate);
        assert!((report.attack_train_accuracy - 50.0).abs() <= 5.0);
    }

    #[test]
    fn mia_is_deterministic() {
        let ds = synthesize_blobs(3, 15, 2, 6.0, 1, None);
        let test = synthesize_blobs(3, 15, 2, 6.0, 2, None);
        let spec = ModelSpec::new(vec![2, 8, 3], 4).unwrap();
        let theta = init_model(&spec).unwrap();
        let split = crate::data::make_split(&ds, &SplitRule::FullClass { class: 1 }).unwrap();
        let a = mia(&spec, &theta, &ds, &split, &test, LabelSource::Fine, &attack_cfg()).unwrap();
        let b = mia(&spec, &theta, &ds, &split, &test, LabelSource::Fine, &attack_cfg()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_forget_set_is_rejected() {
        let ds = synthesize_blobs(2, 5, 2, 6.0, 1, None);
        let test = synthesize_blobs(2, 5, 2, 6.0, 2, None);
        let spec = ModelSpec::new(vec![2, 2], 0).unwrap();
        let theta = init_model(&spec).unwrap();
        let split = ForgetSplit {
            forget_indices: vec![],
            retain_indices: (0..ds.n_samples()).collect(),
            rule: SplitRule::FullClass { class: 0 },
        };
        assert!(matches!(
            mia(&spec, &theta, &ds, &split, &test, LabelSource::Fine, &attack_cfg()).unwrap_err(),
            Error::EmptyForgetSet
        ));
    }
}
