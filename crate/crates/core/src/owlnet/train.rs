use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::{MetricsReport, Outcome};
use super::network::Network;
use super::{OwlNetError, DETECTION_THRESHOLD};
use crate::augmentor::BugCategory;
use crate::manifest::{app_id, Label};
use crate::nn::{softmax_cross_entropy, Sgd, Tensor};

/// A preprocessed training example.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// [3, H, W]
    pub input: Tensor<f32>,
    pub label: Label,
    pub category: Option<BugCategory>,
    pub source_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    /// Epochs (0-based) from which the rate is multiplied by `lr_decay`.
    pub lr_decay_epochs: Vec<usize>,
    pub lr_decay: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Stop once inference-mode training accuracy reaches this value.
    pub target_train_accuracy: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 16,
            lr: 0.01,
            lr_decay_epochs: vec![60, 85],
            lr_decay: 0.1,
            momentum: 0.9,
            epochs: 100,
            seed: 0,
            target_train_accuracy: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), OwlNetError> {
        if self.batch_size == 0 {
            return Err(OwlNetError::Config("batch_size must be at least 1".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(OwlNetError::Config(format!("lr {} must be finite and >= 0", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(OwlNetError::Config(format!("momentum {} must lie in [0, 1)", self.momentum)));
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        let decays = self.lr_decay_epochs.iter().filter(|&&e| epoch >= e).count();
        self.lr * self.lr_decay.powi(decays as i32)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    /// Accuracy of the training-mode predictions made while fitting.
    pub train_accuracy: f64,
    pub val_f1: Option<f64>,
    pub val_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were kept.
    pub best_epoch: usize,
    pub best_val_f1: Option<f64>,
}

/// Refuse splits where the same app feeds both sides.
pub fn check_app_split<'a>(
    train: impl IntoIterator<Item = &'a str>,
    val: impl IntoIterator<Item = &'a str>,
) -> Result<(), OwlNetError> {
    let apps: BTreeSet<&str> = train.into_iter().map(app_id).collect();
    for id in val {
        if apps.contains(app_id(id)) {
            return Err(OwlNetError::AppOverlap(app_id(id).to_string()));
        }
    }
    Ok(())
}

/// p(buggy) for every sample, inference mode, in batches.
pub fn predict_buggy(net: &Network<f32>, samples: &[Sample], batch: usize) -> Result<Vec<f32>, OwlNetError> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(batch.max(1)) {
        let inputs: Vec<&Tensor<f32>> = chunk.iter().map(|s| &s.input).collect();
        let probs = net.predict(&Tensor::stack(&inputs)?)?;
        out.extend(probs.data().chunks_exact(2).map(|p| p[Label::Buggy.class_index()]));
    }
    Ok(out)
}

pub fn label_for(p_buggy: f32) -> Label {
    if p_buggy as f64 >= DETECTION_THRESHOLD {
        Label::Buggy
    } else {
        Label::Clean
    }
}

pub fn evaluate_samples(net: &Network<f32>, samples: &[Sample], batch: usize) -> Result<MetricsReport, OwlNetError> {
    let probs = predict_buggy(net, samples, batch)?;
    let outcomes: Vec<Outcome> = samples
        .iter()
        .zip(probs)
        .map(|(s, p)| Outcome {
            truth: s.label,
            category: s.category,
            predicted: label_for(p),
        })
        .collect();
    Ok(MetricsReport::from_outcomes(&outcomes))
}

fn layer_norms(net: &Network<f32>) -> String {
    net.named_tensors()
        .iter()
        .map(|(n, t)| format!("{n}={:.3e}", t.l2_norm()))
        .collect::<Vec<_>>()
        .join(", ")
}

/// Mini-batch SGD on softmax cross-entropy. On return `net` holds the
/// parameters of the epoch with the best validation F1 (ties go to the later
/// epoch), or of the last epoch when there is no validation set.
pub fn train(
    net: &mut Network<f32>,
    train_set: &[Sample],
    val_set: &[Sample],
    cfg: &TrainConfig,
) -> Result<TrainHistory, OwlNetError> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(OwlNetError::EmptyDataset("training set".into()));
    }
    check_app_split(
        train_set.iter().map(|s| s.source_id.as_str()),
        val_set.iter().map(|s| s.source_id.as_str()),
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Sgd::new(cfg.lr as f32, cfg.momentum as f32);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::new();
    let mut best: Option<(f64, usize, Network<f32>)> = None;

    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        opt.lr = lr as f32;
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for (bi, idx) in order.chunks(cfg.batch_size).enumerate() {
            let inputs: Vec<&Tensor<f32>> = idx.iter().map(|&i| &train_set[i].input).collect();
            let labels: Vec<usize> = idx.iter().map(|&i| train_set[i].label.class_index()).collect();
            let x = Tensor::stack(&inputs)?;
            let tape = net.forward(&x, true, None)?;
            let ce = softmax_cross_entropy(&tape.logits, &labels)?;
            if !ce.loss.is_finite() {
                return Err(OwlNetError::NonFinite {
                    epoch,
                    batch: bi,
                    norms: layer_norms(net),
                });
            }
            loss_sum += ce.loss as f64 * idx.len() as f64;
            correct += ce
                .probs
                .data()
                .chunks_exact(2)
                .zip(&labels)
                .filter(|(p, &l)| label_for(p[1]).class_index() == l)
                .count();
            let grads = net.backward(&tape, &ce.grad_logits, None)?;
            opt.step(net.params_mut(), &grads.param_grads)?;
            net.absorb_stats(&tape);
        }
        let (val_f1, val_accuracy) = if val_set.is_empty() {
            (None, None)
        } else {
            let m = evaluate_samples(net, val_set, cfg.batch_size)?;
            (m.f1, m.accuracy())
        };
        let record = EpochRecord {
            epoch,
            lr,
            train_loss: loss_sum / train_set.len() as f64,
            train_accuracy: correct as f64 / train_set.len() as f64,
            val_f1,
            val_accuracy,
        };
        log::info!(
            "epoch {epoch}: loss {:.4} train acc {:.3} val f1 {:?}",
            record.train_loss,
            record.train_accuracy,
            record.val_f1
        );
        history.push(record);

        let score = val_f1.unwrap_or(0.0);
        if val_set.is_empty() || best.as_ref().is_none_or(|(b, _, _)| score >= *b) {
            best = Some((score, epoch, net.clone()));
        }
        if let Some(target) = cfg.target_train_accuracy {
            let m = evaluate_samples(net, train_set, cfg.batch_size)?;
            if m.accuracy().unwrap_or(0.0) >= target {
                log::info!("training accuracy target {target} reached at epoch {epoch}");
                break;
            }
        }
    }
    let (best_epoch, best_val_f1) = match best {
        Some((_, e, snapshot)) => {
            *net = snapshot;
            (e, history[e].val_f1)
        }
        None => (0, None),
    };
    Ok(TrainHistory {
        epochs: history,
        best_epoch,
        best_val_f1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::owlnet::{build_network, NetworkConfig};

    fn toy(n: usize) -> Vec<Sample> {
        (0..n)
            .map(|i| {
                let label = if i % 2 == 0 { Label::Buggy } else { Label::Clean };
                let v = if label == Label::Buggy { 1.0 } else { -1.0 };
                let data: Vec<f64> = (0..3 * 192 * 128)
                    .map(|j| if (j / 128) % 192 < 96 { v } else { -v } + (i as f64) * 0.01)
                    .collect();
                Sample {
                    input: Tensor::from_f64(&[3, 192, 128], &data).unwrap(),
                    label,
                    category: None,
                    source_id: format!("app{i}_s"),
                }
            })
            .collect()
    }

    #[test]
    fn lr_schedule() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.lr_at(0), 0.01);
        assert!((cfg.lr_at(60) - 0.001).abs() < 1e-12);
        assert!((cfg.lr_at(99) - 0.0001).abs() < 1e-12);
    }

    #[test]
    fn app_overlap_is_refused() {
        assert!(check_app_split(["a1_x", "a2_y"], ["a3_z"]).is_ok());
        assert!(matches!(
            check_app_split(["a1_x"], ["a1_other"]),
            Err(OwlNetError::AppOverlap(a)) if a == "a1"
        ));
    }

    #[test]
    fn empty_training_set_is_an_error() {
        let mut net = build_network(&NetworkConfig::desk(), 0).unwrap();
        assert!(matches!(
            train(&mut net, &[], &[], &TrainConfig::default()),
            Err(OwlNetError::EmptyDataset(_))
        ));
    }

    #[test]
    fn zero_lr_leaves_parameters() {
        let mut net = build_network(&NetworkConfig::desk(), 0).unwrap();
        let before: Vec<Tensor<f32>> = net.params().into_iter().cloned().collect();
        let cfg = TrainConfig {
            lr: 0.0,
            epochs: 2,
            batch_size: 2,
            ..TrainConfig::default()
        };
        train(&mut net, &toy(2), &[], &cfg).unwrap();
        let after: Vec<Tensor<f32>> = net.params().into_iter().cloned().collect();
        assert_eq!(before, after);
    }

    #[test]
    fn two_samples_overfit_deterministically() {
        let cfg = TrainConfig {
            epochs: 30,
            batch_size: 2,
            seed: 3,
            ..TrainConfig::default()
        };
        let mut a = build_network(&NetworkConfig::desk(), 1).unwrap();
        let ha = train(&mut a, &toy(2), &[], &cfg).unwrap();
        let mut b = build_network(&NetworkConfig::desk(), 1).unwrap();
        let hb = train(&mut b, &toy(2), &[], &cfg).unwrap();
        assert_eq!(ha, hb);
        assert_eq!(a, b);
        let last = ha.epochs.last().unwrap().train_loss;
        assert!(last < 0.05, "final loss {last}");
        let first_half: f64 = ha.epochs[..15].iter().map(|e| e.train_loss).sum();
        let second_half: f64 = ha.epochs[15..].iter().map(|e| e.train_loss).sum();
        assert!(second_half < first_half);
    }
}
