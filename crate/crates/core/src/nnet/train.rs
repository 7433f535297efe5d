//! Classifier training: BCE with logits plus the variance-head surrogate,
//! 4-fold affine augmentation, Adam, and early stopping on validation
//! accuracy.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::ParamGrads;
use super::{sigmoid, Adam, Classifier, Mode, Tensor};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::rng::rng_for;

/// Training hyperparameters. Fully serialized into the run manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub max_epochs: usize,
    /// Early-stopping patience on validation accuracy; 0 disables.
    pub patience: usize,
    pub minibatch: usize,
    /// 4-fold affine augmentation (original plus three random transforms).
    pub augment: bool,
    /// Weight of the variance-head smooth-L1 term; the head itself is a
    /// model property.
    pub variance_loss_weight: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            beta1: 0.93,
            beta2: 0.999,
            max_epochs: 200,
            patience: 10,
            minibatch: 16,
            augment: true,
            variance_loss_weight: 0.1,
            seed: 0,
        }
    }
}

/// Per-epoch loss log (train always; val/test when sets provided).
#[derive(Clone, Debug, Serialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub train: f64,
    pub val: Option<f64>,
    pub test: Option<f64>,
    pub val_accuracy: Option<f64>,
}

pub type TrainSample = (Grid, u8);

/// Numerically stable binary cross-entropy on a logit.
/// Returns (loss, dloss/dlogit).
pub fn bce_with_logits(logit: f64, y: f64) -> (f64, f64) {
    let loss = logit.max(0.0) - logit * y + (1.0 + (-logit.abs()).exp()).ln();
    let grad = sigmoid(logit) - y;
    (loss, grad)
}

/// Variance-head surrogate: smooth-L1 between the predicted log-variance and
/// a stop-gradient residual proxy ln((p−y)² + ε). Returns (loss, d/dlogvar);
/// no gradient flows into the logit.
pub fn variance_surrogate(logvar: f64, p: f64, y: f64) -> (f64, f64) {
    let target = ((p - y) * (p - y) + 1e-6).ln();
    let r = logvar - target;
    if r.abs() < 1.0 {
        (0.5 * r * r, r)
    } else {
        (r.abs() - 0.5, r.signum())
    }
}

/// Random affine transform: rotation ±25°, translation ±10 px (scaled with
/// image side relative to 64), isotropic scale 0.95–1.05. Inverse-mapped
/// bilinear sampling with edge clamping.
pub fn augment_affine(image: &Grid, rng: &mut ChaCha8Rng) -> Grid {
    let h = image.h();
    let w = image.w();
    let theta = rng.random_range(-25f64.to_radians()..25f64.to_radians());
    let t_max = 10.0 * w as f64 / 64.0;
    let ty = rng.random_range(-t_max..t_max);
    let tx = rng.random_range(-t_max..t_max);
    let scale = rng.random_range(0.95..1.05);
    let (sin, cos) = theta.sin_cos();
    let cy = (h as f64 - 1.0) / 2.0;
    let cx = (w as f64 - 1.0) / 2.0;
    let mut out = Grid::zeros(h, w);
    for y in 0..h {
        for x in 0..w {
            // Inverse map: undo translation, rotation, scale about center.
            let dy = y as f64 - cy - ty;
            let dx = x as f64 - cx - tx;
            let sy = (cos * dy - sin * dx) / scale + cy;
            let sx = (sin * dy + cos * dx) / scale + cx;
            let sy = sy.clamp(0.0, h as f64 - 1.0);
            let sx = sx.clamp(0.0, w as f64 - 1.0);
            let y0 = sy.floor() as usize;
            let x0 = sx.floor() as usize;
            let y1 = (y0 + 1).min(h - 1);
            let x1 = (x0 + 1).min(w - 1);
            let fy = sy - y0 as f64;
            let fx = sx - x0 as f64;
            let v = image.at(y0, x0) * (1.0 - fy) * (1.0 - fx)
                + image.at(y0, x1) * (1.0 - fy) * fx
                + image.at(y1, x0) * fy * (1.0 - fx)
                + image.at(y1, x1) * fy * fx;
            out.set(y, x, v);
        }
    }
    out
}

fn accumulate_sample(
    model: &Classifier,
    image: &Grid,
    y: f64,
    var_weight: f64,
    rng: &mut ChaCha8Rng,
    acc: &mut [Option<ParamGrads>],
) -> f64 {
    let input = Tensor::from_grid(image);
    let trace = model.net.forward(&input, Mode::Train, Some(rng));
    let out = trace.output();
    let (bce, dlogit) = bce_with_logits(out.data[0], y);
    let mut loss = bce;
    let mut grad = Tensor::zeros(out.shape.clone());
    grad.data[0] = dlogit;
    if model.variance_head && var_weight > 0.0 {
        let p = sigmoid(out.data[0]);
        let (vl, dlogvar) = variance_surrogate(out.data[1], p, y);
        loss += var_weight * vl;
        grad.data[1] = var_weight * dlogvar;
    }
    let back = model.net.backward(&trace, grad);
    for (a, g) in acc.iter_mut().zip(&back.param_grads) {
        if let (Some(a), Some(g)) = (a.as_mut(), g.as_ref()) {
            a.add_assign(g);
        }
    }
    loss
}

fn mean_loss(model: &Classifier, items: &[TrainSample], var_weight: f64) -> f64 {
    let mut total = 0.0;
    for (g, y) in items {
        let trace = model
            .net
            .forward(&Tensor::from_grid(g), Mode::Eval, None);
        let out = trace.output();
        let (bce, _) = bce_with_logits(out.data[0], *y as f64);
        total += bce;
        if model.variance_head && var_weight > 0.0 {
            let p = sigmoid(out.data[0]);
            let (vl, _) = variance_surrogate(out.data[1], p, *y as f64);
            total += var_weight * vl;
        }
    }
    total / items.len() as f64
}

fn accuracy(model: &Classifier, items: &[TrainSample]) -> f64 {
    let correct = items
        .iter()
        .filter(|(g, y)| {
            let p = model.predict(g).map(|(p, _)| p).unwrap_or(0.5);
            (p >= 0.5) == (*y == 1)
        })
        .count();
    correct as f64 / items.len() as f64
}

/// Train a classifier from `init` on the labeled set. Early stopping tracks
/// validation accuracy (best weights restored); per-epoch train/val/test
/// losses are returned alongside the model.
pub fn train_classifier(
    init: &Classifier,
    labeled: &[TrainSample],
    val: &[TrainSample],
    test: Option<&[TrainSample]>,
    cfg: &TrainConfig,
) -> Result<(Classifier, Vec<EpochLoss>)> {
    if labeled.is_empty() {
        return Err(Error::invalid("labeled", "training set is empty"));
    }
    let mut model = init.clone();
    let mut rng = rng_for(cfg.seed, "train", 0);

    // Fixed 4-fold expansion: original + 3 random affine transforms.
    let mut items: Vec<TrainSample> = Vec::new();
    for (g, y) in labeled {
        items.push((g.clone(), *y));
        if cfg.augment {
            for _ in 0..3 {
                items.push((augment_affine(g, &mut rng), *y));
            }
        }
    }

    let mut adam = Adam::new(&model.net, cfg.learning_rate, cfg.beta1, cfg.beta2);
    let mut log = Vec::new();
    let mut best: Option<(f64, Classifier)> = None;
    let mut stale = 0usize;

    let mut order: Vec<usize> = (0..items.len()).collect();
    for epoch in 0..cfg.max_epochs {
        for i in (1..order.len()).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.minibatch.max(1)) {
            let mut acc: Vec<Option<ParamGrads>> = model
                .net
                .layers
                .iter()
                .map(ParamGrads::zeros_like)
                .collect();
            let mut batch_loss = 0.0;
            for &idx in batch {
                let (g, y) = &items[idx];
                batch_loss += accumulate_sample(
                    &model,
                    g,
                    *y as f64,
                    cfg.variance_loss_weight,
                    &mut rng,
                    &mut acc,
                );
            }
            let inv = 1.0 / batch.len() as f64;
            for a in acc.iter_mut().flatten() {
                a.scale(inv);
            }
            batch_loss *= inv;
            if !batch_loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    norms: model.net.layer_norms(),
                });
            }
            adam.step(&mut model.net, &acc);
            epoch_loss += batch_loss * batch.len() as f64;
        }
        epoch_loss /= items.len() as f64;

        let val_loss = (!val.is_empty()).then(|| mean_loss(&model, val, cfg.variance_loss_weight));
        let test_loss = test
            .filter(|t| !t.is_empty())
            .map(|t| mean_loss(&model, t, cfg.variance_loss_weight));
        let val_acc = (!val.is_empty()).then(|| accuracy(&model, val));
        log.push(EpochLoss {
            epoch,
            train: epoch_loss,
            val: val_loss,
            test: test_loss,
            val_accuracy: val_acc,
        });

        if let (Some(acc_now), true) = (val_acc, cfg.patience > 0) {
            let improved = match &best {
                None => true,
                Some((best_acc, _)) => acc_now > *best_acc,
            };
            if improved {
                best = Some((acc_now, model.clone()));
                stale = 0;
            } else {
                stale += 1;
                if stale >= cfg.patience {
                    break;
                }
            }
        }
    }
    if let Some((_, best_model)) = best {
        model = best_model;
    }
    Ok((model, log))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blob_image(size: usize, bright: bool, seed: u64) -> Grid {
        let mut rng = rng_for(seed, "blob", 0);
        let base = if bright { 0.7 } else { 0.3 };
        let data = (0..size * size)
            .map(|_| (base + rng.random_range(-0.05..0.05f64)).clamp(0.0, 1.0))
            .collect();
        Grid::from_vec(size, size, data).unwrap()
    }

    fn quick_cfg(seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: 5e-3,
            max_epochs: 50,
            patience: 0,
            minibatch: 8,
            augment: false,
            seed,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn single_class_set_learns_constant_prediction() {
        let items: Vec<TrainSample> = (0..8).map(|i| (blob_image(16, true, i), 1)).collect();
        let init = Classifier::new(16, 0.0, true, 1);
        let (model, _) = train_classifier(&init, &items, &[], None, &quick_cfg(2)).unwrap();
        for (g, _) in &items {
            let (p, _) = model.predict(g).unwrap();
            assert!(p > 0.9, "p = {p}");
        }
    }

    #[test]
    fn fixed_seed_gives_identical_weights() {
        let items: Vec<TrainSample> = (0..6)
            .map(|i| (blob_image(16, i % 2 == 0, i), (i % 2 == 0) as u8))
            .collect();
        let init = Classifier::new(16, 0.2, true, 3);
        let cfg = TrainConfig {
            max_epochs: 5,
            augment: true,
            ..quick_cfg(9)
        };
        let (a, _) = train_classifier(&init, &items, &[], None, &cfg).unwrap();
        let (b, _) = train_classifier(&init, &items, &[], None, &cfg).unwrap();
        assert_eq!(a.params_hash(), b.params_hash());
    }

    #[test]
    fn separable_blobs_reach_high_auc() {
        // Two-blob toy task: the oracle check is that mean intensity alone
        // separates the classes, so the conv net must reach AUC > 0.95.
        let train: Vec<TrainSample> = (0..24)
            .map(|i| (blob_image(16, i % 2 == 0, 100 + i), (i % 2 == 0) as u8))
            .collect();
        let val: Vec<TrainSample> = (0..16)
            .map(|i| (blob_image(16, i % 2 == 0, 500 + i), (i % 2 == 0) as u8))
            .collect();
        // Oracle sanity: logistic regression on the mean intensity is
        // separable, i.e. means are disjoint between classes.
        let max_neg = val
            .iter()
            .filter(|(_, y)| *y == 0)
            .map(|(g, _)| g.values().iter().sum::<f64>())
            .fold(f64::NEG_INFINITY, f64::max);
        let min_pos = val
            .iter()
            .filter(|(_, y)| *y == 1)
            .map(|(g, _)| g.values().iter().sum::<f64>())
            .fold(f64::INFINITY, f64::min);
        assert!(min_pos > max_neg);

        let init = Classifier::new(16, 0.0, true, 4);
        let (model, log) = train_classifier(&init, &train, &val, None, &quick_cfg(5)).unwrap();
        assert!(log.len() <= 50);
        let auc = crate::nnet::classifier_auc(&model, &val).unwrap();
        assert!(auc > 0.95, "auc = {auc}");
    }

    #[test]
    fn empty_training_set_errors() {
        let init = Classifier::new(16, 0.0, true, 1);
        assert!(train_classifier(&init, &[], &[], None, &quick_cfg(0)).is_err());
    }

    #[test]
    fn epoch_log_carries_val_and_test_losses() {
        let items: Vec<TrainSample> = (0..6)
            .map(|i| (blob_image(16, i % 2 == 0, 10 + i), (i % 2 == 0) as u8))
            .collect();
        let init = Classifier::new(16, 0.0, true, 1);
        let cfg = TrainConfig {
            max_epochs: 3,
            ..quick_cfg(1)
        };
        let (_, log) =
            train_classifier(&init, &items, &items, Some(&items), &cfg).unwrap();
        assert_eq!(log.len(), 3);
        for e in &log {
            assert!(e.val.is_some() && e.test.is_some() && e.val_accuracy.is_some());
            assert!(e.train.is_finite());
        }
    }

    #[test]
    fn bce_gradient_matches_finite_difference() {
        for (logit, y) in [(0.3, 1.0), (-1.2, 0.0), (2.5, 0.0), (0.0, 1.0)] {
            let (_, g) = bce_with_logits(logit, y);
            let eps = 1e-6;
            let (lp, _) = bce_with_logits(logit + eps, y);
            let (lm, _) = bce_with_logits(logit - eps, y);
            let fd = (lp - lm) / (2.0 * eps);
            assert!((g - fd).abs() < 1e-6, "{g} vs {fd}");
        }
    }

    #[test]
    fn variance_surrogate_gradient_matches_finite_difference() {
        for (logvar, p, y) in [(0.2, 0.7, 1.0), (-2.0, 0.1, 0.0), (3.0, 0.5, 1.0)] {
            let (_, g) = variance_surrogate(logvar, p, y);
            let eps = 1e-6;
            let (lp, _) = variance_surrogate(logvar + eps, p, y);
            let (lm, _) = variance_surrogate(logvar - eps, p, y);
            let fd = (lp - lm) / (2.0 * eps);
            assert!((g - fd).abs() < 1e-5, "{g} vs {fd}");
        }
    }

    #[test]
    fn augment_preserves_shape_and_range() {
        let g = blob_image(32, true, 77);
        let mut rng = rng_for(1, "aug", 0);
        for _ in 0..5 {
            let a = augment_affine(&g, &mut rng);
            assert_eq!((a.h(), a.w()), (32, 32));
            assert!(a.values().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }
}
