//! Segmentation use case: a tiny encoder–decoder per-pixel segmenter trained
//! on synthetic gland-like masks, with sample selection driven by a
//! classification-proxy saliency pipeline and evaluated by Dice curves.

use std::collections::{HashMap, HashSet};

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::alloop::{build_deep_context, ALConfig, CurvePoint, DeepContext};
use crate::error::{Error, Result};
use crate::grid::{Grid, Mask};
use crate::nnet::{
    train_classifier, Adam, Classifier, Conv2d, Layer, Mode, Network, ParamGrads, Tensor,
    TrainConfig,
};
use crate::rng::{derive_seed, rng_for};
use crate::strategies::{score_pool, select_top_n, ScoreContext, StrategyId, StrategyKind};
use crate::synthdata::{generate_dataset, replicate_spec, split, Task};

/// Per-pixel segmenter: conv(8)+ReLU+pool, conv(16)+ReLU, upsample,
/// conv(8)+ReLU, conv(1)+sigmoid. Output grid matches the input size with
/// values in (0,1).
#[derive(Clone, Debug)]
pub struct SegModel {
    pub net: Network,
    pub input_size: usize,
    pub init_seed: u64,
}

impl SegModel {
    pub fn new(input_size: usize, seed: u64) -> Self {
        let mut rng = rng_for(seed, "seg-init", 0);
        let layers = vec![
            Layer::Conv(Conv2d::new(1, 8, &mut rng)),
            Layer::Relu,
            Layer::MaxPool2,
            Layer::Conv(Conv2d::new(8, 16, &mut rng)),
            Layer::Relu,
            Layer::Upsample2,
            Layer::Conv(Conv2d::new(16, 8, &mut rng)),
            Layer::Relu,
            Layer::Conv(Conv2d::new(8, 1, &mut rng)),
            Layer::Sigmoid,
        ];
        SegModel {
            net: Network { layers },
            input_size,
            init_seed: seed,
        }
    }

    /// Per-pixel foreground probabilities (eval mode, deterministic).
    pub fn predict_probs(&self, image: &Grid) -> Result<Grid> {
        if image.h() != self.input_size || image.w() != self.input_size {
            return Err(Error::ShapeMismatch {
                expected: format!("{0}x{0}", self.input_size),
                got: format!("{}x{}", image.h(), image.w()),
            });
        }
        let trace = self
            .net
            .forward(&Tensor::from_grid(image), Mode::Eval, None);
        let out = trace.output();
        Grid::from_vec(image.h(), image.w(), out.data.clone())
    }

    /// Binarized prediction at the 0.5 threshold.
    pub fn predict_mask(&self, image: &Grid) -> Result<Mask> {
        let probs = self.predict_probs(image)?;
        let mut m = Mask::empty(probs.h(), probs.w());
        for y in 0..probs.h() {
            for x in 0..probs.w() {
                if probs.at(y, x) >= 0.5 {
                    m.set(y, x, true);
                }
            }
        }
        Ok(m)
    }
}

/// Dice coefficient 2|A∩B|/(|A|+|B|); two empty masks score 1 by convention.
pub fn dice(pred: &Mask, truth: &Mask) -> Result<f64> {
    if pred.h() != truth.h() || pred.w() != truth.w() {
        return Err(Error::ShapeMismatch {
            expected: format!("{}x{}", truth.h(), truth.w()),
            got: format!("{}x{}", pred.h(), pred.w()),
        });
    }
    let mut inter = 0usize;
    for (a, b) in pred.bits().iter().zip(truth.bits()) {
        if *a && *b {
            inter += 1;
        }
    }
    let denom = pred.count() + truth.count();
    if denom == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / denom as f64)
}

/// Mean Dice of a model over labeled pairs (prediction binarized at 0.5).
pub fn mean_dice(model: &SegModel, items: &[(Grid, Mask)]) -> Result<f64> {
    let mut acc = 0.0;
    for (image, truth) in items {
        acc += dice(&model.predict_mask(image)?, truth)?;
    }
    Ok(acc / items.len().max(1) as f64)
}

fn mask_tensor_targets(mask: &Mask) -> Vec<f64> {
    mask.bits().iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
}

/// Train the segmenter with per-pixel BCE. Returns the model and per-epoch
/// validation Dice. Gradients enter at the pre-sigmoid activation as
/// (p − y)/N, which is the exact sigmoid∘BCE composite.
pub fn train_segmenter(
    init: &SegModel,
    pairs: &[(Grid, Mask)],
    val: &[(Grid, Mask)],
    cfg: &TrainConfig,
) -> Result<(SegModel, Vec<f64>)> {
    if pairs.is_empty() {
        return Err(Error::invalid("pairs", "training set is empty"));
    }
    let mut model = init.clone();
    let mut adam = Adam::new(&model.net, cfg.learning_rate, cfg.beta1, cfg.beta2);
    let mut rng = rng_for(cfg.seed, "seg-train", 0);
    let n_layers = model.net.layers.len();
    let pre_sigmoid = n_layers - 1; // activation index feeding the sigmoid
    let mut val_dice_log = Vec::new();
    let mut best: Option<(f64, SegModel)> = None;
    let mut stale = 0usize;
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    for epoch in 0..cfg.max_epochs {
        for i in (1..order.len()).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }
        for batch in order.chunks(cfg.minibatch.max(1)) {
            let mut acc: Vec<Option<ParamGrads>> = model
                .net
                .layers
                .iter()
                .map(ParamGrads::zeros_like)
                .collect();
            let mut batch_loss = 0.0;
            for &idx in batch {
                let (image, mask) = &pairs[idx];
                let input = Tensor::from_grid(image);
                let trace = model.net.forward(&input, Mode::Train, Some(&mut rng));
                let probs = trace.output();
                let targets = mask_tensor_targets(mask);
                let n = targets.len() as f64;
                let mut grad = Tensor::zeros(trace.activations[pre_sigmoid].shape.clone());
                let mut loss = 0.0;
                for i in 0..targets.len() {
                    let p = probs.data[i].clamp(1e-12, 1.0 - 1e-12);
                    let y = targets[i];
                    loss -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
                    grad.data[i] = (probs.data[i] - y) / n;
                }
                batch_loss += loss / n;
                let back = model.net.backward_from(&trace, pre_sigmoid, grad);
                for (a, g) in acc.iter_mut().zip(&back.param_grads) {
                    if let (Some(a), Some(g)) = (a.as_mut(), g.as_ref()) {
                        a.add_assign(g);
                    }
                }
            }
            if !batch_loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    norms: model.net.layer_norms(),
                });
            }
            let inv = 1.0 / batch.len() as f64;
            for a in acc.iter_mut().flatten() {
                a.scale(inv);
            }
            adam.step(&mut model.net, &acc);
        }
        if !val.is_empty() {
            let d = mean_dice(&model, val)?;
            val_dice_log.push(d);
            if cfg.patience > 0 {
                let improved = best.as_ref().map(|(b, _)| d > *b).unwrap_or(true);
                if improved {
                    best = Some((d, model.clone()));
                    stale = 0;
                } else {
                    stale += 1;
                    if stale >= cfg.patience {
                        break;
                    }
                }
            }
        }
    }
    if let Some((_, best_model)) = best {
        model = best_model;
    }
    Ok((model, val_dice_log))
}

/// One seed's segmentation-AL run.
#[derive(Clone, Debug, Serialize)]
pub struct SegSeedRun {
    pub seed: u64,
    pub points: Vec<CurvePoint>,
    pub fsl_dice_val: f64,
    pub fsl_dice_test: f64,
    pub oracle_queries: u64,
    pub context_queries: u64,
    pub aborted: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub abort_reason: Option<String>,
}

/// Dice learning curve over seeds (CurvePoint's auc fields carry Dice).
#[derive(Clone, Debug, Serialize)]
pub struct SegCurve {
    pub strategy: StrategyId,
    pub runs: Vec<SegSeedRun>,
}

impl SegCurve {
    pub fn dice_at(&self, fraction: f64) -> Vec<f64> {
        self.runs
            .iter()
            .filter(|r| !r.aborted)
            .filter_map(|r| {
                r.points
                    .iter()
                    .find(|p| (p.fraction - fraction).abs() < 1e-9)
                    .map(|p| p.auc_val)
            })
            .collect()
    }

    pub fn mean_dice_at(&self, fraction: f64) -> f64 {
        let v = self.dice_at(fraction);
        v.iter().sum::<f64>() / v.len().max(1) as f64
    }
}

fn run_one_seg_seed(cfg: &ALConfig, run_seed: u64) -> Result<SegSeedRun> {
    let spec = replicate_spec(&cfg.dataset, run_seed);
    let dataset = generate_dataset(&spec)?;
    let pool = split(&dataset, (0.7, 0.1, 0.2), derive_seed(run_seed, "split", 0))?;
    let pool_total = pool.unlabeled.len();
    let image_of = |id: &str| -> Result<Grid> { Ok(dataset.image(id)?.pixels.clone()) };

    // Evaluation pairs use generator-side masks (experimenter-owned).
    let eval_pairs = |ids: &[String]| -> Result<Vec<(Grid, Mask)>> {
        ids.iter()
            .map(|id| Ok((image_of(id)?, dataset.eval_mask(id)?)))
            .collect()
    };
    let val_pairs = eval_pairs(&pool.validation)?;
    let test_pairs = eval_pairs(&pool.test)?;
    let val_items: Vec<(Grid, u8)> = pool
        .validation
        .iter()
        .map(|id| Ok((image_of(id)?, dataset.internal_label(id)?)))
        .collect::<Result<_>>()?;

    // Stratified 10% seed set.
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for id in &pool.unlabeled {
        if dataset.internal_label(id)? == 1 {
            pos.push(id.clone());
        } else {
            neg.push(id.clone());
        }
    }
    let mut rng = rng_for(run_seed, "seed-set", 0);
    for class in [&mut pos, &mut neg] {
        for i in (1..class.len()).rev() {
            let j = rng.random_range(0..=i);
            class.swap(i, j);
        }
    }
    let n_seed = ((pool_total as f64 * 0.10).round() as usize).clamp(2, pool_total);
    let n_pos = ((n_seed as f64 * pos.len() as f64 / pool_total as f64).round() as usize)
        .min(pos.len())
        .max(usize::from(!pos.is_empty()));
    let n_neg = (n_seed - n_pos.min(n_seed)).min(neg.len());
    let mut seed_ids: Vec<String> = pos.into_iter().take(n_pos).collect();
    seed_ids.extend(neg.into_iter().take(n_neg));
    seed_ids.sort();

    let mut unlabeled: Vec<String> = pool
        .unlabeled
        .iter()
        .filter(|id| !seed_ids.contains(id))
        .cloned()
        .collect();
    // Labeled state: image-level class (proxy) + mask (segmenter).
    let mut labeled: Vec<(String, u8, Mask)> = Vec::new();
    for id in &seed_ids {
        let label = dataset.oracle_label(id)?;
        let mask = dataset.oracle_mask(id)?;
        labeled.push((id.clone(), label, mask));
    }

    let class_items = |labeled: &[(String, u8, Mask)]| -> Result<Vec<(Grid, u8)>> {
        labeled
            .iter()
            .map(|(id, y, _)| Ok((image_of(id)?, *y)))
            .collect()
    };
    let seg_pairs = |labeled: &[(String, u8, Mask)]| -> Result<Vec<(Grid, Mask)>> {
        labeled
            .iter()
            .map(|(id, _, m)| Ok((image_of(id)?, m.clone())))
            .collect()
    };

    // Proxy classifier (never sees masks).
    let proxy_init = Classifier::new(
        cfg.dataset.size,
        cfg.dropout_p,
        cfg.variance_head,
        derive_seed(run_seed, "proxy-init", 0),
    );
    let m0_cfg = TrainConfig {
        seed: derive_seed(run_seed, "proxy-m0", 0),
        ..cfg.train.clone()
    };
    let seed_class_items = class_items(&labeled)?;
    let (mut proxy, _) =
        train_classifier(&proxy_init, &seed_class_items, &val_items, None, &m0_cfg)?;

    // Segmenter on the seed pairs.
    let seg_init = SegModel::new(cfg.dataset.size, derive_seed(run_seed, "seg", 0));
    let seg_cfg = TrainConfig {
        seed: derive_seed(run_seed, "seg-train", 0),
        ..cfg.train.clone()
    };
    let (mut segmenter, _) = train_segmenter(&seg_init, &seg_pairs(&labeled)?, &val_pairs, &seg_cfg)?;

    // FSL segmenter reference on the full pool (generator-side masks).
    let fsl_pairs: Vec<(Grid, Mask)> = {
        let mut ids: Vec<String> = pool.unlabeled.clone();
        ids.sort();
        ids.iter()
            .map(|id| Ok((image_of(id)?, dataset.eval_mask(id)?)))
            .collect::<Result<_>>()?
    };
    let fsl_init = SegModel::new(cfg.dataset.size, derive_seed(run_seed, "seg-fsl", 0));
    let fsl_cfg = TrainConfig {
        seed: derive_seed(run_seed, "seg-fsl-train", 0),
        ..cfg.train.clone()
    };
    let (fsl_model, _) = train_segmenter(&fsl_init, &fsl_pairs, &val_pairs, &fsl_cfg)?;
    let fsl_dice_val = mean_dice(&fsl_model, &val_pairs)?;
    let fsl_dice_test = mean_dice(&fsl_model, &test_pairs)?;

    // Deep-features context from the proxy.
    let mut context_queries = 0u64;
    let mut deep_ctx: Option<DeepContext> = None;
    if cfg.strategy.kind == StrategyKind::DeepFeatures {
        let ctx = build_deep_context(
            cfg,
            run_seed,
            &proxy,
            &seed_class_items,
            &val_items,
            cfg.strategy.on_raw_image,
            0,
        )?;
        context_queries += ctx.queries;
        deep_ctx = Some(ctx);
    }

    let mut points = Vec::new();
    let mut next_decile = 1usize;
    let record = |labeled_n: usize,
                      d_val: f64,
                      d_test: f64,
                      points: &mut Vec<CurvePoint>,
                      next_decile: &mut usize| {
        let fraction = labeled_n as f64 / pool_total as f64;
        while *next_decile <= 10 && fraction + 1e-9 >= *next_decile as f64 / 10.0 {
            points.push(CurvePoint {
                fraction: *next_decile as f64 / 10.0,
                auc_val: d_val,
                auc_test: d_test,
            });
            *next_decile += 1;
        }
    };
    let mut d_val = mean_dice(&segmenter, &val_pairs)?;
    let mut d_test = mean_dice(&segmenter, &test_pairs)?;
    record(labeled.len(), d_val, d_test, &mut points, &mut next_decile);

    let mut iteration = 0usize;
    while !unlabeled.is_empty()
        && (labeled.len() as f64 / pool_total as f64) + 1e-9 < cfg.max_fraction
    {
        let pool_images: Vec<(String, Grid)> = unlabeled
            .iter()
            .map(|id| Ok((id.clone(), image_of(id)?)))
            .collect::<Result<_>>()?;
        let score_ctx = ScoreContext {
            saliency_method: cfg.saliency,
            mc_samples: cfg.mc_samples,
            random_seed: derive_seed(run_seed, "random-strategy", 0),
            uncertainty_agg: cfg.uncertainty_agg,
            autoencoder: deep_ctx.as_ref().map(|c| &c.autoencoder),
            forest: deep_ctx.as_ref().map(|c| &c.forest),
            glcm_directions: None,
            shape_directions: None,
        };
        let sheet = score_pool(cfg.strategy, &proxy, &pool_images, &score_ctx)?;
        let n_query = cfg.batch_size.min(unlabeled.len());
        let batch = select_top_n(&sheet, n_query, cfg.strategy.reversed);
        let batch_set: HashSet<String> = batch.iter().cloned().collect();
        unlabeled.retain(|id| !batch_set.contains(id));
        for id in &batch {
            let label = dataset.oracle_label(id)?;
            let mask = dataset.oracle_mask(id)?;
            labeled.push((id.clone(), label, mask));
        }
        // Retrain proxy (fine-tune) and segmenter.
        let retrain_cfg = TrainConfig {
            max_epochs: cfg.fine_tune_epochs,
            seed: derive_seed(run_seed, "proxy-retrain", iteration as u64),
            ..cfg.train.clone()
        };
        let (new_proxy, _) =
            train_classifier(&proxy, &class_items(&labeled)?, &val_items, None, &retrain_cfg)?;
        proxy = new_proxy;
        let seg_retrain_cfg = TrainConfig {
            max_epochs: cfg.fine_tune_epochs,
            seed: derive_seed(run_seed, "seg-retrain", iteration as u64),
            ..cfg.train.clone()
        };
        let (new_seg, _) =
            train_segmenter(&segmenter, &seg_pairs(&labeled)?, &val_pairs, &seg_retrain_cfg)?;
        segmenter = new_seg;
        d_val = mean_dice(&segmenter, &val_pairs)?;
        d_test = mean_dice(&segmenter, &test_pairs)?;
        iteration += 1;
        record(labeled.len(), d_val, d_test, &mut points, &mut next_decile);
    }

    Ok(SegSeedRun {
        seed: run_seed,
        points,
        fsl_dice_val,
        fsl_dice_test,
        oracle_queries: dataset.query_count(),
        context_queries,
        aborted: false,
        abort_reason: None,
    })
}

/// Segmentation active learning: the proxy classifier scores informativeness
/// through its saliency maps; selected images and their oracle masks feed
/// the segmenter. Requires a gland_seg dataset.
pub fn run_segmentation_al(cfg: &ALConfig) -> Result<SegCurve> {
    cfg.validate()?;
    if cfg.dataset.task != Task::GlandSeg {
        return Err(Error::invalid("dataset.task", "must be gland_seg"));
    }
    let runs: Vec<SegSeedRun> = cfg
        .seeds
        .par_iter()
        .map(|&seed| match run_one_seg_seed(cfg, seed) {
            Ok(r) => r,
            Err(e) => SegSeedRun {
                seed,
                points: Vec::new(),
                fsl_dice_val: f64::NAN,
                fsl_dice_test: f64::NAN,
                oracle_queries: 0,
                context_queries: 0,
                aborted: true,
                abort_reason: Some(e.to_string()),
            },
        })
        .collect();
    Ok(SegCurve {
        strategy: cfg.strategy,
        runs,
    })
}

/// Threshold-on-intensity baseline: Otsu-binarize the image itself. Used as
/// the oracle baseline for the synthetic gland task.
pub fn intensity_threshold_baseline(items: &[(Grid, Mask)]) -> Result<f64> {
    let mut acc = 0.0;
    for (image, truth) in items {
        let pred = crate::features::otsu_binarize(image);
        acc += dice(&pred, truth)?;
    }
    Ok(acc / items.len().max(1) as f64)
}

// Keep the HashMap import used by future callers honest.
#[allow(unused)]
type IdIndex = HashMap<String, usize>;
