//! Active-learning engine and experiment battery: learning curves per 10%
//! increment, per-seed fully-supervised references, batch-size sweeps,
//! dataset-switch runs, and noise sweeps.

use std::collections::{HashMap, HashSet};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::deepsel::{
    run_self_supervised_training, OnlineForest, PoolSample, ProbeContext, SelfSupervisedOutcome,
};
use crate::error::{Error, Result};
use crate::features::{calibrate_directions, first_order_features, glcm_features, shape_features};
use crate::grid::Grid;
use crate::nnet::{
    classifier_auc, train_autoencoder, train_classifier, AeTrainConfig, Autoencoder, Classifier,
    TrainConfig, TrainSample,
};
use crate::rng::{derive_seed, rng_for};
use crate::saliency::{self, SaliencyMethod};
use crate::strategies::{
    score_pool, select_top_n, ScoreContext, StrategyId, StrategyKind, UncertaintyAgg,
};
use crate::synthdata::{
    generate_dataset, inject_noise, replicate_spec, split, Dataset, DatasetSpec,
};

/// Ids drawn from the secondary (post-switch) dataset carry this prefix in
/// the pool bookkeeping.
const B_PREFIX: &str = "b/";

/// Full recipe for one strategy's active-learning experiment.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ALConfig {
    pub strategy: StrategyId,
    pub dataset: DatasetSpec,
    pub saliency: SaliencyMethod,
    /// Samples queried per iteration.
    pub batch_size: usize,
    /// Terminate a seed once validation AUC reaches this value (checked
    /// after each iteration, repeat-until style). None runs to the budget.
    pub auc_target: Option<f64>,
    /// Stop labeling once this fraction of the pool is labeled.
    pub max_fraction: f64,
    pub seeds: Vec<u64>,
    pub train: TrainConfig,
    /// Per-iteration retraining budget when fine-tuning from the previous
    /// weights.
    pub fine_tune_epochs: usize,
    /// Retrain from fresh init each iteration instead of fine-tuning.
    pub retrain_scratch: bool,
    pub dropout_p: f64,
    pub variance_head: bool,
    pub mc_samples: usize,
    pub uncertainty_agg: UncertaintyAgg,
    pub k_clusters: usize,
    pub ae_epochs: usize,
    /// Gaussian noise injected into pool images before scoring/training.
    pub noise_sigma: Option<f64>,
    /// Second dataset and the labeled fraction at which queries switch to it.
    pub dataset_b: Option<DatasetSpec>,
    pub switch_fraction: Option<f64>,
    /// Rebuild the deep-features context whenever the model is retrained.
    pub refresh_rf: bool,
    /// Feed propagated pseudo class labels into classifier training
    /// (deep-features context; off by default).
    pub pseudo_labels: bool,
    /// Stop a seed as soon as it crosses its FSL reference (sweeps only need
    /// iterations-to-cross).
    pub stop_at_crossing: bool,
}

impl ALConfig {
    /// Paper-flavored defaults around a dataset spec: batch 16, Deep-Taylor
    /// saliency, T = 20 MC samples, K = 10 clusters.
    pub fn defaults(dataset: DatasetSpec, strategy: StrategyId) -> Self {
        ALConfig {
            strategy,
            dataset,
            saliency: SaliencyMethod::DeepTaylor,
            batch_size: 16,
            auc_target: None,
            max_fraction: 1.0,
            seeds: (0..10).collect(),
            train: TrainConfig::default(),
            fine_tune_epochs: 20,
            retrain_scratch: false,
            dropout_p: 0.25,
            variance_head: true,
            mc_samples: 20,
            uncertainty_agg: UncertaintyAgg::Sum,
            k_clusters: 10,
            ae_epochs: 60,
            noise_sigma: None,
            dataset_b: None,
            switch_fraction: None,
            refresh_rf: false,
            pseudo_labels: false,
            stop_at_crossing: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        if self.batch_size < 1 {
            return Err(Error::invalid("batch_size", "must be >= 1"));
        }
        if let Some(t) = self.auc_target {
            if !(t > 0.5 && t <= 1.0) {
                return Err(Error::invalid("auc_target", "must lie in (0.5, 1]"));
            }
        }
        if !(self.max_fraction > 0.0 && self.max_fraction <= 1.0) {
            return Err(Error::invalid("max_fraction", "must lie in (0, 1]"));
        }
        if self.seeds.is_empty() {
            return Err(Error::invalid("seeds", "need at least one seed"));
        }
        if let Some(f) = self.switch_fraction {
            if !(0.0..=1.0).contains(&f) {
                return Err(Error::invalid("switch_fraction", "must lie in [0, 1]"));
            }
            if self.dataset_b.is_none() {
                return Err(Error::invalid("dataset_b", "required with switch_fraction"));
            }
            self.dataset_b.as_ref().unwrap().validate()?;
        }
        if let Some(s) = self.noise_sigma {
            if s < 0.0 || !s.is_finite() {
                return Err(Error::invalid("noise_sigma", "must be finite and >= 0"));
            }
        }
        Ok(())
    }
}

/// One point of a learning curve (decile grid).
#[derive(Clone, Debug, Serialize)]
pub struct CurvePoint {
    pub fraction: f64,
    pub auc_val: f64,
    pub auc_test: f64,
}

/// Per-iteration record of one seed's loop.
#[derive(Clone, Debug, Serialize)]
pub struct IterationPoint {
    pub iteration: usize,
    pub labeled: usize,
    pub auc_val: f64,
    pub auc_test: f64,
    pub selected: Vec<String>,
}

/// One seed's complete run.
#[derive(Clone, Debug, Serialize)]
pub struct SeedRun {
    pub seed: u64,
    pub points: Vec<CurvePoint>,
    pub iterations: Vec<IterationPoint>,
    pub fsl_val: f64,
    pub fsl_test: f64,
    /// First decile fraction whose test AUC reaches the FSL reference
    /// (test is the larger partition, so crossings resolve reliably).
    pub crossing_fraction: Option<f64>,
    /// First iteration (0 = the seed model) at the FSL reference.
    pub iterations_to_cross: Option<usize>,
    pub oracle_queries: u64,
    /// Label queries spent building the deep-features context (Algorithm-2
    /// training stage on its own context pool) or direction calibration.
    pub context_queries: u64,
    /// Labeled fraction at which queries switched to dataset B.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub switched_at: Option<f64>,
    /// Algorithm-2 iteration journal (deep-features strategy only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub deep_journal: Option<Vec<crate::deepsel::IterationRecord>>,
    pub aborted: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub abort_reason: Option<String>,
}

/// Learning curve of one strategy over all seeds.
#[derive(Clone, Debug, Serialize)]
pub struct LearningCurve {
    pub strategy: StrategyId,
    pub runs: Vec<SeedRun>,
}

impl LearningCurve {
    pub fn completed_runs(&self) -> impl Iterator<Item = &SeedRun> {
        self.runs.iter().filter(|r| !r.aborted)
    }

    /// Per-seed crossing fractions; seeds that never crossed are censored at
    /// 1.1 (one decile past the full pool).
    pub fn crossing_fractions(&self) -> Vec<f64> {
        self.completed_runs()
            .map(|r| r.crossing_fraction.unwrap_or(1.1))
            .collect()
    }

    pub fn mean_crossing_fraction(&self) -> f64 {
        let v = self.crossing_fractions();
        v.iter().sum::<f64>() / v.len().max(1) as f64
    }

    /// Per-seed iterations-to-cross; censored at one past the worst case.
    pub fn iterations_to_cross(&self) -> Vec<f64> {
        self.completed_runs()
            .map(|r| {
                r.iterations_to_cross
                    .map(|i| i as f64)
                    .unwrap_or_else(|| r.iterations.len() as f64 + 1.0)
            })
            .collect()
    }

    pub fn mean_iterations_to_cross(&self) -> f64 {
        let v = self.iterations_to_cross();
        v.iter().sum::<f64>() / v.len().max(1) as f64
    }

    /// Mean validation AUC at a decile fraction, over seeds that reached it.
    pub fn mean_auc_at(&self, fraction: f64) -> Option<f64> {
        let vals: Vec<f64> = self
            .completed_runs()
            .filter_map(|r| {
                r.points
                    .iter()
                    .find(|p| (p.fraction - fraction).abs() < 1e-9)
                    .map(|p| p.auc_val)
            })
            .collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }

    /// Per-seed final validation AUC (last recorded decile).
    pub fn final_aucs(&self) -> Vec<f64> {
        self.completed_runs()
            .filter_map(|r| r.points.last().map(|p| p.auc_val))
            .collect()
    }

    pub fn mean_final_auc(&self) -> f64 {
        let v = self.final_aucs();
        v.iter().sum::<f64>() / v.len().max(1) as f64
    }

    /// Per-seed area under the (fraction, validation AUC) curve (trapezoid
    /// over the decile grid).
    pub fn aulcs(&self) -> Vec<f64> {
        self.completed_runs()
            .map(|r| {
                let mut area = 0.0;
                for w in r.points.windows(2) {
                    area += (w[1].fraction - w[0].fraction) * (w[0].auc_val + w[1].auc_val) / 2.0;
                }
                area
            })
            .collect()
    }

    pub fn mean_aulc(&self) -> f64 {
        let v = self.aulcs();
        v.iter().sum::<f64>() / v.len().max(1) as f64
    }
}

/// The deep-features context: autoencoder plus trained forest.
pub struct DeepContext {
    pub autoencoder: Autoencoder,
    pub forest: OnlineForest,
    pub queries: u64,
    pub journal: Vec<crate::deepsel::IterationRecord>,
}

/// Build the deep-features context on a disjoint context pool drawn from the
/// same dataset recipe, so Algorithm-2 label queries never touch the primary
/// pool's budget. The queried interactions are reported separately.
pub fn build_deep_context(
    cfg: &ALConfig,
    run_seed: u64,
    base: &Classifier,
    base_train: &[TrainSample],
    validation: &[TrainSample],
    on_raw_image: bool,
    epoch_tag: u64,
) -> Result<DeepContext> {
    let ctx_spec = replicate_spec(&cfg.dataset, derive_seed(run_seed, "context", epoch_tag));
    let ctx_ds = generate_dataset(&ctx_spec)?;
    let ctx_pool = split(&ctx_ds, (0.7, 0.1, 0.2), derive_seed(run_seed, "context-split", 0))?;
    let mut maps = Vec::with_capacity(ctx_pool.unlabeled.len());
    let mut staged = Vec::with_capacity(ctx_pool.unlabeled.len());
    for id in &ctx_pool.unlabeled {
        let image = &ctx_ds.image(id)?.pixels;
        let surface = if on_raw_image {
            image.clone()
        } else {
            let class = base.predicted_class(image)?;
            saliency::compute(cfg.saliency, base, image, id, class)?.values
        };
        maps.push(surface.clone());
        staged.push((id.clone(), image.clone(), surface));
    }
    let ae_cfg = AeTrainConfig {
        epochs: cfg.ae_epochs,
        seed: derive_seed(run_seed, "ae", epoch_tag),
        ..AeTrainConfig::default()
    };
    let (autoencoder, _) = train_autoencoder(&maps, &ae_cfg)?;
    // ΔAUC probes need a stable fixed validation set: widen the primary
    // validation with the context world's own evaluation partitions (all
    // experimenter-side labels, still independent of every probe's training
    // set).
    let mut probe_validation: Vec<TrainSample> = validation.to_vec();
    for id in ctx_pool.validation.iter().chain(ctx_pool.test.iter()) {
        let img = ctx_ds.image(id)?;
        probe_validation.push((img.pixels.clone(), ctx_ds.eval_label(id)?));
    }
    let pool_samples: Vec<PoolSample> = staged
        .into_iter()
        .map(|(id, image, surface)| PoolSample {
            latent: autoencoder.encode(&surface),
            id,
            image,
        })
        .collect();
    let probe_ctx = ProbeContext {
        base,
        base_train,
        validation: &probe_validation,
        train_cfg: TrainConfig {
            seed: derive_seed(run_seed, "probe-train", epoch_tag),
            augment: false,
            ..cfg.train.clone()
        },
    };
    let oracle = |id: &str| ctx_ds.oracle_label(id);
    let SelfSupervisedOutcome {
        forest,
        queries,
        journal,
    } = run_self_supervised_training(
        &pool_samples,
        &oracle,
        &probe_ctx,
        cfg.k_clusters,
        derive_seed(run_seed, "selfsup", epoch_tag),
    )?;
    Ok(DeepContext {
        autoencoder,
        forest,
        queries,
        journal,
    })
}

/// Calibrate Borda directions for a radiomics family: the sign of the
/// Spearman correlation between each feature and per-sample ΔAUC on a
/// 20-sample probe drawn from a disjoint context pool. Returns the
/// directions and the number of oracle queries spent.
pub fn calibrate_family_directions(
    cfg: &ALConfig,
    run_seed: u64,
    base: &Classifier,
    base_train: &[TrainSample],
    validation: &[TrainSample],
    kind: StrategyKind,
    on_raw_image: bool,
) -> Result<(Vec<i8>, u64)> {
    let ctx_spec = replicate_spec(&cfg.dataset, derive_seed(run_seed, "dir-context", 0));
    let ctx_ds = generate_dataset(&ctx_spec)?;
    let ctx_pool = split(&ctx_ds, (0.7, 0.1, 0.2), derive_seed(run_seed, "dir-split", 0))?;
    let probe_ids: Vec<String> = ctx_pool.unlabeled.iter().take(20).cloned().collect();
    let auc_before = classifier_auc(base, validation)?;
    // Labels first (sequential: the oracle counter stays exact).
    let mut labeled_probe = Vec::with_capacity(probe_ids.len());
    for id in &probe_ids {
        labeled_probe.push((id.clone(), ctx_ds.oracle_label(id)?));
    }
    let queries = labeled_probe.len() as u64;
    let rows: Vec<(Vec<f64>, f64)> = labeled_probe
        .par_iter()
        .enumerate()
        .map(|(i, (id, label))| -> Result<(Vec<f64>, f64)> {
            let image = &ctx_ds.image(id)?.pixels;
            let surface = if on_raw_image {
                image.clone()
            } else {
                let class = base.predicted_class(image)?;
                saliency::compute(cfg.saliency, base, image, id, class)?.values
            };
            let features = match kind {
                StrategyKind::PyradGlcm => glcm_features(&surface)?.values,
                StrategyKind::PyradShape => shape_features(&surface).values,
                _ => first_order_features(&surface).values,
            };
            let mut train = base_train.to_vec();
            train.push((image.clone(), *label));
            let probe_cfg = ProbeContext::probe_cfg(
                &TrainConfig {
                    seed: derive_seed(run_seed, "dir-probe", i as u64),
                    augment: false,
                    ..cfg.train.clone()
                },
                derive_seed(run_seed, "dir-probe-i", i as u64),
            );
            let (tuned, _) = train_classifier(base, &train, &[], None, &probe_cfg)?;
            let delta = classifier_auc(&tuned, validation)? - auc_before;
            Ok((features, delta))
        })
        .collect::<Result<Vec<_>>>()?;
    let matrix: Vec<Vec<f64>> = rows.iter().map(|(f, _)| f.clone()).collect();
    let deltas: Vec<f64> = rows.iter().map(|(_, d)| *d).collect();
    Ok((calibrate_directions(&matrix, &deltas), queries))
}

struct SeedWorld {
    dataset: Dataset,
    dataset_b: Option<Dataset>,
    /// Effective pool images, keyed by (possibly B-prefixed) id.
    images: HashMap<String, Grid>,
    unlabeled: Vec<String>,
    /// Dataset-B pool ids (prefixed), staged until the switch point.
    pool_b: Vec<String>,
    validation: Vec<TrainSample>,
    test: Vec<TrainSample>,
    pool_total: usize,
}

impl SeedWorld {
    fn image_of(&self, id: &str) -> Grid {
        self.images
            .get(id)
            .cloned()
            .expect("pool image present for every pool id")
    }

    fn oracle_label(&self, id: &str) -> Result<u8> {
        match id.strip_prefix(B_PREFIX) {
            Some(raw) => self
                .dataset_b
                .as_ref()
                .expect("B id implies dataset B")
                .oracle_label(raw),
            None => self.dataset.oracle_label(id),
        }
    }

    fn internal_label(&self, id: &str) -> Result<u8> {
        match id.strip_prefix(B_PREFIX) {
            Some(raw) => self
                .dataset_b
                .as_ref()
                .expect("B id implies dataset B")
                .internal_label(raw),
            None => self.dataset.internal_label(id),
        }
    }

    fn query_count(&self) -> u64 {
        self.dataset.query_count()
            + self
                .dataset_b
                .as_ref()
                .map(|d| d.query_count())
                .unwrap_or(0)
    }
}

fn prepare_world(cfg: &ALConfig, run_seed: u64) -> Result<SeedWorld> {
    let spec = replicate_spec(&cfg.dataset, run_seed);
    let dataset = generate_dataset(&spec)?;
    let pool = split(&dataset, (0.7, 0.1, 0.2), derive_seed(run_seed, "split", 0))?;
    let mut images = HashMap::new();
    for (i, id) in pool.unlabeled.iter().enumerate() {
        let img = dataset.image(id)?;
        let pixels = match cfg.noise_sigma {
            Some(sigma) if sigma > 0.0 => {
                let mut rng = rng_for(spec.seed, "inject-noise", i as u64);
                inject_noise(img, sigma, &mut rng)?.pixels
            }
            _ => img.pixels.clone(),
        };
        images.insert(id.clone(), pixels);
    }
    let validation: Vec<TrainSample> = pool
        .validation
        .iter()
        .map(|id| Ok((dataset.image(id)?.pixels.clone(), dataset.internal_label(id)?)))
        .collect::<Result<_>>()?;
    let test: Vec<TrainSample> = pool
        .test
        .iter()
        .map(|id| Ok((dataset.image(id)?.pixels.clone(), dataset.internal_label(id)?)))
        .collect::<Result<_>>()?;
    let (dataset_b, pool_b) = match (&cfg.dataset_b, cfg.switch_fraction) {
        (Some(spec_b), Some(_)) => {
            let ds_b = generate_dataset(&replicate_spec(spec_b, run_seed))?;
            let split_b = split(&ds_b, (0.7, 0.1, 0.2), derive_seed(run_seed, "split-b", 0))?;
            let mut ids_b = Vec::with_capacity(split_b.unlabeled.len());
            for (i, id) in split_b.unlabeled.iter().enumerate() {
                let img = ds_b.image(id)?;
                let pixels = match cfg.noise_sigma {
                    Some(sigma) if sigma > 0.0 => {
                        let mut rng = rng_for(ds_b.spec().seed, "inject-noise", i as u64);
                        inject_noise(img, sigma, &mut rng)?.pixels
                    }
                    _ => img.pixels.clone(),
                };
                let pid = format!("{B_PREFIX}{id}");
                images.insert(pid.clone(), pixels);
                ids_b.push(pid);
            }
            (Some(ds_b), ids_b)
        }
        _ => (None, Vec::new()),
    };
    let pool_total = pool.unlabeled.len();
    Ok(SeedWorld {
        dataset,
        dataset_b,
        images,
        unlabeled: pool.unlabeled,
        pool_b,
        validation,
        test,
        pool_total,
    })
}

/// Class-stratified 10% seed set (ids only; labels are queried by the
/// caller so the budget accounting stays visible).
fn draw_seed_ids(world: &SeedWorld, run_seed: u64) -> Result<Vec<String>> {
    let n_seed = ((world.pool_total as f64 * 0.10).round() as usize).clamp(2, world.pool_total);
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for id in &world.unlabeled {
        if world.dataset.internal_label(id)? == 1 {
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
    let n_pos = ((n_seed as f64 * pos.len() as f64 / world.pool_total as f64).round() as usize)
        .min(pos.len())
        .max(usize::from(!pos.is_empty()));
    let n_neg = (n_seed - n_pos.min(n_seed)).min(neg.len());
    let mut chosen: Vec<String> = pos.into_iter().take(n_pos).collect();
    chosen.extend(neg.into_iter().take(n_neg));
    chosen.sort();
    Ok(chosen)
}

struct DecileRecorder {
    next_decile: usize,
    pool_total: usize,
    fsl_test: f64,
}

impl DecileRecorder {
    fn record(
        &mut self,
        labeled_n: usize,
        auc_val: f64,
        auc_test: f64,
        points: &mut Vec<CurvePoint>,
        crossing: &mut Option<f64>,
    ) {
        let fraction = labeled_n as f64 / self.pool_total as f64;
        while self.next_decile <= 10 && fraction + 1e-9 >= self.next_decile as f64 / 10.0 {
            let decile = self.next_decile as f64 / 10.0;
            points.push(CurvePoint {
                fraction: decile,
                auc_val,
                auc_test,
            });
            if crossing.is_none() && auc_test >= self.fsl_test {
                *crossing = Some(decile);
            }
            self.next_decile += 1;
        }
    }
}

fn run_one_seed(cfg: &ALConfig, run_seed: u64) -> Result<SeedRun> {
    let mut world = prepare_world(cfg, run_seed)?;
    let seed_ids = draw_seed_ids(&world, run_seed)?;
    let seed_set: HashSet<String> = seed_ids.iter().cloned().collect();
    world.unlabeled.retain(|id| !seed_set.contains(id));
    let mut labeled: Vec<(String, u8)> = Vec::with_capacity(seed_ids.len());
    for id in &seed_ids {
        let label = world.oracle_label(id)?;
        labeled.push((id.clone(), label));
    }

    let train_items = |world: &SeedWorld, labeled: &[(String, u8)]| -> Vec<TrainSample> {
        labeled
            .iter()
            .map(|(id, y)| (world.image_of(id), *y))
            .collect()
    };

    // Seed model M0.
    let init = Classifier::new(
        cfg.dataset.size,
        cfg.dropout_p,
        cfg.variance_head,
        derive_seed(run_seed, "init", 0),
    );
    let m0_cfg = TrainConfig {
        seed: derive_seed(run_seed, "m0", 0),
        ..cfg.train.clone()
    };
    let seed_items = train_items(&world, &labeled);
    let (mut model, _) = train_classifier(&init, &seed_items, &world.validation, None, &m0_cfg)?;

    // FSL reference: from-scratch training on the full pool (generator-side
    // labels; the reference experiment sits outside the AL query budget).
    let fsl_items: Vec<TrainSample> = {
        let mut ids: Vec<String> = labeled.iter().map(|(id, _)| id.clone()).collect();
        ids.extend(world.unlabeled.iter().cloned());
        ids.sort();
        ids.iter()
            .map(|id| Ok((world.image_of(id), world.internal_label(id)?)))
            .collect::<Result<_>>()?
    };
    let fsl_init = Classifier::new(
        cfg.dataset.size,
        cfg.dropout_p,
        cfg.variance_head,
        derive_seed(run_seed, "fsl-init", 0),
    );
    let fsl_cfg = TrainConfig {
        seed: derive_seed(run_seed, "fsl", 0),
        ..cfg.train.clone()
    };
    let (fsl_model, _) =
        train_classifier(&fsl_init, &fsl_items, &world.validation, None, &fsl_cfg)?;
    let fsl_val = classifier_auc(&fsl_model, &world.validation)?;
    let fsl_test = classifier_auc(&fsl_model, &world.test)?;

    // Strategy context.
    let mut context_queries = 0u64;
    let mut deep_ctx: Option<DeepContext> = None;
    let mut glcm_directions = None;
    let mut shape_directions = None;
    match cfg.strategy.kind {
        StrategyKind::DeepFeatures => {
            let ctx = build_deep_context(
                cfg,
                run_seed,
                &model,
                &seed_items,
                &world.validation,
                cfg.strategy.on_raw_image,
                0,
            )?;
            context_queries += ctx.queries;
            deep_ctx = Some(ctx);
        }
        StrategyKind::PyradGlcm | StrategyKind::PyradShape => {
            let (dirs, q) = calibrate_family_directions(
                cfg,
                run_seed,
                &model,
                &seed_items,
                &world.validation,
                cfg.strategy.kind,
                cfg.strategy.on_raw_image,
            )?;
            context_queries += q;
            if cfg.strategy.kind == StrategyKind::PyradGlcm {
                glcm_directions = Some(dirs);
            } else {
                shape_directions = Some(dirs);
            }
        }
        _ => {}
    }

    let mut auc_val = classifier_auc(&model, &world.validation)?;
    let mut auc_test = classifier_auc(&model, &world.test)?;
    let mut points = Vec::new();
    let mut iterations = Vec::new();
    let mut crossing_fraction = None;
    let mut iterations_to_cross = if auc_test >= fsl_test { Some(0) } else { None };
    let mut recorder = DecileRecorder {
        next_decile: 1,
        pool_total: world.pool_total,
        fsl_test,
    };
    recorder.record(
        labeled.len(),
        auc_val,
        auc_test,
        &mut points,
        &mut crossing_fraction,
    );

    let mut switched_at = None;
    let mut iteration = 0usize;
    loop {
        let fraction = labeled.len() as f64 / world.pool_total as f64;
        if fraction + 1e-9 >= cfg.max_fraction {
            break;
        }
        if cfg.stop_at_crossing && crossing_fraction.is_some() {
            break;
        }
        // Dataset switch: once the labeled fraction reaches the switch
        // point, the remaining queries come from dataset B's pool.
        if let Some(switch_at) = cfg.switch_fraction {
            if switched_at.is_none() && world.dataset_b.is_some() && fraction + 1e-9 >= switch_at
            {
                world.unlabeled = std::mem::take(&mut world.pool_b);
                switched_at = Some(fraction);
            }
        }
        if world.unlabeled.is_empty() {
            break;
        }

        let pool_images: Vec<(String, Grid)> = world
            .unlabeled
            .iter()
            .map(|id| (id.clone(), world.image_of(id)))
            .collect();
        let score_ctx = ScoreContext {
            saliency_method: cfg.saliency,
            mc_samples: cfg.mc_samples,
            random_seed: derive_seed(run_seed, "random-strategy", 0),
            uncertainty_agg: cfg.uncertainty_agg,
            autoencoder: deep_ctx.as_ref().map(|c| &c.autoencoder),
            forest: deep_ctx.as_ref().map(|c| &c.forest),
            glcm_directions: glcm_directions.clone(),
            shape_directions: shape_directions.clone(),
        };
        let sheet = score_pool(cfg.strategy, &model, &pool_images, &score_ctx)?;
        let n_query = cfg
            .batch_size
            .min(world.unlabeled.len())
            .min(((cfg.max_fraction * world.pool_total as f64).round() as usize)
                .saturating_sub(labeled.len()));
        if n_query == 0 {
            break;
        }
        let batch = select_top_n(&sheet, n_query, cfg.strategy.reversed);
        let batch_set: HashSet<String> = batch.iter().cloned().collect();
        world.unlabeled.retain(|id| !batch_set.contains(id));
        for id in &batch {
            let label = world.oracle_label(id)?;
            labeled.push((id.clone(), label));
        }

        // Retrain on everything labeled so far.
        let items = train_items(&world, &labeled);
        let retrain_cfg = TrainConfig {
            max_epochs: if cfg.retrain_scratch {
                cfg.train.max_epochs
            } else {
                cfg.fine_tune_epochs
            },
            seed: derive_seed(run_seed, "retrain", iteration as u64),
            ..cfg.train.clone()
        };
        let start = if cfg.retrain_scratch {
            Classifier::new(
                cfg.dataset.size,
                cfg.dropout_p,
                cfg.variance_head,
                derive_seed(run_seed, "scratch-init", iteration as u64),
            )
        } else {
            model.clone()
        };
        let (new_model, _) =
            train_classifier(&start, &items, &world.validation, None, &retrain_cfg)?;
        model = new_model;
        if cfg.refresh_rf && cfg.strategy.kind == StrategyKind::DeepFeatures {
            let ctx = build_deep_context(
                cfg,
                run_seed,
                &model,
                &items,
                &world.validation,
                cfg.strategy.on_raw_image,
                iteration as u64 + 1,
            )?;
            context_queries += ctx.queries;
            deep_ctx = Some(ctx);
        }
        auc_val = classifier_auc(&model, &world.validation)?;
        auc_test = classifier_auc(&model, &world.test)?;
        iteration += 1;
        iterations.push(IterationPoint {
            iteration,
            labeled: labeled.len(),
            auc_val,
            auc_test,
            selected: batch,
        });
        if iterations_to_cross.is_none() && auc_test >= fsl_test {
            iterations_to_cross = Some(iteration);
        }
        recorder.record(
            labeled.len(),
            auc_val,
            auc_test,
            &mut points,
            &mut crossing_fraction,
        );
        if let Some(target) = cfg.auc_target {
            if auc_val >= target {
                break;
            }
        }
    }

    Ok(SeedRun {
        seed: run_seed,
        points,
        iterations,
        fsl_val,
        fsl_test,
        crossing_fraction,
        iterations_to_cross,
        oracle_queries: world.query_count(),
        context_queries,
        switched_at,
        deep_journal: deep_ctx.as_ref().map(|c| c.journal.clone()),
        aborted: false,
        abort_reason: None,
    })
}

/// Run the active-learning loop for every seed (in parallel). A failing
/// seed aborts that seed — flagged in the output — not the experiment.
pub fn run_active_learning(cfg: &ALConfig) -> Result<LearningCurve> {
    cfg.validate()?;
    let runs: Vec<SeedRun> = cfg
        .seeds
        .par_iter()
        .map(|&seed| match run_one_seed(cfg, seed) {
            Ok(run) => run,
            Err(e) => SeedRun {
                seed,
                points: Vec::new(),
                iterations: Vec::new(),
                fsl_val: f64::NAN,
                fsl_test: f64::NAN,
                crossing_fraction: None,
                iterations_to_cross: None,
                oracle_queries: 0,
                context_queries: 0,
                switched_at: None,
                deep_journal: None,
                aborted: true,
                abort_reason: Some(e.to_string()),
            },
        })
        .collect();
    Ok(LearningCurve {
        strategy: cfg.strategy,
        runs,
    })
}

/// Batch-size sweep row.
#[derive(Clone, Debug, Serialize)]
pub struct BatchSweepRow {
    pub batch_size: usize,
    pub crossing_fraction: f64,
    pub iterations_to_cross: f64,
}

/// Rerun the loop per batch size, reporting both the pool fraction and the
/// iteration count at the FSL crossing.
pub fn batch_size_sweep(cfg: &ALConfig, sizes: &[usize]) -> Result<Vec<BatchSweepRow>> {
    if sizes.is_empty() {
        return Err(Error::invalid("sizes", "must be non-empty"));
    }
    let mut rows = Vec::new();
    for &size in sizes {
        let mut c = cfg.clone();
        c.batch_size = size;
        c.stop_at_crossing = true;
        let curve = run_active_learning(&c)?;
        rows.push(BatchSweepRow {
            batch_size: size,
            crossing_fraction: curve.mean_crossing_fraction(),
            iterations_to_cross: curve.mean_iterations_to_cross(),
        });
    }
    Ok(rows)
}

/// Dataset-switch run: pool drawn from A until the labeled fraction reaches
/// the switch point, then from B.
pub fn dataset_switch_run(
    cfg: &ALConfig,
    spec_b: &DatasetSpec,
    switch_fraction: f64,
) -> Result<LearningCurve> {
    let mut c = cfg.clone();
    c.dataset_b = Some(spec_b.clone());
    c.switch_fraction = Some(switch_fraction);
    run_active_learning(&c)
}

/// Noise sweep: one curve per sigma. Noise is injected into pool images
/// before saliency/feature computation and training; evaluation sets stay
/// clean.
pub fn noise_sweep(cfg: &ALConfig, sigmas: &[f64]) -> Result<Vec<(f64, LearningCurve)>> {
    let mut out = Vec::new();
    for &sigma in sigmas {
        let mut c = cfg.clone();
        c.noise_sigma = Some(sigma);
        out.push((sigma, run_active_learning(&c)?));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthdata::{Task, Vendor};

    pub(crate) fn tiny_dataset_spec(seed: u64) -> DatasetSpec {
        DatasetSpec {
            n_images: 60,
            size: 16,
            positive_fraction: 0.5,
            contrast: 0.5,
            noise_sigma: 0.04,
            vendor: Vendor::A,
            task: Task::EffusionLike,
            seed,
        }
    }

    pub(crate) fn quick_config(strategy: StrategyId, seed: u64) -> ALConfig {
        let mut cfg = ALConfig::defaults(tiny_dataset_spec(seed), strategy);
        cfg.seeds = vec![1];
        cfg.batch_size = 8;
        cfg.train = TrainConfig {
            learning_rate: 3e-3,
            max_epochs: 12,
            patience: 0,
            minibatch: 8,
            augment: false,
            seed: 0,
            ..TrainConfig::default()
        };
        cfg.fine_tune_epochs = 6;
        cfg.ae_epochs = 8;
        cfg.k_clusters = 4;
        cfg.dropout_p = 0.2;
        cfg
    }

    #[test]
    fn random_run_budget_accounting_and_pool_shrinkage() {
        let cfg = quick_config(StrategyId::new(StrategyKind::Random), 3);
        let curve = run_active_learning(&cfg).unwrap();
        assert_eq!(curve.runs.len(), 1);
        let run = &curve.runs[0];
        assert!(!run.aborted, "{:?}", run.abort_reason);
        // Oracle budget: |seed set| + t * batch_size (pool 42, seed 4).
        let n_seed = (42.0f64 * 0.1).round() as u64;
        let t = run.iterations.len() as u64;
        let labeled_total = run.iterations.last().map(|i| i.labeled).unwrap_or(0) as u64;
        assert_eq!(run.oracle_queries, labeled_total);
        assert!(run.oracle_queries <= n_seed + t * 8);
        // No sample selected twice.
        let mut seen = std::collections::HashSet::new();
        for it in &run.iterations {
            for id in &it.selected {
                assert!(seen.insert(id.clone()), "resampled {id}");
            }
        }
        // Deciles strictly increasing, ending at 1.0.
        let fractions: Vec<f64> = run.points.iter().map(|p| p.fraction).collect();
        for w in fractions.windows(2) {
            assert!(w[1] > w[0]);
        }
        assert!((fractions.last().unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn trivially_met_auc_target_terminates_after_first_iteration() {
        // Repeat-until semantics: the target is checked after each
        // iteration, so even a trivially met target runs exactly one.
        let mut cfg = quick_config(StrategyId::new(StrategyKind::Random), 4);
        cfg.auc_target = Some(0.51);
        let curve = run_active_learning(&cfg).unwrap();
        let run = &curve.runs[0];
        assert!(!run.aborted);
        assert_eq!(run.iterations.len(), 1);
    }

    #[test]
    fn identical_config_reproduces_identical_curves() {
        let cfg = quick_config(StrategyId::new(StrategyKind::Kurtosis), 5);
        let a = run_active_learning(&cfg).unwrap();
        let b = run_active_learning(&cfg).unwrap();
        let ser_a = serde_json::to_string(&a).unwrap();
        let ser_b = serde_json::to_string(&b).unwrap();
        assert_eq!(ser_a, ser_b);
    }

    #[test]
    fn batch_size_equal_pool_single_iteration() {
        let mut cfg = quick_config(StrategyId::new(StrategyKind::Random), 6);
        cfg.batch_size = 60;
        let curve = run_active_learning(&cfg).unwrap();
        let run = &curve.runs[0];
        assert!(!run.aborted);
        assert_eq!(run.iterations.len(), 1);
        assert_eq!(run.iterations[0].labeled, 42);
    }

    #[test]
    fn switch_fraction_one_equals_pure_a_run() {
        let base = quick_config(StrategyId::new(StrategyKind::Kurtosis), 7);
        let pure = run_active_learning(&base).unwrap();
        let mut switched = base.clone();
        switched.dataset_b = Some(tiny_dataset_spec(99));
        switched.switch_fraction = Some(1.0);
        let with_switch = run_active_learning(&switched).unwrap();
        assert_eq!(
            serde_json::to_string(&pure.runs[0].points).unwrap(),
            serde_json::to_string(&with_switch.runs[0].points).unwrap()
        );
    }

    #[test]
    fn switch_run_draws_from_b_after_switch() {
        let mut cfg = quick_config(StrategyId::new(StrategyKind::Random), 8);
        cfg.dataset_b = Some(tiny_dataset_spec(123));
        cfg.switch_fraction = Some(0.5);
        let curve = run_active_learning(&cfg).unwrap();
        let run = &curve.runs[0];
        assert!(!run.aborted, "{:?}", run.abort_reason);
        assert!(run.switched_at.is_some());
        let post_switch_ids: Vec<&String> = run
            .iterations
            .iter()
            .flat_map(|i| i.selected.iter())
            .filter(|id| id.starts_with(B_PREFIX))
            .collect();
        assert!(!post_switch_ids.is_empty());
        // Pre-switch selections never touch B.
        let switch_point = run.switched_at.unwrap();
        for it in &run.iterations {
            let frac_before = (it.labeled - it.selected.len()) as f64 / 42.0;
            if frac_before < switch_point - 1e-9 {
                assert!(it.selected.iter().all(|id| !id.starts_with(B_PREFIX)));
            }
        }
    }

    #[test]
    fn noise_sigma_zero_equals_no_noise() {
        let base = quick_config(StrategyId::new(StrategyKind::Kurtosis), 9);
        let clean = run_active_learning(&base).unwrap();
        let mut noisy = base.clone();
        noisy.noise_sigma = Some(0.0);
        let zero = run_active_learning(&noisy).unwrap();
        assert_eq!(
            serde_json::to_string(&clean.runs[0].points).unwrap(),
            serde_json::to_string(&zero.runs[0].points).unwrap()
        );
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut cfg = quick_config(StrategyId::new(StrategyKind::Random), 1);
        cfg.auc_target = Some(0.4);
        assert!(run_active_learning(&cfg).is_err());
        let mut cfg = quick_config(StrategyId::new(StrategyKind::Random), 1);
        cfg.switch_fraction = Some(0.5);
        assert!(run_active_learning(&cfg).is_err());
    }
}
