// Scratch calibration harness (not part of the deliverable surface).
use ideal::grid::Grid;
use ideal::metrics::roc_auc;
use ideal::nnet::{classifier_auc, train_classifier, Classifier, TrainConfig};
use ideal::rng::derive_seed;
use ideal::synthdata::{generate_dataset, replicate_spec, split, DatasetSpec, Task, Vendor};

fn val_empty() -> Vec<(Grid, u8)> {
    Vec::new()
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let mode = args.get(1).map(|s| s.as_str()).unwrap_or("fsl");
    let size: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(24);
    let contrast: f64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(0.55);
    let lr: f64 = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(3e-3);
    let epochs: usize = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(24);
    let dropout: f64 = args.get(6).and_then(|s| s.parse().ok()).unwrap_or(0.25);
    let var_head: bool = args.get(7).map(|s| s == "vh").unwrap_or(true);
    let minibatch: usize = args.get(8).and_then(|s| s.parse().ok()).unwrap_or(16);

    let spec = DatasetSpec {
        n_images: 200,
        size,
        positive_fraction: 0.6,
        contrast,
        noise_sigma: 0.05,
        vendor: Vendor::A,
        task: Task::EffusionLike,
        seed: 4242,
    };

    match mode {
        "fsl" => {
            for run_seed in 0..3u64 {
                let ds = generate_dataset(&replicate_spec(&spec, run_seed)).unwrap();
                let pool = split(&ds, (0.7, 0.1, 0.2), derive_seed(run_seed, "split", 0)).unwrap();
                let items = |ids: &Vec<String>| -> Vec<(Grid, u8)> {
                    ids.iter()
                        .map(|id| {
                            (
                                ds.image(id).unwrap().pixels.clone(),
                                ds.eval_label(&id).unwrap(),
                            )
                        })
                        .collect()
                };
                let train = items(&pool.unlabeled);
                let val = items(&pool.validation);
                let test = items(&pool.test);
                let cfg = TrainConfig {
                    learning_rate: lr,
                    max_epochs: epochs,
                    patience: 0,
                    minibatch,
                    augment: false,
                    seed: derive_seed(run_seed, "fsl", 0),
                    ..TrainConfig::default()
                };
                let init =
                    Classifier::new(size, dropout, var_head, derive_seed(run_seed, "init", 0));
                let t0 = std::time::Instant::now();
                let (model, log) = train_classifier(&init, &train, &val, None, &cfg).unwrap();
                let auc_val = classifier_auc(&model, &val).unwrap();
                let auc_test = classifier_auc(&model, &test).unwrap();
                // Mean-intensity baseline (should be weak if jitter works).
                let mean_scores: Vec<f64> = test
                    .iter()
                    .map(|(g, _)| g.values().iter().sum::<f64>())
                    .collect();
                let labels: Vec<u8> = test.iter().map(|(_, y)| *y).collect();
                let mean_auc = roc_auc(&mean_scores, &labels).unwrap();
                // Clean-only test AUC.
                let clean: Vec<(Grid, u8)> = pool
                    .test
                    .iter()
                    .filter(|id| {
                        ds.eval_archetype(id).unwrap() == ideal::synthdata::Archetype::Clean
                    })
                    .map(|id| {
                        (
                            ds.image(id).unwrap().pixels.clone(),
                            ds.eval_label(id).unwrap(),
                        )
                    })
                    .collect();
                let clean_auc = classifier_auc(&model, &clean).unwrap_or(f64::NAN);
                println!(
                    "seed {run_seed}: val {auc_val:.3} test {auc_test:.3} clean-test {clean_auc:.3} mean-baseline {mean_auc:.3} train-loss {:.4} ({} epochs, {:.1}s)",
                    log.last().unwrap().train,
                    log.len(),
                    t0.elapsed().as_secs_f64()
                );
            }
        }
        "seed10" => {
            // Learnability from the 10% stratified seed set alone.
            for run_seed in 0..3u64 {
                let ds = generate_dataset(&replicate_spec(&spec, run_seed)).unwrap();
                let pool = split(&ds, (0.7, 0.1, 0.2), derive_seed(run_seed, "split", 0)).unwrap();
                let items = |ids: &[String]| -> Vec<(Grid, u8)> {
                    ids.iter()
                        .map(|id| {
                            (
                                ds.image(id).unwrap().pixels.clone(),
                                ds.eval_label(id).unwrap(),
                            )
                        })
                        .collect()
                };
                let val = items(&pool.validation);
                let n = (pool.unlabeled.len() as f64 * 0.1).round() as usize;
                let seed_ids: Vec<String> = pool.unlabeled.iter().take(n).cloned().collect();
                let train = items(&seed_ids);
                let cfg = TrainConfig {
                    learning_rate: lr,
                    max_epochs: epochs,
                    patience: 0,
                    minibatch: 16,
                    augment: false,
                    seed: derive_seed(run_seed, "m0", 0),
                    ..TrainConfig::default()
                };
                let init = Classifier::new(size, dropout, true, derive_seed(run_seed, "init", 0));
                let (model, _) = train_classifier(&init, &train, &val, None, &cfg).unwrap();
                println!(
                    "seed {run_seed}: m0 val {:.3}",
                    classifier_auc(&model, &val).unwrap()
                );
            }
        }
        "score" => {
            use ideal::saliency::SaliencyMethod;
            use ideal::strategies::{score_pool, total_order, ScoreContext, StrategyId, StrategyKind};
            use ideal::synthdata::Archetype;
            for run_seed in 0..2u64 {
                let ds = generate_dataset(&replicate_spec(&spec, run_seed)).unwrap();
                let pool = split(&ds, (0.7, 0.1, 0.2), derive_seed(run_seed, "split", 0)).unwrap();
                let items = |ids: &[String]| -> Vec<(Grid, u8)> {
                    ids.iter()
                        .map(|id| {
                            (
                                ds.image(id).unwrap().pixels.clone(),
                                ds.eval_label(id).unwrap(),
                            )
                        })
                        .collect()
                };
                let val = items(&pool.validation);
                let n = (pool.unlabeled.len() as f64 * 0.1).round() as usize;
                let seed_ids: Vec<String> = pool.unlabeled.iter().take(n).cloned().collect();
                let train = items(&seed_ids);
                let cfg = TrainConfig {
                    learning_rate: lr,
                    max_epochs: epochs,
                    patience: 0,
                    minibatch,
                    augment: false,
                    seed: derive_seed(run_seed, "m0", 0),
                    ..TrainConfig::default()
                };
                let init =
                    Classifier::new(size, dropout, var_head, derive_seed(run_seed, "init", 0));
                let (model, _) = train_classifier(&init, &train, &val, None, &cfg).unwrap();
                println!(
                    "seed {run_seed}: m0 val auc {:.3}",
                    classifier_auc(&model, &val).unwrap()
                );
                let group = |id: &str| -> String {
                    let a = ds.eval_archetype(id).unwrap();
                    let y = ds.eval_label(id).unwrap();
                    let tag = match a {
                        Archetype::Clean => "clean",
                        Archetype::Washed => "washed",
                        Archetype::Speckled => "speck",
                    };
                    format!("{tag}-{}", if y == 1 { "pos" } else { "neg" })
                };
                let pool_images: Vec<(String, Grid)> = pool
                    .unlabeled
                    .iter()
                    .map(|id| (id.clone(), ds.image(id).unwrap().pixels.clone()))
                    .collect();
                let ctx = ScoreContext {
                    saliency_method: SaliencyMethod::DeepTaylor,
                    random_seed: 1,
                    ..ScoreContext::default()
                };
                for kind in [StrategyKind::Kurtosis, StrategyKind::Pyrad1st] {
                    let sheet =
                        score_pool(StrategyId::new(kind), &model, &pool_images, &ctx).unwrap();
                    let order = total_order(&sheet);
                    let mut counts: std::collections::BTreeMap<String, usize> = Default::default();
                    for (id, _) in order.iter().take(16) {
                        *counts.entry(group(id)).or_default() += 1;
                    }
                    println!("  {kind:?} top-16: {counts:?}");
                    let mut bottom: std::collections::BTreeMap<String, usize> = Default::default();
                    for (id, _) in order.iter().rev().take(16) {
                        *bottom.entry(group(id)).or_default() += 1;
                    }
                    println!("  {kind:?} bottom-16: {bottom:?}");
                }
                // Pool composition for reference.
                let mut total: std::collections::BTreeMap<String, usize> = Default::default();
                for id in &pool.unlabeled {
                    *total.entry(group(id)).or_default() += 1;
                }
                println!("  pool composition: {total:?}");
            }
        }
        "dauc" => {
            // Per-sample ΔAUC signal quality: brute-force probes on 40
            // pool samples grouped by archetype.
            use ideal::deepsel::{rank_clusters_by_delta_auc, ProbeContext};
            use ideal::synthdata::Archetype;
            let run_seed = 0u64;
            let ds = generate_dataset(&replicate_spec(&spec, run_seed)).unwrap();
            let pool = split(&ds, (0.7, 0.1, 0.2), derive_seed(run_seed, "split", 0)).unwrap();
            let items = |ids: &[String]| -> Vec<(Grid, u8)> {
                ids.iter()
                    .map(|id| {
                        (
                            ds.image(id).unwrap().pixels.clone(),
                            ds.eval_label(id).unwrap(),
                        )
                    })
                    .collect()
            };
            // Big curated probe validation from a disjoint eval world.
            let eval_spec = replicate_spec(&spec, 777);
            let eval_ds = generate_dataset(&eval_spec).unwrap();
            let probe_val: Vec<(Grid, u8)> = eval_ds
                .images()
                .iter()
                .map(|img| (img.pixels.clone(), eval_ds.eval_label(&img.id).unwrap()))
                .collect();
            let n = (pool.unlabeled.len() as f64 * 0.1).round() as usize;
            let seed_ids: Vec<String> = pool.unlabeled.iter().take(n).cloned().collect();
            let train = items(&seed_ids);
            let cfg = TrainConfig {
                learning_rate: lr,
                max_epochs: epochs,
                patience: 0,
                minibatch,
                augment: false,
                seed: derive_seed(run_seed, "m0", 0),
                ..TrainConfig::default()
            };
            let init = Classifier::new(size, dropout, var_head, derive_seed(run_seed, "init", 0));
            let (model, _) = train_classifier(&init, &train, &val_empty(), None, &cfg).unwrap();
            let ctx = ProbeContext {
                base: &model,
                base_train: &train,
                validation: &probe_val,
                train_cfg: TrainConfig {
                    learning_rate: lr,
                    minibatch,
                    augment: false,
                    seed: 5,
                    ..TrainConfig::default()
                },
            };
            let probe_ids: Vec<String> = pool.unlabeled.iter().skip(n).take(40).cloned().collect();
            let reps: Vec<(Grid, u8)> = items(&probe_ids);
            let t0 = std::time::Instant::now();
            let ranking = rank_clusters_by_delta_auc(&ctx, &reps).unwrap();
            println!("40 probes in {:.1}s", t0.elapsed().as_secs_f64());
            // Reproducibility: probe the same samples under a different
            // fine-tune seed and correlate.
            let ctx2 = ProbeContext {
                base: &model,
                base_train: &train,
                validation: &probe_val,
                train_cfg: TrainConfig {
                    learning_rate: lr,
                    minibatch,
                    augment: false,
                    seed: 999,
                    ..TrainConfig::default()
                },
            };
            let ranking2 = rank_clusters_by_delta_auc(&ctx2, &reps).unwrap();
            let corr = ideal::metrics::spearman(&ranking.delta_auc, &ranking2.delta_auc);
            println!("  probe-seed spearman reproducibility: {corr:.3}");
            let mut by_group: std::collections::BTreeMap<String, Vec<f64>> = Default::default();
            for (i, id) in probe_ids.iter().enumerate() {
                let a = ds.eval_archetype(id).unwrap();
                let y = ds.eval_label(id).unwrap();
                let tag = format!(
                    "{}-{}",
                    match a {
                        Archetype::Clean => "clean",
                        Archetype::Washed => "washed",
                        Archetype::Speckled => "speck",
                    },
                    if y == 1 { "pos" } else { "neg" }
                );
                by_group.entry(tag).or_default().push(ranking.delta_auc[i]);
            }
            for (tag, vals) in by_group {
                let mean = vals.iter().sum::<f64>() / vals.len() as f64;
                println!("  {tag:12} n={:2} mean dAUC {mean:+.4}", vals.len());
            }
        }
        "alg2" => {
            use ideal::deepsel::{
                rank_clusters_by_delta_auc, rf_rank, run_self_supervised_training, PoolSample,
                ProbeContext,
            };
            use ideal::nnet::{map_to_ae_input, train_autoencoder, AeTrainConfig};
            use ideal::saliency::{compute, SaliencyMethod};
            let run_seed = 0u64;
            let ds = generate_dataset(&replicate_spec(&spec, run_seed)).unwrap();
            let pool = split(&ds, (0.7, 0.1, 0.2), derive_seed(run_seed, "split", 0)).unwrap();
            let items = |ids: &[String]| -> Vec<(Grid, u8)> {
                ids.iter()
                    .map(|id| {
                        (
                            ds.image(id).unwrap().pixels.clone(),
                            ds.eval_label(id).unwrap(),
                        )
                    })
                    .collect()
            };
            let eval_ds = generate_dataset(&replicate_spec(&spec, 777)).unwrap();
            let probe_val: Vec<(Grid, u8)> = eval_ds
                .images()
                .iter()
                .map(|img| (img.pixels.clone(), eval_ds.eval_label(&img.id).unwrap()))
                .collect();
            let n = (pool.unlabeled.len() as f64 * 0.1).round() as usize;
            let seed_ids: Vec<String> = pool.unlabeled.iter().take(n).cloned().collect();
            let train = items(&seed_ids);
            let cfg = TrainConfig {
                learning_rate: lr,
                max_epochs: epochs,
                patience: 0,
                minibatch,
                augment: false,
                seed: derive_seed(run_seed, "m0", 0),
                ..TrainConfig::default()
            };
            let init = Classifier::new(size, dropout, var_head, derive_seed(run_seed, "init", 0));
            let (model, _) = train_classifier(&init, &train, &[], None, &cfg).unwrap();
            // 100-sample pool.
            let pool_ids: Vec<String> = pool.unlabeled.iter().skip(n).take(100).cloned().collect();
            let t0 = std::time::Instant::now();
            let maps: Vec<Grid> = pool_ids
                .iter()
                .map(|id| {
                    let img = &ds.image(id).unwrap().pixels;
                    let class = model.predicted_class(img).unwrap();
                    compute(SaliencyMethod::DeepTaylor, &model, img, id, class)
                        .unwrap()
                        .values
                })
                .collect();
            let (ae, _) = train_autoencoder(
                &maps,
                &AeTrainConfig {
                    epochs: 20,
                    seed: 1,
                    ..AeTrainConfig::default()
                },
            )
            .unwrap();
            println!("maps+AE in {:.1}s", t0.elapsed().as_secs_f64());
            let samples: Vec<PoolSample> = pool_ids
                .iter()
                .zip(&maps)
                .map(|(id, map)| PoolSample {
                    id: id.clone(),
                    image: ds.image(id).unwrap().pixels.clone(),
                    latent: ae.encode_input(&map_to_ae_input(map)),
                })
                .collect();
            let probe_ctx = ProbeContext {
                base: &model,
                base_train: &train,
                validation: &probe_val,
                train_cfg: TrainConfig {
                    learning_rate: lr,
                    minibatch,
                    augment: false,
                    seed: 5,
                    ..TrainConfig::default()
                },
            };
            let oracle = |id: &str| ds.oracle_label(id);
            let t0 = std::time::Instant::now();
            let out =
                run_self_supervised_training(&samples, &oracle, &probe_ctx, 10, 99).unwrap();
            println!(
                "alg2: {} iterations, {} queries in {:.1}s",
                out.journal.len(),
                out.queries,
                t0.elapsed().as_secs_f64()
            );
            // Brute-force per-sample sweep.
            let t0 = std::time::Instant::now();
            let reps: Vec<(Grid, u8)> = items(&pool_ids);
            let sweep = rank_clusters_by_delta_auc(&probe_ctx, &reps).unwrap();
            println!("brute-force sweep in {:.1}s", t0.elapsed().as_secs_f64());
            // Top-decile precision.
            let latents: Vec<Vec<f64>> = samples.iter().map(|s| s.latent.clone()).collect();
            let scores = rf_rank(&out.forest, &latents);
            let decile = 10;
            let mut rf_order: Vec<usize> = (0..100).collect();
            rf_order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());
            let rf_top: std::collections::HashSet<usize> =
                rf_order[..decile].iter().cloned().collect();
            let mut true_order: Vec<usize> = (0..100).collect();
            true_order
                .sort_by(|&a, &b| sweep.delta_auc[b].partial_cmp(&sweep.delta_auc[a]).unwrap());
            let true_top: std::collections::HashSet<usize> =
                true_order[..decile].iter().cloned().collect();
            let precision = rf_top.intersection(&true_top).count() as f64 / decile as f64;
            println!("top-decile precision: {precision:.2}");
            let corr = ideal::metrics::spearman(
                &scores.iter().map(|s| -s).collect::<Vec<_>>(),
                &sweep.delta_auc,
            );
            println!("rf-score vs true dAUC spearman: {corr:.3}");
        }
        "seg" => {
            use ideal::segharness::{
                intensity_threshold_baseline, mean_dice, train_segmenter, SegModel,
            };
            let mut seg_spec = spec.clone();
            seg_spec.task = Task::GlandSeg;
            for run_seed in 0..3u64 {
                let ds = generate_dataset(&replicate_spec(&seg_spec, run_seed)).unwrap();
                let pool = split(&ds, (0.7, 0.1, 0.2), derive_seed(run_seed, "split", 0)).unwrap();
                let pairs = |ids: &[String]| -> Vec<(Grid, ideal::grid::Mask)> {
                    ids.iter()
                        .map(|id| {
                            (
                                ds.image(id).unwrap().pixels.clone(),
                                ds.eval_mask(id).unwrap(),
                            )
                        })
                        .collect()
                };
                let train = pairs(&pool.unlabeled);
                let val = pairs(&pool.validation);
                let cfg = TrainConfig {
                    learning_rate: lr,
                    max_epochs: epochs,
                    patience: 0,
                    minibatch,
                    augment: false,
                    seed: derive_seed(run_seed, "seg", 0),
                    ..TrainConfig::default()
                };
                let init = SegModel::new(size, derive_seed(run_seed, "seg-init", 0));
                let t0 = std::time::Instant::now();
                let (model, _) = train_segmenter(&init, &train, &[], &cfg).unwrap();
                let d_val = mean_dice(&model, &val).unwrap();
                let baseline = intensity_threshold_baseline(&val).unwrap();
                println!(
                    "seed {run_seed}: full-pool val dice {d_val:.3} | otsu baseline {baseline:.3} ({:.1}s)",
                    t0.elapsed().as_secs_f64()
                );
            }
        }
        other => eprintln!("unknown mode {other}"),
    }
}
