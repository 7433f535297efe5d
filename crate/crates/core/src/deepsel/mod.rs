//! Deep-saliency-feature ranking: ordinal k-means over 32-dim latents,
//! representative selection, ΔAUC-based self-supervised cluster ranking,
//! label/rank propagation, and the online random forest scoring stage.

mod forest;
mod kmeans;

pub use forest::{rf_rank, ForestParams, Node, OnlineForest, Tree};
pub use kmeans::{ordinal_cluster, ordinal_cluster_with_trace, representatives, sse, ClusterModel};

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::nnet::{classifier_auc, train_classifier, Classifier, TrainConfig, TrainSample};
use crate::rng::derive_seed;

/// Everything a ΔAUC probe needs: the frozen base model, its training set,
/// the fixed validation set, and the fine-tune budget.
pub struct ProbeContext<'a> {
    pub base: &'a Classifier,
    pub base_train: &'a [TrainSample],
    pub validation: &'a [TrainSample],
    pub train_cfg: TrainConfig,
}

impl ProbeContext<'_> {
    /// Fine-tune budget for one probe: 5 epochs, no early stop, no
    /// augmentation. All probes share the seed (and therefore the shuffle
    /// permutation — probe training sets share one size), so ΔAUC
    /// differences are attributable to the added sample.
    pub fn probe_cfg(cfg: &TrainConfig, seed: u64) -> TrainConfig {
        TrainConfig {
            max_epochs: 5,
            patience: 0,
            augment: false,
            seed,
            ..cfg.clone()
        }
    }
}

/// Signed AUC change per cluster and the derived ordinal labels (1 = most
/// informative).
#[derive(Clone, Debug, Serialize)]
pub struct ClusterRanking {
    pub delta_auc: Vec<f64>,
    pub ordinal_label: Vec<usize>,
}

/// Measure each representative independently from the same base snapshot:
/// clone the base, add the labeled representative, fine-tune, and record the
/// validation-AUC change. Clusters are ranked by decreasing ΔAUC (ties keep
/// cluster-index order).
pub fn rank_clusters_by_delta_auc(
    ctx: &ProbeContext,
    reps: &[(Grid, u8)],
) -> Result<ClusterRanking> {
    if ctx.validation.is_empty() {
        return Err(Error::invalid("validation", "must be non-empty"));
    }
    let auc_before = classifier_auc(ctx.base, ctx.validation)?;
    // Common random numbers: every probe fine-tunes with the same stream so
    // ΔAUC differences are attributable to the added sample, not to shuffle
    // noise.
    let cfg = ProbeContext::probe_cfg(&ctx.train_cfg, ctx.train_cfg.seed);
    let delta_auc: Vec<f64> = reps
        .par_iter()
        .map(|(image, label)| -> Result<f64> {
            let mut train: Vec<TrainSample> = ctx.base_train.to_vec();
            train.push((image.clone(), *label));
            let (tuned, _) = train_classifier(ctx.base, &train, &[], None, &cfg)?;
            Ok(classifier_auc(&tuned, ctx.validation)? - auc_before)
        })
        .collect::<Result<Vec<f64>>>()?;
    let mut order: Vec<usize> = (0..reps.len()).collect();
    order.sort_by(|&a, &b| {
        delta_auc[b]
            .partial_cmp(&delta_auc[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut ordinal_label = vec![0usize; reps.len()];
    for (rank0, &cluster) in order.iter().enumerate() {
        ordinal_label[cluster] = rank0 + 1;
    }
    Ok(ClusterRanking {
        delta_auc,
        ordinal_label,
    })
}

/// One latent labeled by propagation: the cluster's ordinal informativeness
/// level plus the representative's queried class retained as a pseudo-label.
#[derive(Clone, Debug)]
pub struct PropagatedLabel {
    pub index: usize,
    pub level: usize,
    pub pseudo_class: u8,
}

/// Propagate each cluster's ordinal level and queried class label to every
/// sample assigned to it. Pseudo class labels are retained but not added to
/// classifier training unless the caller opts in.
pub fn propagate(
    model: &ClusterModel,
    ranking: &ClusterRanking,
    queried_classes: &[u8],
) -> Vec<PropagatedLabel> {
    model
        .assignment
        .iter()
        .enumerate()
        .map(|(index, &cluster)| PropagatedLabel {
            index,
            level: ranking.ordinal_label[cluster],
            pseudo_class: queried_classes[cluster],
        })
        .collect()
}

/// One pool sample entering the self-supervised training stage.
#[derive(Clone, Debug)]
pub struct PoolSample {
    pub id: String,
    pub image: Grid,
    pub latent: Vec<f64>,
}

/// Journal record for one self-supervision iteration.
#[derive(Clone, Debug, Serialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub cluster_sizes: Vec<usize>,
    pub representative_ids: Vec<String>,
    pub delta_auc: Vec<f64>,
    pub ordinal_labels: Vec<usize>,
}

/// Result of the self-supervised training stage.
pub struct SelfSupervisedOutcome {
    pub forest: OnlineForest,
    pub journal: Vec<IterationRecord>,
    /// Oracle label queries issued by the stage.
    pub queries: u64,
}

/// The self-supervised training stage: repeatedly cluster the remaining
/// pool latents, query the K representatives, rank clusters by ΔAUC,
/// propagate ordinal labels, update the forest, and remove the
/// representatives, until the pool is exhausted. The base model stays frozen
/// throughout; a final partial iteration with fewer than K samples uses that
/// many clusters.
pub fn run_self_supervised_training(
    samples: &[PoolSample],
    oracle: &(dyn Fn(&str) -> Result<u8> + Sync),
    ctx: &ProbeContext,
    k: usize,
    seed: u64,
) -> Result<SelfSupervisedOutcome> {
    if samples.len() < k {
        return Err(Error::invalid(
            "pool",
            format!("needs at least K = {k} samples, got {}", samples.len()),
        ));
    }
    let mut forest = OnlineForest::new(k, derive_seed(seed, "forest", 0));
    let mut remaining: Vec<usize> = (0..samples.len()).collect();
    let mut journal = Vec::new();
    let mut queries = 0u64;
    let mut iteration = 0usize;
    while !remaining.is_empty() {
        let k_eff = k.min(remaining.len());
        let latents: Vec<Vec<f64>> = remaining
            .iter()
            .map(|&i| samples[i].latent.clone())
            .collect();
        let cluster_model =
            ordinal_cluster(&latents, k_eff, derive_seed(seed, "cluster", iteration as u64))?;
        let reps_local = representatives(&cluster_model, &latents);
        // Query the representative of every cluster.
        let mut rep_images = Vec::with_capacity(k_eff);
        let mut rep_ids = Vec::with_capacity(k_eff);
        let mut rep_classes = Vec::with_capacity(k_eff);
        for &local in &reps_local {
            let global = remaining[local];
            let label = oracle(&samples[global].id)?;
            queries += 1;
            rep_images.push((samples[global].image.clone(), label));
            rep_ids.push(samples[global].id.clone());
            rep_classes.push(label);
        }
        let ranking = rank_clusters_by_delta_auc(ctx, &rep_images)?;
        let propagated = propagate(&cluster_model, &ranking, &rep_classes);
        let labeled: Vec<(Vec<f64>, usize)> = propagated
            .iter()
            .map(|p| (latents[p.index].clone(), p.level))
            .collect();
        forest.update(&labeled)?;
        let cluster_sizes = (0..k_eff)
            .map(|c| cluster_model.assignment.iter().filter(|&&a| a == c).count())
            .collect();
        journal.push(IterationRecord {
            iteration,
            cluster_sizes,
            representative_ids: rep_ids,
            delta_auc: ranking.delta_auc.clone(),
            ordinal_labels: ranking.ordinal_label.clone(),
        });
        // Remove the representatives from the pool (descending local index).
        let mut to_remove: Vec<usize> = reps_local.clone();
        to_remove.sort_unstable_by(|a, b| b.cmp(a));
        for local in to_remove {
            remaining.swap_remove(local);
        }
        remaining.sort_unstable();
        iteration += 1;
    }
    Ok(SelfSupervisedOutcome {
        forest,
        journal,
        queries,
    })
}

/// Write the per-iteration journal as JSON lines.
pub fn write_journal(journal: &[IterationRecord], path: &std::path::Path) -> Result<()> {
    use std::io::Write;
    let mut f = std::fs::File::create(path)?;
    for rec in journal {
        writeln!(f, "{}", serde_json::to_string(rec)?)?;
    }
    Ok(())
}
