//! Online random forest over informativeness levels 1..K.
//!
//! Online bagging (each sample presented Poisson(1) times per tree) with
//! extremely randomized one-shot splits: a leaf that has buffered enough
//! samples evaluates a handful of random (feature, threshold) candidates and
//! splits once on the best information gain. Existing splits are never
//! revisited, so incremental updates extend rather than rebuild the forest.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

use crate::error::{Error, Result};
use crate::rng::{hash_f64_slice, rng_for};

#[derive(Clone, Debug)]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        depth: usize,
        /// Class histogram over levels 1..K (index level−1).
        counts: Vec<u64>,
        /// Samples buffered at this leaf since its creation.
        buffer: Vec<(Vec<f64>, usize)>,
    },
}

#[derive(Clone, Debug)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    fn new(k: usize) -> Self {
        Tree {
            nodes: vec![Node::Leaf {
                depth: 0,
                counts: vec![0; k],
                buffer: Vec::new(),
            }],
        }
    }

    fn leaf_for(&self, x: &[f64]) -> usize {
        let mut idx = 0usize;
        loop {
            match &self.nodes[idx] {
                Node::Leaf { .. } => return idx,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    idx = if x[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }

    fn n_splits(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, Node::Split { .. }))
            .count()
    }
}

#[derive(Clone, Debug)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_split: usize,
    pub n_candidates: usize,
    pub min_gain: f64,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_trees: 25,
            max_depth: 12,
            min_split: 10,
            n_candidates: 16,
            min_gain: 1e-3,
        }
    }
}

/// Incrementally trained forest predicting an expected informativeness level.
#[derive(Clone, Debug)]
pub struct OnlineForest {
    pub k_levels: usize,
    pub params: ForestParams,
    pub trees: Vec<Tree>,
    seed: u64,
    update_counter: u64,
}

impl OnlineForest {
    pub fn new(k_levels: usize, seed: u64) -> Self {
        Self::with_params(k_levels, seed, ForestParams::default())
    }

    pub fn with_params(k_levels: usize, seed: u64, params: ForestParams) -> Self {
        let trees = (0..params.n_trees).map(|_| Tree::new(k_levels)).collect();
        OnlineForest {
            k_levels,
            params,
            trees,
            seed,
            update_counter: 0,
        }
    }

    /// Present each labeled latent to each tree Poisson(1) times; split
    /// leaves that have buffered at least `min_split` samples when the best
    /// random candidate's information gain clears `min_gain`.
    pub fn update(&mut self, samples: &[(Vec<f64>, usize)]) -> Result<()> {
        for (_, level) in samples {
            if *level < 1 || *level > self.k_levels {
                return Err(Error::invalid(
                    "level",
                    format!("must lie in 1..={}, got {level}", self.k_levels),
                ));
            }
        }
        let update_id = self.update_counter;
        self.update_counter += 1;
        if samples.is_empty() {
            return Ok(());
        }
        let poisson = Poisson::new(1.0f64).unwrap();
        for t in 0..self.trees.len() {
            let mut rng = rng_for(self.seed, "rf-update", update_id * 1000 + t as u64);
            for (x, level) in samples {
                let n: f64 = poisson.sample(&mut rng);
                for _ in 0..n as u64 {
                    self.present(t, x, *level, &mut rng);
                }
            }
        }
        Ok(())
    }

    fn present(&mut self, tree: usize, x: &[f64], level: usize, rng: &mut ChaCha8Rng) {
        let (max_depth, min_split, n_candidates, min_gain) = (
            self.params.max_depth,
            self.params.min_split,
            self.params.n_candidates,
            self.params.min_gain,
        );
        let leaf_idx = self.trees[tree].leaf_for(x);
        let k = self.k_levels;
        let n_nodes = self.trees[tree].nodes.len();
        let node = &mut self.trees[tree].nodes[leaf_idx];
        let (depth, should_try_split) = match node {
            Node::Leaf {
                depth,
                counts,
                buffer,
            } => {
                counts[level - 1] += 1;
                buffer.push((x.to_vec(), level));
                (*depth, buffer.len() >= min_split && *depth < max_depth)
            }
            _ => unreachable!("leaf_for returned a split"),
        };
        if !should_try_split {
            return;
        }
        // Candidate search over the buffered samples.
        let buffer = match &self.trees[tree].nodes[leaf_idx] {
            Node::Leaf { buffer, .. } => buffer.clone(),
            _ => unreachable!(),
        };
        let dim = buffer[0].0.len();
        let parent_entropy = entropy_of(&histogram(&buffer, k));
        let mut best: Option<(f64, usize, f64)> = None; // (gain, feature, threshold)
        for _ in 0..n_candidates {
            let feature = rng.random_range(0..dim);
            let lo = buffer
                .iter()
                .map(|(v, _)| v[feature])
                .fold(f64::INFINITY, f64::min);
            let hi = buffer
                .iter()
                .map(|(v, _)| v[feature])
                .fold(f64::NEG_INFINITY, f64::max);
            if !(hi > lo) {
                continue;
            }
            let threshold = rng.random_range(lo..hi);
            let (mut left, mut right) = (vec![0u64; k], vec![0u64; k]);
            let mut n_left = 0.0;
            for (v, l) in &buffer {
                if v[feature] <= threshold {
                    left[l - 1] += 1;
                    n_left += 1.0;
                } else {
                    right[l - 1] += 1;
                }
            }
            let n = buffer.len() as f64;
            if n_left == 0.0 || n_left == n {
                continue;
            }
            let gain = parent_entropy
                - (n_left / n) * entropy_of(&left)
                - ((n - n_left) / n) * entropy_of(&right);
            if best.map(|(g, _, _)| gain > g).unwrap_or(true) {
                best = Some((gain, feature, threshold));
            }
        }
        let Some((gain, feature, threshold)) = best else {
            return;
        };
        if gain <= min_gain {
            return;
        }
        // Split: distribute the buffer into two fresh leaves.
        let mut left_buf = Vec::new();
        let mut right_buf = Vec::new();
        for (v, l) in buffer {
            if v[feature] <= threshold {
                left_buf.push((v, l));
            } else {
                right_buf.push((v, l));
            }
        }
        let left_counts = histogram(&left_buf, k);
        let right_counts = histogram(&right_buf, k);
        let left_idx = n_nodes;
        let right_idx = n_nodes + 1;
        self.trees[tree].nodes.push(Node::Leaf {
            depth: depth + 1,
            counts: left_counts,
            buffer: left_buf,
        });
        self.trees[tree].nodes.push(Node::Leaf {
            depth: depth + 1,
            counts: right_counts,
            buffer: right_buf,
        });
        self.trees[tree].nodes[leaf_idx] = Node::Split {
            feature,
            threshold,
            left: left_idx,
            right: right_idx,
        };
    }

    /// Expected informativeness level for one latent (1 = most informative).
    /// Trees whose leaf is empty fall back to the uniform expectation
    /// (K+1)/2.
    pub fn predict(&self, x: &[f64]) -> f64 {
        let uniform = (self.k_levels as f64 + 1.0) / 2.0;
        let mut acc = 0.0;
        for tree in &self.trees {
            let leaf = tree.leaf_for(x);
            let expected = match &tree.nodes[leaf] {
                Node::Leaf { counts, .. } => {
                    let total: u64 = counts.iter().sum();
                    if total == 0 {
                        uniform
                    } else {
                        counts
                            .iter()
                            .enumerate()
                            .map(|(i, &c)| (i + 1) as f64 * c as f64)
                            .sum::<f64>()
                            / total as f64
                    }
                }
                _ => unreachable!(),
            };
            acc += expected;
        }
        acc / self.trees.len() as f64
    }

    /// Nearest integer level in 1..K.
    pub fn classify(&self, x: &[f64]) -> usize {
        (self.predict(x).round() as usize).clamp(1, self.k_levels)
    }

    pub fn has_splits(&self) -> bool {
        self.trees.iter().any(|t| t.n_splits() > 0)
    }

    /// Stable content hash over structure and counts.
    pub fn content_hash(&self) -> u64 {
        let mut values: Vec<f64> = vec![self.k_levels as f64, self.update_counter as f64];
        for tree in &self.trees {
            for node in &tree.nodes {
                match node {
                    Node::Split {
                        feature,
                        threshold,
                        left,
                        right,
                    } => {
                        values.push(1.0);
                        values.push(*feature as f64);
                        values.push(*threshold);
                        values.push(*left as f64);
                        values.push(*right as f64);
                    }
                    Node::Leaf { depth, counts, .. } => {
                        values.push(2.0);
                        values.push(*depth as f64);
                        values.extend(counts.iter().map(|&c| c as f64));
                    }
                }
            }
        }
        hash_f64_slice(0x666f_7265_7374_0000, &values)
    }

    /// Hash that ignores the update counter (for no-op update checks).
    pub fn structural_hash(&self) -> u64 {
        let mut clone = self.clone();
        clone.update_counter = 0;
        clone.content_hash()
    }
}

fn histogram(samples: &[(Vec<f64>, usize)], k: usize) -> Vec<u64> {
    let mut h = vec![0u64; k];
    for (_, l) in samples {
        h[l - 1] += 1;
    }
    h
}

fn entropy_of(counts: &[u64]) -> f64 {
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return 0.0;
    }
    let mut e = 0.0;
    for &c in counts {
        if c > 0 {
            let p = c as f64 / total as f64;
            e -= p * p.log2();
        }
    }
    e
}

/// Score latents by expected informativeness level. Pure function of
/// (forest, latents): permuting the input permutes the output accordingly.
pub fn rf_rank(forest: &OnlineForest, latents: &[Vec<f64>]) -> Vec<f64> {
    latents.iter().map(|x| forest.predict(x)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    fn blob_centers(k: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = rng_for(seed, "rf-centers", 0);
        (0..k)
            .map(|_| (0..32).map(|_| rng.random_range(-4.0..4.0)).collect())
            .collect()
    }

    /// K separable Gaussian blobs in 32-d latent space around given centers.
    fn blob_data(
        centers: &[Vec<f64>],
        per_class: usize,
        seed: u64,
        spread: f64,
    ) -> Vec<(Vec<f64>, usize)> {
        let mut rng = rng_for(seed, "rf-blobs", 0);
        let normal = Normal::new(0.0, spread).unwrap();
        let mut data = Vec::new();
        for level in 1..=centers.len() {
            for _ in 0..per_class {
                let x: Vec<f64> = centers[level - 1]
                    .iter()
                    .map(|c| c + normal.sample(&mut rng))
                    .collect();
                data.push((x, level));
            }
        }
        data
    }

    #[test]
    fn empty_update_is_identity() {
        let mut forest = OnlineForest::new(10, 3);
        let before = forest.structural_hash();
        forest.update(&[]).unwrap();
        assert_eq!(forest.structural_hash(), before);
    }

    #[test]
    fn untrained_forest_scores_uniform_expectation() {
        let forest = OnlineForest::new(10, 1);
        let x = vec![0.0; 32];
        assert_eq!(forest.predict(&x), 5.5); // (K+1)/2
    }

    #[test]
    fn out_of_range_level_rejected() {
        let mut forest = OnlineForest::new(10, 1);
        assert!(forest.update(&[(vec![0.0; 32], 0)]).is_err());
        assert!(forest.update(&[(vec![0.0; 32], 11)]).is_err());
    }

    #[test]
    fn separable_blobs_high_accuracy() {
        // Held-out accuracy ≥ 0.85 on 10-class separable latents. Oracle
        // sanity: nearest-centroid classifies the same held-out data ≥ 0.95.
        let k = 10;
        let centers = blob_centers(k, 5);
        let train = blob_data(&centers, 30, 6, 0.3);
        let test = blob_data(&centers, 10, 7, 0.3);

        let nc_acc = {
            let correct = test
                .iter()
                .filter(|(x, l)| {
                    let mut best = 0;
                    let mut best_d = f64::INFINITY;
                    for (i, c) in centers.iter().enumerate() {
                        let d: f64 =
                            x.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum();
                        if d < best_d {
                            best_d = d;
                            best = i + 1;
                        }
                    }
                    best == *l
                })
                .count();
            correct as f64 / test.len() as f64
        };
        assert!(nc_acc >= 0.95, "nearest-centroid oracle {nc_acc}");

        let mut forest = OnlineForest::new(k, 9);
        forest.update(&train).unwrap();
        let acc = test
            .iter()
            .filter(|(x, l)| forest.classify(x) == *l)
            .count() as f64
            / test.len() as f64;
        assert!(acc >= 0.85, "forest accuracy {acc}");
    }

    #[test]
    fn sequential_vs_batch_updates_close() {
        // Two sequential updates track a single concatenated update within 5
        // accuracy points on held-out data, over 10 seeds.
        let k = 5;
        let mut diffs = Vec::new();
        for seed in 0..10u64 {
            let centers = blob_centers(k, 100 + seed);
            let data = blob_data(&centers, 24, 200 + seed, 0.4);
            let held = blob_data(&centers, 12, 300 + seed, 0.4);
            let (a, b) = data.split_at(data.len() / 2);
            let mut seq = OnlineForest::new(k, 42);
            seq.update(a).unwrap();
            seq.update(b).unwrap();
            let mut batch = OnlineForest::new(k, 42);
            batch.update(&data).unwrap();
            let acc = |f: &OnlineForest| {
                held.iter().filter(|(x, l)| f.classify(x) == *l).count() as f64
                    / held.len() as f64
            };
            diffs.push((acc(&seq) - acc(&batch)).abs());
        }
        let max_diff = diffs.iter().cloned().fold(0.0, f64::max);
        assert!(max_diff <= 0.05 + 1e-9, "max accuracy gap {max_diff
        }, diffs {diffs:?}");
    }

    #[test]
    fn rank_permutation_invariant_per_sample() {
        let k = 5;
        let data = blob_data(&blob_centers(k, 11), 20, 12, 0.4);
        let mut forest = OnlineForest::new(k, 2);
        forest.update(&data).unwrap();
        let latents: Vec<Vec<f64>> = data.iter().map(|(x, _)| x.clone()).collect();
        let scores = rf_rank(&forest, &latents);
        let mut reversed: Vec<Vec<f64>> = latents.clone();
        reversed.reverse();
        let scores_rev = rf_rank(&forest, &reversed);
        for (i, s) in scores.iter().enumerate() {
            assert_eq!(*s, scores_rev[latents.len() - 1 - i]);
        }
    }

    #[test]
    fn rank_mae_bounded_on_training_data() {
        let k = 10;
        let data = blob_data(&blob_centers(k, 21), 30, 22, 0.3);
        let mut forest = OnlineForest::new(k, 4);
        forest.update(&data).unwrap();
        let mae = data
            .iter()
            .map(|(x, l)| (forest.predict(x) - *l as f64).abs())
            .sum::<f64>()
            / data.len() as f64;
        assert!(mae <= 1.0, "mae {mae}");
    }

    #[test]
    fn splits_never_discarded() {
        let k = 5;
        let mut forest = OnlineForest::new(k, 13);
        forest.update(&blob_data(&blob_centers(k, 31), 20, 33, 0.4)).unwrap();
        let splits_before: Vec<usize> =
            forest.trees.iter().map(|t| t.n_splits()).collect();
        forest.update(&blob_data(&blob_centers(k, 32), 20, 34, 0.4)).unwrap();
        let splits_after: Vec<usize> = forest.trees.iter().map(|t| t.n_splits()).collect();
        for (b, a) in splits_before.iter().zip(&splits_after) {
            assert!(a >= b);
        }
    }
}
